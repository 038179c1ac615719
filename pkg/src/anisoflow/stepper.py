"""Fully implicit time stepping for the quasilinear gradient flow.

Each step advances the nodal state y by solving the lumped Galerkin system

    W (y - y_prev) + tau * B(A'(grad y)) + tau * W psi'(y) = tau * W u,

where W is the lumped mass vector and B the divergence-form assembly.  The
residual is exactly tau times the gradient of the per-step objective

    Phi(y) = sum_i w_i ( (y_i - y_prev_i)^2 / (2 tau) + psi(y_i) - u_i y_i )
             + sum_e |e| A(grad y|_e),

whose integrand is strongly convex whenever tau < 1 / c with c the
semiconvexity constant of psi; in that regime the step has a unique
solution and Newton's method on the residual, globalized by an Armijo line
search on Phi, converges from any warm start.  When the gradient-energy
density has no second derivative (unregularized matrix families), a scaled
descent on Phi is used instead.

The scheme inherits the decay of the total energy E(y) = sum_e |e| A + sum
w psi for zero forcing as long as tau <= 2/c, which the stability monitor
checks a posteriori.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import assemble_flux_divergence, element_gradients, norms
from .linalg import NonPositiveCurvature, conjugate_gradient


class UniquenessViolation(ValueError):
    """Step size at or above the uniqueness bound 1/c while enforcement is on."""


class NonConvergence(RuntimeError):
    """Nonlinear solve failed; carries the best iterate seen."""

    def __init__(self, message, best_state, residual_inf, iterations):
        super().__init__(message)
        self.best_state = best_state
        self.residual_inf = residual_inf
        self.iterations = iterations


class TimePartition:
    """Breakpoints 0 = t_0 < ... < t_N = T of the time interval."""

    def __init__(self, breakpoints):
        t = np.asarray(breakpoints, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least two breakpoints")
        if t[0] != 0.0:
            raise ValueError(f"partition must start at 0, got {t[0]}")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = t

    @classmethod
    def uniform(cls, final_time, n_steps):
        if n_steps < 1:
            raise ValueError("need at least one step")
        return cls(np.linspace(0.0, final_time, n_steps + 1))

    @property
    def n_steps(self):
        return self.breakpoints.size - 1

    @property
    def final_time(self):
        return float(self.breakpoints[-1])

    @property
    def tau_steps(self):
        return np.diff(self.breakpoints)

    @property
    def tau_max(self):
        return float(np.max(self.tau_steps))

    def refined(self, factor=2):
        """Split every interval into ``factor`` equal pieces."""
        t = self.breakpoints
        pieces = [np.linspace(t[j], t[j + 1], factor + 1)[:-1]
                  for j in range(self.n_steps)]
        return TimePartition(np.concatenate(pieces + [t[-1:]]))

    def __repr__(self):
        return (f"TimePartition(N={self.n_steps}, T={self.final_time!r}, "
                f"tau_max={self.tau_max!r})")


@dataclass
class StepConfig:
    """Solver knobs for one implicit step."""
    newton_tol: float = 1e-10          # residual max-norm target
    max_newton_iters: int = 50
    armijo_slope: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_min_step: float = 1e-12
    linear_rtol: float = 1e-12
    enforce_uniqueness: bool = True    # reject tau >= 1/c
    max_descent_iters: int = 5000      # cap for the first-order fallback

    def __post_init__(self):
        for name in ("newton_tol", "armijo_slope", "armijo_backtrack",
                     "armijo_min_step", "linear_rtol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class StepDiagnostics:
    iterations: int
    residual_inf: float
    fallback: bool
    energy: float = np.nan


@dataclass
class Trajectory:
    """States y_0..y_N plus per-step solver diagnostics."""
    grid: object
    partition: TimePartition
    states: np.ndarray                  # (N+1, n_nodes)
    diagnostics: list
    config: StepConfig
    regimes: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return self.partition.n_steps

    def state(self, j):
        return self.states[j]


def energy(grid, aniso, pot, values):
    """Total energy sum_e |e| A(grad y) + sum_i w_i psi(y_i)."""
    grads = element_gradients(grid, values)
    return (float(np.sum(grid.measures * aniso.value(grads)))
            + float(np.sum(grid.weights * pot.value(np.asarray(values, dtype=float)))))


def step_residual(grid, aniso, pot, y, y_prev, u, tau):
    """Residual of the lumped implicit step; zero exactly at the step solution.

    Equals tau times the gradient of :func:`step_objective`.
    """
    y = np.asarray(y, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != y_prev.shape or y.shape != u.shape or y.shape != (grid.n_nodes,):
        raise ValueError("state, previous state, and forcing must share the grid")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    w = grid.weights
    flux = assemble_flux_divergence(grid, aniso.grad(element_gradients(grid, y)))
    return w * (y - y_prev) + tau * (flux + w * pot.prime(y) - w * u)


def step_objective(grid, aniso, pot, y, y_prev, u, tau):
    """Per-step convex objective whose minimizer is the implicit step."""
    y = np.asarray(y, dtype=float)
    w = grid.weights
    quad = 0.5 / tau * np.sum(w * (y - y_prev) ** 2)
    return quad + energy(grid, aniso, pot, y) - float(np.sum(w * u * y))


def _newton_matrix(grid, aniso, pot, y, tau):
    """Sparse W/tau + K_{A''(grad y)} + diag(W psi''(y)); SPD for tau < 1/c."""
    tensors = aniso.hess(element_gradients(grid, y))
    k_mat = grid.assemble_weighted_stiffness(tensors)
    diag = grid.weights / tau + grid.weights * pot.second(y)
    return k_mat + sp.diags(diag)


def _solve_step(grid, aniso, pot, y_prev, u, tau, config, y_start):
    w = grid.weights
    c_psi = pot.semiconvexity()
    if config.enforce_uniqueness and c_psi > 0 and tau >= 1.0 / c_psi:
        raise UniquenessViolation(
            f"tau = {tau:g} >= 1/{c_psi:g}: above the uniqueness step bound "
            f"(need tau < 1/c with c the semiconvexity constant)")

    def residual(y):
        return step_residual(grid, aniso, pot, y, y_prev, u, tau)

    def objective(y):
        return step_objective(grid, aniso, pot, y, y_prev, u, tau)

    y = np.array(y_start, dtype=float)
    res = residual(y)
    res_inf = float(np.max(np.abs(res))) if res.size else 0.0
    if res_inf <= config.newton_tol:
        return y, StepDiagnostics(0, res_inf, False)

    newton_ok = aniso.twice_differentiable
    fallback_used = not newton_ok

    phi = objective(y)
    best_y, best_res = y.copy(), res_inf
    alpha_descent = tau  # adaptive initial step for the descent path

    it = 0
    while True:
        # descent iterations are cheap and slow; they get the larger budget
        # as soon as the first-order path is in play
        budget = (config.max_descent_iters if fallback_used
                  else config.max_newton_iters)
        if it >= budget:
            break
        it += 1
        grad_phi = res / tau
        use_newton = newton_ok
        direction = None
        if use_newton:
            h_mat = _newton_matrix(grid, aniso, pot, y, tau)
            try:
                direction = conjugate_gradient(
                    h_mat, -grad_phi, rtol=config.linear_rtol,
                    detect_curvature=not config.enforce_uniqueness)
            except NonPositiveCurvature:
                use_newton = False
                fallback_used = True
        if not use_newton:
            direction = -grad_phi / w

        slope = float(grad_phi @ direction)
        if slope >= 0.0:  # cannot happen for exact solves; guard roundoff
            direction = -grad_phi / w
            slope = float(grad_phi @ direction)

        # near the minimizer the objective decrease drops below evaluation
        # noise; there the line search accepts on residual decrease instead
        noise = 1e-13 * (1.0 + abs(phi))
        alpha = 1.0 if use_newton else alpha_descent
        accepted = False
        while alpha >= config.armijo_min_step:
            trial = y + alpha * direction
            predicted = config.armijo_slope * alpha * slope
            if objective(trial) <= phi + predicted:
                accepted = True
                break
            if abs(predicted) <= noise:
                trial_res = step_residual(grid, aniso, pot, trial, y_prev, u, tau)
                if np.max(np.abs(trial_res)) < res_inf:
                    accepted = True
                    break
            alpha *= config.armijo_backtrack
        if not accepted:
            raise NonConvergence(
                f"line search stalled below {config.armijo_min_step:g} "
                f"(residual {best_res:.3e} after {it} iterations)",
                best_y, best_res, it)

        y = trial
        phi = objective(y)
        res = residual(y)
        res_inf = float(np.max(np.abs(res)))
        if res_inf < best_res:
            best_y, best_res = y.copy(), res_inf
        if not use_newton:
            alpha_descent = min(alpha * 2.0, 1e6)
        if res_inf <= config.newton_tol:
            return y, StepDiagnostics(it, res_inf, fallback_used)

    raise NonConvergence(
        f"no convergence in {budget} iterations "
        f"(best residual {best_res:.3e}, tolerance {config.newton_tol:g})",
        best_y, best_res, budget)


def step(grid, aniso, pot, y_prev, u, tau, config=None, initial_guess=None):
    """Advance one implicit step from ``y_prev`` under forcing ``u``.

    The warm start defaults to ``y_prev``; any other ``initial_guess``
    reaches the same solution in the uniqueness regime (the objective has a
    single minimizer there).
    """
    config = config or StepConfig()
    y_prev = grid.check_field(y_prev)
    u = grid.check_field(u)
    start = y_prev if initial_guess is None else grid.check_field(initial_guess)
    y, _ = _solve_step(grid, aniso, pot, y_prev, u, tau, config, start)
    return y


def solve_trajectory(grid, aniso, pot, y0, control, partition, config=None):
    """March the implicit scheme over a whole partition.

    Parameters
    ----------
    control : ndarray (N, n_nodes) or None
        One forcing field per interval; None means zero forcing.

    Raises the per-step errors with the failing index attached, and records
    solver diagnostics, step-size regime flags, and the space-time bounds
    (time-derivative and reaction L2(Q) norms, max H1 norm) on the result.
    """
    config = config or StepConfig()
    y0 = grid.check_field(y0)
    n_steps = partition.n_steps
    if control is None:
        control = np.zeros((n_steps, grid.n_nodes))
    control = np.asarray(control, dtype=float)
    if control.shape != (n_steps, grid.n_nodes):
        raise ValueError(
            f"control has shape {control.shape}, expected ({n_steps}, {grid.n_nodes})")
    if not np.all(np.isfinite(control)):
        raise ValueError("control contains non-finite entries")

    c_psi = pot.semiconvexity()
    tau = partition.tau_max
    inv = np.inf if c_psi == 0 else 1.0 / c_psi
    regimes = {
        "uniqueness": tau < inv,
        "lipschitz": tau <= 1.0 / (1.0 + 2.0 * c_psi),
        "energy_decay": tau <= (np.inf if c_psi == 0 else 2.0 / c_psi),
    }
    if not regimes["lipschitz"]:
        warnings.warn(
            f"tau_max = {tau:g} exceeds the Lipschitz-regime bound "
            f"1/(1+2c) = {1.0 / (1.0 + 2.0 * c_psi):g}; stability constants "
            "may degrade", RuntimeWarning, stacklevel=2)

    states = np.empty((n_steps + 1, grid.n_nodes))
    states[0] = y0
    diags = [StepDiagnostics(0, 0.0, False, energy(grid, aniso, pot, y0))]
    taus = partition.tau_steps
    for j in range(1, n_steps + 1):
        try:
            y, diag = _solve_step(grid, aniso, pot, states[j - 1],
                                  control[j - 1], taus[j - 1], config,
                                  states[j - 1])
        except (UniquenessViolation, NonConvergence) as exc:
            exc.step_index = j
            exc.partial_diagnostics = diags
            raise
        diag.energy = energy(grid, aniso, pot, y)
        states[j] = y
        diags.append(diag)

    traj = Trajectory(grid, partition, states, diags, config, regimes)
    traj.bounds = trajectory_bounds(traj, pot)
    return traj


def backward_difference(trajectory):
    """Per-interval difference quotients (y_j - y_{j-1}) / tau_j, shape (N, n)."""
    taus = trajectory.partition.tau_steps
    return np.diff(trajectory.states, axis=0) / taus[:, None]


def trajectory_bounds(trajectory, pot):
    """Space-time norms that stay bounded uniformly in the step size.

    Returns the L2(Q) norm of the discrete time derivative, the largest H1
    norm over the stored states, and the L2(Q) norm of psi'(y).
    """
    grid, part = trajectory.grid, trajectory.partition
    taus = part.tau_steps
    w = grid.weights
    diff = backward_difference(trajectory)
    dt_l2 = float(np.sqrt(np.sum(taus * np.sum(w * diff**2, axis=1))))
    h1_max = 0.0
    for state in trajectory.states:
        n = norms(grid, state)
        h1_max = max(h1_max, float(np.hypot(n.l2, n.h1_semi)))
    react = pot.prime(trajectory.states[1:])
    react_l2 = float(np.sqrt(np.sum(taus * np.sum(w * react**2, axis=1))))
    return {"time_derivative_l2": dt_l2, "state_h1_max": h1_max,
            "reaction_l2": react_l2}


@dataclass
class EnergyStabilityReport:
    energies: np.ndarray
    passed: bool
    violations: list            # (j, increase) pairs
    tol: float
    decay_regime: bool          # tau_max <= 2/c held

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"energy decay check: {status} "
                 f"(tolerance {self.tol:g}, steps {len(self.energies) - 1}, "
                 f"tau within decay bound: {self.decay_regime})"]
        for j, inc in self.violations:
            lines.append(f"  step {j}: energy increased by {inc:.3e}")
        return "\n".join(lines)


def check_energy_stability(trajectory, aniso, pot, tol=None):
    """Verify that the energy is non-increasing along an unforced trajectory.

    The caller guarantees zero forcing.  The report lists every step where
    E_j > E_{j-1} + tol; the default tolerance is ten times the solver's
    residual target.
    """
    if tol is None:
        tol = 10.0 * trajectory.config.newton_tol
    energies = np.array([energy(trajectory.grid, aniso, pot, y)
                         for y in trajectory.states])
    increases = np.diff(energies)
    violations = [(j + 1, float(inc)) for j, inc in enumerate(increases)
                  if inc > tol]
    c_psi = pot.semiconvexity()
    decay_regime = trajectory.partition.tau_max <= (
        np.inf if c_psi == 0 else 2.0 / c_psi)
    return EnergyStabilityReport(energies, not violations, violations,
                                 tol, decay_regime)


def write_diagnostics(trajectory, path):
    """Write the per-step diagnostics CSV (j, t_j, tau_j, newton_iters,
    residual_inf, energy)."""
    t = trajectory.partition.breakpoints
    taus = trajectory.partition.tau_steps
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["j", "t_j", "tau_j", "newton_iters",
                         "residual_inf", "energy"])
        for j, diag in enumerate(trajectory.diagnostics):
            tau_j = 0.0 if j == 0 else taus[j - 1]
            writer.writerow([j, f"{t[j]:.17g}", f"{tau_j:.17g}",
                             diag.iterations, f"{diag.residual_inf:.17g}",
                             f"{diag.energy:.17g}"])
