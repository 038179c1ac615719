"""Tracking-type optimal control of the implicit scheme.

The control is one forcing field per time interval.  Costs are either
final-time tracking,

    J = 1/2 ||y_N - y_target||^2 + lambda/2 sum_j tau_j ||u_j||^2,

or distributed tracking with a target per interval.  All norms are the
lumped L2 norms of the grid, and controls live in the weighted inner
product  <a, b> = sum_j tau_j sum_i w_i a_ji b_ji,  so gradient norms
approximate space-time L2 norms and are robust under mesh and partition
refinement.

Gradients come from the discrete adjoint: one backward sweep of linear
solves with the transposed linearization of the forward step (the system
matrices are symmetric, so they coincide with the Newton matrices at the
forward states).  A finite-difference gradient over full forward solves is
provided as the independent oracle; the adjoint path and the oracle must
agree to a few digits on any instance small enough to afford it.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import element_gradients
from .linalg import conjugate_gradient
from .stepper import StepConfig, solve_trajectory


class AdjointUnavailable(RuntimeError):
    """The linearized flux needs A''; use the finite-difference gradient."""


@dataclass(frozen=True)
class FinalTimeTarget:
    """Track a single field at the final time."""
    values: np.ndarray


@dataclass(frozen=True)
class DistributedTarget:
    """Track one field per interval over the whole horizon, shape (N, n)."""
    values: np.ndarray


@dataclass
class ControlProblem:
    grid: object
    partition: object
    y0: np.ndarray
    target: object
    lam: float
    aniso: object
    pot: object

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        self.y0 = self.grid.check_field(self.y0)
        n, n_steps = self.grid.n_nodes, self.partition.n_steps
        if isinstance(self.target, FinalTimeTarget):
            self.grid.check_field(self.target.values)
        elif isinstance(self.target, DistributedTarget):
            if self.target.values.shape != (n_steps, n):
                raise ValueError(
                    f"distributed target has shape {self.target.values.shape}, "
                    f"expected ({n_steps}, {n})")
        else:
            raise TypeError(f"unsupported target {self.target!r}")

    def check_control(self, control):
        control = np.asarray(control, dtype=float)
        expected = (self.partition.n_steps, self.grid.n_nodes)
        if control.shape != expected:
            raise ValueError(
                f"control has shape {control.shape}, expected {expected}")
        if not np.all(np.isfinite(control)):
            raise ValueError("control contains non-finite entries")
        return control

    def zero_control(self):
        return np.zeros((self.partition.n_steps, self.grid.n_nodes))


def control_inner(problem, a, b):
    """Weighted space-time inner product of two controls/gradients."""
    taus = problem.partition.tau_steps
    w = problem.grid.weights
    return float(np.sum(taus * np.sum(w * a * b, axis=1)))


def control_norm(problem, a):
    return float(np.sqrt(max(control_inner(problem, a, a), 0.0)))


def solve_state(problem, control, config=None):
    """Forward solve of the state equation for a given control."""
    return solve_trajectory(problem.grid, problem.aniso, problem.pot,
                            problem.y0, control, problem.partition, config)


def cost(problem, trajectory, control):
    """Tracking cost of a state/control pair (the state must solve the
    forward problem for the control; this is the caller's contract)."""
    control = problem.check_control(control)
    w = problem.grid.weights
    taus = problem.partition.tau_steps
    penalty = 0.5 * problem.lam * float(
        np.sum(taus * np.sum(w * control**2, axis=1)))
    if isinstance(problem.target, FinalTimeTarget):
        diff = trajectory.states[-1] - problem.target.values
        track = 0.5 * float(np.sum(w * diff**2))
    else:
        diff = trajectory.states[1:] - problem.target.values
        track = 0.5 * float(np.sum(taus * np.sum(w * diff**2, axis=1)))
    return track + penalty


def adjoint_solve(problem, trajectory, linear_rtol=1e-12):
    """Backward sweep of the discrete adjoint; returns (N, n) multiplier fields.

    Each step solves (W + tau K_lin + tau W psi''(y_j)) p_j = W p_{j+1} + s_j
    with K_lin the flux linearization at the forward state, terminal value
    p_{N+1} = 0, and tracking sources s_j given by the target.
    """
    grid, part = problem.grid, problem.partition
    if not problem.aniso.twice_differentiable:
        raise AdjointUnavailable(
            "flux linearization needs a twice-differentiable gradient energy "
            "(regularize the matrix family); fd_gradient remains available")
    w = grid.weights
    taus = part.tau_steps
    n_steps = part.n_steps
    final_time = isinstance(problem.target, FinalTimeTarget)

    adjoints = np.zeros((n_steps, grid.n_nodes))
    p_next = np.zeros(grid.n_nodes)
    for j in range(n_steps, 0, -1):
        tau = taus[j - 1]
        y_j = trajectory.states[j]
        tensors = problem.aniso.hess(element_gradients(grid, y_j))
        mat = (grid.assemble_weighted_stiffness(tensors) * tau
               + sp.diags(w * (1.0 + tau * problem.pot.second(y_j))))
        if final_time:
            source = w * (y_j - problem.target.values) if j == n_steps else 0.0
        else:
            source = tau * w * (y_j - problem.target.values[j - 1])
        rhs = w * p_next + source
        p_j = conjugate_gradient(mat, rhs, rtol=linear_rtol)
        if not np.all(np.isfinite(p_j)):
            raise RuntimeError(f"adjoint state at step {j} is not finite")
        adjoints[j - 1] = p_j
        p_next = p_j
    return adjoints


def reduced_gradient(problem, control, config=None):
    """Gradient of the reduced cost in the weighted control inner product.

    Returns (gradient, trajectory); the gradient fields are
    g_j = lambda u_j + p_j with p the adjoint sweep at the forward solution.
    """
    control = problem.check_control(control)
    trajectory = solve_state(problem, control, config)
    adjoints = adjoint_solve(problem, trajectory)
    return problem.lam * control + adjoints, trajectory


def fd_gradient(problem, control, eps=1e-6, config=None, guard=10_000):
    """Central-difference gradient oracle over full forward solves.

    Differences of the cost are converted to the same weighted-inner-product
    representative that :func:`reduced_gradient` returns (divide by
    tau_j w_i), so the two are directly comparable.  Guarded to small
    instances: n_nodes * N must not exceed ``guard``.
    """
    control = problem.check_control(control)
    n_steps, n = control.shape
    if n_steps * n > guard:
        raise ValueError(
            f"fd_gradient guard: {n_steps * n} unknowns > {guard}")

    def value(u):
        return cost(problem, solve_state(problem, u, config), u)

    taus = problem.partition.tau_steps
    w = problem.grid.weights
    out = np.zeros_like(control)
    for j in range(n_steps):
        for i in range(n):
            bump = np.zeros_like(control)
            bump[j, i] = eps
            out[j, i] = ((value(control + bump) - value(control - bump))
                         / (2.0 * eps * taus[j] * w[i]))
    return out


@dataclass
class OptimizeOptions:
    max_iters: int = 100
    grad_tol: float = 1e-8
    armijo_slope: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_min_step: float = 1e-14
    use_lbfgs: bool = False
    lbfgs_memory: int = 10


@dataclass
class OptimizeReport:
    j_values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    linesearch_evals: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def iterations(self):
        return len(self.j_values) - 1


def _two_loop(gradient, pairs, inner):
    """L-BFGS two-loop recursion in the given inner product."""
    q = gradient.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, rho = pairs[-1]
        q *= inner(s, y) / inner(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * inner(y, q)
        q += (a - b) * s
    return -q


def optimize(problem, u_init, options=None, config=None):
    """Descent on the reduced cost from ``u_init``.

    Steepest descent with Armijo backtracking by default; two-loop L-BFGS
    (same line search) behind ``options.use_lbfgs``.  Accepted iterates have
    non-increasing cost by construction.  Returns
    (control, trajectory, report); a stalled line search returns the best
    iterate with ``converged=False``.
    """
    opts = options or OptimizeOptions()
    config = config or StepConfig()
    inner = lambda a, b: control_inner(problem, a, b)

    u = problem.check_control(u_init).copy()
    g, traj = reduced_gradient(problem, u, config)
    j_val = cost(problem, traj, u)
    g_norm = float(np.sqrt(max(inner(g, g), 0.0)))

    report = OptimizeReport()
    report.j_values.append(j_val)
    report.grad_norms.append(g_norm)
    report.step_lengths.append(0.0)
    report.linesearch_evals.append(0)

    if g_norm <= opts.grad_tol:
        report.converged = True
        report.message = "gradient tolerance met at the initial control"
        return u, traj, report

    pairs = []
    alpha_prev = 1.0
    for _ in range(opts.max_iters):
        if opts.use_lbfgs and pairs:
            direction = _two_loop(g, pairs, inner)
            alpha0 = 1.0
        else:
            direction = -g
            alpha0 = alpha_prev if not opts.use_lbfgs else 1.0
        slope = inner(g, direction)
        if slope >= 0.0:
            direction = -g
            slope = -inner(g, g)

        alpha = alpha0
        evals = 0
        accepted = False
        while alpha >= opts.armijo_min_step:
            u_trial = u + alpha * direction
            traj_trial = solve_state(problem, u_trial, config)
            j_trial = cost(problem, traj_trial, u_trial)
            evals += 1
            if j_trial <= j_val + opts.armijo_slope * alpha * slope:
                accepted = True
                break
            alpha *= opts.armijo_backtrack
        if not accepted:
            report.message = "line search stalled; returning best iterate"
            return u, traj, report

        adjoints = adjoint_solve(problem, traj_trial)
        g_new = problem.lam * u_trial + adjoints
        if opts.use_lbfgs:
            s, y = u_trial - u, g_new - g
            sy = inner(s, y)
            if sy > 1e-14 * max(inner(s, s), 1e-300):
                pairs.append((s, y, 1.0 / sy))
                if len(pairs) > opts.lbfgs_memory:
                    pairs.pop(0)
        u, traj, g, j_val = u_trial, traj_trial, g_new, j_trial
        g_norm = float(np.sqrt(max(inner(g, g), 0.0)))
        alpha_prev = min(alpha * 2.0, 1e8)

        report.j_values.append(j_val)
        report.grad_norms.append(g_norm)
        report.step_lengths.append(alpha)
        report.linesearch_evals.append(evals)
        if g_norm <= opts.grad_tol:
            report.converged = True
            report.message = "gradient tolerance met"
            return u, traj, report

    report.message = "iteration budget exhausted"
    return u, traj, report


def write_history(report, path):
    """Optimization history CSV (iter, J, grad_norm, step_length,
    linesearch_evals)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "J", "grad_norm", "step_length",
                         "linesearch_evals"])
        for it in range(len(report.j_values)):
            writer.writerow([it, f"{report.j_values[it]:.17g}",
                             f"{report.grad_norms[it]:.17g}",
                             f"{report.step_lengths[it]:.17g}",
                             report.linesearch_evals[it]])
