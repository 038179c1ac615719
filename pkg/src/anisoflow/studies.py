"""Refinement studies for the implicit scheme and its control problems.

Each study runs a dyadic ladder of uniform time partitions over a fixed
spatial grid and checks an expected behavior of the discretization:

* ``tau_convergence_study``: self-convergence of the states against a
  one-level-finer reference, with a fitted log-log rate (implicit first
  order discretizations should sit near 1).
* ``uniform_bound_study``: the space-time norms of the time derivative,
  the states, and the reaction term stay bounded as the ladder refines.
* ``lipschitz_study``: the state difference produced by perturbed data is
  controlled by the data difference (dual norm in the forcing), uniformly
  down the ladder.
* ``control_convergence_study``: optimal controls of the tracking problem
  form a Cauchy sequence in the space-time norm under refinement.

Controls, targets, and perturbations are piecewise constant in time; a
function given on a coarse partition is carried to a finer one by
injection (each interval value copied to its children), which represents
the same function exactly, and restricted fine-to-coarse by subsampling at
the coarse breakpoints.  All studies are deterministic: given the same
arrays in, the same report comes out bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .control import (ControlProblem, DistributedTarget, OptimizeOptions,
                      control_norm, cost, optimize)
from .grid import dual_norm, element_gradients, norms
from .stepper import TimePartition, solve_trajectory


@dataclass
class StudyReport:
    name: str
    rows: list = field(default_factory=list)   # one dict per level
    rate: float = None
    passed: bool = False
    thresholds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def metric_columns(self):
        cols = []
        for row in self.rows:
            for key in row:
                if key not in ("level", "n_steps", "tau") and key not in cols:
                    cols.append(key)
        return cols


def fit_rate(taus, errors):
    """Least-squares slope of log(error) against log(tau)."""
    return float(np.polyfit(np.log(np.asarray(taus)),
                            np.log(np.asarray(errors)), 1)[0])


def inject_time(fields, factor):
    """Carry interval-constant fields to a ``factor``-times finer partition."""
    return np.repeat(np.asarray(fields, dtype=float), factor, axis=0)


def restrict_time(fields, factor):
    """Subsample interval-constant fields at the coarse breakpoints."""
    fields = np.asarray(fields, dtype=float)
    if fields.shape[0] % factor:
        raise ValueError(
            f"{fields.shape[0]} intervals do not split into groups of {factor}")
    return fields[factor - 1::factor]


def _ladder(base_n, levels):
    return [base_n * 2**k for k in range(levels)]


def tau_convergence_study(grid, aniso, pot, y0, final_time, base_n, levels,
                          control=None, config=None, rate_window=(0.8, 1.2),
                          noise_floor=1e-12):
    """Self-convergence of the states under dyadic step refinement.

    Runs partitions of base_n * 2^k steps for k < levels plus a reference
    with one extra halving; the per-level error is the largest lumped-L2
    state difference against the reference, sampled at the level's
    breakpoints.  ``control`` is one forcing field per coarsest interval
    (None for zero) and is injected unchanged to every level.  Passes when
    the errors decrease strictly and the fitted rate lies in
    ``rate_window``; the rate gate is only recorded, not enforced, for the
    semismooth penalty potential, whose order is not established.
    """
    if levels < 3:
        raise ValueError("need at least 3 ladder levels to fit a rate")
    ns = _ladder(base_n, levels)
    n_ref = base_n * 2**levels
    if control is None:
        control = np.zeros((base_n, grid.n_nodes))

    ref_part = TimePartition.uniform(final_time, n_ref)
    ref = solve_trajectory(grid, aniso, pot, y0,
                           inject_time(control, n_ref // base_n),
                           ref_part, config)

    report = StudyReport("tau_convergence",
                         thresholds={"rate_window": tuple(rate_window)})
    errors = []
    for n in ns:
        part = TimePartition.uniform(final_time, n)
        traj = solve_trajectory(grid, aniso, pot, y0,
                                inject_time(control, n // base_n), part, config)
        # sample every level at the coarsest breakpoints so the maxima are
        # taken over the same times ladder-wide
        err = max(norms(grid,
                        traj.states[j * (n // base_n)]
                        - ref.states[j * (n_ref // base_n)]).l2
                  for j in range(1, base_n + 1))
        errors.append(err)
        report.rows.append({"level": len(report.rows), "n_steps": n,
                            "tau": final_time / n, "error": err})

    if max(errors) <= noise_floor:
        report.notes.append(
            f"errors at solver noise (<= {noise_floor:g}); rate not fitted")
        report.passed = True
        return report

    report.rate = fit_rate([final_time / n for n in ns], errors)
    decreasing = all(errors[k + 1] < errors[k] for k in range(len(errors) - 1))
    if not decreasing:
        report.notes.append("errors are not strictly decreasing")
    rate_ok = rate_window[0] <= report.rate <= rate_window[1]
    if getattr(pot, "smoothness", "c2") == "semismooth":
        report.notes.append(
            f"semismooth potential: rate {report.rate:.3f} recorded, not gated")
        rate_ok = True
    elif not rate_ok:
        report.notes.append(
            f"rate {report.rate:.3f} outside window {tuple(rate_window)}")
    report.passed = decreasing and rate_ok
    return report


_BOUND_KEYS = ("time_derivative_l2", "state_h1_max", "reaction_l2")


def uniform_bound_study(grid, aniso, pot, y0, final_time, base_n, levels,
                        control=None, config=None, ratio_window=1.5,
                        growth_tol=1.05):
    """Step-size independence of the a-priori state bounds.

    For a fixed forcing (injected down the ladder, so its space-time norm is
    identical at every level) the three recorded bounds must neither jump by
    more than ``ratio_window`` between adjacent levels nor grow monotonically
    by more than ``growth_tol`` at every refinement.
    """
    ns = _ladder(base_n, levels)
    if control is None:
        control = np.zeros((base_n, grid.n_nodes))
    report = StudyReport("uniform_bounds",
                         thresholds={"ratio_window": ratio_window,
                                     "growth_tol": growth_tol})
    for n in ns:
        part = TimePartition.uniform(final_time, n)
        traj = solve_trajectory(grid, aniso, pot, y0,
                                inject_time(control, n // base_n), part, config)
        row = {"level": len(report.rows), "n_steps": n, "tau": final_time / n}
        row.update({k: traj.bounds[k] for k in _BOUND_KEYS})
        report.rows.append(row)

    report.passed = True
    for key in _BOUND_KEYS:
        vals = np.array([row[key] for row in report.rows])
        if np.all(vals <= 1e-14):
            continue  # identically-zero metric (stationary data)
        ratios = vals[1:] / np.maximum(vals[:-1], 1e-300)
        if np.any(ratios > ratio_window) or np.any(ratios < 1.0 / ratio_window):
            report.notes.append(f"{key}: level ratio outside "
                                f"[1/{ratio_window}, {ratio_window}]")
            report.passed = False
        # metrics may climb toward their limit from below; blow-up means the
        # growth never slows: every ratio above tolerance and none shrinking
        if (len(ratios) > 1 and np.all(ratios >= growth_tol)
                and np.all(np.diff(ratios) >= -1e-12)):
            report.notes.append(f"{key}: non-decelerating growth at every level")
            report.passed = False
    return report


def perturbation_ratio(grid, partition, delta_states, delta_controls,
                       dual_norms=None):
    """Stability ratio of a perturbation: state response over data size.

    numerator   = max_j ||dy_j||_L2 + (sum_j tau_j ||grad dy_j||^2)^(1/2)
    denominator = ||dy_0||_L2 + (sum_j tau_j ||du_j||_dual^2)^(1/2)

    Both parts are positively 1-homogeneous in their arguments, so the
    ratio is invariant under scaling all inputs by s > 0.  Returns
    (numerator, denominator); the denominator is zero only for an
    identical data pair.  ``dual_norms`` can supply precomputed dual norms
    of the control rows.
    """
    taus = partition.tau_steps
    l2_max = max(norms(grid, dy).l2 for dy in delta_states[1:])
    grad_sq = np.array([
        float(np.sum(grid.measures
                     * np.sum(element_gradients(grid, dy)**2, axis=1)))
        for dy in delta_states[1:]])
    numerator = l2_max + float(np.sqrt(np.sum(taus * grad_sq)))
    if dual_norms is None:
        dual_norms = np.array([dual_norm(grid, du) for du in delta_controls])
    denominator = (norms(grid, delta_states[0]).l2
                   + float(np.sqrt(np.sum(taus * np.asarray(dual_norms)**2))))
    return numerator, denominator


def lipschitz_study(grid, aniso, pot, pairs, final_time, base_n, levels,
                    config=None, growth=1.5):
    """Uniform stability of the data-to-state map down a step-size ladder.

    ``pairs`` is a list of ((y0_a, u_a), (y0_b, u_b)) with the controls on
    the coarsest partition.  The coarsest step must satisfy
    tau <= 1/(1+2c); this is checked before any solve.  Each level records
    the largest perturbation ratio over the pairs; the study passes when no
    level exceeds ``growth`` times the coarsest level's value.
    """
    c_psi = pot.semiconvexity()
    bound = 1.0 / (1.0 + 2.0 * c_psi)
    tau0 = final_time / base_n
    if tau0 > bound + 1e-15:
        raise ValueError(
            f"coarsest tau = {tau0:g} exceeds the stability regime bound "
            f"1/(1+2c) = {bound:g}")

    report = StudyReport("lipschitz", thresholds={"growth": growth})
    ns = _ladder(base_n, levels)
    for n in ns:
        part = TimePartition.uniform(final_time, n)
        factor = n // base_n
        ratios = []
        for k, ((y0_a, u_a), (y0_b, u_b)) in enumerate(pairs):
            ua = inject_time(u_a, factor)
            ub = inject_time(u_b, factor)
            ta = solve_trajectory(grid, aniso, pot, y0_a, ua, part, config)
            tb = solve_trajectory(grid, aniso, pot, y0_b, ub, part, config)
            num, den = perturbation_ratio(grid, part, ta.states - tb.states,
                                          ua - ub)
            if den == 0.0:
                if n == ns[0]:
                    report.notes.append(f"pair {k}: identical data, skipped")
                continue
            ratios.append(num / den)
        row = {"level": len(report.rows), "n_steps": n, "tau": final_time / n,
               "max_ratio": max(ratios) if ratios else np.nan}
        report.rows.append(row)

    base = report.rows[0]["max_ratio"]
    if not np.isfinite(base):
        report.notes.append("no usable pairs; nothing to compare")
        report.passed = False
        return report
    worst = max(row["max_ratio"] for row in report.rows)
    report.passed = worst <= growth * base
    if not report.passed:
        report.notes.append(
            f"ratio grew to {worst:.3f} vs {growth} x coarsest ({base:.3f})")
    return report


def control_convergence_study(problem, levels, options=None, config=None,
                              distributed_master=None):
    """Cauchy behavior of optimal controls under step refinement.

    The problem's partition is the coarsest level; each level doubles the
    step count.  Final-time targets are shared across levels; distributed
    targets are restricted from ``distributed_master``, one field per
    finest-level interval.  Every level starts the optimizer from the zero
    control with the same fixed options.  Passes when the space-time norms
    ||u*_k (injected) - u*_{k+1}|| decrease strictly down the ladder;
    optimizer non-convergence flags the level in the notes.
    """
    if levels < 2:
        raise ValueError("need at least 2 levels for Cauchy differences")
    options = options or OptimizeOptions()
    base_part = problem.partition
    n0 = base_part.n_steps
    finest_factor = 2**(levels - 1)
    distributed = isinstance(problem.target, DistributedTarget)
    if distributed:
        if distributed_master is None:
            raise ValueError("distributed targets need a finest-level master")
        master = np.asarray(distributed_master, dtype=float)
        if master.shape[0] != n0 * finest_factor:
            raise ValueError(
                f"master target has {master.shape[0]} intervals, expected "
                f"{n0 * finest_factor}")

    report = StudyReport("control_convergence", thresholds={})
    solutions, problems = [], []
    for k in range(levels):
        part = base_part if k == 0 else base_part.refined(2**k)
        if distributed:
            target = DistributedTarget(
                restrict_time(master, finest_factor // 2**k))
        else:
            target = problem.target
        level_problem = ControlProblem(problem.grid, part, problem.y0,
                                       target, problem.lam, problem.aniso,
                                       problem.pot)
        u_star, traj, opt_report = optimize(
            level_problem, level_problem.zero_control(), options, config)
        if not opt_report.converged:
            report.notes.append(
                f"level {k}: optimizer not converged ({opt_report.message})")
        if any(np.diff(opt_report.j_values) > 0):
            report.notes.append(f"level {k}: cost history not monotone")
        solutions.append(u_star)
        problems.append(level_problem)
        report.rows.append({
            "level": k, "n_steps": part.n_steps,
            "tau": part.final_time / part.n_steps,
            "j_star": cost(level_problem, traj, u_star),
            "grad_norm": opt_report.grad_norms[-1],
            "optimizer_iters": opt_report.iterations,
            "cauchy_diff": np.nan,
        })

    diffs = []
    for k in range(levels - 1):
        diff = inject_time(solutions[k], 2) - solutions[k + 1]
        d = control_norm(problems[k + 1], diff)
        report.rows[k + 1]["cauchy_diff"] = d
        diffs.append(d)
    if max(diffs) <= 1e-12:
        report.notes.append("Cauchy differences at solver noise")
        report.passed = True
    else:
        report.passed = all(diffs[k + 1] < diffs[k]
                            for k in range(len(diffs) - 1))
        if not report.passed:
            report.notes.append(f"Cauchy differences not strictly decreasing: "
                                f"{[f'{d:.3e}' for d in diffs]}")
    return report


def write_study_csv(report, path):
    """One CSV row per ladder level (level, N, tau, metrics..., rate)."""
    cols = report.metric_columns()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["level", "N", "tau"] + cols + ["rate"])
        for row in report.rows:
            rate = "" if report.rate is None else f"{report.rate:.17g}"
            writer.writerow(
                [row["level"], row["n_steps"], f"{row['tau']:.17g}"]
                + [f"{row.get(c, np.nan):.17g}" for c in cols] + [rate])


def summary_text(report):
    lines = [f"study: {report.name}",
             f"result: {'PASS' if report.passed else 'FAIL'}"]
    if report.rate is not None:
        lines.append(f"fitted rate: {report.rate:.4f}")
    if report.thresholds:
        lines.append(f"thresholds: {report.thresholds}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"
