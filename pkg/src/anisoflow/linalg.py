"""Conjugate gradient solver shared by the Riesz, Newton, and adjoint solves.

A hand-rolled CG is used instead of scipy's because the Newton stepper needs
to detect non-positive curvature directions (the signal to fall back from the
Newton system to plain descent when the per-step objective is not convex).
"""

import numpy as np


class LinearSolveError(RuntimeError):
    """CG failed to reach the requested residual within max_iters."""


class NonPositiveCurvature(RuntimeError):
    """CG found a direction d with d'Ad <= 0: the operator is not SPD."""


def conjugate_gradient(apply_a, b, rtol=1e-12, max_iters=None, detect_curvature=False):
    """Solve A x = b for symmetric positive definite A.

    Parameters
    ----------
    apply_a : callable or scipy sparse matrix
        The operator; a sparse matrix is wrapped into ``A @ x``.
    b : ndarray
        Right-hand side.
    rtol : float
        Convergence on ``||b - A x|| <= rtol * ||b||``.
    max_iters : int, optional
        Defaults to ``10 * len(b)`` (CG terminates in n steps exactly, the
        slack absorbs floating-point drift).
    detect_curvature : bool
        Raise NonPositiveCurvature when a search direction has d'Ad <= 0
        instead of dividing by it.

    Returns
    -------
    ndarray
        The solution.
    """
    if not callable(apply_a):
        mat = apply_a
        apply_a = lambda v: mat @ v

    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iters is None:
        max_iters = 10 * n

    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    tol = rtol * bnorm

    d = r.copy()
    rr = r @ r
    for _ in range(max_iters):
        if np.sqrt(rr) <= tol:
            return x
        ad = apply_a(d)
        dad = d @ ad
        if dad <= 0.0:
            if detect_curvature:
                raise NonPositiveCurvature(
                    f"curvature d'Ad = {dad:.3e} along a CG direction")
            if dad == 0.0:
                raise LinearSolveError("CG breakdown: d'Ad = 0")
        alpha = rr / dad
        x += alpha * d
        r -= alpha * ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
    if np.sqrt(rr) <= tol:
        return x
    raise LinearSolveError(
        f"CG did not reach rtol={rtol:g} in {max_iters} iterations "
        f"(residual {np.sqrt(rr) / bnorm:.3e} relative)")
