"""Nonlinear potentials for the reaction term.

Every potential exposes ``value``, ``prime``, ``second`` (vectorized in the
argument) and a ``semiconvexity`` constant: the smallest c >= 0 such that
psi'' >= -c wherever psi'' is defined.  That constant is what gates the
admissible time-step sizes of the implicit scheme (uniqueness for
tau < 1/c, a Lipschitz regime for tau <= 1/(1+2c), energy decay for
tau <= 2/c, with 1/0 read as infinity).

* DoubleWell: psi(y) = (y^2 - 1)^2 / 4, the classic two-phase well.
* MoreauYosida: quadratic penalty regularization of the obstacle potential
  over [-1, 1]; psi'' jumps at |y| = 1, where the interior value -1 is used
  (the generalized derivative convention for semismooth Newton).
* TruncatedPotential: a C2 base continued quadratically outside a cutoff,
  capping psi'' while leaving the base untouched on [-cutoff, cutoff].
* ZeroPotential: psi = 0, the linear-diffusion configuration used by
  oracle comparisons and the linear study baselines.
"""

import numpy as np


class DoubleWell:
    """psi(y) = (y^2 - 1)^2 / 4 with minima at y = +-1."""

    kind = "double_well"
    smoothness = "c2"

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return 0.25 * (y * y - 1.0) ** 2

    def prime(self, y):
        y = np.asarray(y, dtype=float)
        return y**3 - y

    def second(self, y):
        y = np.asarray(y, dtype=float)
        return 3.0 * y * y - 1.0

    def semiconvexity(self):
        # inf psi'' = -1, attained at y = 0
        return 1.0

    def __repr__(self):
        return "DoubleWell()"


class MoreauYosida:
    """Quadratic-penalty regularization of the obstacle potential.

    psi(y) = (1 - y^2)/2 + s min(y+1, 0)^2 + s max(y-1, 0)^2 with penalty
    s > 0.  psi is C1; psi'' is -1 inside [-1, 1] and -1 + 2s outside, and
    the interior value is returned at the kinks |y| = 1.
    """

    kind = "moreau_yosida"
    smoothness = "semismooth"

    def __init__(self, penalty):
        if penalty <= 0:
            raise ValueError(f"penalty must be positive, got {penalty}")
        self.penalty = float(penalty)

    def value(self, y):
        y = np.asarray(y, dtype=float)
        lo = np.minimum(y + 1.0, 0.0)
        hi = np.maximum(y - 1.0, 0.0)
        return 0.5 * (1.0 - y * y) + self.penalty * (lo * lo + hi * hi)

    def prime(self, y):
        y = np.asarray(y, dtype=float)
        return (-y + 2.0 * self.penalty * np.minimum(y + 1.0, 0.0)
                + 2.0 * self.penalty * np.maximum(y - 1.0, 0.0))

    def second(self, y):
        y = np.asarray(y, dtype=float)
        return -1.0 + 2.0 * self.penalty * (np.abs(y) > 1.0)

    def semiconvexity(self):
        # psi'' takes the values {-1, -1 + 2s}; the minimum is -1
        return 1.0

    def __repr__(self):
        return f"MoreauYosida(penalty={self.penalty!r})"


class TruncatedPotential:
    """C2 base potential continued quadratically outside [-cutoff, cutoff].

    Inside the window the base is reproduced exactly; outside, a second-order
    Taylor continuation from the window edge is used, so the second
    derivative is bounded by its range on the window and the growth of the
    derivative is at most linear.  Built via :func:`build_truncation`.
    """

    kind = "truncated"
    smoothness = "c2"

    def __init__(self, base, cutoff):
        if cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {cutoff}")
        if getattr(base, "smoothness", None) != "c2":
            raise ValueError(
                f"truncation needs a C2 base potential, got {base!r}")
        self.base = base
        self.cutoff = float(cutoff)
        c = self.cutoff
        self._edge = {
            +1: (float(base.value(c)), float(base.prime(c)), float(base.second(c))),
            -1: (float(base.value(-c)), float(base.prime(-c)), float(base.second(-c))),
        }

    def _pieces(self, y):
        y = np.asarray(y, dtype=float)
        above = y > self.cutoff
        below = y < -self.cutoff
        inside = ~(above | below)
        return y, inside, above, below

    def value(self, y):
        y, inside, above, below = self._pieces(y)
        out = np.empty_like(y)
        out[inside] = self.base.value(y[inside])
        for mask, sign in ((above, +1), (below, -1)):
            v, d, s = self._edge[sign]
            t = y[mask] - sign * self.cutoff
            out[mask] = v + d * t + 0.5 * s * t * t
        return out if out.ndim else float(out)

    def prime(self, y):
        y, inside, above, below = self._pieces(y)
        out = np.empty_like(y)
        out[inside] = self.base.prime(y[inside])
        for mask, sign in ((above, +1), (below, -1)):
            _, d, s = self._edge[sign]
            out[mask] = d + s * (y[mask] - sign * self.cutoff)
        return out if out.ndim else float(out)

    def second(self, y):
        y, inside, above, below = self._pieces(y)
        out = np.empty_like(y)
        out[inside] = self.base.second(y[inside])
        out[above] = self._edge[+1][2]
        out[below] = self._edge[-1][2]
        return out if out.ndim else float(out)

    def semiconvexity(self):
        # dense-grid minimization of psi'' on the window; outside the window
        # the continuation's psi'' equals the window-edge values
        ys = np.linspace(-self.cutoff, self.cutoff, 100001)
        return max(0.0, -float(np.min(self.base.second(ys))))

    def __repr__(self):
        return f"TruncatedPotential({self.base!r}, cutoff={self.cutoff!r})"


class ZeroPotential:
    """psi = 0; turns the state equation into pure quasilinear diffusion."""

    kind = "zero"
    smoothness = "c2"

    def value(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def prime(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def second(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def semiconvexity(self):
        return 0.0

    def __repr__(self):
        return "ZeroPotential()"


def semiconvexity_constant(pot):
    """Smallest c >= 0 with psi'' >= -c wherever psi'' is defined."""
    return pot.semiconvexity()


def build_truncation(base, cutoff):
    """Continue a C2 potential quadratically outside [-cutoff, cutoff].

    The result agrees with the base on the window, is C2, has bounded
    second derivative, and inherits the base's semiconvexity constant on
    the window.  Raises ValueError for non-C2 bases (e.g. MoreauYosida).
    """
    return TruncatedPotential(base, cutoff)
