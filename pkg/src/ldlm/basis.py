"""B-spline bases over the lag axis and the weighted derivative penalties.

The lag coordinate is the integer grid 1..num_lags by default (one point per
sampling epoch). Knots are equally spaced with boundary knots repeated
degree + 1 times, so the basis forms a partition of unity over the whole
domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BasisSpec:
    """Configuration of one B-spline basis matrix.

    num_lags rows (evaluation points), num_basis columns. The domain defaults
    to [1, num_lags]; num_basis must be at least degree + 1.
    """

    num_lags: int
    num_basis: int
    degree: int = 3
    domain: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.num_lags < 2:
            raise ValueError(f"need at least 2 lag points, got {self.num_lags}")
        if self.degree < 0:
            raise ValueError(f"degree must be non-negative, got {self.degree}")
        if self.num_basis < self.degree + 1:
            raise ValueError(
                f"num_basis={self.num_basis} must be >= degree + 1 = {self.degree + 1}"
            )
        lo, hi = self.resolved_domain()
        if not hi > lo:
            raise ValueError(f"domain must be a non-degenerate interval, got ({lo}, {hi})")

    def resolved_domain(self) -> tuple[float, float]:
        if self.domain is not None:
            return float(self.domain[0]), float(self.domain[1])
        return 1.0, float(self.num_lags)


@dataclass(frozen=True)
class PenaltySpec:
    """Configuration of the K x K penalty: xi * I + (1 - xi) * D2' D2."""

    dimension: int
    xi: float = 0.01

    def __post_init__(self) -> None:
        if self.dimension < 3:
            raise ValueError(f"penalty dimension must be >= 3, got {self.dimension}")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")


def knot_vector(spec: BasisSpec) -> np.ndarray:
    """Full clamped knot vector: equally spaced interior knots, boundary knots
    repeated degree + 1 times. Length num_basis + degree + 1."""
    lo, hi = spec.resolved_domain()
    n_interior = spec.num_basis - spec.degree - 1
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return np.concatenate(
        [np.full(spec.degree + 1, lo), interior, np.full(spec.degree + 1, hi)]
    )


def _deboor_row(x: float, knots: np.ndarray, num_basis: int, degree: int) -> np.ndarray:
    """All num_basis B-spline values at x by the Cox-de Boor recursion."""
    lo = knots[degree]
    hi = knots[num_basis]
    # Clamp into the last span so the right endpoint evaluates to the boundary value.
    if x >= hi:
        x = hi
        span = num_basis - 1
    else:
        span = int(np.searchsorted(knots, x, side="right")) - 1
        span = min(max(span, degree), num_basis - 1)
    if x < lo:
        raise ValueError(f"evaluation point {x} below basis domain start {lo}")

    # Triangular recursion over the degree; N holds values of the degree-d
    # functions that are non-zero on the containing span.
    values = np.zeros(degree + 1)
    values[0] = 1.0
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    for d in range(1, degree + 1):
        left[d] = x - knots[span + 1 - d]
        right[d] = knots[span + d] - x
        saved = 0.0
        for r in range(d):
            denom = right[r + 1] + left[d - r]
            term = values[r] / denom if denom != 0.0 else 0.0
            values[r] = saved + right[r + 1] * term
            saved = left[d - r] * term
        values[d] = saved
    row = np.zeros(num_basis)
    row[span - degree : span + 1] = values
    return row


def build_basis(spec: BasisSpec) -> np.ndarray:
    """Evaluate the basis at lags 1..num_lags (scaled into the domain).

    Returns
    -------
    ndarray of shape (num_lags, num_basis); each row sums to 1.
    """
    knots = knot_vector(spec)
    lo, hi = spec.resolved_domain()
    points = np.linspace(lo, hi, spec.num_lags)
    theta = np.empty((spec.num_lags, spec.num_basis))
    for i, x in enumerate(points):
        theta[i] = _deboor_row(float(x), knots, spec.num_basis, spec.degree)
    return theta


def second_difference(dimension: int) -> np.ndarray:
    """The (K - 2) x K second-difference operator with rows (..., 1, -2, 1, ...)."""
    if dimension < 3:
        raise ValueError(f"second differences need dimension >= 3, got {dimension}")
    d2 = np.zeros((dimension - 2, dimension))
    for i in range(dimension - 2):
        d2[i, i] = 1.0
        d2[i, i + 1] = -2.0
        d2[i, i + 2] = 1.0
    return d2


def build_penalty(spec: PenaltySpec) -> np.ndarray:
    """Weighted penalty xi * I + (1 - xi) * D2' D2.

    Symmetric and positive definite for any xi in (0, 1]: the identity part
    bounds the smallest eigenvalue below by xi.
    """
    d2 = second_difference(spec.dimension)
    penalty = spec.xi * np.eye(spec.dimension) + (1.0 - spec.xi) * (d2.T @ d2)
    return 0.5 * (penalty + penalty.T)


def subject_basis(num_lags: int, num_basis: int) -> np.ndarray:
    """Basis for per-subject random lag curves.

    Degree adapts to the requested size: cubic once num_basis >= 4, otherwise
    num_basis - 1 (a single constant basis function when num_basis = 1, which
    collapses the random curve to one scalar per subject).
    """
    degree = min(3, num_basis - 1)
    return build_basis(BasisSpec(num_lags=num_lags, num_basis=num_basis, degree=degree))


def penalty_matrix(num_basis: int, xi: float) -> np.ndarray:
    """Penalty for a coefficient block of the given size.

    Falls back to the identity (pure shrinkage) when the block is too small
    to second-difference (num_basis < 3).
    """
    if num_basis < 3:
        return np.eye(num_basis)
    return build_penalty(PenaltySpec(dimension=num_basis, xi=xi))
