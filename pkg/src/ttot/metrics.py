"""Recovery error and the rotation-aligned factor distance.

Two left-orthogonal TT representations of the same tensor differ by a gauge
``X_i(s) -> R_{i-1}^T X_i(s) R_i`` with orthonormal ``R_i``.  The factor
distance weights the squared differences of the orthonormal cores by
``sigma_max(X*)^2`` and minimises over the gauge.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .tt_core import DimensionError, TTTensor, orthogonality_error, tt_spectrum

__all__ = [
    "FactorAlignment",
    "SandwichReport",
    "recovery_error_sq",
    "rotate_factors",
    "factor_distance_sq",
    "factor_distance_sq_at",
    "check_distance_sandwich",
]


@dataclass(frozen=True)
class FactorAlignment:
    rotations: tuple[np.ndarray, ...]
    dist_sq: float
    converged: bool
    sweeps: int
    history: tuple[float, ...]


@dataclass(frozen=True)
class SandwichReport:
    error_sq: float
    dist_sq: float
    lower_bound: float
    upper_bound: float
    lower_ok: bool
    upper_ok: bool
    lower_slack: float
    upper_slack: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def recovery_error_sq(x: TTTensor | np.ndarray, truth: TTTensor | np.ndarray) -> float:
    """``||X - X*||_F^2`` of the dense tensors."""
    a = x.dense() if isinstance(x, TTTensor) else np.asarray(x, dtype=np.float64)
    b = truth.dense() if isinstance(truth, TTTensor) else np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dims {a.shape} and {b.shape} differ")
    d = a - b
    return float(np.vdot(d, d))


def rotate_factors(tt: TTTensor, rotations) -> TTTensor:
    """Apply the gauge ``X_i(s) -> R_{i-1}^T X_i(s) R_i``."""
    rs = [np.ones((1, 1))] + [np.asarray(r) for r in rotations] + [np.ones((1, 1))]
    if len(rs) != tt.order + 1:
        raise DimensionError(f"need {tt.order - 1} rotations, got {len(rs) - 2}")
    cores = [np.einsum("ba,bsc,cd->asd", rs[i], f, rs[i + 1]) for i, f in enumerate(tt.factors)]
    return TTTensor(cores, left_orthogonal=tt.left_orthogonal)


def _check_pair(x: TTTensor, truth: TTTensor) -> None:
    if x.dims != truth.dims or x.ranks != truth.ranks:
        raise DimensionError(
            f"factor distance needs equal dims and ranks, got {x.dims}/{x.ranks} and {truth.dims}/{truth.ranks}"
        )
    for name, t in (("x", x), ("truth", truth)):
        err = orthogonality_error(t)
        if err > 1e-8:
            raise ValueError(f"{name} is not left-orthogonal (deviation {err:.3e})")


def _weights(order: int, sigma_sq: float) -> list[float]:
    return [sigma_sq] * (order - 1) + [1.0]


def factor_distance_sq_at(x: TTTensor, truth: TTTensor, sigma_max_truth: float, rotations) -> float:
    """Objective of the factor distance at fixed rotations."""
    rt = rotate_factors(truth, rotations)
    w = _weights(x.order, sigma_max_truth**2)
    return float(sum(wi * np.sum((a - b) ** 2) for wi, a, b in zip(w, x.factors, rt.factors)))


def _polar(mat):
    u, _, vt = np.linalg.svd(mat)
    return u @ vt


def _left_gram(x, truth, rs, w, i):
    a, b = x.factors[i - 1], truth.factors[i - 1]
    return w[i - 1] * np.einsum("ba,bsc,asd->cd", rs[i - 1], b, a)


def _cross_gram(x, truth, rs, w, i):
    # linear coefficient M of <R_i, M> in the objective, holding the other rotations fixed
    mat = _left_gram(x, truth, rs, w, i)
    a, b = x.factors[i], truth.factors[i]
    mat += w[i] * np.einsum("asc,cd,bsd->ab", b, rs[i + 1], a)
    return mat


def _sign_chain_optimum(x, truth, w):
    # all ranks one: exact minimisation over sign patterns by dynamic programming
    k = x.order
    a = [f.ravel() for f in x.factors]
    b = [f.ravel() for f in truth.factors]
    signs = (1.0, -1.0)

    def cost(i, e_prev, e_cur):
        return w[i] * float(np.sum((a[i] - e_prev * e_cur * b[i]) ** 2))

    best = {e: (cost(0, 1.0, e), [e]) for e in signs}
    for i in range(1, k - 1):
        best = {
            e: min(((best[p][0] + cost(i, p, e), best[p][1] + [e]) for p in signs), key=lambda t: t[0])
            for e in signs
        }
    total, path = min(((best[p][0] + cost(k - 1, p, 1.0), best[p][1]) for p in signs), key=lambda t: t[0])
    return total, [np.array([[e]]) for e in path]


def factor_distance_sq(
    x: TTTensor,
    truth: TTTensor,
    sigma_max_truth: float | None = None,
    sweeps: int = 20,
    tol: float = 1e-12,
) -> FactorAlignment:
    """Rotation-aligned distance between two left-orthogonal TT tensors.

    Minimises
    ``sum_{i<K} s^2 ||L(X_i) - L_R(X*_i)||_F^2 + ||L(X_K) - L_R(X*_K)||^2``
    over orthonormal ``R_1..R_{K-1}`` by alternating orthogonal Procrustes
    sweeps; each ``R_i`` is the polar factor of its cross-Gram matrix with
    the neighbours held fixed.  Sweeps start from whichever is better of
    ``R_i = I`` and a left-to-right chain alignment that fits each ``R_i``
    to core ``i`` alone.  The returned value is therefore an
    upper bound on the true minimum.  When every rank is one the rotations
    are signs and the chain is minimised exactly.

    ``sigma_max_truth`` defaults to the largest unfolding singular value of
    ``truth``.
    """
    if sweeps < 1:
        raise ValueError("need at least one sweep")
    _check_pair(x, truth)
    if sigma_max_truth is None:
        sigma_max_truth = tt_spectrum(truth, route="tt").sigma_max
    k = x.order
    w = _weights(k, sigma_max_truth**2)
    if k == 1:
        d = float(np.sum((x.factors[0] - truth.factors[0]) ** 2))
        return FactorAlignment((), d, True, 0, (d,))
    if all(r == 1 for r in x.ranks):
        d, rots = _sign_chain_optimum(x, truth, w)
        return FactorAlignment(tuple(rots), d, True, 0, (d,))

    rs = [np.ones((1, 1))] + [np.eye(r) for r in x.ranks] + [np.ones((1, 1))]
    current = factor_distance_sq_at(x, truth, sigma_max_truth, rs[1:-1])
    chain = list(rs)
    for i in range(1, k):
        chain[i] = _polar(_left_gram(x, truth, chain, w, i))
    chained = factor_distance_sq_at(x, truth, sigma_max_truth, chain[1:-1])
    if chained < current:
        rs, current = chain, chained
    history = [current]
    converged = False
    done = 0
    for done in range(1, sweeps + 1):
        trial = list(rs)
        for i in range(1, k):
            trial[i] = _polar(_cross_gram(x, truth, trial, w, i))
        new = factor_distance_sq_at(x, truth, sigma_max_truth, trial[1:-1])
        history.append(min(new, current))
        if new < current:
            rs = trial
        if current - new <= tol * current:
            converged = True
            current = min(current, new)
            break
        current = new
    return FactorAlignment(tuple(rs[1:-1]), float(current), converged, done, tuple(history))


def check_distance_sandwich(x: TTTensor, truth: TTTensor, sweeps: int = 20) -> SandwichReport:
    """Evaluate both sides of the error/distance sandwich for a pair.

    Lower:  ||X - X*||^2 >= dist^2 / (8 (K + 1 + sum_{i=2}^{K-1} r_i) kappa^2)
    Upper:  ||X - X*||^2 <= (9 K / 4) dist^2

    with ``K = N + M`` and ``dist^2`` the aligned factor distance.  Requires
    ``sigma_max(X)^2 <= 9/4 sigma_max(X*)^2``.
    """
    _check_pair(x, truth)
    spec_truth = tt_spectrum(truth, route="tt")
    smax_x = tt_spectrum(x, route="tt").sigma_max
    if smax_x**2 > 2.25 * spec_truth.sigma_max**2:
        raise ValueError(
            f"hypothesis violated: sigma_max(x)^2 = {smax_x**2:.4g} > 9/4 sigma_max(truth)^2 = "
            f"{2.25 * spec_truth.sigma_max**2:.4g}"
        )
    k = x.order
    align = factor_distance_sq(x, truth, spec_truth.sigma_max, sweeps=sweeps)
    err = recovery_error_sq(x, truth)
    inner = sum(x.ranks[1:]) if k > 2 else 0  # r_2 .. r_{K-1}
    lower = align.dist_sq / (8.0 * (k + 1 + inner) * spec_truth.kappa**2)
    upper = 9.0 * k / 4.0 * align.dist_sq
    return SandwichReport(
        error_sq=err,
        dist_sq=align.dist_sq,
        lower_bound=lower,
        upper_bound=upper,
        lower_ok=bool(err >= lower),
        upper_ok=bool(err <= upper),
        lower_slack=err - lower,
        upper_slack=upper - err,
    )
