"""Dense and tensor-train (TT) tensors.

Dense tensors are plain C-ordered ``numpy.ndarray`` objects of float64.  A
:class:`TTTensor` stores a chain of order-3 cores ``X_i`` of shape
``(r_{i-1}, d_i, r_i)`` with ``r_0 = r_K = 1``; entry ``(s_1, ..., s_K)`` of
the represented tensor is the matrix product ``X_1[:, s_1, :] ... X_K[:, s_K, :]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng

__all__ = [
    "MAX_DENSE_ENTRIES",
    "RANK_TOL",
    "TTTensor",
    "TTSpectrum",
    "ContractionSpec",
    "DimensionError",
    "RankError",
    "RankDeficiencyWarning",
    "tt_to_dense",
    "contract",
    "unfold",
    "fold",
    "left_unfold",
    "left_fold",
    "tt_svd",
    "validate_ranks",
    "left_orthogonalize",
    "orthogonality_error",
    "tt_spectrum",
    "numerical_rank",
    "unfolding_ranks",
    "random_tt_unit",
    "restricted_frobenius_norm",
]

# Refuse to materialise dense tensors larger than this many entries.
MAX_DENSE_ENTRIES = 2**28
# Singular values below RANK_TOL * sigma_1 count as zero.
RANK_TOL = 1e-9


class DimensionError(ValueError):
    """Shapes of the operands are incompatible."""


class RankError(ValueError):
    """Requested TT ranks cannot be realised for the given dimensions."""


class RankDeficiencyWarning(RuntimeWarning):
    pass


def _check_dense_size(dims: Sequence[int]) -> None:
    n = int(np.prod([int(d) for d in dims], dtype=object))
    if n > MAX_DENSE_ENTRIES:
        raise MemoryError(
            f"dense tensor with dims {tuple(dims)} has {n} entries, "
            f"above the cap of {MAX_DENSE_ENTRIES}"
        )


class TTTensor:
    """Tensor in TT format.

    Parameters
    ----------
    factors : sequence of ndarray
        Cores, core ``i`` of shape ``(r_{i-1}, d_i, r_i)``.  First and last
        boundary ranks must be 1.
    left_orthogonal : bool
        Whether the caller guarantees ``L(X_i)^T L(X_i) = I`` for every core
        but the last.  The flag is verified to 1e-10 on construction.

    The cores are copied and made read-only; a ``TTTensor`` is immutable.
    """

    __slots__ = ("_factors", "left_orthogonal")

    def __init__(self, factors: Sequence[np.ndarray], left_orthogonal: bool = False):
        cores = []
        for k, f in enumerate(factors):
            a = np.array(f, dtype=np.float64, copy=True)
            if a.ndim != 3:
                raise DimensionError(f"factor {k} has order {a.ndim}, expected 3")
            a.flags.writeable = False
            cores.append(a)
        if not cores:
            raise DimensionError("a TT tensor needs at least one factor")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise DimensionError("boundary ranks r_0 and r_K must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise DimensionError(
                    f"factor {k} right rank {cores[k].shape[2]} does not match "
                    f"factor {k + 1} left rank {cores[k + 1].shape[0]}"
                )
        self._factors = tuple(cores)
        self.left_orthogonal = bool(left_orthogonal)
        if self.left_orthogonal:
            err = orthogonality_error(self)
            if err > 1e-10:
                raise ValueError(f"factors flagged left-orthogonal deviate by {err:.3e}")

    @property
    def factors(self) -> tuple[np.ndarray, ...]:
        return self._factors

    @property
    def order(self) -> int:
        return len(self._factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self._factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Internal ranks ``(r_1, ..., r_{K-1})``."""
        return tuple(f.shape[2] for f in self._factors[:-1])

    def __len__(self) -> int:
        return len(self._factors)

    def __iter__(self):
        return iter(self._factors)

    def __getitem__(self, i: int) -> np.ndarray:
        return self._factors[i]

    def __repr__(self) -> str:
        return f"TTTensor(dims={self.dims}, ranks={self.ranks}, left_orthogonal={self.left_orthogonal})"

    def dense(self) -> np.ndarray:
        return tt_to_dense(self)

    def norm(self) -> float:
        """Frobenius norm, computed without materialising the dense tensor."""
        gram = np.ones((1, 1))
        for f in self._factors:
            gram = np.einsum("ab,asc,bsd->cd", gram, f, f)
        return float(np.sqrt(max(gram[0, 0], 0.0)))

    def scaled(self, alpha: float) -> "TTTensor":
        """Copy with the last core multiplied by ``alpha``."""
        cores = list(self._factors)
        cores[-1] = cores[-1] * alpha
        return TTTensor(cores, left_orthogonal=self.left_orthogonal)

    def with_factor(self, i: int, core: np.ndarray, left_orthogonal: bool = False) -> "TTTensor":
        cores = list(self._factors)
        cores[i] = core
        return TTTensor(cores, left_orthogonal=left_orthogonal)


@dataclass(frozen=True)
class TTSpectrum:
    per_unfolding_sigma_min: np.ndarray
    per_unfolding_sigma_max: np.ndarray

    @property
    def sigma_min(self) -> float:
        return float(np.min(self.per_unfolding_sigma_min))

    @property
    def sigma_max(self) -> float:
        return float(np.max(self.per_unfolding_sigma_max))

    @property
    def kappa(self) -> float:
        return self.sigma_max / self.sigma_min


@dataclass(frozen=True)
class ContractionSpec:
    """Mode pairs to sum over: ``left_modes[k]`` of ``a`` with ``right_modes[k]`` of ``b``."""

    left_modes: tuple[int, ...]
    right_modes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "left_modes", tuple(int(i) for i in self.left_modes))
        object.__setattr__(self, "right_modes", tuple(int(i) for i in self.right_modes))
        if len(self.left_modes) != len(self.right_modes):
            raise DimensionError("left_modes and right_modes differ in length")
        if len(set(self.left_modes)) != len(self.left_modes) or len(set(self.right_modes)) != len(
            self.right_modes
        ):
            raise DimensionError("contraction modes must be duplicate-free")

    def validate(self, a_shape: Sequence[int], b_shape: Sequence[int]) -> None:
        for i, j in zip(self.left_modes, self.right_modes):
            if not (0 <= i < len(a_shape)) or not (0 <= j < len(b_shape)):
                raise DimensionError(f"mode pair ({i}, {j}) out of range")
            if a_shape[i] != b_shape[j]:
                raise DimensionError(
                    f"mode {i} of first operand has extent {a_shape[i]}, "
                    f"mode {j} of second has {b_shape[j]}"
                )


def tt_to_dense(tt: TTTensor) -> np.ndarray:
    """Materialise the full tensor ``X(s_1..s_K) = prod_i X_i(s_i)``."""
    _check_dense_size(tt.dims)
    out = tt.factors[0].reshape(tt.dims[0], -1)
    for f in tt.factors[1:]:
        r0, d, r1 = f.shape
        out = (out @ f.reshape(r0, d * r1)).reshape(-1, r1)
    return out.reshape(tt.dims)


def contract(a: np.ndarray, b: np.ndarray, spec: ContractionSpec | tuple) -> np.ndarray:
    """Sum products over the paired modes.

    The result carries the surviving modes of ``a`` in order, followed by the
    surviving modes of ``b``.  With no mode pairs this is the outer product.
    """
    if not isinstance(spec, ContractionSpec):
        spec = ContractionSpec(*spec)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    spec.validate(a.shape, b.shape)
    return np.tensordot(a, b, axes=(list(spec.left_modes), list(spec.right_modes)))


def unfold(x: np.ndarray, i: int) -> np.ndarray:
    """The ``i``-th unfolding matrix, of shape ``(d_1...d_i, d_{i+1}...d_K)``.

    Row ``s_1 + d_1 s_2 + ... + d_1...d_{i-1} s_i`` and column
    ``s_{i+1} + d_{i+1} s_{i+2} + ...`` (zero-based) hold ``x[s_1, ..., s_K]``,
    i.e. the first index of each block varies fastest.
    """
    x = np.asarray(x)
    if not 1 <= i <= x.ndim - 1:
        raise ValueError(f"split index {i} outside [1, {x.ndim - 1}]")
    rows = int(np.prod(x.shape[:i]))
    return np.reshape(x, (rows, -1), order="F")


def fold(mat: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for any split index."""
    return np.ascontiguousarray(np.reshape(mat, tuple(dims), order="F"))


def left_unfold(factor: np.ndarray) -> np.ndarray:
    """Stack the slices ``X_i(1), ..., X_i(d_i)`` vertically.

    Returns the ``(r_{i-1} d_i, r_i)`` left unfolding ``L(X_i)``; block ``s``
    (rows ``s r_{i-1}`` to ``(s+1) r_{i-1}``) is the slice ``factor[:, s, :]``.
    """
    factor = np.asarray(factor)
    if factor.ndim != 3:
        raise DimensionError(f"expected an order-3 factor, got order {factor.ndim}")
    r0, d, r1 = factor.shape
    return factor.transpose(1, 0, 2).reshape(d * r0, r1)


def left_fold(mat: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`left_unfold` back to a factor of ``shape``."""
    r0, d, r1 = shape
    mat = np.asarray(mat)
    if mat.shape != (r0 * d, r1):
        raise DimensionError(f"matrix of shape {mat.shape} cannot fold to {tuple(shape)}")
    return np.ascontiguousarray(mat.reshape(d, r0, r1).transpose(1, 0, 2))


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # make the largest-magnitude entry of every left singular vector positive
    if u.size == 0:
        return u, vt
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def validate_ranks(dims: Sequence[int], ranks: Sequence[int]) -> tuple[int, ...]:
    """Check that ``ranks`` can be realised by a TT chain over ``dims``."""
    dims = tuple(int(d) for d in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims) - 1:
        raise RankError(f"{len(dims)} modes need {len(dims) - 1} ranks, got {len(ranks)}")
    full = (1,) + ranks + (1,)
    for k in range(1, len(dims)):
        r = full[k]
        if r < 1:
            raise RankError(f"rank r_{k} = {r} must be positive")
        left = int(np.prod(dims[:k]))
        right = int(np.prod(dims[k:]))
        if r > min(left, right):
            raise RankError(f"rank r_{k} = {r} exceeds min({left}, {right}) for dims {dims}")
        if r > full[k - 1] * dims[k - 1] or r > full[k + 1] * dims[k]:
            raise RankError(f"rank r_{k} = {r} not realisable next to ranks {ranks} and dims {dims}")
    return ranks


def tt_svd(x: np.ndarray, ranks: Sequence[int]) -> TTTensor:
    """Left-to-right sequential truncated SVD.

    Each core keeps exactly the requested rank.  If the data has lower
    numerical rank the kept singular vectors still form an orthonormal basis,
    so the output is always left-orthogonal.
    """
    x = np.asarray(x, dtype=np.float64)
    dims = x.shape
    _check_dense_size(dims)
    if x.ndim == 1:
        return TTTensor([x.reshape(1, -1, 1)], left_orthogonal=True)
    ranks = validate_ranks(dims, ranks)
    cores = []
    r_prev = 1
    rest = x.reshape(dims[0], -1)
    for k, r in enumerate(ranks):
        u, s, vt = np.linalg.svd(rest, full_matrices=False)
        u, vt = _fix_signs(u[:, :r], vt[:r])
        cores.append(u.reshape(r_prev, dims[k], r))
        rest = (s[:r, None] * vt).reshape(r * dims[k + 1], -1)
        r_prev = r
    cores.append(rest.reshape(r_prev, dims[-1], 1))
    return TTTensor(cores, left_orthogonal=True)


def left_orthogonalize(tt: TTTensor) -> TTTensor:
    """QR sweep moving all non-orthogonal content into the last core.

    Emits :class:`RankDeficiencyWarning` when some left unfolding is
    numerically rank deficient (a non-minimal decomposition).
    """
    cores = [np.array(f) for f in tt.factors]
    for k in range(len(cores) - 1):
        r0, d, r1 = cores[k].shape
        mat = cores[k].reshape(r0 * d, r1)
        if r0 * d < r1:
            raise RankError(f"factor {k} has left unfolding {r0 * d}x{r1}; not a minimal decomposition")
        q, rmat = np.linalg.qr(mat)
        signs = np.sign(np.diag(rmat))
        signs[signs == 0] = 1.0
        q = q * signs
        rmat = signs[:, None] * rmat
        sv = np.linalg.svd(rmat, compute_uv=False)
        if sv[0] > 0 and sv[-1] < RANK_TOL * sv[0] or sv[0] == 0:
            warnings.warn(
                f"left unfolding of factor {k} is numerically rank deficient",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        cores[k] = q.reshape(r0, d, r1)
        cores[k + 1] = np.einsum("ab,bsc->asc", rmat, cores[k + 1])
    return TTTensor(cores, left_orthogonal=True)


def orthogonality_error(tt: TTTensor) -> float:
    """``max_i ||L(X_i)^T L(X_i) - I||_F`` over all cores but the last."""
    err = 0.0
    for f in tt.factors[:-1]:
        lu = f.reshape(-1, f.shape[2])
        err = max(err, float(np.linalg.norm(lu.T @ lu - np.eye(f.shape[2]))))
    return err


def numerical_rank(mat: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(np.asarray(mat), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def unfolding_ranks(x: np.ndarray, tol: float = RANK_TOL) -> tuple[int, ...]:
    """Numerical ranks of all unfoldings ``X^<1>, ..., X^<K-1>``."""
    x = np.asarray(x)
    return tuple(numerical_rank(unfold(x, i), tol) for i in range(1, x.ndim))


def _right_part_singular_values(tt: TTTensor) -> list[np.ndarray]:
    # singular values of X^{>=i+1} for i = 1..K-1, via a right-to-left LQ sweep
    out = [None] * (tt.order - 1)
    carry = np.ones((1, 1))
    for k in range(tt.order - 1, 0, -1):
        f = np.einsum("asb,bc->asc", tt.factors[k], carry)
        r0 = f.shape[0]
        mat = f.reshape(r0, -1)
        # mat = L Q with Q having orthonormal rows; sigma(mat) = sigma(L)
        q, rt = np.linalg.qr(mat.T)
        carry = rt.T
        out[k - 1] = np.linalg.svd(carry, compute_uv=False)
    return out


def tt_spectrum(tt: TTTensor | np.ndarray, ranks: Sequence[int] | None = None, route: str = "dense") -> TTSpectrum:
    """Extreme singular values of every unfolding.

    ``route="dense"`` takes SVDs of the unfoldings of the dense tensor;
    ``route="tt"`` left-orthogonalises and reads the singular values of the
    right parts ``X^{>=i+1}`` from the cores alone.  For a dense input,
    ``ranks`` selects which singular value is reported as the smallest.
    """
    if route not in ("dense", "tt"):
        raise ValueError(f"unknown route {route!r}")
    if isinstance(tt, TTTensor):
        ranks = tt.ranks if ranks is None else tuple(ranks)
    elif ranks is None:
        ranks = unfolding_ranks(tt)
    if route == "tt":
        if not isinstance(tt, TTTensor):
            raise TypeError("the tt route needs a TTTensor")
        lo = tt if tt.left_orthogonal else left_orthogonalize(tt)
        svs = _right_part_singular_values(lo)
    else:
        x = tt.dense() if isinstance(tt, TTTensor) else np.asarray(tt)
        svs = [np.linalg.svd(unfold(x, i), compute_uv=False) for i in range(1, x.ndim)]
    smin = np.array([s[r - 1] if r <= s.size else 0.0 for s, r in zip(svs, ranks)])
    smax = np.array([s[0] for s in svs])
    return TTSpectrum(smin, smax)


def random_tt_unit(dims: Sequence[int], ranks: Sequence[int], seed: int | np.random.Generator) -> TTTensor:
    """Gaussian tensor truncated by :func:`tt_svd`, scaled to unit Frobenius norm."""
    g = seed if isinstance(seed, np.random.Generator) else _rng.stream(seed)
    x = _rng.gaussian(g, tuple(int(d) for d in dims))
    tt = tt_svd(x, ranks)
    # left-orthogonal: the norm lives in the last core
    return tt.scaled(1.0 / np.linalg.norm(tt.factors[-1]))


def restricted_frobenius_norm(h: np.ndarray, ranks: Sequence[int]) -> float:
    """``max_i sqrt(sum_{j <= r_i} sigma_j(H^<i>)^2)``."""
    h = np.asarray(h, dtype=np.float64)
    if len(ranks) != h.ndim - 1:
        raise RankError(f"{h.ndim} modes need {h.ndim - 1} ranks, got {len(ranks)}")
    best = 0.0
    for i, r in enumerate(ranks, start=1):
        s = np.linalg.svd(unfold(h, i), compute_uv=False)
        best = max(best, float(np.sqrt(np.sum(s[: int(r)] ** 2))))
    return best
