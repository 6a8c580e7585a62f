"""Tensor-on-tensor measurement operator and synthetic problems.

The covariates ``B`` have shape ``(m, d_1, ..., d_N)`` and the responses
``Y`` shape ``(m, d_{N+1}, ..., d_{N+M})``.  The forward map contracts the
last N modes of ``B`` against the first N modes of the coefficient tensor:

    A(X)[k, t] = sum_s B[k, s] X[s, t]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .tt_core import DimensionError, TTTensor, contract, random_tt_unit

__all__ = [
    "TotProblem",
    "NoiseSpec",
    "RipEstimate",
    "forward_map",
    "adjoint_map",
    "loss",
    "generate_problem",
    "estimate_rip",
]


@dataclass(frozen=True)
class TotProblem:
    covariates: np.ndarray
    responses: np.ndarray
    n_covariate_modes: int
    n_response_modes: int

    def __post_init__(self):
        b = np.asarray(self.covariates, dtype=np.float64)
        y = np.asarray(self.responses, dtype=np.float64)
        object.__setattr__(self, "covariates", b)
        object.__setattr__(self, "responses", y)
        n, mm = int(self.n_covariate_modes), int(self.n_response_modes)
        if n < 1 or mm < 1:
            raise DimensionError("need at least one covariate mode and one response mode")
        if b.ndim != n + 1:
            raise DimensionError(f"covariates have order {b.ndim}, expected {n + 1}")
        if y.ndim != mm + 1:
            raise DimensionError(f"responses have order {y.ndim}, expected {mm + 1}")
        if b.shape[0] != y.shape[0]:
            raise DimensionError(f"covariates hold {b.shape[0]} samples but responses hold {y.shape[0]}")

    @property
    def m(self) -> int:
        return self.covariates.shape[0]

    @property
    def covariate_dims(self) -> tuple[int, ...]:
        return self.covariates.shape[1:]

    @property
    def response_dims(self) -> tuple[int, ...]:
        return self.responses.shape[1:]

    @property
    def dims(self) -> tuple[int, ...]:
        """Dimensions of the coefficient tensor."""
        return self.covariate_dims + self.response_dims


@dataclass(frozen=True)
class NoiseSpec:
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValueError(f"noise variance must be non-negative, got {self.variance}")


@dataclass(frozen=True)
class RipEstimate:
    """Empirical range of ``||A(X)||^2 / (m ||X||^2) - 1`` over sampled TT tensors.

    ``delta`` (the larger one-sided deviation) is a lower bound on the true
    restricted isometry constant.
    """

    delta_lower: float
    delta_upper: float
    n_samples: int
    rank_probed: tuple[int, ...]

    @property
    def delta(self) -> float:
        return max(-self.delta_lower, self.delta_upper, 0.0)

    def to_dict(self) -> dict:
        return {
            "delta_lower": self.delta_lower,
            "delta_upper": self.delta_upper,
            "delta": self.delta,
            "n_samples": self.n_samples,
            "rank_probed": list(self.rank_probed),
        }


def _n_modes(covariates: np.ndarray) -> int:
    return np.ndim(covariates) - 1


def forward_map(covariates: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``B x_{2..N+1}^{1..N} X``, shape ``(m, d_{N+1}, ..., d_{N+M})``."""
    b = np.asarray(covariates)
    x = np.asarray(x)
    n = _n_modes(b)
    if x.ndim < n or x.shape[:n] != b.shape[1:]:
        raise DimensionError(f"coefficient dims {x.shape} do not start with covariate dims {b.shape[1:]}")
    if x.ndim == n:
        raise DimensionError("coefficient tensor has no response modes")
    return contract(b, x, (range(1, n + 1), range(n)))


def adjoint_map(covariates: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``A*(Z)[s, t] = sum_k Z[k, t] B[k, s]``."""
    b = np.asarray(covariates)
    z = np.asarray(z)
    if z.ndim < 2 or z.shape[0] != b.shape[0]:
        raise DimensionError(f"response tensor {z.shape} does not have {b.shape[0]} samples")
    return contract(b, z, ((0,), (0,)))


def loss(problem: TotProblem, x: np.ndarray) -> float:
    """``||A(X) - Y||_F^2 / (2m)``."""
    r = forward_map(problem.covariates, x) - problem.responses
    return float(np.vdot(r, r)) / (2.0 * problem.m)


def generate_problem(
    dims: Sequence[int],
    ranks: Sequence[int],
    m: int,
    noise: NoiseSpec | float = 0.0,
    seed: int = 0,
    n_covariate_modes: int | None = None,
) -> tuple[TotProblem, TTTensor]:
    """Synthetic problem: unit-norm TT truth, Gaussian covariates and noise.

    ``dims`` lists all N+M coefficient modes; ``n_covariate_modes`` says how
    many lead (default: all but the last).  Truth, covariates and noise use
    independent streams derived from ``seed``; the noise stream also mixes in
    ``noise.seed``.
    """
    dims = tuple(int(d) for d in dims)
    if m < 1:
        raise ValueError("need at least one sample")
    n = len(dims) - 1 if n_covariate_modes is None else int(n_covariate_modes)
    if not 1 <= n < len(dims):
        raise DimensionError(f"cannot split {len(dims)} modes with {n} covariate modes")
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec(float(noise), seed)
    truth = random_tt_unit(dims, ranks, _rng.substream(seed, 0))
    b = _rng.gaussian(_rng.substream(seed, 1), (m,) + dims[:n])
    y = forward_map(b, truth.dense())
    if noise.variance > 0:
        y = y + _rng.gaussian(_rng.substream(seed, 2, noise.seed), y.shape, np.sqrt(noise.variance))
    return TotProblem(b, y, n, len(dims) - n), truth


def estimate_rip(
    covariates: np.ndarray,
    response_dims: Sequence[int],
    ranks: Sequence[int],
    n_samples: int,
    seed: int = 0,
    probes: Sequence[TTTensor] | None = None,
) -> RipEstimate:
    """Sample the isometry ratio on random unit-norm TT tensors.

    ``probes`` replaces the random draws with caller-supplied tensors.
    """
    b = np.asarray(covariates)
    m = b.shape[0]
    dims = tuple(b.shape[1:]) + tuple(int(d) for d in response_dims)
    if probes is None:
        if n_samples < 1:
            raise ValueError("need at least one sample")
        probes = [random_tt_unit(dims, ranks, _rng.substream(seed, k)) for k in range(n_samples)]
    devs = []
    for tt in probes:
        x = tt.dense()
        ax = forward_map(b, x)
        devs.append(float(np.vdot(ax, ax)) / (m * float(np.vdot(x, x))) - 1.0)
    return RipEstimate(min(devs), max(devs), len(devs), tuple(int(r) for r in ranks))
