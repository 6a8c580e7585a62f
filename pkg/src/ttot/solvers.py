"""Spectral initialisation, iterative hard thresholding and Riemannian GD.

Both solvers minimise ``g(X) = ||A(X) - Y||^2 / (2m)`` over tensors of fixed
TT rank.  IHT works on the full tensor and projects with TT-SVD after every
gradient step.  RGD keeps the cores in left-orthogonal form: cores
``1..K-1`` move on the Stiefel manifold (tangent projection, then polar
retraction) with step ``mu / scale`` and the last core takes a plain
gradient step ``mu``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tot_model import TotProblem, adjoint_map, forward_map
from .tt_core import (
    DimensionError,
    TTTensor,
    left_fold,
    left_unfold,
    tt_spectrum,
    tt_svd,
    tt_to_dense,
)

__all__ = [
    "DivergenceError",
    "IhtConfig",
    "RgdConfig",
    "ScaleMode",
    "SolverTrace",
    "TraceRecord",
    "spectral_init",
    "iht_gradient",
    "iht_run",
    "rgd_factor_gradients",
    "stiefel_project",
    "polar_retract",
    "rgd_run",
    "iht_step_bounds",
    "rgd_max_step",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Loss blew up past ``DIVERGENCE_FACTOR`` times its initial value.

    ``trace`` holds the iterations recorded before the blow-up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ScaleMode(str, enum.Enum):
    GROUND_TRUTH_SIGMA_MAX_SQ = "ground_truth_sigma_max_sq"
    ITERATE_FROBENIUS_SQ = "iterate_frobenius_sq"


def _check_common(step_size, max_iters, stop_tol, time_limit_s):
    if not step_size > 0:
        raise ValueError(f"step size must be positive, got {step_size}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {max_iters}")
    if not stop_tol >= 0:
        raise ValueError(f"stop_tol must be non-negative, got {stop_tol}")
    if time_limit_s is not None and not time_limit_s > 0:
        raise ValueError(f"time_limit_s must be positive, got {time_limit_s}")


@dataclass(frozen=True)
class IhtConfig:
    target_ranks: tuple[int, ...]
    step_size: float = 0.5
    max_iters: int = 1000
    stop_tol: float = 1e-12
    time_limit_s: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "target_ranks", tuple(int(r) for r in self.target_ranks))
        _check_common(self.step_size, self.max_iters, self.stop_tol, self.time_limit_s)


@dataclass(frozen=True)
class RgdConfig:
    target_ranks: tuple[int, ...]
    step_size: float = 0.5
    max_iters: int = 1000
    scale_mode: ScaleMode = ScaleMode.ITERATE_FROBENIUS_SQ
    stop_tol: float = 1e-12
    time_limit_s: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "target_ranks", tuple(int(r) for r in self.target_ranks))
        object.__setattr__(self, "scale_mode", ScaleMode(self.scale_mode))
        _check_common(self.step_size, self.max_iters, self.stop_tol, self.time_limit_s)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    recovery_error_sq: float
    wall_time_s: float


@dataclass
class SolverTrace:
    """Per-iteration history; iteration 0 is the initial point."""

    iterations: list[TraceRecord] = field(default_factory=list)
    stopped_early: bool = False
    timed_out: bool = False

    def append(self, rec: TraceRecord) -> None:
        if self.iterations and rec.iter <= self.iterations[-1].iter:
            raise ValueError("trace iterations must be strictly increasing")
        self.iterations.append(rec)

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.iterations])

    @property
    def errors_sq(self) -> np.ndarray:
        return np.array([r.recovery_error_sq for r in self.iterations])

    def to_csv(self, include_time: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loss", "recovery_error_sq", "wall_time_s"])
        for r in self.iterations:
            w.writerow([r.iter, repr(r.loss), repr(r.recovery_error_sq), repr(r.wall_time_s if include_time else 0.0)])
        return buf.getvalue()


class _Operator:
    """Matrix view of A for repeated application inside solver loops."""

    def __init__(self, problem: TotProblem):
        self.m = problem.m
        self.cov_dims = problem.covariate_dims
        self.resp_dims = problem.response_dims
        self.dims = problem.dims
        self.b = problem.covariates.reshape(self.m, -1)
        self.y = problem.responses.reshape(self.m, -1)
        self.p = self.b.shape[1]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.b @ x.reshape(self.p, -1) - self.y

    def loss_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        r = self.residual(x)
        grad = (self.b.T @ r) / self.m
        return float(np.vdot(r, r)) / (2 * self.m), grad.reshape(self.dims)

    def loss(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(np.vdot(r, r)) / (2 * self.m)


def spectral_init(problem: TotProblem, ranks: Sequence[int]) -> TTTensor:
    """TT-SVD of the back-projected responses ``A*(Y) / m``."""
    return tt_svd(adjoint_map(problem.covariates, problem.responses) / problem.m, ranks)


def iht_gradient(problem: TotProblem, x: np.ndarray) -> np.ndarray:
    """``A*(A(X) - Y) / m``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != problem.dims:
        raise DimensionError(f"iterate dims {x.shape} differ from problem dims {problem.dims}")
    r = forward_map(problem.covariates, x) - problem.responses
    return adjoint_map(problem.covariates, r) / problem.m


def _truth_dense(ground_truth, dims):
    if ground_truth is None:
        return None
    t = ground_truth.dense() if isinstance(ground_truth, TTTensor) else np.asarray(ground_truth, dtype=np.float64)
    if t.shape != tuple(dims):
        raise DimensionError(f"ground truth dims {t.shape} differ from problem dims {tuple(dims)}")
    return t


def _err_sq(x, truth):
    if truth is None:
        return -1.0
    d = x - truth
    return float(np.vdot(d, d))


def _check_divergence(loss_val, loss0, it, trace):
    if not np.isfinite(loss_val) or (loss0 > 0 and loss_val > DIVERGENCE_FACTOR * loss0):
        raise DivergenceError(
            f"loss {loss_val:.3e} at iteration {it} exceeds {DIVERGENCE_FACTOR:g} x initial loss {loss0:.3e}",
            trace,
        )


def _should_stop(change, cfg, it, elapsed, trace):
    if change < cfg.stop_tol:
        trace.stopped_early = it < cfg.max_iters
        return True
    if cfg.time_limit_s is not None and elapsed > cfg.time_limit_s:
        trace.timed_out = it < cfg.max_iters
        return trace.timed_out
    return False


def iht_run(
    problem: TotProblem,
    init: TTTensor,
    cfg: IhtConfig,
    ground_truth: TTTensor | None = None,
) -> tuple[TTTensor, SolverTrace]:
    """``X <- TT-SVD_r(X - mu * grad g(X))`` until ``max_iters`` or the
    relative iterate change drops below ``stop_tol``."""
    op = _Operator(problem)
    if tuple(init.dims) != op.dims:
        raise DimensionError(f"initial iterate dims {init.dims} differ from problem dims {op.dims}")
    if any(a > b for a, b in zip(init.ranks, cfg.target_ranks)):
        raise ValueError(f"initial ranks {init.ranks} exceed target ranks {cfg.target_ranks}")
    truth = _truth_dense(ground_truth, op.dims)
    trace = SolverTrace()
    t0 = time.perf_counter()

    tt = init
    x = tt_to_dense(tt)
    loss0, grad = op.loss_and_grad(x)
    trace.append(TraceRecord(0, loss0, _err_sq(x, truth), 0.0))
    for it in range(1, cfg.max_iters + 1):
        tt = tt_svd(x - cfg.step_size * grad, cfg.target_ranks)
        x_new = tt_to_dense(tt)
        loss_val, grad = op.loss_and_grad(x_new)
        _check_divergence(loss_val, loss0, it, trace)
        trace.append(TraceRecord(it, loss_val, _err_sq(x_new, truth), time.perf_counter() - t0))
        xn = np.linalg.norm(x)
        change = np.linalg.norm(x_new - x) / xn if xn > 0 else np.linalg.norm(x_new)
        x = x_new
        if _should_stop(change, cfg, it, time.perf_counter() - t0, trace):
            break
    return tt, trace


def stiefel_project(base: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Tangent-space projection ``G - base (G^T base + base^T G) / 2``."""
    base = np.asarray(base, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if base.shape != grad.shape:
        raise DimensionError(f"base {base.shape} and gradient {grad.shape} differ in shape")
    dev = np.linalg.norm(base.T @ base - np.eye(base.shape[1]))
    if dev > 1e-8:
        raise ValueError(f"base is not orthonormal (deviation {dev:.3e})")
    return grad - 0.5 * base @ (grad.T @ base + base.T @ grad)


def polar_retract(base: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Polar factor of ``base + step``, i.e. ``Y (Y^T Y)^{-1/2}``.

    Computed as ``U V^T`` from the thin SVD ``Y = U S V^T``.
    """
    y = np.asarray(base, dtype=np.float64) + np.asarray(step, dtype=np.float64)
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    if s.size == 0 or s[-1] <= 1e-12 * max(1.0, s[0]):
        raise np.linalg.LinAlgError("retraction point is rank deficient")
    return u @ vt


def _partial_products(cores):
    # left[i]: (d_1...d_{i-1}, r_{i-1}); right[i]: (r_i, d_{i+1}...d_K)
    k = len(cores)
    left = [np.ones((1, 1))]
    for f in cores[:-1]:
        r0, d, r1 = f.shape
        left.append((left[-1] @ f.reshape(r0, d * r1)).reshape(-1, r1))
    right = [None] * k
    right[k - 1] = np.ones((1, 1))
    for i in range(k - 1, 0, -1):
        f = cores[i]
        r0, d, r1 = f.shape
        right[i - 1] = (f.reshape(r0 * d, r1) @ right[i]).reshape(r0, -1)
    return left, right


def _factor_grads_from_dense(cores, dense_grad, left=None, right=None):
    if left is None:
        left, right = _partial_products(cores)
    grads = []
    for i, f in enumerate(cores):
        r0, d, r1 = f.shape
        g = dense_grad.reshape(left[i].shape[0], d, right[i].shape[1])
        # sum over outer indices of G(p, s, q) L(p, a) R(b, q)
        tmp = np.tensordot(left[i], g, axes=(0, 0))  # (r0, d, q)
        grads.append(np.tensordot(tmp, right[i], axes=(2, 1)))  # (r0, d, r1)
    return grads


def rgd_factor_gradients(problem: TotProblem, factors: TTTensor) -> list[np.ndarray]:
    """Euclidean gradient of ``f(X_1, ..., X_K) = g([X_1, ..., X_K])`` per core.

    The residual is pulled back through ``B`` and then contracted with all
    cores except ``X_i``; the result for core ``i`` has its shape
    ``(r_{i-1}, d_i, r_i)``.
    """
    if tuple(factors.dims) != problem.dims:
        raise DimensionError(f"factor dims {factors.dims} differ from problem dims {problem.dims}")
    x = tt_to_dense(factors)
    r = forward_map(problem.covariates, x) - problem.responses
    g = adjoint_map(problem.covariates, r) / problem.m
    return _factor_grads_from_dense(list(factors.factors), g)


def rgd_run(
    problem: TotProblem,
    init: TTTensor,
    cfg: RgdConfig,
    ground_truth: TTTensor | None = None,
) -> tuple[TTTensor, SolverTrace]:
    """Riemannian gradient descent over left-orthogonal cores.

    All core gradients are taken at the current iterate, then every core is
    updated at once.  The last core is not re-orthogonalised, so the returned
    tensor is left-orthogonal in the sense that cores ``1..K-1`` are.
    """
    op = _Operator(problem)
    if tuple(init.dims) != op.dims:
        raise DimensionError(f"initial iterate dims {init.dims} differ from problem dims {op.dims}")
    if tuple(init.ranks) != cfg.target_ranks:
        raise ValueError(f"initial ranks {init.ranks} differ from target ranks {cfg.target_ranks}")
    if not init.left_orthogonal:
        raise ValueError("RGD needs a left-orthogonal initial iterate")
    truth = _truth_dense(ground_truth, op.dims)
    fixed_scale = None
    if cfg.scale_mode is ScaleMode.GROUND_TRUTH_SIGMA_MAX_SQ:
        if ground_truth is None:
            raise ValueError("scale mode ground_truth_sigma_max_sq needs the ground truth")
        gt = ground_truth if isinstance(ground_truth, TTTensor) else tt_svd(truth, cfg.target_ranks)
        fixed_scale = tt_spectrum(gt, route="tt").sigma_max ** 2

    trace = SolverTrace()
    t0 = time.perf_counter()
    cores = [np.array(f) for f in init.factors]
    left, right = _partial_products(cores)
    x = (left[-1] @ cores[-1].reshape(cores[-1].shape[0], -1)).reshape(op.dims)
    loss0, grad = op.loss_and_grad(x)
    trace.append(TraceRecord(0, loss0, _err_sq(x, truth), 0.0))
    k = len(cores)
    for it in range(1, cfg.max_iters + 1):
        # last core is the only non-orthonormal one, so ||X||_F = ||X_K||_F
        scale = fixed_scale if fixed_scale is not None else float(np.vdot(cores[-1], cores[-1]))
        fgrads = _factor_grads_from_dense(cores, grad, left, right)
        new = []
        for i in range(k - 1):
            base = left_unfold(cores[i])
            rg = stiefel_project(base, left_unfold(fgrads[i]))
            new.append(left_fold(polar_retract(base, -(cfg.step_size / scale) * rg), cores[i].shape))
        new.append(cores[-1] - cfg.step_size * fgrads[-1])
        cores = new
        left, right = _partial_products(cores)
        x_new = (left[-1] @ cores[-1].reshape(cores[-1].shape[0], -1)).reshape(op.dims)
        loss_val, grad = op.loss_and_grad(x_new)
        _check_divergence(loss_val, loss0, it, trace)
        trace.append(TraceRecord(it, loss_val, _err_sq(x_new, truth), time.perf_counter() - t0))
        xn = np.linalg.norm(x)
        change = np.linalg.norm(x_new - x) / xn if xn > 0 else np.linalg.norm(x_new)
        x = x_new
        if _should_stop(change, cfg, it, time.perf_counter() - t0, trace):
            break
    return TTTensor(cores, left_orthogonal=True), trace


def iht_step_bounds(delta: float, init_error: float, sigma_min: float, order: int) -> tuple[float, float]:
    """Admissible IHT step-size interval ``(lower, upper]`` from the local
    convergence theorem, given the RIP constant ``delta`` (at rank 4r), the
    initial error ``||X0 - X*||_F``, ``sigma_min(X*)`` and ``order = N + M``."""
    c = 600.0 * order * init_error / sigma_min
    lower = c / ((1.0 + c) * (1.0 - delta))
    upper = (1.0 - delta) / (2.0 * (1.0 + delta) ** 2)
    return lower, upper


def rgd_max_step(delta: float, order: int) -> float:
    """Largest RGD step covered by the theory, for RIP constant ``delta <= 7/30``."""
    if delta > 7.0 / 30.0:
        raise ValueError("the RGD step-size bound needs delta <= 7/30")
    return (7.0 - 30.0 * delta) / (20.0 * (9.0 * order - 5.0) * (1.0 + delta) ** 2)
