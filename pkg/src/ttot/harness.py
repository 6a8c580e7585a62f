"""Monte-Carlo experiment runner for synthetic tensor-on-tensor problems.

Every trial draws its own problem from a stream derived from
``(seed, trial)``; results are gathered by trial index, so the output does
not depend on how many workers ran or in which order trials finished.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .solvers import DivergenceError, IhtConfig, RgdConfig, iht_run, rgd_run, spectral_init
from .tot_model import NoiseSpec, generate_problem
from .tt_core import RankError, validate_ranks

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "AlgorithmResult",
    "ExperimentResult",
    "run_trial",
    "run_experiment",
    "write_experiment",
    "phase_grid",
    "grid_to_csv",
    "resolve_jobs",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("iht", "rgd")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _as_list(v, n, name):
    if isinstance(v, (int, np.integer)):
        return [int(v)] * n
    try:
        out = [int(a) for a in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected an integer or a list of integers, got {v!r}") from None
    if len(out) != n:
        raise ConfigError(f"{name}: expected {n} entries, got {len(out)}")
    return out


_ALIASES = {"N": "n_cov_modes", "M": "n_resp_modes", "d": "dim", "r": "rank", "m": "samples",
            "gamma2": "noise_var", "noise_variance": "noise_var", "mu": "step", "T": "iters",
            "algorithm": "algo"}


@dataclass(frozen=True)
class ExperimentConfig:
    n_cov_modes: int = 4
    n_resp_modes: int = 2
    dim: int | tuple[int, ...] = 4
    rank: int | tuple[int, ...] = 2
    samples: int = 200
    noise_var: float = 0.01
    algo: str = "both"
    step: float = 0.5
    iters: int = 1000
    trials: int = 20
    seed: int = 0
    success_threshold: float = 1e-5
    init: str = "spectral"
    stop_tol: float = 1e-12
    timeout_s: float = 300.0
    jobs: int = 1

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if not isinstance(self.dim, int):
            object.__setattr__(self, "dim", tuple(int(a) for a in self.dim))
        if not isinstance(self.rank, int):
            object.__setattr__(self, "rank", tuple(int(a) for a in self.rank))
        if self.n_cov_modes < 1:
            bad("n_cov_modes", "must be at least 1")
        if self.n_resp_modes < 1:
            bad("n_resp_modes", "must be at least 1")
        if self.samples < 1:
            bad("samples", "must be at least 1")
        if not self.noise_var >= 0:
            bad("noise_var", "must be non-negative")
        if self.algo not in ALGORITHMS + ("both",):
            bad("algo", f"must be one of iht, rgd, both; got {self.algo!r}")
        if not self.step > 0:
            bad("step", "must be positive")
        if self.iters < 1:
            bad("iters", "must be at least 1")
        if self.trials < 1:
            bad("trials", "must be at least 1")
        if not self.success_threshold > 0:
            bad("success_threshold", "must be positive")
        if self.init not in ("spectral", "truth"):
            bad("init", f"must be spectral or truth; got {self.init!r}")
        if not self.stop_tol >= 0:
            bad("stop_tol", "must be non-negative")
        if not self.timeout_s > 0:
            bad("timeout_s", "must be positive")
        if self.jobs < 1:
            bad("jobs", "must be at least 1")
        dims = self.dims
        if any(d < 1 for d in dims):
            bad("dim", "dimensions must be positive")
        try:
            validate_ranks(dims, self.ranks)
        except RankError as exc:
            bad("rank", str(exc))

    @property
    def order(self) -> int:
        return self.n_cov_modes + self.n_resp_modes

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(_as_list(self.dim, self.order, "dim"))

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(_as_list(self.rank, self.order - 1, "rank"))

    @property
    def algorithms(self) -> tuple[str, ...]:
        return ALGORITHMS if self.algo == "both" else (self.algo,)

    @classmethod
    def normalize_keys(cls, data: dict) -> dict:
        """Map alias keys (``N``, ``m``, ``gamma2``, ...) to field names."""
        known = {f.name for f in fields(cls)}
        out = {}
        for key, value in data.items():
            name = _ALIASES.get(key, key).replace("-", "_")
            if name not in known:
                raise ConfigError(f"{key}: unknown configuration field")
            out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            return cls(**cls.normalize_keys(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dim"] = list(self.dims)
        d["rank"] = list(self.ranks)
        d.pop("jobs")
        return d


@dataclass
class AlgorithmResult:
    algorithm: str
    final_errors_sq: list[float]
    mean_errors_sq: np.ndarray
    mean_errors: np.ndarray
    mean_losses: np.ndarray
    success_rate: float
    timed_out_trials: list[int] = field(default_factory=list)
    diverged_trials: list[int] = field(default_factory=list)

    @property
    def plateau_error_sq(self) -> float:
        return float(np.mean(self.final_errors_sq))

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loss", "recovery_error_sq", "recovery_error"])
        for t, (l, e2, e) in enumerate(zip(self.mean_losses, self.mean_errors_sq, self.mean_errors)):
            w.writerow([t, repr(float(l)), repr(float(e2)), repr(float(e))])
        return buf.getvalue()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: dict[str, AlgorithmResult]

    def to_json(self) -> str:
        out = {"config": self.config.to_dict(), "algorithms": {}}
        for name, r in self.results.items():
            out["algorithms"][name] = {
                "success_rate": r.success_rate,
                "plateau_error_sq": r.plateau_error_sq,
                "final_errors_sq": [float(e) for e in r.final_errors_sq],
                "timed_out_trials": r.timed_out_trials,
                "diverged_trials": r.diverged_trials,
            }
        return json.dumps(out, indent=2, sort_keys=True) + "\n"


def resolve_jobs(jobs: int | None) -> int:
    env = os.environ.get("TTOT_JOBS")
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"TTOT_JOBS: not an integer: {env!r}") from None
    jobs = 1 if jobs is None else int(jobs)
    if jobs < 1:
        raise ConfigError("jobs: must be at least 1")
    return jobs


def run_trial(cfg: ExperimentConfig, trial: int, algorithm: str) -> dict:
    """One problem draw and one solver run; returns the traces as arrays."""
    problem, truth = generate_problem(
        cfg.dims, cfg.ranks, cfg.samples, NoiseSpec(cfg.noise_var, trial), seed=_trial_seed(cfg.seed, trial),
        n_covariate_modes=cfg.n_cov_modes,
    )
    init = truth if cfg.init == "truth" else spectral_init(problem, cfg.ranks)
    diverged = False
    try:
        if algorithm == "iht":
            solver_cfg = IhtConfig(cfg.ranks, cfg.step, cfg.iters, cfg.stop_tol, cfg.timeout_s)
            _, trace = iht_run(problem, init, solver_cfg, truth)
        elif algorithm == "rgd":
            solver_cfg = RgdConfig(cfg.ranks, cfg.step, cfg.iters, stop_tol=cfg.stop_tol, time_limit_s=cfg.timeout_s)
            _, trace = rgd_run(problem, init, solver_cfg, truth)
        else:
            raise ConfigError(f"algo: unknown algorithm {algorithm!r}")
    except DivergenceError as exc:
        log.warning("trial %d (%s) diverged: %s", trial, algorithm, exc)
        trace, diverged = exc.trace, True
    return {
        "trial": trial,
        "errors_sq": trace.errors_sq,
        "losses": trace.losses,
        "timed_out": trace.timed_out,
        "diverged": diverged,
    }


def _trial_seed(seed: int, trial: int) -> int:
    # distinct, order-independent problem seed per trial
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _pad(arr: np.ndarray, length: int) -> np.ndarray:
    # early-stopped runs sit at their fixed point for the remaining iterations
    if len(arr) >= length:
        return arr[:length]
    return np.concatenate([arr, np.full(length - len(arr), arr[-1])])


def _run_all(tasks, jobs):
    if jobs == 1 or len(tasks) == 1:
        return [run_trial(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _run_task(task):
    return run_trial(*task)


def _aggregate(cfg: ExperimentConfig, algorithm: str, outs: list[dict]) -> AlgorithmResult:
    outs = sorted(outs, key=lambda o: o["trial"])
    length = cfg.iters + 1
    errs = np.array([_pad(o["errors_sq"], length) for o in outs])
    losses = np.array([_pad(o["losses"], length) for o in outs])
    finals = [float(o["errors_sq"][-1]) for o in outs]
    successes = sum(
        (not o["diverged"]) and np.sqrt(max(e, 0.0)) <= cfg.success_threshold for o, e in zip(outs, finals)
    )
    return AlgorithmResult(
        algorithm=algorithm,
        final_errors_sq=finals,
        mean_errors_sq=errs.mean(axis=0),
        mean_errors=np.sqrt(np.maximum(errs, 0.0)).mean(axis=0),
        mean_losses=losses.mean(axis=0),
        success_rate=successes / len(outs),
        timed_out_trials=[o["trial"] for o in outs if o["timed_out"]],
        diverged_trials=[o["trial"] for o in outs if o["diverged"]],
    )


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None, trial_order: Sequence[int] | None = None) -> ExperimentResult:
    """Run ``cfg.trials`` trials of every selected algorithm.

    ``trial_order`` only changes the execution order; it exists to check that
    results do not depend on it.
    """
    jobs = cfg.jobs if jobs is None else jobs
    order = list(range(cfg.trials)) if trial_order is None else list(trial_order)
    if sorted(order) != list(range(cfg.trials)):
        raise ConfigError("trial_order: must be a permutation of the trial indices")
    results = {}
    for algorithm in cfg.algorithms:
        outs = _run_all([(cfg, t, algorithm) for t in order], jobs)
        results[algorithm] = _aggregate(cfg, algorithm, outs)
        r = results[algorithm]
        log.info("%s: success rate %.3f, mean final error^2 %.4g", algorithm, r.success_rate, r.plateau_error_sq)
    return ExperimentResult(cfg, results)


def write_experiment(result: ExperimentResult, out_dir: str | os.PathLike) -> list[Path]:
    """Write ``<algo>_mean_trace.csv`` per algorithm and ``result.json``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name, r in result.results.items():
        p = d / f"{name}_mean_trace.csv"
        p.write_text(r.trace_csv(), newline="")
        written.append(p)
    p = d / "result.json"
    p.write_text(result.to_json(), newline="")
    written.append(p)
    return written


def phase_grid(
    n_values: Sequence[int],
    m_values: Sequence[int],
    n_resp_modes: int = 2,
    dim: int = 4,
    rank: int = 2,
    algorithm: str = "iht",
    trials: int = 20,
    step: float = 0.5,
    iters: int = 1000,
    seed: int = 0,
    success_threshold: float = 1e-5,
    jobs: int = 1,
    stop_tol: float = 1e-12,
) -> list[tuple[int, int, float]]:
    """Noiseless success rate for every ``(N, m)`` cell."""
    if not list(n_values) or not list(m_values):
        raise ConfigError("phase grid ranges must be non-empty")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algo: phase grid needs iht or rgd, got {algorithm!r}")
    rows = []
    for n in n_values:
        for m in m_values:
            cfg = ExperimentConfig(
                n_cov_modes=int(n), n_resp_modes=n_resp_modes, dim=dim, rank=rank, samples=int(m),
                noise_var=0.0, algo=algorithm, step=step, iters=iters, trials=trials,
                seed=seed, success_threshold=success_threshold, stop_tol=stop_tol, jobs=jobs,
            )
            res = run_experiment(cfg)
            rows.append((int(n), int(m), float(res.results[algorithm].success_rate)))
    return rows


def grid_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "m", "success_rate"])
    for n, m, s in rows:
        w.writerow([n, m, repr(s)])
    return buf.getvalue()
