"""Command line interface: ``ttot {synth,phase-grid,fit,predict,check-rip}``.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .harness import ConfigError, ExperimentConfig, grid_to_csv, phase_grid, resolve_jobs, run_experiment, write_experiment
from .solvers import DivergenceError, IhtConfig, RgdConfig, iht_run, rgd_run, spectral_init
from .tot_model import TotProblem, estimate_rip, forward_map
from .tt_core import DimensionError, RankError, validate_ranks
from . import rng as _rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_DIVERGED = 4

log = logging.getLogger("ttot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dim_or_list(text: str):
    vals = _int_list(text)
    return vals[0] if len(vals) == 1 else vals


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its fields")
    p.add_argument("--n-cov-modes", type=int, dest="n_cov_modes")
    p.add_argument("--n-resp-modes", type=int, dest="n_resp_modes")
    p.add_argument("--dim", type=_dim_or_list, help="uniform dimension or comma list")
    p.add_argument("--rank", type=_dim_or_list, help="uniform rank or comma list")
    p.add_argument("--samples", type=int)
    p.add_argument("--noise-var", type=float, dest="noise_var")
    p.add_argument("--algo", choices=["iht", "rgd", "both"])
    p.add_argument("--step", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--success-threshold", type=float, dest="success_threshold")
    p.add_argument("--init", choices=["spectral", "truth"])
    p.add_argument("--stop-tol", type=float, dest="stop_tol")
    p.add_argument("--timeout", type=float, dest="timeout_s", help="per-trial wall-clock cap in seconds")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("."), dest="out_dir")


_EXPERIMENT_KEYS = (
    "n_cov_modes", "n_resp_modes", "dim", "rank", "samples", "noise_var", "algo", "step", "iters",
    "trials", "seed", "success_threshold", "init", "stop_tol", "timeout_s", "jobs",
)


def _experiment_config(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
    base = ExperimentConfig.normalize_keys(data)
    overrides = {k: getattr(args, k) for k in _EXPERIMENT_KEYS if getattr(args, k, None) is not None}
    merged = base | overrides
    merged["jobs"] = resolve_jobs(merged.get("jobs"))
    return ExperimentConfig.from_dict(merged)


def cmd_synth(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    for path in write_experiment(result, args.out_dir):
        print(path)
    for name, r in result.results.items():
        print(f"{name}: success_rate={r.success_rate:.3f} plateau_error_sq={r.plateau_error_sq:.6g}")
    if any(r.diverged_trials for r in result.results.values()):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_phase_grid(args) -> int:
    if args.algo not in ("iht", "rgd"):
        raise ConfigError("algo: phase-grid needs iht or rgd")
    rows = phase_grid(
        args.n_values, args.m_values, n_resp_modes=args.n_resp_modes, dim=args.dim, rank=args.rank,
        algorithm=args.algo, trials=args.trials, step=args.step, iters=args.iters, seed=args.seed,
        success_threshold=args.success_threshold, jobs=resolve_jobs(args.jobs),
    )
    text = grid_to_csv(rows)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / f"phase_grid_{args.algo}.csv"
    path.write_text(text, newline="")
    sys.stdout.write(text)
    return EXIT_OK


def _ranks_for(dims, rank):
    if isinstance(rank, int):
        return [rank] * (len(dims) - 1)
    return list(rank)


def cmd_fit(args) -> int:
    b = tio.read_dense(args.covariates)
    y = tio.read_dense(args.responses)
    if b.ndim < 2 or y.ndim < 2:
        raise tio.FormatError("covariates and responses need a sample mode plus at least one more mode")
    if b.shape[0] != y.shape[0]:
        raise DimensionError(f"{args.covariates} holds {b.shape[0]} samples but {args.responses} holds {y.shape[0]}")
    problem = TotProblem(b, y, b.ndim - 1, y.ndim - 1)
    ranks = _ranks_for(problem.dims, args.rank)
    init = spectral_init(problem, ranks)
    if args.algo == "iht":
        model, trace = iht_run(problem, init, IhtConfig(ranks, args.step, args.iters, args.stop_tol))
    else:
        model, trace = rgd_run(problem, init, RgdConfig(ranks, args.step, args.iters, stop_tol=args.stop_tol))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = args.out_dir / "model.tt"
    trace_path = args.out_dir / "trace.csv"
    tio.write_tt(model_path, model)
    trace_path.write_text(trace.to_csv(), newline="")
    print(model_path)
    print(trace_path)
    print(f"final loss {trace.losses[-1]:.6g} after {len(trace) - 1} iterations")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = tio.read_tt(args.model)
    b = tio.read_dense(args.covariates)
    n = b.ndim - 1
    if tuple(model.dims[:n]) != tuple(b.shape[1:]):
        raise DimensionError(f"model dims {model.dims} do not start with covariate dims {b.shape[1:]}")
    y = forward_map(b, model.dense())
    args.output.parent.mkdir(parents=True, exist_ok=True)
    tio.write_dense(args.output, y)
    print(args.output)
    return EXIT_OK


def cmd_check_rip(args) -> int:
    dims = args.dims
    if not 1 <= args.n_cov_modes < len(dims):
        raise ConfigError(f"n_cov_modes: must lie in [1, {len(dims) - 1}] for dims {dims}")
    ranks = _ranks_for(dims, args.rank)
    if args.samples < 1 or args.probes < 1:
        raise ConfigError("samples/probes: must be at least 1")
    try:
        validate_ranks(dims, ranks)
    except RankError as exc:
        raise ConfigError(f"rank: {exc}") from None
    n = args.n_cov_modes
    b = _rng.gaussian(_rng.substream(args.seed, 0), (args.samples,) + tuple(dims[:n]))
    est = estimate_rip(b, dims[n:], ranks, args.probes, seed=args.seed + 1)
    report = est.to_dict() | {"dims": list(dims), "n_cov_modes": n, "m": args.samples, "seed": args.seed}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, newline="")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttot", description="Tensor-train tensor-on-tensor regression toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="Monte-Carlo convergence experiment on synthetic data")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("phase-grid", help="noiseless success rate over a grid of (N, m)")
    p.add_argument("--n-values", type=_int_list, required=True, dest="n_values")
    p.add_argument("--m-values", type=_int_list, required=True, dest="m_values")
    p.add_argument("--n-resp-modes", type=int, default=2, dest="n_resp_modes")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--algo", choices=["iht", "rgd"], default="iht")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--success-threshold", type=float, default=1e-5, dest="success_threshold")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out-dir", type=Path, default=Path("."), dest="out_dir")
    p.set_defaults(func=cmd_phase_grid)

    p = sub.add_parser("fit", help="fit a TT coefficient tensor to DTF1 data")
    p.add_argument("covariates", type=Path)
    p.add_argument("responses", type=Path)
    p.add_argument("--rank", type=_dim_or_list, required=True)
    p.add_argument("--algo", choices=["iht", "rgd"], default="iht")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--stop-tol", type=float, default=1e-12, dest="stop_tol")
    p.add_argument("--out-dir", type=Path, default=Path("."), dest="out_dir")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="apply a fitted model to DTF1 covariates")
    p.add_argument("model", type=Path)
    p.add_argument("covariates", type=Path)
    p.add_argument("-o", "--output", type=Path, default=Path("predictions.dtf"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("check-rip", help="empirical restricted isometry estimate")
    p.add_argument("--dims", type=_int_list, required=True, help="all N+M coefficient dims")
    p.add_argument("--n-cov-modes", type=int, required=True, dest="n_cov_modes")
    p.add_argument("--rank", type=_dim_or_list, required=True)
    p.add_argument("--samples", type=int, required=True, help="number of measurements m")
    p.add_argument("--probes", type=int, default=200, help="random TT tensors to test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_check_rip)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RankError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tio.FormatError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
