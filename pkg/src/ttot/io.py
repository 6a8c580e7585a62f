"""Binary tensor files.

DTF1 dense layout (all little-endian)::

    bytes 0-3   magic b"DTF1"
    u32         order K
    K x u64     dims
    prod(dims) x f64   values, row-major

A TT tensor is stored as ``u32 K``, ``(K-1) x u64`` ranks, then its K cores as
consecutive DTF1 blocks (each of order 3).
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .tt_core import TTTensor

__all__ = [
    "MAGIC",
    "FormatError",
    "write_dense",
    "read_dense",
    "dumps_dense",
    "loads_dense",
    "write_tt",
    "read_tt",
    "write_problem",
    "read_problem",
]

MAGIC = b"DTF1"


class FormatError(ValueError):
    """A file is not valid DTF1 data."""


def _write_block(fh: BinaryIO, x: np.ndarray) -> None:
    x = np.asarray(x, dtype="<f8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", x.ndim))
    fh.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    fh.write(np.ascontiguousarray(x).tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int, name: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{name}: truncated data (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_block(fh: BinaryIO, name: str) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    (order,) = struct.unpack("<I", _read_exact(fh, 4, name))
    if order < 1:
        raise FormatError(f"{name}: order must be at least 1")
    dims = struct.unpack(f"<{order}Q", _read_exact(fh, 8 * order, name))
    if any(d < 1 for d in dims):
        raise FormatError(f"{name}: zero dimension in {dims}")
    n = int(np.prod(dims, dtype=object))
    data = np.frombuffer(_read_exact(fh, 8 * n, name), dtype="<f8")
    return data.astype(np.float64).reshape(dims)


def dumps_dense(x: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _write_block(buf, x)
    return buf.getvalue()


def loads_dense(data: bytes, name: str = "<bytes>") -> np.ndarray:
    fh = io.BytesIO(data)
    out = _read_block(fh, name)
    if fh.read(1):
        raise FormatError(f"{name}: trailing bytes after tensor data")
    return out


def write_dense(path: str | os.PathLike, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_block(fh, x)


def read_dense(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        out = _read_block(fh, str(path))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor data")
    return out


def write_tt(path: str | os.PathLike, tt: TTTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", tt.order))
        fh.write(struct.pack(f"<{tt.order - 1}Q", *tt.ranks))
        for f in tt.factors:
            _write_block(fh, f)


def read_tt(path: str | os.PathLike) -> TTTensor:
    name = str(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == MAGIC:
            raise FormatError(f"{name}: dense DTF1 tensor where a TT model was expected")
        if len(head) != 4:
            raise FormatError(f"{name}: truncated data (wanted 4 bytes, got {len(head)})")
        (order,) = struct.unpack("<I", head)
        if order < 1:
            raise FormatError(f"{name}: order must be at least 1")
        ranks = struct.unpack(f"<{order - 1}Q", _read_exact(fh, 8 * (order - 1), name))
        cores = [_read_block(fh, name) for _ in range(order)]
        if fh.read(1):
            raise FormatError(f"{name}: trailing bytes after TT cores")
    full = (1,) + tuple(ranks) + (1,)
    for k, c in enumerate(cores):
        if c.ndim != 3 or c.shape[0] != full[k] or c.shape[2] != full[k + 1]:
            raise FormatError(f"{name}: core {k} of shape {c.shape} inconsistent with ranks {ranks}")
    return TTTensor(cores)


def write_problem(directory: str | os.PathLike, problem, noise_variance: float = 0.0, seed: int | None = None) -> Path:
    """Store a problem as ``covariates.dtf``, ``responses.dtf`` and ``problem.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_dense(d / "covariates.dtf", problem.covariates)
    write_dense(d / "responses.dtf", problem.responses)
    meta = {
        "n_covariate_modes": problem.n_covariate_modes,
        "n_response_modes": problem.n_response_modes,
        "noise_variance": float(noise_variance),
        "seed": seed,
    }
    (d / "problem.json").write_text(json.dumps(meta, indent=2) + "\n")
    return d


def read_problem(directory: str | os.PathLike):
    from .tot_model import TotProblem

    d = Path(directory)
    meta = json.loads((d / "problem.json").read_text())
    return TotProblem(
        read_dense(d / "covariates.dtf"),
        read_dense(d / "responses.dtf"),
        int(meta["n_covariate_modes"]),
        int(meta["n_response_modes"]),
    ), meta
