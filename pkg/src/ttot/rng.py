"""Portable, seedable random streams.

All randomness in the package flows through :func:`stream`, which wraps
numpy's Philox counter-based bit generator.  Philox output is specified
bit-for-bit independently of platform, so fixtures and experiment traces
reproduce across machines.  Gaussian draws use the Box--Muller transform on
the stream's uniform doubles rather than numpy's ziggurat sampler, so the
normal variates are a documented function of the uniform stream.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "substream", "uniform", "gaussian"]


def stream(seed: int) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def substream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator derived from ``(seed, *index)``.

    Used to give each Monte-Carlo trial its own stream, so results do not
    depend on execution order.
    """
    entropy = [int(seed)] + [int(i) for i in index]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.random(shape)


def gaussian(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Standard normal draws via Box--Muller, optionally scaled."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(k) for k in shape)
    n = int(np.prod(shape, dtype=np.int64))
    half = (n + 1) // 2
    u = rng.random(2 * half)
    # 1 - u lies in (0, 1], keeping the log finite
    radius = np.sqrt(-2.0 * np.log1p(-u[:half]))
    angle = 2.0 * np.pi * u[half:]
    z = np.empty(2 * half)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    out = z[:n].reshape(shape)
    if scale != 1.0:
        out = out * scale
    return out
