import itertools

import numpy as np
import pytest

from ttot import TTTensor


def random_cores(rng, dims, ranks):
    full = (1,) + tuple(ranks) + (1,)
    return [rng.standard_normal((full[k], d, full[k + 1])) for k, d in enumerate(dims)]


def random_tt(rng, dims, ranks):
    return TTTensor(random_cores(rng, dims, ranks))


def loop_dense(cores):
    """Entry-by-entry product of core slices."""
    dims = tuple(c.shape[1] for c in cores)
    out = np.empty(dims)
    for idx in itertools.product(*(range(d) for d in dims)):
        mat = np.eye(1)
        for c, s in zip(cores, idx):
            mat = mat @ c[:, s, :]
        out[idx] = mat[0, 0]
    return out


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
