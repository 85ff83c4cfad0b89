"""Shared builders for the test suite."""

import numpy as np
import pytest

from adawass import build_process, chain_process


def epsilon_x():
    """Two-step process: zero first, then a fair +-1 step revealed at time 2."""
    return build_process([1, 1], [
        (1.0, 0.0, [(0.5, -1.0, []), (0.5, 1.0, [])]),
    ])


def epsilon_y(eps):
    """Mirror process: the +-1 outcome is leaked at time 1 through +-eps."""
    return build_process([1, 1], [
        (0.5, -eps, [(1.0, -1.0, [])]),
        (0.5, +eps, [(1.0, +1.0, [])]),
    ])


def random_process(rng, depth=None, dims=None, max_branch=3, min_prob=0.1, value_scale=1.0):
    """Random valid scenario tree with per-node branching in 1..max_branch."""
    if depth is None:
        depth = int(rng.integers(1, 4))
    if dims is None:
        dims = tuple(int(rng.integers(1, 3)) for _ in range(depth))

    def spawn(t):
        if t > depth:
            return []
        k = int(rng.integers(1, max_branch + 1))
        raw = rng.uniform(min_prob, 1.0, size=k)
        probs = raw / raw.sum()
        return [
            (float(probs[i]),
             tuple((value_scale * rng.normal(size=dims[t - 1])).tolist()),
             spawn(t + 1))
            for i in range(k)
        ]

    return build_process(list(dims), spawn(1))


def random_pair(rng, depth=None, dims=None, max_branch=3, **kw):
    """Two shape-compatible random processes."""
    if depth is None:
        depth = int(rng.integers(1, 4))
    if dims is None:
        dims = tuple(int(rng.integers(1, 3)) for _ in range(depth))
    return (random_process(rng, depth, dims, max_branch, **kw),
            random_process(rng, depth, dims, max_branch, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def dirac_pair():
    return chain_process([1.0, 2.0]), chain_process([3.0, 5.0])
