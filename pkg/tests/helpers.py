"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from qnet.background import BackgroundChain
from qnet.model import ALWAYS_UP, make_network
from qnet.oracle import build_truncated, oracle_stationary

RANDOM_NET_SEED = 20240611


def random_network(rng: np.random.Generator):
    """A valid network with 2 or 3 nodes, 1 or 2 blocks and f in {0, 0.5, 1}."""
    n = int(rng.integers(2, 4))
    K = int(rng.integers(1, 3))
    names = [f"n{i}" for i in range(n)]
    nodes = [(nm, rng.uniform(0.1, 1.0), rng.uniform(0.5, 3.0)) for nm in names]
    blocks = [(f"b{b}", rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)) for b in range(K)]
    links = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.7:
                block = f"b{rng.integers(K)}" if K and rng.random() < 0.8 else ALWAYS_UP
                links.append((names[i], names[j], rng.uniform(0.1, 3.0),
                              float(rng.choice([0.0, 0.5, 1.0])), block))
    # make sure every block is used
    for b in range(K):
        if not any(ln[4] == f"b{b}" for ln in links):
            links = [ln for ln in links if (ln[0], ln[1]) != (names[0], names[1])]
            links.append((names[0], names[1], rng.uniform(0.1, 3.0),
                          float(rng.choice([0.0, 0.5, 1.0])), f"b{b}"))
    return make_network(nodes, links, blocks)


def random_networks(count: int = 5, seed: int = RANDOM_NET_SEED):
    rng = np.random.default_rng(seed)
    return [random_network(rng) for _ in range(count)]


def converged_oracle(net, boundary: float = 1e-12, start: int = 10):
    """Truncated chain whose stationary boundary mass is below ``boundary``."""
    chain = BackgroundChain.from_network(net)
    cap = start
    while True:
        tc = build_truncated(net, chain, (cap,) * net.n)
        dist = oracle_stationary(tc, check=False)
        if dist.boundary_mass < boundary:
            return tc, dist
        cap = int(cap * 1.5)
