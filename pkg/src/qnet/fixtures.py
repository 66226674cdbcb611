"""Builders for the standard network shapes and the shipped parameter sets."""

from __future__ import annotations

from importlib import resources

from .model import ALWAYS_UP, Network, make_network


def tandem(lam: float, mu1: float, mu2: float, q_up: float, q_down: float,
           f: float = 1.0) -> Network:
    """Two nodes in series; the link 1 -> 2 belongs to a single block."""
    return make_network(
        [("1", lam, 0.0), ("2", 0.0, mu2)],
        [("1", "2", mu1, f, "link")],
        [("link", q_up, q_down)],
    )


def symmetric_complete(n: int, lam: float, nu: float, mu0: float, q_up: float,
                       q_down: float, f: float = 1.0) -> Network:
    """Complete graph on ``n`` nodes, all links in one block.

    Each node routes at total rate ``nu`` split uniformly over the other nodes.
    """
    names = [str(i + 1) for i in range(n)]
    links = [(names[i], names[j], nu / (n - 1), f, "all", True)
             for i in range(n) for j in range(i + 1, n)]
    return make_network([(nm, lam, mu0) for nm in names], links,
                        [("all", q_up, q_down)])


def ring(n: int, lam: float, nu: float, mu0: float, q_up: float, q_down: float,
         f: float = 1.0) -> Network:
    """Directed ring ``1 -> 2 -> ... -> n -> 1``, all links in one block."""
    names = [str(i + 1) for i in range(n)]
    links = [(names[i], names[(i + 1) % n], nu, f, "all") for i in range(n)]
    return make_network([(nm, lam, mu0) for nm in names], links,
                        [("all", q_up, q_down)])


def fix_a() -> Network:
    """Single M/M/inf queue: lambda = 3, exit rate 1, no links."""
    return make_network([("1", 3.0, 1.0)])


def fix_b(f: float = 1.0) -> Network:
    """Unit-rate tandem; ``f = 0`` gives the retry variant."""
    return tandem(1.0, 1.0, 1.0, 1.0, 1.0, f)


def fix_c() -> Network:
    """Symmetric complete network, n = 3, lambda = 2, nu = 1, mu0 = 1, f = 1."""
    return symmetric_complete(3, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0)


FIX_D_Q_DOWN = (0.01, 0.5, 1.0, 3.0)


def fix_d(q_down: float = 1.0) -> Network:
    """Retry tandem with lambda = 20, mu1 = 3, mu2 = 2, q_up = 1."""
    return tandem(20.0, 3.0, 2.0, 1.0, q_down, f=0.0)


def fix_tandem_fclt(q_up: float = 30.0, q_down: float = 20.0) -> Network:
    """Retry tandem lambda = 25, mu1 = 10, mu2 = 20 used with N = 100."""
    return tandem(25.0, 10.0, 20.0, q_up, q_down, f=0.0)


def independent_pair() -> Network:
    """Two nodes joined by always-up links: a classical Jackson-type M/M/inf pair."""
    return make_network([("1", 1.0, 1.0), ("2", 0.5, 2.0)],
                        [("1", "2", 0.7, 1.0, ALWAYS_UP), ("2", "1", 0.4, 1.0, ALWAYS_UP)])


def data_path(name: str):
    """Path of a shipped JSON fixture (``fix_a.json`` and friends)."""
    return resources.files("qnet") / "data" / name
