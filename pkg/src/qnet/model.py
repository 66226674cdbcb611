"""Network description: nodes, directed links, link blocks, and per-state rates.

Nodes are indexed from 0 internally.  A link ``(i, j)`` carries a routing rate
``mu`` (the rate at which a customer at ``i`` wishes to move to ``j``), a loss
probability ``f`` applied when the link is down, and the block whose up/down
status it follows.  Links bound to :data:`ALWAYS_UP` never fail.

Background states are encoded as integers ``0 .. 2**K - 1``; block ``b``
(0-based) is up in state ``x`` iff bit ``K - 1 - b`` of ``x`` is set, so block
0 is the most significant bit.  This matches the ordering of the Kronecker sum
``sum_b I_{2^b} (x) Q_b (x) I_{2^(K-1-b)}``.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

ALWAYS_UP = "ALWAYS_UP"

MAX_BLOCKS = 16
SOFT_STATE_LIMIT = 100_000

# sentinel codes used in ``Network.link_block``
_NO_LINK = -2
_ALWAYS_UP_CODE = -1


class ValidationError(ValueError):
    """Raised when a network description violates a model assumption.

    The ``code`` attribute names the violation (``negative-rate``,
    ``f-range``, ``missing-block``, ``no-exit``, ``unreachable-exit``,
    ``too-many-blocks``, ``duplicate-link``, ``self-loop``, ``bad-node``,
    ``bad-block``).
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class NodeSpec:
    name: str
    lam: float = 0.0
    mu_exit: float = 0.0


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    mu: float
    f: float = 1.0
    block: str = ALWAYS_UP
    bidirectional: bool = False


@dataclass(frozen=True)
class BlockSpec:
    name: str
    q_up: float
    """Rate of the down -> up transition (inverse mean down-time)."""
    q_down: float
    """Rate of the up -> down transition (inverse mean up-time)."""


@dataclass(frozen=True)
class NetworkSpec:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...] = ()
    blocks: tuple[BlockSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "blocks", tuple(self.blocks))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """A validated network.  Immutable; build it with :func:`validate`.

    Attributes
    ----------
    names : tuple of str
        Node names, in index order.
    lam : (n,) ndarray
        External Poisson arrival rates.
    mu_exit : (n,) ndarray
        Rates ``mu_i0`` at which a customer leaves the network from node i.
    mu : (n, n) ndarray
        Routing rates ``mu_ij``; zero on the diagonal and for absent links.
    f : (n, n) ndarray
        Loss probabilities used when the link is down.
    link_block : (n, n) int ndarray
        Block index of each link, -1 for always-up links, -2 for no link.
    block_names : tuple of str
    q_up, q_down : (K,) ndarray
        Per-block down->up and up->down rates.
    """

    names: tuple[str, ...]
    lam: np.ndarray
    mu_exit: np.ndarray
    mu: np.ndarray
    f: np.ndarray
    link_block: np.ndarray
    block_names: tuple[str, ...]
    q_up: np.ndarray
    q_down: np.ndarray
    bidirectional_pairs: frozenset = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def K(self) -> int:
        return len(self.block_names)

    @property
    def state_count(self) -> int:
        return 2 ** self.K

    @property
    def nu(self) -> np.ndarray:
        """Total routing rate ``nu_i = sum_j mu_ij``."""
        return self.mu.sum(axis=1)

    @property
    def mu_total(self) -> np.ndarray:
        """Total service rate ``mu_i = mu_i0 + nu_i``."""
        return self.mu_exit + self.nu

    @property
    def lam_total(self) -> float:
        return float(self.lam.sum())

    def routing_probabilities(self) -> np.ndarray:
        """``(n, n+1)`` matrix with the exit probability in column 0."""
        rates = np.column_stack([self.mu_exit, self.mu])
        tot = self.mu_total
        out = np.zeros_like(rates)
        pos = tot > 0
        out[pos] = rates[pos] / tot[pos, None]
        return out

    def links(self) -> list[tuple[int, int]]:
        """Declared directed links (positive or zero rate), row-major order."""
        ii, jj = np.nonzero(self.link_block != _NO_LINK)
        return list(zip(ii.tolist(), jj.tolist()))

    def index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.n:
                raise IndexError(f"node index {name} out of range")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown node {name!r}") from None

    def block_up(self) -> np.ndarray:
        """``(2**K, K)`` boolean matrix: block b up in background state x."""
        return block_status(self.K)

    def indicator(self) -> np.ndarray:
        """``(2**K, n, n)`` link-up indicators; always-up and absent links give 1."""
        up = self.block_up()
        ind = np.ones((self.state_count, self.n, self.n))
        for b in range(self.K):
            mask = self.link_block == b
            ind[:, mask] = up[:, b, None].astype(float)
        return ind

    def to_spec(self) -> NetworkSpec:
        """Re-serialize as directed links (bidirectional pairs are kept expanded)."""
        nodes = tuple(NodeSpec(nm, float(l), float(m))
                      for nm, l, m in zip(self.names, self.lam, self.mu_exit))
        links = []
        for i, j in self.links():
            b = int(self.link_block[i, j])
            links.append(LinkSpec(self.names[i], self.names[j], float(self.mu[i, j]),
                                  float(self.f[i, j]),
                                  ALWAYS_UP if b < 0 else self.block_names[b]))
        blocks = tuple(BlockSpec(nm, float(a), float(d))
                       for nm, a, d in zip(self.block_names, self.q_up, self.q_down))
        return NetworkSpec(nodes, tuple(links), blocks)

    def equals(self, other: "Network") -> bool:
        return (self.names == other.names and self.block_names == other.block_names
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("lam", "mu_exit", "mu", "f", "link_block",
                                  "q_up", "q_down")))

    def with_scaling(self, N: float = 1.0, alpha: float = 0.0) -> "Network":
        """Copy with arrivals scaled by ``N`` and block rates by ``N**alpha``."""
        s = float(N) ** alpha
        return Network(self.names, _frozen(self.lam * N), self.mu_exit, self.mu, self.f,
                       self.link_block, self.block_names, _frozen(self.q_up * s),
                       _frozen(self.q_down * s), self.bidirectional_pairs)


def block_status(K: int) -> np.ndarray:
    """``(2**K, K)`` boolean matrix of block statuses under the fixed encoding."""
    x = np.arange(2 ** K)[:, None]
    shifts = (K - 1 - np.arange(K))[None, :]
    return ((x >> shifts) & 1).astype(bool)


def _check_rate(value, what):
    if not np.isfinite(value) or value < 0:
        raise ValidationError("negative-rate", f"{what} must be finite and >= 0, got {value}")


def validate(spec: NetworkSpec | Network) -> Network:
    """Check every model assumption and return the normalized network.

    Bidirectional links are expanded into two directed links bound to the same
    block.  Passing an already validated :class:`Network` re-validates its
    serialized form, so the call is idempotent.
    """
    if isinstance(spec, Network):
        spec = spec.to_spec()

    names = [nd.name for nd in spec.nodes]
    if len(set(names)) != len(names):
        raise ValidationError("bad-node", "duplicate node names")
    if not names:
        raise ValidationError("bad-node", "network has no nodes")
    pos = {nm: i for i, nm in enumerate(names)}
    n = len(names)

    block_names = [b.name for b in spec.blocks]
    if len(set(block_names)) != len(block_names) or ALWAYS_UP in block_names:
        raise ValidationError("bad-block", "duplicate or reserved block names")
    K = len(block_names)
    if K > MAX_BLOCKS:
        raise ValidationError("too-many-blocks", f"K = {K} exceeds the cap of {MAX_BLOCKS}")
    for b in spec.blocks:
        _check_rate(b.q_up, f"block {b.name}: q_down_to_up")
        _check_rate(b.q_down, f"block {b.name}: q_up_to_down")
        if b.q_up <= 0 or b.q_down <= 0:
            raise ValidationError("negative-rate",
                                  f"block {b.name}: both transition rates must be > 0")
    bpos = {nm: k for k, nm in enumerate(block_names)}

    lam = np.zeros(n)
    mu_exit = np.zeros(n)
    for i, nd in enumerate(spec.nodes):
        _check_rate(nd.lam, f"node {nd.name}: lambda")
        _check_rate(nd.mu_exit, f"node {nd.name}: mu_exit")
        lam[i], mu_exit[i] = nd.lam, nd.mu_exit

    mu = np.zeros((n, n))
    f = np.zeros((n, n))
    link_block = np.full((n, n), _NO_LINK, dtype=np.int64)
    pairs = set()
    for ln in spec.links:
        label = f"link {ln.src}->{ln.dst}"
        if ln.src not in pos or ln.dst not in pos:
            raise ValidationError("bad-node", f"{label}: unknown node")
        if ln.src == ln.dst:
            raise ValidationError("self-loop", f"{label}: from and to must differ")
        _check_rate(ln.mu, f"{label}: mu")
        if not (0.0 <= ln.f <= 1.0):
            raise ValidationError("f-range", f"{label}: f = {ln.f} outside [0, 1]")
        if ln.block == ALWAYS_UP or ln.block is None:
            code = _ALWAYS_UP_CODE
        elif ln.block in bpos:
            code = bpos[ln.block]
        else:
            raise ValidationError("missing-block", f"{label}: unknown block {ln.block!r}")
        i, j = pos[ln.src], pos[ln.dst]
        directed = [(i, j), (j, i)] if ln.bidirectional else [(i, j)]
        for a, b in directed:
            if link_block[a, b] != _NO_LINK:
                raise ValidationError("duplicate-link",
                                      f"link {names[a]}->{names[b]} declared twice")
            mu[a, b], f[a, b], link_block[a, b] = ln.mu, ln.f, code
        if ln.bidirectional:
            pairs.add((min(i, j), max(i, j)))

    if not np.any(mu_exit > 0):
        raise ValidationError("no-exit", "at least one node needs mu_exit > 0")

    # every node that serves must be able to reach an exit through positive-rate links
    can_exit = mu_exit > 0
    queue = deque(np.nonzero(can_exit)[0].tolist())
    while queue:
        j = queue.popleft()
        for i in np.nonzero(mu[:, j] > 0)[0]:
            if not can_exit[i]:
                can_exit[i] = True
                queue.append(int(i))
    mu_total = mu_exit + mu.sum(axis=1)
    bad = [names[i] for i in range(n) if mu_total[i] > 0 and not can_exit[i]]
    if bad:
        raise ValidationError("unreachable-exit",
                              f"no exit reachable from node(s) {', '.join(bad)}")
    idle = [names[i] for i in range(n) if mu_total[i] == 0]
    if idle:
        warnings.warn(f"node(s) {', '.join(idle)} have no service; customers accumulate",
                      RuntimeWarning, stacklevel=2)
    if n * 2 ** K > SOFT_STATE_LIMIT:
        warnings.warn(f"n * 2**K = {n * 2 ** K} is large for dense linear algebra",
                      RuntimeWarning, stacklevel=2)

    lb = np.array(link_block)
    lb.setflags(write=False)
    return Network(tuple(names), _frozen(lam), _frozen(mu_exit), _frozen(mu), _frozen(f), lb,
                   tuple(block_names),
                   _frozen([b.q_up for b in spec.blocks]),
                   _frozen([b.q_down for b in spec.blocks]), frozenset(pairs))


def link_indicator(net: Network, i, j, k: int) -> int:
    """1 if the declared link ``i -> j`` is up in background state ``k``."""
    i, j = net.index(i), net.index(j)
    b = int(net.link_block[i, j])
    if b == _NO_LINK:
        raise KeyError(f"no declared link {net.names[i]}->{net.names[j]}")
    if not 0 <= k < net.state_count:
        raise IndexError(f"background state {k} out of range")
    if b == _ALWAYS_UP_CODE:
        return 1
    return int((k >> (net.K - 1 - b)) & 1)


@dataclass(frozen=True)
class RateBundle:
    """Per-customer event rates at one node in one background state."""

    jump: np.ndarray
    loss: float
    exit: float
    retry: float

    @property
    def total(self) -> float:
        return float(self.jump.sum()) + self.loss + self.exit + self.retry


def effective_rates(net: Network, i, k: int) -> RateBundle:
    i = net.index(i)
    if not 0 <= k < net.state_count:
        raise IndexError(f"background state {k} out of range")
    ind = net.indicator()[k, i]
    down = net.mu[i] * (1.0 - ind)
    return RateBundle(jump=net.mu[i] * ind,
                      loss=float((down * net.f[i]).sum()),
                      exit=float(net.mu_exit[i]),
                      retry=float((down * (1.0 - net.f[i])).sum()))


@dataclass(frozen=True)
class StateRates:
    """State-dependent rate tensors shared by the analytic modules.

    ``mu_plus[k, i, j]`` and ``mu_minus[k, i, j]`` split ``mu_ij`` into the up
    and down parts; ``loss[k, i]`` is the per-customer loss rate and
    ``decay[k, i]`` the rate at which a customer actually leaves node i
    (jump, loss, or exit; retries excluded).
    """

    mu_plus: np.ndarray
    mu_minus: np.ndarray
    loss: np.ndarray
    exit: np.ndarray
    decay: np.ndarray

    @property
    def exit_effective(self) -> np.ndarray:
        """``mu_i0k``: exit plus loss rate, ``(2**K, n)``."""
        return self.exit + self.loss


def state_rates(net: Network) -> StateRates:
    ind = net.indicator()
    mu_plus = ind * net.mu[None]
    mu_minus = (1.0 - ind) * net.mu[None]
    loss = (mu_minus * net.f[None]).sum(axis=2)
    exit_ = np.broadcast_to(net.mu_exit, loss.shape).copy()
    decay = mu_plus.sum(axis=2) + loss + exit_
    return StateRates(mu_plus, mu_minus, loss, exit_, decay)


def make_network(nodes: Sequence[tuple], links: Sequence[tuple] = (),
                 blocks: Sequence[tuple] = ()) -> Network:
    """Shorthand constructor from plain tuples.

    ``nodes``: ``(name, lam, mu_exit)``; ``links``: ``(src, dst, mu, f, block)``
    with an optional trailing ``bidirectional`` flag; ``blocks``:
    ``(name, q_up, q_down)``.
    """
    return validate(NetworkSpec(tuple(NodeSpec(*nd) for nd in nodes),
                                tuple(LinkSpec(*ln) for ln in links),
                                tuple(BlockSpec(*b) for b in blocks)))
