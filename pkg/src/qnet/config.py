"""JSON network files.

Schema (unknown keys are rejected)::

    {
      "nodes":  [{"name": str, "lambda": float, "mu_exit": float}, ...],
      "links":  [{"from": str, "to": str, "mu": float,
                  "f": float = 1.0, "block": str = "ALWAYS_UP",
                  "bidirectional": bool = false}, ...],
      "blocks": [{"name": str, "q_down_to_up": float, "q_up_to_down": float}, ...],
      "initial": {"counts": [int, ...] = zeros,
                  "background": "stationary" | {block name: "up" | "down"}},
      "run": {"N": int = 1, "alpha": float = 1.0}
    }

``links``, ``blocks``, ``initial`` and ``run`` may be omitted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (ALWAYS_UP, BlockSpec, LinkSpec, Network, NetworkSpec, NodeSpec,
                    ValidationError, validate)
from .moments import STATIONARY


class ConfigError(ValueError):
    """A configuration file that cannot be parsed or violates the schema."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class RunConfig:
    net: Network
    m0: tuple[int, ...]
    k0: int | str
    """Background state index or ``"stationary"``."""
    N: int = 1
    alpha: float = 1.0


_TOP = {"nodes", "links", "blocks", "initial", "run"}
_NODE = {"name", "lambda", "mu_exit"}
_LINK = {"from", "to", "mu", "f", "block", "bidirectional"}
_BLOCK = {"name", "q_down_to_up", "q_up_to_down"}
_INITIAL = {"counts", "background"}
_RUN = {"N", "alpha"}


def _obj(value, where, allowed, required=()):
    if not isinstance(value, dict):
        raise ConfigError(where, "expected an object")
    extra = sorted(set(value) - allowed)
    if extra:
        raise ConfigError(where, f"unknown key(s) {', '.join(map(repr, extra))}")
    for key in required:
        if key not in value:
            raise ConfigError(where, f"missing key {key!r}")
    return value


def _num(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    return float(value)


def _str(value, where) -> str:
    if not isinstance(value, str):
        raise ConfigError(where, f"expected a string, got {value!r}")
    return value


def _list(value, where) -> list:
    if not isinstance(value, list):
        raise ConfigError(where, "expected a list")
    return value


def parse_spec(doc) -> tuple[NetworkSpec, dict]:
    doc = _obj(doc, "$", _TOP, ("nodes",))
    nodes = []
    for i, nd in enumerate(_list(doc["nodes"], "nodes")):
        w = f"nodes[{i}]"
        nd = _obj(nd, w, _NODE, ("name", "lambda", "mu_exit"))
        nodes.append(NodeSpec(_str(nd["name"], w + ".name"), _num(nd["lambda"], w + ".lambda"),
                              _num(nd["mu_exit"], w + ".mu_exit")))
    links = []
    for i, ln in enumerate(_list(doc.get("links", []), "links")):
        w = f"links[{i}]"
        ln = _obj(ln, w, _LINK, ("from", "to", "mu"))
        src, dst = _str(ln["from"], w + ".from"), _str(ln["to"], w + ".to")
        f = _num(ln.get("f", 1.0), w + ".f")
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"{w}.f", f"f = {f} outside [0, 1] on link {src} -> {dst}")
        bidir = ln.get("bidirectional", False)
        if not isinstance(bidir, bool):
            raise ConfigError(w + ".bidirectional", "expected true or false")
        links.append(LinkSpec(src, dst, _num(ln["mu"], w + ".mu"), f,
                              _str(ln.get("block", ALWAYS_UP), w + ".block"), bidir))
    blocks = []
    for i, b in enumerate(_list(doc.get("blocks", []), "blocks")):
        w = f"blocks[{i}]"
        b = _obj(b, w, _BLOCK, ("name", "q_down_to_up", "q_up_to_down"))
        blocks.append(BlockSpec(_str(b["name"], w + ".name"),
                                _num(b["q_down_to_up"], w + ".q_down_to_up"),
                                _num(b["q_up_to_down"], w + ".q_up_to_down")))
    return NetworkSpec(tuple(nodes), tuple(links), tuple(blocks)), doc


def _initial(doc, net: Network) -> tuple[tuple[int, ...], int | str]:
    ini = _obj(doc.get("initial", {}), "initial", _INITIAL)
    counts = ini.get("counts", [0] * net.n)
    _list(counts, "initial.counts")
    if len(counts) != net.n:
        raise ConfigError("initial.counts", f"expected {net.n} entries")
    for i, c in enumerate(counts):
        if isinstance(c, bool) or not isinstance(c, int) or c < 0:
            raise ConfigError(f"initial.counts[{i}]", f"expected a nonnegative integer, got {c!r}")
    bg = ini.get("background", STATIONARY)
    if bg == STATIONARY:
        return tuple(counts), STATIONARY
    bg = _obj(bg, "initial.background", set(net.block_names), net.block_names)
    x = 0
    for b, name in enumerate(net.block_names):
        v = bg[name]
        if v not in ("up", "down"):
            raise ConfigError(f"initial.background.{name}", f"expected 'up' or 'down', got {v!r}")
        if v == "up":
            x |= 1 << (net.K - 1 - b)
    return tuple(counts), x


def _run(doc) -> tuple[int, float]:
    run = _obj(doc.get("run", {}), "run", _RUN)
    N = run.get("N", 1)
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ConfigError("run.N", f"expected an integer >= 1, got {N!r}")
    alpha = _num(run.get("alpha", 1.0), "run.alpha")
    if alpha < 0:
        raise ConfigError("run.alpha", "must be >= 0")
    return N, alpha


def load_config(doc) -> RunConfig:
    spec, doc = parse_spec(doc)
    try:
        net = validate(spec)
    except ValidationError as exc:
        raise ConfigError(exc.code, str(exc)) from exc
    m0, k0 = _initial(doc, net)
    N, alpha = _run(doc)
    return RunConfig(net, m0, k0, N, alpha)


def parse_config(path) -> RunConfig:
    """Read and validate a network file; errors carry a line or field location."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    return load_config(doc)


def network_document(net: Network, m0=None, k0=STATIONARY, run: dict | None = None) -> dict:
    """Inverse of :func:`load_config`; bidirectional pairs are written back as such."""
    pairs = {tuple(p) for p in net.bidirectional_pairs}
    links = []
    for i, j in net.links():
        if (j, i) in pairs:
            continue
        b = int(net.link_block[i, j])
        item = {"from": net.names[i], "to": net.names[j], "mu": float(net.mu[i, j]),
                "f": float(net.f[i, j]), "block": ALWAYS_UP if b < 0 else net.block_names[b]}
        if (i, j) in pairs:
            item["bidirectional"] = True
        links.append(item)
    doc = {
        "nodes": [{"name": nm, "lambda": float(l), "mu_exit": float(m)}
                  for nm, l, m in zip(net.names, net.lam, net.mu_exit)],
        "links": links,
        "blocks": [{"name": nm, "q_down_to_up": float(a), "q_up_to_down": float(d)}
                   for nm, a, d in zip(net.block_names, net.q_up, net.q_down)],
    }
    initial = {}
    if m0 is not None and np.any(m0):
        initial["counts"] = [int(c) for c in m0]
    if k0 != STATIONARY:
        up = net.block_up()[int(k0)]
        initial["background"] = {nm: "up" if u else "down" for nm, u in zip(net.block_names, up)}
    if initial:
        doc["initial"] = initial
    if run:
        doc["run"] = run
    return doc
