"""Interval multilevel Bayesian network over binary component/block/system states.

State 1 is normal, 0 is failed.  Root (component) nodes carry an interval
probability of being normal; every other node is a deterministic series or
parallel gate over its children.  Series and parallel maps are monotone
nondecreasing in every child probability, so evaluating them at the interval
endpoints gives the exact output interval, not just an enclosure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .reliability import ProbInterval

GATES = ("series", "parallel")
MAX_CPT_INPUTS = 20
MAX_ENUM_ROOTS = 20


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class BNNode:
    id: str
    gate: str | None = None
    children: tuple[str, ...] = ()
    prob: ProbInterval | None = None

    def __post_init__(self):
        if self.prob is not None:
            if self.gate is not None or self.children:
                raise NetworkError(f"root {self.id!r} cannot have a gate or children")
        else:
            if self.gate not in GATES:
                raise NetworkError(f"node {self.id!r} needs a gate in {GATES}")
            if not self.children:
                raise NetworkError(f"gate node {self.id!r} has no children")

    @property
    def is_root(self) -> bool:
        return self.prob is not None


@dataclass(frozen=True)
class BNGraph:
    nodes: Mapping[str, BNNode]
    system: str
    order: tuple[str, ...] = field(init=False, repr=False)  # children before parents

    def __post_init__(self):
        if self.system not in self.nodes:
            raise NetworkError(f"system node {self.system!r} missing")
        parent: dict[str, str] = {}
        for node in self.nodes.values():
            for c in node.children:
                if c not in self.nodes:
                    raise NetworkError(f"node {node.id!r} references unknown child {c!r}")
                if c in parent:
                    raise NetworkError(f"node {c!r} has two parents; only trees are supported")
                parent[c] = node.id
        for start in parent:
            seen, nid = {start}, start
            while nid in parent:
                nid = parent[nid]
                if nid in seen:
                    raise NetworkError(f"cycle detected at node {nid!r}")
                seen.add(nid)
        if self.system in parent:
            raise NetworkError(f"system node {self.system!r} must not have a parent")
        order: list[str] = []
        stack = [(self.system, False)]
        while stack:
            nid, expanded = stack.pop()
            if expanded:
                order.append(nid)
            else:
                stack.append((nid, True))
                stack.extend((c, False) for c in reversed(self.nodes[nid].children))
        unreachable = set(self.nodes) - set(order)
        if unreachable:
            raise NetworkError(f"nodes not connected to the system: {sorted(unreachable)}")
        object.__setattr__(self, "order", tuple(order))

    @property
    def roots(self) -> list[str]:
        return [nid for nid in self.order if self.nodes[nid].is_root]


# ------------------------------------------------------------------ closed forms


def _check(children: Sequence[ProbInterval]):
    if not children:
        raise ValueError("gate needs at least one child")


def series_interval(children: Sequence[ProbInterval]) -> ProbInterval:
    _check(children)
    return ProbInterval(float(np.prod([c.lo for c in children])),
                        float(np.prod([c.hi for c in children])))


def parallel_interval(children: Sequence[ProbInterval]) -> ProbInterval:
    _check(children)
    return ProbInterval(1.0 - float(np.prod([1.0 - c.lo for c in children])),
                        1.0 - float(np.prod([1.0 - c.hi for c in children])))


GATE_RULES = {"series": series_interval, "parallel": parallel_interval}


# ------------------------------------------------------------------ CPTs


@dataclass(frozen=True)
class CPT:
    """Rows in binary-counting order of the child states (first child is the high bit)."""

    states: np.ndarray  # (2^n, n) of 0/1
    probs: np.ndarray  # (2^n, 2): (Pr fail, Pr normal)

    def __len__(self):
        return len(self.states)


def cpt_for_gate(gate: str, n: int) -> CPT:
    if gate not in GATES:
        raise ValueError(f"unknown gate {gate!r}")
    if not 1 <= n <= MAX_CPT_INPUTS:
        raise ValueError(f"CPT size n={n} outside [1, {MAX_CPT_INPUTS}]")
    rows = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    states = ((rows[:, None] >> shifts) & 1).astype(np.int8)
    if gate == "series":
        normal = rows == 2**n - 1
    else:
        normal = rows != 0
    probs = np.stack([~normal, normal], axis=1).astype(np.float64)
    return CPT(states=states, probs=probs)


# ------------------------------------------------------------------ inference


def _check_evidence(graph: BNGraph, evidence: Mapping[str, int]):
    for nid, s in evidence.items():
        if nid not in graph.nodes:
            raise NetworkError(f"evidence on unknown node {nid!r}")
        if nid == graph.system:
            raise NetworkError("evidence on the system node is not allowed")
        if s not in (0, 1):
            raise NetworkError(f"evidence state for {nid!r} must be 0 or 1, got {s!r}")


def infer(graph: BNGraph, evidence: Mapping[str, int] | None = None) -> ProbInterval:
    """Interval Pr(system normal), evaluated bottom-up through the gates.

    A node under evidence is fixed to [s, s] and its subtree is not visited.
    """
    evidence = dict(evidence or {})
    _check_evidence(graph, evidence)
    value: dict[str, ProbInterval] = {}
    for nid in graph.order:
        if nid in evidence:
            s = float(evidence[nid])
            value[nid] = ProbInterval(s, s)
            continue
        node = graph.nodes[nid]
        if node.is_root:
            value[nid] = node.prob
        else:
            value[nid] = GATE_RULES[node.gate]([value[c] for c in node.children])
    return value[graph.system]


def brute_force_joint(graph: BNGraph, endpoint: str,
                      evidence: Mapping[str, int] | None = None) -> float:
    """Pr(system normal) at one interval endpoint by full enumeration of root states.

    Gate nodes are resolved by CPT row lookup.  Evidence is handled by
    conditioning: the joint is restricted to matching states and renormalized.
    """
    if endpoint not in ("lo", "hi"):
        raise ValueError("endpoint must be 'lo' or 'hi'")
    evidence = dict(evidence or {})
    _check_evidence(graph, evidence)
    roots = graph.roots
    r = len(roots)
    if r > MAX_ENUM_ROOTS:
        raise NetworkError(f"{r} roots exceed the enumeration limit {MAX_ENUM_ROOTS}")
    combos = np.arange(2**r, dtype=np.int64)
    state: dict[str, np.ndarray] = {}
    weight = np.ones(2**r)
    for j, nid in enumerate(roots):
        s = ((combos >> (r - 1 - j)) & 1).astype(bool)
        p = getattr(graph.nodes[nid].prob, endpoint)
        weight *= np.where(s, p, 1.0 - p)
        state[nid] = s
    for nid in graph.order:
        node = graph.nodes[nid]
        if node.is_root:
            continue
        n = len(node.children)
        cpt = cpt_for_gate(node.gate, n)
        row = np.zeros(2**r, dtype=np.int64)
        for c in node.children:
            row = (row << 1) | state[c]
        state[nid] = cpt.probs[row, 1] > 0.5
    keep = np.ones(2**r, dtype=bool)
    for nid, s in evidence.items():
        keep &= state[nid] == bool(s)
    z = weight[keep].sum()
    if z == 0:
        raise NetworkError("evidence has zero probability at this endpoint")
    return float(weight[keep & state[graph.system]].sum() / z)


def rank_intervals(results: Mapping[str, ProbInterval]) -> list[str]:
    """Keys ordered by descending midpoint, ties broken by narrower width.

    A reporting convention only; other interval orderings exist.
    """
    return sorted(results, key=lambda k: (-results[k].mid, results[k].width, k))


# ------------------------------------------------------------------ JSON


def load_network(source: str | Path | dict) -> BNGraph:
    """Read ``{nodes: [{id, gate, children} | {id, p_lo, p_hi}], system}``."""
    doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    if "nodes" not in doc:
        raise NetworkError("network document missing 'nodes'")
    nodes = {}
    for d in doc["nodes"]:
        nid = str(d["id"])
        if nid in nodes:
            raise NetworkError(f"duplicate node id {nid!r}")
        if "p_lo" in d or "p_hi" in d:
            nodes[nid] = BNNode(nid, prob=ProbInterval(float(d["p_lo"]), float(d["p_hi"])))
        else:
            nodes[nid] = BNNode(nid, gate=d.get("gate"),
                                children=tuple(str(c) for c in d.get("children", ())))
    return BNGraph(nodes=nodes, system=str(doc.get("system", "S")))


def network_to_dict(graph: BNGraph) -> dict:
    out = []
    for nid in graph.order:
        n = graph.nodes[nid]
        if n.is_root:
            out.append({"id": nid, "p_lo": n.prob.lo, "p_hi": n.prob.hi})
        else:
            out.append({"id": nid, "gate": n.gate, "children": list(n.children)})
    return {"nodes": out, "system": graph.system}
