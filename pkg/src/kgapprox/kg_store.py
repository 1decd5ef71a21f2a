"""In-memory knowledge graph: TSV loading, indexing, bounded neighbourhoods
and a seeded synthetic generator.

Traversal is direction-agnostic: every edge is listed in the adjacency of
both endpoints, with its predicate kept for similarity scoring.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DanglingEdge,
    DuplicateNodeId,
    InfeasibleSpec,
    MalformedLine,
    NoMappingNode,
    NonNumericAttribute,
)

NodeId = str
EdgeId = int


@dataclass(frozen=True)
class Node:
    id: NodeId
    name: str
    types: frozenset[str]
    attrs: Mapping[str, float] = field(default_factory=dict)

    def has_type(self, types: Iterable[str]) -> bool:
        return not self.types.isdisjoint(types)


@dataclass(frozen=True)
class Edge:
    id: EdgeId
    src: NodeId
    dst: NodeId
    predicate: str
    is_self_loop: bool = False

    def other(self, node: NodeId) -> NodeId:
        return self.dst if node == self.src else self.src


class KnowledgeGraph:
    """Immutable labelled multigraph ``G = (V, E, L, A)``.

    Build one with :func:`load_graph`, :func:`generate_synthetic_kg` or
    :meth:`from_records`; there are no mutators.
    """

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]) -> None:
        node_map: dict[NodeId, Node] = {}
        for node in nodes:
            if node.id in node_map:
                raise DuplicateNodeId(f"duplicate node id {node.id!r}")
            if not node.types:
                raise ValueError(f"node {node.id!r} has no type")
            node_map[node.id] = node

        name_index: dict[tuple[str, str], NodeId] = {}
        for node in node_map.values():
            for t in node.types:
                key = (node.name, t)
                if key in name_index:
                    raise DuplicateNodeId(
                        f"name {node.name!r} with type {t!r} used by both "
                        f"{name_index[key]!r} and {node.id!r}"
                    )
                name_index[key] = node.id

        adjacency: dict[NodeId, list[tuple[EdgeId, NodeId]]] = {nid: [] for nid in node_map}
        edge_list: list[Edge] = []
        for edge in edges:
            for end in (edge.src, edge.dst):
                if end not in node_map:
                    raise DanglingEdge(f"edge {edge.id} references unknown node {end!r}")
            edge_list.append(edge)
            adjacency[edge.src].append((edge.id, edge.dst))
            if edge.src != edge.dst:
                adjacency[edge.dst].append((edge.id, edge.src))

        self._nodes = MappingProxyType(node_map)
        self._edges = tuple(edge_list)
        self._edge_by_id = MappingProxyType({e.id: e for e in edge_list})
        if len(self._edge_by_id) != len(edge_list):
            raise ValueError("duplicate edge ids")
        self._adjacency = MappingProxyType({k: tuple(v) for k, v in adjacency.items()})
        self._name_index = MappingProxyType(name_index)

    @classmethod
    def from_records(
        cls,
        nodes: Iterable[tuple],
        edges: Iterable[tuple[NodeId, str, NodeId]],
        attrs: Mapping[NodeId, Mapping[str, float]] | None = None,
    ) -> "KnowledgeGraph":
        """Build from ``(id, name, types)`` and ``(src, predicate, dst)`` tuples."""
        attrs = attrs or {}
        node_objs = [
            Node(nid, name, frozenset([types] if isinstance(types, str) else types),
                 dict(attrs.get(nid, {})))
            for nid, name, types in nodes
        ]
        edge_objs = [Edge(i, s, d, p) for i, (s, p, d) in enumerate(edges)]
        return cls(node_objs, edge_objs)

    @property
    def nodes(self) -> Mapping[NodeId, Node]:
        return self._nodes

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self._edges

    @property
    def adjacency(self) -> Mapping[NodeId, tuple[tuple[EdgeId, NodeId], ...]]:
        return self._adjacency

    @property
    def name_index(self) -> Mapping[tuple[str, str], NodeId]:
        return self._name_index

    def node(self, nid: NodeId) -> Node:
        return self._nodes[nid]

    def edge(self, eid: EdgeId) -> Edge:
        return self._edge_by_id[eid]

    def degree(self, nid: NodeId) -> int:
        return len(self._adjacency[nid])

    def __len__(self) -> int:
        return len(self._nodes)

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"


# -- TSV IO ------------------------------------------------------------------


def _rows(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def _parse_number(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("non-finite")
    return value


def load_graph(
    nodes_path: str | os.PathLike,
    edges_path: str | os.PathLike,
    attrs_path: str | os.PathLike | None = None,
) -> KnowledgeGraph:
    """Load ``nodes.tsv``, ``edges.tsv`` and (optionally) ``attrs.tsv``.

    Edge ids are assigned in file order starting at 0.
    """
    raw_nodes: dict[NodeId, tuple[str, frozenset[str]]] = {}
    for row, cols in _rows(nodes_path):
        if len(cols) != 3 or not cols[0]:
            raise MalformedLine(str(nodes_path), row, "expected: node_id, name, types")
        nid, name, types = cols
        type_set = frozenset(t for t in types.split("|") if t)
        if not type_set:
            raise MalformedLine(str(nodes_path), row, "node has no type")
        if nid in raw_nodes:
            raise DuplicateNodeId(f"{nodes_path}:{row}: duplicate node id {nid!r}")
        raw_nodes[nid] = (name, type_set)

    attrs: dict[NodeId, dict[str, float]] = {nid: {} for nid in raw_nodes}
    if attrs_path is not None:
        for row, cols in _rows(attrs_path):
            if len(cols) != 3:
                raise MalformedLine(str(attrs_path), row, "expected: node_id, attr, value")
            nid, attr, value = cols
            if nid not in raw_nodes:
                raise MalformedLine(str(attrs_path), row, f"unknown node {nid!r}")
            try:
                attrs[nid][attr] = _parse_number(value)
            except ValueError:
                raise NonNumericAttribute(
                    f"{attrs_path}:{row}: attribute {attr!r} of {nid!r} is not a finite number: {value!r}"
                ) from None

    edges: list[Edge] = []
    for row, cols in _rows(edges_path):
        if len(cols) != 3 or not cols[0] or not cols[2]:
            raise MalformedLine(str(edges_path), row, "expected: src_id, predicate, dst_id")
        src, pred, dst = cols
        for end in (src, dst):
            if end not in raw_nodes:
                raise DanglingEdge(f"{edges_path}:{row}: unknown node {end!r}")
        edges.append(Edge(len(edges), src, dst, pred))

    nodes = [Node(nid, name, types, attrs[nid]) for nid, (name, types) in raw_nodes.items()]
    return KnowledgeGraph(nodes, edges)


def _fmt_number(value: float) -> str:
    return repr(float(value))


def write_graph(g: KnowledgeGraph, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write the three TSV files into ``out_dir``; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.tsv") for k in ("nodes", "edges", "attrs")}
    with open(paths["nodes"], "w", encoding="utf-8") as fh:
        for node in g.nodes.values():
            fh.write(f"{node.id}\t{node.name}\t{'|'.join(sorted(node.types))}\n")
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for e in g.edges:
            if not e.is_self_loop:
                fh.write(f"{e.src}\t{e.predicate}\t{e.dst}\n")
    with open(paths["attrs"], "w", encoding="utf-8") as fh:
        for node in g.nodes.values():
            for attr, value in sorted(node.attrs.items()):
                fh.write(f"{node.id}\t{attr}\t{_fmt_number(value)}\n")
    return paths


# -- lookup and neighbourhoods -------------------------------------------------


def resolve_specific_node(g: KnowledgeGraph, name: str, types: Iterable[str]) -> NodeId:
    """Return the node whose name is ``name`` and whose types meet ``types``."""
    for t in sorted(set(types)):
        nid = g.name_index.get((name, t))
        if nid is not None:
            return nid
    raise NoMappingNode(f"no node named {name!r} with any type in {sorted(set(types))}")


@dataclass(frozen=True)
class BoundedRegion:
    anchor: NodeId
    hop_limit: int
    members: frozenset[NodeId]
    candidates: tuple[NodeId, ...]
    depth: Mapping[NodeId, int] = field(repr=False, compare=False, default_factory=dict)

    @property
    def candidate_count(self) -> int:
        return len(self.candidates)


def bounded_region(
    g: KnowledgeGraph, anchor: NodeId, n: int, target_types: Iterable[str]
) -> BoundedRegion:
    """BFS ball of radius ``n`` around ``anchor``.

    Candidates are the members (anchor excluded) sharing a type with
    ``target_types``, sorted by id.
    """
    if n < 1:
        raise ValueError(f"hop limit must be >= 1, got {n}")
    if anchor not in g.nodes:
        raise KeyError(anchor)
    target = frozenset(target_types)
    depth = {anchor: 0}
    queue = deque([anchor])
    while queue:
        u = queue.popleft()
        if depth[u] == n:
            continue
        for _, v in g.adjacency[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    candidates = tuple(sorted(
        v for v in depth if v != anchor and g.nodes[v].has_type(target)
    ))
    return BoundedRegion(anchor, n, frozenset(depth), candidates, MappingProxyType(depth))


# -- synthetic generator -----------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters for :func:`generate_synthetic_kg`.

    ``predicates`` maps each predicate of the vocabulary to its similarity
    against ``query_predicate``; the same table drives the emitted
    similarity file. With ``layout="hub"`` the first node of
    ``anchor_type`` is linked to every ``hub_type`` node and each
    ``target_type`` node is linked to ``links_per_target`` random hubs;
    the remaining edge budget is spent on uniformly random noise edges.
    """

    node_types: Mapping[str, int]
    predicates: Mapping[str, float]
    edge_count: int
    attr_ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    attr_types: tuple[str, ...] = ()
    missing_attr_rate: float = 0.0
    multiplicity_cap: int = 1
    query_predicate: str = "query"
    layout: str = "random"
    anchor_type: str | None = None
    anchor_name: str | None = None
    hub_type: str | None = None
    target_type: str | None = None
    links_per_target: tuple[int, int] = (1, 2)
    direct_link_rate: float = 0.0

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorSpec":
        data = dict(data)
        for key in ("links_per_target",):
            if key in data:
                data[key] = tuple(data[key])
        if "attr_ranges" in data:
            data["attr_ranges"] = {k: tuple(v) for k, v in data["attr_ranges"].items()}
        if "attr_types" in data:
            data["attr_types"] = tuple(data["attr_types"])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "node_types": dict(self.node_types),
            "predicates": dict(self.predicates),
            "edge_count": self.edge_count,
            "attr_ranges": {k: list(v) for k, v in self.attr_ranges.items()},
            "attr_types": list(self.attr_types),
            "missing_attr_rate": self.missing_attr_rate,
            "multiplicity_cap": self.multiplicity_cap,
            "query_predicate": self.query_predicate,
            "layout": self.layout,
            "anchor_type": self.anchor_type,
            "anchor_name": self.anchor_name,
            "hub_type": self.hub_type,
            "target_type": self.target_type,
            "links_per_target": list(self.links_per_target),
            "direct_link_rate": self.direct_link_rate,
        }

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GeneratorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def generate_synthetic_kg(spec: GeneratorSpec, seed: int) -> KnowledgeGraph:
    """Deterministic random KG for a given ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    preds = sorted(spec.predicates)
    if not preds and spec.edge_count:
        raise InfeasibleSpec("edges requested but predicate vocabulary is empty")
    if spec.multiplicity_cap < 1:
        raise InfeasibleSpec("multiplicity_cap must be >= 1")

    ids: list[NodeId] = []
    names: list[str] = []
    types: list[str] = []
    for t in sorted(spec.node_types):
        for k in range(spec.node_types[t]):
            ids.append(f"n{len(ids)}")
            names.append(f"{t}_{k}")
            types.append(t)
    total = len(ids)
    by_type: dict[str, list[int]] = {}
    for i, t in enumerate(types):
        by_type.setdefault(t, []).append(i)

    if spec.layout == "hub" and spec.anchor_name:
        names[by_type[spec.anchor_type][0]] = spec.anchor_name

    # attributes
    attr_types = set(spec.attr_types) if spec.attr_types else set(spec.node_types)
    attrs: dict[NodeId, dict[str, float]] = {nid: {} for nid in ids}
    for attr in sorted(spec.attr_ranges):
        lo, hi = spec.attr_ranges[attr]
        for i in range(total):
            value = float(rng.uniform(lo, hi))
            missing = spec.missing_attr_rate > 0 and rng.random() < spec.missing_attr_rate
            if types[i] in attr_types and not missing:
                attrs[ids[i]][attr] = round(value, 4)

    pair_count: dict[tuple[int, int], int] = {}
    edges: list[tuple[NodeId, str, NodeId]] = []

    def add(a: int, b: int) -> bool:
        key = (min(a, b), max(a, b))
        if a == b or pair_count.get(key, 0) >= spec.multiplicity_cap:
            return False
        pair_count[key] = pair_count.get(key, 0) + 1
        edges.append((ids[a], preds[int(rng.integers(len(preds)))], ids[b]))
        return True

    if spec.layout == "hub":
        for key in ("anchor_type", "hub_type", "target_type"):
            if not getattr(spec, key) or not by_type.get(getattr(spec, key)):
                raise InfeasibleSpec(f"hub layout needs a populated {key}")
        anchor = by_type[spec.anchor_type][0]
        hubs = by_type[spec.hub_type]
        lo, hi = spec.links_per_target
        if lo < 1 or hi < lo or hi > len(hubs):
            raise InfeasibleSpec("links_per_target out of range")
        for h in hubs:
            add(anchor, h)
        for tgt in by_type[spec.target_type]:
            k = int(rng.integers(lo, hi + 1))
            for h in rng.choice(len(hubs), size=k, replace=False):
                add(hubs[int(h)], tgt)
            if spec.direct_link_rate > 0 and rng.random() < spec.direct_link_rate:
                add(anchor, tgt)
        if len(edges) > spec.edge_count:
            raise InfeasibleSpec(
                f"hub layout needs {len(edges)} structural edges, budget is {spec.edge_count}"
            )
    elif spec.layout != "random":
        raise InfeasibleSpec(f"unknown layout {spec.layout!r}")

    capacity = total * (total - 1) // 2 * spec.multiplicity_cap
    if spec.edge_count > capacity:
        raise InfeasibleSpec(
            f"{spec.edge_count} edges requested but only {capacity} pairs available"
        )
    while len(edges) < spec.edge_count:
        a, b = (int(x) for x in rng.integers(total, size=2))
        add(a, b)

    records = [(ids[i], names[i], types[i]) for i in range(total)]
    return KnowledgeGraph.from_records(records, edges, attrs)
