"""Aggregate query model and its JSON wire format."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import jsonschema

from .errors import InvariantViolation, SchemaError

SHAPES = ("simple", "chain", "star", "cycle", "flower")
COMPOSITE_SHAPES = ("star", "cycle", "flower")
FUNCS = ("count", "sum", "avg", "max", "min")
BACKENDS = ("categorical", "walk")


@dataclass(frozen=True)
class EngineConfig:
    e_b: float = 0.01
    alpha: float = 0.05
    tau: float = 0.85
    n: int = 3
    r: int = 3
    lam: float = 0.3
    t: int = 3
    m: float = 0.6
    B: int = 100
    p_ss: float = 0.001
    eps_sim: float = 1e-4
    pi_tol: float = 1e-6
    max_walk_steps: int = 500
    max_iterations: int = 10
    seed: int | None = None
    extreme_sample_ratio: float = 0.05
    extreme_rounds: int = 8
    min_group_support: int = 5
    sampler_backend: str = "categorical"
    max_sample_size: int = 1_000_000

    # JSON key -> field name, for keys that are not valid identifiers
    ALIASES = {"lambda": "lam"}

    def __post_init__(self) -> None:
        checks = [
            (self.e_b > 0, "e_b must be > 0"),
            (0 < self.alpha < 1, "alpha must lie in (0, 1)"),
            (0 < self.tau <= 1, "tau must lie in (0, 1]"),
            (0.5 <= self.m <= 1, "m must lie in [0.5, 1]"),
            (0 < self.lam <= 1, "lambda must lie in (0, 1]"),
            (self.t >= 1, "t must be >= 1"),
            (self.B >= 2, "B must be >= 2"),
            (self.n >= 1, "n must be >= 1"),
            (self.r >= 1, "r must be >= 1"),
            (self.p_ss > 0, "p_ss must be > 0"),
            (0 < self.eps_sim <= 1, "eps_sim must lie in (0, 1]"),
            (self.pi_tol > 0, "pi_tol must be > 0"),
            (self.max_walk_steps >= 1, "max_walk_steps must be >= 1"),
            (self.max_iterations >= 1, "max_iterations must be >= 1"),
            (0 < self.extreme_sample_ratio <= 1, "extreme_sample_ratio must lie in (0, 1]"),
            (self.extreme_rounds >= 1, "extreme_rounds must be >= 1"),
            (self.max_sample_size >= 1, "max_sample_size must be >= 1"),
            (self.sampler_backend in BACKENDS, f"sampler_backend must be one of {BACKENDS}"),
        ]
        for ok, message in checks:
            if not ok:
                raise InvariantViolation(message)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EngineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = cls.ALIASES.get(key, key)
            if name not in names:
                raise SchemaError(f"config.{key}", "unknown configuration key")
            kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        inverse = {v: k for k, v in self.ALIASES.items()}
        return {inverse.get(f.name, f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    def replace(self, **changes: Any) -> "EngineConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Hop:
    types: frozenset[str]
    predicate: str


@dataclass(frozen=True)
class QueryGraph:
    """Path-shaped query: a named specific node followed by typed hops.

    One hop is a simple query; the last hop's types are the target types.
    """

    specific_name: str
    specific_types: frozenset[str]
    hops: tuple[Hop, ...]

    def __post_init__(self) -> None:
        if not self.specific_name:
            raise InvariantViolation("specific node name must be non-empty")
        if not self.specific_types:
            raise InvariantViolation("specific node types must be non-empty")
        if not self.hops:
            raise InvariantViolation("query graph needs at least one hop")
        for hop in self.hops:
            if not hop.types:
                raise InvariantViolation("every hop needs at least one type")

    @property
    def target_types(self) -> frozenset[str]:
        return self.hops[-1].types

    @property
    def predicate(self) -> str:
        return self.hops[0].predicate

    @property
    def is_simple(self) -> bool:
        return len(self.hops) == 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "specific": {"name": self.specific_name, "types": sorted(self.specific_types)},
            "hops": [{"types": sorted(h.types), "predicate": h.predicate} for h in self.hops],
        }


@dataclass(frozen=True)
class FilterSpec:
    attr: str
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise InvariantViolation(f"filter on {self.attr!r}: lower > upper")

    def admits(self, attrs: Mapping[str, float]) -> bool:
        value = attrs.get(self.attr)
        return value is not None and self.lower <= value <= self.upper

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"attr": self.attr}
        if self.lower != -math.inf:
            out["lower"] = self.lower
        if self.upper != math.inf:
            out["upper"] = self.upper
        return out


@dataclass(frozen=True)
class GroupSpec:
    """Group on an attribute, by exact value or by half-open buckets."""

    attr: str
    buckets: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.buckets is not None:
            if len(self.buckets) < 2:
                raise InvariantViolation("bucketed grouping needs at least two edges")
            if any(b >= a for a, b in zip(self.buckets[1:], self.buckets)):
                raise InvariantViolation("bucket edges must be strictly ascending")

    @property
    def mode(self) -> str:
        return "categorical" if self.buckets is None else "bucketed"

    def key(self, attrs: Mapping[str, float]) -> str | None:
        value = attrs.get(self.attr)
        if value is None:
            return None
        if self.buckets is None:
            return _fmt_key(value)
        edges = self.buckets
        for lo, hi in zip(edges, edges[1:]):
            if lo <= value < hi:
                return f"[{_fmt_key(lo)}, {_fmt_key(hi)})"
        return None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"attr": self.attr}
        if self.buckets is not None:
            out["buckets"] = list(self.buckets)
        return out


def _fmt_key(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


@dataclass(frozen=True)
class AggregateQuery:
    shape: str
    subqueries: tuple[QueryGraph, ...]
    func: str
    attr: str | None = None
    filters: tuple[FilterSpec, ...] = ()
    group_by: GroupSpec | None = None
    config: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise InvariantViolation(f"unknown shape {self.shape!r}")
        if self.func not in FUNCS:
            raise InvariantViolation(f"unknown aggregate {self.func!r}")
        if self.func != "count" and not self.attr:
            raise InvariantViolation(f"{self.func.upper()} requires an attribute")
        if self.shape in COMPOSITE_SHAPES:
            if len(self.subqueries) < 2:
                raise InvariantViolation(f"{self.shape} query needs >= 2 subqueries")
            targets = {sq.target_types for sq in self.subqueries}
            if len(targets) != 1:
                raise InvariantViolation("subqueries must share one target type set")
        elif len(self.subqueries) != 1:
            raise InvariantViolation(f"{self.shape} query takes exactly one subquery")
        if self.shape == "simple" and not self.subqueries[0].is_simple:
            raise InvariantViolation("simple query must have exactly one hop")

    @property
    def is_composite(self) -> bool:
        return self.shape in COMPOSITE_SHAPES

    @property
    def target_types(self) -> frozenset[str]:
        return self.subqueries[0].target_types

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "shape": self.shape,
            "subqueries": [sq.to_dict() for sq in self.subqueries],
            "func": self.func,
            "filters": [f.to_dict() for f in self.filters],
            "config": self.config.to_dict(),
        }
        if self.attr is not None:
            out["attr"] = self.attr
        if self.group_by is not None:
            out["group_by"] = self.group_by.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_STR_LIST = {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1}

QUERY_SCHEMA = {
    "type": "object",
    "required": ["shape", "subqueries", "func"],
    "additionalProperties": False,
    "properties": {
        "shape": {"enum": list(SHAPES)},
        "func": {"enum": list(FUNCS)},
        "attr": {"type": ["string", "null"]},
        "subqueries": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["specific", "hops"],
                "additionalProperties": False,
                "properties": {
                    "specific": {
                        "type": "object",
                        "required": ["name", "types"],
                        "additionalProperties": False,
                        "properties": {"name": {"type": "string"}, "types": _STR_LIST},
                    },
                    "hops": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["types", "predicate"],
                            "additionalProperties": False,
                            "properties": {
                                "types": _STR_LIST,
                                "predicate": {"type": "string", "minLength": 1},
                            },
                        },
                    },
                },
            },
        },
        "filters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["attr"],
                "additionalProperties": False,
                "properties": {
                    "attr": {"type": "string", "minLength": 1},
                    "lower": {"type": ["number", "null"]},
                    "upper": {"type": ["number", "null"]},
                },
            },
        },
        "group_by": {
            "type": ["object", "null"],
            "required": ["attr"],
            "additionalProperties": False,
            "properties": {
                "attr": {"type": "string", "minLength": 1},
                "buckets": {"type": ["array", "null"], "items": {"type": "number"}},
            },
        },
        "config": {"type": "object"},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(QUERY_SCHEMA)


def parse_query(json_text: str | bytes | Mapping[str, Any]) -> AggregateQuery:
    """Parse and validate a query document (text or already-decoded dict)."""
    if isinstance(json_text, Mapping):
        doc = json_text
    else:
        try:
            doc = json.loads(json_text)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path)
        raise SchemaError(path, err.message)

    subqueries = tuple(
        QueryGraph(
            sq["specific"]["name"],
            frozenset(sq["specific"]["types"]),
            tuple(Hop(frozenset(h["types"]), h["predicate"]) for h in sq["hops"]),
        )
        for sq in doc["subqueries"]
    )
    filters = tuple(
        FilterSpec(
            f["attr"],
            -math.inf if f.get("lower") is None else float(f["lower"]),
            math.inf if f.get("upper") is None else float(f["upper"]),
        )
        for f in doc.get("filters", [])
    )
    group = doc.get("group_by")
    group_by = None
    if group is not None:
        buckets = group.get("buckets")
        group_by = GroupSpec(group["attr"], None if buckets is None else tuple(float(b) for b in buckets))
    config = EngineConfig.from_dict(doc.get("config", {}))
    return AggregateQuery(
        shape=doc["shape"],
        subqueries=subqueries,
        func=doc["func"],
        attr=doc.get("attr"),
        filters=filters,
        group_by=group_by,
        config=config,
    )


def load_query(path: str) -> AggregateQuery:
    with open(path, encoding="utf-8") as fh:
        return parse_query(fh.read())


def decompose(q: AggregateQuery) -> tuple[QueryGraph, ...]:
    """Independently runnable path queries that make up ``q``."""
    targets = {sq.target_types for sq in q.subqueries}
    if len(targets) != 1:
        raise InvariantViolation("subqueries must share one target type set")
    return q.subqueries
