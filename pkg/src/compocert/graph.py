"""Components, computational graphs, graph sets and typed-DAG isomorphism.

A :class:`Graph` is a DAG whose input nodes carry a sample's ``X`` and whose
internal nodes each apply one :class:`Component` to an ordered tuple of
parent nodes.  A :class:`GraphSet` holds one graph per sample of a
:class:`Dataset`, plus (optionally) the per-sample node values.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

NodeId = Hashable
Value = Any
Assignment = dict


class GraphError(ValueError):
    """Base class for structural problems in a graph."""

    def __init__(self, message: str, nodes: Sequence[NodeId] = ()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class CycleDetected(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class DanglingParent(GraphError):
    pass


class DuplicateNode(GraphError):
    pass


class DomainError(ValueError):
    """A lookup-table component received an input tuple outside its table."""


class MissingSample(KeyError):
    pass


def freeze(value: Value) -> Hashable:
    """Hashable form of a node value (vectors become float tuples)."""
    if isinstance(value, np.ndarray):
        return ("vec",) + tuple(float(v) for v in value.ravel())
    if isinstance(value, list):
        return tuple(freeze(v) for v in value)
    return value


@dataclass(frozen=True)
class Component:
    """A deterministic function from an ordered ``arity``-tuple to one value.

    Discrete components carry an exhaustive ``table``; learned ones carry a
    callable ``fn`` and are treated as black boxes.
    """

    id: str
    arity: int
    commutative: bool = False
    table: Mapping[tuple, Value] | None = None
    fn: Callable[..., Value] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError(f"component {self.id!r}: arity must be positive")
        if self.table is not None:
            table = dict(self.table)
            for key in table:
                if len(key) != self.arity:
                    raise ArityMismatch(f"component {self.id!r}: table key {key!r} has wrong length")
            if self.commutative:
                for key, out in table.items():
                    for perm in itertools.permutations(key):
                        if perm in table and table[perm] != out:
                            raise ValueError(
                                f"component {self.id!r} marked commutative but "
                                f"{key!r} -> {out!r} and {perm!r} -> {table[perm]!r}"
                            )
            object.__setattr__(self, "table", table)

    @property
    def learned(self) -> bool:
        return self.table is None

    def __call__(self, *inputs: Value) -> Value:
        if len(inputs) != self.arity:
            raise ArityMismatch(f"component {self.id!r} expects {self.arity} inputs, got {len(inputs)}")
        if self.table is not None:
            key = tuple(freeze(v) for v in inputs)
            if key in self.table:
                return self.table[key]
            if self.commutative:
                for perm in itertools.permutations(key):
                    if perm in self.table:
                        return self.table[perm]
            raise DomainError(f"component {self.id!r} has no entry for {key!r}")
        if self.fn is None:
            raise DomainError(f"component {self.id!r} is opaque (no table, no function)")
        return self.fn(*inputs)


class Node(NamedTuple):
    id: NodeId
    component: str
    parents: tuple


@dataclass(frozen=True)
class Graph:
    inputs: tuple
    nodes: tuple
    outputs: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(
            self, "nodes", tuple(Node(n[0], n[1], tuple(n[2])) for n in self.nodes)
        )
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @cached_property
    def node_map(self) -> dict:
        return {n.id: n for n in self.nodes}

    @cached_property
    def all_ids(self) -> tuple:
        return self.inputs + tuple(n.id for n in self.nodes)

    @cached_property
    def topological_order(self) -> tuple:
        """Internal node ids, parents before children; raises on cycles."""
        known = set(self.all_ids)
        for n in self.nodes:
            for p in n.parents:
                if p not in known:
                    raise DanglingParent(f"node {n.id!r} has unknown parent {p!r}", [n.id])
        done = set(self.inputs)
        order = []
        pending = list(self.nodes)
        while pending:
            rest = [n for n in pending if not all(p in done for p in n.parents)]
            ready = [n for n in pending if all(p in done for p in n.parents)]
            if not ready:
                raise CycleDetected("cycle among nodes " + ", ".join(map(repr, (n.id for n in rest))),
                                    [n.id for n in rest])
            for n in ready:
                order.append(n.id)
                done.add(n.id)
            pending = rest
        return tuple(order)

    def children(self) -> dict:
        out = defaultdict(list)
        for n in self.nodes:
            for pos, p in enumerate(n.parents):
                out[p].append((n.id, pos))
        return out

    def depth(self) -> int:
        level = {i: 0 for i in self.inputs}
        for nid in self.topological_order:
            level[nid] = 1 + max((level[p] for p in self.node_map[nid].parents), default=0)
        return max(level.values(), default=0)


def validate_graph(g: Graph, components: Mapping[str, Component] | None = None) -> None:
    """Raise a :class:`GraphError` subclass unless ``g`` is a well-formed DAG."""
    ids = g.all_ids
    dup = [k for k, c in Counter(ids).items() if c > 1]
    if dup:
        raise DuplicateNode(f"duplicate node ids {dup!r}", dup)
    g.topological_order  # dangling parents and cycles
    if components is not None:
        for n in g.nodes:
            comp = components.get(n.component)
            if comp is None:
                raise ArityMismatch(f"node {n.id!r} uses unknown component {n.component!r}", [n.id])
            if comp.arity != len(n.parents):
                raise ArityMismatch(
                    f"node {n.id!r}: component {n.component!r} has arity {comp.arity} "
                    f"but {len(n.parents)} parents", [n.id])
    known = set(ids)
    for o in g.outputs:
        if o not in known:
            raise DanglingParent(f"output {o!r} is not a node", [o])


def evaluate(g: Graph, components: Mapping[str, Component], x: Sequence[Value]) -> Assignment:
    """Evaluate ``g`` on input values ``x`` in topological order."""
    if len(x) != len(g.inputs):
        raise ArityMismatch(f"graph has {len(g.inputs)} inputs, got {len(x)} values")
    values = dict(zip(g.inputs, x))
    for nid in g.topological_order:
        node = g.node_map[nid]
        values[nid] = components[node.component](*(values[p] for p in node.parents))
    return values


def recheck_assignment(g: Graph, components: Mapping[str, Component], values: Assignment,
                       equal: Callable[[Value, Value], bool] | None = None) -> bool:
    """True iff every node is assigned and every internal value matches its component."""
    equal = equal or (lambda a, b: freeze(a) == freeze(b))
    if set(values) != set(g.all_ids):
        return False
    for node in g.nodes:
        if not equal(components[node.component](*(values[p] for p in node.parents)), values[node.id]):
            return False
    return True


# ---------------------------------------------------------------------------
# isomorphism


def _initial_colors(g: Graph, commutative: Callable[[str], bool], relabel: bool) -> dict:
    out_pos = defaultdict(list)
    for i, o in enumerate(g.outputs):
        out_pos[o].append(i)
    children = g.children()
    usage = Counter(n.component for n in g.nodes)
    colors = {}
    for i, nid in enumerate(g.inputs):
        colors[nid] = ("in", i, tuple(out_pos[nid]), len(children[nid]))
    for n in g.nodes:
        label = usage[n.component] if relabel else ("id", n.component)
        colors[n.id] = ("node", len(n.parents), commutative(n.component), label,
                        tuple(out_pos[n.id]), len(children[n.id]))
    return colors


def _refine(graphs: Sequence[Graph], colorings: list, commutative: Sequence[Callable]) -> list:
    """Joint colour refinement so colour ids are comparable across graphs."""
    total = sum(len(g.all_ids) for g in graphs)
    for _ in range(total + 1):
        palette: dict = {}
        new = []
        for g, col, comm in zip(graphs, colorings, commutative):
            children = g.children()
            nc = {}
            for nid in g.all_ids:
                node = g.node_map.get(nid)
                if node is None:
                    par = ()
                elif comm(node.component):
                    par = tuple(sorted(col[p] for p in node.parents))
                else:
                    par = tuple(col[p] for p in node.parents)
                ch = []
                for c, pos in children[nid]:
                    pos_key = -1 if comm(g.node_map[c].component) else pos
                    ch.append((col[c], pos_key))
                sig = (col[nid], par, tuple(sorted(ch)))
                nc[nid] = palette.setdefault(sig, len(palette))
            new.append(nc)
        stable = all(len(set(a.values())) == len(set(b.values())) for a, b in zip(colorings, new))
        colorings = new
        if stable:
            break
    return colorings


def _comm_lookup(components: Mapping[str, Component] | None) -> Callable[[str], bool]:
    if components is None:
        return lambda cid: False
    return lambda cid: bool(components[cid].commutative) if cid in components else False


def isomorphic(g1: Graph, g2: Graph, components1: Mapping[str, Component] | None = None,
               components2: Mapping[str, Component] | None = None, *, relabel: bool = True,
               component_map: Mapping[str, str] | None = None) -> dict | None:
    """Return a node bijection ``g1 -> g2`` or ``None``.

    The bijection preserves edges, the input/internal/output partition, input
    and output order, and parent order (parents of commutative components are
    compared as multisets).  With ``relabel`` the component ids of ``g1`` may
    be renamed, bijectively, to those of ``g2``; otherwise they must match.
    """
    found = _match(g1, g2, components1, components2, relabel, component_map)
    return None if found is None else found[0]


def _match(g1, g2, components1, components2, relabel, component_map):
    components2 = components1 if components2 is None else components2
    if (len(g1.inputs), len(g1.nodes), len(g1.outputs)) != (len(g2.inputs), len(g2.nodes), len(g2.outputs)):
        return None
    u1 = Counter(n.component for n in g1.nodes)
    u2 = Counter(n.component for n in g2.nodes)
    if relabel:
        if sorted(u1.values()) != sorted(u2.values()):
            return None
    elif u1 != u2:
        return None
    comm1, comm2 = _comm_lookup(components1), _comm_lookup(components2)
    col1, col2 = _refine(
        [g1, g2],
        [_initial_colors(g1, comm1, relabel), _initial_colors(g2, comm2, relabel)],
        [comm1, comm2],
    )
    if Counter(col1.values()) != Counter(col2.values()):
        return None

    mapping = dict(zip(g1.inputs, g2.inputs))
    if any(col1[a] != col2[b] for a, b in mapping.items()):
        return None
    by_color = defaultdict(list)
    for n in g2.nodes:
        by_color[col2[n.id]].append(n.id)
    cmap = dict(component_map or {})
    rcmap = {v: k for k, v in cmap.items()}
    used = set()
    order = g1.topological_order

    def extend(i: int) -> bool:
        if i == len(order):
            return all(mapping[a] == b for a, b in zip(g1.outputs, g2.outputs))
        n1 = g1.node_map[order[i]]
        for cand in by_color[col1[n1.id]]:
            if cand in used:
                continue
            n2 = g2.node_map[cand]
            c1, c2 = n1.component, n2.component
            if relabel:
                if cmap.get(c1, c2) != c2 or rcmap.get(c2, c1) != c1:
                    continue
            elif c1 != c2:
                continue
            mapped = [mapping[p] for p in n1.parents]
            if comm1(c1):
                if Counter(mapped) != Counter(n2.parents):
                    continue
            elif tuple(mapped) != n2.parents:
                continue
            fresh = c1 not in cmap
            if fresh:
                cmap[c1], rcmap[c2] = c2, c1
            mapping[n1.id] = cand
            used.add(cand)
            if extend(i + 1):
                return True
            used.discard(cand)
            del mapping[n1.id]
            if fresh:
                del cmap[c1], rcmap[c2]
        return False

    if not extend(0):
        return None
    return mapping, cmap


# ---------------------------------------------------------------------------
# datasets and graph sets


class Sample(NamedTuple):
    id: str
    x: tuple
    y: tuple


@dataclass(frozen=True)
class Dataset:
    train: tuple
    test: tuple = ()

    def __post_init__(self):
        train = tuple(Sample(s[0], tuple(s[1]), tuple(s[2])) for s in self.train)
        test = tuple(Sample(s[0], tuple(s[1]), tuple(s[2])) for s in self.test)
        ids = [s.id for s in train + test]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise ValueError(f"sample ids not disjoint: {dup!r}")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)

    def split(self, name: str) -> tuple:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def samples(self) -> tuple:
        return self.train + self.test

    @cached_property
    def train_ids(self) -> frozenset:
        return frozenset(s.id for s in self.train)

    def by_id(self, sid: str) -> Sample:
        for s in self.samples:
            if s.id == sid:
                return s
        raise MissingSample(sid)


@dataclass(frozen=True)
class GraphSet:
    """One graph per sample, a component table and (optionally) node values."""

    graphs: Mapping[str, Graph]
    components: Mapping[str, Component]
    values: Mapping[str, Assignment] = field(default_factory=dict)

    def evaluate(self, dataset: Dataset) -> "GraphSet":
        missing = [s.id for s in dataset.samples if s.id not in self.graphs]
        if missing:
            raise MissingSample(f"no graph for samples {missing!r}")
        values = {s.id: evaluate(self.graphs[s.id], self.components, s.x) for s in dataset.samples}
        return GraphSet(dict(self.graphs), dict(self.components), values)

    def predictions(self, sid: str) -> tuple:
        g = self.graphs[sid]
        return tuple(self.values[sid][o] for o in g.outputs)


@dataclass(frozen=True)
class Alignment:
    ok: bool
    mappings: Mapping[str, dict]
    failed_sample: str | None = None


def structural_alignment(H: GraphSet, Z: GraphSet, *, relabel: bool = True) -> Alignment:
    """Per-sample isomorphisms between the graphs of ``H`` and ``Z``."""
    if set(H.graphs) != set(Z.graphs):
        diff = sorted(set(H.graphs) ^ set(Z.graphs), key=str)
        raise MissingSample(f"graph sets cover different samples: {diff!r}")
    mappings = {}
    memo: dict = {}
    for sid, g in H.graphs.items():
        pair = (id(g), id(Z.graphs[sid]))
        if pair not in memo:
            memo[pair] = isomorphic(g, Z.graphs[sid], H.components, Z.components, relabel=relabel)
        m = memo[pair]
        if m is None:
            return Alignment(False, mappings, sid)
        mappings[sid] = m
    return Alignment(True, mappings)


# ---------------------------------------------------------------------------
# JSON interchange


def _token(v: Value) -> Any:
    if isinstance(v, np.ndarray):
        return [float(a) for a in v.ravel()]
    if isinstance(v, (list, tuple)):
        return [_token(a) for a in v]
    return str(v)


def _untoken(v: Any) -> Value:
    if isinstance(v, list):
        return np.asarray(v, dtype=float)
    return str(v)


def graphset_to_dict(gs: GraphSet, dataset: Dataset | None = None) -> dict:
    comps = []
    for c in gs.components.values():
        entry = {"id": c.id, "arity": c.arity, "commutative": c.commutative}
        if c.table is not None:
            entry["table"] = [[_token(a) for a in k] + [_token(out)] for k, out in c.table.items()]
        comps.append(entry)
    graphs = {
        str(sid): {
            "inputs": list(g.inputs),
            "nodes": [{"id": n.id, "component": n.component, "parents": list(n.parents)} for n in g.nodes],
            "outputs": list(g.outputs),
        }
        for sid, g in gs.graphs.items()
    }
    doc = {"components": comps, "graphs": graphs}
    if dataset is not None:
        doc["dataset"] = {
            split: [{"id": s.id, "x": [_token(a) for a in s.x], "y": [_token(a) for a in s.y]}
                    for s in dataset.split(split)]
            for split in ("train", "test")
        }
    if gs.values:
        doc["values"] = {str(sid): {str(k): _token(v) for k, v in vals.items()}
                         for sid, vals in gs.values.items()}
    return doc


def graphset_from_dict(doc: Mapping) -> tuple[GraphSet, Dataset | None]:
    components = {}
    for c in doc["components"]:
        table = None
        if c.get("table") is not None:
            table = {tuple(str(a) for a in row[:-1]): str(row[-1]) for row in c["table"]}
        components[c["id"]] = Component(c["id"], int(c["arity"]), bool(c.get("commutative", False)), table)
    graphs = {}
    for sid, g in doc["graphs"].items():
        graphs[sid] = Graph(
            g["inputs"],
            [(n["id"], n["component"], n["parents"]) for n in g["nodes"]],
            g["outputs"],
        )
        validate_graph(graphs[sid], components)
    dataset = None
    if "dataset" in doc:
        d = doc["dataset"]
        dataset = Dataset(
            [(s["id"], [_untoken(a) for a in s["x"]], [_untoken(a) for a in s["y"]]) for s in d.get("train", [])],
            [(s["id"], [_untoken(a) for a in s["x"]], [_untoken(a) for a in s["y"]]) for s in d.get("test", [])],
        )
    values = {}
    for sid, vals in doc.get("values", {}).items():
        g = graphs[sid]
        ids = {str(k): k for k in g.all_ids}
        values[sid] = {ids[k]: _untoken(v) for k, v in vals.items()}
    return GraphSet(graphs, components, values), dataset


def load_graphset(path) -> tuple[GraphSet, Dataset | None]:
    with open(path) as fh:
        return graphset_from_dict(json.load(fh))


def dump_graphset(gs: GraphSet, path, dataset: Dataset | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(graphset_to_dict(gs, dataset), fh, indent=1)


def uniform_graphset(dataset: Dataset, graph: Graph, components: Iterable[Component]) -> GraphSet:
    """Graph set where every sample shares one structure."""
    return GraphSet({s.id: graph for s in dataset.samples}, {c.id: c for c in components})
