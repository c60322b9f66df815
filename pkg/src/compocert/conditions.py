"""Checkers for the compositional-generalization conditions.

Values are compared through an :class:`EqualityPolicy`.  Discrete tokens use
exact identity; real vectors are grouped by single-linkage clustering under
an L2 threshold, and two vectors are "equal" when they share a cluster.
Every check works on these cluster labels, pooled per component.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .graph import (
    Alignment,
    ArityMismatch,
    Component,
    Dataset,
    GraphSet,
    freeze,
    structural_alignment,
)


class PreconditionViolated(RuntimeError):
    pass


class MissingAssignment(KeyError):
    pass


def _as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=float).ravel()


def single_linkage(points: Sequence[np.ndarray], epsilon: float) -> list[int]:
    """Cluster labels (numbered by first appearance) at L2 threshold ``epsilon``.

    Pairs are merged in lexicographic index order and the lower root wins, so
    the labelling depends only on the input order.
    """
    n = len(points)
    parent = list(range(n))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n:
        X = np.stack([_as_vector(p) for p in points])
        D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        for i in range(n):
            for j in range(i + 1, n):
                if D[i, j] <= epsilon:
                    a, b = root(i), root(j)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
    labels, names = [], {}
    for i in range(n):
        labels.append(names.setdefault(root(i), len(names)))
    return labels


def median_pairwise_distance(points: Sequence) -> float:
    X = np.stack([_as_vector(p) for p in points])
    if len(X) < 2:
        return 0.0
    iu = np.triu_indices(len(X), 1)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))[iu]
    return float(np.median(D))


@dataclass(frozen=True)
class EqualityPolicy:
    """How node values are judged equal.

    ``mode="exact"`` compares tokens by identity.  ``mode="threshold"``
    clusters vectors by single linkage; with ``epsilon=None`` the threshold
    is ``relative`` times the median pairwise distance of the pool.
    """

    mode: str = "exact"
    epsilon: float | None = None
    relative: float = 0.1

    def __post_init__(self):
        if self.mode not in ("exact", "threshold"):
            raise ValueError(f"unknown equality mode {self.mode!r}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def resolve_epsilon(self, values: Sequence) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return self.relative * median_pairwise_distance(values)

    def cluster(self, values: Sequence) -> list[int]:
        if self.mode == "exact":
            names: dict = {}
            return [names.setdefault(freeze(v), len(names)) for v in values]
        return single_linkage(values, self.resolve_epsilon(values))

    def equal(self, a, b) -> bool:
        if self.mode == "exact" or not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
            return freeze(a) == freeze(b)
        if self.epsilon is None:
            raise ValueError("pairwise threshold comparison needs an explicit epsilon")
        return float(np.linalg.norm(_as_vector(a) - _as_vector(b))) <= self.epsilon


EXACT = EqualityPolicy()


def effectively_equal(a: Sequence, b: Sequence, component: Component,
                      policy: EqualityPolicy = EXACT) -> bool:
    """Input tuples are equal elementwise, or as multisets for commutative components."""
    if len(a) != component.arity or len(b) != component.arity:
        raise ArityMismatch(f"tuples must have arity {component.arity}")
    if all(policy.equal(u, v) for u, v in zip(a, b)):
        return True
    if not component.commutative:
        return False
    return any(all(policy.equal(u, v) for u, v in zip(a, perm))
               for perm in itertools.permutations(b))


# ---------------------------------------------------------------------------
# labelling


def node_labels(gs: GraphSet, dataset: Dataset, policy: EqualityPolicy = EXACT) -> dict:
    """Map ``sample -> node -> label`` such that equal labels mean equal values.

    Input nodes are always compared exactly.  Internal nodes are pooled by
    component; in threshold mode the training values of a pool are clustered
    and each test value joins the cluster of its nearest training value if it
    lies within the threshold, otherwise it gets a label of its own.
    """
    labels: dict = {s.id: {} for s in dataset.samples}
    pools: dict = {}
    for s in dataset.samples:
        if s.id not in gs.values:
            raise MissingAssignment(s.id)
        g = gs.graphs[s.id]
        vals = gs.values[s.id]
        for nid in g.inputs:
            labels[s.id][nid] = ("x", freeze(vals[nid]))
        for node in g.nodes:
            if node.id not in vals:
                raise MissingAssignment((s.id, node.id))
            pools.setdefault(node.component, ([], []))[0 if s.id in dataset.train_ids else 1].append(
                (s.id, node.id, vals[node.id]))
    for cid, (train, test) in pools.items():
        vectors = all(isinstance(v, np.ndarray) for _, _, v in train + test)
        if policy.mode == "exact" or not vectors:
            for sid, nid, v in train + test:
                labels[sid][nid] = (cid, freeze(v))
            continue
        tv = [v for _, _, v in train]
        eps = policy.resolve_epsilon(tv) if tv else 0.0
        cl = single_linkage(tv, eps) if tv else []
        for (sid, nid, _), c in zip(train, cl):
            labels[sid][nid] = (cid, c)
        if test:
            X = np.stack([_as_vector(v) for v in tv]) if tv else None
            for k, (sid, nid, v) in enumerate(test):
                if X is not None:
                    d = np.sqrt(((X - _as_vector(v)) ** 2).sum(-1))
                    j = int(np.argmin(d))
                    if d[j] <= eps:
                        labels[sid][nid] = (cid, cl[j])
                        continue
                labels[sid][nid] = (cid, ("unseen", k))
    return labels


def _input_key(gs: GraphSet, node, labels_s: Mapping) -> tuple:
    key = tuple(labels_s[p] for p in node.parents)
    comp = gs.components.get(node.component)
    if comp is not None and comp.commutative:
        key = tuple(sorted(key, key=repr))
    return key


# ---------------------------------------------------------------------------
# check results


@dataclass
class CheckResult:
    passed: bool | None
    witness: Any = None
    detail: Any = None

    def to_dict(self) -> dict:
        return {"passed": self.passed, "witness": _jsonable(self.witness), "detail": _jsonable(self.detail)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj.ravel()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    return str(obj)


def check_correct_predictions(H: GraphSet, dataset: Dataset, split: str) -> CheckResult:
    """All output nodes of the split equal ``Y`` (tokens compared as strings)."""
    wrong = []
    for s in dataset.split(split):
        if s.id not in H.values:
            raise MissingAssignment(s.id)
        pred = H.predictions(s.id)
        if len(pred) != len(s.y) or any(freeze(p) != freeze(y) for p, y in zip(pred, s.y)):
            wrong.append(s.id)
    return CheckResult(not wrong, wrong or None, {"n": len(dataset.split(split)), "wrong": len(wrong)})


def check_seen_test_inputs(S: GraphSet, dataset: Dataset, policy: EqualityPolicy = EXACT,
                           labels: Mapping | None = None) -> CheckResult:
    """Every test node's input tuple occurs at a training node of the same component."""
    labels = labels if labels is not None else node_labels(S, dataset, policy)
    seen: dict = {}
    for s in dataset.train:
        for node in S.graphs[s.id].nodes:
            seen.setdefault(node.component, set()).add(_input_key(S, node, labels[s.id]))
    for s in dataset.test:
        for node in S.graphs[s.id].nodes:
            key = _input_key(S, node, labels[s.id])
            if key not in seen.get(node.component, ()):
                vals = [S.values[s.id][p] for p in node.parents]
                return CheckResult(False, {"sample": s.id, "node": node.id,
                                           "component": node.component, "inputs": vals})
    return CheckResult(True)


@dataclass
class PairEntry:
    sample: str
    h_node: Any
    z_node: Any
    h_label: Any
    z_label: Any
    h_value: Any
    z_value: Any


@dataclass
class NodePairTable:
    """Training (h, z) value pairs pooled by hypothesis component."""

    train: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)


def build_pair_table(H: GraphSet, Z: GraphSet, alignment: Alignment, dataset: Dataset,
                     policy: EqualityPolicy = EXACT, ref_policy: EqualityPolicy = EXACT,
                     h_labels: Mapping | None = None, z_labels: Mapping | None = None) -> NodePairTable:
    if not alignment.ok:
        raise PreconditionViolated("pair table needs a structural alignment")
    h_labels = h_labels if h_labels is not None else node_labels(H, dataset, policy)
    z_labels = z_labels if z_labels is not None else node_labels(Z, dataset, ref_policy)
    table = NodePairTable()
    for s in dataset.samples:
        dest = table.train if s.id in dataset.train_ids else table.test
        m = alignment.mappings[s.id]
        for node in H.graphs[s.id].nodes:
            zn = m[node.id]
            dest.setdefault(node.component, []).append(PairEntry(
                s.id, node.id, zn, h_labels[s.id][node.id], z_labels[s.id][zn],
                H.values[s.id][node.id], Z.values[s.id][zn]))
    return table


def check_unambiguous(table: NodePairTable) -> CheckResult:
    """Equal hypothesis values imply equal reference values (training only)."""
    violations = []
    for cid, entries in table.train.items():
        first: dict = {}
        for e in entries:
            ref = first.setdefault(e.h_label, e)
            if ref.z_label != e.z_label:
                violations.append({"component": cid, "samples": (ref.sample, e.sample),
                                   "nodes": (ref.h_node, e.h_node),
                                   "z": (ref.z_value, e.z_value)})
    if not violations:
        return CheckResult(True)
    return CheckResult(False, violations[0], {"violations": violations})


def _counts(table: NodePairTable) -> dict:
    return {cid: {"h": len({e.h_label for e in es}), "z": len({e.z_label for e in es})}
            for cid, es in table.train.items()}


def check_minimized(table: NodePairTable, unambiguous: CheckResult | None = None) -> CheckResult:
    """Distinct hypothesis values equal distinct reference values per component.

    Needs a well-defined mapping; raises :class:`PreconditionViolated` otherwise.
    """
    unambiguous = unambiguous if unambiguous is not None else check_unambiguous(table)
    if not unambiguous.passed:
        raise PreconditionViolated("minimized representation needs unambiguous representation")
    counts = _counts(table)
    bad = {cid: c for cid, c in counts.items() if c["h"] != c["z"]}
    return CheckResult(not bad, bad or None, counts)


def check_one_to_one(table: NodePairTable) -> CheckResult:
    """Equal reference values imply equal hypothesis values (training only)."""
    for cid, entries in table.train.items():
        first: dict = {}
        for e in entries:
            ref = first.setdefault(e.z_label, e)
            if ref.h_label != e.h_label:
                return CheckResult(False, {"component": cid, "samples": (ref.sample, e.sample),
                                           "nodes": (ref.h_node, e.h_node)})
    return CheckResult(True)


def check_onto(table: NodePairTable) -> CheckResult:
    """Every reference value met at test time also occurs in training."""
    gaps = []
    for cid, entries in table.test.items():
        known = {e.z_label for e in table.train.get(cid, ())}
        gaps.extend({"component": cid, "sample": e.sample, "node": e.z_node, "z": e.z_value}
                    for e in entries if e.z_label not in known)
    return CheckResult(not gaps, gaps or None)


def bijection(table: NodePairTable) -> dict | None:
    """The explicit per-component ``h -> z`` bijection, or ``None`` if there is none."""
    out = {}
    for cid, entries in table.train.items():
        fwd, back = {}, {}
        for e in entries:
            if fwd.setdefault(e.h_label, e.z_label) != e.z_label:
                return None
            if back.setdefault(e.z_label, e.h_label) != e.h_label:
                return None
        out[cid] = fwd
    return out


@dataclass
class ConditionReport:
    structural_alignment: CheckResult
    unambiguous: CheckResult = field(default_factory=lambda: CheckResult(None))
    minimized: CheckResult = field(default_factory=lambda: CheckResult(None))
    one_to_one: CheckResult = field(default_factory=lambda: CheckResult(None))
    seen_test_inputs: CheckResult = field(default_factory=lambda: CheckResult(None))
    reference_correct: CheckResult = field(default_factory=lambda: CheckResult(None))
    reference_seen_inputs: CheckResult = field(default_factory=lambda: CheckResult(None))
    onto: CheckResult = field(default_factory=lambda: CheckResult(None))
    correct_train: CheckResult = field(default_factory=lambda: CheckResult(None))
    correct_test: CheckResult = field(default_factory=lambda: CheckResult(None))

    FIELDS = ("structural_alignment", "unambiguous", "minimized", "one_to_one", "seen_test_inputs",
              "reference_correct", "reference_seen_inputs", "onto", "correct_train", "correct_test")

    @property
    def conditions_hold(self) -> bool:
        """Alignment with a valid reference, unambiguous and minimized."""
        return bool(self.structural_alignment.passed and self.reference_correct.passed
                    and self.reference_seen_inputs.passed and self.unambiguous.passed
                    and self.minimized.passed)

    @property
    def all_passed(self) -> bool:
        return all(getattr(self, f).passed for f in self.FIELDS)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f).to_dict() for f in self.FIELDS}
        d["conditions_hold"] = self.conditions_hold
        d["all_passed"] = self.all_passed
        return d

    def format_table(self) -> str:
        rows = [("check", "result", "witness")]
        for f in self.FIELDS:
            r = getattr(self, f)
            res = {True: "pass", False: "FAIL", None: "n/a"}[r.passed]
            wit = "" if r.witness is None else str(_jsonable(r.witness))
            rows.append((f, res, wit[:70]))
        w0 = max(len(r[0]) for r in rows)
        lines = [f"{a:<{w0}}  {b:<6}  {c}".rstrip() for a, b, c in rows]
        lines.insert(1, "-" * max(len(l) for l in lines))
        lines.append(f"conditions hold: {'yes' if self.conditions_hold else 'no'}")
        return "\n".join(lines)


def check_theorem_conditions(H: GraphSet, Z: GraphSet, dataset: Dataset,
                             policy: EqualityPolicy = EXACT,
                             ref_policy: EqualityPolicy = EXACT) -> ConditionReport:
    """Run alignment, unambiguous, minimized and the supporting checks.

    Both graph sets must carry values for every sample of ``dataset``.
    """
    align = structural_alignment(H, Z)
    report = ConditionReport(CheckResult(align.ok, None if align.ok else {"sample": align.failed_sample},
                                         {"samples": len(align.mappings)}))
    h_labels = node_labels(H, dataset, policy)
    z_labels = node_labels(Z, dataset, ref_policy)
    report.correct_train = check_correct_predictions(H, dataset, "train")
    report.correct_test = check_correct_predictions(H, dataset, "test")
    report.seen_test_inputs = check_seen_test_inputs(H, dataset, policy, h_labels)
    ref_train = check_correct_predictions(Z, dataset, "train")
    ref_test = check_correct_predictions(Z, dataset, "test")
    report.reference_correct = CheckResult(
        ref_train.passed and ref_test.passed,
        (ref_train.witness or []) + (ref_test.witness or []) or None)
    report.reference_seen_inputs = check_seen_test_inputs(Z, dataset, ref_policy, z_labels)
    if not align.ok:
        return report
    table = build_pair_table(H, Z, align, dataset, h_labels=h_labels, z_labels=z_labels)
    report.unambiguous = check_unambiguous(table)
    if report.unambiguous.passed:
        report.minimized = check_minimized(table, report.unambiguous)
    report.one_to_one = check_one_to_one(table)
    report.onto = check_onto(table)
    return report


def check_alternative_cg(H: GraphSet, dataset: Dataset, policy: EqualityPolicy = EXACT) -> CheckResult:
    """Correct training predictions imply correct test predictions and seen test inputs."""
    train = check_correct_predictions(H, dataset, "train")
    if not train.passed:
        return CheckResult(True, None, {"vacuous": True})
    test = check_correct_predictions(H, dataset, "test")
    seen = check_seen_test_inputs(H, dataset, policy)
    failing = [name for name, r in (("correct_test", test), ("seen_test_inputs", seen)) if not r.passed]
    return CheckResult(not failing, {"failing": failing, "correct_test": test.witness,
                                     "seen_test_inputs": seen.witness} if failing else None,
                       {"vacuous": False})
