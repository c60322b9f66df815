"""Brute-force verification of the mapping lemmas and of both theorem directions.

Discrete worlds are small enough that every check is exhaustive: a random
reference structure with total lookup tables, a train/test split over all
input tuples, and a hypothesis graph set derived from the reference by a
per-node relabelling.  Hypothesis tables are fixed only where training
forces them; every other entry is random, so a world generalizes only if
the conditions actually carry it to the test samples.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .conditions import (
    EXACT,
    ConditionReport,
    EqualityPolicy,
    PreconditionViolated,
    check_correct_predictions,
    check_seen_test_inputs,
    check_theorem_conditions,
    node_labels,
)
from .graph import (
    Component,
    Dataset,
    Graph,
    GraphSet,
    evaluate,
    graphset_to_dict,
    structural_alignment,
)

SCENARIOS = ("conditions-hold", "break-alignment", "break-unambiguous", "break-minimized",
             "unseen-inputs", "random")


class GenerationFailed(RuntimeError):
    pass


class TraceFailure(RuntimeError):
    def __init__(self, message, sample=None, node=None):
        super().__init__(message)
        self.sample = sample
        self.node = node


class CounterexampleFound(AssertionError):
    def __init__(self, message, world: "DiscreteWorld"):
        super().__init__(message)
        self.world = world
        self.serialized = world.to_dict()


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by integers."""
    state = np.random.SeedSequence(list(key)).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=[int(state[0]), int(state[1])]))


# ---------------------------------------------------------------------------
# mapping lemmas


@dataclass(frozen=True)
class MappingInstance:
    domain: int
    codomain: int
    pairs: tuple

    def well_defined(self) -> bool:
        images = Counter(a for a, _ in self.pairs)
        return all(images[a] == 1 for a in range(self.domain)) and len(self.pairs) == self.domain

    def onto(self) -> bool:
        return {b for _, b in self.pairs} == set(range(self.codomain))

    def one_to_one(self) -> bool:
        hit = Counter(b for _, b in self.pairs)
        return all(c <= 1 for c in hit.values())


def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind by the explicit alternating sum."""
    total = sum((-1) ** j * math.comb(k, j) * (k - j) ** n for j in range(k + 1))
    return total // math.factorial(k)


def onto_count(n: int, k: int) -> int:
    return math.factorial(k) * stirling2(n, k)


@dataclass
class MappingLemmaReport:
    ok: bool
    max_size: int
    onto_counts: dict = field(default_factory=dict)
    expected_counts: dict = field(default_factory=dict)
    maps_checked: int = 0
    relations_checked: int = 0
    counterexample: MappingInstance | None = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok, "max_size": self.max_size, "maps_checked": self.maps_checked,
            "relations_checked": self.relations_checked,
            "onto_counts": {f"{a}x{b}": c for (a, b), c in self.onto_counts.items()},
            "expected_counts": {f"{a}x{b}": c for (a, b), c in self.expected_counts.items()},
            "counterexample": None if self.counterexample is None else list(self.counterexample.pairs),
        }


def verify_mapping_lemmas(max_size: int, relation_cells: int = 12) -> MappingLemmaReport:
    """Exhaustively check the cardinality lemmas for ``|A|, |B| <= max_size``.

    Every total function ``A -> B`` is enumerated.  Among onto ones,
    one-to-one must coincide with ``|A| == |B|``; pigeonhole collisions must
    appear whenever ``|A| > |B|``; one-to-one maps need ``|A| <= |B|``.
    For ``|A|*|B| <= relation_cells`` all relations are enumerated as well,
    to confirm that the well-defined ones are exactly the functions.
    """
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    rep = MappingLemmaReport(True, max_size)
    for a in range(1, max_size + 1):
        for b in range(1, max_size + 1):
            n_onto = 0
            for images in itertools.product(range(b), repeat=a):
                inst = MappingInstance(a, b, tuple(enumerate(images)))
                rep.maps_checked += 1
                injective = inst.one_to_one()
                if (a > b and injective) or (injective and not a <= b):
                    rep.ok, rep.counterexample = False, inst
                    return rep
                if inst.onto():
                    n_onto += 1
                    if injective != (a == b):
                        rep.ok, rep.counterexample = False, inst
                        return rep
            rep.onto_counts[(a, b)] = n_onto
            rep.expected_counts[(a, b)] = onto_count(a, b)
            if a * b <= relation_cells:
                cells = [(i, j) for i in range(a) for j in range(b)]
                wd = 0
                for mask in range(1 << len(cells)):
                    pairs = tuple(c for k, c in enumerate(cells) if mask >> k & 1)
                    rep.relations_checked += 1
                    if MappingInstance(a, b, pairs).well_defined():
                        wd += 1
                if wd != b ** a:
                    rep.ok = False
                    return rep
    if rep.onto_counts != rep.expected_counts:
        rep.ok = False
    return rep


# ---------------------------------------------------------------------------
# discrete worlds


@dataclass(frozen=True)
class WorldParams:
    n_inputs: int = 3
    min_internal: int = 2
    max_internal: int = 4
    min_alphabet: int = 2
    max_alphabet: int = 3
    test_fraction: float = 0.3

    def __post_init__(self):
        if self.min_alphabet < 2:
            raise ValueError("alphabet sizes must be at least 2")
        if self.min_internal < 2:
            raise ValueError("graph depth must be at least 2")


@dataclass
class DiscreteWorld:
    scenario: str
    seed: int
    dataset: Dataset
    reference: GraphSet
    hypothesis: GraphSet
    alphabets: dict

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed,
            "hypothesis": graphset_to_dict(self.hypothesis, self.dataset),
            "reference": graphset_to_dict(self.reference, self.dataset),
        }

    def check(self, policy: EqualityPolicy = EXACT) -> ConditionReport:
        return check_theorem_conditions(self.hypothesis, self.reference, self.dataset, policy)


def _canon(key: tuple, commutative: bool) -> tuple:
    return tuple(sorted(key)) if commutative else key


def _reference_structure(rng, params: WorldParams):
    n_in = params.n_inputs
    n_int = int(rng.integers(params.min_internal, params.max_internal + 1))
    alpha = {i: int(rng.integers(params.min_alphabet, params.max_alphabet + 1)) for i in range(n_in)}
    nodes, comps = [], {}
    for k in range(n_int):
        nid = n_in + k
        earlier = list(range(nid))
        arity = 2 if rng.random() < 0.8 else 1
        if k == 0:
            parents = [int(p) for p in rng.choice(n_in, size=min(arity, n_in), replace=False)]
        else:
            first = int(rng.integers(n_in, nid))
            others = [p for p in earlier if p != first]
            parents = [first] + [int(p) for p in rng.choice(others, size=arity - 1, replace=False)]
            parents = [int(p) for p in rng.permutation(parents)]
        comm = (len(parents) == 2 and all(p < n_in for p in parents)
                and alpha[parents[0]] == alpha[parents[1]] and rng.random() < 0.5)
        alpha[nid] = int(rng.integers(params.min_alphabet, params.max_alphabet + 1))
        table = {}
        for key in itertools.product(*(range(alpha[p]) for p in parents)):
            skey = tuple(str(v) for v in key)
            ck = _canon(skey, comm)
            if ck not in table:
                table[ck] = str(int(rng.integers(alpha[nid])))
            table[skey] = table[ck]
        cid = f"z{nid}"
        comps[cid] = Component(cid, len(parents), comm, table)
        nodes.append((nid, cid, tuple(parents)))
    used = {p for _, _, ps in nodes for p in ps}
    outputs = tuple(nid for nid, _, _ in nodes if nid not in used)
    return Graph(tuple(range(n_in)), nodes, outputs), comps, alpha


def _coverage(graph: Graph, comps, zvals, train, test) -> tuple | None:
    """First (sample, node) whose reference input tuple is unseen in training."""
    seen = {}
    for sid in train:
        for n in graph.nodes:
            seen.setdefault(n.id, set()).add(_canon(tuple(zvals[sid][p] for p in n.parents),
                                                    comps[n.component].commutative))
    for sid in test:
        for n in graph.nodes:
            key = _canon(tuple(zvals[sid][p] for p in n.parents), comps[n.component].commutative)
            if key not in seen[n.id]:
                return sid, n.id
    return None


def _split(rng, graph, comps, zvals, sids, params, unseen: bool):
    order = [sids[i] for i in rng.permutation(len(sids))]
    target = int(round(params.test_fraction * len(sids)))
    if unseen:
        target = max(target, 1)
    train, test = list(sids), []
    for sid in order:
        if len(test) >= target:
            break
        cand_train = [s for s in train if s != sid]
        if _coverage(graph, comps, zvals, cand_train, test + [sid]) is None:
            train, test = cand_train, test + [sid]
    if unseen:
        for sid in order:
            if sid in test:
                continue
            cand_train = [s for s in train if s != sid]
            if _coverage(graph, comps, zvals, cand_train, test + [sid]) is not None:
                return cand_train, test + [sid]
        return None
    return train, test


def _build_hypothesis(rng, graph: Graph, comps, zvals, dataset: Dataset, alpha,
                      choose: Callable, strict: bool) -> GraphSet | None:
    """Hypothesis tables fixed by training targets, random elsewhere.

    ``choose(nid, pairs)`` receives the training ``(z, h-input key)`` pairs of
    a node and returns ``relabel(z, key) -> h token``.
    """
    train = [s.id for s in dataset.train]
    hv = {sid: {i: zvals[sid][i] for i in graph.inputs} for sid in train}
    h_alpha = {i: [str(v) for v in range(alpha[i])] for i in graph.inputs}
    hcomps = {}
    for nid in graph.topological_order:
        node = graph.node_map[nid]
        comm = comps[node.component].commutative
        pairs = [(zvals[sid][nid], _canon(tuple(hv[sid][p] for p in node.parents), comm)) for sid in train]
        relabel = choose(nid, pairs)
        table = {}
        for sid, (z, key) in zip(train, pairs):
            target = relabel(z, key)
            if table.setdefault(key, target) != target and strict:
                return None
            hv[sid][nid] = table[key]
        tokens = sorted(set(table.values()) | {relabel(str(v), None) for v in range(alpha[nid])})
        h_alpha[nid] = tokens
        for key in itertools.product(*(h_alpha[p] for p in node.parents)):
            ck = _canon(key, comm)
            if ck not in table:
                table[ck] = tokens[int(rng.integers(len(tokens)))]
            table[key] = table[ck]
        cid = f"h{nid}"
        hcomps[cid] = Component(cid, len(node.parents), comm, table)
    hgraph = Graph(graph.inputs, [(n.id, f"h{n.id}", n.parents) for n in graph.nodes], graph.outputs)
    return GraphSet({s.id: hgraph for s in dataset.samples}, hcomps).evaluate(dataset)


def _bijection(rng, nid, size):
    perm = rng.permutation(size)
    return {str(v): f"h{nid}_{int(perm[v])}" for v in range(size)}


def _scenario_chooser(rng, scenario, graph, alpha, target):
    outputs = set(graph.outputs)

    def identity(z, key):
        return z

    def choose(nid, pairs):
        if nid in outputs:
            return identity
        sigma = _bijection(rng, nid, alpha[nid])
        mode = scenario
        if scenario == "random":
            mode = ("conditions-hold", "break-unambiguous", "break-minimized")[int(rng.integers(3))]
        elif nid != target:
            mode = "conditions-hold"
        if mode == "break-unambiguous":
            present = sorted({z for z, _ in pairs})
            if len(present) >= 2:
                v1, v2 = (present[i] for i in rng.choice(len(present), 2, replace=False))
                sigma[v2] = sigma[v1]
        elif mode == "break-minimized":
            by_z = {}
            for z, key in pairs:
                by_z.setdefault(z, []).append(key)
            splittable = sorted(z for z, keys in by_z.items() if len(set(keys)) >= 2)
            if splittable:
                v = splittable[int(rng.integers(len(splittable)))]
                keys = sorted(set(by_z[v]))
                u = keys[int(rng.integers(len(keys)))]
                fresh = f"h{nid}_x"
                return lambda z, key: fresh if (z == v and key == u) else sigma[z]
        return lambda z, key: sigma[z]

    return choose


def _monolithic(rng, graph: Graph, dataset: Dataset, zvals, alpha) -> GraphSet:
    inputs = graph.inputs
    comps, nodes = {}, []
    for j, o in enumerate(graph.outputs):
        nid = len(inputs) + j
        table = {s.x: zvals[s.id][o] for s in dataset.train}
        out_tokens = [str(v) for v in range(alpha[o])]
        for key in itertools.product(*([str(v) for v in range(alpha[i])] for i in inputs)):
            if key not in table:
                table[key] = out_tokens[int(rng.integers(len(out_tokens)))]
        cid = f"m{j}"
        comps[cid] = Component(cid, len(inputs), False, table)
        nodes.append((nid, cid, inputs))
    g = Graph(inputs, nodes, tuple(len(inputs) + j for j in range(len(graph.outputs))))
    return GraphSet({s.id: g for s in dataset.samples}, comps).evaluate(dataset)


def _scenario_holds(rep: ConditionReport, scenario: str) -> bool:
    ref_ok = bool(rep.reference_correct.passed and rep.reference_seen_inputs.passed)
    if not rep.correct_train.passed:
        return scenario == "random"
    if scenario == "conditions-hold":
        return rep.conditions_hold
    if scenario == "break-alignment":
        return ref_ok and rep.structural_alignment.passed is False
    if scenario == "break-unambiguous":
        return ref_ok and bool(rep.structural_alignment.passed) and rep.unambiguous.passed is False
    if scenario == "break-minimized":
        return (ref_ok and bool(rep.structural_alignment.passed) and bool(rep.unambiguous.passed)
                and rep.minimized.passed is False)
    if scenario == "unseen-inputs":
        return (bool(rep.structural_alignment.passed) and bool(rep.reference_correct.passed)
                and rep.reference_seen_inputs.passed is False)
    return True


def generate_world(params: WorldParams = WorldParams(), scenario: str = "conditions-hold",
                   seed: int = 0, max_attempts: int = 200) -> DiscreteWorld:
    """A world that satisfies, or breaks exactly, the named scenario.

    Each candidate is checked with :func:`check_theorem_conditions` before it
    is returned.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    for attempt in range(max_attempts):
        rng = make_rng(seed, attempt, SCENARIOS.index(scenario))
        graph, comps, alpha = _reference_structure(rng, params)
        inputs = list(itertools.product(*([str(v) for v in range(alpha[i])] for i in graph.inputs)))
        sids = [f"s{k}" for k in range(len(inputs))]
        zvals = {}
        for sid, x in zip(sids, inputs):
            zvals[sid] = evaluate(graph, comps, x)
        split = _split(rng, graph, comps, zvals, sids, params, scenario == "unseen-inputs")
        if split is None:
            continue
        train, test = split
        xs = dict(zip(sids, inputs))

        def sample(sid):
            return (sid, xs[sid], tuple(zvals[sid][o] for o in graph.outputs))

        dataset = Dataset([sample(s) for s in sids if s in set(train)],
                          [sample(s) for s in sids if s in set(test)])
        Z = GraphSet({s: graph for s in sids}, comps, zvals)
        non_outputs = [n.id for n in graph.nodes if n.id not in set(graph.outputs)]
        target = non_outputs[int(rng.integers(len(non_outputs)))]
        if scenario == "break-alignment":
            H = _monolithic(rng, graph, dataset, zvals, alpha)
        else:
            H = _build_hypothesis(rng, graph, comps, zvals, dataset, alpha,
                                  _scenario_chooser(rng, scenario, graph, alpha, target),
                                  strict=scenario != "random")
        if H is None:
            continue
        world = DiscreteWorld(scenario, seed, dataset, Z, H, alpha)
        if _scenario_holds(world.check(), scenario):
            return world
    raise GenerationFailed(f"no {scenario} world after {max_attempts} attempts (seed {seed})")


# ---------------------------------------------------------------------------
# induction trace


@dataclass
class TraceLine:
    sample: str
    node: Any
    component: str | None
    witness: tuple
    input_witnesses: tuple = ()
    permutation: tuple = ()
    equalities: dict = field(default_factory=dict)


@dataclass
class InductionTrace:
    lines: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lines": [{"sample": l.sample, "node": l.node, "component": l.component,
                       "witness": list(l.witness), "inputs": [list(w) for w in l.input_witnesses],
                       "permutation": list(l.permutation)} for l in self.lines],
            "outputs": [dict(o) for o in self.outputs],
        }


class _Views:
    """Label lookups shared by the trace builder and its validator."""

    def __init__(self, H, Z, dataset, policy, ref_policy):
        self.align = structural_alignment(H, Z)
        if not self.align.ok:
            raise PreconditionViolated("no structural alignment")
        self.H, self.Z, self.dataset = H, Z, dataset
        self.hl = node_labels(H, dataset, policy)
        self.zl = node_labels(Z, dataset, ref_policy)
        self.inv = {sid: {z: h for h, z in m.items()} for sid, m in self.align.mappings.items()}

    def z(self, sid, znode):
        return self.zl[sid][znode]

    def h(self, sid, znode):
        return self.hl[sid][self.inv[sid][znode]]


def _perm_for(zl_a, parents_a, zl_b, parents_b, commutative):
    if not commutative:
        return tuple(range(len(parents_b)))
    for perm in itertools.permutations(range(len(parents_a))):
        if all(zl_a[parents_a[perm[i]]] == zl_b[parents_b[i]] for i in range(len(parents_b))):
            return perm
    return None


def run_induction_trace(H: GraphSet, Z: GraphSet, dataset: Dataset,
                        policy: EqualityPolicy = EXACT, ref_policy: EqualityPolicy = EXACT,
                        require_conditions: bool = True) -> InductionTrace:
    """Executable transcript of the bottom-up sufficiency argument.

    For every test node a training witness ``A`` with equal reference inputs is
    located, the per-input witnesses ``C_i`` of the parents are reused, and the
    chain ``z^{C_i}=z^A_i`` (I), ``h^{C_i}=h^A_i`` (II), ``h^A_i=h^B_i`` (III)
    is checked before concluding ``z^A=z^B`` and ``h^A=h^B``.
    """
    if require_conditions:
        rep = check_theorem_conditions(H, Z, dataset, policy, ref_policy)
        if not (rep.conditions_hold and rep.correct_train.passed):
            raise PreconditionViolated("theorem conditions or correct training predictions fail")
    v = _Views(H, Z, dataset, policy, ref_policy)
    index: dict = {}
    input_index: dict = {}
    for s in dataset.train:
        g = Z.graphs[s.id]
        for pos, nid in enumerate(g.inputs):
            input_index.setdefault((pos, v.z(s.id, nid)), (s.id, nid))
            input_index.setdefault((None, v.z(s.id, nid)), (s.id, nid))
        for n in g.nodes:
            comm = Z.components[n.component].commutative
            key = _canon_labels([v.z(s.id, p) for p in n.parents], comm)
            index.setdefault((n.component, key), (s.id, n.id))

    trace = InductionTrace()
    for s in dataset.test:
        g = Z.graphs[s.id]
        wit: dict = {}
        children = g.children()
        for pos, nid in enumerate(g.inputs):
            w = input_index.get((pos, v.z(s.id, nid))) or input_index.get((None, v.z(s.id, nid)))
            if w is None:
                if children[nid] or nid in g.outputs:
                    raise TraceFailure("test input value never seen in training", s.id, nid)
                continue
            if v.h(w[0], w[1]) != v.h(s.id, nid):
                raise TraceFailure("base step: hypothesis input differs", s.id, nid)
            wit[nid] = w
            trace.lines.append(TraceLine(s.id, nid, None, w))
        for nid in g.topological_order:
            node = g.node_map[nid]
            comm = Z.components[node.component].commutative
            key = _canon_labels([v.z(s.id, p) for p in node.parents], comm)
            found = index.get((node.component, key))
            if found is None:
                raise TraceFailure("reference component input unseen in training", s.id, nid)
            a_sid, a_node = found
            a_parents = Z.graphs[a_sid].node_map[a_node].parents
            perm = _perm_for(v.zl[a_sid], a_parents, v.zl[s.id], node.parents, comm)
            if perm is None:
                raise TraceFailure("no parent alignment", s.id, nid)
            eqs = {}
            inputs = []
            for i, p in enumerate(node.parents):
                if p not in wit:
                    raise TraceFailure("parent has no witness", s.id, p)
                c_sid, c_node = wit[p]
                ap = a_parents[perm[i]]
                checks = {
                    "alpha": v.z(a_sid, ap) == v.z(s.id, p),
                    "beta_z": v.z(c_sid, c_node) == v.z(s.id, p),
                    "beta_h": v.h(c_sid, c_node) == v.h(s.id, p),
                    "I": v.z(c_sid, c_node) == v.z(a_sid, ap),
                    "II": v.h(c_sid, c_node) == v.h(a_sid, ap),
                    "III": v.h(a_sid, ap) == v.h(s.id, p),
                }
                if not all(checks.values()):
                    bad = [k for k, ok in checks.items() if not ok]
                    raise TraceFailure(f"equalities {bad} fail at input {i}", s.id, nid)
                eqs[i] = checks
                inputs.append((c_sid, c_node))
            if v.z(a_sid, a_node) != v.z(s.id, nid) or v.h(a_sid, a_node) != v.h(s.id, nid):
                raise TraceFailure("conclusion z^A=z^B, h^A=h^B fails", s.id, nid)
            wit[nid] = (a_sid, a_node)
            trace.lines.append(TraceLine(s.id, nid, node.component, (a_sid, a_node),
                                         tuple(inputs), tuple(perm), eqs))
        hg = H.graphs[s.id]
        for j, o in enumerate(g.outputs):
            if o not in wit:
                raise TraceFailure("output node has no witness", s.id, o)
            a_sid, a_node = wit[o]
            a_pos = Z.graphs[a_sid].outputs.index(a_node) if a_node in Z.graphs[a_sid].outputs else None
            y_b = dataset.by_id(s.id).y[j]
            yhat_b = H.values[s.id][hg.outputs[j]]
            if a_pos is None or str(dataset.by_id(a_sid).y[a_pos]) != str(y_b) or str(yhat_b) != str(y_b):
                raise TraceFailure("output prediction differs from target", s.id, o)
            trace.outputs.append({"sample": s.id, "output": j, "witness": a_sid, "y": y_b})
    return trace


def _canon_labels(labels, commutative):
    return tuple(sorted(labels, key=repr)) if commutative else tuple(labels)


def validate_trace(trace: InductionTrace, H: GraphSet, Z: GraphSet, dataset: Dataset,
                   policy: EqualityPolicy = EXACT, ref_policy: EqualityPolicy = EXACT) -> bool:
    """Recheck every line against the assignments; witnesses must be training samples."""
    v = _Views(H, Z, dataset, policy, ref_policy)
    train = dataset.train_ids
    for line in trace.lines:
        a_sid, a_node = line.witness
        if a_sid not in train:
            return False
        if v.z(a_sid, a_node) != v.z(line.sample, line.node):
            return False
        if v.h(a_sid, a_node) != v.h(line.sample, line.node):
            return False
        if line.component is None:
            continue
        parents = Z.graphs[line.sample].node_map[line.node].parents
        a_parents = Z.graphs[a_sid].node_map[a_node].parents
        for i, (c_sid, c_node) in enumerate(line.input_witnesses):
            if c_sid not in train:
                return False
            ap, p = a_parents[line.permutation[i]], parents[i]
            if not (v.z(c_sid, c_node) == v.z(a_sid, ap) == v.z(line.sample, p)):
                return False
            if not (v.h(c_sid, c_node) == v.h(a_sid, ap) == v.h(line.sample, p)):
                return False
    return all(o["witness"] in train for o in trace.outputs)


# ---------------------------------------------------------------------------
# both directions


@dataclass
class TheoremStats:
    sufficiency_worlds: int = 0
    sufficiency_generalized: int = 0
    traces_completed: int = 0
    necessity_worlds: int = 0
    necessity_passed: int = 0
    random_worlds: int = 0
    exhaustive_worlds: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _sufficiency(world: DiscreteWorld, rep: ConditionReport, stats: TheoremStats) -> None:
    if not (rep.conditions_hold and rep.correct_train.passed):
        return
    stats.sufficiency_worlds += 1
    if not rep.correct_test.passed:
        raise CounterexampleFound("conditions hold but a test prediction is wrong", world)
    stats.sufficiency_generalized += 1
    try:
        trace = run_induction_trace(world.hypothesis, world.reference, world.dataset,
                                    require_conditions=False)
    except TraceFailure as exc:
        raise CounterexampleFound(f"induction trace failed: {exc}", world) from exc
    if not validate_trace(trace, world.hypothesis, world.reference, world.dataset):
        raise CounterexampleFound("induction trace does not revalidate", world)
    stats.traces_completed += 1


def _necessity(world: DiscreteWorld, rep: ConditionReport, stats: TheoremStats) -> None:
    if not (rep.correct_train.passed and rep.correct_test.passed and rep.seen_test_inputs.passed):
        return
    stats.necessity_worlds += 1
    H = world.hypothesis
    self_rep = check_theorem_conditions(H, H, world.dataset)
    if not self_rep.conditions_hold:
        raise CounterexampleFound("world generalizes but fails the conditions with Z := H", world)
    stats.necessity_passed += 1


def verify_theorem_both_directions(n_trials: int = 1000, params: WorldParams = WorldParams(),
                                   seed: int = 0, random_trials: int | None = None,
                                   exhaustive: bool = True) -> TheoremStats:
    """Sufficiency and necessity over generated (and enumerated) worlds.

    Raises :class:`CounterexampleFound` on the first violation.
    """
    stats = TheoremStats()
    for t in range(n_trials):
        world = generate_world(params, "conditions-hold", seed=seed * 1_000_003 + t)
        rep = world.check()
        _sufficiency(world, rep, stats)
        _necessity(world, rep, stats)
    for t in range(n_trials if random_trials is None else random_trials):
        world = generate_world(params, "random", seed=seed * 1_000_003 + t)
        stats.random_worlds += 1
        rep = world.check()
        _sufficiency(world, rep, stats)
        _necessity(world, rep, stats)
    if exhaustive:
        for world in enumerate_xor_worlds():
            stats.exhaustive_worlds += 1
            rep = world.check()
            _sufficiency(world, rep, stats)
            _necessity(world, rep, stats)
    return stats


def count_mispredicting(scenario: str, n_trials: int, params: WorldParams = WorldParams(),
                        seed: int = 0) -> int:
    """How many generated worlds of ``scenario`` get some test prediction wrong."""
    bad = 0
    for t in range(n_trials):
        w = generate_world(params, scenario, seed=seed * 1_000_003 + t)
        if not check_correct_predictions(w.hypothesis, w.dataset, "test").passed:
            bad += 1
    return bad


def enumerate_xor_worlds(hidden_tokens: int = 3):
    """Every hypothesis over the two-XOR structure and its train/test split.

    The hidden component ranges over all maps ``{0,1}^2 -> {0..hidden_tokens-1}``
    and the output component over all maps ``tokens x {0,1} -> {0,1}``.
    """
    from .xor import reference_graphset, xor_dataset

    dataset = xor_dataset()
    Z = reference_graphset().evaluate(dataset)
    bits = ("0", "1")
    toks = tuple(str(t) for t in range(hidden_tokens))
    hid_keys = list(itertools.product(bits, bits))
    out_keys = list(itertools.product(toks, bits))
    graph = Graph((0, 1, 2), [(3, "f_h", (0, 1)), (4, "f_y", (3, 2))], (4,))
    for hid in itertools.product(toks, repeat=len(hid_keys)):
        fh = Component("f_h", 2, False, dict(zip(hid_keys, hid)))
        for out in itertools.product(bits, repeat=len(out_keys)):
            fy = Component("f_y", 2, False, dict(zip(out_keys, out)))
            H = GraphSet({s.id: graph for s in dataset.samples}, {"f_h": fh, "f_y": fy}).evaluate(dataset)
            yield DiscreteWorld("exhaustive", 0, dataset, Z, H, {})
