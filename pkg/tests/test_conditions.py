import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compocert.conditions import (
    EXACT,
    EqualityPolicy,
    PreconditionViolated,
    bijection,
    build_pair_table,
    check_alternative_cg,
    check_minimized,
    check_theorem_conditions,
    check_unambiguous,
    effectively_equal,
    median_pairwise_distance,
    single_linkage,
)
from compocert.graph import Component, Graph, GraphSet, structural_alignment, uniform_graphset
from compocert.xor import STRUCTURED_GRAPH

from conftest import table_component, vec


def xor_hypothesis(xor_data, hidden, readout):
    fh = table_component("f_h", hidden)
    fy = table_component("f_y", readout)
    return uniform_graphset(xor_data, STRUCTURED_GRAPH, [fh, fy]).evaluate(xor_data)


BITS = ("0", "1")
XOR_H = {(a, b): str(int(a != b)) for a in BITS for b in BITS}
XOR_Y = {(h, c): str(int(h != c)) for h in BITS for c in BITS}


class TestEqualityPolicy:
    def test_single_linkage_chains(self):
        pts = [vec(0), vec(1), vec(2), vec(10)]
        assert single_linkage(pts, 1.0) == [0, 0, 0, 1]
        assert single_linkage(pts, 0.5) == [0, 1, 2, 3]

    def test_relative_epsilon(self):
        pts = [vec(0, 0), vec(3, 4), vec(6, 8)]
        assert median_pairwise_distance(pts) == 5.0
        assert EqualityPolicy("threshold").resolve_epsilon(pts) == pytest.approx(0.5)

    def test_pairwise_needs_epsilon(self):
        with pytest.raises(ValueError):
            EqualityPolicy("threshold").equal(vec(0), vec(1))

    def test_tokens_fall_back_to_exact(self):
        assert EqualityPolicy("threshold", epsilon=10).equal("a", "a")
        assert not EqualityPolicy("threshold", epsilon=10).equal("a", "b")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            EqualityPolicy("fuzzy")

    def test_effectively_equal_commutative(self):
        c = Component("add", 2, commutative=True, fn=lambda a, b: a)
        nc = Component("sub", 2, fn=lambda a, b: a)
        assert effectively_equal(("1", "2"), ("2", "1"), c)
        assert not effectively_equal(("1", "2"), ("2", "1"), nc)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(0, 3))
    def test_clusters_are_eps_connected(self, xs, eps):
        pts = [vec(x) for x in xs]
        labels = single_linkage(pts, eps)
        # any pair within eps shares a label; labels number by first appearance
        for i in range(len(xs)):
            for j in range(len(xs)):
                if abs(xs[i] - xs[j]) <= eps:
                    assert labels[i] == labels[j]
        assert labels[0] == 0
        assert sorted(set(labels)) == list(range(len(set(labels))))


class TestConditionsOnXor:
    def test_true_xor_hypothesis_passes_everything(self, xor_data, xor_reference):
        H = xor_hypothesis(xor_data, XOR_H, XOR_Y)
        rep = check_theorem_conditions(H, xor_reference, xor_data)
        assert rep.conditions_hold and rep.all_passed
        table = build_pair_table(H, xor_reference, structural_alignment(H, xor_reference), xor_data)
        assert bijection(table) is not None

    def test_relabelled_hidden_tokens_still_pass(self, xor_data, xor_reference):
        hidden = {k: {"0": "p", "1": "q"}[v] for k, v in XOR_H.items()}
        readout = {({"0": "p", "1": "q"}[h], c): y for (h, c), y in XOR_Y.items()}
        rep = check_theorem_conditions(xor_hypothesis(xor_data, hidden, readout), xor_reference, xor_data)
        assert rep.conditions_hold and rep.correct_test.passed

    def test_memorizing_hidden_is_not_minimized(self, xor_data, xor_reference):
        # h = (x1, x2) pair: unambiguous but four values where z has two
        hidden = {(a, b): a + b for a in BITS for b in BITS}
        readout = {(a + b, c): str(int((a != b) != (c == "1"))) for a in BITS for b in BITS for c in BITS}
        rep = check_theorem_conditions(xor_hypothesis(xor_data, hidden, readout), xor_reference, xor_data)
        assert rep.unambiguous.passed
        assert rep.minimized.passed is False
        assert rep.minimized.witness["f_h"] == {"h": 4, "z": 2}
        assert not rep.conditions_hold

    def test_merging_a_and_c_is_ambiguous(self, xor_data, xor_reference):
        # (0,0) and (1,0) share h although z differs
        hidden = {("0", "0"): "0", ("1", "0"): "0", ("0", "1"): "1", ("1", "1"): "1"}
        rep = check_theorem_conditions(xor_hypothesis(xor_data, hidden, XOR_Y), xor_reference, xor_data)
        assert rep.unambiguous.passed is False
        assert rep.unambiguous.witness["component"] == "f_h"
        assert set(rep.unambiguous.witness["samples"]) == {"a", "c"}
        assert rep.minimized.passed is None

    def test_flat_hypothesis_breaks_alignment(self, xor_data, xor_reference):
        mlp = Component("mlp", 3, fn=lambda a, b, c: str(int(a) ^ int(b) ^ int(c)))
        flat = Graph((0, 1, 2), [(3, "mlp", (0, 1, 2))], (3,))
        H = uniform_graphset(xor_data, flat, [mlp]).evaluate(xor_data)
        rep = check_theorem_conditions(H, xor_reference, xor_data)
        assert rep.structural_alignment.passed is False
        assert rep.unambiguous.passed is None

    def test_minimized_precondition(self, xor_data, xor_reference):
        hidden = {("0", "0"): "0", ("1", "0"): "0", ("0", "1"): "1", ("1", "1"): "1"}
        H = xor_hypothesis(xor_data, hidden, XOR_Y)
        table = build_pair_table(H, xor_reference, structural_alignment(H, xor_reference), xor_data)
        with pytest.raises(PreconditionViolated):
            check_minimized(table)
        assert not check_unambiguous(table).passed

    def test_vector_values_under_threshold_policy(self, xor_data, xor_reference):
        rng = np.random.default_rng(0)
        centers = {"0": vec(0, 0), "1": vec(5, 5)}

        def fh(a, b):
            return centers[str(int(a != b))] + 0.01 * rng.standard_normal(2)

        def fy(h, c):
            z = int(np.linalg.norm(h) > 1)
            return str(z ^ int(c))

        H = GraphSet({s.id: STRUCTURED_GRAPH for s in xor_data.samples},
                     {"f_h": Component("f_h", 2, fn=fh), "f_y": Component("f_y", 2, fn=fy)}).evaluate(xor_data)
        assert check_theorem_conditions(H, xor_reference, xor_data, EqualityPolicy("threshold")).all_passed
        # exact comparison sees six distinct training vectors
        assert check_theorem_conditions(H, xor_reference, xor_data, EXACT).minimized.passed is False


class TestOtherChecks:
    def test_chain_world(self, chain_world):
        ds, gs = chain_world
        rep = check_theorem_conditions(gs, gs, ds)
        assert rep.all_passed

    def test_report_serializes(self, chain_world):
        ds, gs = chain_world
        d = check_theorem_conditions(gs, gs, ds).to_dict()
        assert d["conditions_hold"] is True
        assert "unambiguous" in check_theorem_conditions(gs, gs, ds).format_table()

    def test_alternative_condition_vacuous_when_train_wrong(self, xor_data):
        wrong = {k: "0" for k in XOR_Y}
        H = xor_hypothesis(xor_data, XOR_H, wrong)
        assert check_alternative_cg(H, xor_data).detail == {"vacuous": True}
