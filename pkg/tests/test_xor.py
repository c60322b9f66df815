import json

import numpy as np
import pytest

from compocert.conditions import EqualityPolicy, check_theorem_conditions
from compocert.nn import NoiseRegConfig, forward
from compocert.xor import (
    TEST_ROWS,
    TRAIN_ROWS,
    ExperimentConfig,
    VariantResult,
    SeedResult,
    XorNet,
    accuracy,
    emit_results_table,
    gradcheck_suite,
    hidden_column,
    hypothesis_graphset,
    probe_hidden_unambiguity,
    purity,
    run_variant,
    true_function,
    xor_dataset,
)


class TestData:
    def test_rows_follow_the_true_function(self):
        for _, x1, x2, x3, z, y in TRAIN_ROWS + TEST_ROWS:
            assert true_function(x1, x2, x3) == (z, y)

    def test_frozen_rows(self):
        assert [r[0] for r in TRAIN_ROWS] == list("abcdef")
        assert [r[1:] for r in TEST_ROWS] == [(1, 0, 0, 1, 1), (1, 1, 0, 0, 0)]

    def test_hidden_column(self):
        assert hidden_column() == {"a": 0, "b": 1, "c": 1, "d": 0, "e": 0, "f": 1}

    def test_test_pairs_are_unseen_combinations(self):
        # (z, x3) = (1, 0) appears only in b, (0, 0) only in a, while (x1, x2) = (1, .) never has x3 = 0
        train_pairs = {(r[1], r[2], r[3]) for r in TRAIN_ROWS}
        for r in TEST_ROWS:
            assert (r[1], r[2], r[3]) not in train_pairs
            assert any((t[1], t[2]) == (r[1], r[2]) for t in TRAIN_ROWS)
            assert any((t[4], t[3]) == (r[4], r[3]) for t in TRAIN_ROWS)

    def test_drop_rows(self):
        ds = xor_dataset(("e", "f"))
        assert [s.id for s in ds.train] == list("abcd")
        assert [s.id for s in ds.test] == ["g", "h"]

    def test_reference_is_valid(self, xor_data, xor_reference):
        rep = check_theorem_conditions(xor_reference, xor_reference, xor_data)
        assert rep.all_passed


class TestConfig:
    def test_variants(self):
        assert ExperimentConfig("condition").structured
        assert not ExperimentConfig("no-structure").structured
        assert ExperimentConfig("no-reg").reg == NoiseRegConfig(0.0, 0.0)
        assert ExperimentConfig("baseline").reg == NoiseRegConfig(0.0, 0.0)
        assert ExperimentConfig("modified-data").dropped_rows == ("e", "f")
        with pytest.raises(ValueError):
            ExperimentConfig("other")


class TestModel:
    def test_shapes(self):
        net = XorNet(True, NoiseRegConfig(), m=4, hidden=5)
        x = np.array([[0, 1, 1], [1, 1, 0]])
        assert forward(net, x).logits.shape == (2, 2)
        assert net.hidden_values(x).shape == (2, 4)

    def test_flat_has_no_hidden_node(self):
        net = XorNet(False, NoiseRegConfig(), m=4, hidden=5)
        assert forward(net, np.array([[0, 1, 1]])).logits.shape == (1, 2)
        assert not any(k.startswith("fh") for k in net.params)

    def test_eval_is_deterministic(self):
        net = XorNet(True, NoiseRegConfig(1.0, 1.0), seed=3)
        x = np.array([[0, 1, 1]])
        np.testing.assert_array_equal(forward(net, x).logits, forward(net, x).logits)

    def test_hypothesis_graphset_matches_predict(self, xor_data):
        net = XorNet(True, NoiseRegConfig(), seed=1)
        H = hypothesis_graphset(net, xor_data)
        x = np.array([s.x for s in xor_data.samples], dtype=int)
        preds = net.predict(x)
        assert [H.predictions(s.id)[0] for s in xor_data.samples] == [str(p) for p in preds]

    def test_short_training_run(self):
        res, nets = run_variant(ExperimentConfig("condition", seeds=(0,), iterations=1000), keep_models=True)
        assert res.seeds[0].train_acc == 1.0
        assert accuracy(nets[0], xor_dataset(), "test") == res.seeds[0].test_acc
        probe = probe_hidden_unambiguity(nets[0])
        assert probe.clusters == 2 and probe.purity == 1.0


class TestProbes:
    def test_purity(self):
        assert purity([0, 0, 1, 1], ["x", "x", "y", "y"]) == 1.0
        assert purity([0, 0, 0, 0], ["x", "x", "y", "y"]) == 0.5
        assert purity([0, 1, 2, 3], ["x", "x", "y", "y"]) == 1.0

    def test_ambiguous_pair_is_reported(self):
        # a hand-built f_h that maps (0,0) and (1,0) together
        net = XorNet(True, NoiseRegConfig(), m=4, seed=0)
        net.hidden_values = lambda x: np.array([[float(r[1]), 0.0, 0.0, 0.0] for r in np.asarray(x)])
        from compocert.xor import ambiguity_witnesses

        wits = ambiguity_witnesses(net, xor_dataset(("e", "f")), EqualityPolicy("threshold", epsilon=0.1))
        assert any(set(w["samples"]) == {"a", "c"} for w in wits)


class TestReport:
    def results(self):
        def vr(name, accs):
            return VariantResult(name, [SeedResult(i, 1.0, a, 10, 0.1) for i, a in enumerate(accs)])

        return {"condition": vr("condition", [1.0] * 5), "baseline": vr("baseline", [0.0] * 5)}

    def test_markdown(self):
        md = emit_results_table(self.results())
        assert "| Model meeting the condition | 1.0 ± 0.0 |" in md
        assert "| Baseline | 0.0 ± 0.0 |" in md
        assert "| No structure | n/a |" in md
        assert md.index("Model meeting") < md.index("*ablations*") < md.index("No regularization")

    def test_csv_and_json(self):
        csv = emit_results_table(self.results(), "csv").splitlines()
        assert csv[0] == "variant,label,test_mean,test_std,train_mean"
        assert csv[2].startswith("condition,Model meeting the condition,1.0000")
        doc = json.loads(emit_results_table(self.results(), "json"))
        assert doc["no-reg"] is None and doc["condition"]["test_mean"] == 1.0


class TestGradcheckSuite:
    def test_small_suite(self):
        for noise in ("off", "recorded"):
            res = gradcheck_suite(2, seed=5, noise=noise)
            assert max(r.max_rel_error for r in res) < 1e-4

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            gradcheck_suite(1, noise="live")
