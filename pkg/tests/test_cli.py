import json
import subprocess
import sys

import pytest

from compocert import __version__
from compocert.cli import atomic_write, main
from compocert.graph import dump_graphset, uniform_graphset
from compocert.xor import STRUCTURED_GRAPH, reference_graphset, xor_dataset

from conftest import table_component


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


class TestUsage:
    def test_unknown_flag(self, capsys):
        code, out = run(capsys, "oracle", "--bogus")
        assert code == 2
        assert "--bogus" in out.err

    def test_missing_subcommand(self, capsys):
        assert run(capsys)[0] == 2

    def test_bad_seeds(self, capsys):
        code, out = run(capsys, "xor", "--seeds", "a-b")
        assert code == 2 and "--seeds" in out.err

    def test_bad_parallel(self, capsys):
        assert run(capsys, "gradcheck", "--parallel", "0")[0] == 2

    def test_bad_env_seed(self, capsys, monkeypatch):
        monkeypatch.setenv("COMPOCERT_SEED", "x")
        assert run(capsys, "gradcheck", "--nets", "1")[0] == 2

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "check", "--hypothesis", str(tmp_path / "none.json"))[0] == 2


class TestOracle:
    def test_mappings_report(self, capsys, tmp_path):
        out = tmp_path / "r.json"
        code, cap = run(capsys, "oracle", "--lemma", "mappings", "--max-size", "3", "--out", str(out))
        assert code == 0
        assert "mapping lemmas" in cap.out
        doc = json.loads(out.read_text())
        assert doc["version"] == __version__ and doc["passed"] is True
        assert doc["config"]["max_size"] == 3 and doc["config"]["lemma"] == "mappings"
        assert "timestamp" in doc

    def test_idempotent_json(self, capsys, tmp_path):
        outs = []
        p = tmp_path / "r.json"
        for _ in range(2):
            run(capsys, "oracle", "--lemma", "theorem", "--trials", "5", "--no-exhaustive",
                "--no-timestamp", "--out", str(p))
            outs.append(p.read_bytes())
        assert outs[0] == outs[1]

    def test_env_seed(self, capsys, monkeypatch, tmp_path):
        monkeypatch.setenv("COMPOCERT_SEED", "11")
        p = tmp_path / "r.json"
        run(capsys, "gradcheck", "--nets", "1", "--noise", "off", "--out", str(p))
        assert json.loads(p.read_text())["config"]["seed"] == 11


class TestCheck:
    def write_xor(self, tmp_path, hidden):
        ds = xor_dataset()
        bits = ("0", "1")
        fh = table_component("f_h", hidden)
        fy = table_component("f_y", {(h, c): str(int(h != c)) for h in bits for c in bits})
        dump_graphset(uniform_graphset(ds, STRUCTURED_GRAPH, [fh, fy]).evaluate(ds), tmp_path / "h.json", ds)
        dump_graphset(reference_graphset(ds).evaluate(ds), tmp_path / "z.json", ds)
        return str(tmp_path / "h.json"), str(tmp_path / "z.json")

    def test_pass(self, capsys, tmp_path):
        bits = ("0", "1")
        h, z = self.write_xor(tmp_path, {(a, b): str(int(a != b)) for a in bits for b in bits})
        code, cap = run(capsys, "check", "--hypothesis", h, "--reference", z, "--policy", "exact")
        assert code == 0
        assert "conditions hold: yes" in cap.out

    def test_fail_is_exit_1(self, capsys, tmp_path):
        h, z = self.write_xor(tmp_path, {("0", "0"): "0", ("1", "0"): "0", ("0", "1"): "1", ("1", "1"): "1"})
        code, cap = run(capsys, "check", "--hypothesis", h, "--reference", z, "--format", "json")
        assert code == 1
        doc = json.loads(cap.out)
        assert doc["result"]["unambiguous"]["passed"] is False

    def test_reference_required(self, capsys, tmp_path):
        bits = ("0", "1")
        h, _ = self.write_xor(tmp_path, {(a, b): str(int(a != b)) for a in bits for b in bits})
        assert run(capsys, "check", "--hypothesis", h)[0] == 2
        assert run(capsys, "check", "--hypothesis", h, "--alternative")[0] == 0


class TestExperiments:
    def test_xor_export_then_check(self, capsys, tmp_path):
        code, cap = run(capsys, "xor", "--variant", "condition", "--seeds", "0",
                        "--export-graphs", str(tmp_path))
        assert code == 0
        assert "| Model meeting the condition | 1.0 ± 0.0 |" in cap.out
        code, cap = run(capsys, "check", "--hypothesis", str(tmp_path / "condition_seed0_hypothesis.json"),
                        "--reference", str(tmp_path / "condition_reference.json"))
        assert code == 0, cap.out

    def test_scan_smoke(self, capsys, tmp_path):
        rep = tmp_path / "scan.json"
        code, cap = run(capsys, "scan", "--train-size", "40", "--test-size", "10", "--seeds", "0",
                        "--iterations", "20", "--report", str(rep), "--dump-dataset", str(tmp_path / "mini"))
        assert code in (0, 1)
        doc = json.loads(rep.read_text())
        assert doc["config"]["train_size"] == 40
        assert doc["seeds"][0]["status"] in ("pass", "partial", "fail")
        assert (tmp_path / "mini.train.tsv").read_text().startswith("jump\tJUMP\n")
        assert len((tmp_path / "mini.test.tsv").read_text().splitlines()) == 10

    def test_scan_exhausted_is_usage_error(self, capsys):
        assert run(capsys, "scan", "--train-size", "100000", "--seeds", "0")[0] == 2

    def test_gradcheck(self, capsys):
        code, cap = run(capsys, "gradcheck", "--nets", "2")
        assert code == 0
        assert "noise off" in cap.out and "noise recorded" in cap.out


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(p, "a")
    atomic_write(p, "b")
    assert p.read_text() == "b"
    assert [f.name for f in p.parent.iterdir()] == ["x.txt"]


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "compocert.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert __version__ in res.stdout
