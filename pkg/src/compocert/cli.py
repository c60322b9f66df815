"""Command-line entry point: ``compocert {check,oracle,xor,scan,gradcheck}``.

Exit codes: 0 when everything passed, 1 when a check or oracle failed,
2 on a usage error.  Every JSON report embeds the resolved configuration and
the tool version; ``--no-timestamp`` makes reports byte-identical across runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__

log = logging.getLogger("compocert")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def atomic_write(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    from .conditions import _jsonable as conv

    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    return conv(obj)


def build_report(args: argparse.Namespace, result, passed: bool) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    report = {"tool": "compocert", "version": __version__, "command": args.command,
              "config": config, "passed": passed, "result": _jsonable(result)}
    if not args.no_timestamp:
        report["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return report


def emit(args: argparse.Namespace, report: dict, text: str) -> None:
    """Human-readable (or csv/json) output on stdout plus JSON at ``--out``."""
    body = json.dumps(report, indent=1, sort_keys=True, default=float) + "\n"
    if args.format == "json":
        sys.stdout.write(body)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if args.out:
        atomic_write(args.out, body)


def _pmap(fn, items: list, parallel: int) -> list:
    """Order-preserving map, fanned out over processes when ``parallel > 1``."""
    if parallel <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def _parse_seeds(text: str | None, base: int) -> tuple:
    if text is None:
        return tuple(range(base, base + 5))
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-"))
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--seeds: expected '0,1,2' or '0-4', got {text!r}") from None


def default_seed() -> int:
    env = os.environ.get("COMPOCERT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"COMPOCERT_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    from .conditions import EqualityPolicy, check_alternative_cg, check_theorem_conditions
    from .graph import GraphError, load_graphset

    def policy(mode, eps):
        try:
            return EqualityPolicy(mode, eps)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    try:
        H, h_data = load_graphset(args.hypothesis)
        Z, z_data = (load_graphset(args.reference) if args.reference else (None, None))
        dataset = load_graphset(args.dataset)[1] if args.dataset else (h_data or z_data)
    except (OSError, KeyError, json.JSONDecodeError, GraphError) as exc:
        raise UsageError(f"cannot load graph set: {exc}") from None
    if dataset is None:
        raise UsageError("no dataset: embed one in a graph-set file or pass --dataset")
    if not H.values:
        H = H.evaluate(dataset)
    if args.alternative:
        res = check_alternative_cg(H, dataset, policy(args.policy, args.epsilon))
        emit(args, build_report(args, res.to_dict(), bool(res.passed)),
             f"alternative condition: {'pass' if res.passed else 'FAIL'}\n")
        return 0 if res.passed else 1
    if Z is None:
        raise UsageError("--reference is required unless --alternative is given")
    if not Z.values:
        Z = Z.evaluate(dataset)
    rep = check_theorem_conditions(H, Z, dataset, policy(args.policy, args.epsilon),
                                   policy(args.ref_policy, None))
    emit(args, build_report(args, rep.to_dict(), rep.all_passed), rep.format_table())
    return 0 if rep.all_passed else 1


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    from .oracle import (
        CounterexampleFound,
        WorldParams,
        count_mispredicting,
        verify_mapping_lemmas,
        verify_theorem_both_directions,
    )

    result, lines, ok = {}, [], True
    if args.lemma in ("mappings", "all"):
        rep = verify_mapping_lemmas(args.max_size)
        result["mappings"] = rep
        ok &= rep.ok
        lines.append(f"mapping lemmas (|A|,|B| <= {args.max_size}): {'pass' if rep.ok else 'FAIL'}; "
                     f"{rep.maps_checked} maps, {rep.relations_checked} relations")
    params = WorldParams(max_internal=args.max_internal, max_alphabet=args.max_alphabet)
    if args.lemma in ("theorem", "all"):
        try:
            stats = verify_theorem_both_directions(args.trials, params, seed=args.seed,
                                                   exhaustive=not args.no_exhaustive)
            result["theorem"] = stats.to_dict()
            lines.append("theorem: pass; " + ", ".join(f"{k}={v}" for k, v in stats.to_dict().items()))
        except CounterexampleFound as exc:
            ok = False
            result["theorem"] = {"counterexample": str(exc), "world": exc.serialized}
            lines.append(f"theorem: COUNTEREXAMPLE: {exc}")
    if args.lemma in ("scenarios", "all"):
        counts = {s: count_mispredicting(s, args.trials, params, seed=args.seed)
                  for s in ("conditions-hold", "break-alignment", "break-unambiguous",
                            "break-minimized", "unseen-inputs")}
        result["scenarios"] = {"trials": args.trials, "mispredicting": counts}
        ok &= counts["conditions-hold"] == 0
        lines.append("mispredicting worlds per scenario: "
                     + ", ".join(f"{k}={v}/{args.trials}" for k, v in counts.items()))
    emit(args, build_report(args, result, ok), "\n".join(lines))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# xor


def _xor_seed(job):
    from .xor import ExperimentConfig, run_seed

    cfg_dict, seed = job
    res, net = run_seed(ExperimentConfig(**cfg_dict), seed)
    return res, net


def cmd_xor(args) -> int:
    from .graph import dump_graphset
    from .xor import (
        TRAIN_ROWS,
        VARIANTS,
        ExperimentConfig,
        VariantResult,
        emit_results_table,
        hypothesis_graphset,
        probe_hidden_unambiguity,
        reference_graphset,
        xor_dataset,
    )

    variants = list(VARIANTS) if "all" in args.variant else args.variant
    seeds = _parse_seeds(args.seeds, args.seed)
    results, probes = {}, {}
    for variant in sorted(variants):
        cfg = ExperimentConfig(variant=variant, seeds=seeds, iterations=args.iterations,
                               alpha=args.alpha, beta=args.beta, reg_inner=args.reg_inner)
        fields = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
        outs = _pmap(_xor_seed, [(fields, s) for s in seeds], args.parallel)
        res = VariantResult(variant, [r for r, _ in outs])
        results[variant] = res
        log.info("%s: %.3f ± %.3f", variant, res.test_mean, res.test_std)
        dataset = xor_dataset(cfg.dropped_rows)
        if cfg.structured:
            rows = [r for r in TRAIN_ROWS if r[0] not in cfg.dropped_rows]
            probes[variant] = {s: probe_hidden_unambiguity(net, rows=rows).to_dict()
                               for s, (_, net) in zip(seeds, outs) if net is not None}
        if args.export_graphs and cfg.structured:
            out_dir = Path(args.export_graphs)
            out_dir.mkdir(parents=True, exist_ok=True)
            dump_graphset(reference_graphset(dataset).evaluate(dataset),
                          out_dir / f"{variant}_reference.json", dataset)
            for s, (_, net) in zip(seeds, outs):
                if net is not None:
                    dump_graphset(hypothesis_graphset(net, dataset),
                                  out_dir / f"{variant}_seed{s}_hypothesis.json", dataset)
    table = emit_results_table(results, "csv" if args.format == "csv" else "md")
    result = {"table": {k: v.to_dict() for k, v in sorted(results.items())}, "probes": probes}
    diverged = any(s.diverged for r in results.values() for s in r.seeds)
    emit(args, build_report(args, result, not diverged), table)
    return 1 if diverged else 0


# ---------------------------------------------------------------------------
# scan


def _scan_seed(job):
    from .scan import ScanConfig, run_scan

    cfg_dict, seed = job
    cfg = ScanConfig(**dict(cfg_dict, seeds=(seed,)))
    return run_scan(cfg)[0]


def cmd_scan(args) -> int:
    from .scan import ScanConfig, dump_tsv, format_scan_report, generate_minisplit, report_json, scan_report

    seeds = _parse_seeds(args.seeds, args.seed)
    try:
        cfg = ScanConfig(train_size=args.train_size, test_size=args.test_size, m=args.m, seeds=seeds,
                         iterations=args.iterations, alpha=args.alpha, beta=args.beta,
                         sem_beta=args.semantic_beta, penalty=args.penalty)
        # fail on impossible sizes before any training starts
        ds = generate_minisplit(cfg.grammar, cfg.train_size, cfg.test_size, seeds[0])
        if args.dump_dataset:
            atomic_write(Path(args.dump_dataset).with_suffix(".train.tsv"), dump_tsv(ds, "train"))
            atomic_write(Path(args.dump_dataset).with_suffix(".test.tsv"), dump_tsv(ds, "test"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fields = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    results = _pmap(_scan_seed, [(fields, s) for s in seeds], args.parallel)
    rep = scan_report(cfg, results)
    if args.report:
        atomic_write(args.report, report_json(rep) + "\n")
    emit(args, build_report(args, rep, rep["overall"] != "fail"), format_scan_report(rep))
    return 0 if rep["overall"] != "fail" else 1


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from .xor import gradcheck_suite

    modes = ("off", "recorded") if args.noise == "both" else (args.noise,)
    tol = {"off": args.tol, "recorded": args.tol_recorded}
    result, lines, ok = {}, [], True
    for mode in modes:
        checks = gradcheck_suite(args.nets, args.seed, mode)
        worst = max(c.max_rel_error for c in checks)
        passed = worst <= tol[mode]
        ok &= passed
        result[mode] = {"max_rel_error": worst, "tolerance": tol[mode], "passed": passed,
                        "nets": [dataclasses.asdict(c) for c in checks]}
        lines.append(f"noise {mode}: max relative error {worst:.2e} (tol {tol[mode]:.0e}) "
                     f"{'pass' if passed else 'FAIL'}")
    emit(args, build_report(args, result, ok), "\n".join(lines))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="base seed (default: $COMPOCERT_SEED or 0)")
    common.add_argument("--out", help="write the JSON report here")
    common.add_argument("--format", choices=("md", "csv", "json"), default="md")
    common.add_argument("--parallel", type=int, default=1, help="worker processes for seeds")
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--no-timestamp", action="store_true", help="omit the report timestamp")

    p = argparse.ArgumentParser(prog="compocert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="check the conditions on graph-set files")
    c.add_argument("--hypothesis", required=True)
    c.add_argument("--reference")
    c.add_argument("--dataset", help="graph-set file whose embedded dataset to use")
    c.add_argument("--policy", choices=("exact", "threshold"), default="threshold")
    c.add_argument("--epsilon", type=float, default=None)
    c.add_argument("--ref-policy", choices=("exact", "threshold"), default="exact")
    c.add_argument("--alternative", action="store_true",
                   help="check the condition stated on the hypothesis alone")
    c.set_defaults(func=cmd_check)

    o = sub.add_parser("oracle", parents=[common], help="run the combinatorial oracles")
    o.add_argument("--lemma", choices=("mappings", "theorem", "scenarios", "all"), default="all")
    o.add_argument("--max-size", type=int, default=5)
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--max-internal", type=int, default=4)
    o.add_argument("--max-alphabet", type=int, default=3)
    o.add_argument("--no-exhaustive", action="store_true")
    o.set_defaults(func=cmd_oracle)

    x = sub.add_parser("xor", parents=[common], help="run the two-XOR experiment")
    x.add_argument("--variant", action="append",
                   choices=("all", "baseline", "condition", "no-reg", "no-structure", "modified-data"))
    x.add_argument("--seeds", help="'0,1,2' or '0-4' (default: five seeds from --seed)")
    x.add_argument("--iterations", type=int, default=1000)
    x.add_argument("--alpha", type=float, default=0.1)
    x.add_argument("--beta", type=float, default=0.1)
    x.add_argument("--reg-inner", action="store_true",
                   help="also regularize the hidden ReLU layers inside f_h")
    x.add_argument("--export-graphs", metavar="DIR", help="write graph-set JSON per seed")
    x.set_defaults(func=cmd_xor)

    s = sub.add_parser("scan", parents=[common], help="run the mini SCAN jump experiment")
    s.add_argument("--train-size", type=int, default=None)
    s.add_argument("--test-size", type=int, default=None)
    s.add_argument("--m", type=int, default=9)
    s.add_argument("--seeds")
    s.add_argument("--iterations", type=int, default=4000)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--beta", type=float, default=0.1)
    s.add_argument("--semantic-beta", type=float, default=0.0)
    s.add_argument("--penalty", choices=("row", "occurrence"), default="row",
                   help="charge the norm penalty once per embedding row or once per token")
    s.add_argument("--report", help="write the probe report JSON here")
    s.add_argument("--dump-dataset", metavar="PREFIX", help="write PREFIX.train.tsv and PREFIX.test.tsv")
    s.set_defaults(func=cmd_scan)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--nets", type=int, default=10)
    g.add_argument("--noise", choices=("off", "recorded", "both"), default="both")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--tol-recorded", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = default_seed()
        if getattr(args, "variant", "unset") is None:
            args.variant = ["condition"]
        if args.parallel < 1:
            raise UsageError("--parallel must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"compocert {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
