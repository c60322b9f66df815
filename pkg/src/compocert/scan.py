"""A desk-scale SCAN jump split and the attention model that generalizes on it.

Grammar::

    simple  := prim | prim dir
    phrase  := simple | simple "twice"
    command := phrase | phrase "and" phrase | phrase "after" phrase

``x after y`` executes ``y`` first.  ``prim dir`` turns first, so
``run left`` is ``TURN_LEFT RUN``.  Commands are padded with ``eos`` to ``n``
words and action sequences with ``END`` to ``m`` actions.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Dataset
from .nn import (
    AdamState,
    DivergedLoss,
    Net,
    NoiseRegConfig,
    Tape,
    Var,
    affine,
    attend,
    embed,
    forward,
    regularize,
    relu,
    reshape,
    row_penalty,
    softmax,
    train_step,
)

PRIMS = ("jump", "run", "walk", "look")
DIRS = ("left", "right")
FUNCTION_WORDS = ("twice", "and", "after")
EOS = "eos"
VOCAB = PRIMS + DIRS + FUNCTION_WORDS + (EOS,)
ACTIONS = ("JUMP", "RUN", "WALK", "LOOK", "TURN_LEFT", "TURN_RIGHT", "END")
WORD_ACTION = {"jump": "JUMP", "run": "RUN", "walk": "WALK", "look": "LOOK",
               "left": "TURN_LEFT", "right": "TURN_RIGHT", EOS: "END"}
HELD_OUT = "jump"
SLOT = "_"


class GrammarExhausted(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class MiniScanGrammar:
    m: int = 9
    n: int = 8

    def simples(self) -> list:
        return [(p,) for p in PRIMS] + [(p, d) for p in PRIMS for d in DIRS]

    def phrases(self) -> list:
        s = self.simples()
        return s + [x + ("twice",) for x in s]

    def commands(self) -> list:
        ph = self.phrases()
        out = list(ph)
        for conj in ("and", "after"):
            out += [a + (conj,) + b for a in ph for b in ph]
        return out

    def pad_input(self, words) -> tuple:
        words = tuple(words)
        if len(words) >= self.n:
            raise ParseError(f"command longer than {self.n - 1} words")
        return words + (EOS,) * (self.n - len(words))

    def pad_output(self, actions) -> tuple:
        actions = tuple(actions)
        if len(actions) >= self.m + 1:
            raise ParseError(f"action sequence longer than {self.m}")
        return actions + ("END",) * (self.m - len(actions))


# ---------------------------------------------------------------------------
# interpreters


def interpret(words) -> tuple:
    """Recursive-descent interpreter (unpadded actions)."""
    words = tuple(w for w in words if w != EOS)
    for conj in ("and", "after"):
        if conj in words:
            i = words.index(conj)
            left, right = _phrase(words[:i]), _phrase(words[i + 1:])
            return left + right if conj == "and" else right + left
    return _phrase(words)


def _phrase(words) -> tuple:
    if words and words[-1] == "twice":
        return _simple(words[:-1]) * 2
    return _simple(words)


def _simple(words) -> tuple:
    if len(words) == 1 and words[0] in PRIMS:
        return (WORD_ACTION[words[0]],)
    if len(words) == 2 and words[0] in PRIMS and words[1] in DIRS:
        return (WORD_ACTION[words[1]], WORD_ACTION[words[0]])
    raise ParseError(f"not a simple command: {' '.join(words)!r}")


def _word_class(w: str) -> str:
    if w in PRIMS:
        return "P"
    if w in DIRS:
        return "D"
    return w


def _build_template_table() -> dict:
    """Map each word-class pattern to the word positions its actions copy."""
    phrase_tpl = {("P",): (0,), ("P", "D"): (1, 0), ("P", "T"): (0, 0), ("P", "D", "T"): (1, 0, 1, 0)}
    table = {}
    for pat, tpl in phrase_tpl.items():
        table[tuple("twice" if c == "T" else c for c in pat)] = tpl
    for (pa, ta), (pb, tb) in itertools.product(list(table.items()), repeat=2):
        off = len(pa) + 1
        shifted = tuple(i + off for i in tb)
        table[pa + ("and",) + pb] = ta + shifted
        table[pa + ("after",) + pb] = shifted + ta
    return table


_TEMPLATES = _build_template_table()


def interpret_table(words) -> tuple:
    """Table-driven interpreter: look up the class pattern, copy word actions."""
    words = tuple(w for w in words if w != EOS)
    tpl = _TEMPLATES.get(tuple(_word_class(w) for w in words))
    if tpl is None:
        raise ParseError(f"no template for {' '.join(words)!r}")
    return tuple(WORD_ACTION[words[i]] for i in tpl)


def scaffold(words) -> tuple:
    """Command with every movement word replaced by a slot."""
    return tuple(SLOT if w in PRIMS else w for w in words if w != EOS)


# ---------------------------------------------------------------------------
# split


def generate_minisplit(grammar: MiniScanGrammar = MiniScanGrammar(), train_size: int | None = None,
                       test_size: int | None = None, seed: int = 0) -> Dataset:
    """Jump split: ``jump`` only in isolation for training, composed at test.

    ``None`` sizes take everything: all non-jump commands plus ``jump`` for
    training, and every covered jump composition for test.  Test commands
    are drawn only from scaffolds that occur in training with a non-jump
    movement word.
    """
    rng = np.random.default_rng(seed)
    cmds = grammar.commands()
    plain = [c for c in cmds if HELD_OUT not in c]
    composed = [c for c in cmds if HELD_OUT in c and len(c) > 1]
    train_size = len(plain) + 1 if train_size is None else train_size
    if train_size - 1 > len(plain) or train_size < 1:
        raise GrammarExhausted(f"train_size {train_size} exceeds {len(plain) + 1} available commands")
    pick = rng.choice(len(plain), size=train_size - 1, replace=False)
    train = [(HELD_OUT,)] + [plain[i] for i in sorted(pick)]
    seen = {scaffold(c) for c in train[1:]}
    eligible = [c for c in composed if scaffold(c) in seen]
    test_size = len(eligible) if test_size is None else test_size
    if test_size > len(eligible):
        raise GrammarExhausted(f"test_size {test_size} exceeds {len(eligible)} covered jump commands")
    test = [eligible[i] for i in sorted(rng.choice(len(eligible), size=test_size, replace=False))]

    def rows(prefix, cs):
        return [(f"{prefix}{i:04d}", grammar.pad_input(c), grammar.pad_output(interpret(c)))
                for i, c in enumerate(cs)]

    return Dataset(rows("train", train), rows("test", test))


def dump_tsv(dataset: Dataset, split: str) -> str:
    lines = []
    for s in dataset.split(split):
        cmd = " ".join(w for w in s.x if w != EOS)
        acts = " ".join(a for a in s.y if a != "END")
        lines.append(f"{cmd}\t{acts}")
    return "\n".join(lines) + ("\n" if lines else "")


def encode(dataset: Dataset, split: str) -> tuple[np.ndarray, np.ndarray]:
    w = {v: i for i, v in enumerate(VOCAB)}
    a = {v: i for i, v in enumerate(ACTIONS)}
    rows = dataset.split(split)
    x = np.array([[w[t] for t in s.x] for s in rows], dtype=int)
    y = np.array([[a[t] for t in s.y] for s in rows], dtype=int)
    return x, y


# ---------------------------------------------------------------------------
# model


class ScanModel(Net):
    """Shared syntax/semantic embeddings, attention maps from syntax only.

    ``T`` (vocab, d) feeds an MLP whose output is reshaped into ``m`` maps
    over the ``n`` positions; each map averages the semantic rows ``V``
    (vocab, n_actions), read out directly as action logits.
    """

    def __init__(self, grammar: MiniScanGrammar = MiniScanGrammar(), reg: NoiseRegConfig = NoiseRegConfig(),
                 *, sem_reg: NoiseRegConfig | None = None, d_syntax: int = 8, hidden: int = 64,
                 init_scale: float = 0.01, penalty: str = "occurrence", seed: int = 0):
        super().__init__()
        if penalty not in ("occurrence", "row"):
            raise ValueError(f"penalty must be occurrence or row, not {penalty!r}")
        rng = np.random.default_rng(seed)
        self.grammar, self.reg, self.penalty = grammar, reg, penalty
        self.sem_reg = reg if sem_reg is None else sem_reg
        m, n = grammar.m, grammar.n
        self.params["T"] = init_scale * rng.standard_normal((len(VOCAB), d_syntax))
        self.params["V"] = init_scale * rng.standard_normal((len(VOCAB), len(ACTIONS)))
        self.add_dense(rng, "att1", n * d_syntax, hidden)
        self.add_dense(rng, "att2", hidden, hidden)
        self.add_dense(rng, "att3", hidden, m * n)

    def _regularize_embedding(self, t: Tape, name: str, x: np.ndarray, cfg: NoiseRegConfig) -> Var:
        if self.penalty == "occurrence":
            return regularize(t, embed(t, name, x), name, cfg)
        row_penalty(t, name, cfg.beta)
        return regularize(t, embed(t, name, x), name, NoiseRegConfig(cfg.alpha, 0.0))

    def attention(self, t: Tape, x: np.ndarray) -> Var:
        B, (m, n) = len(x), (self.grammar.m, self.grammar.n)
        T = self._regularize_embedding(t, "T", x, self.reg)
        a = relu(t, affine(t, reshape(t, T, (B, -1)), "att1"))
        a = relu(t, affine(t, a, "att2"))
        return softmax(t, reshape(t, affine(t, a, "att3"), (B, m, n)), axis=-1)

    def build(self, t: Tape, x: np.ndarray) -> Var:
        U = self.attention(t, x)
        V = self._regularize_embedding(t, "V", x, self.sem_reg)
        return attend(t, U, V)

    def attention_maps(self, x: np.ndarray) -> np.ndarray:
        return self.attention(Tape(self.params, train=False), np.atleast_2d(x)).value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward(self, np.atleast_2d(x), "eval").logits.argmax(-1)


def sequence_accuracy(model: ScanModel, dataset: Dataset, split: str) -> float:
    x, y = encode(dataset, split)
    if len(y) == 0:
        return float("nan")
    return float((model.predict(x) == y).all(axis=1).mean())


@dataclass(frozen=True)
class ScanConfig:
    train_size: int | None = None
    test_size: int | None = None
    m: int = 9
    n: int = 8
    seeds: tuple = (0, 1, 2, 3, 4)
    iterations: int = 4000
    lr: float = 0.01
    alpha: float = 0.1
    beta: float = 0.1
    d_syntax: int = 8
    hidden: int = 128
    init_scale: float = 0.01
    cosine_decay: bool = True
    lr_floor: float = 0.1
    # "row" charges each embedding row once; "occurrence" charges every token in the batch
    penalty: str = "row"
    sem_alpha: float | None = None
    # the semantic table only needs the noise; a norm penalty erodes the logit margins
    sem_beta: float | None = 0.0

    @property
    def sem_reg(self) -> NoiseRegConfig:
        return NoiseRegConfig(self.alpha if self.sem_alpha is None else self.sem_alpha,
                              self.beta if self.sem_beta is None else self.sem_beta)

    @property
    def grammar(self) -> MiniScanGrammar:
        return MiniScanGrammar(self.m, self.n)


def train_scan(cfg: ScanConfig, seed: int, dataset: Dataset | None = None) -> tuple[ScanModel, dict]:
    """Full-batch Adam; returns the model and train/test sequence accuracies."""
    dataset = dataset or generate_minisplit(cfg.grammar, cfg.train_size, cfg.test_size, seed)
    model = ScanModel(cfg.grammar, NoiseRegConfig(cfg.alpha, cfg.beta), sem_reg=cfg.sem_reg,
                      d_syntax=cfg.d_syntax,
                      hidden=cfg.hidden, init_scale=cfg.init_scale, penalty=cfg.penalty, seed=seed)
    x, y = encode(dataset, "train")
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(20_000 + seed)
    start = time.perf_counter()
    loss = float("nan")
    for it in range(cfg.iterations):
        if cfg.cosine_decay:
            # settling the embeddings needs the step size to vanish at the end
            cos = 0.5 * (1.0 + np.cos(np.pi * it / cfg.iterations))
            state.lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * cos)
        loss = train_step(model, state, x, y, rng)
    return model, {"seed": seed, "loss": loss, "seconds": time.perf_counter() - start,
                   "train_acc": sequence_accuracy(model, dataset, "train"),
                   "test_acc": sequence_accuracy(model, dataset, "test")}


# ---------------------------------------------------------------------------
# probes


@dataclass
class SyntaxCollapseReport:
    syntax_distances: dict
    max_syntax_distance: float
    threshold: float
    attention_deviation: dict
    max_attention_deviation: float
    decoding: dict
    decoding_correct: bool

    @property
    def collapsed(self) -> bool:
        return self.max_syntax_distance <= self.threshold

    @property
    def invariant(self) -> bool:
        return self.max_attention_deviation <= self.threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["syntax_distances"] = {f"{a}|{b}": v for (a, b), v in self.syntax_distances.items()}
        d.update(collapsed=self.collapsed, invariant=self.invariant)
        return d


def probe_syntax_collapse(model: ScanModel, dataset: Dataset, relative: float = 0.1) -> SyntaxCollapseReport:
    """Syntax-embedding collapse, attention invariance and semantic decoding.

    The threshold is ``relative`` times the median distance between the
    syntax embeddings of all vocabulary words.
    """
    T = model.params["T"]
    idx = {w: i for i, w in enumerate(VOCAB)}
    all_d = [float(np.linalg.norm(T[i] - T[j])) for i, j in itertools.combinations(range(len(VOCAB)), 2)]
    threshold = relative * float(np.median(all_d))
    dists = {(a, b): float(np.linalg.norm(T[idx[a]] - T[idx[b]])) for a, b in itertools.combinations(PRIMS, 2)}

    deviation: dict = {}
    w2i = np.vectorize(idx.__getitem__)
    for s in dataset.split("test"):
        base = model.attention_maps(w2i(np.array(s.x)))
        for alt in PRIMS[1:]:
            swapped = tuple(alt if w == HELD_OUT else w for w in s.x)
            dev = float(np.abs(model.attention_maps(w2i(np.array(swapped))) - base).max())
            key = " ".join(scaffold(s.x))
            deviation[key] = max(deviation.get(key, 0.0), dev)

    V = model.params["V"]
    decoding = {w: ACTIONS[int(V[idx[w]].argmax())] for w in PRIMS + DIRS}
    correct = all(decoding[w] == WORD_ACTION[w] for w in decoding)
    return SyntaxCollapseReport(dists, max(dists.values()), threshold, deviation,
                                max(deviation.values(), default=0.0), decoding, correct)


@dataclass
class ScanSeedResult:
    seed: int
    train_acc: float
    test_acc: float
    seconds: float
    probe: dict = field(default_factory=dict)

    @property
    def probes_pass(self) -> bool:
        p = self.probe
        return bool(self.train_acc == 1.0 and p.get("collapsed") and p.get("invariant")
                    and p.get("decoding_correct"))

    @property
    def status(self) -> str:
        if not self.probes_pass:
            return "fail"
        return "pass" if self.test_acc >= 0.9 else "partial"


def run_scan(cfg: ScanConfig) -> list:
    results = []
    for seed in cfg.seeds:
        ds = generate_minisplit(cfg.grammar, cfg.train_size, cfg.test_size, seed)
        try:
            model, acc = train_scan(cfg, seed, ds)
        except DivergedLoss:
            results.append(ScanSeedResult(seed, float("nan"), float("nan"), 0.0))
            continue
        probe = probe_syntax_collapse(model, ds).to_dict()
        results.append(ScanSeedResult(seed, acc["train_acc"], acc["test_acc"], acc["seconds"], probe))
    return results


def scan_report(cfg: ScanConfig, results: list) -> dict:
    statuses = [r.status for r in results]
    n_ok = sum(s in ("pass", "partial") for s in statuses)
    overall = "fail"
    if sum(s == "pass" for s in statuses) >= 3:
        overall = "pass"
    elif n_ok >= 3:
        overall = "partial"
    return {"config": asdict(cfg), "overall": overall,
            "seeds": [dict(asdict(r), status=r.status) for r in results]}


def format_scan_report(report: dict) -> str:
    out = ["| seed | train acc | test acc | syntax max dist | threshold | attn dev | decoding | status |",
           "|---:|---:|---:|---:|---:|---:|:---:|:---|"]
    for r in report["seeds"]:
        p = r["probe"] or {}
        out.append("| {} | {:.3f} | {:.3f} | {:.4f} | {:.4f} | {:.4f} | {} | {} |".format(
            r["seed"], r["train_acc"], r["test_acc"], p.get("max_syntax_distance", float("nan")),
            p.get("threshold", float("nan")), p.get("max_attention_deviation", float("nan")),
            "ok" if p.get("decoding_correct") else "wrong", r["status"]))
    out.append(f"\noverall: {report['overall']}")
    return "\n".join(out) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, default=float)
