"""The two-XOR minimal example: data, models, ablations and probes.

The true function computes ``z = x1 ^ x2`` and ``y = z ^ x3``.  Six rows are
used for training and two held-out rows need the hidden value recombined
with an ``x3`` never seen alongside it.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .conditions import EqualityPolicy, check_unambiguous, build_pair_table, single_linkage
from .graph import Component, Dataset, Graph, GraphSet, structural_alignment
from .nn import (
    AdamState,
    DivergedLoss,
    Net,
    NoiseRegConfig,
    Tape,
    Var,
    affine,
    concat,
    embed,
    forward,
    regularize,
    relu,
    reshape,
    take,
    train_step,
)

# (name, x1, x2, x3, z, y)
TRAIN_ROWS = (
    ("a", 0, 0, 0, 0, 0),
    ("b", 0, 1, 0, 1, 1),
    ("c", 1, 0, 1, 1, 0),
    ("d", 1, 1, 1, 0, 1),
    ("e", 0, 0, 1, 0, 1),
    ("f", 0, 1, 1, 1, 0),
)
TEST_ROWS = (
    ("g", 1, 0, 0, 1, 1),
    ("h", 1, 1, 0, 0, 0),
)

VARIANTS = ("baseline", "condition", "no-reg", "no-structure", "modified-data")
RESULT_ROWS = (
    ("baseline", "Baseline"),
    ("condition", "Model meeting the condition"),
    ("no-reg", "No regularization"),
    ("no-structure", "No structure"),
    ("modified-data", "Modified training data"),
)


def true_function(x1: int, x2: int, x3: int) -> tuple[int, int]:
    z = x1 ^ x2
    return z, z ^ x3


def hidden_column(rows=TRAIN_ROWS) -> dict:
    return {r[0]: r[4] for r in rows}


def xor_dataset(drop: tuple = ()) -> Dataset:
    """The eight rows as a dataset of string tokens; ``drop`` removes training rows."""
    def sample(r):
        return (r[0], tuple(str(v) for v in r[1:4]), (str(r[5]),))

    return Dataset([sample(r) for r in TRAIN_ROWS if r[0] not in drop],
                   [sample(r) for r in TEST_ROWS])


def _xor_table():
    return {(str(a), str(b)): str(a ^ b) for a in (0, 1) for b in (0, 1)}


STRUCTURED_GRAPH = Graph((0, 1, 2), [(3, "f_h", (0, 1)), (4, "f_y", (3, 2))], (4,))
FLAT_GRAPH = Graph((0, 1, 2), [(3, "mlp", (0, 1, 2))], (3,))


def reference_graphset(dataset: Dataset | None = None) -> GraphSet:
    """The two-XOR true function as a reference graph set."""
    dataset = dataset or xor_dataset()
    graph = Graph((0, 1, 2), [(3, "xor_z", (0, 1)), (4, "xor_y", (3, 2))], (4,))
    comps = {"xor_z": Component("xor_z", 2, table=_xor_table()),
             "xor_y": Component("xor_y", 2, table=_xor_table())}
    return GraphSet({s.id: graph for s in dataset.samples}, comps)


# ---------------------------------------------------------------------------
# models


class XorNet(Net):
    """Structured two-component model, or the flat monolithic baseline.

    Structured: a shared embedding ``E``; ``h = f_h(e1, e2)``; logits from
    ``f_y(h, e3)``.  With regularization on, the component output ``h`` is
    noise-regularized; ``reg_inner`` extends it to the two ReLU layers inside
    ``f_h`` as well, which tends to collapse ``h`` to a constant at
    alpha = beta = 0.1.  Flat: one MLP on all three embeddings, regularized
    on its hidden layers.
    """

    def __init__(self, structured: bool, reg: NoiseRegConfig, *, m: int = 16, hidden: int = 32,
                 seed: int = 0, reg_inner: bool = False):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.structured, self.reg, self.m, self.hidden = structured, reg, m, hidden
        self.reg_inner = reg_inner
        self.params["E"] = rng.uniform(-1.0, 1.0, size=(2, m))
        if structured:
            self.add_dense(rng, "fh1", 2 * m, hidden)
            self.add_dense(rng, "fh2", hidden, hidden)
            self.add_dense(rng, "fh3", hidden, m)
            self.add_dense(rng, "fy1", 2 * m, hidden)
            self.add_dense(rng, "fy2", hidden, hidden)
            self.add_dense(rng, "fy3", hidden, 2)
        else:
            self.add_dense(rng, "mlp1", 3 * m, hidden)
            self.add_dense(rng, "mlp2", hidden, hidden)
            self.add_dense(rng, "mlp3", hidden, 2)

    def f_h(self, t: Tape, e1: Var, e2: Var) -> Var:
        inner = self.reg if self.reg_inner else NoiseRegConfig()
        a = regularize(t, relu(t, affine(t, concat(t, [e1, e2]), "fh1")), "fh1", inner)
        a = regularize(t, relu(t, affine(t, a, "fh2")), "fh2", inner)
        return regularize(t, affine(t, a, "fh3"), "fh3", self.reg)

    def f_y(self, t: Tape, h: Var, e3: Var) -> Var:
        a = relu(t, affine(t, concat(t, [h, e3]), "fy1"))
        a = relu(t, affine(t, a, "fy2"))
        return affine(t, a, "fy3")

    def build(self, t: Tape, x: np.ndarray) -> Var:
        e = embed(t, "E", x)
        if self.structured:
            h = self.f_h(t, take(t, e, 0), take(t, e, 1))
            return self.f_y(t, h, take(t, e, 2))
        flat = reshape(t, e, (len(x), -1))
        a = regularize(t, relu(t, affine(t, flat, "mlp1")), "mlp1", self.reg)
        a = regularize(t, relu(t, affine(t, a, "mlp2")), "mlp2", self.reg)
        return affine(t, a, "mlp3")

    def hidden_values(self, x: np.ndarray) -> np.ndarray:
        """Noise-free ``h`` for integer inputs ``x`` (B, 3)."""
        t = Tape(self.params, train=False)
        e = embed(t, "E", np.asarray(x))
        return self.f_h(t, take(t, e, 0), take(t, e, 1)).value

    def readout(self, h: np.ndarray, x3: np.ndarray) -> np.ndarray:
        t = Tape(self.params, train=False)
        e3 = embed(t, "E", np.asarray(x3))
        return self.f_y(t, Var(np.atleast_2d(h)), e3).value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward(self, np.asarray(x), "eval").logits.argmax(-1)


def _arrays(dataset: Dataset, split: str) -> tuple[np.ndarray, np.ndarray]:
    rows = dataset.split(split)
    x = np.array([[int(v) for v in s.x] for s in rows], dtype=int).reshape(-1, 3)
    y = np.array([int(s.y[0]) for s in rows], dtype=int)
    return x, y


def accuracy(net: XorNet, dataset: Dataset, split: str) -> float:
    x, y = _arrays(dataset, split)
    if len(y) == 0:
        return float("nan")
    return float((net.predict(x) == y).mean())


# ---------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "condition"
    seeds: tuple = (0, 1, 2, 3, 4)
    iterations: int = 1000
    lr: float = 0.001
    batch: int = 1000
    alpha: float = 0.1
    beta: float = 0.1
    hidden: int = 32
    baseline_hidden: int = 128
    m: int = 16
    retry_factor: int = 5
    reg_inner: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def structured(self) -> bool:
        return self.variant in ("condition", "no-reg", "modified-data")

    @property
    def reg(self) -> NoiseRegConfig:
        if self.variant in ("baseline", "no-reg"):
            return NoiseRegConfig(0.0, 0.0)
        return NoiseRegConfig(self.alpha, self.beta)

    @property
    def dropped_rows(self) -> tuple:
        return ("e", "f") if self.variant == "modified-data" else ()


@dataclass
class SeedResult:
    seed: int
    train_acc: float
    test_acc: float
    iterations: int
    loss: float
    retried: bool = False
    diverged: bool = False


@dataclass
class VariantResult:
    variant: str
    seeds: list = field(default_factory=list)
    seconds: float = 0.0

    def _vals(self, key):
        return [getattr(s, key) for s in self.seeds if not s.diverged]

    @property
    def test_mean(self) -> float:
        v = self._vals("test_acc")
        return float(np.mean(v)) if v else float("nan")

    @property
    def test_std(self) -> float:
        v = self._vals("test_acc")
        return float(np.std(v)) if v else float("nan")

    @property
    def train_mean(self) -> float:
        v = self._vals("train_acc")
        return float(np.mean(v)) if v else float("nan")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "test_mean": self.test_mean, "test_std": self.test_std,
                "train_mean": self.train_mean, "seconds": self.seconds,
                "seeds": [asdict(s) for s in self.seeds]}


def build_model(cfg: ExperimentConfig, seed: int) -> XorNet:
    hidden = cfg.hidden if cfg.structured else cfg.baseline_hidden
    return XorNet(cfg.structured, cfg.reg, m=cfg.m, hidden=hidden, seed=seed, reg_inner=cfg.reg_inner)


def train_model(cfg: ExperimentConfig, seed: int, iterations: int | None = None,
                log: list | None = None) -> tuple[XorNet, float]:
    """Adam on minibatches drawn with replacement from the training rows."""
    dataset = xor_dataset(cfg.dropped_rows)
    x, y = _arrays(dataset, "train")
    net = build_model(cfg, seed)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(10_000 + seed)
    loss = float("nan")
    n_iter = cfg.iterations if iterations is None else iterations
    for it in range(n_iter):
        idx = rng.integers(0, len(y), size=cfg.batch)
        loss = train_step(net, state, x[idx], y[idx], rng)
        if log is not None and (it + 1) % 100 == 0:
            log.append((it + 1, loss, accuracy(net, dataset, "train"), accuracy(net, dataset, "test")))
    return net, loss


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[SeedResult, XorNet | None]:
    dataset = xor_dataset(cfg.dropped_rows)
    try:
        net, loss = train_model(cfg, seed)
        retried = False
        if cfg.variant == "condition" and accuracy(net, dataset, "train") < 1.0:
            net, loss = train_model(cfg, seed, cfg.iterations * cfg.retry_factor)
            retried = True
    except DivergedLoss:
        return SeedResult(seed, float("nan"), float("nan"), cfg.iterations, float("nan"), diverged=True), None
    its = cfg.iterations * (cfg.retry_factor if retried else 1)
    return SeedResult(seed, accuracy(net, dataset, "train"), accuracy(net, dataset, "test"),
                      its, loss, retried), net


def run_variant(cfg: ExperimentConfig, keep_models: bool = False):
    """Train every seed; returns the result (and the trained nets if asked)."""
    start = time.perf_counter()
    res = VariantResult(cfg.variant)
    nets = {}
    for seed in cfg.seeds:
        r, net = run_seed(cfg, seed)
        res.seeds.append(r)
        nets[seed] = net
    res.seconds = time.perf_counter() - start
    return (res, nets) if keep_models else res


# ---------------------------------------------------------------------------
# graph sets and probes


def hypothesis_graphset(net: XorNet, dataset: Dataset) -> GraphSet:
    """Evaluated hypothesis graph set of a trained model (noise off)."""
    if net.structured:
        fh = Component("f_h", 2, fn=lambda a, b: net.hidden_values([[int(a), int(b), 0]])[0])
        fy = Component("f_y", 2, fn=lambda h, c: str(int(net.readout(h, [int(c)]).argmax())))
        gs = GraphSet({s.id: STRUCTURED_GRAPH for s in dataset.samples}, {"f_h": fh, "f_y": fy})
    else:
        mlp = Component("mlp", 3, fn=lambda a, b, c: str(int(net.predict([[int(a), int(b), int(c)]])[0])))
        gs = GraphSet({s.id: FLAT_GRAPH for s in dataset.samples}, {"mlp": mlp})
    return gs.evaluate(dataset)


def purity(labels, truth) -> float:
    """Fraction of points whose cluster's majority reference label matches theirs."""
    labels, truth = list(labels), list(truth)
    if not labels:
        return float("nan")
    total = 0
    for c in set(labels):
        members = [t for l, t in zip(labels, truth) if l == c]
        total += max(members.count(v) for v in set(members))
    return total / len(labels)


@dataclass
class ProbeResult:
    clusters: int
    purity: float
    epsilon: float
    labels: list

    def to_dict(self) -> dict:
        return asdict(self)


def probe_hidden_unambiguity(net: XorNet, policy: EqualityPolicy = EqualityPolicy("threshold"),
                             rows=TRAIN_ROWS) -> ProbeResult:
    """Cluster the hidden values of the training rows and compare with ``z``."""
    x = np.array([r[1:4] for r in rows])
    h = net.hidden_values(x)
    eps = policy.resolve_epsilon(list(h))
    labels = single_linkage(list(h), eps)
    return ProbeResult(len(set(labels)), purity(labels, [r[4] for r in rows]), eps, labels)


def ambiguity_witnesses(net: XorNet, dataset: Dataset,
                        policy: EqualityPolicy = EqualityPolicy("threshold")) -> list:
    """All hidden-node violations of the unambiguous check for a trained model."""
    H = hypothesis_graphset(net, dataset)
    Z = reference_graphset(dataset).evaluate(dataset)
    align = structural_alignment(H, Z)
    table = build_pair_table(H, Z, align, dataset, policy)
    res = check_unambiguous(table)
    if res.passed:
        return []
    return [v for v in res.detail["violations"] if v["component"] == "f_h"]


# ---------------------------------------------------------------------------
# reporting


def _fmt(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.1f} ± {std:.1f}"


def emit_results_table(results: dict, fmt: str = "md") -> str:
    """Accuracy table over the variants; ``results`` maps variant -> VariantResult."""
    rows = []
    for key, label in RESULT_ROWS:
        r = results.get(key)
        rows.append((key, label, r))
    if fmt == "csv":
        out = ["variant,label,test_mean,test_std,train_mean"]
        for key, label, r in rows:
            if r is None:
                out.append(f"{key},{label},,,")
            else:
                out.append(f"{key},{label},{r.test_mean:.4f},{r.test_std:.4f},{r.train_mean:.4f}")
        return "\n".join(out) + "\n"
    if fmt == "json":
        import json

        return json.dumps({k: (None if r is None else r.to_dict()) for k, _, r in rows}, indent=1)
    out = ["| Model | Test accuracy |", "|---|---:|"]
    for i, (key, label, r) in enumerate(rows):
        if i == 2:
            out.append("| *ablations* | |")
        out.append(f"| {label} | {'n/a' if r is None else _fmt(r.test_mean, r.test_std)} |")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# gradient verification


def random_xor_net(rng: np.random.Generator, reg: NoiseRegConfig) -> XorNet:
    """A structured net with random small widths and random parameters."""
    m = int(rng.integers(2, 7))
    hidden = int(rng.integers(4, 13))
    net = XorNet(True, reg, m=m, hidden=hidden, seed=int(rng.integers(2**31)), reg_inner=True)
    for k in net.params:
        net.params[k] = net.params[k] + 0.1 * rng.standard_normal(net.params[k].shape)
    return net


def gradcheck_suite(n_nets: int = 10, seed: int = 0, noise: str = "off", batch: int = 8,
                    alpha: float = 0.1, beta: float = 0.1) -> list:
    """Gradient checks on ``n_nets`` random structured nets.

    ``noise="off"`` sets alpha to 0 and keeps the activity penalty;
    ``noise="recorded"`` records one training pass's draws and replays them
    in every finite-difference evaluation.
    """
    from .nn import gradient_check

    if noise not in ("off", "recorded"):
        raise ValueError(f"noise must be off or recorded, not {noise!r}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_nets):
        reg = NoiseRegConfig(0.0 if noise == "off" else alpha, beta)
        net = random_xor_net(rng, reg)
        x = rng.integers(0, 2, size=(batch, 3))
        y = rng.integers(0, 2, size=batch)
        recorded = None
        if noise == "recorded":
            recorded = forward(net, x, "train", rng=np.random.default_rng(rng.integers(2**31))).noise
        out.append(gradient_check(net, x, y, noise=recorded))
    return out
