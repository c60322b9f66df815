"""A small dense network engine on numpy.

Layers record a backward closure on a :class:`Tape` during the forward pass;
:func:`backward` replays them in reverse.  Only the layer kinds the
experiments need are supported: embedding lookup, affine, ReLU, concat,
softmax, attention combine, and the regularizer that adds Gaussian noise
``N(0, alpha)`` to an activation while charging ``beta * ||h||^2`` to the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeMismatch(ValueError):
    pass


class StaleActivations(RuntimeError):
    pass


class DivergedLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseRegConfig:
    """Noise variance ``alpha`` and activity-penalty weight ``beta``.

    Both act only in training forward passes.
    """

    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @property
    def train_only(self) -> bool:
        return True

    @property
    def active(self) -> bool:
        return self.alpha > 0 or self.beta > 0


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "embedding" | "affine+relu" | "affine" | "softmax-readout"
    n_in: int
    n_out: int
    regularized: bool = False

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise ValueError("layer dims must be positive")


class Var:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    def accum(self, g):
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    def __init__(self, params: Mapping[str, np.ndarray], train: bool,
                 rng: np.random.Generator | None = None, noise: Mapping[str, np.ndarray] | None = None):
        self.params = params
        self.train = train
        self.rng = rng
        self.replay = noise
        self.noise: dict = {}
        self.penalty = 0.0
        self.relu_masks: list = []
        self._ops: list = []
        self._vars: dict = {}

    def param(self, name: str) -> Var:
        if name not in self._vars:
            self._vars[name] = Var(self.params[name])
        return self._vars[name]

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def run_backward(self, out: Var, grad: np.ndarray) -> dict:
        out.accum(grad)
        for fn in reversed(self._ops):
            fn()
        return {name: (self._vars[name].grad if name in self._vars and self._vars[name].grad is not None
                       else np.zeros_like(p)) for name, p in self.params.items()}


# ---------------------------------------------------------------------------
# ops


def embed(t: Tape, name: str, idx: np.ndarray) -> Var:
    E = t.param(name)
    out = Var(E.value[idx])

    def back():
        if out.grad is None:
            return
        d = E.value.shape[-1]
        if E.value.shape[0] <= 64:
            # one-hot matmul is much faster than add.at for small vocabularies
            onehot = np.eye(E.value.shape[0], dtype=out.grad.dtype)[np.ravel(idx)]
            E.accum(onehot.T @ out.grad.reshape(-1, d))
        else:
            g = np.zeros_like(E.value)
            np.add.at(g, idx, out.grad)
            E.accum(g)

    t.record(back)
    return out


def affine(t: Tape, x: Var, name: str) -> Var:
    W, b = t.param(name + ".W"), t.param(name + ".b")
    if x.value.shape[-1] != W.value.shape[0]:
        raise ShapeMismatch(f"{name}: input width {x.value.shape[-1]} != {W.value.shape[0]}")
    out = Var(x.value @ W.value + b.value)

    def back():
        g = out.grad
        if g is None:
            return
        x2 = x.value.reshape(-1, x.value.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        W.accum(x2.T @ g2)
        b.accum(g2.sum(0))
        x.accum(g @ W.value.T)

    t.record(back)
    return out


def relu(t: Tape, x: Var) -> Var:
    mask = x.value > 0
    t.relu_masks.append(mask)
    out = Var(x.value * mask)

    def back():
        if out.grad is not None:
            x.accum(out.grad * mask)

    t.record(back)
    return out


def concat(t: Tape, xs: list, axis: int = -1) -> Var:
    out = Var(np.concatenate([x.value for x in xs], axis=axis))
    sizes = np.cumsum([x.value.shape[axis] for x in xs])[:-1]

    def back():
        if out.grad is not None:
            for x, g in zip(xs, np.split(out.grad, sizes, axis=axis)):
                x.accum(g)

    t.record(back)
    return out


def take(t: Tape, x: Var, index: int, axis: int = 1) -> Var:
    out = Var(np.take(x.value, index, axis=axis))

    def back():
        if out.grad is not None:
            g = np.zeros_like(x.value)
            sl = [slice(None)] * x.value.ndim
            sl[axis] = index
            g[tuple(sl)] = out.grad
            x.accum(g)

    t.record(back)
    return out


def reshape(t: Tape, x: Var, shape: tuple) -> Var:
    out = Var(x.value.reshape(shape))

    def back():
        if out.grad is not None:
            x.accum(out.grad.reshape(x.value.shape))

    t.record(back)
    return out


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(t: Tape, x: Var, axis: int = -1) -> Var:
    s = _softmax(x.value, axis)
    out = Var(s)

    def back():
        if out.grad is not None:
            g = out.grad
            x.accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    t.record(back)
    return out


def attend(t: Tape, U: Var, V: Var) -> Var:
    """Batched attention combine: ``U (B,m,k) @ V (B,k,d) -> (B,m,d)``."""
    if U.value.shape[-1] != V.value.shape[-2]:
        raise ShapeMismatch("attention map size does not match value count")
    out = Var(U.value @ V.value)

    def back():
        if out.grad is not None:
            U.accum(out.grad @ np.swapaxes(V.value, -1, -2))
            V.accum(np.swapaxes(U.value, -1, -2) @ out.grad)

    t.record(back)
    return out


def regularize(t: Tape, h: Var, name: str, cfg: NoiseRegConfig) -> Var:
    """Activity penalty ``beta*||h||^2`` (batch mean) and additive noise, training only."""
    if not t.train or not cfg.active:
        return h
    batch = h.value.shape[0]
    t.penalty += cfg.beta * float(np.vdot(h.value, h.value)) / batch
    if t.replay is not None and name in t.replay:
        noise = t.replay[name]
    elif cfg.alpha > 0:
        noise = np.sqrt(cfg.alpha) * t.rng.standard_normal(h.value.shape)
    else:
        noise = np.zeros_like(h.value)
    t.noise[name] = noise
    out = Var(h.value + noise)

    def back():
        g = out.grad if out.grad is not None else 0.0
        h.accum(g + 2.0 * cfg.beta * h.value / batch)

    t.record(back)
    return out


def row_penalty(t: Tape, name: str, beta: float) -> None:
    """``beta * ||P||^2`` over the rows of a parameter table, training only.

    For an embedding this charges each distinct output once, however often
    its word occurs in the batch.
    """
    if not t.train or beta == 0:
        return
    P = t.param(name)
    t.penalty += beta * float(np.vdot(P.value, P.value))

    def back():
        P.accum(2.0 * beta * P.value)

    t.record(back)


def attention_combine(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``V @ U = sum_i u_i v_i`` for a map ``U`` (k,) and values ``V`` (d, k)."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 1 or V.ndim != 2 or V.shape[1] != U.shape[0]:
        raise ShapeMismatch(f"attention_combine: U {U.shape} vs V {V.shape}")
    return V @ U


def softmax_cross_entropy(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed over non-batch positions, averaged over the batch."""
    p = _softmax(logits)
    batch = logits.shape[0]
    picked = np.take_along_axis(p, target[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / batch)
    g = p.copy()
    np.put_along_axis(g, target[..., None], np.take_along_axis(g, target[..., None], -1) - 1.0, -1)
    return loss, g / batch


# ---------------------------------------------------------------------------
# networks


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    lim = np.sqrt(6.0 / n_in)
    return rng.uniform(-lim, lim, size=(n_in, n_out)), np.zeros(n_out)


class Net:
    """Parameter bundle plus a ``build(tape, x) -> logits`` forward definition."""

    def __init__(self):
        self.params: dict = {}
        self.version = 0

    def add_dense(self, rng, name: str, n_in: int, n_out: int) -> None:
        self.params[name + ".W"], self.params[name + ".b"] = init_dense(rng, n_in, n_out)

    def build(self, t: Tape, x: np.ndarray) -> Var:
        raise NotImplementedError

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.params.items()}


@dataclass
class Activations:
    tape: Tape
    logits: np.ndarray
    penalty: float
    noise: dict
    version: int
    mode: str
    output: Var = field(repr=False, default=None)

    @property
    def probs(self) -> np.ndarray:
        return _softmax(self.logits)


def forward(net: Net, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None,
            noise: Mapping[str, np.ndarray] | None = None) -> Activations:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, not {mode!r}")
    t = Tape(net.params, mode == "train", rng, noise)
    out = net.build(t, x)
    return Activations(t, out.value, t.penalty, dict(t.noise), net.version, mode, out)


def backward(net: Net, acts: Activations, target: np.ndarray) -> tuple[float, dict]:
    """Loss ``CE + penalties`` and its exact gradient for every parameter."""
    if acts.version != net.version or acts.tape.params is not net.params:
        raise StaleActivations("parameters changed since the forward pass")
    ce, g = softmax_cross_entropy(acts.logits, target)
    grads = acts.tape.run_backward(acts.output, g)
    return ce + acts.penalty, grads


def loss_value(net: Net, x: np.ndarray, target: np.ndarray, noise: Mapping | None = None,
               mode: str = "train") -> float:
    acts = forward(net, x, mode, noise=noise, rng=np.random.default_rng(0))
    return softmax_cross_entropy(acts.logits, target)[0] + acts.penalty


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: Mapping[str, np.ndarray]) -> dict:
    """Bias-corrected Adam update, in place; returns ``params``."""
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def train_step(net: Net, state: AdamState, x: np.ndarray, target: np.ndarray,
               rng: np.random.Generator) -> float:
    acts = forward(net, x, "train", rng)
    loss, grads = backward(net, acts, target)
    if not np.isfinite(loss):
        raise DivergedLoss(f"loss became {loss}")
    adam_step(state, net.params, grads)
    net.version += 1
    return loss


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: str | None = None


def gradient_check(net: Net, x: np.ndarray, target: np.ndarray, *, step: float = 1e-4,
                   noise: Mapping | None = None, floor: float = 1e-6,
                   max_entries: int | None = None, rng: np.random.Generator | None = None) -> GradCheck:
    """Compare analytic gradients with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  Entries whose
    perturbation flips any ReLU are skipped (the loss is not differentiable
    across the kink) and counted.  ``noise`` replays recorded draws.
    """
    acts = forward(net, x, "train", rng=np.random.default_rng(0), noise=noise or {})
    _, grads = backward(net, acts, target)
    base_masks = acts.tape.relu_masks
    worst, worst_name, checked, skipped = 0.0, None, 0, 0
    pick = rng or np.random.default_rng(0)
    for name, p in net.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(pick.choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            vals, kink = [], False
            for sgn in (1.0, -1.0):
                flat[i] = orig + sgn * step
                a = forward(net, x, "train", rng=np.random.default_rng(0), noise=noise or {})
                if any((m1 != m2).any() for m1, m2 in zip(base_masks, a.tape.relu_masks)):
                    kink = True
                vals.append(softmax_cross_entropy(a.logits, target)[0] + a.penalty)
            flat[i] = orig
            if kink:
                skipped += 1
                continue
            num = (vals[0] - vals[1]) / (2 * step)
            ana = grads[name].reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheck(float(worst), checked, skipped, worst_name)


# ---------------------------------------------------------------------------
# checkpoints and logs


def save_checkpoint(net: Net, path) -> None:
    doc = {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in net.params.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(net: Net, path) -> Net:
    with open(path) as fh:
        doc = json.load(fh)
    for k, entry in doc.items():
        arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        if k not in net.params or net.params[k].shape != arr.shape:
            raise ShapeMismatch(f"checkpoint tensor {k} does not fit the network")
        net.params[k] = arr
    net.version += 1
    return net


def write_training_log(rows, path) -> None:
    """CSV with columns iteration, loss, train_acc, test_acc."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "train_acc", "test_acc"])
        for r in rows:
            w.writerow(r)
