"""ReLU nadir surrogate: training, inference, bounds and serialization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

PAPER_BOX = {"u_d": (0.0, 1.0), "n_ie": (0.0, 3.0), "p_pcc_mw": (-2.0, 2.0)}


class TrainingError(RuntimeError):
    pass


@dataclass
class Layer:
    w: np.ndarray  # (n_in, n_out); rows act on the input, matching x @ W + b
    b: np.ndarray
    act: str = "relu"


@dataclass
class NeuralNet:
    layers: list[Layer]
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.w.shape[1] != b.w.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for lyr in self.layers:
            if lyr.b.shape != (lyr.w.shape[1],):
                raise ValueError("bias length does not match layer width")
        if any(l.act != "relu" for l in self.layers[:-1]) or self.layers[-1].act != "linear":
            raise ValueError("hidden layers must be ReLU and the output linear")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def hidden(self) -> list[Layer]:
        return self.layers[:-1]

    @property
    def n_hidden_neurons(self) -> int:
        return sum(l.w.shape[1] for l in self.hidden)

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self, bounds: "ActivationBounds | None" = None) -> dict:
        d = {
            "feature_names": list(self.feature_names),
            "layers": [{"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act} for l in self.layers],
        }
        if bounds is not None:
            d["bounds"] = {"lo": [v.tolist() for v in bounds.lo],
                           "hi": [v.tolist() for v in bounds.hi],
                           "raw_lo": [v.tolist() for v in bounds.raw_lo],
                           "raw_hi": [v.tolist() for v in bounds.raw_hi],
                           "out": [bounds.out_lo, bounds.out_hi]}
        return d

    def save(self, path, bounds: "ActivationBounds | None" = None, **meta) -> None:
        d = self.to_dict(bounds)
        d.update(meta)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)


def load_weights(path) -> tuple[NeuralNet, "ActivationBounds | None"]:
    with open(path) as fh:
        d = json.load(fh)
    net = NeuralNet([Layer(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float), l["act"])
                     for l in d["layers"]], d.get("feature_names", []))
    bounds = None
    if "bounds" in d:
        bd = d["bounds"]
        out = bd.get("out", [-np.inf, np.inf])
        bounds = ActivationBounds([np.array(v) for v in bd["lo"]], [np.array(v) for v in bd["hi"]],
                                  [np.array(v) for v in bd.get("raw_lo", [])],
                                  [np.array(v) for v in bd.get("raw_hi", [])],
                                  float(out[0]), float(out[1]))
    return net, bounds


def forward(net: NeuralNet, x):
    """Predicted nadir for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = np.atleast_2d(x)
    if z.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got {z.shape[1]}")
    for lyr in net.hidden:
        z = np.maximum(z @ lyr.w + lyr.b, 0.0)
    out = z @ net.layers[-1].w + net.layers[-1].b
    out = out[:, 0] if out.shape[1] == 1 else out
    return float(out[0]) if single and out.ndim == 1 else out


def pre_activations(net: NeuralNet, x) -> list[np.ndarray]:
    z = np.atleast_2d(np.asarray(x, dtype=float))
    zs = []
    for lyr in net.hidden:
        zh = z @ lyr.w + lyr.b
        zs.append(zh)
        z = np.maximum(zh, 0.0)
    return zs


def init_net(sizes: Sequence[int], rng: np.random.Generator) -> NeuralNet:
    """Uniform fan-in scaled initialisation (He-uniform)."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        lim = np.sqrt(6.0 / a)
        act = "linear" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(rng.uniform(-lim, lim, (a, b)), np.zeros(b), act))
    return NeuralNet(layers)


def loss_and_grad(net: NeuralNet, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient w.r.t. every weight and bias."""
    acts = [x]
    pre = []
    z = x
    for lyr in net.hidden:
        zh = z @ lyr.w + lyr.b
        pre.append(zh)
        z = np.maximum(zh, 0.0)
        acts.append(z)
    out = (z @ net.layers[-1].w + net.layers[-1].b)[:, 0]
    r = out - y
    n = len(y)
    loss = float(np.mean(r**2))
    g = (2.0 / n) * r[:, None]
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        lyr = net.layers[i]
        grads.append((acts[i].T @ g, g.sum(axis=0)))
        if i:
            g = (g @ lyr.w.T) * (pre[i - 1] > 0)
    return loss, grads[::-1]


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def fit(cls, x, y):
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0), float(y.mean()), float(y.std() or 1.0))


def fold_normalization(net: NeuralNet, norm: Normalizer) -> NeuralNet:
    """Absorb input z-scoring and output rescaling into the first/last layers."""
    layers = [Layer(l.w.copy(), l.b.copy(), l.act) for l in net.layers]
    first = layers[0]
    first.b = first.b - (norm.mean / norm.scale) @ first.w
    first.w = first.w / norm.scale[:, None]
    last = layers[-1]
    last.w = last.w * norm.y_scale
    last.b = last.b * norm.y_scale + norm.y_mean
    return NeuralNet(layers, list(net.feature_names))


@dataclass
class TrainResult:
    net: NeuralNet
    history: list[float]
    val_history: list[float]
    epochs: int


def train(x_train, y_train, *, x_val=None, y_val=None, hidden: Sequence[int] = (40,),
          epochs: int = 20000, lr: float = 3e-3, seed: int = 0, patience: int = 2000,
          feature_names: Sequence[str] = (), betas=(0.9, 0.999), eps: float = 1e-8,
          log_every: int = 0) -> TrainResult:
    """Full-batch Adam on z-scored data; the returned net takes raw features.

    With a validation set the weights of the best validation epoch are kept
    and training stops after ``patience`` epochs without improvement.
    """
    x_train = np.asarray(x_train, float)
    y_train = np.asarray(y_train, float)
    if len(y_train) == 0:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    norm = Normalizer.fit(x_train, y_train)
    xs = (x_train - norm.mean) / norm.scale
    ys = (y_train - norm.y_mean) / norm.y_scale
    have_val = x_val is not None and len(x_val)
    if have_val:
        xv = (np.asarray(x_val, float) - norm.mean) / norm.scale
        yv = (np.asarray(y_val, float) - norm.y_mean) / norm.y_scale

    net = init_net([x_train.shape[1], *hidden, 1], rng)
    params = [p for l in net.layers for p in (l.w, l.b)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    history, val_history = [], []
    best, best_params, stale = np.inf, [p.copy() for p in params], 0
    ep = 0
    for ep in range(1, epochs + 1):
        loss, grads = loss_and_grad(net, xs, ys)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {ep} (last finite "
                                f"{history[-1] if history else 'n/a'}, lr={lr})")
        history.append(loss * norm.y_scale**2)
        flat = [g for pair in grads for g in pair]
        for p, g, mi, vi in zip(params, flat, m, v):
            mi *= b1
            mi += (1 - b1) * g
            vi *= b2
            vi += (1 - b2) * g * g
            p -= lr * (mi / (1 - b1**ep)) / (np.sqrt(vi / (1 - b2**ep)) + eps)
        if have_val:
            tl = float(np.mean((forward(net, xv) - yv) ** 2))
            val_history.append(tl * norm.y_scale**2)
            if tl < best * (1 - 1e-4):
                best, stale = tl, 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
                if stale >= patience:
                    break
        if log_every and ep % log_every == 0:
            log.info("epoch %d loss %.3e", ep, history[-1])
    if have_val:
        for p, q in zip(params, best_params):
            p[...] = q
    net.feature_names = list(feature_names)
    return TrainResult(fold_normalization(net, norm), history, val_history, ep)


def train_split(x, y, *, val_fraction: float = 0.1, seed: int = 0, **kw) -> TrainResult:
    """Hold out ``val_fraction`` of the given training rows for model selection."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    perm = np.random.default_rng(seed).permutation(len(y))
    k = int(round(val_fraction * len(y)))
    val, fit = np.sort(perm[:k]), np.sort(perm[k:])
    return train(x[fit], y[fit], x_val=x[val], y_val=y[val], seed=seed, **kw)


# --- activation bounds ---------------------------------------------------


@dataclass
class ActivationBounds:
    lo: list[np.ndarray]
    hi: list[np.ndarray]
    # raw interval before widening; a neuron whose interval excludes 0 is stable
    raw_lo: list[np.ndarray] = field(default_factory=list)
    raw_hi: list[np.ndarray] = field(default_factory=list)
    out_lo: float = -np.inf
    out_hi: float = np.inf

    def __post_init__(self):
        for lo, hi in zip(self.lo, self.hi):
            if not (np.all(lo < 0) and np.all(hi > 0) and np.all(np.isfinite(lo))
                    and np.all(np.isfinite(hi))):
                raise ValueError("activation bounds must satisfy lo < 0 < hi and be finite")

    def stable_active(self, m: int) -> np.ndarray:
        return self.raw_lo[m] > 0 if self.raw_lo else np.zeros(len(self.lo[m]), bool)

    def stable_inactive(self, m: int) -> np.ndarray:
        return self.raw_hi[m] < 0 if self.raw_hi else np.zeros(len(self.lo[m]), bool)


def interval_affine(lo, hi, w, b):
    wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
    return lo @ wp + hi @ wn + b, hi @ wp + lo @ wn + b


def activation_bounds(net: NeuralNet, box_lo, box_hi, widen: float = 0.05,
                      clamp: float = 1e-6) -> ActivationBounds:
    """Interval propagation of the input box through every hidden layer.

    Each bound is pushed outward by ``widen`` of its magnitude, then clamped
    so the interval strictly contains zero.
    """
    lo = np.asarray(box_lo, float)
    hi = np.asarray(box_hi, float)
    if lo.shape != (net.n_inputs,) or np.any(lo > hi):
        raise ValueError("input box does not match the network")
    los, his, rlo, rhi = [], [], [], []
    for lyr in net.hidden:
        zl, zh = interval_affine(lo, hi, lyr.w, lyr.b)
        rlo.append(zl)
        rhi.append(zh)
        wl = np.minimum(zl - widen * np.abs(zl), -clamp)
        wh = np.maximum(zh + widen * np.abs(zh), clamp)
        los.append(wl)
        his.append(wh)
        lo, hi = np.maximum(zl, 0.0), np.maximum(zh, 0.0)
    ol, oh = interval_affine(lo, hi, net.layers[-1].w, net.layers[-1].b)
    return ActivationBounds(los, his, rlo, rhi, float(ol[0]), float(oh[0]))


def input_box(net: NeuralNet, n_dsg: int | None = None, n_wtg: int = 3, pcc=(-2.0, 2.0)):
    n_dsg = net.n_inputs - 2 if n_dsg is None else n_dsg
    lo = [0.0] * n_dsg + [0.0, pcc[0]]
    hi = [1.0] * n_dsg + [float(n_wtg), pcc[1]]
    return np.array(lo), np.array(hi)


def evaluate(net: NeuralNet, x, y, min_label: float = 0.1) -> dict:
    """Held-out accuracy.

    Relative error is averaged over rows whose label is at least
    ``min_label`` Hz; rows with near-zero nadir would make it meaningless.
    """
    pred = forward(net, x)
    err = np.abs(pred - y)
    sel = y >= min_label
    return {
        "mae_hz": float(err.mean()),
        "max_abs_hz": float(err.max()),
        "mean_rel": float(np.mean(err[sel] / y[sel])) if sel.any() else 0.0,
        "rmse_hz": float(np.sqrt(np.mean(err**2))),
        "n": int(len(y)),
    }
