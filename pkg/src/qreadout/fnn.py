"""Small feed-forward discriminator (ReLU hidden layers, sigmoid output)
trained with binary cross-entropy and Adam, plus the shift-friendly input
scaler shared with the fixed-point path."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ReadoutError
from .metrics import fidelity

DEFAULT_LAYERS = (2, 8, 4, 1)
BCE_EPS = 1e-12


@dataclass(frozen=True)
class Architecture:
    layer_sizes: tuple[int, ...] = DEFAULT_LAYERS

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or sizes[0] != 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise ReadoutError(f"invalid architecture {sizes}: need 2 inputs, 1 output")

    @property
    def n_weights(self) -> int:
        return sum(a * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_biases(self) -> int:
        return sum(self.layer_sizes[1:])

    @property
    def n_params(self) -> int:
        return self.n_weights + self.n_biases


@dataclass
class FnnParams:
    weights: list[np.ndarray]   # (out, in) per layer
    biases: list[np.ndarray]

    @property
    def arch(self) -> Architecture:
        return Architecture(tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]))

    def copy(self) -> "FnnParams":
        return FnnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (*self.weights, *self.biases)])

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.arch.layer_sizes),
            "layers": [{"weights": w.tolist(), "biases": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FnnParams":
        ws = [np.asarray(l["weights"], dtype=float) for l in d["layers"]]
        bs = [np.asarray(l["biases"], dtype=float) for l in d["layers"]]
        p = cls(ws, bs)
        if list(p.arch.layer_sizes) != list(d["layer_sizes"]):
            raise ReadoutError("layer_sizes do not match stored weight shapes")
        return p

    @classmethod
    def zeros(cls, arch: Architecture = Architecture()) -> "FnnParams":
        s = arch.layer_sizes
        return cls([np.zeros((o, i)) for i, o in zip(s[:-1], s[1:])],
                   [np.zeros(o) for o in s[1:]])


def init_params(arch: Architecture, rng: np.random.Generator) -> FnnParams:
    """Glorot-uniform weights, zero biases."""
    s = arch.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return FnnParams(ws, bs)


# --- scaler ------------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    mu: tuple[float, float]
    n: tuple[int, int]

    def to_dict(self) -> dict:
        return {"mu": list(self.mu), "n": list(self.n)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(float(v) for v in d["mu"]), tuple(int(v) for v in d["n"]))


def scaler_fit(iq: np.ndarray) -> ScalerParams:
    """Channel means and the power of two nearest each channel's peak
    deviation from its mean."""
    iq = np.asarray(iq, dtype=float)
    if iq.ndim != 2 or iq.shape[1] != 2 or len(iq) == 0:
        raise ReadoutError("scaler needs a nonempty (n, 2) IQ array")
    mu, n = [], []
    for c in range(2):
        m = float(iq[:, c].mean())
        peak = float(np.max(np.abs(iq[:, c] - m)))
        if not peak > 0:
            raise ReadoutError(f"channel {'IQ'[c]} has zero spread")
        mu.append(m)
        n.append(max(1, int(round(math.log2(peak)))))
    return ScalerParams(tuple(mu), tuple(n))


def scaler_apply(p: ScalerParams, iq) -> np.ndarray:
    """(value - mu + 2**n) / 2**(n+1) per channel."""
    iq = np.asarray(iq, dtype=float)
    mu = np.asarray(p.mu)
    span = np.array([2.0 ** k for k in p.n])
    return (iq - mu + span) / (2.0 * span)


# --- network -----------------------------------------------------------------

def sigmoid(z):
    # split by sign to avoid overflow in exp
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(params: FnnParams, x: np.ndarray):
    acts = [x]
    pre = []
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = sigmoid(z) if k == last else np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def logits(params: FnnParams, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pre, _ = _forward_cache(params, x)
    return pre[-1][:, 0]


def forward(params: FnnParams, x) -> np.ndarray | float:
    """Output probability for one 2-vector or a (batch, 2) array."""
    arr = np.asarray(x, dtype=float)
    p = sigmoid(logits(params, arr))
    return float(p[0]) if arr.ndim == 1 else p


def predict(params: FnnParams, x) -> np.ndarray:
    # sigmoid(z) > 0.5 iff z > 0; exactly 0.5 stays ground
    return (logits(params, x) > 0).astype(np.int64)


def bce_loss(p, y) -> float | np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=float)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss) if loss.ndim == 0 else loss


def batch_loss(params: FnnParams, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(bce_loss(forward(params, np.atleast_2d(x)), y)))


def grad(params: FnnParams, x: np.ndarray, y: np.ndarray) -> tuple[FnnParams, float]:
    """Gradient of the mean BCE over the batch. Returns (grads, loss).

    Inside the clamp the sigmoid+BCE derivative w.r.t. the output logit is
    ``p - y``; where the clamp is active the loss is flat in the logit.
    """
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    pre, acts = _forward_cache(params, x)
    p = acts[-1][:, 0]
    loss = float(np.mean(bce_loss(p, y)))
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    delta = (((p - y) * inside) / len(y))[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0)
    return FnnParams(gw, gb), loss


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: FnnParams, grads: FnnParams) -> FnnParams:
    """In-place bias-corrected Adam update; also returns ``params``."""
    tensors = params.weights + params.biases
    gs = grads.weights + grads.biases
    if not state.m:
        state.m = [np.zeros_like(a) for a in tensors]
        state.v = [np.zeros_like(a) for a in tensors]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for a, g, m, v in zip(tensors, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.6
    patience: int = 5
    min_rel_improvement: float = 1e-5
    seed: int = 7

    def __post_init__(self):
        if self.batch_size < 1:
            raise ReadoutError("batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ReadoutError("train_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    test_fidelity: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,test_fidelity"]
        rows += [f"{k + 1},{l!r},{f!r}" for k, (l, f) in
                 enumerate(zip(self.train_loss, self.test_fidelity))]
        return "\n".join(rows) + "\n"


def split_dataset(x: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    """Seeded shuffle then a train/test split; sizes sum to the dataset size."""
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x))
    n_train = int(round(cfg.train_fraction * len(x)))
    tr, te = order[:n_train], order[n_train:]
    return x[tr], y[tr], x[te], y[te]


def train(x: np.ndarray, y: np.ndarray, arch: Architecture = Architecture(),
          cfg: TrainConfig = TrainConfig(), test: tuple | None = None
          ) -> tuple[FnnParams, History]:
    """Train on pre-scaled inputs ``x`` (n, 2) with labels ``y``.

    Without ``test`` the data is split per ``cfg.train_fraction``; with it,
    all of ``x`` is used for training and ``test = (x_test, y_test)`` only
    feeds the per-epoch fidelity. Early stop once the epoch loss improved by
    less than ``min_rel_improvement`` (relative) over the last ``patience``
    epochs.
    """
    if len(x) == 0:
        raise ReadoutError("empty dataset")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if test is None:
        xtr, ytr, xte, yte = split_dataset(x, y, cfg)
    else:
        xtr, ytr = x, y
        xte, yte = np.asarray(test[0], dtype=float), np.asarray(test[1])
    rng = np.random.default_rng(cfg.seed + 1)
    params = init_params(arch, rng)
    adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    hist = History()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xtr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            g, loss = grad(params, xtr[idx], ytr[idx])
            adam_step(adam, params, g)
            total += loss * len(idx)
        hist.train_loss.append(total / len(xtr))
        if len(xte) and len(np.unique(yte)) == 2:
            hist.test_fidelity.append(fidelity(yte, predict(params, xte)).avg)
        else:
            hist.test_fidelity.append(float("nan"))
        losses = hist.train_loss
        if len(losses) > cfg.patience:
            ref = losses[-1 - cfg.patience]
            if ref > 0 and (ref - losses[-1]) / ref < cfg.min_rel_improvement:
                break
    return params, hist


# --- persistence -------------------------------------------------------------

def model_json(params: FnnParams, scaler: ScalerParams) -> str:
    d = params.to_dict()
    d["scaler"] = scaler.to_dict()
    return json.dumps(d, sort_keys=True, indent=1) + "\n"


def save_model(path: str | Path, params: FnnParams, scaler: ScalerParams) -> None:
    Path(path).write_text(model_json(params, scaler))


def load_model(path: str | Path) -> tuple[FnnParams, ScalerParams]:
    d = json.loads(Path(path).read_text())
    return FnnParams.from_dict(d), ScalerParams.from_dict(d["scaler"])
