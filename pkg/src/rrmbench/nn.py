"""From-scratch feedforward/convolutional network trainer.

Dense and 2-D convolution layers with a fixed activation menu, exact
reverse-mode gradients, mini-batch Adam, validation-gated snapshots with a
three-criterion stopping rule, and the custom training losses: a squared
budget-overshoot penalty added to MSE, and an unsupervised negative-sum-rate
loss for the multi-cell model that needs no labels.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import optim

LEAKY_SLOPE = 0.01
CHECKPOINT_FORMAT = "rrmbench-weights-v1"


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    filters: int
    kernel: tuple[int, int] = (2, 3)
    padding: str = "valid"


@dataclass(frozen=True)
class Activation:
    kind: str  # relu | leaky_relu | sigmoid | linear

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "sigmoid", "linear"):
            raise ValueError(f"unknown activation {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple

    def __init__(self, layers):
        object.__setattr__(self, "layers", tuple(layers))

    def to_json(self) -> str:
        enc = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                enc.append(["dense", layer.in_dim, layer.out_dim])
            elif isinstance(layer, Conv2d):
                enc.append(["conv2d", layer.in_channels, layer.filters,
                            list(layer.kernel), layer.padding])
            else:
                enc.append(["act", layer.kind])
        return json.dumps(enc)

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        layers = []
        for item in json.loads(text):
            if item[0] == "dense":
                layers.append(Dense(item[1], item[2]))
            elif item[0] == "conv2d":
                layers.append(Conv2d(item[1], item[2], tuple(item[3]), item[4]))
            else:
                layers.append(Activation(item[1]))
        return ModelSpec(layers)


def mlp(dims, hidden_act="relu", out_act="leaky_relu") -> ModelSpec:
    """Fully connected stack: dims = (in, h1, ..., out)."""
    layers = []
    for i in range(len(dims) - 1):
        layers.append(Dense(dims[i], dims[i + 1]))
        last = i == len(dims) - 2
        kind = out_act if last else hidden_act
        if kind != "linear":
            layers.append(Activation(kind))
    return ModelSpec(layers)


def init_weights(spec: ModelSpec, rng: np.random.Generator,
                 scheme: str = "glorot") -> list:
    """Per-layer parameter dicts. ``glorot`` draws uniform in
    +-sqrt(6/(fan_in+fan_out)); ``unit_interval`` draws in [0, 1] scaled by
    1/fan_in so deep stacks do not saturate."""
    params = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            fan_in, fan_out = layer.in_dim, layer.out_dim
            shape = (fan_in, fan_out)
        elif isinstance(layer, Conv2d):
            kh, kw = layer.kernel
            fan_in = layer.in_channels * kh * kw
            fan_out = layer.filters * kh * kw
            shape = (layer.filters, layer.in_channels, kh, kw)
        else:
            params.append({})
            continue
        if scheme == "glorot":
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=shape)
        elif scheme == "unit_interval":
            w = rng.uniform(0.0, 1.0, size=shape) / fan_in
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        b = np.zeros(layer.out_dim if isinstance(layer, Dense) else layer.filters)
        params.append({"w": w, "b": b})
    return params


def clone_weights(weights: list) -> list:
    return [{k: v.copy() for k, v in layer.items()} for layer in weights]


def flatten_params(weights: list) -> np.ndarray:
    parts = []
    for layer in weights:
        for key in sorted(layer):
            parts.append(layer[key].ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def set_flat_params(weights: list, flat: np.ndarray):
    pos = 0
    for layer in weights:
        for key in sorted(layer):
            size = layer[key].size
            layer[key][...] = flat[pos: pos + size].reshape(layer[key].shape)
            pos += size


# ---------------------------------------------------------------------------
# forward / backward


def _same_pads(k):
    return (k - 1) // 2, k - 1 - (k - 1) // 2


def _corr2d(x, w):
    win = sliding_window_view(x, w.shape[2:], axis=(2, 3))
    return np.einsum("bchwpq,fcpq->bfhw", win, w, optimize=True)


def _activation(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if kind == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(kind, z, out):
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(z)


def forward_cached(spec: ModelSpec, weights: list, x: np.ndarray):
    """Run the network, keeping the per-layer inputs needed for backprop."""
    caches = []
    out = np.asarray(x, dtype=float)
    for layer, params in zip(spec.layers, weights):
        if isinstance(layer, Dense):
            if out.ndim > 2:
                shape_before = out.shape
                out = out.reshape(out.shape[0], -1)
            else:
                shape_before = None
            if out.shape[1] != layer.in_dim:
                raise ValueError(
                    f"dense layer expects {layer.in_dim} features, got {out.shape[1]}")
            caches.append(("dense", out, shape_before))
            out = out @ params["w"] + params["b"]
        elif isinstance(layer, Conv2d):
            if out.ndim != 4 or out.shape[1] != layer.in_channels:
                raise ValueError(
                    f"conv layer expects (batch, {layer.in_channels}, H, W), got {out.shape}")
            if layer.padding == "same":
                ph, pw = _same_pads(layer.kernel[0]), _same_pads(layer.kernel[1])
                padded = np.pad(out, ((0, 0), (0, 0), ph, pw))
            elif layer.padding == "valid":
                padded = out
            else:
                raise ValueError(f"unknown padding {layer.padding!r}")
            caches.append(("conv", padded, out.shape))
            out = _corr2d(padded, params["w"]) + params["b"][None, :, None, None]
        else:
            caches.append(("act", out, None))
            out = _activation(layer.kind, out)
    return out, caches


def forward(spec: ModelSpec, weights: list, x: np.ndarray) -> np.ndarray:
    return forward_cached(spec, weights, x)[0]


def backward(spec: ModelSpec, weights: list, caches: list, d_out: np.ndarray):
    """Reverse-mode pass; returns per-layer gradients matching ``weights``."""
    grads = [dict() for _ in weights]
    grad = d_out
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        kind, cached, extra = caches[i]
        if kind == "dense":
            grads[i]["w"] = cached.T @ grad
            grads[i]["b"] = grad.sum(axis=0)
            grad = grad @ weights[i]["w"].T
            if extra is not None:
                grad = grad.reshape(extra)
        elif kind == "conv":
            padded, in_shape = cached, extra
            w = weights[i]["w"]
            kh, kw = layer.kernel
            win = sliding_window_view(padded, grad.shape[2:], axis=(2, 3))
            grads[i]["w"] = np.einsum("bcpqhw,bfhw->fcpq", win, grad, optimize=True)
            grads[i]["b"] = grad.sum(axis=(0, 2, 3))
            gp = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            win = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            dpad = np.einsum("bfhwpq,fcpq->bchw", win, w[:, :, ::-1, ::-1], optimize=True)
            if layer.padding == "same":
                (pt, pb), (pl, pr) = _same_pads(kh), _same_pads(kw)
                grad = dpad[:, :, pt: dpad.shape[2] - pb, pl: dpad.shape[3] - pr]
            else:
                grad = dpad
            if grad.shape != in_shape:
                raise AssertionError("conv backward shape mismatch")
        else:
            z = cached
            grad = grad * _activation_grad(layer.kind, z, _activation(layer.kind, z))
    return grads


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class MseLoss:
    def value_and_grad(self, pred, target):
        diff = pred - target
        n = pred.shape[0]
        return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass(frozen=True)
class BceLoss:
    eps: float = 1e-7

    def value_and_grad(self, pred, target):
        p = np.clip(pred, self.eps, 1.0 - self.eps)
        n = pred.shape[0]
        value = float(-np.sum(target * np.log(p) + (1 - target) * np.log(1 - p)) / n)
        inside = (pred > self.eps) & (pred < 1.0 - self.eps)
        grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / n
        return value, grad


@dataclass(frozen=True)
class PowerViolationLoss:
    """Squared error plus a per-BS squared overshoot of the total power
    budget, weighted by ``beta``.  Only totals above the budget are
    penalized; staying below it is already feasible."""

    beta: float
    p_max: float
    num_groups: int = 1

    def value_and_grad(self, pred, target):
        n = pred.shape[0]
        grouped = pred.reshape(n, self.num_groups, -1)
        diff = pred - target
        excess = np.maximum(grouped.sum(axis=2) - self.p_max, 0.0)  # (n, groups)
        value = float((np.sum(diff * diff) + self.beta * np.sum(excess ** 2)) / n)
        grad = 2.0 * diff / n
        grad = grad + np.repeat(2.0 * self.beta * excess / n,
                                grouped.shape[2], axis=1).reshape(pred.shape)
        return value, grad


@dataclass(frozen=True)
class SumRateBudgetLoss:
    """Label-free loss for the multi-cell model: negative sum rate plus the
    budget penalty, evaluated on network outputs scaled into powers.

    ``target`` is (gain_sq, alpha) with shapes (batch, B, U, N); network
    outputs are reshaped likewise, scaled by ``power_scale``, and masked to
    the served (b, u) slots (the ones with a positive load share).
    """

    beta: float
    p_max: float
    sigma2: float
    dims: tuple[int, int, int]  # (B, U, N)
    power_scale: float

    def value_and_grad(self, pred, target):
        gain_sq, alpha = target
        n = pred.shape[0]
        B, U, N = self.dims
        mask = (alpha > 0).astype(float)
        p = (pred.reshape(n, B, U, N) * self.power_scale) * mask
        total = 0.0
        grad_p = np.empty_like(p)
        for i in range(n):
            rate, grate = optim.sm3_objective_grad(p[i], gain_sq[i], alpha[i], self.sigma2)
            excess = np.maximum(p[i].sum(axis=(1, 2)) - self.p_max, 0.0)  # per BS
            total += -rate + self.beta * np.sum(excess ** 2)
            grad_p[i] = -grate + 2.0 * self.beta * excess[:, None, None]
        grad = (grad_p * mask * (self.power_scale / n)).reshape(pred.shape)
        return float(total / n), grad


def loss_and_grad(spec: ModelSpec, weights: list, x, target, loss):
    """Mean batch loss and its exact gradient for every parameter."""
    out, caches = forward_cached(spec, weights, x)
    value, d_out = loss.value_and_grad(out, target)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")
    return value, backward(spec, weights, caches, d_out)


# ---------------------------------------------------------------------------
# optimizer and training loop


@dataclass(frozen=True)
class AdamParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    def __init__(self, weights: list):
        self.m = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in weights]
        self.v = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in weights]
        self.t = 0


def adam_step(weights: list, grads: list, state: AdamState, hyper: AdamParams):
    """Bias-corrected first/second-moment update, in place."""
    state.t += 1
    c1 = 1.0 - hyper.beta1 ** state.t
    c2 = 1.0 - hyper.beta2 ** state.t
    for layer_w, layer_g, m, v in zip(weights, grads, state.m, state.v):
        for key in layer_w:
            g = layer_g[key]
            m[key] = hyper.beta1 * m[key] + (1 - hyper.beta1) * g
            v[key] = hyper.beta2 * v[key] + (1 - hyper.beta2) * g * g
            layer_w[key] -= hyper.lr * (m[key] / c1) / (np.sqrt(v[key] / c2) + hyper.eps)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    min_delta: float = 1e-6
    patience: int = 50
    adam: AdamParams = field(default_factory=AdamParams)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.min_delta > 0:
            raise ValueError("min_delta must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class FitResult:
    weights: list
    history: list  # rows: {epoch, train_loss, val_loss, wall_time}
    train_seconds: float
    best_epoch: int
    stop_reason: str


def evaluate_loss(spec, weights, x, target, loss, batch_size=512):
    """Mean per-sample loss over a whole set, streamed in chunks."""
    n = x.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = forward(spec, weights, x[lo:hi])
        chunk_target = (
            tuple(t[lo:hi] for t in target) if isinstance(target, tuple) else target[lo:hi])
        value, _ = loss.value_and_grad(out, chunk_target)
        total += value * (hi - lo)
    return total / n


def _index_target(target, idx):
    if isinstance(target, tuple):
        return tuple(t[idx] for t in target)
    return target[idx]


def fit(spec: ModelSpec, train, val, cfg: TrainConfig, loss,
        weights: list | None = None, init_scheme: str = "glorot") -> FitResult:
    """Mini-batch training with per-epoch validation.

    Keeps the best-validation snapshot; stops when the epoch-to-epoch change
    in validation loss stays below ``min_delta`` for ``patience`` consecutive
    epochs, or at ``max_epochs``.
    """
    x_train, y_train = train
    x_val, y_val = val
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    if weights is None:
        weights = init_weights(spec, rng, scheme=init_scheme)
    state = AdamState(weights)
    t_start = time.perf_counter()

    prev_val = evaluate_loss(spec, weights, x_val, y_val, loss)
    best_val, best_weights, best_epoch = prev_val, clone_weights(weights), 0
    history = []
    streak = 0
    stop_reason = "max_epochs"
    n = x_train.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        running, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo: lo + cfg.batch_size]
            value, grads = loss_and_grad(
                spec, weights, x_train[idx], _index_target(y_train, idx), loss)
            adam_step(weights, grads, state, cfg.adam)
            running += value * len(idx)
            seen += len(idx)
        val_loss = evaluate_loss(spec, weights, x_val, y_val, loss)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss diverged at epoch {epoch}")
        history.append({
            "epoch": epoch,
            "train_loss": running / seen,
            "val_loss": val_loss,
            "wall_time": time.perf_counter() - t_start,
        })
        if val_loss < best_val:
            best_val, best_weights, best_epoch = val_loss, clone_weights(weights), epoch
        streak = streak + 1 if abs(val_loss - prev_val) <= cfg.min_delta else 0
        prev_val = val_loss
        if streak >= cfg.patience:
            stop_reason = "converged"
            break
    return FitResult(weights=best_weights, history=history,
                     train_seconds=time.perf_counter() - t_start,
                     best_epoch=best_epoch, stop_reason=stop_reason)


# ---------------------------------------------------------------------------
# prediction and feasibility projection


def project_feasible(outputs: np.ndarray, p_max: float, num_groups: int = 1) -> np.ndarray:
    """Map raw power predictions into the feasible set: negatives clipped to
    zero, then each group uniformly down-scaled when its total exceeds the
    budget."""
    n = outputs.shape[0]
    p = np.maximum(outputs, 0.0).reshape(n, num_groups, -1)
    totals = p.sum(axis=2, keepdims=True)
    scale = np.where(totals > p_max, p_max / np.maximum(totals, 1e-300), 1.0)
    return (p * scale).reshape(outputs.shape)


def predict_batch(spec: ModelSpec, weights: list, x: np.ndarray,
                  p_max: float | None = None, num_groups: int = 1):
    """Forward pass over a set; returns (outputs, mean seconds per sample).
    When ``p_max`` is given the outputs are projected onto the per-BS
    feasible set first."""
    t0 = time.perf_counter()
    out = forward(spec, weights, x)
    elapsed = time.perf_counter() - t0
    if p_max is not None:
        out = project_feasible(out, p_max, num_groups=num_groups)
    return out, elapsed / max(1, x.shape[0])


# ---------------------------------------------------------------------------
# input normalization and checkpoints


@dataclass
class GainNormalizer:
    """Normalization of squared channel gains fed to the networks.

    ``db_standard`` converts to dB and standardizes per feature with
    training-set statistics; ``linear_mean`` divides the linear gains by the
    training set's global mean, the literal "normalized channel gain"
    reading.  Both freeze their constants at fit time, so a distribution
    shift between training and serving shows up as shifted features.
    """

    kind: str = "db_standard"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @staticmethod
    def to_db(gains_sq: np.ndarray) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(gains_sq, 1e-30))

    def fit(self, gains_sq: np.ndarray) -> "GainNormalizer":
        flat = gains_sq.reshape(gains_sq.shape[0], -1)
        if self.kind == "db_standard":
            feats = self.to_db(flat)
            self.mean = feats.mean(axis=0)
            self.std = np.maximum(feats.std(axis=0), 1e-9)
        elif self.kind == "linear_mean":
            self.mean = np.array([flat.mean()])
            self.std = np.array([1.0])
        else:
            raise ValueError(f"unknown normalizer kind {self.kind!r}")
        return self

    def transform(self, gains_sq: np.ndarray) -> np.ndarray:
        flat = gains_sq.reshape(gains_sq.shape[0], -1)
        if self.kind == "db_standard":
            return (self.to_db(flat) - self.mean) / self.std
        return flat / self.mean[0]


def save_checkpoint(path, spec: ModelSpec, weights: list,
                    normalizer: GainNormalizer | None = None, extra: dict | None = None):
    meta = {"format": CHECKPOINT_FORMAT, "spec": spec.to_json(), "extra": extra or {}}
    if normalizer is not None:
        meta["norm_kind"] = normalizer.kind
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(weights):
        for key, value in layer.items():
            arrays[f"layer{i}_{key}"] = value
    if normalizer is not None and normalizer.mean is not None:
        arrays["norm_mean"] = normalizer.mean
        arrays["norm_std"] = normalizer.std
    np.savez(path, **arrays)


def load_checkpoint(path):
    data = np.load(path)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
    spec = ModelSpec.from_json(meta["spec"])
    weights = []
    for i, layer in enumerate(spec.layers):
        entry = {}
        for key in ("w", "b"):
            name = f"layer{i}_{key}"
            if name in data:
                entry[key] = data[name]
        weights.append(entry)
    normalizer = None
    if "norm_mean" in data:
        normalizer = GainNormalizer(kind=meta.get("norm_kind", "db_standard"),
                                    mean=data["norm_mean"], std=data["norm_std"])
    return spec, weights, normalizer, meta["extra"]


# ---------------------------------------------------------------------------
# architecture presets


def preset_model(name: str, num_bs: int, num_users: int, num_subcarriers: int,
                 hidden_layers: int | None = None, actions: int | None = None) -> ModelSpec:
    """Named architectures used by the case studies."""
    N, U, B = num_subcarriers, num_users, num_bs
    if name == "sm1":
        dims = (N,) + (300,) * 5 + (N,)
        return mlp(dims)
    if name == "sm1-desk":
        layers = hidden_layers if hidden_layers is not None else 3
        dims = (N,) + (100,) * layers + (N,)
        return mlp(dims)
    if name == "model-a":
        return mlp((U * N, 200, U * N), out_act="sigmoid")
    if name == "model-b":
        return mlp((N, 100, 100, 100, N))
    if name == "sm2b":
        return mlp((U * U, 200, 80, 50, U))
    if name == "dqn":
        return mlp((3 * U, 128, 128, 128, actions), out_act="linear")
    if name == "sm3-conv":
        width = N + 1  # gain columns plus the connectivity column
        layers = [Conv2d(B, N, (2, 3), padding="same"), Activation("relu")]
        for _ in range(3):
            layers += [Conv2d(N, N, (2, 3), padding="same"), Activation("relu")]
        layers += [Dense(N * U * width, B * U * N), Activation("sigmoid")]
        return ModelSpec(layers)
    raise ValueError(f"unknown preset {name!r}")
