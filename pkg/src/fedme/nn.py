"""Minimal feed-forward classifier engine on flat parameter vectors.

Models are plain dataclasses holding a flat float64 parameter vector plus a
momentum buffer of the same shape. All operations are pure: they return new
values and never mutate their arguments, so models can be freely copied,
exchanged, and averaged.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = b"FEDM"
CHECKPOINT_VERSION = 1

LOG_CLAMP = 1e-12


class DimensionError(ValueError):
    """Input shape does not match the model architecture."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer-shape descriptor for a fully connected softmax classifier."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 1 <= len(self.hidden_widths) <= 4:
            raise ValueError(f"expected 1..4 hidden layers, got {len(self.hidden_widths)}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.num_classes)

    def parameter_count(self) -> int:
        widths = self.layer_widths
        return sum((fi + 1) * fo for fi, fo in zip(widths[:-1], widths[1:]))

    def compatible_with(self, other: "ArchitectureSpec") -> bool:
        """Exchange compatibility: only the input/output interface must match."""
        return self.input_dim == other.input_dim and self.num_classes == other.num_classes


@dataclass
class Model:
    arch: ArchitectureSpec
    params: np.ndarray
    momentum_buffer: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        n = self.arch.parameter_count()
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {self.params.shape}")
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros(n)
        else:
            self.momentum_buffer = np.asarray(self.momentum_buffer, dtype=np.float64)
            if self.momentum_buffer.shape != (n,):
                raise ValueError("momentum buffer length does not match parameters")

    def copy(self) -> "Model":
        return Model(self.arch, self.params.copy(), self.momentum_buffer.copy())

    def reset_momentum(self) -> None:
        self.momentum_buffer = np.zeros_like(self.momentum_buffer)


def _layer_slices(arch: ArchitectureSpec):
    """Yield (weight_slice, bias_slice, fan_in, fan_out) per layer in storage order."""
    widths = arch.layer_widths
    offset = 0
    for fi, fo in zip(widths[:-1], widths[1:]):
        w_end = offset + fi * fo
        yield slice(offset, w_end), slice(w_end, w_end + fo), fi, fo
        offset = w_end + fo


def init_model(arch: ArchitectureSpec, seed: int) -> Model:
    """Glorot-uniform weights, zero biases, zero momentum; deterministic by seed."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.parameter_count())
    for w_sl, _b_sl, fi, fo in _layer_slices(arch):
        limit = np.sqrt(6.0 / (fi + fo))
        params[w_sl] = rng.uniform(-limit, limit, fi * fo)
    return Model(arch, params)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(model: Model, features: np.ndarray):
    """Forward pass keeping pre/post-activation values for backprop."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise DimensionError(
            f"expected features of width {model.arch.input_dim}, got shape {X.shape}"
        )
    layers = list(_layer_slices(model.arch))
    acts = [X]
    zs = []
    h = X
    for li, (w_sl, b_sl, fi, fo) in enumerate(layers):
        W = model.params[w_sl].reshape(fo, fi)
        b = model.params[b_sl]
        z = h @ W.T + b
        zs.append(z)
        if li < len(layers) - 1:
            h = _activate(z, model.arch.activation)
            acts.append(h)
    probs = _softmax(zs[-1])
    return probs, acts, zs


def forward(model: Model, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix; each row a softmax distribution."""
    probs, _, _ = _forward_cached(model, features)
    return probs


def _backprop(model: Model, acts, zs, dlogits: np.ndarray) -> np.ndarray:
    """Flat gradient given the gradient of the loss w.r.t. output logits."""
    layers = list(_layer_slices(model.arch))
    grad = np.zeros_like(model.params)
    delta = dlogits
    for li in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, fi, fo = layers[li]
        W = model.params[w_sl].reshape(fo, fi)
        a_prev = acts[li]
        grad[w_sl] = (delta.T @ a_prev).ravel()
        grad[b_sl] = delta.sum(axis=0)
        if li > 0:
            da = delta @ W
            delta = da * _activate_grad(zs[li - 1], acts[li], model.arch.activation)
    return grad


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class, log clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"probs {probs.shape} and labels {labels.shape} do not align")
    m = probs.shape[1]
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def kl_divergence(target: np.ndarray, model_probs: np.ndarray) -> float:
    """Mean over rows of sum_m target * log(target / model_probs)."""
    target = np.asarray(target, dtype=np.float64)
    model_probs = np.asarray(model_probs, dtype=np.float64)
    if target.shape != model_probs.shape:
        raise DimensionError(f"shape mismatch {target.shape} vs {model_probs.shape}")
    t = np.maximum(target, 0.0)
    ratio = np.log(np.maximum(t, LOG_CLAMP)) - np.log(np.maximum(model_probs, LOG_CLAMP))
    per_row = np.where(t > 0.0, t * ratio, 0.0).sum(axis=1)
    return float(per_row.mean())


def dml_losses_and_grads(model_p: Model, model_ex: Model, features: np.ndarray,
                         labels: np.ndarray):
    """Mutual-learning losses and gradients for a pair of models on one batch.

    Each model's loss is cross-entropy plus the KL pull toward the peer's
    predictions; the peer's outputs are treated as constants when
    differentiating, so the two gradients decouple.
    """
    if not model_p.arch.compatible_with(model_ex.arch):
        raise DimensionError("models do not share input_dim / num_classes")
    labels = np.asarray(labels)
    probs_p, acts_p, zs_p = _forward_cached(model_p, features)
    probs_ex, acts_ex, zs_ex = _forward_cached(model_ex, features)
    n = len(labels)
    onehot = np.zeros_like(probs_p)
    onehot[np.arange(n), labels] = 1.0

    loss_p = cross_entropy(probs_p, labels) + kl_divergence(probs_ex, probs_p)
    loss_ex = cross_entropy(probs_ex, labels) + kl_divergence(probs_p, probs_ex)

    # d/dlogits of mean CE is (p - y)/n; of mean KL(t || p) it is (p - t)/n.
    dlogits_p = (2.0 * probs_p - onehot - probs_ex) / n
    dlogits_ex = (2.0 * probs_ex - onehot - probs_p) / n
    grad_p = _backprop(model_p, acts_p, zs_p, dlogits_p)
    grad_ex = _backprop(model_ex, acts_ex, zs_ex, dlogits_ex)
    return loss_p, loss_ex, grad_p, grad_ex


def ce_loss_and_grad(model: Model, features: np.ndarray, labels: np.ndarray):
    """Plain cross-entropy loss and gradient (no mutual-learning term)."""
    labels = np.asarray(labels)
    probs, acts, zs = _forward_cached(model, features)
    n = len(labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    loss = cross_entropy(probs, labels)
    grad = _backprop(model, acts, zs, (probs - onehot) / n)
    return loss, grad


def sgd_step(model: Model, grad: np.ndarray, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> Model:
    """Classical momentum SGD; weight decay is added to the gradient first."""
    grad = np.asarray(grad, dtype=np.float64)
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if grad.shape != model.params.shape:
        raise DimensionError("gradient length does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    buf = momentum * model.momentum_buffer + (grad + weight_decay * model.params)
    return Model(model.arch, model.params - lr * buf, buf)


def average_params(models: list[Model]) -> Model:
    """Element-wise mean of parameters; momentum buffer reset to zero."""
    if not models:
        raise ValueError("cannot average an empty list of models")
    arch = models[0].arch
    if any(m.arch != arch for m in models):
        raise ValueError("cannot average models with different architectures")
    mean = np.mean([m.params for m in models], axis=0)
    return Model(arch, mean)


def evaluate(model: Model, features: np.ndarray, labels: np.ndarray):
    """(mean CE loss, accuracy); argmax ties break toward the smallest class."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty split")
    probs = forward(model, features)
    loss = cross_entropy(probs, labels)
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc


def serialize_model(model: Model) -> bytes:
    """Binary checkpoint: magic | version u16 | activation u8 | layer count u8 |
    widths u32 LE | params f64 LE."""
    widths = model.arch.layer_widths
    header = CHECKPOINT_MAGIC
    header += struct.pack("<H", CHECKPOINT_VERSION)
    header += struct.pack("<B", ACTIVATIONS.index(model.arch.activation))
    header += struct.pack("<B", len(widths))
    header += struct.pack(f"<{len(widths)}I", *widths)
    return header + model.params.astype("<f8").tobytes()


def deserialize_model(data: bytes) -> Model:
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint: bad magic bytes")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    act_code, n_widths = struct.unpack_from("<BB", data, 6)
    if act_code >= len(ACTIVATIONS):
        raise ValueError(f"unknown activation code {act_code}")
    if n_widths < 3:
        raise ValueError(f"checkpoint declares {n_widths} layer widths, need >= 3")
    header_len = 8 + 4 * n_widths
    if len(data) < header_len:
        raise ValueError("truncated checkpoint header")
    widths = struct.unpack_from(f"<{n_widths}I", data, 8)
    arch = ArchitectureSpec(widths[0], tuple(widths[1:-1]), widths[-1],
                            ACTIVATIONS[act_code])
    expected = header_len + 8 * arch.parameter_count()
    if len(data) != expected:
        raise ValueError(f"checkpoint size {len(data)} does not match "
                         f"expected {expected} bytes")
    params = np.frombuffer(data, dtype="<f8", offset=header_len).copy()
    return Model(arch, params)
