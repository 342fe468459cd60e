"""Minimal float64 MLP engine: forward with activation capture, exact backprop, SGD.

Parameters live in a plain ``dict`` (insertion ordered) mapping entry names to
2-D float64 arrays.  Biases are stored as ``(1, width)`` rows so every entry is
a matrix and the checkpoint format only needs one tensor kind.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import _kernels as K
from .errors import (
    ConsistencyError,
    DivergenceError,
    InvalidInputError,
    UndefinedSimilarityError,
)

ParamSet = dict[str, np.ndarray]
GradSet = dict[str, np.ndarray]

ACTIVATIONS = ("relu", "tanh")


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Counter-based (Philox) generator for a named stream of an experiment seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stream.encode())])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MlpArchitecture:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise InvalidInputError("an architecture needs at least input and output widths")
        if any(w < 1 for w in widths):
            raise InvalidInputError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_hidden(self) -> int:
        return self.n_layers - 1

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        for l in range(self.n_layers):
            fan_in, fan_out = self.layer_widths[l], self.layer_widths[l + 1]
            shapes[f"layer{l}.weight"] = (fan_in, fan_out)
            shapes[f"layer{l}.bias"] = (1, fan_out)
        return shapes

    def n_params(self) -> int:
        return sum(r * c for r, c in self.param_shapes().values())


def init_params(arch: MlpArchitecture, seed: int | None = None) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(arch.seed if seed is None else seed, "init")
    params: ParamSet = {}
    for name, (rows, cols) in arch.param_shapes().items():
        if name.endswith(".weight"):
            limit = math.sqrt(6.0 / (rows + cols))
            params[name] = rng.uniform(-limit, limit, size=(rows, cols))
        else:
            params[name] = np.zeros((rows, cols))
    return params


def copy_params(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def zeros_like(params: ParamSet) -> GradSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_layout(params: ParamSet, reference: ParamSet) -> None:
    if list(params) != list(reference):
        raise InvalidInputError(f"entry names differ: {list(params)} vs {list(reference)}")
    for k in params:
        if params[k].shape != reference[k].shape:
            raise InvalidInputError(f"shape mismatch for {k}: {params[k].shape} vs {reference[k].shape}")


def check_arch(params: ParamSet, arch: MlpArchitecture) -> None:
    shapes = arch.param_shapes()
    if list(params) != list(shapes) or any(params[k].shape != s for k, s in shapes.items()):
        raise InvalidInputError("parameter layout does not match the architecture")


def flatten(params: ParamSet) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.values()])


def unflatten(vec: np.ndarray, like: ParamSet) -> ParamSet:
    out, pos = {}, 0
    for k, v in like.items():
        out[k] = vec[pos : pos + v.size].reshape(v.shape).copy()
        pos += v.size
    if pos != vec.size:
        raise InvalidInputError(f"vector length {vec.size} does not match {pos} parameters")
    return out


# --- forward / backward ----------------------------------------------------


@dataclass
class ForwardTrace:
    """Everything backward needs.

    ``per_layer_outputs[l]`` is the post-activation output of layer ``l``; the
    last entry is the logits.
    """

    params: ParamSet
    arch: MlpArchitecture
    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    per_layer_outputs: list[np.ndarray]

    @property
    def logits(self) -> np.ndarray:
        return self.per_layer_outputs[-1]

    def hidden(self, layer: int) -> np.ndarray:
        return self.per_layer_outputs[layer]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward(params: ParamSet, arch: MlpArchitecture, batch: np.ndarray) -> ForwardTrace:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arch.input_width:
        raise InvalidInputError(
            f"batch must be (n, {arch.input_width}), got shape {batch.shape}"
        )
    batch = np.ascontiguousarray(batch)
    pre, outs = [], []
    a = batch
    for l in range(arch.n_layers):
        z = K.affine(a, params[f"layer{l}.weight"], params[f"layer{l}.bias"])
        pre.append(z)
        a = z if l == arch.n_layers - 1 else _activate(z, arch.activation)
        outs.append(a)
    return ForwardTrace(params, arch, batch, pre, outs)


def logits(params: ParamSet, arch: MlpArchitecture, x: np.ndarray) -> np.ndarray:
    return forward(params, arch, x).logits


def predict_proba(params: ParamSet, arch: MlpArchitecture, x: np.ndarray) -> np.ndarray:
    return K.softmax(np.ascontiguousarray(logits(params, arch, x)))


def softmax(z: np.ndarray) -> np.ndarray:
    return K.softmax(np.ascontiguousarray(z, dtype=np.float64))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise InvalidInputError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InvalidInputError(f"labels must lie in [0, {c})")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def soft_cross_entropy(logits: np.ndarray, target_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against soft targets ``-sum p_t log p``."""
    n = logits.shape[0]
    if target_probs.shape != logits.shape:
        raise InvalidInputError("soft targets must match the logits shape")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean((target_probs * log_p).sum(axis=1)))
    grad = (np.exp(log_p) - target_probs) / n
    return loss, grad


def per_example_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return log_z - shifted[np.arange(len(labels)), labels]


def backward(
    trace: ForwardTrace,
    grad_logits: np.ndarray,
    hidden_grads: dict[int, np.ndarray] | None = None,
) -> GradSet:
    """Backpropagate ``grad_logits`` (plus optional gradients injected at hidden outputs)."""
    arch, params = trace.arch, trace.params
    if len(trace.per_layer_outputs) != arch.n_layers:
        raise ConsistencyError("trace depth does not match the architecture")
    if grad_logits.shape != trace.logits.shape:
        raise ConsistencyError(
            f"grad_logits shape {grad_logits.shape} != logits shape {trace.logits.shape}"
        )
    hidden_grads = hidden_grads or {}
    grads: GradSet = {}
    g = np.ascontiguousarray(grad_logits, dtype=np.float64)
    for l in range(arch.n_layers - 1, -1, -1):
        w = params[f"layer{l}.weight"]
        if w.shape[1] != g.shape[1]:
            raise ConsistencyError(f"layer {l} weight does not match the traced output")
        if l < arch.n_layers - 1:
            if l in hidden_grads:
                g = g + hidden_grads[l]
            g = np.ascontiguousarray(
                g * _activation_grad(trace.pre_activations[l], trace.per_layer_outputs[l], arch.activation)
            )
        a_in = trace.inputs if l == 0 else trace.per_layer_outputs[l - 1]
        gw, gb, ga = K.affine_backward(a_in, w, g)
        grads[f"layer{l}.bias"] = gb
        grads[f"layer{l}.weight"] = gw
        g = ga
    return {k: grads[k] for k in params}


# --- optimisation ----------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_factor: float = 1.0
    decay_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay must be non-negative")
        if not 0.0 < self.decay_factor <= 1.0:
            raise InvalidInputError("decay_factor must be in (0, 1]")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; each milestone <= epoch applies one decay."""
        hits = sum(1 for m in self.decay_epochs if m <= epoch)
        return self.learning_rate * self.decay_factor**hits


def sgd_step(
    params: ParamSet,
    grads: GradSet,
    cfg: SgdConfig,
    velocity: GradSet | None = None,
    lr: float | None = None,
) -> tuple[ParamSet, GradSet]:
    """One momentum-SGD update; returns fresh ``(params, velocity)``.

    ``v = momentum * v + grad + weight_decay * theta``; ``theta -= lr * v``.
    """
    lr = cfg.learning_rate if lr is None else lr
    new_p, new_v = {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise InvalidInputError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}", where=name)
        v = g + cfg.weight_decay * theta
        if velocity is not None and cfg.momentum:
            v = cfg.momentum * velocity[name] + v
        new_v[name] = v
        new_p[name] = theta - lr * v
    return new_p, new_v


def global_norm(grads: GradSet) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: GradSet, max_norm: float) -> GradSet:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def add_grads(a: GradSet, b: GradSet, scale: float = 1.0) -> GradSet:
    return {k: a[k] + scale * b[k] for k in a}


# --- parameter statistics --------------------------------------------------


def param_delta(params: ParamSet, reference: ParamSet) -> tuple[dict[str, float], float]:
    """Per-entry change ``||theta_i - ref_i||_2 / size(theta_i)`` and its maximum."""
    check_layout(params, reference)
    deltas = {
        k: float(np.linalg.norm((params[k] - reference[k]).ravel())) / params[k].size
        for k in params
    }
    return deltas, max(deltas.values(), default=0.0)


def l1_norm(params: ParamSet) -> float:
    return float(sum(np.abs(v).sum() for v in params.values()))


def l1_subgradient(params: ParamSet) -> GradSet:
    return {k: np.sign(v) for k, v in params.items()}


def squared_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError("feature vectors must have equal length")
    na, nb = float(a @ a), float(b @ b)
    if na == 0.0 and nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity of two zero vectors is undefined")
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float((a @ b) ** 2 / (na * nb))


# --- training loops --------------------------------------------------------


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    delta_max: float = float("nan")
    lr: float = float("nan")
    early_stop: bool = False


@dataclass
class FitResult:
    params: ParamSet
    log: list[EpochRecord] = field(default_factory=list)


GradHook = Callable[[ParamSet, GradSet], GradSet]


def fit(
    params: ParamSet,
    arch: MlpArchitecture,
    x: np.ndarray,
    y: np.ndarray,
    sgd: SgdConfig,
    epochs: int,
    *,
    batch_size: int = 64,
    seed: int = 0,
    stream: str = "fit",
    phase: str = "train",
    grad_hook: GradHook | None = None,
    on_epoch: Callable[[int, ParamSet], None] | None = None,
) -> FitResult:
    """Mini-batch cross-entropy training.

    ``grad_hook`` may add regularisers; ``on_epoch(epoch, params)`` sees the
    parameters after every epoch (1-based).
    """
    params = copy_params(params)
    log: list[EpochRecord] = []
    if epochs <= 0 or len(y) == 0:
        return FitResult(params, log)
    rng = make_rng(seed, stream)
    velocity = zeros_like(params)
    for epoch in range(epochs):
        lr = sgd.lr_at(epoch)
        total, count = 0.0, 0
        for idx in minibatches(len(y), batch_size, rng):
            trace = forward(params, arch, x[idx])
            loss, g = cross_entropy(trace.logits, y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss in {phase} epoch {epoch + 1}", where=phase)
            grads = backward(trace, g)
            if grad_hook is not None:
                grads = grad_hook(params, grads)
            params, velocity = sgd_step(params, grads, sgd, velocity, lr=lr)
            total += loss * len(idx)
            count += len(idx)
        log.append(EpochRecord(epoch + 1, phase, total / count, lr=lr))
        if on_epoch is not None:
            on_epoch(epoch + 1, params)
    return FitResult(params, log)


def mean_loss(params: ParamSet, arch: MlpArchitecture, x: np.ndarray, y: np.ndarray) -> float:
    loss, _ = cross_entropy(logits(params, arch, x), y)
    return loss
