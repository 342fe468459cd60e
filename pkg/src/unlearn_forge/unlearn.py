"""Unlearning algorithms.

Baselines: exact retraining, fine-tuning on the retained set (FT), gradient
ascent on the forget set (GA), random relabelling (RL) and l1-sparse
fine-tuning.  ``our`` is the two-phase orthogonal-unlearning-and-replay
method: phase 1 drives the hidden features of forgotten examples orthogonal
to their pre-unlearning values under a parameter-change guard, phase 2
replays the retained set with l1 regularisation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import UnlearnSplit
from .errors import ConfigError, DivergenceError, InvalidInputError
from .nn import (
    EpochRecord,
    MlpArchitecture,
    ParamSet,
    SgdConfig,
    add_grads,
    backward,
    clip_by_global_norm,
    copy_params,
    cross_entropy,
    fit,
    forward,
    init_params,
    l1_subgradient,
    make_rng,
    mean_loss,
    minibatches,
    param_delta,
    sgd_step,
    squared_cosine,
    zeros_like,
)

log = logging.getLogger(__name__)

METHODS = ("retrain", "ft", "ga", "rl", "l1_sparse", "our")
ORTH_VARIANTS = ("inner", "l2")
DEFAULT_DELTA_THRESHOLD = 5e-3


@dataclass(frozen=True)
class UnlearnConfig:
    method: str
    epochs_phase1: int = 5
    epochs_phase2: int = 0
    sgd_phase1: SgdConfig = field(default_factory=lambda: SgdConfig(0.01))
    sgd_phase2: SgdConfig | None = None
    delta_threshold: float = DEFAULT_DELTA_THRESHOLD
    orth_layers: tuple[int, ...] = ()
    l1_lambda: float = 1e-5
    seed: int = 0
    batch_size: int = 64
    orth_variant: str = "inner"
    normalize_features: bool = True
    guard_per_batch: bool = False
    ga_clip: float = 10.0
    exact_orth_grad: bool = False

    def __post_init__(self):
        object.__setattr__(self, "orth_layers", tuple(int(l) for l in self.orth_layers))
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", "method")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ConfigError("epoch counts must be non-negative", "epochs")
        if not self.delta_threshold >= 0:
            raise ConfigError("delta_threshold must be non-negative", "delta_threshold")
        if self.l1_lambda < 0:
            raise ConfigError("l1_lambda must be non-negative", "l1_lambda")
        if self.orth_variant not in ORTH_VARIANTS:
            raise ConfigError(f"orth_variant must be one of {ORTH_VARIANTS}", "orth_variant")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "batch_size")

    @property
    def replay_sgd(self) -> SgdConfig:
        return self.sgd_phase2 or self.sgd_phase1


@dataclass
class UnlearnOutcome:
    final_params: ParamSet
    rte_seconds: float
    phase_log: list[EpochRecord]
    method_tag: str

    def write_phase_log(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "phase", "loss", "delta_max", "lr"])
            for r in self.phase_log:
                w.writerow([r.epoch, r.phase, repr(r.loss), repr(r.delta_max), repr(r.lr)])

    def save(self, directory: str | os.PathLike, arch: MlpArchitecture, stem: str | None = None) -> Path:
        """Checkpoint, ``.json`` sidecar with the method tag, and phase-log CSV."""
        directory = Path(directory)
        stem = stem or f"unlearn_{self.method_tag}"
        ckpt = checkpoint.save(directory / f"{stem}.ufck", self.final_params, arch)
        (directory / f"{stem}.json").write_text(
            json.dumps({"method_tag": self.method_tag, "checkpoint": ckpt.name}, indent=1) + "\n"
        )
        self.write_phase_log(directory / f"{stem}_phases.csv")
        return ckpt


def default_orth_layers(arch: MlpArchitecture) -> tuple[int, ...]:
    """First, middle and last hidden layers (deduplicated)."""
    h = arch.n_hidden
    if h < 1:
        raise InvalidInputError("orthogonal unlearning needs at least one hidden layer")
    return tuple(sorted({0, (h - 1) // 2, h - 1}))


def random_model_delta(arch: MlpArchitecture, seed: int = 0) -> float:
    """Max per-entry change between two independently initialised models.

    Alternative, data-free way of setting the phase-1 guard threshold.
    """
    a = init_params(arch, make_rng(seed, "delta-a").integers(2**62))
    b = init_params(arch, make_rng(seed, "delta-b").integers(2**62))
    return param_delta(a, b)[1]


def _resolve_layers(arch: MlpArchitecture, layers: tuple[int, ...]) -> tuple[int, ...]:
    layers = layers or default_orth_layers(arch)
    for l in layers:
        if not 0 <= l < arch.n_hidden:
            raise InvalidInputError(f"orth layer {l} is not a hidden layer index (0..{arch.n_hidden - 1})")
    return layers


def _initial_record(phase: str, loss: float, lr: float = float("nan")) -> EpochRecord:
    return EpochRecord(0, phase, loss, 0.0, lr)


def _check_loss(loss: float, phase: str, epoch: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss in {phase} epoch {epoch}", where=phase)


# --- baselines -------------------------------------------------------------


def retrain(
    arch: MlpArchitecture,
    split: UnlearnSplit,
    sgd: SgdConfig,
    epochs: int,
    seed: int,
    batch_size: int = 64,
) -> UnlearnOutcome:
    start = time.perf_counter()
    params = init_params(arch, seed)
    r = split.retained
    head = _initial_record("retrain", mean_loss(params, arch, r.features, r.labels), sgd.lr_at(0))
    res = fit(params, arch, r.features, r.labels, sgd, epochs,
              batch_size=batch_size, seed=seed, stream="retrain", phase="retrain")
    return UnlearnOutcome(res.params, time.perf_counter() - start, [head, *res.log], "retrain")


def finetune_ft(
    params: ParamSet,
    arch: MlpArchitecture,
    split: UnlearnSplit,
    sgd: SgdConfig,
    epochs: int,
    seed: int = 0,
    batch_size: int = 64,
) -> UnlearnOutcome:
    return _finetune(params, arch, split, sgd, epochs, seed, batch_size, 0.0, "ft")


def l1_sparse_ft(
    params: ParamSet,
    arch: MlpArchitecture,
    split: UnlearnSplit,
    sgd: SgdConfig,
    epochs: int,
    l1_lambda: float,
    seed: int = 0,
    batch_size: int = 64,
) -> UnlearnOutcome:
    if l1_lambda < 0:
        raise InvalidInputError("l1_lambda must be non-negative")
    return _finetune(params, arch, split, sgd, epochs, seed, batch_size, l1_lambda, "l1_sparse")


def _l1_hook(l1_lambda: float):
    if l1_lambda == 0.0:
        return None
    return lambda p, g: add_grads(g, l1_subgradient(p), l1_lambda)


def _finetune(params, arch, split, sgd, epochs, seed, batch_size, l1_lambda, tag) -> UnlearnOutcome:
    start = time.perf_counter()
    r = split.retained
    head = _initial_record(tag, mean_loss(params, arch, r.features, r.labels), sgd.lr_at(0))
    res = fit(params, arch, r.features, r.labels, sgd, epochs, batch_size=batch_size,
              seed=seed, stream=tag, phase=tag, grad_hook=_l1_hook(l1_lambda))
    return UnlearnOutcome(res.params, time.perf_counter() - start, [head, *res.log], tag)


def gradient_ascent_ga(
    params: ParamSet,
    arch: MlpArchitecture,
    split: UnlearnSplit,
    sgd: SgdConfig,
    epochs: int,
    seed: int = 0,
    batch_size: int = 64,
    clip: float = 10.0,
) -> UnlearnOutcome:
    """Ascend the cross-entropy on the forget set, with a global-norm gradient clip."""
    start = time.perf_counter()
    u = split.unlearned
    params = copy_params(params)
    phase_log = [_initial_record("ga", mean_loss(params, arch, u.features, u.labels) if len(u) else 0.0)]
    rng = make_rng(seed, "ga")
    velocity = zeros_like(params)
    for epoch in range(epochs if len(u) else 0):
        lr = sgd.lr_at(epoch)
        total = 0.0
        for idx in minibatches(len(u), batch_size, rng):
            params, velocity, loss = ascent_step(params, arch, u.features[idx], u.labels[idx], sgd, velocity, lr, clip)
            _check_loss(loss, "ga", epoch + 1)
            total += loss * len(idx)
        phase_log.append(EpochRecord(epoch + 1, "ga", total / len(u), lr=lr))
    return UnlearnOutcome(params, time.perf_counter() - start, phase_log, "ga")


def ascent_step(params, arch, x, y, sgd, velocity, lr, clip=10.0):
    """One GA update: an SGD step along the negated (clipped) CE gradient."""
    trace = forward(params, arch, x)
    loss, g = cross_entropy(trace.logits, y)
    grads = clip_by_global_norm(backward(trace, g), clip)
    grads = {k: -v for k, v in grads.items()}
    params, velocity = sgd_step(params, grads, sgd, velocity, lr=lr)
    return params, velocity, loss


def random_labels(labels: np.ndarray, class_count: int, seed: int) -> np.ndarray:
    """Uniform relabelling onto a class different from the true one."""
    if class_count < 2:
        raise InvalidInputError("random relabelling needs at least two classes")
    r = make_rng(seed, "rl-labels").integers(0, class_count - 1, size=len(labels))
    return np.where(r < labels, r, r + 1)


def random_label_rl(
    params: ParamSet,
    arch: MlpArchitecture,
    split: UnlearnSplit,
    sgd: SgdConfig,
    epochs: int,
    seed: int = 0,
    batch_size: int = 64,
) -> UnlearnOutcome:
    """Train on relabelled forget batches, each followed by one retained batch."""
    start = time.perf_counter()
    u, r = split.unlearned, split.retained
    fake = random_labels(u.labels, arch.n_classes, seed)
    params = copy_params(params)
    phase_log = [_initial_record("rl", mean_loss(params, arch, u.features, fake) if len(u) else 0.0)]
    rng = make_rng(seed, "rl")
    velocity = zeros_like(params)
    retained_batches = _cycle_batches(len(r), batch_size, rng) if len(r) else None
    for epoch in range(epochs if len(u) else 0):
        lr = sgd.lr_at(epoch)
        total = 0.0
        for idx in minibatches(len(u), batch_size, rng):
            trace = forward(params, arch, u.features[idx])
            loss, g = cross_entropy(trace.logits, fake[idx])
            _check_loss(loss, "rl", epoch + 1)
            params, velocity = sgd_step(params, backward(trace, g), sgd, velocity, lr=lr)
            total += loss * len(idx)
            if retained_batches is not None:
                ridx = next(retained_batches)
                trace = forward(params, arch, r.features[ridx])
                rloss, g = cross_entropy(trace.logits, r.labels[ridx])
                _check_loss(rloss, "rl", epoch + 1)
                params, velocity = sgd_step(params, backward(trace, g), sgd, velocity, lr=lr)
        phase_log.append(EpochRecord(epoch + 1, "rl", total / len(u), lr=lr))
    return UnlearnOutcome(params, time.perf_counter() - start, phase_log, "rl")


def _cycle_batches(n, batch_size, rng):
    while True:
        yield from minibatches(n, batch_size, rng)


# --- orthogonal unlearning & replay ----------------------------------------


def _features(params, arch, x, layers):
    trace = forward(params, arch, x)
    return trace, [trace.hidden(l) for l in layers]


def _normalise(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", f, f))
    safe = np.where(norms > 0, norms, 1.0)
    return f / safe[:, None], norms


def orthogonality_terms(
    current: np.ndarray,
    snapshot: np.ndarray,
    *,
    normalize: bool = True,
    variant: str = "inner",
    exact_grad: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-example loss terms and their gradient w.r.t. ``current`` features.

    ``inner``: squared inner product of (optionally L2-normalised) current and
    snapshot features.  ``l2``: squared Euclidean distance between them.
    Returns ``(terms, grad, skipped_mask)``; examples with a zero feature vector
    contribute nothing when normalising.

    With normalisation the term is the squared cosine, whose exact gradient
    vanishes when current and snapshot features coincide, i.e. at the very
    start of the phase.  The norm of the current features is therefore held
    constant when differentiating (``grad = 2 c / |f| * g_hat``): the loss
    value is unchanged and the descent direction at the start is non-zero.
    ``exact_grad=True`` restores the full derivative.
    """
    if variant == "l2":
        diff = current - snapshot
        return np.einsum("ij,ij->i", diff, diff), 2.0 * diff, np.zeros(len(current), bool)
    if not normalize:
        dot = np.einsum("ij,ij->i", current, snapshot)
        return dot**2, 2.0 * dot[:, None] * snapshot, np.zeros(len(current), bool)
    f_hat, f_norm = _normalise(current)
    g_hat, g_norm = _normalise(snapshot)
    skipped = (f_norm == 0) | (g_norm == 0)
    c = np.einsum("ij,ij->i", f_hat, g_hat)
    c[skipped] = 0.0
    inv = np.where(f_norm > 0, 1.0 / np.where(f_norm > 0, f_norm, 1.0), 0.0)
    direction = g_hat - c[:, None] * f_hat if exact_grad else g_hat
    grad = (2.0 * c * inv)[:, None] * direction
    grad[skipped] = 0.0
    return c**2, grad, skipped


def orthogonality_loss(
    params: ParamSet,
    snapshot_params: ParamSet,
    arch: MlpArchitecture,
    x: np.ndarray,
    layers: tuple[int, ...],
    *,
    normalize: bool = True,
    variant: str = "inner",
) -> float:
    """Summed (not averaged) orthogonality objective over ``x`` and ``layers``."""
    if len(x) == 0:
        return 0.0
    _, cur = _features(params, arch, x, layers)
    _, snap = _features(snapshot_params, arch, x, layers)
    return float(sum(orthogonality_terms(c, s, normalize=normalize, variant=variant)[0].sum()
                     for c, s in zip(cur, snap)))


def feature_squared_cosine(
    params: ParamSet, reference: ParamSet, arch: MlpArchitecture, x: np.ndarray, layers: tuple[int, ...]
) -> float:
    """Mean squared cosine between current and reference features over examples and layers.

    Pairs where both vectors are zero are skipped.
    """
    _, cur = _features(params, arch, x, layers)
    _, ref = _features(reference, arch, x, layers)
    vals = []
    for c, r in zip(cur, ref):
        for a, b in zip(c, r):
            if a.any() or b.any():
                vals.append(squared_cosine(a, b))
    return float(np.mean(vals)) if vals else 0.0


def our_phase1_orthogonal(
    params: ParamSet, arch: MlpArchitecture, split: UnlearnSplit, cfg: UnlearnConfig
) -> tuple[ParamSet, list[EpochRecord]]:
    """Orthogonalise forget-set features against their entry snapshot.

    After every epoch (or batch, with ``guard_per_batch``) the maximum
    per-entry parameter change is compared with ``delta_threshold``; on the
    first violation the violating update is discarded and the phase stops, so
    the returned parameters always satisfy the guard.
    """
    layers = _resolve_layers(arch, cfg.orth_layers)
    snapshot = copy_params(params)
    params = copy_params(params)
    x = split.unlearned.features
    if len(x) == 0:
        return params, [_initial_record("orth", 0.0)]
    _, snap_feats = _features(snapshot, arch, x, layers)
    sgd = cfg.sgd_phase1
    phase_log = [_initial_record("orth", orthogonality_loss(
        params, snapshot, arch, x, layers, normalize=cfg.normalize_features, variant=cfg.orth_variant) / len(x))]
    rng = make_rng(cfg.seed, "orth")
    velocity = zeros_like(params)
    skipped_total = 0
    for epoch in range(cfg.epochs_phase1):
        lr = sgd.lr_at(epoch)
        epoch_start = params
        total = 0.0
        stopped = False
        for idx in minibatches(len(x), cfg.batch_size, rng):
            trace, cur = _features(params, arch, x[idx], layers)
            hidden_grads = {}
            batch_loss = 0.0
            for l, c, s in zip(layers, cur, snap_feats):
                terms, g, skipped = orthogonality_terms(
                    c, s[idx], normalize=cfg.normalize_features, variant=cfg.orth_variant,
                    exact_grad=cfg.exact_orth_grad)
                skipped_total += int(skipped.sum())
                batch_loss += float(terms.sum())
                hidden_grads[l] = g / len(idx)
            _check_loss(batch_loss, "orth", epoch + 1)
            grads = backward(trace, np.zeros_like(trace.logits), hidden_grads)
            prev = params
            params, velocity = sgd_step(params, grads, sgd, velocity, lr=lr)
            total += batch_loss
            if cfg.guard_per_batch and param_delta(params, snapshot)[1] > cfg.delta_threshold:
                params, stopped = prev, True
                break
        _, dmax = param_delta(params, snapshot)
        if not stopped and dmax > cfg.delta_threshold:
            params, stopped = epoch_start, True
            dmax = param_delta(params, snapshot)[1]
        phase_log.append(EpochRecord(epoch + 1, "orth", total / len(x), dmax, lr, stopped))
        if stopped:
            break
    if skipped_total:
        log.debug("orthogonal phase skipped %d zero-feature example terms", skipped_total)
    return params, phase_log


def our_phase2_replay(
    params: ParamSet, arch: MlpArchitecture, split: UnlearnSplit, cfg: UnlearnConfig
) -> tuple[ParamSet, list[EpochRecord]]:
    r = split.retained
    sgd = cfg.replay_sgd
    head = _initial_record("replay", mean_loss(params, arch, r.features, r.labels) if len(r) else 0.0, sgd.lr_at(0))
    res = fit(params, arch, r.features, r.labels, sgd, cfg.epochs_phase2, batch_size=cfg.batch_size,
              seed=cfg.seed, stream="replay", phase="replay", grad_hook=_l1_hook(cfg.l1_lambda))
    return res.params, [head, *res.log]


def our(params: ParamSet, arch: MlpArchitecture, split: UnlearnSplit, cfg: UnlearnConfig) -> UnlearnOutcome:
    start = time.perf_counter()
    mid, log1 = our_phase1_orthogonal(params, arch, split, cfg)
    final, log2 = our_phase2_replay(mid, arch, split, cfg)
    return UnlearnOutcome(final, time.perf_counter() - start, log1 + log2, "our")


def run_unlearning(
    params: ParamSet, arch: MlpArchitecture, split: UnlearnSplit, cfg: UnlearnConfig
) -> UnlearnOutcome:
    """Dispatch on ``cfg.method``; single-phase methods use the phase-1 settings."""
    m, e, sgd, bs = cfg.method, cfg.epochs_phase1, cfg.sgd_phase1, cfg.batch_size
    if m == "retrain":
        return retrain(arch, split, sgd, e, cfg.seed, bs)
    if m == "ft":
        return finetune_ft(params, arch, split, sgd, e, cfg.seed, bs)
    if m == "ga":
        return gradient_ascent_ga(params, arch, split, sgd, e, cfg.seed, bs, cfg.ga_clip)
    if m == "rl":
        return random_label_rl(params, arch, split, sgd, e, cfg.seed, bs)
    if m == "l1_sparse":
        return l1_sparse_ft(params, arch, split, sgd, e, cfg.l1_lambda, cfg.seed, bs)
    return our(params, arch, split, cfg)


def with_seed(cfg: UnlearnConfig, seed: int) -> UnlearnConfig:
    return replace(cfg, seed=seed)
