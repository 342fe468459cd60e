"""Membership attacks against unlearned models.

* class-wise reminiscence: fine-tune a copy of the victim so a candidate
  class is predicted as the forgotten label, and score the candidate by how
  quickly that converges (averaged over several learning rates);
* sample-wise reminiscence: LiRA scores pick a pseudo retain set, the victim
  is fine-tuned on it, and the inference set is rescored;
* offline (out-only) LiRA and the MIA-UP logistic attacker as baselines.

Attacks never modify the victim they are given.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LabeledDataset
from .errors import DivergenceError, InvalidInputError
from .nn import (
    MlpArchitecture,
    ParamSet,
    SgdConfig,
    backward,
    copy_params,
    cross_entropy,
    fit,
    forward,
    init_params,
    make_rng,
    predict_proba,
    sgd_step,
    soft_cross_entropy,
    zeros_like,
)

DEFAULT_REA_LRS = (0.001, 0.005, 0.007, 0.01)
PROB_CLAMP = 1e-6


@dataclass
class AttackReport:
    target_ids: np.ndarray
    scores: np.ndarray
    attack_tag: str
    tau: float | None = None
    decisions: np.ndarray | None = None
    resonance_indices: dict[int, list[int]] | None = None
    undefined: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_ids = np.asarray(self.target_ids, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.target_ids.shape != self.scores.shape:
            raise InvalidInputError("one score per target is required")
        if self.decisions is not None and self.tau is None:
            raise InvalidInputError("decisions require a recorded tau")

    def with_decisions(self, tau: float) -> "AttackReport":
        return AttackReport(self.target_ids, self.scores, self.attack_tag, tau,
                            threshold_decisions(self, tau), self.resonance_indices,
                            list(self.undefined), dict(self.config))

    def to_dict(self) -> dict:
        return {
            "attack_tag": self.attack_tag,
            "tau": self.tau,
            "targets": self.target_ids.tolist(),
            "scores": [None if not math.isfinite(s) else float(s) for s in self.scores],
            "decisions": None if self.decisions is None else [bool(d) for d in self.decisions],
            "resonance_indices": None if self.resonance_indices is None
            else {str(k): list(v) for k, v in self.resonance_indices.items()},
            "undefined": list(self.undefined),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        ri = d.get("resonance_indices")
        return cls(
            np.array(d["targets"], dtype=np.int64),
            np.array([np.nan if s is None else s for s in d["scores"]], dtype=np.float64),
            d["attack_tag"],
            d.get("tau"),
            None if d.get("decisions") is None else np.array(d["decisions"], dtype=bool),
            None if ri is None else {int(k): list(v) for k, v in ri.items()},
            list(d.get("undefined", [])),
            d.get("config", {}),
        )

    def save(self, stem: str | os.PathLike) -> None:
        """Write ``<stem>.json`` and ``<stem>.csv`` (target_id, score, decision)."""
        stem = str(stem)
        with open(stem + ".json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(stem + ".csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_id", "score", "decision"])
            for i, (t, s) in enumerate(zip(self.target_ids, self.scores)):
                dec = "" if self.decisions is None else int(self.decisions[i])
                w.writerow([int(t), repr(float(s)), dec])

    @classmethod
    def load(cls, stem: str | os.PathLike) -> "AttackReport":
        with open(str(stem) + ".json") as fh:
            return cls.from_dict(json.load(fh))


def threshold_decisions(report: AttackReport, tau: float) -> np.ndarray:
    """Member iff score > tau; undefined (NaN) scores are never members."""
    with np.errstate(invalid="ignore"):
        return np.asarray(report.scores > tau)


# --- class-wise reminiscence -----------------------------------------------


@dataclass(frozen=True)
class ReaClassConfig:
    learning_rates: tuple[float, ...] = DEFAULT_REA_LRS
    idx_max: int = 75
    convergence_threshold: float = 0.75
    reference_ratio: float = 6.0
    unlearn_label: int = 0
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(float(x) for x in self.learning_rates))
        if not self.learning_rates:
            raise InvalidInputError("learning_rates must be non-empty")
        if any(lr < 0 for lr in self.learning_rates):
            raise InvalidInputError("learning rates must be non-negative")
        if not 0.0 < self.convergence_threshold < 1.0:
            raise InvalidInputError("convergence_threshold must be in (0, 1)")
        if self.idx_max < 1:
            raise InvalidInputError("idx_max must be positive")
        if not self.reference_ratio > 0:
            raise InvalidInputError("reference_ratio must be positive")


def resonance_index(
    victim: ParamSet,
    arch: MlpArchitecture,
    inferred_set: LabeledDataset,
    reference_set: LabeledDataset,
    lr: float,
    cfg: ReaClassConfig,
    on_step: Callable[[int, ParamSet], None] | None = None,
) -> int:
    """First full-batch iteration after which ``unlearn_label`` is predicted for
    more than ``convergence_threshold`` of the inferred set; ``idx_max`` if never.

    The loss pulls the inferred set toward the forgotten label while keeping the
    softmax on the reference set at its initial value.
    """
    if len(inferred_set) == 0:
        raise InvalidInputError("inferred set is empty")
    if len(reference_set) and set(np.unique(inferred_set.labels)) & set(np.unique(reference_set.labels)):
        raise InvalidInputError("reference set must not share classes with the inferred set")
    params = copy_params(victim)
    x_inf = inferred_set.features
    y_inf = np.full(len(inferred_set), cfg.unlearn_label, dtype=np.int64)
    x_ref = reference_set.features
    p_ref = predict_proba(victim, arch, x_ref) if len(reference_set) else None
    sgd = SgdConfig(1.0, cfg.momentum, cfg.weight_decay)
    velocity = zeros_like(params)
    for i in range(1, cfg.idx_max + 1):
        trace = forward(params, arch, x_inf)
        loss, g = cross_entropy(trace.logits, y_inf)
        grads = backward(trace, g)
        if p_ref is not None:
            rtrace = forward(params, arch, x_ref)
            rloss, rg = soft_cross_entropy(rtrace.logits, p_ref)
            loss += rloss
            rgrads = backward(rtrace, rg)
            grads = {k: grads[k] + rgrads[k] for k in grads}
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite reminiscence loss at lr={lr}", where=lr)
        params, velocity = sgd_step(params, grads, sgd, velocity, lr=lr)
        if on_step is not None:
            on_step(i, params)
        pred = forward(params, arch, x_inf).logits.argmax(axis=1)
        if np.mean(pred == cfg.unlearn_label) > cfg.convergence_threshold:
            return i
    return cfg.idx_max


def aggregate_resonance(indices, idx_max: int) -> float:
    """Multi-lr confidence ``1 - sum(Idx_r) / (J * Idx_max)``."""
    indices = list(indices)
    if not indices:
        raise InvalidInputError("need at least one resonance index")
    return 1.0 - sum(indices) / (len(indices) * idx_max)


@dataclass
class ClassReaResult:
    confidence: float
    resonance_indices: list[int]
    diverged_lrs: list[float] = field(default_factory=list)


def rea_classwise(
    victim: ParamSet,
    arch: MlpArchitecture,
    candidate: LabeledDataset,
    reference: LabeledDataset,
    cfg: ReaClassConfig,
) -> ClassReaResult:
    indices, diverged = [], []
    for lr in cfg.learning_rates:
        try:
            indices.append(resonance_index(victim, arch, candidate, reference, lr, cfg))
        except DivergenceError:
            indices.append(cfg.idx_max)
            diverged.append(lr)
    return ClassReaResult(aggregate_resonance(indices, cfg.idx_max), indices, diverged)


# --- LiRA (offline) --------------------------------------------------------


@dataclass
class ShadowEnsemble:
    """Shadow models plus per-shadow membership bitmaps over the attack population.

    ``unlearned_sets``/``heldout_sets`` are only filled for MIA-UP ensembles,
    whose shadows went through the victim's unlearning procedure.
    """

    shadow_params: list[ParamSet]
    in_out_masks: np.ndarray
    arch: MlpArchitecture
    seed: int = 0
    unlearned_sets: list[LabeledDataset] | None = None
    heldout_sets: list[LabeledDataset] | None = None

    def __post_init__(self):
        self.in_out_masks = np.asarray(self.in_out_masks, dtype=bool)
        if self.in_out_masks.ndim != 2 or self.in_out_masks.shape[0] != len(self.shadow_params):
            raise InvalidInputError("need one membership mask per shadow")

    @property
    def shadow_count(self) -> int:
        return len(self.shadow_params)


def train_shadow_ensemble(
    arch: MlpArchitecture,
    population: LabeledDataset,
    auxiliary: LabeledDataset,
    shadow_count: int,
    sgd: SgdConfig,
    epochs: int,
    seed: int,
    *,
    batch_size: int = 64,
    train_fraction: float = 0.5,
) -> ShadowEnsemble:
    """Each shadow trains on a random ``train_fraction`` of population + auxiliary rows."""
    if shadow_count < 2:
        raise InvalidInputError("LiRA needs at least two shadow models")
    universe_x = np.vstack([population.features, auxiliary.features])
    universe_y = np.concatenate([population.labels, auxiliary.labels])
    n_pop, n_all = len(population), len(universe_y)
    take = int(round(train_fraction * n_all))
    rng = make_rng(seed, "shadows")
    shadows, masks = [], np.zeros((shadow_count, n_pop), dtype=bool)
    for s in range(shadow_count):
        rows = rng.choice(n_all, size=take, replace=False)
        masks[s, rows[rows < n_pop]] = True
        sub_seed = int(rng.integers(2**62))
        p0 = init_params(arch, sub_seed)
        shadows.append(fit(p0, arch, universe_x[rows], universe_y[rows], sgd, epochs,
                           batch_size=batch_size, seed=sub_seed, stream="shadow").params)
    return ShadowEnsemble(shadows, masks, arch, seed)


def _logit_confidence(params, arch, data: LabeledDataset) -> np.ndarray:
    p = predict_proba(params, arch, data.features)[np.arange(len(data)), data.labels]
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(p) - np.log1p(-p)


def shadow_confidences(ensemble: ShadowEnsemble, population: LabeledDataset) -> np.ndarray:
    return np.stack([_logit_confidence(p, ensemble.arch, population) for p in ensemble.shadow_params])


def mia_lira_scores(
    ensemble: ShadowEnsemble,
    arch: MlpArchitecture,
    victim: ParamSet,
    population: LabeledDataset,
    *,
    shadow_conf: np.ndarray | None = None,
) -> AttackReport:
    """Offline LiRA: z-score of the victim's logit confidence against out-shadows.

    Examples with fewer than two out-shadows or a numerically zero
    out-spread (below 1e-12 relative to the mean) get a NaN score and are
    listed in ``report.undefined``.
    """
    if ensemble.in_out_masks.shape[1] != len(population):
        raise InvalidInputError("ensemble masks do not cover this population")
    conf = shadow_confidences(ensemble, population) if shadow_conf is None else shadow_conf
    out = ~ensemble.in_out_masks
    n_out = out.sum(axis=0)
    safe_n = np.maximum(n_out, 1)
    mu = np.where(out, conf, 0.0).sum(axis=0) / safe_n
    var = np.where(out, (conf - mu) ** 2, 0.0).sum(axis=0) / np.maximum(n_out - 1, 1)
    sigma = np.sqrt(var)
    victim_conf = _logit_confidence(victim, arch, population)
    defined = (n_out >= 2) & (sigma > 1e-12 * np.maximum(1.0, np.abs(mu)))
    scores = np.full(len(population), np.nan)
    scores[defined] = (victim_conf[defined] - mu[defined]) / sigma[defined]
    undefined = population.ids[~defined].tolist()
    return AttackReport(population.ids, scores, "lira", undefined=undefined)


# --- sample-wise reminiscence ----------------------------------------------


@dataclass(frozen=True)
class ReaSampleConfig:
    pseudo_retain_size: int
    epochs: int = 5
    learning_rate: float = 0.01
    seed: int = 0
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.pseudo_retain_size < 0:
            raise InvalidInputError("pseudo_retain_size must be non-negative")
        if self.epochs < 0 or not self.learning_rate > 0:
            raise InvalidInputError("epochs must be >= 0 and learning_rate > 0")


def select_pseudo_retain(scores: np.ndarray, size: int) -> np.ndarray:
    """Row positions of the ``size`` highest scores (NaN ranks last, ties by position)."""
    keyed = np.where(np.isnan(scores), -np.inf, scores)
    order = np.argsort(-keyed, kind="stable")
    return np.sort(order[:size])


def pseudo_retain_finetune(
    victim: ParamSet,
    arch: MlpArchitecture,
    inference_set: LabeledDataset,
    scores: np.ndarray,
    cfg: ReaSampleConfig,
    on_epoch: Callable[[int, ParamSet], None] | None = None,
) -> ParamSet:
    if cfg.pseudo_retain_size > len(inference_set):
        raise InvalidInputError("pseudo_retain_size exceeds the inference set")
    rows = select_pseudo_retain(scores, cfg.pseudo_retain_size)
    pseudo = inference_set.subset(rows)
    sgd = SgdConfig(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    return fit(victim, arch, pseudo.features, pseudo.labels, sgd, cfg.epochs,
               batch_size=cfg.batch_size, seed=cfg.seed, stream="rea-sample", phase="reminiscence",
               on_epoch=on_epoch).params


def rea_samplewise(
    victim: ParamSet,
    arch: MlpArchitecture,
    inference_set: LabeledDataset,
    cfg: ReaSampleConfig,
    ensemble: ShadowEnsemble,
) -> AttackReport:
    conf = shadow_confidences(ensemble, inference_set)
    first = mia_lira_scores(ensemble, arch, victim, inference_set, shadow_conf=conf)
    if cfg.epochs == 0:
        updated = victim
    else:
        updated = pseudo_retain_finetune(victim, arch, inference_set, first.scores, cfg)
    report = mia_lira_scores(ensemble, arch, updated, inference_set, shadow_conf=conf)
    report.attack_tag = "rea_sample"
    report.config = {"pseudo_retain_size": cfg.pseudo_retain_size, "epochs": cfg.epochs,
                     "learning_rate": cfg.learning_rate, "seed": cfg.seed}
    return report


# --- MIA-UP ----------------------------------------------------------------


def sorted_probabilities(params: ParamSet, arch: MlpArchitecture, x: np.ndarray) -> np.ndarray:
    return -np.sort(-predict_proba(params, arch, x), axis=1)


@dataclass
class LogisticScorer:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        z = ((feats - self.mean) / self.scale) @ self.weights + self.bias
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(
    feats: np.ndarray, targets: np.ndarray, *, steps: int = 500, lr: float = 0.5, l2: float = 1e-4
) -> LogisticScorer:
    """Full-batch gradient descent on the mean logistic loss over standardised features."""
    feats = np.asarray(feats, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    xs = (feats - mean) / scale
    w = np.zeros(xs.shape[1])
    b = 0.0
    n = len(targets)
    for _ in range(steps):
        p = 0.5 * (1.0 + np.tanh(0.5 * (xs @ w + b)))
        err = p - targets
        w -= lr * (xs.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return LogisticScorer(w, b, mean, scale)


def mia_up(
    shadow_unlearned: ShadowEnsemble,
    victim: ParamSet,
    population: LabeledDataset,
    *,
    max_imbalance: float = 10.0,
) -> AttackReport:
    """Logistic attacker trained on unlearned shadows: forget rows positive, held-out negative."""
    if shadow_unlearned.unlearned_sets is None or shadow_unlearned.heldout_sets is None:
        raise InvalidInputError("MIA-UP needs unlearned shadows with forget/held-out sets")
    arch = shadow_unlearned.arch
    pos = [sorted_probabilities(p, arch, d.features)
           for p, d in zip(shadow_unlearned.shadow_params, shadow_unlearned.unlearned_sets)]
    neg = [sorted_probabilities(p, arch, d.features)
           for p, d in zip(shadow_unlearned.shadow_params, shadow_unlearned.heldout_sets)]
    scorer = train_up_scorer(np.vstack(pos), np.vstack(neg), max_imbalance=max_imbalance)
    scores = scorer(sorted_probabilities(victim, arch, population.features))
    return AttackReport(population.ids, scores, "up")


def train_up_scorer(pos: np.ndarray, neg: np.ndarray, *, max_imbalance: float = 10.0) -> LogisticScorer:
    n_pos, n_neg = len(pos), len(neg)
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("MIA-UP needs both positive and negative shadow examples")
    if max(n_pos, n_neg) > max_imbalance * min(n_pos, n_neg):
        raise InvalidInputError(f"shadow classes too imbalanced ({n_pos}:{n_neg})")
    feats = np.vstack([pos, neg])
    targets = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    return fit_logistic(feats, targets)


def class_positive_rate(scores: np.ndarray, tau: float) -> float:
    """Class-level adaptation of a per-example attack: share of a candidate's rows above ``tau``."""
    with np.errstate(invalid="ignore"):
        return float(np.mean(np.asarray(scores) > tau)) if len(scores) else 0.0

