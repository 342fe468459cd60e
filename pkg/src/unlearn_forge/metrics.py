"""Evaluation: accuracies, ToW, residual, ROC analysis, attack accuracy, representation geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data import LabeledDataset
from .errors import DegenerateFitError, InvalidInputError
from .nn import MlpArchitecture, ParamSet, forward, logits, per_example_ce, predict_proba

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # renamed in numpy 2.0


def accuracy_on(params: ParamSet, arch: MlpArchitecture, dataset: LabeledDataset) -> float:
    """Percentage of argmax-correct rows; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise InvalidInputError("accuracy of an empty dataset is undefined")
    pred = logits(params, arch, dataset.features).argmax(axis=1)
    return 100.0 * float(np.mean(pred == dataset.labels))


def tow(metrics_u, metrics_0) -> float:
    """Product over metrics of ``1 - |m_u - m_0| / m_0``, each factor clamped to [0, 1].

    Metrics are fractions in [0, 1].  Where ``m_0 == 0`` the factor is
    ``1 - |m_u - m_0|`` instead.
    """
    if len(metrics_u) != len(metrics_0):
        raise InvalidInputError("metric tuples must have equal length")
    out = 1.0
    for mu, m0 in zip(metrics_u, metrics_0):
        d = abs(mu - m0)
        factor = 1.0 - d / m0 if m0 > 0 else 1.0 - d
        out *= min(1.0, max(0.0, factor))
    return out


RESIDUAL_KINDS = ("loss", "confidence")


def residual(
    params_u: ParamSet,
    arch: MlpArchitecture,
    unlearned: LabeledDataset,
    non_training: LabeledDataset,
    kind: str = "loss",
) -> float:
    """Absolute gap of a behaviour statistic between forgotten and matched unseen data.

    ``loss``: mean per-example cross-entropy.  ``confidence``: mean max-softmax.
    """
    if len(unlearned) == 0 or len(non_training) == 0:
        raise InvalidInputError("residual needs two non-empty sets")
    if kind not in RESIDUAL_KINDS:
        raise InvalidInputError(f"kind must be one of {RESIDUAL_KINDS}")

    def stat(d: LabeledDataset) -> float:
        if kind == "loss":
            return float(np.mean(per_example_ce(logits(params_u, arch, d.features), d.labels)))
        return float(np.mean(predict_proba(params_u, arch, d.features).max(axis=1)))

    return abs(stat(unlearned) - stat(non_training))


# --- ROC -------------------------------------------------------------------


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def to_json(self) -> str:
        rows = [[f, t, None if not math.isfinite(th) else th] for f, t, th in self.points]
        return json.dumps(rows)


def _clean(scores, is_member) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(is_member, dtype=bool)
    if s.shape != m.shape:
        raise InvalidInputError("scores and membership labels must align")
    keep = ~np.isnan(s)
    s, m = s[keep], m[keep]
    if m.all() or not m.any():
        raise InvalidInputError("ROC analysis needs at least one member and one non-member")
    return s, m


def roc_curve(scores, is_member) -> RocCurve:
    """Full threshold sweep; tied scores share one threshold; AUC by trapezoid.

    NaN scores are dropped.  A point at threshold ``t`` counts ``score >= t``
    as positive; the first point uses ``+inf``.
    """
    s, m = _clean(scores, is_member)
    order = np.argsort(-s, kind="stable")
    s, m = s[order], m[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(m)[last_of_group]
    fp = np.cumsum(~m)[last_of_group]
    n_pos, n_neg = m.sum(), (~m).sum()
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def tpr_at_fpr(curve: RocCurve, fpr_target: float = 0.1) -> float:
    """TPR (percent) at the largest achieved FPR not exceeding the target."""
    if not 0.0 < fpr_target < 1.0:
        raise InvalidInputError("fpr_target must be in (0, 1)")
    ok = curve.fpr <= fpr_target + 1e-15
    return 100.0 * float(curve.tpr[ok].max())


def balanced_accuracy(scores, is_member, tau: float) -> float:
    """(TPR + TNR) / 2 in percent, predicting member iff score > tau."""
    s, m = _clean(scores, is_member)
    pred = s > tau
    tpr = np.mean(pred[m])
    tnr = np.mean(~pred[~m])
    return 100.0 * float(tpr + tnr) / 2.0


def best_threshold(scores, is_member) -> tuple[float, float]:
    """Threshold maximising balanced accuracy, and that accuracy.

    Candidates are midpoints between distinct sorted scores plus both ends;
    the first maximiser in ascending order wins.
    """
    s, m = _clean(scores, is_member)
    u = np.unique(s)
    cands = np.r_[u[0] - 1.0, (u[1:] + u[:-1]) / 2.0, u[-1]]
    best_tau, best_ba = cands[0], -1.0
    for tau in cands:
        ba = balanced_accuracy(s, m, tau)
        if ba > best_ba + 1e-12:
            best_tau, best_ba = float(tau), ba
    return best_tau, best_ba


def cross_fitted_balanced_accuracy(scores, is_member, groups) -> float:
    """Balanced accuracy with the threshold picked on the other fold.

    ``groups`` assigns each row to fold 0 or 1 (e.g. trial parity).  For each
    fold the threshold maximising balanced accuracy on the other fold is
    applied, and the two held-out accuracies are averaged.
    """
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(is_member, dtype=bool)
    g = np.asarray(groups)
    results = []
    for fold in (0, 1):
        fit_rows, eval_rows = g != fold, g == fold
        tau, _ = best_threshold(s[fit_rows], m[fit_rows])
        results.append(balanced_accuracy(s[eval_rows], m[eval_rows], tau))
    return float(np.mean(results))


def ua_recovery(before: float, after: float) -> float:
    for v in (before, after):
        if not 0.0 <= v <= 100.0:
            raise InvalidInputError("accuracies must be percentages")
    return after - before


# --- representation geometry ----------------------------------------------


@dataclass
class RepresentationMetrics:
    variance: float
    silhouette: float
    overlap: float
    pairwise_overlap: dict[int, float] = field(default_factory=dict)


def features_at(params: ParamSet, arch: MlpArchitecture, x: np.ndarray, layer: int | None = None) -> np.ndarray:
    layer = arch.n_hidden - 1 if layer is None else layer
    if not 0 <= layer < arch.n_layers:
        raise InvalidInputError(f"probe layer {layer} out of range")
    return forward(params, arch, x).hidden(layer)


def intra_class_variance(feats: np.ndarray) -> float:
    """Mean squared distance to the centroid."""
    centred = feats - feats.mean(axis=0)
    return float(np.mean(np.einsum("ij,ij->i", centred, centred)))


def silhouette_for_class(feats: np.ndarray, labels: np.ndarray, target: int) -> float:
    """Mean silhouette coefficient over the rows of ``target`` (Euclidean)."""
    labels = np.asarray(labels)
    if np.sum(labels == target) < 2:
        raise DegenerateFitError(f"silhouette undefined for singleton class {target}")
    if len(np.unique(labels)) < 2:
        raise InvalidInputError("silhouette needs at least two classes")
    _, dense = np.unique(labels, return_inverse=True)
    dist = K.pairwise_dists(np.ascontiguousarray(feats, dtype=np.float64))
    s = K.silhouette_values(dist, dense.astype(np.int64), int(dense.max()) + 1)
    return float(np.mean(s[labels == target]))


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    std = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * n ** (-0.2)


def kde_overlap(a: np.ndarray, b: np.ndarray, grid_size: int = 2048) -> float:
    """Overlap coefficient ``integral min(f_a, f_b)`` of two 1-D Gaussian KDEs.

    Silverman bandwidths, floored at 1e-3 of the pooled range so degenerate
    (constant) samples stay integrable.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    floor = max(1e-3 * (hi - lo), 1e-12)
    ha = max(silverman_bandwidth(a), floor)
    hb = max(silverman_bandwidth(b), floor)
    pad = 5.0 * max(ha, hb)
    grid = np.linspace(lo - pad, hi + pad, grid_size)
    fa = K.kde_grid(a, ha, grid)
    fb = K.kde_grid(b, hb, grid)
    return float(_trapezoid(np.minimum(fa, fb), grid))


def projected_overlap(fa: np.ndarray, fb: np.ndarray) -> float:
    """KDE overlap after projecting both clouds onto the line joining their centroids."""
    direction = fb.mean(axis=0) - fa.mean(axis=0)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return 1.0
    direction /= norm
    return kde_overlap(fa @ direction, fb @ direction)


def representation_metrics(
    params: ParamSet,
    arch: MlpArchitecture,
    dataset: LabeledDataset,
    probe_layer: int | None = None,
    target_class: int = 0,
) -> RepresentationMetrics:
    """Variance, silhouette and KDE overlap of ``target_class`` at ``probe_layer``.

    The default probe is the last hidden layer.
    """
    classes = np.unique(dataset.labels)
    if len(classes) < 2:
        raise InvalidInputError("representation metrics need at least two classes")
    if target_class not in classes:
        raise InvalidInputError(f"class {target_class} not present")
    feats = features_at(params, arch, dataset.features, probe_layer)
    return representation_from_features(feats, dataset.labels, target_class)


def representation_from_features(feats: np.ndarray, labels: np.ndarray, target_class: int) -> RepresentationMetrics:
    labels = np.asarray(labels)
    own = feats[labels == target_class]
    pairwise = {
        int(c): projected_overlap(own, feats[labels == c])
        for c in np.unique(labels) if c != target_class
    }
    return RepresentationMetrics(
        intra_class_variance(own),
        silhouette_for_class(feats, labels, target_class),
        float(np.mean(list(pairwise.values()))),
        pairwise,
    )


# --- evaluation record -----------------------------------------------------

EVAL_COLUMNS = (
    "trial", "mode", "method", "ta", "ua", "ra", "mia_efficacy", "tow",
    "residual", "rep_variance", "rep_silhouette", "rep_overlap",
)


@dataclass
class EvalReport:
    ta: float
    ua: float
    ra: float
    mia_efficacy: float | None = None
    tow: float | None = None
    residual: float | None = None
    rte_seconds: float | None = None
    representation: RepresentationMetrics | None = None

    def __post_init__(self):
        for name in ("ta", "ua", "ra"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise InvalidInputError(f"{name} must be a percentage")
        if self.tow is not None and not 0.0 <= self.tow <= 1.0:
            raise InvalidInputError("tow must lie in [0, 1]")

    def row(self, trial: int, mode: str, method: str) -> list[str]:
        """CSV row in ``EVAL_COLUMNS`` order; missing values are empty cells."""
        rep = self.representation

        def fmt(v):
            return "" if v is None else repr(float(v))

        return [
            str(trial), mode, method, fmt(self.ta), fmt(self.ua), fmt(self.ra),
            fmt(self.mia_efficacy), fmt(self.tow), fmt(self.residual),
            fmt(rep.variance if rep else None), fmt(rep.silhouette if rep else None),
            fmt(rep.overlap if rep else None),
        ]
