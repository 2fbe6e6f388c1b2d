"""
Detection metrics: AUC, ACC / F1 at a threshold, normalized score gap,
and the pixel-level versions of the same over A_pix maps.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError
from .imaging import ABNORMAL, NORMAL
from .logs import get_logger

log = get_logger("eval")

DEFAULT_THRESHOLD = 0.5


def as_binary_labels(labels):
    """1 for abnormal, 0 for normal; accepts label strings, bools or 0/1"""
    out = []
    for label in labels:
        if isinstance(label, str):
            if label not in (NORMAL, ABNORMAL):
                raise ArgumentError(f"unknown label {label!r}")
            out.append(1 if label == ABNORMAL else 0)
        else:
            out.append(1 if int(label) else 0)
    return np.asarray(out, dtype=np.int64)


def _split_pairs(scores, labels):
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [l for _, l in pairs]
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = as_binary_labels(np.asarray(labels).ravel().tolist())
    if scores.shape != labels.shape:
        raise ArgumentError(f"{scores.size} scores but {labels.size} labels")
    return scores, labels


def _require_both_classes(labels):
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ArgumentError("metrics need both normal and abnormal samples")
    return n_pos, labels.size - n_pos


def compute_auc(scores, labels=None):
    """
    Rank-statistic (Mann-Whitney) AUC with ties counted as ½

    `scores` is either a sequence of (score, label) pairs or, with
    `labels`, a plain score sequence.
    """
    scores, labels = _split_pairs(scores, labels)
    n_pos, n_neg = _require_both_classes(labels)
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def min_max_normalize(scores):
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def confusion_counts(predictions, labels):
    predictions = np.asarray(predictions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    tn = int(np.sum(~predictions & ~labels))
    return tp, fp, fn, tn


def acc_f1_from_predictions(predictions, labels):
    tp, fp, fn, tn = confusion_counts(predictions, labels)
    total = tp + fp + fn + tn
    acc = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(acc), float(f1)


def compute_acc_f1(scores, labels, threshold=DEFAULT_THRESHOLD):
    """ACC and F1 (abnormal = positive) with `score_norm >= threshold` predicting abnormal"""
    if not 0.0 <= threshold <= 1.0:
        raise ArgumentError(f"threshold must lie in [0, 1], got {threshold}")
    scores, labels = _split_pairs(scores, labels)
    predictions = min_max_normalize(scores) >= threshold
    return acc_f1_from_predictions(predictions, labels)


def compute_gap(scores, labels):
    """(mean_normal, mean_abnormal, gap) of min-max normalized scores"""
    scores, labels = _split_pairs(scores, labels)
    _require_both_classes(labels)
    if np.all(scores == scores[0]):
        log.warning("⚠️ All scores are equal; the gap is 0")
    normalized = min_max_normalize(scores)
    mean_n = float(normalized[labels == 0].mean())
    mean_a = float(normalized[labels == 1].mean())
    return mean_n, mean_a, mean_a - mean_n


@dataclass
class MetricsReport:
    auc: float
    acc: float
    f1: float
    mean_normal: float
    mean_abnormal: float
    gap: float
    threshold: float = DEFAULT_THRESHOLD
    n_normal: int = 0
    n_abnormal: int = 0
    tag: str = ""
    score_name: str = "a_img"
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        """Plain dict; NaN entries become None so the JSON stays strict"""
        data = asdict(self)
        data["extra"] = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in self.extra.items()}
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        lines = [
            f"tag = {self.tag}",
            f"score = {self.score_name}",
            f"n_normal = {self.n_normal}",
            f"n_abnormal = {self.n_abnormal}",
            f"auc = {self.auc:.6f}",
            f"acc = {self.acc:.6f}",
            f"f1 = {self.f1:.6f}",
            f"threshold = {self.threshold}",
            f"mean_normal = {self.mean_normal:.6f}",
            f"mean_abnormal = {self.mean_abnormal:.6f}",
            f"gap = {self.gap:.6f}",
        ]
        for key in sorted(self.extra):
            value = self.extra[key]
            lines.append(f"{key} = {value:.6f}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"


def evaluate_scores(scores, labels, threshold=DEFAULT_THRESHOLD, tag="", score_name="a_img"):
    scores, binary = _split_pairs(scores, labels)
    n_pos, n_neg = _require_both_classes(binary)
    acc, f1 = compute_acc_f1(scores, binary, threshold)
    mean_n, mean_a, gap = compute_gap(scores, binary)
    return MetricsReport(
        auc=compute_auc(scores, binary), acc=acc, f1=f1,
        mean_normal=mean_n, mean_abnormal=mean_a, gap=gap,
        threshold=threshold, n_normal=n_neg, n_abnormal=n_pos,
        tag=tag, score_name=score_name,
    )


def pixel_metrics(maps, masks, threshold=DEFAULT_THRESHOLD):
    """
    Pixel-level AUC / ACC / F1 over A_pix maps

    `masks[i]` is the lesion mask of sample i, or None for a normal
    sample (all pixels negative). Samples with neither a mask nor a
    normal label should be left out by the caller.
    Returns {} when no positive pixel exists.
    """
    values, truth, per_image = [], [], []
    for a_pix, mask in zip(maps, masks):
        a_pix = np.asarray(a_pix, dtype=np.float64)
        mask = np.zeros(a_pix.shape, dtype=bool) if mask is None else np.asarray(mask) > 0.5
        values.append(a_pix.ravel())
        truth.append(mask.ravel())
        if mask.any() and not mask.all():
            per_image.append(compute_auc(a_pix.ravel(), mask.ravel().astype(int)))
    if not values:
        return {}
    values = np.concatenate(values)
    truth = np.concatenate(truth).astype(np.int64)
    if truth.sum() == 0 or truth.sum() == truth.size:
        return {}
    acc, f1 = acc_f1_from_predictions(min_max_normalize(values) >= threshold, truth)
    return {
        "pixel_auc": compute_auc(values, truth),
        "pixel_auc_per_image": float(np.mean(per_image)) if per_image else float("nan"),
        "pixel_acc": acc,
        "pixel_f1": f1,
    }
