"""Training objective: label BCE terms plus the audio-visual similarity regularizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .leap import PredictionBundle
from .tensor import ShapeError, Tensor


@dataclass
class EventLabelTensor:
    """T x C binary segment labels for one modality."""

    segment_labels: np.ndarray
    modality: str = "audio"

    def __post_init__(self):
        y = np.asarray(self.segment_labels)
        if y.ndim != 2:
            raise ShapeError(f"segment labels must be T x C, got shape {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("segment labels must be 0/1")
        self.segment_labels = y.astype(np.int64)

    @property
    def T(self) -> int:
        return self.segment_labels.shape[0]

    @property
    def C(self) -> int:
        return self.segment_labels.shape[1]


def _labels(y) -> np.ndarray:
    return y.segment_labels if isinstance(y, EventLabelTensor) else np.asarray(y, dtype=np.int64)


def video_labels_from_segments(Y) -> np.ndarray:
    """1 x C: a class is present in the video if any segment carries it."""
    return _labels(Y).max(axis=0, keepdims=True)


def eiou_matrix(Y_a, Y_v) -> np.ndarray:
    """r[i, j] = |classes(audio_i) & classes(visual_j)| / |... | ...|.

    Two empty segments are treated as identical (r = 1).
    """
    a = _labels(Y_a).astype(np.float64)
    v = _labels(Y_v).astype(np.float64)
    if a.shape[0] != v.shape[0]:
        raise ShapeError(f"eiou_matrix: T mismatch {a.shape[0]} vs {v.shape[0]}")
    if a.shape[1] != v.shape[1]:
        raise ShapeError(f"eiou_matrix: class count mismatch {a.shape[1]} vs {v.shape[1]}")
    inter = a @ v.T
    union = a.sum(axis=1)[:, None] + v.sum(axis=1)[None, :] - inter
    r = np.ones_like(inter)
    nonempty = union > 0
    r[nonempty] = inter[nonempty] / union[nonempty]
    return r


def cosine_matrix(F_a: Tensor, F_v: Tensor) -> Tensor:
    if F_a.cols != F_v.cols:
        raise ShapeError(f"cosine_matrix: width mismatch {F_a.cols} vs {F_v.cols}")
    return tn.l2_normalize_rows(F_a) @ tn.transpose(tn.l2_normalize_rows(F_v))


def avss_loss(s: Tensor, r) -> Tensor:
    return tn.mse_loss(s, r)


def basic_loss_terms(preds: PredictionBundle, Y_a, Y_v, union_weak) -> dict[str, Tensor]:
    """The six BCE terms summed by the basic loss, keyed by level and modality.

    The union term appears once per modality, as in the two-modality sum.
    """
    weak = np.asarray(union_weak, dtype=np.float64).reshape(1, -1)
    terms = {}
    for m, Y in (("audio", Y_a), ("visual", Y_v)):
        seg = _labels(Y)
        terms[f"union/{m}"] = tn.bce_loss(preds.union_prob, weak)
        terms[f"video/{m}"] = tn.bce_loss(preds.video_probs[m], video_labels_from_segments(seg))
        terms[f"segment/{m}"] = tn.bce_loss(preds.segment_probs[m], seg)
    return terms


def basic_loss(preds: PredictionBundle, Y_a, Y_v, union_weak) -> Tensor:
    terms = list(basic_loss_terms(preds, Y_a, Y_v, union_weak).values())
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


@dataclass
class LossReport:
    basic: float
    avss: float
    total: float
    lam: float
    terms: dict[str, float] = field(default_factory=dict)
    node: Tensor | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"basic": self.basic, "avss": self.avss, "total": self.total,
                "lambda": self.lam, "terms": dict(self.terms)}


def total_loss(basic: Tensor, avss: Tensor, lam: float, terms: dict[str, float] | None = None) -> LossReport:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    node = basic + tn.scale(avss, lam)
    return LossReport(basic.item(), avss.item(), node.item(), lam, terms or {}, node)
