"""Multi-modal multiple-instance learning baseline decoder.

Segment probabilities come from one linear head per modality. Video-level
probabilities use attentive pooling: for each class, a softmax over the two
modalities at every segment mixes the modality probabilities, then a softmax
over segments pools the mixture. Both pools are convex, so a pooled
probability always lies between the smallest and largest segment value.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .leap import PredictionBundle, union_prediction
from .params import ParamTable, glorot
from .tensor import ShapeError, Tensor


def column_softmax(x: Tensor) -> Tensor:
    return tn.transpose(tn.softmax_rows(tn.transpose(x)))


class MmilParams:
    NAMES = ("cls_audio", "cls_visual", "temporal_audio", "temporal_visual",
             "modality_audio", "modality_visual")

    def __init__(self, table: ParamTable):
        self.table = table

    def __getitem__(self, name: str) -> Tensor:
        return self.table[name]

    @property
    def d(self) -> int:
        return self.table["cls_audio"].rows

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, num_classes: int) -> "MmilParams":
        table = ParamTable()
        for name in cls.NAMES:
            table.add(name, glorot(rng, d, num_classes))
        return cls(table)


def mmil_forward(F_a: Tensor, F_v: Tensor, params: MmilParams, threshold: float = 0.5) -> PredictionBundle:
    d = params.d
    if F_a.cols != d or F_v.cols != d:
        raise ShapeError(f"mmil_forward: feature widths {F_a.cols}, {F_v.cols} must equal {d}")
    if F_a.rows != F_v.rows:
        raise ShapeError(f"mmil_forward: T mismatch {F_a.rows} vs {F_v.rows}")
    P_a = tn.sigmoid(F_a @ params["cls_audio"])
    P_v = tn.sigmoid(F_v @ params["cls_visual"])

    # two-way softmax over {audio, visual} == sigmoid of the logit difference
    w_a = tn.sigmoid(F_a @ params["modality_audio"] - F_v @ params["modality_visual"])
    w_v = 1.0 - w_a
    mixed = tn.mul(w_a, P_a) + tn.mul(w_v, P_v)

    t_a = F_a @ params["temporal_audio"]
    t_v = F_v @ params["temporal_visual"]
    joint_weights = column_softmax(tn.mul(w_a, t_a) + tn.mul(w_v, t_v))
    union_prob = tn.sum_rows(tn.mul(joint_weights, mixed))

    att_a = column_softmax(t_a)
    att_v = column_softmax(t_v)
    p_a = tn.sum_rows(tn.mul(att_a, P_a))
    p_v = tn.sum_rows(tn.mul(att_v, P_v))
    return PredictionBundle(
        segment_probs={"audio": P_a, "visual": P_v},
        video_probs={"audio": p_a, "visual": p_v},
        union_prob=union_prob,
        union=union_prediction(p_a, p_v, threshold),
        extras={
            "modality_weights": {"audio": w_a.data, "visual": w_v.data},
            "temporal_weights": {"joint": joint_weights.data, "audio": att_a.data, "visual": att_v.data},
        },
    )


class MmilDecoder:
    def __init__(self, params: MmilParams, threshold: float = 0.5):
        self.params = params
        self.threshold = threshold

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, num_classes: int, threshold: float = 0.5) -> "MmilDecoder":
        return cls(MmilParams.init(rng, d, num_classes), threshold)

    def parameters(self) -> dict[str, Tensor]:
        return {f"mmil/{k}": v for k, v in self.params.table.items()}

    def __call__(self, F_a: Tensor, F_v: Tensor) -> PredictionBundle:
        return mmil_forward(F_a, F_v, self.params, self.threshold)
