"""Label-embedding projection decoder.

Class label embeddings act as attention queries over the segment features of
one modality. Each block enriches the label embeddings with the segments they
attend to; the last block's pre-softmax attention logits give segment-level
predictions and its refined label embeddings give video-level predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .params import ParamTable, glorot, ones, zeros
from .tensor import ShapeError, Tensor

BLOCK_SELECTIONS = ("first", "last", "average")


@dataclass
class LabelEmbeddingMatrix:
    values: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError(f"label embeddings must be C x d with C >= 1, got {self.values.shape}")
        if len(self.class_names) != self.values.shape[0]:
            raise ShapeError(
                f"{len(self.class_names)} class names for {self.values.shape[0]} embedding rows"
            )
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("duplicate class names in label embeddings")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("label embeddings contain non-finite values")

    @property
    def C(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def permuted(self, perm) -> "LabelEmbeddingMatrix":
        perm = list(perm)
        return LabelEmbeddingMatrix(self.values[perm], [self.class_names[i] for i in perm])


def default_class_names(num_classes: int) -> list[str]:
    return [f"class_{i:02d}" for i in range(num_classes)]


def load_label_embeddings(path, num_classes: int, d: int) -> LabelEmbeddingMatrix:
    """Read ``name v1 ... vd`` rows; row order defines class index order."""
    names, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != d + 1:
            raise ShapeError(f"{path}:{lineno}: expected a name and {d} values, got {len(parts) - 1}")
        names.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    if len(rows) != num_classes:
        raise ShapeError(f"{path}: expected {num_classes} class rows, found {len(rows)}")
    return LabelEmbeddingMatrix(np.array(rows), names)


def save_label_embeddings(emb: LabelEmbeddingMatrix, path) -> None:
    lines = [
        " ".join([name] + [repr(float(v)) for v in row])
        for name, row in zip(emb.class_names, emb.values)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def init_label_embeddings(source, num_classes: int, d: int, seed: int | None = None,
                          class_names: list[str] | None = None) -> LabelEmbeddingMatrix:
    """Load embeddings from a file, or draw unit-norm rows from ``seed``.

    ``source`` is a path, or ``"random"`` for the seeded mode.
    """
    if source not in (None, "random"):
        return load_label_embeddings(source, num_classes, d)
    if seed is None:
        raise ValueError("seeded label embeddings need a seed")
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((num_classes, d))
    values /= np.linalg.norm(values, axis=1, keepdims=True)
    return LabelEmbeddingMatrix(values, class_names or default_class_names(num_classes))


class LeapBlockParams:
    def __init__(self, table: ParamTable):
        self.table = table

    def __getitem__(self, name: str) -> Tensor:
        return self.table[name]

    @property
    def d(self) -> int:
        return self.table["w_q"].rows

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_ff: int | None = None) -> "LeapBlockParams":
        d_ff = d_ff or 2 * d
        table = ParamTable()
        for name in ("w_q", "w_k", "w_v"):
            table.add(name, glorot(rng, d, d))
        table.add("ff_w1", glorot(rng, d, d_ff))
        table.add("ff_b1", zeros(1, d_ff))
        table.add("ff_w2", glorot(rng, d_ff, d))
        table.add("ff_b2", zeros(1, d))
        for ln in ("ln1", "ln2"):
            table.add(f"{ln}_gain", ones(1, d))
            table.add(f"{ln}_bias", zeros(1, d))
        return cls(table)


@dataclass
class LeapBlockOutput:
    refined_labels: Tensor  # C x d
    attention: Tensor  # C x T, softmax over segments
    raw_logits: Tensor  # C x T, scaled dot products before softmax


def leap_block(labels_in: Tensor, features: Tensor, params: LeapBlockParams) -> LeapBlockOutput:
    d = params.d
    if labels_in.cols != d or features.cols != d:
        raise ShapeError(
            f"leap_block: label width {labels_in.cols} and feature width {features.cols} "
            f"must both equal {d}"
        )
    q = labels_in @ params["w_q"]
    k = features @ params["w_k"]
    v = features @ params["w_v"]
    raw_logits = tn.scale(q @ tn.transpose(k), 1.0 / np.sqrt(d))
    attention = tn.softmax_rows(raw_logits)
    mixed = labels_in + tn.layer_norm(attention @ v, params["ln1_gain"], params["ln1_bias"])
    hidden = tn.relu(tn.add_row(mixed @ params["ff_w1"], params["ff_b1"]))
    ff = tn.add_row(hidden @ params["ff_w2"], params["ff_b2"])
    refined = mixed + tn.layer_norm(ff, params["ln2_gain"], params["ln2_bias"])
    return LeapBlockOutput(refined, attention, raw_logits)


def run_leap(labels0, features: Tensor, blocks: list[LeapBlockParams]) -> list[LeapBlockOutput]:
    """Apply the blocks in sequence, reusing the same features every time."""
    if not blocks:
        raise ValueError("run_leap needs at least one block")
    labels = Tensor(labels0.values) if isinstance(labels0, LabelEmbeddingMatrix) else labels0
    outputs = []
    for params in blocks:
        out = leap_block(labels, features, params)
        outputs.append(out)
        labels = out.refined_labels
    return outputs


def select_output(outputs: list[LeapBlockOutput], selection: str = "last") -> tuple[Tensor, Tensor]:
    """Pick (raw_logits, refined_labels) used by the prediction heads."""
    if selection == "last":
        return outputs[-1].raw_logits, outputs[-1].refined_labels
    if selection == "first":
        return outputs[0].raw_logits, outputs[0].refined_labels
    if selection == "average":
        w = 1.0 / len(outputs)
        logits, labels = outputs[0].raw_logits, outputs[0].refined_labels
        for out in outputs[1:]:
            logits = logits + out.raw_logits
            labels = labels + out.refined_labels
        return tn.scale(logits, w), tn.scale(labels, w)
    raise ValueError(f"unknown block selection {selection!r}; expected one of {BLOCK_SELECTIONS}")


def segment_predictions(raw_logits: Tensor) -> Tensor:
    """T x C segment probabilities: sigmoid of the transposed raw logits."""
    return tn.sigmoid(tn.transpose(raw_logits))


def video_predictions(refined_labels: Tensor, head: Tensor) -> Tensor:
    if head.shape != (1, refined_labels.cols):
        raise ShapeError(
            f"video_predictions: head must be (1, {refined_labels.cols}), got {head.shape}"
        )
    return tn.sigmoid(head @ tn.transpose(refined_labels))


def union_prediction(p_a, p_v, threshold: float = 0.5) -> np.ndarray:
    """Binary video-level union: a class is on if either modality reaches the threshold."""
    pa = np.asarray(p_a.data if isinstance(p_a, Tensor) else p_a, dtype=np.float64)
    pv = np.asarray(p_v.data if isinstance(p_v, Tensor) else p_v, dtype=np.float64)
    return ((pa >= threshold) | (pv >= threshold)).astype(np.int64)


@dataclass
class PredictionBundle:
    """Decoder outputs for one video.

    ``union_prob`` is the differentiable video-level union probability used in
    training; ``union`` is the hard thresholded union used at inference.
    """

    segment_probs: dict[str, Tensor]  # T x C per modality
    video_probs: dict[str, Tensor]  # 1 x C per modality
    union_prob: Tensor  # 1 x C
    union: np.ndarray  # 1 x C in {0, 1}
    extras: dict = field(default_factory=dict)


def probabilistic_or(p_a: Tensor, p_v: Tensor) -> Tensor:
    return p_a + p_v - tn.mul(p_a, p_v)


class LeapDecoder:
    """Trainable label embeddings, one block stack per modality, shared video head."""

    def __init__(self, labels: Tensor, blocks: dict[str, list[LeapBlockParams]], head: Tensor,
                 class_names: list[str], selection: str = "last", threshold: float = 0.5):
        if selection not in BLOCK_SELECTIONS:
            raise ValueError(f"unknown block selection {selection!r}")
        self.labels = labels
        self.blocks = blocks
        self.head = head
        self.class_names = class_names
        self.selection = selection
        self.threshold = threshold

    @classmethod
    def init(cls, rng: np.random.Generator, embeddings: LabelEmbeddingMatrix, num_blocks: int = 2,
             d_ff: int | None = None, selection: str = "last", threshold: float = 0.5) -> "LeapDecoder":
        if num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        d = embeddings.d
        labels = Tensor(embeddings.values, requires_grad=True, name="labels")
        blocks = {
            m: [LeapBlockParams.init(rng, d, d_ff) for _ in range(num_blocks)]
            for m in ("audio", "visual")
        }
        head = Tensor(glorot(rng, 1, d), requires_grad=True, name="head")
        return cls(labels, blocks, head, list(embeddings.class_names), selection, threshold)

    def parameters(self) -> dict[str, Tensor]:
        params = {"leap/labels": self.labels, "leap/head": self.head}
        for m, stack in self.blocks.items():
            for i, block in enumerate(stack):
                for k, v in block.table.items():
                    params[f"leap/{m}/block{i}/{k}"] = v
        return params

    def __call__(self, F_a: Tensor, F_v: Tensor) -> PredictionBundle:
        seg, vid, outs = {}, {}, {}
        for m, feats in (("audio", F_a), ("visual", F_v)):
            outputs = run_leap(self.labels, feats, self.blocks[m])
            logits, refined = select_output(outputs, self.selection)
            seg[m] = segment_predictions(logits)
            vid[m] = video_predictions(refined, self.head)
            outs[m] = outputs
        return PredictionBundle(
            segment_probs=seg,
            video_probs=vid,
            union_prob=probabilistic_or(vid["audio"], vid["visual"]),
            union=union_prediction(vid["audio"], vid["visual"], self.threshold),
            extras={"blocks": outs},
        )
