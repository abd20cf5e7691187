"""A single hybrid self-/cross-attention layer producing audio and visual features.

This stands in for HAN-style audio-visual encoders. Each modality output is

    X + LN(self_attention(X, X)) + LN(cross_attention(X, X_other))

where ``X`` is the linearly projected raw input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .params import ParamTable, glorot, ones, zeros
from .tensor import ShapeError, Tensor

MODALITIES = ("audio", "visual")


@dataclass
class FeatureSequence:
    modality: str
    values: Tensor
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.values.rows

    @property
    def d(self) -> int:
        return self.values.cols


class EncoderParams:
    """Per-modality input projections, attention projections and LN affines."""

    def __init__(self, table: ParamTable, d_in_audio: int, d_in_visual: int, d: int,
                 positional: bool = False):
        self.table = table
        self.d_in = {"audio": d_in_audio, "visual": d_in_visual}
        self.d = d
        self.positional = positional

    def __getitem__(self, key: tuple[str, str]) -> Tensor:
        modality, name = key
        return self.table[f"{modality}/{name}"]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in_audio: int = 16, d_in_visual: int = 24,
             d: int = 32, positional: bool = False) -> "EncoderParams":
        table = ParamTable()
        for m, d_in in (("audio", d_in_audio), ("visual", d_in_visual)):
            table.add(f"{m}/proj_w", glorot(rng, d_in, d))
            table.add(f"{m}/proj_b", zeros(1, d))
            for kind in ("self", "cross"):
                for p in ("q", "k", "v"):
                    table.add(f"{m}/{kind}_{p}", glorot(rng, d, d))
                table.add(f"{m}/{kind}_ln_gain", ones(1, d))
                table.add(f"{m}/{kind}_ln_bias", zeros(1, d))
        return cls(table, d_in_audio, d_in_visual, d, positional)

    @classmethod
    def shared(cls, rng: np.random.Generator, d_in: int, d: int) -> "EncoderParams":
        """Identical parameters for both modalities (symmetry fixtures)."""
        base = cls.init(rng, d_in, d_in, d)
        for name in list(base.table):
            if name.startswith("visual/"):
                base.table[name] = base.table["audio/" + name[len("visual/"):]]
        return base


def sinusoidal_positions(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def attend(queries: Tensor, keys_values: Tensor, wq: Tensor, wk: Tensor, wv: Tensor):
    """Single-head scaled dot-product attention; returns (output, weights)."""
    d = wq.cols
    logits = tn.scale(tn.matmul(queries @ wq, tn.transpose(keys_values @ wk)), 1.0 / np.sqrt(d))
    weights = tn.softmax_rows(logits)
    return weights @ (keys_values @ wv), weights


def encode(raw_audio, raw_visual, params: EncoderParams) -> tuple[FeatureSequence, FeatureSequence]:
    raw = {"audio": tn.as_tensor(raw_audio), "visual": tn.as_tensor(raw_visual)}
    if raw["audio"].rows != raw["visual"].rows:
        raise ShapeError(
            f"encode: audio has T={raw['audio'].rows} segments, visual has T={raw['visual'].rows}"
        )
    for m in MODALITIES:
        if raw[m].cols != params.d_in[m]:
            raise ShapeError(
                f"encode: {m} width {raw[m].cols} does not match configured {params.d_in[m]}"
            )
    T = raw["audio"].rows
    projected = {}
    for m in MODALITIES:
        x = tn.add_row(raw[m] @ params[m, "proj_w"], params[m, "proj_b"])
        if params.positional:
            x = x + Tensor(sinusoidal_positions(T, params.d))
        projected[m] = x

    outputs = []
    for m, other in (("audio", "visual"), ("visual", "audio")):
        x = projected[m]
        self_out, self_w = attend(x, x, params[m, "self_q"], params[m, "self_k"], params[m, "self_v"])
        cross_out, cross_w = attend(
            x, projected[other], params[m, "cross_q"], params[m, "cross_k"], params[m, "cross_v"]
        )
        y = (
            x
            + tn.layer_norm(self_out, params[m, "self_ln_gain"], params[m, "self_ln_bias"])
            + tn.layer_norm(cross_out, params[m, "cross_ln_gain"], params[m, "cross_ln_bias"])
        )
        outputs.append(FeatureSequence(m, y, {"self": self_w.data, "cross": cross_w.data}))
    return outputs[0], outputs[1]
