"""Synthetic audio-visual event data and the JSON Lines dataset format.

Generation procedure (all draws from :mod:`leap_avvp.prng`, in this order):

1. Prototypes: stream ``derive_seed(seed, 0)``. For each class, ``d_in_audio``
   normals normalized to unit norm; then the same for the visual width.
2. Each split k (train=1, val=2, test=3) uses stream ``derive_seed(seed, k)``
   for events and feature noise and ``derive_seed(seed, 10 + k)`` for
   pseudo-label flips. Per video:

   * ``n = randint(min_events, max_events)`` events. For every event after the
     first, ``uniform() < overlap_prob`` decides overlap placement.
   * Overlap placement: an anchor is drawn uniformly from the occupied
     ``(modality, segment)`` cells (audio cells first, segments ascending);
     ``uniform() < agreement_prob`` decides both modalities, otherwise the
     anchor's modality; the class is drawn from classes not active at the
     anchor; ``length = randint(1, T)`` and the start is drawn among
     positions covering the anchor segment.
   * Free placement: ``uniform() < agreement_prob`` decides both modalities,
     otherwise ``uniform() < 0.5`` picks audio over visual; a maximal run of
     segments unoccupied in the chosen modalities is drawn (the whole video
     if none is free), then ``length = randint(1, run length)``, a start
     inside the run, and ``class = randint(0, C - 1)``.
   * Features: per segment, the sum of active-class prototypes plus
     ``sigma / sqrt(width)`` times a normal per entry (audio rows, then
     visual rows, row-major). Noise is drawn even when sigma is 0.
   * Pseudo labels: one ``uniform()`` per label cell (audio then visual,
     row-major) from the flip stream; the bit flips when below
     ``flip_prob``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .metrics import extract_events, is_overlapping
from .prng import Xoshiro256, derive_seed

SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1


@dataclass
class DatasetConfig:
    num_classes: int = 8
    segments: int = 10
    d_in_audio: int = 16
    d_in_visual: int = 24
    train_videos: int = 500
    val_videos: int = 100
    test_videos: int = 200
    min_events: int = 1
    max_events: int = 3
    overlap_prob: float = 0.3
    agreement_prob: float = 0.6
    sigma: float = 0.1
    flip_prob: float = 0.0
    seed: int = 0

    def validate(self) -> "DatasetConfig":
        problems = []
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.segments < 2:
            problems.append("segments must be >= 2")
        if self.d_in_audio < 1 or self.d_in_visual < 1:
            problems.append("feature widths must be >= 1")
        for name in ("train_videos", "val_videos", "test_videos"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not 1 <= self.min_events <= self.max_events:
            problems.append("need 1 <= min_events <= max_events")
        for name in ("overlap_prob", "agreement_prob", "flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        if self.sigma < 0:
            problems.append("sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ValueError("invalid DatasetConfig: " + "; ".join(problems))
        return self

    def split_size(self, split: str) -> int:
        return getattr(self, f"{split}_videos")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DatasetConfig fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class VideoRecord:
    id: str
    audio: np.ndarray  # T x d_in_audio
    visual: np.ndarray  # T x d_in_visual
    gt_audio: np.ndarray  # T x C
    gt_visual: np.ndarray
    pseudo_audio: np.ndarray
    pseudo_visual: np.ndarray
    weak: np.ndarray  # C

    @property
    def T(self) -> int:
        return self.audio.shape[0]

    @property
    def C(self) -> int:
        return self.gt_audio.shape[1]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "audio": self.audio.tolist(),
            "visual": self.visual.tolist(),
            "gt_audio": self.gt_audio.tolist(),
            "gt_visual": self.gt_visual.tolist(),
            "pseudo_audio": self.pseudo_audio.tolist(),
            "pseudo_visual": self.pseudo_visual.tolist(),
            "weak": self.weak.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "VideoRecord":
        missing = {"id", "audio", "visual", "gt_audio", "gt_visual", "pseudo_audio",
                   "pseudo_visual", "weak"} - set(d)
        if missing:
            raise ValueError(f"video record missing fields: {sorted(missing)}")
        rec = cls(
            id=str(d["id"]),
            audio=np.array(d["audio"], dtype=np.float64),
            visual=np.array(d["visual"], dtype=np.float64),
            gt_audio=np.array(d["gt_audio"], dtype=np.int64),
            gt_visual=np.array(d["gt_visual"], dtype=np.int64),
            pseudo_audio=np.array(d["pseudo_audio"], dtype=np.int64),
            pseudo_visual=np.array(d["pseudo_visual"], dtype=np.int64),
            weak=np.array(d["weak"], dtype=np.int64),
        )
        rec.validate()
        return rec

    def validate(self) -> None:
        T = self.audio.shape[0]
        if self.audio.ndim != 2 or self.visual.ndim != 2 or self.visual.shape[0] != T or T < 1:
            raise ValueError(f"{self.id}: audio/visual must be T x d with equal T >= 1")
        labels = (self.gt_audio, self.gt_visual, self.pseudo_audio, self.pseudo_visual)
        C = self.gt_audio.shape[1] if self.gt_audio.ndim == 2 else -1
        for y in labels:
            if y.shape != (T, C):
                raise ValueError(f"{self.id}: label tensors must all be {T} x {C}")
            if not np.all((y == 0) | (y == 1)):
                raise ValueError(f"{self.id}: labels must be 0/1")
        if self.weak.shape != (C,) or not np.array_equal(self.weak, weak_label(self.gt_audio, self.gt_visual)):
            raise ValueError(f"{self.id}: weak label disagrees with ground truth")
        if not (np.all(np.isfinite(self.audio)) and np.all(np.isfinite(self.visual))):
            raise ValueError(f"{self.id}: features contain non-finite values")


@dataclass
class Dataset:
    config: DatasetConfig | None
    splits: dict[str, list[VideoRecord]]
    prototypes: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, split: str) -> list[VideoRecord]:
        return self.splits[split]

    @property
    def num_classes(self) -> int:
        return next(r.C for recs in self.splits.values() for r in recs)

    @property
    def widths(self) -> tuple[int, int]:
        rec = next(r for recs in self.splits.values() for r in recs)
        return rec.audio.shape[1], rec.visual.shape[1]


def weak_label(gt_audio, gt_visual) -> np.ndarray:
    return (np.asarray(gt_audio).max(axis=0) | np.asarray(gt_visual).max(axis=0)).astype(np.int64)


def make_prototypes(rng: Xoshiro256, num_classes: int, d_audio: int, d_visual: int) -> dict[str, np.ndarray]:
    protos = {}
    for m, width in (("audio", d_audio), ("visual", d_visual)):
        rows = []
        for _ in range(num_classes):
            v = np.array([rng.normal() for _ in range(width)])
            rows.append(v / math.sqrt(float(v @ v)))
        protos[m] = np.array(rows)
    return protos


def _free_runs(free: np.ndarray) -> list[tuple[int, int]]:
    return [(e.start, e.end) for e in extract_events(free)]


def sample_events(rng: Xoshiro256, cfg: DatasetConfig) -> dict[str, np.ndarray]:
    """Ground-truth T x C label tensors for one video."""
    T, C = cfg.segments, cfg.num_classes
    gt = {"audio": np.zeros((T, C), dtype=np.int64), "visual": np.zeros((T, C), dtype=np.int64)}
    n = rng.randint(cfg.min_events, cfg.max_events)
    for e in range(n):
        if e > 0 and rng.uniform() < cfg.overlap_prob:
            occupied = [(m, t) for m in ("audio", "visual") for t in range(T) if gt[m][t].any()]
            anchor_m, anchor_t = occupied[rng.randint(0, len(occupied) - 1)]
            mods = ("audio", "visual") if rng.uniform() < cfg.agreement_prob else (anchor_m,)
            candidates = [c for c in range(C) if gt[anchor_m][anchor_t, c] == 0] or list(range(C))
            cls = candidates[rng.randint(0, len(candidates) - 1)]
            length = rng.randint(1, T)
            start = rng.randint(max(0, anchor_t - length + 1), min(anchor_t, T - length))
        else:
            if rng.uniform() < cfg.agreement_prob:
                mods = ("audio", "visual")
            else:
                mods = ("audio",) if rng.uniform() < 0.5 else ("visual",)
            busy = np.zeros(T, dtype=bool)
            for m in mods:
                busy |= gt[m].any(axis=1)
            runs = _free_runs(~busy) or [(0, T - 1)]
            run_s, run_e = runs[rng.randint(0, len(runs) - 1)]
            length = rng.randint(1, run_e - run_s + 1)
            start = rng.randint(run_s, run_e - length + 1)
            cls = rng.randint(0, C - 1)
        for m in mods:
            gt[m][start:start + length, cls] = 1
    return gt


def render_features(rng: Xoshiro256, gt: dict[str, np.ndarray], prototypes: dict[str, np.ndarray],
                    sigma: float) -> dict[str, np.ndarray]:
    out = {}
    for m in ("audio", "visual"):
        labels = gt[m]
        T, width = labels.shape[0], prototypes[m].shape[1]
        noise_scale = sigma / math.sqrt(width)
        noise = np.array([[rng.normal() for _ in range(width)] for _ in range(T)])
        out[m] = labels.astype(np.float64) @ prototypes[m] + noise_scale * noise
    return out


def flip_labels(rng: Xoshiro256, labels: np.ndarray, flip_prob: float) -> np.ndarray:
    out = labels.copy()
    flat = out.reshape(-1)
    for i in range(flat.size):
        if rng.uniform() < flip_prob:
            flat[i] = 1 - flat[i]
    return out


def generate_dataset(config: DatasetConfig) -> Dataset:
    cfg = config.validate()
    protos = make_prototypes(Xoshiro256(derive_seed(cfg.seed, 0)), cfg.num_classes,
                             cfg.d_in_audio, cfg.d_in_visual)
    splits = {}
    for k, split in enumerate(SPLITS, 1):
        rng = Xoshiro256(derive_seed(cfg.seed, k))
        flips = Xoshiro256(derive_seed(cfg.seed, 10 + k))
        records = []
        for i in range(cfg.split_size(split)):
            gt = sample_events(rng, cfg)
            feats = render_features(rng, gt, protos, cfg.sigma)
            records.append(VideoRecord(
                id=f"{split}-{i:05d}",
                audio=feats["audio"],
                visual=feats["visual"],
                gt_audio=gt["audio"],
                gt_visual=gt["visual"],
                pseudo_audio=flip_labels(flips, gt["audio"], cfg.flip_prob),
                pseudo_visual=flip_labels(flips, gt["visual"], cfg.flip_prob),
                weak=weak_label(gt["audio"], gt["visual"]),
            ))
        splits[split] = records
    return Dataset(cfg, splits, protos)


def _event_count(y: np.ndarray) -> list[int]:
    return [len(extract_events(y[:, c])) for c in range(y.shape[1])]


def dataset_stats(dataset: Dataset) -> dict:
    """Per-split counts, overlapping fraction, per-class event counts, density."""
    out = {}
    for split, recs in dataset.splits.items():
        if not recs:
            out[split] = {"videos": 0}
            continue
        C = recs[0].C
        per_class = np.zeros(C, dtype=np.int64)
        density = []
        overlapping = 0
        for r in recs:
            per_class += np.array(_event_count(r.gt_audio)) + np.array(_event_count(r.gt_visual))
            density.append(r.gt_audio.sum(axis=1))
            density.append(r.gt_visual.sum(axis=1))
            overlapping += is_overlapping(r.gt_audio, r.gt_visual)
        out[split] = {
            "videos": len(recs),
            "overlapping_fraction": overlapping / len(recs),
            "class_frequency": per_class.tolist(),
            "total_events": int(per_class.sum()),
            "mean_events_per_segment": float(np.mean(np.concatenate(density))),
        }
    if not out:
        raise ValueError("dataset has no splits")
    return out


# -- file format --------------------------------------------------------------


def write_records(records: list[VideoRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_records(path) -> list[VideoRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(VideoRecord.from_json(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``<split>.jsonl`` files plus a ``header.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(dataset.config) if dataset.config else None,
        "seed": dataset.config.seed if dataset.config else None,
        "splits": {s: len(r) for s, r in dataset.splits.items()},
    }
    for split, recs in dataset.splits.items():
        write_records(recs, directory / f"{split}.jsonl")
    (directory / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    header_path = directory / "header.json"
    config = None
    split_names = SPLITS
    if header_path.exists():
        header = json.loads(header_path.read_text())
        if header.get("config"):
            config = DatasetConfig.from_dict(header["config"])
        split_names = tuple(header.get("splits", {}) or SPLITS)
    splits = {}
    for split in split_names:
        path = directory / f"{split}.jsonl"
        if path.exists():
            splits[split] = read_records(path)
    if not splits:
        raise FileNotFoundError(f"no split files found in {directory}")
    return Dataset(config, splits)
