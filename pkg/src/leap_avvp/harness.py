"""Experiment configuration, training loop, evaluation and multi-run comparison."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as tn
from .data import Dataset, DatasetConfig, VideoRecord, generate_dataset, load_dataset
from .encoder import EncoderParams, encode
from .leap import BLOCK_SELECTIONS, LeapDecoder, PredictionBundle, init_label_embeddings
from .losses import avss_loss, basic_loss_terms, cosine_matrix, eiou_matrix, total_loss
from .metrics import MetricReport, aggregate, binarize, empty_report, is_overlapping, score_video
from .mmil import MmilDecoder
from .tensor import Adam, AdamState, Tensor

log = logging.getLogger(__name__)

SUBSETS = ("all", "overlapping", "non-overlapping")


class CheckpointError(RuntimeError):
    """A checkpoint file that cannot be read."""


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite quantity."""


@dataclass
class ExperimentConfig:
    decoder: str = "leap"
    num_blocks: int = 2
    block_selection: str = "last"
    lam: float = 1.0
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    threshold: float = 0.5
    miou_threshold: float = 0.5
    seed: int = 0
    dataset: dict | str = field(default_factory=dict)
    label_embeddings: str = "random"
    d: int = 32
    d_ff: int | None = None
    positional: bool = False
    report_path: str | None = None

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.decoder not in ("leap", "mmil"):
            problems.append(f"decoder must be 'leap' or 'mmil', got {self.decoder!r}")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.num_blocks < 1:
            problems.append("num_blocks must be >= 1")
        if self.block_selection not in BLOCK_SELECTIONS:
            problems.append(f"block_selection must be one of {BLOCK_SELECTIONS}")
        if not 0.0 < self.threshold < 1.0:
            problems.append("threshold must be in (0, 1)")
        if not 0.0 < self.miou_threshold <= 1.0:
            problems.append("miou_threshold must be in (0, 1]")
        if self.lam < 0:
            problems.append("lambda must be >= 0")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if self.d < 1:
            problems.append("d must be >= 1")
        if problems:
            raise ValueError("invalid ExperimentConfig: " + "; ".join(problems))
        if isinstance(self.dataset, dict):
            DatasetConfig.from_dict(self.dataset)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ExperimentConfig fields: {sorted(unknown)}")
        return cls(**d).validate()

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new.validate()

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("report_path")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -- datasets -----------------------------------------------------------------


@lru_cache(maxsize=8)
def _generated(config_json: str) -> Dataset:
    return generate_dataset(DatasetConfig.from_dict(json.loads(config_json)))


def resolve_dataset(source: dict | str | Dataset) -> Dataset:
    """A generate-config dict, a dataset directory, or an in-memory dataset."""
    if isinstance(source, Dataset):
        return source
    if isinstance(source, str):
        return load_dataset(source)
    return _generated(json.dumps(asdict(DatasetConfig.from_dict(source)), sort_keys=True))


# -- model --------------------------------------------------------------------


class AvvpModel:
    """Encoder plus a LEAP or MMIL decoder."""

    def __init__(self, encoder: EncoderParams, decoder):
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def build(cls, config: ExperimentConfig, num_classes: int, d_in_audio: int,
              d_in_visual: int) -> "AvvpModel":
        rng = np.random.default_rng(config.seed)
        encoder = EncoderParams.init(rng, d_in_audio, d_in_visual, config.d, config.positional)
        if config.decoder == "leap":
            emb = init_label_embeddings(config.label_embeddings, num_classes, config.d, seed=config.seed)
            decoder = LeapDecoder.init(rng, emb, config.num_blocks, config.d_ff,
                                       config.block_selection, config.threshold)
        else:
            decoder = MmilDecoder.init(rng, config.d, num_classes, config.threshold)
        return cls(encoder, decoder)

    def parameters(self) -> dict[str, Tensor]:
        params = {f"encoder/{k}": v for k, v in self.encoder.table.items()}
        params.update(self.decoder.parameters())
        return params

    def forward(self, rec: VideoRecord) -> tuple[Tensor, Tensor, PredictionBundle]:
        fa, fv = encode(rec.audio, rec.visual, self.encoder)
        return fa.values, fv.values, self.decoder(fa.values, fv.values)


def video_loss(model: AvvpModel, rec: VideoRecord, lam: float):
    """Per-video objective; also returns the similarity MSE as a diagnostic."""
    F_a, F_v, preds = model.forward(rec)
    terms = basic_loss_terms(preds, rec.pseudo_audio, rec.pseudo_visual, rec.weak)
    basic = terms["union/audio"]
    for name in ("video/audio", "segment/audio", "union/visual", "video/visual", "segment/visual"):
        basic = basic + terms[name]
    r = eiou_matrix(rec.pseudo_audio, rec.pseudo_visual)
    if lam > 0:
        avss = avss_loss(cosine_matrix(F_a, F_v), r)
        sim_mse = avss.item()
    else:
        avss = Tensor(0.0)
        with tn.no_grad():
            sim_mse = avss_loss(cosine_matrix(F_a, F_v), r).item()
    report = total_loss(basic, avss, lam, {k: v.item() for k, v in terms.items()})
    return report, sim_mse


# -- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    config: ExperimentConfig

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "adam": {"learning_rate": self.adam.learning_rate, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "epsilon": self.adam.epsilon,
                     "step_count": self.adam.step_count},
            "version": __version__,
        }
        arrays = {f"param:{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m:{k}": v for k, v in self.adam.first_moment.items()})
        arrays.update({f"adam_v:{k}": v for k, v in self.adam.second_moment.items()})
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(str(z["__meta__"]))
                params, m, v = {}, {}, {}
                for key in z.files:
                    kind, _, name = key.partition(":")
                    target = {"param": params, "adam_m": m, "adam_v": v}.get(kind)
                    if target is not None:
                        target[name] = z[key].copy()
            a = meta["adam"]
        except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        adam = AdamState(a["learning_rate"], a["beta1"], a["beta2"], a["epsilon"], a["step_count"], m, v)
        return cls(params, adam, meta["epoch"], ExperimentConfig.from_dict(meta["config"]))

    def model(self, dataset: Dataset | None = None) -> AvvpModel:
        C = self.params["mmil/cls_audio"].shape[1] if "mmil/cls_audio" in self.params \
            else self.params["leap/labels"].shape[0]
        da = self.params["encoder/audio/proj_w"].shape[0]
        dv = self.params["encoder/visual/proj_w"].shape[0]
        if dataset is not None:
            if dataset.num_classes != C or dataset.widths != (da, dv):
                raise ValueError(
                    f"checkpoint expects C={C}, widths=({da}, {dv}); dataset has "
                    f"C={dataset.num_classes}, widths={dataset.widths}"
                )
        model = AvvpModel.build(self.config, C, da, dv)
        for k, p in model.parameters().items():
            p.data[...] = self.params[k]
        return model


# -- training -------------------------------------------------------------------


def _snapshot(model: AvvpModel, opt: Adam, epoch: int, config: ExperimentConfig) -> Checkpoint:
    state = opt.state
    adam = AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon, state.step_count,
                     {k: v.copy() for k, v in state.first_moment.items()},
                     {k: v.copy() for k, v in state.second_moment.items()})
    return Checkpoint({k: p.data.copy() for k, p in model.parameters().items()}, adam, epoch, config)


def _finite_or_raise(values: dict[str, float], where: str) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} ({v}) {where}")


def train(config: ExperimentConfig, dataset: Dataset | None = None) -> tuple[Checkpoint, list[dict]]:
    """Mini-batch Adam on the total objective; keeps the best epoch by val Type@AV."""
    config.validate()
    dataset = dataset or resolve_dataset(config.dataset)
    train_recs = dataset["train"]
    if not train_recs:
        raise ValueError("training split is empty")
    val_recs = dataset.splits.get("val") or []
    da, dv = dataset.widths
    model = AvvpModel.build(config, dataset.num_classes, da, dv)
    params = model.parameters()
    opt = Adam(params, lr=config.learning_rate)
    shuffle = np.random.default_rng([config.seed, 1])

    history: list[dict] = []
    best: Checkpoint | None = None
    best_score = -1.0
    n = len(train_recs)
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        sums: dict[str, float] = {}
        for start in range(0, n, config.batch_size):
            batch = [train_recs[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            objective = None
            for rec in batch:
                rep, sim = video_loss(model, rec, config.lam)
                values = {"total": rep.total, "basic": rep.basic, "avss": rep.avss, "sim_mse": sim,
                          **{f"term:{k}": v for k, v in rep.terms.items()}}
                _finite_or_raise(values, f"for video {rec.id} at epoch {epoch}")
                for k, v in values.items():
                    sums[k] = sums.get(k, 0.0) + v
                objective = rep.node if objective is None else objective + rep.node
            tn.scale(objective, 1.0 / len(batch)).backward()
            opt.step()
        entry = {"epoch": epoch}
        entry.update({k: v / n for k, v in sums.items() if not k.startswith("term:")})
        entry["terms"] = {k[5:]: v / n for k, v in sums.items() if k.startswith("term:")}
        if val_recs:
            val = evaluate_model(model, val_recs, config.threshold, config.miou_threshold)["all"]
            entry["val_type_at_av"] = val.segment["type_at_av"]
        else:
            entry["val_type_at_av"] = 0.0
        history.append(entry)
        log.info("epoch %d total %.4f basic %.4f avss %.4f val Type@AV %.4f", epoch,
                 entry["total"], entry["basic"], entry["avss"], entry["val_type_at_av"])
        score = entry["val_type_at_av"] if val_recs else float(epoch)
        if score > best_score:
            best_score = score
            best = _snapshot(model, opt, epoch, config)
    assert best is not None
    return best, history


# -- evaluation -----------------------------------------------------------------


def predict(model: AvvpModel, rec: VideoRecord, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    with tn.no_grad():
        _, _, preds = model.forward(rec)
    return (binarize(preds.segment_probs["audio"].data, threshold),
            binarize(preds.segment_probs["visual"].data, threshold))


def evaluate_predictions(records: list[VideoRecord], predictions: dict[str, tuple[np.ndarray, np.ndarray]],
                         miou_threshold: float = 0.5) -> dict[str, MetricReport]:
    """Metrics on all videos and on the overlapping / non-overlapping subsets."""
    scores = {"all": [], "overlapping": [], "non-overlapping": []}
    for rec in sorted(records, key=lambda r: r.id):
        pa, pv = predictions[rec.id]
        if pa.shape != rec.gt_audio.shape or pv.shape != rec.gt_visual.shape:
            raise ValueError(f"{rec.id}: prediction shape does not match ground truth")
        s = score_video(pa, pv, rec.gt_audio, rec.gt_visual, rec.id, miou_threshold)
        scores["all"].append(s)
        scores["overlapping" if is_overlapping(rec.gt_audio, rec.gt_visual) else "non-overlapping"].append(s)
    return {k: aggregate(v, k) if v else empty_report(k) for k, v in scores.items()}


def evaluate_model(model: AvvpModel, records: list[VideoRecord], threshold: float = 0.5,
                   miou_threshold: float = 0.5) -> dict[str, MetricReport]:
    preds = {rec.id: predict(model, rec, threshold) for rec in records}
    return evaluate_predictions(records, preds, miou_threshold)


def evaluate(checkpoint: Checkpoint, dataset: Dataset, split: str = "test",
             threshold: float | None = None) -> dict[str, MetricReport]:
    model = checkpoint.model(dataset)
    thr = checkpoint.config.threshold if threshold is None else threshold
    return evaluate_model(model, dataset[split], thr, checkpoint.config.miou_threshold)


def evaluation_result(checkpoint: Checkpoint, metrics: dict[str, MetricReport], split: str) -> dict:
    return {
        "kind": "evaluation",
        "artifact_version": __version__,
        "config_hash": checkpoint.config_hash,
        "config": checkpoint.config.to_dict(),
        "split": split,
        "checkpoint_epoch": checkpoint.epoch,
        "metrics": {k: v.as_dict() for k, v in metrics.items()},
    }


def training_result(checkpoint: Checkpoint, history: list[dict]) -> dict:
    return {
        "kind": "training",
        "artifact_version": __version__,
        "config_hash": checkpoint.config_hash,
        "config": checkpoint.config.to_dict(),
        "best_epoch": checkpoint.epoch,
        "log": history,
    }


# -- comparison -----------------------------------------------------------------


def _mean_reports(reports: list[dict]) -> dict:
    out = {"video_count": reports[0]["video_count"]}
    for level in ("segment", "event"):
        out[level] = {k: float(np.mean([r[level][k] for r in reports])) for k in reports[0][level]}
    return out


def _event_average(report: dict) -> float:
    ev = report["event"]
    return float(np.mean([ev[k] for k in ("audio", "visual", "av", "type_at_av", "event_at_av")]))


def compare(configs: dict[str, ExperimentConfig], seeds: list[int], split: str = "test",
            kind: str = "comparison") -> dict:
    """Train every named config on every seed and tabulate test metrics.

    Deltas are relative to the first config.
    """
    if len(configs) < 2:
        raise ValueError("compare needs at least two configs")
    if not seeds:
        raise ValueError("compare needs at least one seed")
    names = list(configs)
    sources = {json.dumps(c.dataset, sort_keys=True) for c in configs.values()}
    if len(sources) != 1:
        raise ValueError("all compared configs must share the same dataset")
    dataset = resolve_dataset(configs[names[0]].dataset)
    results = {}
    for name in names:
        per_seed = {}
        for seed in seeds:
            cfg = configs[name].replace(seed=seed)
            ckpt, _ = train(cfg, dataset)
            metrics = evaluate(ckpt, dataset, split)
            per_seed[str(seed)] = {k: v.as_dict() for k, v in metrics.items()}
            log.info("%s seed %d: seg Type@AV %.4f", name, seed, metrics["all"].segment["type_at_av"])
        mean = {s: _mean_reports([per_seed[str(seed)][s] for seed in seeds]) for s in SUBSETS}
        results[name] = {
            "config": configs[name].to_dict(),
            "config_hash": configs[name].hash(),
            "per_seed": per_seed,
            "mean": mean,
            "event_average": {s: _event_average(mean[s]) for s in SUBSETS},
        }
    base = results[names[0]]
    deltas = {}
    for name in names[1:]:
        deltas[name] = {
            s: {level: {k: results[name]["mean"][s][level][k] - base["mean"][s][level][k]
                        for k in base["mean"][s][level]}
                for level in ("segment", "event")}
            for s in SUBSETS
        }
        for s in SUBSETS:
            deltas[name][s]["event_average"] = (results[name]["event_average"][s]
                                                - base["event_average"][s])
    joint = hashlib.sha256("".join(results[n]["config_hash"] for n in names).encode()).hexdigest()[:16]
    return {
        "kind": kind,
        "artifact_version": __version__,
        "config_hash": joint,
        "seeds": list(seeds),
        "split": split,
        "order": names,
        "results": results,
        "deltas": deltas,
    }


ABLATION_AXES = {
    "num_blocks": "num_blocks",
    "block_selection": "block_selection",
    "lambda": "lam",
    "label_embeddings": "label_embeddings",
    "decoder": "decoder",
}


def ablate(base: ExperimentConfig, axis: str, values: list, seeds: list[int], split: str = "test") -> dict:
    """One row per value of ``axis``, everything else held at ``base``."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(ABLATION_AXES)}")
    if len(values) < 2:
        raise ValueError("an ablation needs at least two values")
    configs = {f"{axis}={v}": base.replace(**{ABLATION_AXES[axis]: v}) for v in values}
    result = compare(configs, seeds, split, kind="ablation")
    result["axis"] = axis
    return result
