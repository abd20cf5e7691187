import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leap_avvp.data import (DatasetConfig, VideoRecord, dataset_stats, flip_labels, generate_dataset,
                            load_dataset, read_records, render_features, save_dataset, weak_label,
                            write_records)
from leap_avvp.prng import SplitMix64, Xoshiro256, derive_seed


def small(**kw) -> DatasetConfig:
    base = dict(num_classes=4, segments=6, d_in_audio=5, d_in_visual=7,
                train_videos=20, val_videos=5, test_videos=8)
    base.update(kw)
    return DatasetConfig(**base)


def digest(ds) -> str:
    h = hashlib.sha256()
    for split in ("train", "val", "test"):
        for r in ds[split]:
            h.update(json.dumps(r.to_json(), sort_keys=True).encode())
    return h.hexdigest()


# -- PRNG ----------------------------------------------------------------------------


def test_splitmix64_reference_vector():
    sm = SplitMix64(0)
    assert [sm.next() for _ in range(4)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, 0xF88BB8A8724C81EC]


def test_derive_seed_is_splitmix_stream():
    sm = SplitMix64(12345)
    assert [derive_seed(12345, k) for k in range(5)] == [sm.next() for _ in range(5)]


def test_xoshiro_reference_vector():
    rng = Xoshiro256(0)
    rng.s = [1, 2, 3, 4]
    assert [rng.next() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


def test_uniform_randint_normal_ranges():
    rng = Xoshiro256(9)
    u = [rng.uniform() for _ in range(2000)]
    assert all(0.0 <= x < 1.0 for x in u)
    assert abs(np.mean(u) - 0.5) < 0.03
    r = [rng.randint(2, 4) for _ in range(600)]
    assert set(r) == {2, 3, 4}
    n = np.array([rng.normal() for _ in range(4000)])
    assert abs(n.mean()) < 0.06 and abs(n.std() - 1) < 0.06
    with pytest.raises(ValueError):
        rng.randint(3, 2)


def test_same_seed_same_stream():
    a, b = Xoshiro256(77), Xoshiro256(77)
    assert [a.next() for _ in range(10)] == [b.next() for _ in range(10)]


# -- config ----------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError, match="min_events"):
        small(min_events=4, max_events=2).validate()
    with pytest.raises(ValueError, match="overlap_prob"):
        small(overlap_prob=1.5).validate()
    with pytest.raises(ValueError, match="unknown"):
        DatasetConfig.from_dict({"classes": 3})
    assert DatasetConfig.from_dict({"num_classes": 3}).num_classes == 3


# -- generation ----------------------------------------------------------------------------


def test_generation_is_deterministic_and_seed_sensitive():
    assert digest(generate_dataset(small())) == digest(generate_dataset(small()))
    assert digest(generate_dataset(small())) != digest(generate_dataset(small(seed=1)))


def test_shapes_ids_and_weak_labels():
    ds = generate_dataset(small())
    assert [len(ds[s]) for s in ("train", "val", "test")] == [20, 5, 8]
    assert ds["train"][3].id == "train-00003"
    assert ds.num_classes == 4 and ds.widths == (5, 7)
    for r in ds["train"]:
        assert r.audio.shape == (6, 5) and r.visual.shape == (6, 7)
        assert np.array_equal(r.weak, weak_label(r.gt_audio, r.gt_visual))
        assert r.gt_audio.any() or r.gt_visual.any()
        r.validate()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4), st.floats(0, 1))
def test_event_counts_respect_bounds(seed, max_events, overlap):
    cfg = small(seed=seed, max_events=max_events, overlap_prob=overlap, train_videos=10,
                val_videos=0, test_videos=0)
    for r in generate_dataset(cfg)["train"]:
        total = r.gt_audio.sum() + r.gt_visual.sum()
        assert total >= 1
        # at most max_events distinct (class, modality) placements
        assert int((r.gt_audio.max(0) + r.gt_visual.max(0) > 0).sum()) <= max_events


def test_zero_sigma_features_are_prototype_sums():
    ds = generate_dataset(small(sigma=0.0))
    for r in ds["train"]:
        assert np.allclose(r.audio, r.gt_audio @ ds.prototypes["audio"], atol=1e-12)
        assert np.allclose(r.visual, r.gt_visual @ ds.prototypes["visual"], atol=1e-12)


def test_prototypes_unit_norm():
    ds = generate_dataset(small())
    for p in ds.prototypes.values():
        assert np.allclose(np.linalg.norm(p, axis=1), 1.0)


def test_render_noise_scale():
    protos = {"audio": np.zeros((1, 400)), "visual": np.zeros((1, 400))}
    gt = {"audio": np.zeros((50, 1), int), "visual": np.zeros((50, 1), int)}
    out = render_features(Xoshiro256(1), gt, protos, sigma=2.0)
    # per-entry std is sigma / sqrt(width), so each row has norm about sigma
    assert abs(np.linalg.norm(out["audio"], axis=1).mean() - 2.0) < 0.1


def test_single_event_segments_are_nearest_prototype_separable():
    ds = generate_dataset(small(max_events=1, sigma=0.1))
    for r in ds["train"]:
        for feats, gt, m in ((r.audio, r.gt_audio, "audio"), (r.visual, r.gt_visual, "visual")):
            for t in np.flatnonzero(gt.sum(axis=1) == 1):
                assert int(np.argmax(ds.prototypes[m] @ feats[t])) == int(np.argmax(gt[t]))


def test_flip_probability_zero_and_one():
    ds = generate_dataset(small())
    for r in ds["train"]:
        assert np.array_equal(r.pseudo_audio, r.gt_audio)
        assert np.array_equal(r.pseudo_visual, r.gt_visual)
    y = np.array([[0, 1], [1, 0]])
    assert np.array_equal(flip_labels(Xoshiro256(0), y, 1.0), 1 - y)


def test_flips_do_not_change_ground_truth_or_features():
    clean = generate_dataset(small())
    noisy = generate_dataset(small(flip_prob=0.2))
    a, b = clean["train"], noisy["train"]
    assert all(np.array_equal(x.gt_audio, y.gt_audio) and np.array_equal(x.audio, y.audio)
               for x, y in zip(a, b))
    assert any(not np.array_equal(y.pseudo_audio, y.gt_audio) for y in b)


# -- stats ----------------------------------------------------------------------------------


def test_stats_single_event_has_no_overlap():
    stats = dataset_stats(generate_dataset(small(max_events=1)))
    assert stats["train"]["overlapping_fraction"] == 0.0


def test_stats_forced_overlap():
    cfg = small(min_events=2, max_events=3, overlap_prob=1.0, agreement_prob=1.0)
    stats = dataset_stats(generate_dataset(cfg))
    assert stats["train"]["overlapping_fraction"] == 1.0


def test_stats_frequencies_sum_to_total():
    stats = dataset_stats(generate_dataset(small()))
    for s in ("train", "val", "test"):
        assert sum(stats[s]["class_frequency"]) == stats[s]["total_events"]
        assert stats[s]["videos"] > 0


# -- file format ---------------------------------------------------------------------------------


def test_jsonl_roundtrip(tmp_path):
    ds = generate_dataset(small())
    save_dataset(ds, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.config == ds.config
    assert digest(loaded) == digest(ds)
    assert (tmp_path / "ds" / "header.json").exists()


def test_read_records_reports_bad_line(tmp_path):
    ds = generate_dataset(small())
    path = tmp_path / "x.jsonl"
    write_records(ds["val"][:2], path)
    bad = ds["val"][2].to_json()
    bad["weak"] = [1 - w for w in bad["weak"]]
    with open(path, "a") as fh:
        fh.write(json.dumps(bad) + "\n")
    with pytest.raises(ValueError, match=":3:"):
        read_records(path)


def test_record_validation_errors():
    ok = dict(id="v", audio=np.zeros((2, 3)), visual=np.zeros((2, 4)),
              gt_audio=np.array([[1, 0], [0, 0]]), gt_visual=np.zeros((2, 2), int),
              pseudo_audio=np.array([[1, 0], [0, 0]]), pseudo_visual=np.zeros((2, 2), int),
              weak=np.array([1, 0]))
    VideoRecord(**ok).validate()
    with pytest.raises(ValueError, match="equal T"):
        VideoRecord(**{**ok, "visual": np.zeros((3, 4))}).validate()
    with pytest.raises(ValueError, match="0/1"):
        VideoRecord(**{**ok, "pseudo_visual": np.full((2, 2), 2)}).validate()
    with pytest.raises(ValueError, match="non-finite"):
        VideoRecord(**{**ok, "audio": np.full((2, 3), np.nan)}).validate()
    with pytest.raises(ValueError, match="missing"):
        VideoRecord.from_json({"id": "x"})


def test_load_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
