import numpy as np
import pytest

from duwmt.data import (
    Manifest,
    SampleRecord,
    batches,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
)
from duwmt.errors import ConfigError, DataError


def test_generation_is_bitwise_deterministic():
    a = generate_synthetic(4, 32, seed=3)
    b = generate_synthetic(4, 32, seed=3)
    for sid in a.samples:
        assert a.samples[sid].image.tobytes() == b.samples[sid].image.tobytes()
        assert a.samples[sid].mask.tobytes() == b.samples[sid].mask.tobytes()


def test_generation_seed_sensitivity():
    a = generate_synthetic(2, 32, seed=3)
    b = generate_synthetic(2, 32, seed=4)
    assert a.samples["s0000"].image.tobytes() != b.samples["s0000"].image.tobytes()


def test_every_mask_nonempty_and_images_in_range():
    ds = generate_synthetic(20, 32, seed=0)
    for rec in ds.samples.values():
        assert rec.mask.sum() > 0
        assert set(np.unique(rec.mask)) <= {0, 1}
        assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0
        assert rec.image.shape == (1, 32, 32)


def test_foreground_brighter_than_background():
    ds = generate_synthetic(20, 32, seed=1)
    for rec in ds.samples.values():
        fg = rec.image[0][rec.mask == 1].mean()
        bg = rec.image[0][rec.mask == 0].mean()
        assert fg > bg


def test_invalid_generation_args():
    with pytest.raises(ConfigError):
        generate_synthetic(4, 30, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic(0, 32, seed=0)


def test_split_partitions_and_masks():
    ds = generate_synthetic(10, 16, seed=2)
    m = split(ds, n_labeled=3, seed=7, n_test=4)
    assert len(m.train_labeled) == 3
    assert len(m.train_unlabeled) == 3
    assert len(m.test) == 4
    m.validate()
    for sid in m.train_unlabeled:
        assert ds.samples[sid].mask is None and not ds.samples[sid].labeled
    for sid in m.train_labeled + m.test:
        assert ds.samples[sid].mask is not None


def test_split_deterministic():
    a = generate_synthetic(10, 16, seed=2)
    b = generate_synthetic(10, 16, seed=2)
    ma = split(a, 3, seed=7, n_test=4)
    mb = split(b, 3, seed=7, n_test=4)
    assert ma.to_dict() == mb.to_dict()


def test_split_all_labeled_supervised_setting():
    ds = generate_synthetic(6, 16, seed=2)
    m = split(ds, n_labeled=6, seed=0)
    assert len(m.train_unlabeled) == 0 and len(m.test) == 0


def test_split_rejects_overcommit():
    ds = generate_synthetic(5, 16, seed=2)
    with pytest.raises(ConfigError):
        split(ds, n_labeled=4, seed=0, n_test=2)


def test_round_trip_is_bitwise_lossless(tmp_path):
    ds = generate_synthetic(6, 16, seed=5)
    split(ds, 2, seed=1, n_test=2)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.manifest.to_dict() == ds.manifest.to_dict()
    for sid, rec in ds.samples.items():
        lrec = loaded.samples[sid]
        assert lrec.image.tobytes() == rec.image.tobytes()
        if rec.mask is None:
            assert lrec.mask is None
        else:
            assert lrec.mask.tobytes() == rec.mask.tobytes()


def test_save_twice_identical_bytes(tmp_path):
    for d in ("a", "b"):
        ds = generate_synthetic(3, 16, seed=5)
        split(ds, 1, seed=1, n_test=1)
        save_dataset(ds, tmp_path / d)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
            assert f.read_bytes() == twin.read_bytes()


def test_truncated_img_names_sample(tmp_path):
    ds = generate_synthetic(3, 16, seed=5)
    save_dataset(ds, tmp_path)
    victim = tmp_path / "samples" / "s0001.img"
    victim.write_bytes(victim.read_bytes()[:-8])
    with pytest.raises(DataError, match="s0001"):
        load_dataset(tmp_path)


def test_bad_magic_rejected(tmp_path):
    ds = generate_synthetic(2, 16, seed=5)
    save_dataset(ds, tmp_path)
    victim = tmp_path / "samples" / "s0000.img"
    blob = bytearray(victim.read_bytes())
    blob[:4] = b"XXXX"
    victim.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="magic"):
        load_dataset(tmp_path)


def test_manifest_referencing_absent_file(tmp_path):
    ds = generate_synthetic(2, 16, seed=5)
    save_dataset(ds, tmp_path)
    (tmp_path / "samples" / "s0001.img").unlink()
    with pytest.raises(DataError, match="missing sample"):
        load_dataset(tmp_path)


def test_mask_missing_for_labeled_id(tmp_path):
    ds = generate_synthetic(2, 16, seed=5)
    save_dataset(ds, tmp_path)
    (tmp_path / "samples" / "s0000.msk").unlink()
    with pytest.raises(DataError, match="mask missing"):
        load_dataset(tmp_path)


def test_dims_disagreeing_with_manifest(tmp_path):
    ds = generate_synthetic(2, 16, seed=5)
    save_dataset(ds, tmp_path)
    man = tmp_path / "manifest.json"
    man.write_text(man.read_text().replace('"height": 16', '"height": 32'))
    with pytest.raises(DataError, match="disagree"):
        load_dataset(tmp_path)


def test_record_mask_iff_labeled_invariant():
    img = np.zeros((1, 4, 4), dtype=np.float32)
    with pytest.raises(DataError):
        SampleRecord(id="x", image=img, mask=None, labeled=True)
    with pytest.raises(DataError):
        SampleRecord(id="x", image=img, mask=np.zeros((4, 4), np.uint8), labeled=False)


# -- batches ------------------------------------------------------------------------


def make_manifest(nl, nu):
    return Manifest(
        name="t", height=16, width=16, num_classes=2,
        train_labeled=[f"l{i}" for i in range(nl)],
        train_unlabeled=[f"u{i}" for i in range(nu)],
    )


def test_batches_composition_and_recycling():
    m = make_manifest(4, 8)
    it = batches(m, batch_size=4, n_labeled_per_batch=2, seed=0)
    seen_l, seen_u = [], []
    for _ in range(6):
        lab, unl = next(it)
        assert len(lab) == 2 and len(unl) == 2
        seen_l += lab
        seen_u += unl
    # labeled pool (4 ids) recycles twice as fast as unlabeled pool (8 ids)
    assert sorted(seen_l[:4]) == sorted(m.train_labeled)
    assert sorted(seen_u[:8]) == sorted(m.train_unlabeled)
    assert sorted(set(seen_l)) == sorted(m.train_labeled)


def test_batches_all_labeled_composition_valid():
    m = make_manifest(4, 0)
    it = batches(m, batch_size=4, n_labeled_per_batch=4, seed=0)
    lab, unl = next(it)
    assert len(lab) == 4 and unl == []


def test_batches_requires_pool():
    with pytest.raises(ConfigError):
        batches(make_manifest(4, 0), batch_size=4, n_labeled_per_batch=2, seed=0)
    with pytest.raises(ConfigError):
        batches(make_manifest(0, 4), batch_size=4, n_labeled_per_batch=2, seed=0)


def test_batches_deterministic_sequence():
    m = make_manifest(5, 7)
    a = [next(batches(m, 4, 2, seed=3)) for _ in range(1)]
    it1, it2 = batches(m, 4, 2, seed=3), batches(m, 4, 2, seed=3)
    s1 = [next(it1) for _ in range(10)]
    s2 = [next(it2) for _ in range(10)]
    assert s1 == s2
    it3 = batches(m, 4, 2, seed=4)
    s3 = [next(it3) for _ in range(10)]
    assert s1 != s3


def test_no_test_id_in_training_batches():
    ds = generate_synthetic(12, 16, seed=9)
    m = split(ds, 3, seed=2, n_test=4)
    it = batches(m, 4, 2, seed=0)
    test_ids = set(m.test)
    for _ in range(30):
        lab, unl = next(it)
        assert not (set(lab) | set(unl)) & test_ids
