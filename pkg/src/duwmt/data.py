"""Deterministic synthetic 2-D segmentation corpus and its on-disk format.

Each image is a flat background plus a smooth low-frequency bias field, one
bright foreground ellipse (the target), a few mid-intensity distractor blobs
and pixel noise. Everything is derived from (seed, sample index) through
counter-based streams, so regeneration is bit-identical.

On disk: `manifest.json` plus `samples/<id>.img` / `samples/<id>.msk` in a
tiny little-endian container (magic "SSEG": u32 H, W, C then C*H*W float32;
magic "SMSK": u32 H, W then H*W uint8). Masks are stored only for samples
whose labels are available (labeled training and test samples).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rng import RngStream

_IMG_MAGIC = b"SSEG"
_MSK_MAGIC = b"SMSK"


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    mask: np.ndarray | None  # (H, W) uint8 class indices, present iff labeled
    labeled: bool

    def __post_init__(self):
        if self.labeled != (self.mask is not None):
            raise DataError(f"sample {self.id}: mask must be present iff labeled")


@dataclass
class Manifest:
    name: str
    height: int
    width: int
    num_classes: int
    train_labeled: list[str] = field(default_factory=list)
    train_unlabeled: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    def validate(self) -> None:
        groups = [set(self.train_labeled), set(self.train_unlabeled), set(self.test)]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise DataError("manifest partitions overlap")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "train_labeled": self.train_labeled,
            "train_unlabeled": self.train_unlabeled,
            "test": self.test,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        try:
            return cls(
                name=d["name"],
                height=int(d["height"]),
                width=int(d["width"]),
                num_classes=int(d["num_classes"]),
                train_labeled=list(d["train_labeled"]),
                train_unlabeled=list(d["train_unlabeled"]),
                test=list(d["test"]),
            )
        except KeyError as e:
            raise DataError(f"manifest missing field {e}") from e


@dataclass
class Dataset:
    manifest: Manifest
    samples: dict[str, SampleRecord]

    def records(self, ids: list[str]) -> list[SampleRecord]:
        return [self.samples[i] for i in ids]


# -- synthetic generation ---------------------------------------------------------


def _bias_field(h: int, w: int, st: RngStream) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u, v = yy / h, xx / w
    out = np.zeros((h, w))
    params = st.uniform((2, 5))
    for amp_raw, fx_raw, fy_raw, ph_raw, _ in params:
        amp = 0.03 + amp_raw * 0.045  # two components sum to at most 0.15
        fx = 0.5 + fx_raw
        fy = 0.5 + fy_raw
        phase = ph_raw * 2 * np.pi
        out += amp * np.sin(2 * np.pi * (fx * u + fy * v) + phase)
    return out


def _ellipse_mask(h, w, cy, cx, ay, ax, theta) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    r = (dx * c + dy * s) ** 2 / ax**2 + (-dx * s + dy * c) ** 2 / ay**2
    return r <= 1.0


def generate_sample(index: int, size: int, seed: int, name_width: int = 4) -> SampleRecord:
    st = RngStream(seed).child(index)
    img = np.full((size, size), 0.2)

    # distractor blobs at mid intensity, anywhere in the image
    d = st.child(1)
    n_blobs = 1 + int(d.uniform(()) * 3)  # 1..3
    for b in range(n_blobs):
        p = d.child(b).uniform((4,))
        cy, cx = p[0] * size, p[1] * size
        r = size / 16 + p[2] * size / 16  # radius in [size/16, size/8]
        img[_ellipse_mask(size, size, cy, cx, r, r, p[3] * np.pi)] = 0.45

    # target ellipse: center within the central half, painted over distractors
    e = st.child(2).uniform((5,))
    cy = size / 4 + e[0] * size / 2
    cx = size / 4 + e[1] * size / 2
    ay = size / 8 + e[2] * size / 8  # axes in [size/8, size/4]
    ax = size / 8 + e[3] * size / 8
    theta = e[4] * np.pi
    mask = _ellipse_mask(size, size, cy, cx, ay, ax, theta)
    img[mask] = 0.7

    img = img + _bias_field(size, size, st.child(0))
    img = img + st.child(3).normal((size, size)) * 0.05
    img = np.clip(img, 0.0, 1.0)

    return SampleRecord(
        id=f"s{index:0{name_width}d}",
        image=img[None].astype(np.float32),
        mask=mask.astype(np.uint8),
        labeled=True,
    )


def generate_synthetic(n: int, size: int, seed: int) -> Dataset:
    """n fully-labeled samples; use split() to carve partitions."""
    if n < 1:
        raise ConfigError(f"need n >= 1 samples, got {n}")
    if size % 4:
        raise ConfigError(f"size must be divisible by 4, got {size}")
    samples = {}
    ids = []
    for i in range(n):
        rec = generate_sample(i, size, seed)
        samples[rec.id] = rec
        ids.append(rec.id)
    manifest = Manifest(
        name=f"synthetic-n{n}-s{size}-seed{seed}",
        height=size,
        width=size,
        num_classes=2,
        train_labeled=ids,
    )
    return Dataset(manifest=manifest, samples=samples)


def split(dataset: Dataset, n_labeled: int, seed: int, n_test: int = 0) -> Manifest:
    """Shuffle by seed, carve a test tail, label the first n_labeled of train.

    Unlabeled training samples lose their masks in the returned view of the
    dataset (semi-supervised setting).
    """
    ids = sorted(dataset.samples.keys())
    n = len(ids)
    if n_labeled < 1 or n_labeled + n_test > n:
        raise ConfigError(f"cannot split {n} samples into {n_labeled} labeled + {n_test} test")
    perm = RngStream(seed).child(1).permutation(n)
    shuffled = [ids[i] for i in perm]
    train = shuffled[: n - n_test]
    manifest = Manifest(
        name=dataset.manifest.name,
        height=dataset.manifest.height,
        width=dataset.manifest.width,
        num_classes=dataset.manifest.num_classes,
        train_labeled=train[:n_labeled],
        train_unlabeled=train[n_labeled:],
        test=shuffled[n - n_test:],
    )
    manifest.validate()
    for sid in manifest.train_unlabeled:
        rec = dataset.samples[sid]
        dataset.samples[sid] = SampleRecord(id=rec.id, image=rec.image, mask=None, labeled=False)
    dataset.manifest = manifest
    return manifest


# -- on-disk format -----------------------------------------------------------------


def write_image_blob(arr: np.ndarray) -> bytes:
    c, h, w = arr.shape
    header = _IMG_MAGIC + struct.pack("<III", h, w, c)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def read_image_blob(blob: bytes, what: str) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != _IMG_MAGIC:
        raise DataError(f"{what}: bad image magic/header")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * c * h * w
    if len(blob) != expected:
        raise DataError(f"{what}: truncated image payload ({len(blob)} != {expected} bytes)")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(c, h, w).copy()


def write_mask_blob(mask: np.ndarray) -> bytes:
    h, w = mask.shape
    header = _MSK_MAGIC + struct.pack("<II", h, w)
    return header + np.ascontiguousarray(mask, dtype=np.uint8).tobytes()


def read_mask_blob(blob: bytes, what: str) -> np.ndarray:
    if len(blob) < 12 or blob[:4] != _MSK_MAGIC:
        raise DataError(f"{what}: bad mask magic/header")
    h, w = struct.unpack("<II", blob[4:12])
    if len(blob) != 12 + h * w:
        raise DataError(f"{what}: truncated mask payload")
    return np.frombuffer(blob, dtype=np.uint8, offset=12).reshape(h, w).copy()


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    dataset.manifest.validate()
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(dataset.manifest.to_dict(), f, indent=2, sort_keys=True)
    for rec in dataset.samples.values():
        (out / "samples" / f"{rec.id}.img").write_bytes(write_image_blob(rec.image))
        if rec.mask is not None:
            (out / "samples" / f"{rec.id}.msk").write_bytes(write_mask_blob(rec.mask))


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json under {root}")
    try:
        manifest = Manifest.from_dict(json.loads(mpath.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValueError) as e:
        raise DataError(f"unreadable manifest: {e}") from e
    manifest.validate()
    samples: dict[str, SampleRecord] = {}
    needs_mask = set(manifest.train_labeled) | set(manifest.test)
    for sid in manifest.train_labeled + manifest.train_unlabeled + manifest.test:
        ipath = root / "samples" / f"{sid}.img"
        if not ipath.is_file():
            raise DataError(f"manifest references missing sample file {ipath.name}")
        image = read_image_blob(ipath.read_bytes(), sid)
        if image.shape[1:] != (manifest.height, manifest.width):
            raise DataError(
                f"{sid}: image dims {image.shape[1:]} disagree with manifest "
                f"({manifest.height}, {manifest.width})"
            )
        mask = None
        if sid in needs_mask:
            mpath2 = root / "samples" / f"{sid}.msk"
            if not mpath2.is_file():
                raise DataError(f"mask missing for labeled sample {sid}")
            mask = read_mask_blob(mpath2.read_bytes(), sid)
            if mask.shape != (manifest.height, manifest.width):
                raise DataError(f"{sid}: mask dims disagree with manifest")
            if mask.max(initial=0) >= manifest.num_classes:
                raise DataError(f"{sid}: mask contains class >= {manifest.num_classes}")
        samples[sid] = SampleRecord(id=sid, image=image, mask=mask, labeled=mask is not None)
    return Dataset(manifest=manifest, samples=samples)


# -- batch iteration -----------------------------------------------------------------


class BatchIterator:
    """Endless (labeled, unlabeled) id batches, each pool independently
    cycled with a seed-derived reshuffle per pool epoch."""

    def __init__(self, manifest: Manifest, batch_size: int, n_labeled_per_batch: int, seed: int):
        n_unlabeled = batch_size - n_labeled_per_batch
        if n_labeled_per_batch < 0 or n_unlabeled < 0:
            raise ConfigError("batch composition must be non-negative")
        if n_labeled_per_batch > 0 and not manifest.train_labeled:
            raise ConfigError("batch composition needs labeled samples but the split has none")
        if n_unlabeled > 0 and not manifest.train_unlabeled:
            raise ConfigError("batch composition needs unlabeled samples but the split has none")
        self.n_labeled = n_labeled_per_batch
        self.n_unlabeled = n_unlabeled
        self._pools = {
            "labeled": _PoolCycler(manifest.train_labeled, RngStream(seed).child(2)),
            "unlabeled": _PoolCycler(manifest.train_unlabeled, RngStream(seed).child(3)),
        }

    def __iter__(self):
        return self

    def __next__(self) -> tuple[list[str], list[str]]:
        lab = [self._pools["labeled"].take() for _ in range(self.n_labeled)]
        unl = [self._pools["unlabeled"].take() for _ in range(self.n_unlabeled)]
        return lab, unl


class _PoolCycler:
    def __init__(self, ids: list[str], stream: RngStream):
        self.ids = list(ids)
        self.stream = stream
        self.epoch = 0
        self.pos = 0
        self.order: list[str] = []

    def take(self) -> str:
        if self.pos >= len(self.order):
            perm = self.stream.child(self.epoch).permutation(len(self.ids))
            self.order = [self.ids[i] for i in perm]
            self.epoch += 1
            self.pos = 0
        out = self.order[self.pos]
        self.pos += 1
        return out


def batches(manifest: Manifest, batch_size: int, n_labeled_per_batch: int, seed: int) -> BatchIterator:
    return BatchIterator(manifest, batch_size, n_labeled_per_batch, seed)
