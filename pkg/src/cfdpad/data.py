"""Synthetic fingerprint-like data, augmentation, balanced batching and dataset files."""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import checkpoint

STREAM_SYNTH = 1
STREAM_AUGMENT = 2
STREAM_BATCHES = 3


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the named stream ``keys`` of a run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    attack: np.ndarray  # (N,) ints, 0 = live, m >= 1 = spoof material m
    ids: np.ndarray  # (N,) unsigned ints

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.attack = np.asarray(self.attack, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.images.shape[0]
        if self.images.ndim != 4 or self.attack.shape != (n,) or self.ids.shape != (n,):
            raise ValueError(
                f"inconsistent dataset arrays: images {self.images.shape}, attack {self.attack.shape}, ids {self.ids.shape}"
            )
        if (self.attack < 0).any():
            raise ValueError("attack labels must be nonnegative")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def is_spoof(self) -> np.ndarray:
        return self.attack != 0

    @property
    def materials(self) -> set[int]:
        return set(int(a) for a in np.unique(self.attack) if a != 0)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.attack[index], self.ids[index])

    def index_of(self, sample_id: int) -> int:
        hits = np.flatnonzero(self.ids == sample_id)
        if hits.size == 0:
            raise KeyError(f"unknown sample id {sample_id}")
        return int(hits[0])


@dataclass(frozen=True)
class SynthConfig:
    n_materials: int = 4
    n_held_out: int = 1
    image_size: int = 32
    n_train_live: int = 120
    n_train_per_material: int = 40
    n_test_live: int = 150
    n_test_per_material: int = 150
    ridge_freq_min: float = 0.10
    ridge_freq_max: float = 0.18
    live_contrast: float = 0.35
    spoof_contrast: float = 0.22
    material_strength: float = 0.15
    distractor_strength: float = 0.5
    distractor_count: int = 3
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_materials < 2:
            raise ValueError(f"n_materials must be at least 2, got {self.n_materials}")
        if not 1 <= self.n_held_out < self.n_materials:
            raise ValueError(f"n_held_out must be in [1, {self.n_materials - 1}]")
        if self.image_size < 4:
            raise ValueError("image_size must be at least 4")

    @property
    def train_materials(self) -> list[int]:
        return list(range(1, self.n_materials - self.n_held_out + 1))

    @property
    def test_materials(self) -> list[int]:
        return list(range(self.n_materials - self.n_held_out + 1, self.n_materials + 1))


@dataclass(frozen=True)
class AugmentConfig:
    cutout_count: int = 2
    cutout_side_ratio: float = 96 / 224
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_degrees: float = 15.0
    rotation_nearest: bool = False

    def __post_init__(self):
        if self.cutout_count < 0:
            raise ValueError("cutout_count must be nonnegative")
        if not 0 < self.cutout_side_ratio <= 1:
            raise ValueError("cutout_side_ratio must lie in (0, 1]")
        for p in (self.hflip_prob, self.vflip_prob):
            if not 0 <= p <= 1:
                raise ValueError("flip probabilities must lie in [0, 1]")

    def cutout_side(self, h: int, w: int) -> int:
        return max(1, math.floor(self.cutout_side_ratio * min(h, w)))


# synthesis

def _grating(size: int, freq: float, theta: float, phase: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)


def material_signature(seed: int, material: int) -> tuple[float, float]:
    """Fixed (frequency, orientation) of a material's surface texture."""
    rng = stream(seed, STREAM_SYNTH, 10_000 + material)
    return float(rng.uniform(0.28, 0.42)), float(rng.uniform(0, np.pi))


def synth_components(cfg: SynthConfig, attack: int, sample_id: int) -> dict[str, np.ndarray]:
    """Unclipped additive parts of one image: ridge, material, distractor, noise."""
    s = cfg.image_size
    rng = stream(cfg.seed, STREAM_SYNTH, sample_id, 0)
    freq = rng.uniform(cfg.ridge_freq_min, cfg.ridge_freq_max)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    contrast = cfg.live_contrast if attack == 0 else cfg.spoof_contrast
    ridge = 0.5 + contrast * _grating(s, freq, theta, phase)

    material = np.zeros((s, s))
    if attack != 0:
        mf, mt = material_signature(cfg.seed, attack)
        material = cfg.material_strength * _grating(s, mf, mt, rng.uniform(0, 2 * np.pi))

    # distractors come from their own stream: identical distribution for every class
    drng = stream(cfg.seed, STREAM_SYNTH, sample_id, 1)
    distractor = np.zeros((s, s))
    side = max(2, s // 4)
    for _ in range(cfg.distractor_count):
        y, x = drng.integers(0, s - side + 1, size=2)
        patch = drng.choice([-1.0, 1.0], size=(side // 2, side // 2)).repeat(2, 0).repeat(2, 1)
        distractor[y : y + patch.shape[0], x : x + patch.shape[1]] += cfg.distractor_strength * patch

    noise = cfg.noise_sigma * stream(cfg.seed, STREAM_SYNTH, sample_id, 2).standard_normal((s, s))
    return {"ridge": ridge, "material": material, "distractor": distractor, "noise": noise}


def synth_image(cfg: SynthConfig, attack: int, sample_id: int) -> np.ndarray:
    parts = synth_components(cfg, attack, sample_id)
    img = parts["ridge"] + parts["material"] + parts["distractor"] + parts["noise"]
    return np.clip(img, 0.0, 1.0)[None]


def _make_split(cfg: SynthConfig, n_live: int, n_per: int, materials: list[int], first_id: int) -> Dataset:
    attack = [0] * n_live + [m for m in materials for _ in range(n_per)]
    ids = list(range(first_id, first_id + len(attack)))
    images = np.stack([synth_image(cfg, a, i) for a, i in zip(attack, ids)])
    return Dataset(images, np.array(attack), np.array(ids))


def synth_generate(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Train and test splits; test spoofs use only held-out materials."""
    train = _make_split(cfg, cfg.n_train_live, cfg.n_train_per_material, cfg.train_materials, 0)
    test = _make_split(cfg, cfg.n_test_live, cfg.n_test_per_material, cfg.test_materials, 1_000_000)
    return train, test


# augmentation

def cutout_at(image: np.ndarray, centers: list[tuple[int, int]], side: int) -> np.ndarray:
    """Zero a ``side`` x ``side`` square around each (row, col) center, clipped at borders."""
    out = image.copy()
    h, w = out.shape[-2:]
    for cy, cx in centers:
        y0, x0 = cy - side // 2, cx - side // 2
        out[..., max(0, y0) : min(h, y0 + side), max(0, x0) : min(w, x0 + side)] = 0.0
    return out


def cutout(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[-2:]
    centers = [(int(rng.integers(h)), int(rng.integers(w))) for _ in range(cfg.cutout_count)]
    return cutout_at(image, centers, cfg.cutout_side(h, w))


def rotate(image: np.ndarray, degrees: float, nearest: bool = False) -> np.ndarray:
    """Rotate counterclockwise about the image center by inverse mapping; zero fill."""
    h, w = image.shape[-2:]
    th = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    sy = np.cos(th) * dy + np.sin(th) * dx + cy
    sx = -np.sin(th) * dy + np.cos(th) * dx + cx

    def fetch(iy, ix):
        ok = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        vals = image[..., np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
        return np.where(ok, vals, 0.0)

    if nearest:
        return fetch(np.rint(sy).astype(int), np.rint(sx).astype(int))
    y0, x0 = np.floor(sy).astype(int), np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    return (
        fetch(y0, x0) * (1 - fy) * (1 - fx)
        + fetch(y0, x0 + 1) * (1 - fy) * fx
        + fetch(y0 + 1, x0) * fy * (1 - fx)
        + fetch(y0 + 1, x0 + 1) * fy * fx
    )


def flip_rotate(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = image
    if rng.random() < cfg.hflip_prob:
        out = out[..., ::-1]
    if rng.random() < cfg.vflip_prob:
        out = out[..., ::-1, :]
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    if angle != 0.0:
        out = rotate(out, angle, cfg.rotation_nearest)
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def augment_batch(images: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([cutout(flip_rotate(img, cfg, rng), cfg, rng) for img in images])


# batching

def balanced_batches(attack: np.ndarray, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of index batches with near-equal counts of every attack class.

    Smaller classes are cycled (reshuffled on wrap) so the epoch covers the
    largest class once and every sample at least once.
    """
    attack = np.asarray(attack)
    classes = np.unique(attack)
    k = len(classes)
    if k < 2:
        raise ValueError("balanced batching needs at least two attack classes")
    if batch_size < 2 * k:
        raise ValueError(f"batch_size {batch_size} < 2 x {k} classes")
    members = [np.flatnonzero(attack == c) for c in classes]
    if sum(len(m) >= 2 for m in members) == 0:
        raise ValueError("no attack class has two samples; triplet mining impossible")
    base, extra = divmod(batch_size, k)
    n_batches = max(math.ceil(len(m) / base) for m in members)
    queues = [list(rng.permutation(m)) for m in members]
    for b in range(n_batches):
        batch = []
        for ci, m in enumerate(members):
            want = min(base + (1 if (ci - b) % k < extra else 0), len(m))
            take = queues[ci][:want]
            queues[ci] = queues[ci][want:]
            if len(take) < want:
                fresh = [i for i in rng.permutation(m) if i not in take]
                need = want - len(take)
                take += fresh[:need]
                queues[ci] = fresh[need:]
            batch.extend(take)
        yield np.array(batch, dtype=np.int64)


# files

def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    checkpoint.save(path, {"images": ds.images, "attack": ds.attack.astype(np.float64), "ids": ds.ids.astype(np.float64)})


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read a dataset container file, or a directory of PGM images plus ``labels.csv``."""
    if os.path.isdir(path):
        return load_pgm_dir(path)
    arrays = checkpoint.load(path)
    for key in ("images", "attack", "ids"):
        if key not in arrays:
            raise checkpoint.ContainerError(f"dataset container lacks array {key!r}")
    return Dataset(arrays["images"], arrays["attack"].astype(np.int64), arrays["ids"].astype(np.int64))


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Binary (P5) 8-bit PGM as an (H, W) float array scaled by 1/maxval."""
    with open(path, "rb") as fh:
        buf = fh.read()
    pos, header = 0, []
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if not m:
            raise ValueError(f"{path}: malformed PGM header at byte {pos}")
        header.append(m.group(1))
        pos = m.end()
    if header[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {header[0]!r})")
    try:
        w, h, maxval = (int(t) for t in header[1:])
    except ValueError:
        raise ValueError(f"{path}: non-integer PGM header field") from None
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1
    pix = buf[pos : pos + w * h]
    if len(pix) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes at offset {pos}, found {len(pix)}")
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def write_pgm(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write values in [0, 1] as an 8-bit P5 PGM (atomically)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    h, w = v.shape
    pixels = np.rint(v * 255).astype(np.uint8).tobytes()
    checkpoint.atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels)


def load_pgm_dir(directory: str | os.PathLike) -> Dataset:
    label_path = os.path.join(directory, "labels.csv")
    if not os.path.exists(label_path):
        raise ValueError(f"{directory}: missing labels.csv sidecar")
    ids, attack, images = [], [], []
    with open(label_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["id", "attack"]:
        raise ValueError(f"{label_path}: header must be 'id,attack'")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            sid, a = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise ValueError(f"{label_path} line {lineno}: expected integer id,attack") from None
        img_path = os.path.join(directory, f"{sid}.pgm")
        if not os.path.exists(img_path):
            raise ValueError(f"{label_path} line {lineno}: no image {sid}.pgm")
        ids.append(sid)
        attack.append(a)
        images.append(read_pgm(img_path)[None])
    if not images:
        raise ValueError(f"{label_path}: no samples listed")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"{directory}: images differ in size {sorted(shapes)}")
    return Dataset(np.stack(images), np.array(attack), np.array(ids))

