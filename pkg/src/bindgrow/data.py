"""Dataset ingestion and task-stream generation.

Provides the IDX (MNIST-style) binary parser, permuted-pixel task streams,
split-class streams, rotation-controlled synthetic Gaussian streams and
stratified train/val/test splitting. Desk-scale image experiments run on
14x14 images: real MNIST when IDX files are available (BINDGROW_MNIST_DIR
or --data-dir), otherwise the bundled scikit-learn digits resized to 14x14.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


class IdxParseError(ValueError):
    """Malformed IDX payload; message carries the byte offset."""


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (N, ...) float64
    labels: np.ndarray  # (N,) int64 in [0, classes)
    classes: int

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("empty dataset")
        if self.labels.max() >= self.classes:
            raise ValueError(f"label {self.labels.max()} >= class count {self.classes}")

    def __len__(self) -> int:
        return len(self.inputs)

    def flat_inputs(self) -> np.ndarray:
        return self.inputs.reshape(len(self.inputs), -1)


@dataclass
class TaskData:
    """One task's train/val/test splits."""

    task_id: int
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset

    @property
    def classes(self) -> int:
        return self.train.classes


# ---------------------------------------------------------------------------
# IDX parsing


def load_idx(raw: bytes) -> np.ndarray:
    """Parse one IDX file: images -> float64 in [0,1], labels -> int64."""
    if len(raw) < 8:
        raise IdxParseError("truncated header at offset 0")
    (magic,) = struct.unpack(">I", raw[0:4])
    if magic == IDX_MAGIC_IMAGES:
        ndims = 3
    elif magic == IDX_MAGIC_LABELS:
        ndims = 1
    else:
        raise IdxParseError(f"bad magic 0x{magic:08X} at offset 0")
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise IdxParseError(f"truncated dimension table at offset {len(raw)}")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    count = 1
    for d in dims:
        count *= d
    if count > 1 << 32:
        raise IdxParseError(f"dimension overflow at offset 4: {dims}")
    if len(raw) != header + count:
        raise IdxParseError(f"payload length {len(raw) - header} != expected {count} at offset {header}")
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if magic == IDX_MAGIC_LABELS:
        return payload.astype(np.int64)
    return (payload.astype(np.float64) / 255.0).reshape(dims)


def load_mnist_dir(path: str, limit: int = 20000) -> LabeledDataset:
    """Read MNIST train IDX files from a directory and downsample to 14x14."""
    with open(os.path.join(path, "train-images-idx3-ubyte"), "rb") as f:
        images = load_idx(f.read())
    with open(os.path.join(path, "train-labels-idx1-ubyte"), "rb") as f:
        labels = load_idx(f.read())
    images, labels = images[:limit], labels[:limit]
    images = avg_pool_2x2(images)
    return LabeledDataset(images, labels, classes=10)


def avg_pool_2x2(images: np.ndarray) -> np.ndarray:
    n, h, w = images.shape
    return images.reshape(n, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


_DESK_CACHE: dict = {}


def desk_digits(target_size: int = 20000, seed: int = 0) -> LabeledDataset:
    """Bundled 8x8 digits resized to 14x14; deterministic MNIST stand-in.

    The bundled base has only 1797 samples, far too few for stable
    validation estimates, so it is enlarged to target_size with seeded
    1-pixel shifts plus light pixel noise. The first 1797 entries are the
    untouched originals.
    """
    key = (target_size, seed)
    if key in _DESK_CACHE:
        images, labels = _DESK_CACHE[key]
        return LabeledDataset(images, labels, classes=10)

    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    images = d.images / 16.0
    labels = d.target.astype(np.int64)
    n = len(images)
    if target_size > n:
        rng = np.random.default_rng([seed, 3361])
        extra = target_size - n
        idx = rng.integers(0, n, size=extra)
        dx = rng.integers(-1, 2, size=extra)
        dy = rng.integers(-1, 2, size=extra)
        rows = (np.arange(8)[None, :, None] - dx[:, None, None]) % 8
        cols = (np.arange(8)[None, None, :] - dy[:, None, None]) % 8
        shifted = images[idx[:, None, None], rows, cols]
        noisy = np.clip(shifted + 0.02 * rng.standard_normal(shifted.shape), 0.0, 1.0)
        images = np.concatenate([images, noisy])
        labels = np.concatenate([labels, labels[idx]])
    images = zoom(images, (1, 14 / 8, 14 / 8), order=1)
    images = np.clip(images, 0.0, 1.0)
    _DESK_CACHE[key] = (images, labels)
    return LabeledDataset(images, labels, classes=10)


def default_image_base(data_dir: str | None = None, limit: int = 20000) -> LabeledDataset:
    path = data_dir or os.environ.get("BINDGROW_MNIST_DIR")
    if path and os.path.exists(os.path.join(path, "train-images-idx3-ubyte")):
        return load_mnist_dir(path, limit=limit)
    return desk_digits()


# ---------------------------------------------------------------------------
# Task streams


def make_permuted_tasks(base: LabeledDataset, count: int, seed: int) -> list[LabeledDataset]:
    """Pixel-permutation tasks; task 0 keeps the canonical pixel order."""
    if count < 1:
        raise ValueError("need at least one task")
    tasks = [base]
    dim = base.flat_inputs().shape[1]
    for t in range(1, count):
        rng = np.random.default_rng([seed, 7901, t])
        perm = rng.permutation(dim)
        flat = base.flat_inputs()[:, perm]
        tasks.append(LabeledDataset(flat.reshape(base.inputs.shape), base.labels, base.classes))
    return tasks


def permutation_for_task(dim: int, task: int, seed: int) -> np.ndarray:
    if task == 0:
        return np.arange(dim)
    return np.random.default_rng([seed, 7901, task]).permutation(dim)


def make_split_tasks(base: LabeledDataset, count: int) -> list[LabeledDataset]:
    """Disjoint class subsets, labels remapped to [0, classes/count)."""
    if base.classes % count:
        raise ValueError(f"class count {base.classes} not divisible by {count} tasks")
    per = base.classes // count
    tasks = []
    for t in range(count):
        subset = list(range(t * per, (t + 1) * per))
        mask = np.isin(base.labels, subset)
        labels = base.labels[mask] - t * per
        tasks.append(LabeledDataset(base.inputs[mask], labels, classes=per))
    return tasks


@dataclass
class SyntheticConfig:
    clusters: int = 2
    dim: int = 8
    angles_deg: tuple = (0.0, 90.0)
    samples_per_task: int = 1200
    noise: float = 0.35
    mean_radius: float = 1.0
    seed: int = 0


def make_synthetic_tasks(cfg: SyntheticConfig) -> list[LabeledDataset]:
    """Gaussian-cluster tasks whose class means are planar rotations of task 0's.

    Identical angles give identically distributed tasks (same cluster seed);
    rotation happens in the first two coordinates only.
    """
    rng = np.random.default_rng([cfg.seed, 4243])
    base_means = np.zeros((cfg.clusters, cfg.dim))
    theta0 = rng.uniform(0, 2 * np.pi)
    for c in range(cfg.clusters):
        a = theta0 + 2 * np.pi * c / cfg.clusters
        base_means[c, 0] = cfg.mean_radius * np.cos(a)
        base_means[c, 1] = cfg.mean_radius * np.sin(a)
    tasks = []
    for t, angle in enumerate(cfg.angles_deg):
        rad = np.deg2rad(angle)
        rot = np.eye(cfg.dim)
        rot[0, 0] = rot[1, 1] = np.cos(rad)
        rot[0, 1] = -np.sin(rad)
        rot[1, 0] = np.sin(rad)
        means = base_means @ rot.T
        trng = np.random.default_rng([cfg.seed, 977, t])
        labels = trng.integers(0, cfg.clusters, size=cfg.samples_per_task)
        x = means[labels] + cfg.noise * trng.standard_normal((cfg.samples_per_task, cfg.dim))
        tasks.append(LabeledDataset(x, labels.astype(np.int64), classes=cfg.clusters))
    return tasks


def synthetic_pairwise_accuracy(cfg: SyntheticConfig) -> float:
    """Analytic accuracy bound for adjacent-cluster confusion under the
    nearest-mean rule: Phi(d / (2 sigma)) with d the adjacent-mean distance."""
    from scipy.stats import norm

    d = 2 * cfg.mean_radius * np.sin(np.pi / cfg.clusters)
    return float(norm.cdf(d / (2 * cfg.noise)))


# ---------------------------------------------------------------------------
# Splitting


def split(dataset: LabeledDataset, fractions, seed: int):
    """Stratified, seed-deterministic split into len(fractions) parts."""
    fractions = list(fractions)
    if any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ValueError(f"bad split fractions {fractions}")
    part_indices: list[list[int]] = [[] for _ in fractions]
    rng = np.random.default_rng([seed, 5531])
    for c in range(dataset.classes):
        idx = np.flatnonzero(dataset.labels == c)
        rng.shuffle(idx)
        counts = _apportion(len(idx), fractions)
        start = 0
        for p, n in enumerate(counts):
            part_indices[p].extend(idx[start : start + n])
            start += n
    parts = []
    for sel in part_indices:
        if not sel:
            raise ValueError("empty split part")
        sel = np.sort(np.asarray(sel))
        parts.append(LabeledDataset(dataset.inputs[sel], dataset.labels[sel], dataset.classes))
    return tuple(parts)


def _apportion(n: int, fractions) -> list[int]:
    # largest-remainder apportionment of n items into the given fractions
    exact = [n * f for f in fractions]
    counts = [int(e) for e in exact]
    remainder = int(round(sum(exact))) - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def make_task_stream(datasets: list[LabeledDataset], fractions, seed: int) -> list[TaskData]:
    out = []
    for t, ds in enumerate(datasets):
        train, val, test = split(ds, fractions, seed)
        out.append(TaskData(t, train, val, test))
    return out
