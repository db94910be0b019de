"""Synthetic capacity-gap datasets, CSV I/O, splits and batching.

Two generators: ``gaussian_blobs`` (linearly separable by construction)
and ``concentric_rings`` (radially structured, so small backbones
underfit while wide ones saturate — a controllable capacity gap).
Generation, splitting and batching each draw from independent RNG
streams, so e.g. changing the batch size never alters the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_BATCH, STREAM_DATA, STREAM_SPLIT, stream

TRAIN, TEST = 0, 1


@dataclass
class LabeledDataset:
    """Features [N, d], integer labels [N], per-index train/test tag."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # int8 array of TRAIN/TEST tags
    label_mapping: dict = field(default_factory=dict)  # original label -> contiguous id

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int8)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str) -> np.ndarray:
        tag = {"train": TRAIN, "test": TEST}[split]
        return np.nonzero(self.split == tag)[0]

    def subset(self, split: str):
        idx = self.indices(split)
        return self.features[idx], self.labels[idx]


@dataclass
class SyntheticSpec:
    kind: str  # gaussian_blobs | concentric_rings
    num_classes: int
    dim: int
    samples_per_class: int
    noise_std: float
    seed: int

    def validate(self) -> None:
        problems = []
        if self.kind not in ("gaussian_blobs", "concentric_rings"):
            problems.append(f"kind: unknown dataset kind {self.kind!r}")
        if self.num_classes < 2:
            problems.append(f"num_classes: must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            problems.append(f"dim: must be >= 2, got {self.dim}")
        if self.samples_per_class < 2:
            problems.append(f"samples_per_class: must be >= 2, got {self.samples_per_class}")
        if not self.noise_std > 0:
            problems.append(f"noise_std: must be > 0, got {self.noise_std}")
        if problems:
            raise ValueError("invalid dataset spec: " + "; ".join(problems))


def _blob_centroids(num_classes: int, dim: int, noise_std: float) -> np.ndarray:
    # Centroids on a circle in the first two coordinates, radius chosen
    # so the minimum chord is 8 * noise_std (> the 6-sigma separability
    # floor, with margin).
    min_dist = 8.0 * noise_std
    radius = min_dist / (2.0 * np.sin(np.pi / num_classes))
    centroids = np.zeros((num_classes, dim))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centroids[:, 0] = radius * np.cos(angles)
    centroids[:, 1] = radius * np.sin(angles)
    return centroids


def generate(spec: SyntheticSpec) -> LabeledDataset:
    """Deterministic dataset for the spec; same spec -> identical arrays."""
    spec.validate()
    rng = stream(spec.seed, STREAM_DATA)
    n = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)

    if spec.kind == "gaussian_blobs":
        centroids = _blob_centroids(spec.num_classes, spec.dim, spec.noise_std)
        features = centroids[labels] + spec.noise_std * rng.standard_normal((n, spec.dim))
    else:  # concentric_rings
        features = spec.noise_std * rng.standard_normal((n, spec.dim))
        radii = 1.0 + labels.astype(np.float64)  # class c on radius c+1
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = radii + spec.noise_std * rng.standard_normal(n)
        features[:, 0] += r * np.cos(theta)
        features[:, 1] += r * np.sin(theta)

    split = stratified_split(labels, seed=spec.seed)
    return LabeledDataset(features, labels, split)


def stratified_split(labels: np.ndarray, seed: int, test_fraction: float = 0.2) -> np.ndarray:
    """Per-class deterministic train/test tags at the given test fraction."""
    rng = stream(seed, STREAM_SPLIT)
    labels = np.asarray(labels)
    split = np.full(labels.shape[0], TRAIN, dtype=np.int8)
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        perm = rng.permutation(idx.size)
        n_test = max(1, int(round(test_fraction * idx.size)))
        n_test = min(n_test, idx.size - 1)  # keep the class present in both splits
        split[idx[perm[:n_test]]] = TEST
    return split


def save_csv(dataset: LabeledDataset, path: str) -> None:
    """Write 'f0,...,f{d-1},label' rows; deterministic float formatting."""
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        fh.write(",".join([f"f{i}" for i in range(d)] + ["label"]) + "\n")
        for row, label in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def load_csv(path: str, split_seed: int = 0, test_fraction: float = 0.2) -> LabeledDataset:
    """Load the CSV schema written by ``save_csv``.

    Labels are remapped to contiguous 0..C-1 (mapping recorded on the
    dataset); the split is re-derived deterministically from split_seed.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ValueError(f"{path}:1: bad header {lines[0]!r}, expected f0,...,f{{d-1}},label")
    d = len(header) - 1
    if not lines[1:]:
        raise ValueError(f"{path}: no data rows")

    features = np.empty((len(lines) - 1, d))
    raw_labels = np.empty(len(lines) - 1, dtype=np.int64)
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} cells, got {len(cells)}")
        try:
            features[lineno - 2] = [float(c) for c in cells[:-1]]
            raw_labels[lineno - 2] = int(float(cells[-1]))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric cell in row {line!r}") from None

    uniques = np.unique(raw_labels)
    mapping = {int(orig): i for i, orig in enumerate(uniques)}
    labels = np.array([mapping[int(v)] for v in raw_labels], dtype=np.int64)
    split = stratified_split(labels, seed=split_seed, test_fraction=test_fraction)
    return LabeledDataset(features, labels, split, label_mapping=mapping)


def batches(dataset: LabeledDataset, split: str, batch_size: int, seed: int, epoch: int) -> list:
    """Seeded per-epoch permutation of the split's indices, chunked.

    The final partial batch is kept. Same (seed, epoch) -> same order.
    """
    if batch_size < 1:
        raise ValueError(f"batches: batch_size must be >= 1, got {batch_size}")
    idx = dataset.indices(split)
    if idx.size == 0:
        raise ValueError(f"batches: split {split!r} is empty")
    rng = stream(seed, STREAM_BATCH, epoch)
    perm = idx[rng.permutation(idx.size)]
    return [perm[i:i + batch_size] for i in range(0, perm.size, batch_size)]
