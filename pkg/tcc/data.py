# tcc/data.py
"""
Datasets of fixed-length multichannel time series.

Samples are float32 arrays of shape (N, C, T); labels are int64 with -1
marking an unlabeled sample. Files use the little-endian TSD1 layout:

    b"TSD1" | u32 version | u64 N | u32 C | u32 T | u32 K_cls
    | N*C*T float32 (sample, channel, time) | N int64 labels
"""
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tcc.errors import ConfigError, DataFormatError
from tcc.utils import make_rng

logger = logging.getLogger(__name__)

MAGIC = b"TSD1"
VERSION = 1
HEADER = struct.Struct("<4sIQIII")
UNLABELED = -1


class Dataset:
    """N samples of shape (C, T) with integer labels in [0, num_classes) or -1."""

    def __init__(self, samples, labels, num_classes: int, name: str = "dataset"):
        samples = np.ascontiguousarray(samples, dtype=np.float32)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if samples.ndim != 3:
            raise DataFormatError(f"samples must have shape (N, C, T), got {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise DataFormatError(f"expected {samples.shape[0]} labels, got shape {labels.shape}")
        if num_classes < 1:
            raise DataFormatError("num_classes must be positive")
        if not np.all(np.isfinite(samples)):
            raise DataFormatError("sample values must be finite")
        bad = (labels < UNLABELED) | (labels >= num_classes)
        if bad.any():
            raise DataFormatError(
                f"label out of range: {int(labels[bad][0])} not in [-1, {num_classes})"
            )
        self.samples = samples
        self._labels = labels
        self.num_classes = int(num_classes)
        self.name = name

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def channels(self) -> int:
        return int(self.samples.shape[1])

    @property
    def length(self) -> int:
        return int(self.samples.shape[2])

    def __repr__(self) -> str:
        n, c, t = self.samples.shape
        return f"Dataset(name={self.name!r}, N={n}, C={c}, T={t}, K_cls={self.num_classes})"


@dataclass(frozen=True)
class LabeledSplit:
    labeled: Dataset
    unlabeled: Dataset
    fraction: float
    seed: int
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    y: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])


@dataclass(frozen=True)
class MinMaxStats:
    minimum: np.ndarray
    maximum: np.ndarray


# --------------------------------------------------------------------
# 1) TSD1 file format
# --------------------------------------------------------------------
def save_dataset(d: Dataset, path) -> Path:
    path = Path(path)
    n, c, t = d.samples.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, n, c, t, d.num_classes))
        f.write(d.samples.astype("<f4", copy=False).tobytes(order="C"))
        f.write(d.labels.astype("<i8", copy=False).tobytes(order="C"))
    return path


def read_header(path) -> Dict[str, int]:
    with open(path, "rb") as f:
        raw = f.read(HEADER.size)
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path) -> Dict[str, int]:
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, c, t, k = HEADER.unpack(raw[:HEADER.size])
    if magic != MAGIC:
        raise DataFormatError(f"{path}: magic mismatch, expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported TSD1 version {version}")
    return {"version": version, "N": n, "C": c, "T": t, "K_cls": k}


def load_dataset(path, name: Optional[str] = None) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    header = _parse_header(raw, path)
    n, c, t = header["N"], header["C"], header["T"]
    n_values = n * c * t
    expected = HEADER.size + 4 * n_values + 8 * n
    if len(raw) < expected:
        raise DataFormatError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise DataFormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")

    offset = HEADER.size
    samples = np.frombuffer(raw, dtype="<f4", count=n_values, offset=offset).reshape(n, c, t)
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=offset + 4 * n_values)
    return Dataset(
        samples.astype(np.float32),
        labels.astype(np.int64),
        header["K_cls"],
        name=name or path.stem,
    )


def _file_line_numbers(csv_path, rows: int) -> np.ndarray:
    """1-based file line of every parsed row; the reader skips blank lines."""
    with open(csv_path, encoding="utf-8") as fh:
        lines = [i for i, text in enumerate(fh, start=1) if text.strip()]
    if len(lines) != rows:
        return np.arange(1, rows + 1)
    return np.asarray(lines)


def import_csv(csv_path, channels: int, length: int, num_classes: int) -> Dataset:
    """Rows of C*T values followed by an integer label column (-1 = unlabeled)."""
    width = channels * length + 1
    try:
        frame = pd.read_csv(csv_path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        where = f"line {match.group(1)}" if match else "unknown line"
        raise DataFormatError(f"{csv_path}: ragged row at {where}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"{csv_path}: no rows") from e

    line_of = _file_line_numbers(csv_path, len(frame))
    if frame.shape[1] != width:
        raise DataFormatError(
            f"{csv_path}: ragged row at line {line_of[0]}: expected {width} cells, found {frame.shape[1]}"
        )
    for row_idx, row in enumerate(frame.itertuples(index=False)):
        if any(cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == "" for cell in row):
            raise DataFormatError(f"{csv_path}: ragged row at line {line_of[row_idx]}: expected {width} cells")

    values = frame.apply(pd.to_numeric, errors="coerce")
    invalid = values.isna().any(axis=1).to_numpy()
    if invalid.any():
        line = line_of[int(np.argmax(invalid))]
        raise DataFormatError(f"{csv_path}: non-numeric cell at line {line}")

    matrix = values.to_numpy(dtype=np.float64)
    raw_labels = matrix[:, -1]
    if not np.all(raw_labels == np.round(raw_labels)):
        line = line_of[int(np.argmax(raw_labels != np.round(raw_labels)))]
        raise DataFormatError(f"{csv_path}: non-integer label at line {line}")
    labels = raw_labels.astype(np.int64)
    out_of_range = (labels < UNLABELED) | (labels >= num_classes)
    if out_of_range.any():
        line = line_of[int(np.argmax(out_of_range))]
        raise DataFormatError(f"{csv_path}: label out of range at line {line}")

    samples = matrix[:, :-1].reshape(-1, channels, length).astype(np.float32)
    return Dataset(samples, labels, num_classes, name=Path(csv_path).stem)


# --------------------------------------------------------------------
# 2) Normalization and splitting
# --------------------------------------------------------------------
def compute_minmax_stats(d: Dataset) -> MinMaxStats:
    if len(d) == 0:
        raise DataFormatError("cannot normalize an empty dataset")
    return MinMaxStats(
        minimum=d.samples.min(axis=(0, 2)).astype(np.float64),
        maximum=d.samples.max(axis=(0, 2)).astype(np.float64),
    )


def normalize_minmax(d: Dataset, stats: Optional[MinMaxStats] = None) -> Dataset:
    """Per-channel (x - min) / (max - min); constant channels map to 0.

    With ``stats`` from a training set, test data is scaled with the same
    affine map and may fall slightly outside [0, 1].
    """
    stats = stats or compute_minmax_stats(d)
    lo = stats.minimum[None, :, None]
    span = (stats.maximum - stats.minimum)[None, :, None]
    constant = span <= 0
    scaled = np.where(constant, 0.0, (d.samples.astype(np.float64) - lo) / np.where(constant, 1.0, span))
    return Dataset(scaled.astype(np.float32), d.labels.copy(), d.num_classes, name=d.name)


def subset(d: Dataset, indices: Sequence[int], labels: Optional[np.ndarray] = None) -> Dataset:
    indices = np.asarray(indices, dtype=np.int64)
    chosen = d.labels[indices] if labels is None else labels
    return Dataset(d.samples[indices], chosen, d.num_classes, name=d.name)


def concat_datasets(parts: List[Dataset], name: Optional[str] = None) -> Dataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        raise DataFormatError("nothing to concatenate")
    num_classes = parts[0].num_classes
    return Dataset(
        np.concatenate([p.samples for p in parts]),
        np.concatenate([p.labels for p in parts]),
        num_classes,
        name=name or parts[0].name,
    )


def split_labeled_subset(d: Dataset, fraction: float, seed: int) -> LabeledSplit:
    """Seeded, stratified labeled/unlabeled split; every class present in ``d``
    gets at least one labeled sample."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    labels = d.labels
    if (labels == UNLABELED).any():
        raise DataFormatError("split_labeled_subset needs a fully labeled dataset")
    n = len(d)
    if fraction * n < d.num_classes:
        raise ConfigError("fraction too small for stratified split")

    n_labeled = max(int(np.rint(fraction * n)), d.num_classes)
    n_labeled = min(n_labeled, n)

    order = make_rng(seed).permutation(n)
    chosen: List[int] = []
    seen = set()
    # one sample per class first, in shuffled order
    for idx in order:
        cls = int(labels[idx])
        if cls not in seen:
            seen.add(cls)
            chosen.append(int(idx))
    chosen_set = set(chosen)
    for idx in order:
        if len(chosen) >= n_labeled:
            break
        if int(idx) not in chosen_set:
            chosen.append(int(idx))
            chosen_set.add(int(idx))

    labeled_idx = np.sort(np.asarray(chosen[:n_labeled], dtype=np.int64))
    mask = np.ones(n, dtype=bool)
    mask[labeled_idx] = False
    unlabeled_idx = np.flatnonzero(mask).astype(np.int64)

    return LabeledSplit(
        labeled=subset(d, labeled_idx),
        unlabeled=subset(d, unlabeled_idx, labels=np.full(len(unlabeled_idx), UNLABELED, dtype=np.int64)),
        fraction=float(fraction),
        seed=int(seed),
        labeled_indices=labeled_idx,
        unlabeled_indices=unlabeled_idx,
    )


# --------------------------------------------------------------------
# 3) Synthetic data and batching
# --------------------------------------------------------------------
def make_synthetic(
        n_per_class: int,
        channels: int,
        length: int,
        num_classes: int,
        noise_sigma: float,
        seed: int,
        base_frequency: float = 2.0,
        phase_jitter: float = 0.5 * np.pi,
        amplitude_jitter: float = 0.3,
) -> Dataset:
    """Class k is a sinusoid with (k+1)*base_frequency cycles over the window
    and a class phase k*pi/K_cls. Each sample draws a phase offset in
    [0, phase_jitter) and an amplitude in [1 - amplitude_jitter, 1 + amplitude_jitter],
    then gets iid Gaussian noise of std ``noise_sigma``.

    With the default jitters the noise-free classes are nearest-centroid separable.
    """
    if min(n_per_class, channels, length, num_classes) < 1:
        raise DataFormatError("all synthetic sizes must be >= 1")
    if not 0.0 <= phase_jitter < 2 * np.pi:
        raise DataFormatError(f"phase_jitter must lie in [0, 2*pi), got {phase_jitter}")
    if not 0.0 <= amplitude_jitter < 1.0:
        raise DataFormatError(f"amplitude_jitter must lie in [0, 1), got {amplitude_jitter}")
    rng = make_rng(seed)
    steps = np.arange(length, dtype=np.float64)
    channel_phase = np.arange(channels, dtype=np.float64)[:, None] * np.pi / channels

    samples = []
    labels = []
    for k in range(num_classes):
        frequency = (k + 1) / length * base_frequency
        class_phase = k * np.pi / num_classes
        phases = rng.uniform(0.0, phase_jitter, size=n_per_class)
        amplitudes = rng.uniform(1.0 - amplitude_jitter, 1.0 + amplitude_jitter, size=n_per_class)
        for phase, amplitude in zip(phases, amplitudes):
            signal = amplitude * np.sin(2 * np.pi * frequency * steps[None, :] + class_phase + channel_phase + phase)
            samples.append(signal)
            labels.append(k)
    samples = np.stack(samples)
    if noise_sigma > 0:
        samples = samples + rng.normal(0.0, noise_sigma, size=samples.shape)
    return Dataset(samples.astype(np.float32), np.asarray(labels), num_classes, name="synthetic")


def batch_iterator(
        d: Dataset,
        batch_size: int,
        shuffle_seed: Optional[int] = None,
        include_labels: bool = True,
) -> Iterator[Batch]:
    """One epoch of batches; ``include_labels=False`` never touches ``d.labels``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = len(d)
    order = np.arange(n) if shuffle_seed is None else make_rng(shuffle_seed).permutation(n)
    labels = d.labels if include_labels else None
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        y = labels[idx] if labels is not None else np.full(len(idx), UNLABELED, dtype=np.int64)
        yield Batch(x=d.samples[idx], y=y, indices=idx)


def class_counts(labels: np.ndarray, num_classes: int) -> Tuple[int, ...]:
    known = labels[labels >= 0]
    return tuple(int(c) for c in np.bincount(known, minlength=num_classes))
