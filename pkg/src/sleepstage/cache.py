"""Binary epoch cache and per-subject normalization stats files.

Cache layout: 4 magic bytes, u32 version, u32 epoch count, then per epoch
one label byte followed by the epoch's samples as little-endian 32-bit
floats. The sample count per epoch is implied by the file size. Epochs are
stored in epoch_index order; loading renumbers them densely from 0.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .edf import LabeledEpoch, StageLabel
from .errors import TruncatedFile
from .preprocess import NormalizationStats

_MAGIC = b"SSE1"
_VERSION = 1

EPOCH_SUFFIX = ".epochs"
STATS_SUFFIX = ".stats"


def save_epochs(epochs: list[LabeledEpoch], path) -> None:
    if not epochs:
        raise ValueError("refusing to write an empty epoch cache")
    lengths = {len(e.samples) for e in epochs}
    if len(lengths) != 1:
        raise ValueError(f"mixed epoch lengths {sorted(lengths)}")
    ordered = sorted(epochs, key=lambda e: e.epoch_index)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(ordered)))
        for e in ordered:
            fh.write(struct.pack("B", int(e.label)))
            fh.write(np.asarray(e.samples, dtype="<f4").tobytes())


def load_epochs(path, subject_id: str) -> list[LabeledEpoch]:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise TruncatedFile(f"{path}: not an epoch cache")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise TruncatedFile(f"{path}: unsupported cache version {version}")
    body = len(blob) - 12
    if count == 0:
        raise TruncatedFile(f"{path}: empty cache")
    if body % count:
        raise TruncatedFile(f"{path}: {body} payload bytes not divisible by {count} epochs")
    record = body // count
    if (record - 1) % 4:
        raise TruncatedFile(f"{path}: record size {record} is not 1 + 4*samples")
    n_samples = (record - 1) // 4
    epochs = []
    off = 12
    for i in range(count):
        label = blob[off]
        samples = np.frombuffer(blob, dtype="<f4", count=n_samples, offset=off + 1)
        epochs.append(LabeledEpoch(
            samples=samples.astype(np.float64),
            label=StageLabel(label),
            subject_id=subject_id,
            epoch_index=i,
        ))
        off += record
    return epochs


def save_stats(stats: NormalizationStats, path) -> None:
    Path(path).write_text(f"s05 = {stats.s05!r}\ns95 = {stats.s95!r}\n")


def load_stats(path) -> NormalizationStats:
    values = {}
    for line in Path(path).read_text().splitlines():
        key, _, val = line.partition("=")
        values[key.strip()] = float(val.strip())
    return NormalizationStats(s05=values["s05"], s95=values["s95"])


def subject_of(cache_name: str) -> str:
    """Cache files are named '<subject>__<recording>'; bare names are their
    own subject."""
    return cache_name.split("__", 1)[0]


def cached_subjects(cache_dir) -> list[str]:
    return sorted({subject_of(p.name[:-len(EPOCH_SUFFIX)])
                   for p in Path(cache_dir).glob(f"*{EPOCH_SUFFIX}")})


def load_all(cache_dir) -> list[LabeledEpoch]:
    """Every cached epoch in sorted file order; epoch indices are renumbered
    to keep strictly increasing within each subject across recordings."""
    epochs: list[LabeledEpoch] = []
    next_index: dict[str, int] = {}
    for path in sorted(Path(cache_dir).glob(f"*{EPOCH_SUFFIX}")):
        subject = subject_of(path.name[:-len(EPOCH_SUFFIX)])
        base = next_index.get(subject, 0)
        loaded = load_epochs(path, subject)
        for e in loaded:
            e.epoch_index += base
        next_index[subject] = base + len(loaded)
        epochs.extend(loaded)
    return epochs
