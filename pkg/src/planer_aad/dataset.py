"""WAV loading, label manifests and train/validation splitting."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 20000

ANOMALY_TYPES = ("none", "broken_board", "board_stuck", "uneven_or_thick")
BOARD_TYPES = ("2x3", "2x4", "2x6", "unknown")
SPLITS = ("train", "eval")
MANIFEST_HEADER = ("clip_id", "relative_path", "split", "is_anomaly", "anomaly_type", "board_type")


class DatasetError(ValueError):
    """Raised for unreadable audio or malformed manifests."""


@dataclass(frozen=True)
class AudioClip:
    clip_id: str
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ClipLabel:
    clip_id: str
    relative_path: str
    split: str
    is_anomaly: bool
    anomaly_type: str = "none"
    board_type: str = "unknown"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if self.anomaly_type not in ANOMALY_TYPES:
            raise DatasetError(f"unknown anomaly_type {self.anomaly_type!r}")
        if self.board_type not in BOARD_TYPES:
            raise DatasetError(f"unknown board_type {self.board_type!r}")
        if self.is_anomaly != (self.anomaly_type != "none"):
            raise DatasetError(
                f"{self.clip_id}: is_anomaly={int(self.is_anomaly)} inconsistent "
                f"with anomaly_type={self.anomaly_type}"
            )
        if self.split == "train" and self.is_anomaly:
            raise DatasetError(f"{self.clip_id}: training clips must be normal")


@dataclass
class Manifest:
    entries: list[ClipLabel]
    root_path: Path
    _by_id: dict[str, ClipLabel] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for e in self.entries:
            if e.clip_id in self._by_id:
                raise DatasetError(f"duplicate clip_id {e.clip_id!r}")
            self._by_id[e.clip_id] = e

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, clip_id: str) -> ClipLabel:
        return self._by_id[clip_id]

    def __contains__(self, clip_id) -> bool:
        return clip_id in self._by_id

    def ids(self, split: str | None = None) -> list[str]:
        return [e.clip_id for e in self.entries if split is None or e.split == split]

    def path_of(self, clip_id: str) -> Path:
        return self.root_path / self._by_id[clip_id].relative_path

    def missing_files(self) -> list[str]:
        return [e.clip_id for e in self.entries if not (self.root_path / e.relative_path).is_file()]


def load_clip(path, clip_id: str | None = None, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file.

    PCM16 amplitudes are divided by 32768. No resampling is done: a file
    at any rate other than ``expected_rate`` is rejected.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise DatasetError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if rate != expected_rate:
        raise DatasetError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DatasetError(f"{path}: unsupported sample format {data.dtype}")
    if samples.size == 0:
        raise DatasetError(f"{path}: no samples")
    return AudioClip(clip_id or path.stem, samples, int(rate))


def write_clip(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    """Write a clip as mono WAV (``pcm16`` or ``float32``)."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(Path(path), clip.sample_rate, data)


def _parse_row(row: dict, lineno: int) -> ClipLabel:
    def pick(key, allowed):
        value = (row.get(key) or "").strip()
        if value not in allowed:
            raise DatasetError(f"line {lineno}: {key}={value!r} not in {'|'.join(allowed)}")
        return value

    clip_id = (row.get("clip_id") or "").strip()
    rel = (row.get("relative_path") or "").strip()
    if not clip_id or not rel:
        raise DatasetError(f"line {lineno}: empty clip_id or relative_path")
    split = pick("split", SPLITS)
    is_anomaly = pick("is_anomaly", ("0", "1")) == "1"
    anomaly_type = pick("anomaly_type", ANOMALY_TYPES)
    board_type = pick("board_type", BOARD_TYPES)
    try:
        return ClipLabel(clip_id, rel, split, is_anomaly, anomaly_type, board_type)
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None


def load_manifest(path, root=None, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest CSV.

    ``root`` defaults to the manifest's directory; ``relative_path`` values
    are resolved against it.
    """
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    entries: list[ClipLabel] = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise DatasetError(f"line 1: header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise DatasetError(f"line {lineno}: wrong number of fields")
            label = _parse_row(row, lineno)
            if label.clip_id in seen:
                raise DatasetError(
                    f"line {lineno}: duplicate clip_id {label.clip_id!r} (first on line {seen[label.clip_id]})"
                )
            seen[label.clip_id] = lineno
            entries.append(label)
    manifest = Manifest(entries, root)
    if check_files:
        missing = manifest.missing_files()
        if missing:
            raise DatasetError(f"{len(missing)} audio file(s) missing, first: {missing[0]}")
    return manifest


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([e.clip_id, e.relative_path, e.split, int(e.is_anomaly), e.anomaly_type, e.board_type])


def split_train_val(manifest: Manifest, fraction: float = 0.1, seed: int = 0):
    """Split the training clips into (train_ids, val_ids).

    Ids are sorted, then permuted with numpy's PCG64 generator seeded by
    ``seed``; the first ``floor(fraction * n)`` become the validation set.
    The result does not depend on manifest row order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    ids = sorted(manifest.ids("train"))
    if not ids:
        raise DatasetError("manifest has no training clips")
    if len(ids) < 2:
        raise DatasetError("need at least two training clips to split")
    n_val = math.floor(round(fraction * len(ids), 9))
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return shuffled[n_val:], shuffled[:n_val]


def relpath_for(path, root) -> str:
    return os.path.relpath(Path(path), Path(root)).replace(os.sep, "/")
