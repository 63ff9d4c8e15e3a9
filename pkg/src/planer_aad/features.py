"""Log-mel spectrogram front-end and the on-disk feature cache.

Defaults give 1,000-sample Hann frames with a 500-sample hop at 20 kHz,
zero-padded to a 1024-point FFT, 80 HTK-style mel bands over 0-10 kHz and
a natural log with a 1e-10 floor. A 10 s clip maps to 401 x 80 values.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import SAMPLE_RATE, AudioClip


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 50.0
    hop_ms: float = 25.0
    n_mels: int = 80
    fft_size: int = 1024
    fmin: float = 0.0
    fmax: float = 10000.0
    log_floor: float = 1e-10
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        for name, ms in (("frame", self.frame_ms), ("hop", self.hop_ms)):
            n = self.sample_rate * ms / 1000.0
            if n <= 0 or abs(n - round(n)) > 1e-9:
                raise FeatureError(f"{name} of {ms} ms is not a whole number of samples")
        if self.frame_length > self.fft_size:
            raise FeatureError("fft_size must be at least the frame length")
        if self.fft_size & (self.fft_size - 1):
            raise FeatureError("fft_size must be a power of two")
        if self.n_mels < 1:
            raise FeatureError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.fmax:
            raise FeatureError("need 0 <= fmin < fmax")
        if self.fmax > self.sample_rate / 2:
            raise FeatureError(f"fmax {self.fmax} Hz exceeds Nyquist ({self.sample_rate / 2} Hz)")
        if self.log_floor <= 0:
            raise FeatureError("log_floor must be positive")

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop_length + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_frames, n_mels)
    clip_id: str = ""

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Centered framing: reflect-pad frame_length // 2 on both sides.

    Returns an array of shape (n_samples // hop + 1, frame_length).
    """
    if clip.sample_rate != cfg.sample_rate:
        raise FeatureError(f"clip rate {clip.sample_rate} Hz != config rate {cfg.sample_rate} Hz")
    x = np.asarray(clip.samples, dtype=np.float64)
    hop, flen = cfg.hop_length, cfg.frame_length
    if len(x) < hop:
        raise FeatureError(f"clip of {len(x)} samples is shorter than one hop ({hop})")
    pad = flen // 2
    padded = np.pad(x, (pad, flen - pad), mode="reflect")
    n = cfg.n_frames(len(x))
    idx = np.arange(flen)[None, :] + hop * np.arange(n)[:, None]
    return padded[idx]


def hann_window(length: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def power_spectrum(frames: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """|rfft(hann * frame, fft_size)|^2 along the last axis."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] > cfg.fft_size:
        raise FeatureError("frame longer than fft_size")
    spec = np.fft.rfft(frames * hann_window(frames.shape[-1]), n=cfg.fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def mel_filterbank(cfg: FeatureConfig, sample_rate: int | None = None) -> np.ndarray:
    """Triangular filters, centers evenly spaced in mel, shape (n_mels, fft_size // 2 + 1)."""
    sr = cfg.sample_rate if sample_rate is None else sample_rate
    if cfg.fmax > sr / 2:
        raise FeatureError(f"fmax {cfg.fmax} Hz exceeds Nyquist ({sr / 2} Hz)")
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.arange(n_bins) * sr / cfg.fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    # Narrow low bands can fall between FFT bins; give them their nearest bin.
    for m in np.flatnonzero(fb.max(axis=1) <= 0.0):
        fb[m, int(np.argmin(np.abs(freqs - mid[m, 0])))] = 1.0
    return fb


def log_mel_spectrogram(clip: AudioClip, cfg: FeatureConfig | None = None, filterbank=None) -> MelSpectrogram:
    cfg = cfg or FeatureConfig()
    fb = mel_filterbank(cfg) if filterbank is None else filterbank
    power = power_spectrum(frame_signal(clip, cfg), cfg)
    mel = power @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), clip.clip_id)


# -- cache -----------------------------------------------------------------

def _cache_paths(cache_dir, clip_id: str):
    base = Path(cache_dir) / clip_id
    return base.with_name(base.name + ".json"), base.with_name(base.name + ".f32")


def write_cached(cache_dir, spec: MelSpectrogram, cfg: FeatureConfig | None = None) -> None:
    """Write ``<clip_id>.f32`` (row-major little-endian float32) and its JSON sidecar.

    The binary is written first and the sidecar last, each via a temporary
    file and rename, so a present sidecar implies a complete binary.
    """
    meta_path, bin_path = _cache_paths(cache_dir, spec.clip_id)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(spec.values, dtype="<f4")
    meta = {"clip_id": spec.clip_id, "shape": list(data.shape), "dtype": "f32le"}
    if cfg is not None:
        meta["feature_config"] = cfg.to_dict()
    tmp = bin_path.with_name(bin_path.name + ".tmp")
    tmp.write_bytes(data.tobytes())
    os.replace(tmp, bin_path)
    tmp = meta_path.with_name(meta_path.name + ".tmp")
    tmp.write_text(json.dumps(meta, sort_keys=True) + "\n")
    os.replace(tmp, meta_path)


def read_cached(cache_dir, clip_id: str) -> MelSpectrogram:
    meta_path, bin_path = _cache_paths(cache_dir, clip_id)
    if not meta_path.is_file() or not bin_path.is_file():
        raise FileNotFoundError(f"no cached features for {clip_id!r} in {cache_dir}")
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != "f32le":
        raise FeatureError(f"{meta_path}: unsupported dtype {meta.get('dtype')!r}")
    shape = tuple(meta["shape"])
    values = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    if values.size != int(np.prod(shape)):
        raise FeatureError(f"{bin_path}: expected {np.prod(shape)} values, found {values.size}")
    return MelSpectrogram(values.reshape(shape).astype(np.float32), meta["clip_id"])


def cache_is_fresh(cache_dir, clip_id: str, source, cfg: FeatureConfig) -> bool:
    meta_path, bin_path = _cache_paths(cache_dir, clip_id)
    try:
        meta = json.loads(meta_path.read_text())
        fresh = meta_path.stat().st_mtime_ns >= Path(source).stat().st_mtime_ns and bin_path.is_file()
    except (OSError, ValueError):
        return False
    return fresh and meta.get("feature_config") == cfg.to_dict()
