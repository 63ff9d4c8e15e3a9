"""Synthetic planer-like recordings for desk-scale experiments.

Normal clips: a band-limited harmonic machine hum with slow amplitude
drift, one to three "board passages" during which a second harmonic series
(the cutter) sounds, and low white noise. Anomalous clips are normal clips with one to three short
broadband bursts (decaying white noise) added.

Run ``python -m planer_aad.synthetic OUTDIR`` to write WAVs and a manifest.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SAMPLE_RATE, AudioClip, ClipLabel, write_clip, write_manifest

ANOMALY_CYCLE = ("broken_board", "board_stuck", "uneven_or_thick")


@dataclass(frozen=True)
class SynthConfig:
    duration: float = 3.0
    sample_rate: int = SAMPLE_RATE
    band_hz: float = 4000.0  # harmonics above this are dropped
    hum_hz: float = 120.0
    cutter_hz: float = 720.0
    jitter: float = 0.02  # relative spread of both fundamentals
    max_boards: int = 3
    board_s: tuple = (0.3, 0.9)
    tone_level: float = 0.1
    noise_level: float = 0.003
    burst_level: float = 0.05
    burst_ms: tuple = (10.0, 40.0)
    max_bursts: int = 3


def _harmonic(t, f0, band, rng, level):
    k = np.arange(1, int(band // f0) + 1)
    phases = rng.uniform(0, 2 * np.pi, size=k.size)
    amps = level / k
    return (amps[:, None] * np.sin(2 * np.pi * f0 * k[:, None] * t[None, :] + phases[:, None])).sum(axis=0)


def normal_signal(rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    sr = cfg.sample_rate
    n = int(round(cfg.duration * sr))
    t = np.arange(n) / sr
    jitter = lambda: 1.0 + rng.uniform(-cfg.jitter, cfg.jitter)  # noqa: E731
    drift = 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.2, 1.0) * t + rng.uniform(0, 2 * np.pi))
    x = drift * _harmonic(t, cfg.hum_hz * jitter(), cfg.band_hz, rng, cfg.tone_level)
    ramp = max(1, int(0.02 * sr))
    for _ in range(int(rng.integers(1, cfg.max_boards + 1))):
        start = rng.uniform(0.0, 0.8) * cfg.duration
        stop = min(cfg.duration, start + rng.uniform(*cfg.board_s))
        gate = ((t >= start) & (t < stop)).astype(float)
        gate = np.convolve(gate, np.ones(ramp) / ramp, mode="same")
        x += gate * _harmonic(t, cfg.cutter_hz * jitter(), cfg.band_hz, rng, 0.5 * cfg.tone_level)
    x += cfg.noise_level * rng.standard_normal(n)
    return x


def add_bursts(x: np.ndarray, rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    x = x.copy()
    sr = cfg.sample_rate
    for _ in range(int(rng.integers(1, cfg.max_bursts + 1))):
        length = int(rng.uniform(*cfg.burst_ms) * sr / 1000.0)
        start = int(rng.integers(0, len(x) - length))
        env = np.exp(-np.arange(length) / (0.3 * length))
        x[start:start + length] += cfg.burst_level * env * rng.standard_normal(length)
    return x


def synth_clip(rng, anomalous=False, clip_id="", cfg: SynthConfig = SynthConfig()) -> AudioClip:
    x = normal_signal(rng, cfg)
    if anomalous:
        x = add_bursts(x, rng, cfg)
    return AudioClip(clip_id, np.clip(x, -1.0, 1.0), cfg.sample_rate)


def generate(n_train=200, n_eval_normal=50, n_eval_anomalous=10, seed=0, cfg: SynthConfig = SynthConfig()):
    """Yield ``(ClipLabel, AudioClip)`` pairs; ids are ``train_0000``, ``eval_0000``, ..."""
    rng = np.random.default_rng(seed)
    for i in range(n_train):
        cid = f"train_{i:04d}"
        yield ClipLabel(cid, f"train/{cid}.wav", "train", False, "none", "2x6"), synth_clip(rng, False, cid, cfg)
    # anomalies interleaved at fixed positions so ids carry no label order
    n_eval = n_eval_normal + n_eval_anomalous
    anomalous = np.zeros(n_eval, dtype=bool)
    anomalous[rng.choice(n_eval, n_eval_anomalous, replace=False)] = True
    k = 0
    for i in range(n_eval):
        cid = f"eval_{i:04d}"
        if anomalous[i]:
            kind = ANOMALY_CYCLE[k % len(ANOMALY_CYCLE)]
            k += 1
            label = ClipLabel(cid, f"eval/{cid}.wav", "eval", True, kind, "2x6")
        else:
            label = ClipLabel(cid, f"eval/{cid}.wav", "eval", False, "none", "2x6")
        yield label, synth_clip(rng, bool(anomalous[i]), cid, cfg)


def write_dataset(root, n_train=200, n_eval_normal=50, n_eval_anomalous=10, seed=0,
                  cfg: SynthConfig = SynthConfig()) -> Path:
    """Write WAVs (PCM16) and ``manifest.csv`` under ``root``; return the manifest path."""
    root = Path(root)
    labels = []
    for label, clip in generate(n_train, n_eval_normal, n_eval_anomalous, seed, cfg):
        path = root / label.relative_path
        path.parent.mkdir(parents=True, exist_ok=True)
        write_clip(path, clip)
        labels.append(label)
    manifest = root / "manifest.csv"
    write_manifest(manifest, labels)
    return manifest


def main(argv=None):
    p = argparse.ArgumentParser(description="Write a synthetic planer dataset.")
    p.add_argument("out")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--eval-normal", type=int, default=50)
    p.add_argument("--eval-anomalous", type=int, default=10)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    path = write_dataset(a.out, a.train, a.eval_normal, a.eval_anomalous, a.seed, SynthConfig(duration=a.duration))
    print(path)


if __name__ == "__main__":
    main()
