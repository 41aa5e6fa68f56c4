"""Seeded synthetic beat corpora for smoke runs, directional experiments and fixtures."""
from __future__ import annotations

import numpy as np

from .signal import BeatSeries, rescale_unit


def _grid(length: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, length)


def bimodal_beats(n: int, length: int = 16, seed: int = 0, jitter: float = 0.02) -> np.ndarray:
    """Half the beats peak early, half late; a two-mode distribution in [-1, 1]."""
    rng = np.random.default_rng(seed)
    t = _grid(length)
    centres = np.where(rng.random(n) < 0.5, 0.3, 0.7) + jitter * rng.standard_normal(n)
    bumps = np.exp(-((t[None] - centres[:, None]) / 0.12) ** 2)
    return 2.0 * bumps - 1.0


def sine_bump_template(length: int = 64) -> np.ndarray:
    t = _grid(length)
    return np.where((t > 0.3) & (t < 0.7), np.sin((t - 0.3) / 0.4 * np.pi), 0.0) * 2.0 - 1.0


def sine_bump_beats(n: int, length: int = 64, seed: int = 0, shift: float = 0.03, noise: float = 0.02) -> np.ndarray:
    """Half-sine bumps with jittered position, amplitude and a little additive noise, clipped to [-1, 1]."""
    rng = np.random.default_rng(seed)
    t = _grid(length)
    out = np.empty((n, length))
    for i in range(n):
        c = 0.3 + shift * rng.standard_normal()
        amp = rng.uniform(0.85, 1.0)
        bump = np.where((t > c) & (t < c + 0.4), np.sin((t - c) / 0.4 * np.pi), 0.0)
        out[i] = np.clip(2.0 * amp * bump - 1.0 + noise * rng.standard_normal(length), -1.0, 1.0)
    return out


def beat_shape(label: str, t: np.ndarray, centre: float) -> np.ndarray:
    """Narrow QRS-like spike for N; a wider notched complex for L."""
    if label == "N":
        return np.exp(-((t - centre) / 0.06) ** 2) + 0.2 * np.exp(-((t - centre - 0.3) / 0.08) ** 2)
    return np.exp(-((t - centre) / 0.12) ** 2) + 0.5 * np.exp(-((t - centre - 0.15) / 0.06) ** 2)


def labelled_corpus(n: int, label: str, length: int = 32, seed: int = 0, noise: float = 0.15,
                    record_id: str = "toy") -> list[BeatSeries]:
    rng = np.random.default_rng(seed)
    t = _grid(length)
    beats = []
    for i in range(n):
        x = beat_shape(label, t, rng.uniform(0.3, 0.4)) + noise * rng.standard_normal(length)
        beats.append(BeatSeries(rescale_unit(x), label, record_id, i, normalized=True))
    return beats


def synthetic_ecg(label: str, seconds: float, fs: int = 360, seed: int = 0, gain: float = 200.0
                  ) -> tuple[np.ndarray, list[int]]:
    """A continuous single-lead trace in ADC units with R-peaks every 0.7-0.9 s."""
    rng = np.random.default_rng(seed)
    n = int(seconds * fs)
    peaks = []
    r = int(0.5 * fs)
    while r < n - fs // 2:
        peaks.append(r)
        r += int(rng.uniform(0.7, 0.9) * fs)
    t = np.arange(n) / fs
    mv = 0.05 * np.sin(2 * np.pi * 0.3 * t) + 0.02 * rng.standard_normal(n)
    width = 0.012 if label == "N" else 0.03
    for p in peaks:
        c = p / fs
        mv += 1.2 * np.exp(-((t - c) / width) ** 2)
        mv -= 0.2 * np.exp(-((t - c - 0.04) / 0.015) ** 2)
        mv += 0.25 * np.exp(-((t - c - 0.25) / 0.05) ** 2)
        if label == "L":
            mv += 0.5 * np.exp(-((t - c - 0.06) / 0.02) ** 2)
    adc = np.clip(np.round(mv * gain), -2048, 2047).astype(np.int64)
    return adc, peaks
