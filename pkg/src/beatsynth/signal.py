"""Beat segmentation, fixed-length resampling and [-1, 1] rescaling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import RawRecord

DEFAULT_BEAT_LEN = 64
DEFAULT_CUTOFF = 0.75


@dataclass
class BeatSeries:
    samples: np.ndarray
    label: str
    record_id: str
    r_peak: int
    normalized: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError(f"beat needs at least 2 samples, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.size


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def adaptive_window_segment(signal: np.ndarray, r_peaks: Sequence[int],
                            cutoff: float = DEFAULT_CUTOFF) -> list[tuple[int, int, int]]:
    """Half-open beat windows reaching ``cutoff`` of the way to each neighbouring R-peak.

    The first and last peaks have only one neighbour and are dropped.
    """
    if not 0.0 < cutoff < 1.0:
        raise ValueError(f"cutoff must lie in (0, 1), got {cutoff}")
    peaks = [int(p) for p in r_peaks]
    n = len(signal)
    for a, b in zip(peaks, peaks[1:]):
        if b <= a:
            raise ValueError(f"r_peaks must be strictly increasing ({a} then {b})")
    if peaks and (peaks[0] < 0 or peaks[-1] >= n):
        raise ValueError("r_peaks outside signal bounds")
    windows = []
    for prev, r, nxt in zip(peaks, peaks[1:], peaks[2:]):
        start = _round_half_away(r - cutoff * (r - prev))
        end = _round_half_away(r + cutoff * (nxt - r))
        windows.append((start, end, r))
    return windows


def resample_linear(beat: np.ndarray, length: int) -> np.ndarray:
    beat = np.asarray(beat, dtype=np.float64)
    if length < 2:
        raise ValueError(f"target length must be >= 2, got {length}")
    if beat.size < 2:
        raise ValueError("input beat needs at least 2 samples")
    if beat.size == length:
        return beat.copy()
    src = np.linspace(0.0, 1.0, beat.size)
    dst = np.linspace(0.0, 1.0, length)
    out = np.interp(dst, src, beat)
    out[0], out[-1] = beat[0], beat[-1]
    return out


def rescale_unit(beat: np.ndarray) -> np.ndarray:
    beat = np.asarray(beat, dtype=np.float64)
    if beat.size == 0:
        raise ValueError("cannot rescale an empty beat")
    lo, hi = beat.min(), beat.max()
    if hi == lo:
        return np.zeros_like(beat)
    out = 2.0 * (beat - lo) / (hi - lo) - 1.0
    out[beat == lo] = -1.0
    out[beat == hi] = 1.0
    return np.clip(out, -1.0, 1.0)


def segment_record(record: RawRecord, length: int = DEFAULT_BEAT_LEN, cutoff: float = DEFAULT_CUTOFF,
                   channel: int = 0) -> list[BeatSeries]:
    """Cut one lead of an annotated record into resampled, rescaled beats."""
    signal = record.lead_mv(channel)
    anns = record.annotations
    labels = {a.sample_index: a.label for a in anns}
    beats = []
    for start, end, r in adaptive_window_segment(signal, [a.sample_index for a in anns], cutoff):
        window = signal[max(start, 0):min(end, len(signal))]
        if window.size < 2:
            continue
        samples = rescale_unit(resample_linear(window, length))
        beats.append(BeatSeries(samples, labels[r], record.record_id, r, normalized=True))
    return beats
