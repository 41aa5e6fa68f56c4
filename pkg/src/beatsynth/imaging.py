"""Beat <-> 3-channel image embedding (GASF, GADF, MTF) and the TSIM batch file format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .signal import BeatSeries

CHANNEL_ORDER = ("GASF", "GADF", "MTF")
DEFAULT_BINS = 8
DOMAIN_TOL = 1e-9
# generated diagonals further than this outside [-1, 1] are flagged in reports
CLAMP_FLAG_TOL = 0.05


@dataclass(frozen=True)
class MtfConfig:
    bins: int = DEFAULT_BINS


@dataclass
class PolarSeries:
    phi: np.ndarray
    r: np.ndarray


@dataclass
class ImagingTensor:
    channels: np.ndarray
    label: str = ""
    record_id: str = ""
    r_peak: int = -1
    meta: dict = field(default_factory=dict)


def to_polar(x: np.ndarray) -> PolarSeries:
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0 + DOMAIN_TOL):
        bad = int(np.argmax(np.abs(x)))
        raise ValueError(f"sample {bad} = {x[bad]!r} outside [-1, 1]")
    n = x.size
    return PolarSeries(np.arccos(np.clip(x, -1.0, 1.0)), np.arange(1, n + 1) / n)


def gasf(phi: np.ndarray) -> np.ndarray:
    half = np.asarray(phi, dtype=np.float64) / 2.0
    return np.cos(half[:, None] + half[None, :])


def gadf(phi: np.ndarray) -> np.ndarray:
    # cosine of half-angle differences, the form used by the source pipeline
    half = np.asarray(phi, dtype=np.float64) / 2.0
    return np.cos(half[:, None] - half[None, :])


def quantile_bins(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin index per sample; edges at the j/Q empirical quantiles, right-inclusive."""
    edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, x, side="left")


def transition_matrix(bins: np.ndarray, n_bins: int) -> np.ndarray:
    """Row-stochastic first-order transition matrix; unvisited rows are uniform."""
    counts = np.zeros((n_bins, n_bins))
    np.add.at(counts, (bins[:-1], bins[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / n_bins)


def mtf(x: np.ndarray, cfg: MtfConfig = MtfConfig()) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n, q = x.size, cfg.bins
    if n < 2:
        raise ValueError("MTF needs at least 2 samples")
    if not 2 <= q <= n:
        raise ValueError(f"bins must satisfy 2 <= Q <= N ({n}), got {q}")
    bins = quantile_bins(x, q)
    w = transition_matrix(bins, q)
    return w[bins[:, None], bins[None, :]]


def embed(beat: BeatSeries | np.ndarray, cfg: MtfConfig = MtfConfig()) -> ImagingTensor:
    if isinstance(beat, BeatSeries):
        x, label, rid, peak = beat.samples, beat.label, beat.record_id, beat.r_peak
    else:
        x, label, rid, peak = np.asarray(beat, dtype=np.float64), "", "", -1
    phi = to_polar(x).phi
    channels = np.stack([gasf(phi), gadf(phi), mtf(x, cfg)])
    return ImagingTensor(channels, label, rid, peak)


def deembed(img: ImagingTensor | np.ndarray) -> BeatSeries:
    """Recover the beat from the GASF diagonal, clamping generated values to [-1, 1]."""
    if isinstance(img, ImagingTensor):
        ch, label, rid, peak = img.channels, img.label, img.record_id, img.r_peak
    else:
        ch, label, rid, peak = np.asarray(img), "", "", -1
    if ch.ndim != 3 or ch.shape[1] != ch.shape[2]:
        raise ValueError(f"expected (C, L, L) channels, got shape {ch.shape}")
    return BeatSeries(np.clip(np.diagonal(ch[0]).copy(), -1.0, 1.0), label, rid, peak, normalized=True)


def diagonal_excursion(img: ImagingTensor | np.ndarray) -> float:
    """How far the GASF diagonal strays outside [-1, 1] (0 when inside)."""
    ch = img.channels if isinstance(img, ImagingTensor) else np.asarray(img)
    d = np.abs(np.diagonal(ch[0]))
    return float(max(d.max() - 1.0, 0.0))


# ---------------------------------------------------------------------------
# TSIM batch files
#
#   b"TSIM" | u8 version | u32 C | u32 H | u32 W | u32 N | u32 meta_len | meta JSON
#   then N*C*H*W little-endian float64, item-major, channel-major, row-major.

TSIM_MAGIC = b"TSIM"
TSIM_VERSION = 1
_HEADER = struct.Struct("<4sBIIIII")


class TsimError(DataError):
    pass


def write_tsim(path, images: Sequence[ImagingTensor], meta: dict | None = None) -> None:
    if not images:
        raise ValueError("write_tsim: no images")
    arr = np.stack([im.channels for im in images]).astype("<f8")
    n, c, h, w = arr.shape
    doc = dict(meta or {})
    doc["channel_order"] = list(CHANNEL_ORDER[:c]) if c <= 3 else [f"ch{i}" for i in range(c)]
    doc["items"] = [{"record": im.record_id, "label": im.label, "r_peak": int(im.r_peak)} for im in images]
    meta_bytes = json.dumps(doc, sort_keys=True).encode()
    header = _HEADER.pack(TSIM_MAGIC, TSIM_VERSION, c, h, w, n, len(meta_bytes))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + meta_bytes + np.ascontiguousarray(arr).tobytes())


def read_tsim_array(path) -> tuple[np.ndarray, dict]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size or buf[:4] != TSIM_MAGIC:
        raise TsimError(f"{path}: not a TSIM file (bad magic {buf[:4]!r})")
    _, version, c, h, w, n, meta_len = _HEADER.unpack_from(buf)
    if version != TSIM_VERSION:
        raise TsimError(f"{path}: unsupported TSIM version {version}")
    off = _HEADER.size
    meta = json.loads(buf[off:off + meta_len])
    off += meta_len
    count = n * c * h * w
    if len(buf) - off != 8 * count:
        raise TsimError(f"{path}: payload has {len(buf) - off} bytes, expected {8 * count}")
    if meta.get("channel_order", list(CHANNEL_ORDER))[:1] != ["GASF"]:
        raise TsimError(f"{path}: channel 0 is not GASF")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(n, c, h, w).copy()
    return arr, meta


def read_tsim(path) -> tuple[list[ImagingTensor], dict]:
    arr, meta = read_tsim_array(path)
    items = meta.get("items") or [{}] * len(arr)
    images = [ImagingTensor(a, it.get("label", ""), it.get("record", ""), int(it.get("r_peak", -1)))
              for a, it in zip(arr, items)]
    return images, meta
