"""Raw record decoding (format 212), annotation CSV loading and dataset splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from .errors import AnnotationFormatError, DataError, Format212Error

DEFAULT_FS = 360
DEFAULT_GAIN = 200.0


@dataclass(frozen=True)
class Annotation:
    sample_index: int
    label: str


@dataclass
class RawRecord:
    record_id: str
    sampling_rate_hz: int
    channels: list[np.ndarray]
    gain: float = DEFAULT_GAIN
    annotations: list[Annotation] = field(default_factory=list)

    def __post_init__(self):
        if self.sampling_rate_hz <= 0:
            raise DataError(f"record {self.record_id}: sampling rate must be positive")
        if len({len(c) for c in self.channels}) > 1:
            raise DataError(f"record {self.record_id}: channels differ in length")

    def lead_mv(self, channel: int = 0) -> np.ndarray:
        """One channel converted from ADC units to millivolts."""
        return np.asarray(self.channels[channel], dtype=np.float64) / self.gain


def decode_format212(data: bytes, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Unpack ``n_samples`` interleaved 12-bit samples into two channels.

    Each 3-byte frame carries one sample per channel: channel A is byte0 plus
    the low nibble of byte1 as its top four bits, channel B is byte2 plus the
    high nibble of byte1. Both are 12-bit two's complement.
    """
    if n_samples < 0 or n_samples % 2:
        raise ValueError(f"n_samples must be a non-negative even count, got {n_samples}")
    n_frames = n_samples // 2
    need = 3 * n_frames
    if len(data) < need:
        raise Format212Error(f"truncated frame: need {need} bytes, have {len(data)}", offset=len(data) - len(data) % 3)
    raw = np.frombuffer(data, dtype=np.uint8, count=need).reshape(n_frames, 3).astype(np.int32)
    a = raw[:, 0] | ((raw[:, 1] & 0x0F) << 8)
    b = raw[:, 2] | ((raw[:, 1] >> 4) << 8)
    a = np.where(a >= 2048, a - 4096, a)
    b = np.where(b >= 2048, b - 4096, b)
    return a, b


def encode_format212(a: np.ndarray, b: np.ndarray) -> bytes:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("channels must have equal length")
    if a.size and (min(a.min(), b.min()) < -2048 or max(a.max(), b.max()) > 2047):
        raise ValueError("samples must lie in [-2048, 2047]")
    ua, ub = a & 0xFFF, b & 0xFFF
    frames = np.empty((a.size, 3), dtype=np.uint8)
    frames[:, 0] = ua & 0xFF
    frames[:, 1] = (ua >> 8) | ((ub >> 8) << 4)
    frames[:, 2] = ub & 0xFF
    return frames.tobytes()


def read_dat(path, record_id: str | None = None, fs: int = DEFAULT_FS, gain: float = DEFAULT_GAIN) -> RawRecord:
    data = Path(path).read_bytes()
    if len(data) % 3:
        raise Format212Error("file length is not a whole number of frames", offset=len(data) - len(data) % 3)
    a, b = decode_format212(data, 2 * (len(data) // 3))
    return RawRecord(record_id or Path(path).stem, fs, [a, b], gain)


def load_annotations_csv(path) -> list[Annotation]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample", "label"]:
            raise AnnotationFormatError(f"expected header 'sample,label', got {header}", row=0)
        out: list[Annotation] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 2:
                raise AnnotationFormatError(f"expected 2 fields, got {len(row)}", row=row_no)
            try:
                idx = int(row[0])
            except ValueError:
                raise AnnotationFormatError(f"bad sample index {row[0]!r}", row=row_no) from None
            if idx < 0:
                raise AnnotationFormatError(f"negative sample index {idx}", row=row_no)
            if out and idx <= out[-1].sample_index:
                raise AnnotationFormatError(
                    f"sample index {idx} not after previous {out[-1].sample_index}", row=row_no)
            out.append(Annotation(idx, row[1].strip()))
    return out


def write_annotations_csv(path, annotations: Sequence[Annotation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("sample,label\n")
        for a in annotations:
            fh.write(f"{a.sample_index},{a.label}\n")


def load_record(dat_path, ann_path, record_id: str | None = None, fs: int = DEFAULT_FS,
                gain: float = DEFAULT_GAIN) -> RawRecord:
    rec = read_dat(dat_path, record_id, fs, gain)
    anns = load_annotations_csv(ann_path)
    n = len(rec.channels[0])
    if anns and anns[-1].sample_index >= n:
        raise DataError(f"annotation at {anns[-1].sample_index} beyond record length {n}")
    rec.annotations = anns
    return rec


T = TypeVar("T")


def split_dataset(beats: Sequence[T], seed: int, fractions: tuple[float, float]) -> tuple[list[T], list[T]]:
    """Seeded stratified split into disjoint train and test lists.

    Each label's beats are shuffled independently and cut by rounding the
    requested fractions, so per-class proportions hold to within one beat.
    Output order follows the input order.
    """
    if not beats:
        raise DataError("split_dataset: empty input")
    f_train, f_test = fractions
    if f_train <= 0 or f_test <= 0 or f_train + f_test > 1 + 1e-12:
        raise ValueError(f"fractions must be positive and sum to at most 1, got {fractions}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, b in enumerate(beats):
        by_label.setdefault(b.label, []).append(i)
    train_idx, test_idx = [], []
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        rng.shuffle(idx)
        n = len(idx)
        n_train = min(int(np.floor(f_train * n + 0.5)), n)
        n_test = min(int(np.floor(f_test * n + 0.5)), n - n_train)
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:n_train + n_test].tolist())
    return [beats[i] for i in sorted(train_idx)], [beats[i] for i in sorted(test_idx)]
