import numpy as np
import pytest
from hypothesis import given, strategies as st

from beatsynth.errors import AnnotationFormatError, DataError, Format212Error
from beatsynth.ingest import (
    Annotation, RawRecord, decode_format212, encode_format212, load_annotations_csv, load_record,
    read_dat, split_dataset, write_annotations_csv,
)
from beatsynth.signal import BeatSeries


def pack_frame(a: int, b: int) -> bytes:
    """Bit-level reference packer for one frame, written independently of the vectorized codec."""
    ua, ub = a % 4096, b % 4096
    return bytes([ua & 0xFF, (ua >> 8) | ((ub >> 8) << 4), ub & 0xFF])


@pytest.mark.parametrize("frame, expected", [
    (b"\x00\x00\x00", (0, 0)),
    (b"\x01\x00\x02", (1, 2)),
    (b"\xff\x0f\x00", (-1, 0)),
    (b"\x00\x08\x00", (-2048, 0)),
    (b"\xff\x77\xff", (2047, 2047)),
])
def test_decode_known_frames(frame, expected):
    a, b = decode_format212(frame, 2)
    assert (int(a[0]), int(b[0])) == expected
    assert pack_frame(*expected) == frame


def test_exhaustive_frame_round_trip():
    codes = np.arange(1 << 24, dtype=np.uint32)
    frames = np.stack([codes & 0xFF, (codes >> 8) & 0xFF, codes >> 16], axis=1).astype(np.uint8)
    raw = frames.tobytes()
    a, b = decode_format212(raw, 2 * len(codes))
    assert a.min() == -2048 and a.max() == 2047 and b.min() == -2048 and b.max() == 2047
    assert encode_format212(a, b) == raw


@given(st.lists(st.tuples(st.integers(-2048, 2047), st.integers(-2048, 2047)), max_size=50))
def test_encode_matches_reference_packer(pairs):
    a = np.array([p[0] for p in pairs], dtype=np.int64)
    b = np.array([p[1] for p in pairs], dtype=np.int64)
    assert encode_format212(a, b) == b"".join(pack_frame(x, y) for x, y in pairs)


def test_truncated_frame_reports_offset():
    with pytest.raises(Format212Error) as err:
        decode_format212(b"\x00\x00\x00\x01\x02", 4)
    assert err.value.offset == 3
    with pytest.raises(ValueError):
        decode_format212(b"\x00\x00\x00", 1)


def test_encode_rejects_out_of_range():
    with pytest.raises(ValueError):
        encode_format212([2048], [0])


def test_read_dat_and_partial_file(tmp_path):
    p = tmp_path / "r1.dat"
    p.write_bytes(encode_format212([10, -20, 400], [1, 2, 3]))
    rec = read_dat(p)
    assert rec.record_id == "r1" and rec.sampling_rate_hz == 360
    assert rec.channels[0].tolist() == [10, -20, 400]
    assert np.allclose(rec.lead_mv(), [0.05, -0.1, 2.0])
    p.write_bytes(p.read_bytes() + b"\x01")
    with pytest.raises(Format212Error):
        read_dat(p)


def test_raw_record_invariants():
    with pytest.raises(DataError):
        RawRecord("x", 0, [np.zeros(3)])
    with pytest.raises(DataError):
        RawRecord("x", 360, [np.zeros(3), np.zeros(4)])


def _csv(tmp_path, text):
    p = tmp_path / "ann.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_annotations_parse(tmp_path):
    assert load_annotations_csv(_csv(tmp_path, "sample,label\n")) == []
    anns = load_annotations_csv(_csv(tmp_path, "sample,label\n100,N\n250,L\n300,?\n"))
    assert anns == [Annotation(100, "N"), Annotation(250, "L"), Annotation(300, "?")]


def test_annotations_order_error_names_row(tmp_path):
    with pytest.raises(AnnotationFormatError, match="row 2") as err:
        load_annotations_csv(_csv(tmp_path, "sample,label\n250,N\n100,L\n"))
    assert err.value.row == 2
    with pytest.raises(AnnotationFormatError):
        load_annotations_csv(_csv(tmp_path, "idx,label\n1,N\n"))
    with pytest.raises(AnnotationFormatError, match="row 1"):
        load_annotations_csv(_csv(tmp_path, "sample,label\nx,N\n"))


def test_annotation_round_trip(tmp_path):
    anns = [Annotation(5, "N"), Annotation(9, "L")]
    write_annotations_csv(tmp_path / "a.csv", anns)
    assert load_annotations_csv(tmp_path / "a.csv") == anns


def test_load_record_checks_bounds(tmp_path):
    (tmp_path / "r.dat").write_bytes(encode_format212(np.zeros(10, int), np.zeros(10, int)))
    write_annotations_csv(tmp_path / "r.csv", [Annotation(3, "N"), Annotation(10, "N")])
    with pytest.raises(DataError):
        load_record(tmp_path / "r.dat", tmp_path / "r.csv")
    write_annotations_csv(tmp_path / "r.csv", [Annotation(3, "N"), Annotation(9, "L")])
    assert len(load_record(tmp_path / "r.dat", tmp_path / "r.csv").annotations) == 2


def _beats(labels):
    return [BeatSeries(np.array([0.0, float(i)]), lab, "r", i) for i, lab in enumerate(labels)]


def test_split_cardinality_and_determinism():
    beats = _beats("N" * 10)
    tr, te = split_dataset(beats, 7, (0.8, 0.2))
    assert len(tr) == 8 and len(te) == 2
    assert not {b.r_peak for b in tr} & {b.r_peak for b in te}
    tr2, te2 = split_dataset(beats, 7, (0.8, 0.2))
    assert [b.r_peak for b in tr] == [b.r_peak for b in tr2] and [b.r_peak for b in te] == [b.r_peak for b in te2]


def test_split_rejects_bad_input():
    with pytest.raises(ValueError):
        split_dataset(_beats("NN"), 0, (0.9, 0.2))
    with pytest.raises(DataError):
        split_dataset([], 0, (0.5, 0.5))


@given(st.text("NLV", min_size=1, max_size=60), st.integers(0, 1000),
       st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_split_is_stratified_partition(labels, seed, f_train, f_test):
    f_test = min(f_test, 1.0 - f_train)
    if f_test <= 0:
        return
    beats = _beats(labels)
    tr, te = split_dataset(beats, seed, (f_train, f_test))
    ids_tr, ids_te = {b.r_peak for b in tr}, {b.r_peak for b in te}
    assert not ids_tr & ids_te
    if f_train + f_test == 1.0:
        assert ids_tr | ids_te == set(range(len(beats)))
    for lab in set(labels):
        n = labels.count(lab)
        assert abs(sum(b.label == lab for b in tr) - f_train * n) <= 1.0 + 1e-9
