import numpy as np
import pytest

from credkit import errors, waveio
from credkit.waveio import Catalog, CatalogEvent, Waveform3C


def make_wave(n=500, rate=100.0, seed=0):
    data = np.random.default_rng(seed).standard_normal((3, n))
    return Waveform3C.from_array(data, rate, "ST01", 12.5)


def test_waveform_roundtrip_is_bit_exact(tmp_path):
    w = make_wave()
    path = tmp_path / "w.csv"
    waveio.write_waveform(w, path)
    back = waveio.read_waveform(path)
    assert back.station_id == "ST01"
    assert back.start_time == 12.5
    assert back.sampling_rate == 100.0
    np.testing.assert_array_equal(back.data, w.data)


def test_waveform_arrays_are_read_only():
    w = make_wave()
    with pytest.raises(ValueError):
        w.samples_e[0] = 1.0


def test_from_array_rejects_bad_shape():
    with pytest.raises(errors.UnequalChannelLengths):
        Waveform3C.from_array(np.zeros((2, 10)), 100.0)


def test_unequal_channel_lengths():
    with pytest.raises(errors.UnequalChannelLengths):
        Waveform3C("S", 0.0, 100.0, np.zeros(5), np.zeros(5), np.zeros(4))


@pytest.mark.parametrize("rate", [0.0, -5.0, float("nan")])
def test_non_positive_rate(rate):
    with pytest.raises(errors.NonPositiveSamplingRate):
        Waveform3C("S", 0.0, rate, np.zeros(5), np.zeros(5), np.zeros(5))


@pytest.mark.parametrize("header, exc", [
    ("station=A,start=0,rate=100", errors.MalformedHeader),
    ("#station=A,start=0", errors.MalformedHeader),
    ("#station=A,start=x,rate=100", errors.MalformedHeader),
    ("#station=A,start=0,rate=0", errors.NonPositiveSamplingRate),
])
def test_bad_headers(tmp_path, header, exc):
    path = tmp_path / "bad.csv"
    path.write_text(header + "\n1,2,3\n")
    with pytest.raises(exc):
        waveio.read_waveform(path)


def test_ragged_columns(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("#station=A,start=0,rate=100\n1,2,3\n4,5\n")
    with pytest.raises(errors.UnequalChannelLengths):
        waveio.read_waveform(path)


def test_non_numeric_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("#station=A,start=0,rate=100\n1,2,x\n")
    with pytest.raises(errors.MalformedRow):
        waveio.read_waveform(path)


def test_missing_file(tmp_path):
    with pytest.raises(errors.MissingFile):
        waveio.read_waveform(tmp_path / "nope.csv")


def test_catalog_sorted_and_unique():
    cat = Catalog((CatalogEvent("b", 10.0, 12.0), CatalogEvent("a", 1.0, 2.0)))
    assert [e.event_id for e in cat] == ["a", "b"]
    with pytest.raises(errors.DuplicateId):
        Catalog((CatalogEvent("a", 1.0, 2.0), CatalogEvent("a", 3.0, 4.0)))


def test_s_before_p():
    with pytest.raises(errors.SBeforeP):
        CatalogEvent("x", 5.0, 5.0)


def test_catalog_roundtrip(tmp_path):
    cat = Catalog((CatalogEvent("e1", 1.5, 3.25, 2.1), CatalogEvent("e2", 7.0, 9.0)))
    path = tmp_path / "cat.csv"
    waveio.write_catalog(cat, path)
    back = waveio.read_catalog(path)
    assert back == cat
    assert back.events[1].magnitude is None


def test_catalog_bad_row(tmp_path):
    path = tmp_path / "cat.csv"
    path.write_text("event_id,p_time,s_time,magnitude\ne1,1.0\n")
    with pytest.raises(errors.MalformedRow):
        waveio.read_catalog(path)


def test_segment_windows_count_and_offsets():
    w = make_wave(n=100 * 100)  # 100 s
    wins = waveio.segment_windows(w, 30.0, 15.0)
    assert len(wins) == 5  # floor((100 - 30) / 15) + 1
    assert [s.start_offset_s for s in wins] == [0.0, 15.0, 30.0, 45.0, 60.0]
    sub = wins[2].waveform()
    assert sub.npts == 3000
    assert sub.start_time == pytest.approx(w.start_time + 30.0)
    np.testing.assert_array_equal(sub.samples_z, w.samples_z[3000:6000])


def test_window_longer_than_trace():
    with pytest.raises(errors.WindowLongerThanTrace):
        waveio.segment_windows(make_wave(n=1000), 30.0, 15.0)
