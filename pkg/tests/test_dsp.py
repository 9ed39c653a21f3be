import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credkit import dsp, errors
from credkit.waveio import Waveform3C


def sine(freq, rate=100.0, seconds=60.0, amp=1.0):
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def gain_db(freq, rate=100.0):
    x = sine(freq, rate)
    y = dsp.bandpass(x, rate)
    core = slice(len(x) // 4, 3 * len(x) // 4)  # skip filter transients
    return 20 * np.log10(np.max(np.abs(y[core])) / np.max(np.abs(x[core])))


def test_bandpass_rejects_low_and_passes_mid():
    assert gain_db(0.2) <= -26.0
    assert abs(gain_db(10.0)) <= 1.0


def test_bandpass_falls_back_to_highpass_near_nyquist():
    sos = dsp.butter_bandpass_sos(90.0)
    y = dsp.bandpass(sine(30.0, 90.0), 90.0)
    assert sos.shape[0] == 2  # order-4 high-pass
    assert np.isfinite(y).all()


def test_resample_halves_exactly():
    x = np.random.default_rng(0).standard_normal((3, 2 * 3001))
    assert dsp.resample(x, 200.0, 100.0).shape == (3, 3001)


def test_resample_identity_and_odd_ratio():
    x = np.arange(10.0)
    np.testing.assert_array_equal(dsp.resample(x, 100.0), x)
    assert dsp.resample(np.zeros(2500), 250.0).shape == (1000,)


def test_preprocess_normalises_and_demeans():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((3, 6000)) * [[1.0], [3.0], [0.5]] + 7.0
    w = dsp.preprocess(Waveform3C.from_array(data, 200.0))
    assert w.sampling_rate == 100.0
    assert w.npts == 3000
    assert np.max(np.abs(w.data)) == pytest.approx(1.0)
    assert abs(w.data.mean()) < 0.05


def test_preprocess_low_rate():
    with pytest.raises(errors.SamplingRateTooLow):
        dsp.preprocess(Waveform3C.from_array(np.ones((3, 100)), 50.0))


def test_preprocess_all_zero_warns():
    w = Waveform3C.from_array(np.zeros((3, 500)), 100.0)
    with pytest.warns(dsp.AllZeroTraceWarning):
        out = dsp.preprocess(w)
    assert not out.data.any()


def test_spectrogram_geometry():
    w = Waveform3C.from_array(np.random.default_rng(2).standard_normal((3, 3000)), 100.0)
    spec = dsp.stft_spectrogram(w)
    assert spec.values.shape == (147, 41, 3)
    assert spec.frame_hop_s == pytest.approx(0.2)
    assert spec.bin_hz == pytest.approx(1.25)
    assert dsp.stft_spectrogram(w, normalize=True).values.max() == pytest.approx(1.0)


def test_stft_too_short():
    with pytest.raises(errors.TraceTooShort):
        dsp.stft_magnitude(np.zeros(79))


def test_hann_is_periodic():
    w = dsp.hann(80)
    assert w[0] == 0.0
    assert w[40] == pytest.approx(1.0)
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)


def brute_force_dft_mag(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return np.abs((frame * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)) / np.sqrt(n)


def test_stft_matches_brute_force_dft():
    x = np.random.default_rng(3).standard_normal(400)
    mag = dsp.stft_magnitude(x)
    win = dsp.hann()
    for f in range(mag.shape[0]):
        seg = x[f * 20:f * 20 + 80] * win
        np.testing.assert_allclose(mag[f], brute_force_dft_mag(seg), atol=1e-12)


def stft_energy_ratio(x):
    mag = dsp.stft_magnitude(x)
    weights = dsp.onesided_weights()
    spec_energy = float((mag ** 2 * weights).sum())
    # overlapping periodic Hann windows at hop N/4 sum (squared) to 1.5 N / hop
    win = dsp.hann()
    norm = (win ** 2).sum() / dsp.STFT_HOP
    return spec_energy / (norm * float((x ** 2).sum()))


def test_parseval_energy_within_two_percent():
    x = np.random.default_rng(4).standard_normal(20000)
    assert abs(stft_energy_ratio(x) - 1.0) <= 0.02


def test_label_examples():
    spec = dsp.LabelVector(np.zeros(147), 0.2)
    lab = dsp.make_label(2.0, 4.0, spec)  # span [2, 8)
    assert lab.values.sum() == 30
    assert lab.values[10] == 1 and lab.values[9] == 0 and lab.values[39] == 1 and lab.values[40] == 0
    clipped = dsp.make_label(20.0, 28.0, spec)  # end clipped at 29.4 s
    assert clipped.values[100:].all() and not clipped.values[:100].any()
    assert not dsp.make_label(None, None, spec).values.any()


@pytest.mark.parametrize("p, s", [(5.0, 5.0), (5.0, 4.0), (-1.0, 2.0), (None, 3.0)])
def test_label_requires_s_after_p(p, s):
    with pytest.raises(errors.SNotAfterP):
        dsp.make_label(p, s, dsp.LabelVector(np.zeros(10), 0.2))


def label_oracle(p, s, frames, hop):
    end = min(p + 3 * (s - p), frames * hop)
    return np.array([1.0 if p <= f * hop < end else 0.0 for f in range(frames)])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 29.0), st.floats(0.01, 15.0))
def test_label_matches_oracle(p, d):
    spec = dsp.LabelVector(np.zeros(147), 0.2)
    np.testing.assert_array_equal(dsp.make_label(p, p + d, spec).values,
                                  label_oracle(p, p + d, 147, 0.2))


def test_spectrogram_file_roundtrip(tmp_path):
    values = np.random.default_rng(5).random((147, 41, 3)).astype(np.float32)
    spec = dsp.Spectrogram(values, 0.2, 1.25)
    dsp.save_spectrogram(spec, tmp_path / "a.spec")
    back = dsp.load_spectrogram(tmp_path / "a.spec")
    np.testing.assert_array_equal(back.values, values)
    assert back.frame_hop_s == pytest.approx(0.2) and back.bin_hz == pytest.approx(1.25)
    lab = dsp.LabelVector(np.arange(147) % 2, 0.2)
    dsp.save_label(lab, tmp_path / "a.label")
    np.testing.assert_array_equal(dsp.load_label(tmp_path / "a.label").values, lab.values)


def test_spectrogram_file_errors(tmp_path):
    spec = dsp.Spectrogram(np.ones((4, 3, 3), np.float32), 0.2, 1.25)
    path = tmp_path / "a.spec"
    dsp.save_spectrogram(spec, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(errors.CorruptFile):
        dsp.load_spectrogram(path)
    path.write_bytes(blob[:4] + (99).to_bytes(2, "little") + blob[6:])
    with pytest.raises(errors.VersionMismatch):
        dsp.load_spectrogram(path)
    with pytest.raises(errors.CorruptFile):
        dsp.load_label(tmp_path / "a.spec")
