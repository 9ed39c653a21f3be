import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credkit import errors, synth
from credkit.waveio import Waveform3C


def unit_wave(n=1000, seed=0):
    data = np.random.default_rng(seed).standard_normal((3, n))
    return Waveform3C.from_array(data / np.abs(data).max(), 100.0)


class TestRicker:
    def test_centre_and_support(self):
        r = synth.ricker(5.0, 100.0, 1.3)
        half = math.floor(3 / 5.0 * 100)
        assert r.size == 2 * half + 1
        assert r[half] == 1.3

    def test_symmetric(self):
        r = synth.ricker(7.3, 100.0, 0.9)
        np.testing.assert_allclose(r, r[::-1], atol=1e-12, rtol=0)

    def test_zero_crossing(self):
        f, rate = 2.0, 1000.0
        t0 = 1 / (math.pi * f * math.sqrt(2))
        r = synth.ricker(f, rate)
        centre = r.size // 2
        k = int(round(t0 * rate))
        assert abs(r[centre + k]) < 5e-3
        assert r[centre + k - 5] > 0 > r[centre + k + 5]

    def test_zero_amplitude(self):
        assert not synth.ricker(3.0, 100.0, 0.0).any()

    def test_tail_is_small(self):
        r = synth.ricker(4.0, 100.0)
        assert abs(r[0]) < 1e-4 and abs(r[-1]) < 1e-4

    @pytest.mark.parametrize("f, rate", [(50.0, 100.0), (60.0, 100.0), (0.0, 100.0)])
    def test_nyquist(self, f, rate):
        with pytest.raises(errors.FrequencyAboveNyquist):
            synth.ricker(f, rate)


class TestSnr:
    def test_examples(self):
        assert synth.snr_db(2.0, 2.0) == 0.0
        assert synth.snr_db(10.0, 1.0) == pytest.approx(20.0)
        assert synth.snr_db(10 ** -0.1, 1.0) == pytest.approx(-2.0)

    @pytest.mark.parametrize("s, n", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_non_positive(self, s, n):
        with pytest.raises(errors.NonPositivePeak):
            synth.snr_db(s, n)

    def test_noise_realises_target(self):
        clean = unit_wave()
        for target in (-2.0, 0.0, 7.5, 20.0):
            noisy = synth.noise_for_snr(clean, target, seed=3)
            noise_peak = np.abs(noisy.data - clean.data).max()
            assert synth.snr_db(1.0, noise_peak) == pytest.approx(target, abs=1e-9)

    def test_twenty_db_on_unit_peak(self):
        noisy = synth.noise_for_snr(unit_wave(), 20.0, seed=9)
        assert np.abs(noisy.data - unit_wave().data).max() == pytest.approx(0.1, abs=1e-12)

    def test_deterministic(self):
        a = synth.noise_for_snr(unit_wave(), 5.0, seed=1).data
        b = synth.noise_for_snr(unit_wave(), 5.0, seed=1).data
        c = synth.noise_for_snr(unit_wave(), 5.0, seed=2).data
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_all_zero_clean(self):
        zero = Waveform3C.from_array(np.zeros((3, 10)), 100.0)
        with pytest.raises(errors.AllZeroClean):
            synth.noise_for_snr(zero, 10.0, seed=0)
        # an explicit reference peak makes a silent trace acceptable
        out = synth.noise_for_snr(zero, 20.0, seed=0, signal_peak=1.0)
        assert np.abs(out.data).max() == pytest.approx(0.1)

    def test_gaussian_moments(self):
        z = synth.gaussian(synth.philox(0), (200_000,))
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01


class TestScene:
    def test_empty(self):
        scene = synth.assemble_scene([], [], 60.0, 1.0, seed=0)
        assert scene.truth == []
        assert not scene.trace.data.any()
        assert scene.trace.duration == 60.0

    def test_single_event(self):
        ev = np.ones((3, 3000))
        scene = synth.assemble_scene([ev], [], 60.0, 0.0, seed=5)
        (rec,) = scene.truth
        assert rec.kind == synth.EARTHQUAKE
        assert rec.end_s - rec.start_s == pytest.approx(30.0)

    def test_does_not_fit(self):
        with pytest.raises(errors.DoesNotFit):
            synth.assemble_scene([np.ones((3, 3000))] * 2, [], 60.0, 1.0, seed=0)

    def test_large_scene_counts(self):
        rng = synth.philox(0)
        events = [np.ones((3, 200))] * 500
        fakes = synth.ricker_fakes(500, 100.0, rng)
        scene = synth.assemble_scene(events, fakes, 8.4 * 3600, 2.0, seed=1)
        assert len(scene.truth) == 1000
        assert len(scene.earthquakes()) == 500

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 6), st.integers(0, 6), st.floats(0.0, 3.0), st.integers(0, 2**32))
    def test_placement_invariants(self, n_ev, n_fk, gap, seed):
        rng = np.random.default_rng(seed)
        events = [rng.standard_normal((3, int(rng.integers(50, 400)))) for _ in range(n_ev)]
        fakes = [synth.ricker(float(rng.uniform(2, 20)), 100.0) for _ in range(n_fk)]
        scene = synth.assemble_scene(events, fakes, 120.0, gap, seed=seed)
        truth = scene.truth
        assert len(truth) == n_ev + n_fk
        for a, b in zip(truth, truth[1:]):
            assert b.start_s - a.end_s >= gap - 1e-9
        assert all(0 <= r.start_s < r.end_s <= 120.0 for r in truth)
        # every earthquake insert appears verbatim at its recorded offset
        quake_records = [r for r in truth if r.kind == synth.EARTHQUAKE]
        data = scene.trace.data
        found = 0
        for ev in events:
            for r in quake_records:
                i = int(round(r.start_s * 100))
                seg = data[:, i:i + ev.shape[1]]
                if seg.shape == ev.shape and np.array_equal(seg, ev):
                    found += 1
                    break
        assert found == n_ev

    def test_fakes_identical_on_all_channels(self):
        scene = synth.assemble_scene([], [synth.ricker(5.0, 100.0)], 10.0, 0.0, seed=2)
        d = scene.trace.data
        assert np.array_equal(d[0], d[1]) and np.array_equal(d[1], d[2])

    def test_deterministic(self):
        spec = synth.SceneSpec(n_events=4, n_fakes=4, duration_s=300.0)
        a = synth.build_scene(spec, seed=3)
        b = synth.build_scene(spec, seed=3)
        assert a.trace.data.tobytes() == b.trace.data.tobytes()
        assert a.truth == b.truth

    def test_scene_noise_uses_unit_reference(self):
        spec = synth.SceneSpec(n_events=3, n_fakes=3, duration_s=200.0)
        clean = synth.build_scene(spec, seed=1)
        noisy = synth.add_scene_noise(clean, 6.0, seed=4)
        peak = np.abs(noisy.trace.data - clean.trace.data).max()
        assert synth.snr_db(1.0, peak) == pytest.approx(6.0, abs=1e-9)
        assert noisy.snr_db == 6.0


def test_synthetic_event_shape():
    data, sp = synth.synthetic_event(100.0, synth.philox(0), sp_s=4.0)
    assert sp == 4.0
    assert data.shape == (3, int(round(12.5 * 100)))
    assert np.abs(data).max() == pytest.approx(1.0)
    # the coda has died down well before the labelled end
    assert np.abs(data[:, -50:]).max() < 0.05


def test_training_windows_labels_fit():
    windows = synth.training_windows(6, 4, seed=0)
    kinds = [w.kind for w in windows]
    assert kinds.count(synth.EARTHQUAKE) == 6
    assert kinds.count("ricker") == 2 and kinds.count("noise") == 2
    for w in windows:
        assert w.waveform.npts == 3000
        if w.kind == synth.EARTHQUAKE:
            assert 0 < w.p_s < w.s_s and w.p_s + 3 * (w.s_s - w.p_s) <= 30.0


def test_truth_roundtrip(tmp_path):
    truth = [synth.TruthRecord(synth.EARTHQUAKE, 1.0, 5.5, 1.0),
             synth.TruthRecord(synth.NONEARTHQUAKE, 9.25, 10.0, 0.7)]
    synth.write_truth(truth, tmp_path / "t.csv")
    assert synth.read_truth(tmp_path / "t.csv") == truth


def test_truth_record_invariants():
    with pytest.raises(ValueError):
        synth.TruthRecord(synth.EARTHQUAKE, 2.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        synth.TruthRecord("tremor", 1.0, 2.0, 1.0)
