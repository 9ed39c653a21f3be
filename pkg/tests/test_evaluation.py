import numpy as np
import pytest

from credkit import errors, synth
from credkit import evaluation as E
from credkit.detectors import Detection
from credkit.waveio import CatalogEvent


class TestMetrics:
    def test_example(self):
        m = E.metrics(E.ConfusionMatrix(tp=8, fp=2, fn=2, tn=5))
        assert (m.precision, m.recall, m.fscore) == pytest.approx((0.8, 0.8, 0.8))

    def test_undefined(self):
        assert E.metrics(E.ConfusionMatrix(fn=3)).precision is None
        assert E.metrics(E.ConfusionMatrix(fp=3)).recall is None
        assert E.metrics(E.ConfusionMatrix(tn=3)) == E.Metrics(None, None, None)
        assert E.metrics(E.ConfusionMatrix(fp=1, fn=1)).fscore == 0.0

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            E.ConfusionMatrix(tp=-1)

    def test_confusion_from_labels(self):
        cm = E.confusion(["earthquake", "noise", "earthquake", "noise"], [True, True, False, False])
        assert cm == E.ConfusionMatrix(1, 1, 1, 1)
        with pytest.raises(ValueError):
            E.confusion(["quake"], [True])

    def test_fmt(self):
        assert E.fmt(None) == "undefined" and E.fmt(0.5) == "0.5" and E.fmt(3) == "3"


def window(frames_on, n=147, value=0.5):
    p = np.zeros(n)
    p[:frames_on] = value
    return p


class TestWindowSweep:
    def test_classify_boundary(self):
        assert E.window_classify(window(5)) == "earthquake"  # exactly 1.0 s
        assert E.window_classify(window(4)) == "noise"
        assert E.window_classify(window(20, value=0.105)) == "noise"

    def test_sweep_matches_brute_force(self):
        rng = np.random.default_rng(0)
        probs = [rng.random(147) * rng.random() for _ in range(30)]
        labels = [bool(rng.random() < 0.5) for _ in range(30)]
        thresholds = [0.1, 0.3, 0.5, 0.7, 0.9]
        curve = E.pr_sweep(probs, labels, thresholds)
        for i, tr in enumerate(thresholds):
            tp = fp = fn = 0
            for p, y in zip(probs, labels):
                pred = E.window_classify(p, tr=tr)
                tp += pred == "earthquake" and y
                fp += pred == "earthquake" and not y
                fn += pred == "noise" and y
            assert curve.confusions[i].tp == tp and curve.confusions[i].fp == fp
            assert curve.confusions[i].fn == fn
            expect = E.metrics(E.ConfusionMatrix(tp, fp, fn, 0))
            assert curve.precision[i] == expect.precision and curve.recall[i] == expect.recall

    def test_best_threshold(self):
        curve = E.PrCurve([0.1, 0.2, 0.3], [0.5, 1.0, None], [1.0, 1.0, 0.0], [0.6, 1.0, None])
        assert curve.best_threshold == 0.2

    def test_misaligned(self):
        with pytest.raises(errors.MisalignedInputs):
            E.pr_sweep([np.zeros(10)], [True, False], [0.5])


def det(a, b, method="cred"):
    return Detection(a, b, 0.9, method)


class TestCatalogMatching:
    def test_bracketing_example(self):
        # label span of this event is [10, 16)
        ev = CatalogEvent("e1", 10.0, 12.0, 1.5)
        res = E.match_catalog([det(17.0, 19.0), det(30.0, 32.0)], [ev])
        assert [m[1] for m in res.matched] == [ev]
        assert res.new == [det(30.0, 32.0)] and res.missed == []
        res = E.match_catalog([det(18.5, 19.0)], [ev])
        assert res.missed == [ev]

    def test_partition_invariants(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            events = []
            for k in range(int(rng.integers(0, 6))):
                p = float(rng.uniform(0, 100))
                events.append(CatalogEvent(f"e{k}", p, p + float(rng.uniform(0.5, 3)), 1.0))
            dets = []
            for _ in range(int(rng.integers(0, 6))):
                a = float(rng.uniform(0, 100))
                dets.append(det(a, a + float(rng.uniform(0.2, 5))))
            res = E.match_catalog(dets, events)
            assert len(res.matched) + len(res.new) == len(dets)
            assert len(res.matched) + len(res.missed) == len(events)
            assert len({id(e) for _, e in res.matched}) == len(res.matched)


class TestSceneScore:
    truth = [synth.TruthRecord(synth.EARTHQUAKE, 10.0, 20.0, 1.0),
             synth.TruthRecord(synth.EARTHQUAKE, 50.0, 60.0, 1.0),
             synth.TruthRecord(synth.NONEARTHQUAKE, 80.0, 81.0, 1.0),
             synth.TruthRecord(synth.NONEARTHQUAKE, 90.0, 91.0, 1.0)]

    def test_counts(self):
        dets = [det(11, 13), det(15, 19), det(80.2, 80.9), det(130, 131)]
        s = E.score_scene(dets, self.truth)
        assert (s.n_events, s.n_fakes, s.detected_events, s.true_dets, s.false_dets) == (2, 2, 1, 2, 2)
        assert s.detection_rate == 0.5 and s.fp_rate == 1.0 and s.precision == 0.5

    def test_tolerance(self):
        assert E.score_scene([det(21.5, 22.0)], self.truth).detected_events == 1
        assert E.score_scene([det(22.5, 23.0)], self.truth).detected_events == 0

    def test_empty(self):
        s = E.score_scene([], self.truth)
        assert s.precision is None and s.detection_rate == 0.0 and s.fp_rate == 0.0


def test_snr_levels():
    assert E.snr_levels() == [float(v) for v in range(-2, 21, 2)]
    assert len(E.snr_levels(-2, 20, 1)) == 23


def test_worker_count(monkeypatch):
    monkeypatch.setenv("CREDKIT_THREADS", "3")
    assert E.worker_count() == 3
    monkeypatch.setenv("CREDKIT_THREADS", "zero")
    assert E.worker_count() >= 1


def test_noise_free_bench_templates_find_everything():
    spec = E.BenchSpec(scene=synth.SceneSpec(n_events=4, n_fakes=4, duration_s=300.0, n_families=2),
                       seeds=(0,))
    results, tuned = E.sensitivity_bench(None, [40.0], spec, workers=1)
    (res,) = results
    assert res.methods["template"].detection_rate == 1.0
    assert res.methods["template"].false_positive_rate == 0.0
    assert res.methods["cred"].detection_rate == 0.0
    assert set(tuned) == {"stalta_trigger_on", "template_threshold"}


def test_csv_outputs(tmp_path):
    curve = E.PrCurve([0.5], [None], [0.0], [None])
    E.write_pr_curve(curve, tmp_path / "pr.csv")
    assert (tmp_path / "pr.csv").read_text() == "threshold,precision,recall,fscore\n0.5,undefined,0.0,undefined\n"
    E.write_confusion(E.ConfusionMatrix(1, 0, 0, 2), tmp_path / "c.csv", 0.11)
    cols = E.read_csv_columns(tmp_path / "c.csv")
    assert cols["tp"] == ["1"] and cols["precision"] == ["1.0"]


def test_magnitude_histogram():
    assert E.magnitude_histogram([1.0, 1.2, 1.5, 2.49, -0.1]) == [(-0.5, 1), (1.0, 2), (1.5, 1), (2.0, 1)]
