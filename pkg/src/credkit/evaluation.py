"""Scoring: metrics, threshold sweeps, catalog matching and the SNR benchmark.

Undefined ratios (zero denominators) are ``None`` in Python and the
string ``undefined`` in CSV output.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dsp, synth
from .detectors import (
    DEFAULT_MERGE_GAP_S,
    DEFAULT_MIN_DUR_S,
    DEFAULT_TR,
    Detection,
    StaLtaConfig,
    cred_detect,
    extract_events,
    ncc_3c,
    pick_peaks,
    sta_lta_ratio,
    triggers,
)
from .errors import MisalignedInputs
from .waveio import Catalog, CatalogEvent

UNDEFINED = "undefined"
EARTHQUAKE = "earthquake"
NOISE = "noise"
DEFAULT_TOL_S = 2.0
FRAME_HOP_S = dsp.STFT_HOP / dsp.TARGET_RATE

STALTA_GRID = tuple(float(v) for v in range(2, 11))
NCC_GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class Metrics:
    precision: float | None
    recall: float | None
    fscore: float | None


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Precision, recall and F-score; ``None`` where a denominator is zero.

    F is ``None`` if either input is undefined and 0 when both are 0.
    """
    p = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    r = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if p is None or r is None:
        f = None
    elif p + r == 0:
        f = 0.0
    else:
        f = 2.0 * p * r / (p + r)
    return Metrics(p, r, f)


def fmt(value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# window-level evaluation


def window_classify(prob, tr: float = DEFAULT_TR, min_dur_s: float = DEFAULT_MIN_DUR_S,
                    merge_gap_s: float = DEFAULT_MERGE_GAP_S,
                    frame_hop_s: float = FRAME_HOP_S) -> str:
    """``earthquake`` if the window's probabilities yield at least one event."""
    dets = extract_events(prob, frame_hop_s, tr, min_dur_s, merge_gap_s)
    return EARTHQUAKE if dets else NOISE


def _is_quake(label) -> bool:
    if isinstance(label, str):
        if label not in (EARTHQUAKE, NOISE):
            raise ValueError(f"unknown window label {label!r}")
        return label == EARTHQUAKE
    return bool(label)


def confusion(predicted: Iterable, truth: Iterable) -> ConfusionMatrix:
    tp = fp = fn = tn = 0
    for p, t in zip(predicted, truth):
        p, t = _is_quake(p), _is_quake(t)
        tp += p and t
        fp += p and not t
        fn += t and not p
        tn += not p and not t
    return ConfusionMatrix(tp, fp, fn, tn)


@dataclass
class PrCurve:
    thresholds: list[float]
    precision: list[float | None]
    recall: list[float | None]
    fscore: list[float | None]
    confusions: list[ConfusionMatrix] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.thresholds)
        if not (len(self.precision) == len(self.recall) == len(self.fscore) == n):
            raise MisalignedInputs("curve columns differ in length")

    @property
    def best_threshold(self) -> float | None:
        """Threshold with the highest F-score (first one on ties)."""
        best, best_f = None, -1.0
        for t, f in zip(self.thresholds, self.fscore):
            if f is not None and f > best_f:
                best, best_f = t, f
        return best


def pr_sweep(probs: Sequence, labels: Sequence, thresholds: Sequence[float],
             min_dur_s: float = DEFAULT_MIN_DUR_S, merge_gap_s: float = DEFAULT_MERGE_GAP_S,
             frame_hop_s: float = FRAME_HOP_S) -> PrCurve:
    """Window-level precision/recall/F at each threshold."""
    if len(probs) != len(labels):
        raise MisalignedInputs(f"{len(probs)} probability windows but {len(labels)} labels")
    truth = [_is_quake(l) for l in labels]
    out = PrCurve([], [], [], [])
    for tr in thresholds:
        pred = [window_classify(p, tr, min_dur_s, merge_gap_s, frame_hop_s) for p in probs]
        cm = confusion(pred, truth)
        m = metrics(cm)
        out.thresholds.append(float(tr))
        out.precision.append(m.precision)
        out.recall.append(m.recall)
        out.fscore.append(m.fscore)
        out.confusions.append(cm)
    return out


# ---------------------------------------------------------------------------
# catalog matching


def event_interval(ev) -> tuple[float, float]:
    """Labelled span of a catalog event (P to P + 3 (S - P)) or a truth record."""
    if isinstance(ev, CatalogEvent):
        return ev.p_time, ev.p_time + 3.0 * (ev.s_time - ev.p_time)
    return ev.start_s, ev.end_s


@dataclass
class MatchResult:
    matched: list[tuple[Detection, object]]
    new: list[Detection]
    missed: list[object]


def match_catalog(dets: Sequence[Detection], cat, tol_s: float = DEFAULT_TOL_S) -> MatchResult:
    """Greedy one-to-one matching in time order.

    Each detection, earliest first, takes the earliest still-unmatched
    event whose span overlaps the detection widened by ``tol_s``.
    """
    events = list(cat.events if isinstance(cat, Catalog) else cat)
    spans = [event_interval(ev) for ev in events]
    used = [False] * len(events)
    matched, new = [], []
    for d in sorted(dets, key=lambda d: (d.start_s, d.end_s)):
        hit = None
        for k, (a, b) in enumerate(spans):
            if not used[k] and d.overlaps(a, b, tol_s):
                hit = k
                break
        if hit is None:
            new.append(d)
        else:
            used[hit] = True
            matched.append((d, events[hit]))
    missed = [ev for ev, u in zip(events, used) if not u]
    return MatchResult(matched, new, missed)


# ---------------------------------------------------------------------------
# scene scoring


@dataclass(frozen=True)
class SceneScore:
    """Detector outcome on one scene."""

    n_events: int
    n_fakes: int
    detected_events: int
    true_dets: int
    false_dets: int

    @property
    def detection_rate(self) -> float:
        return self.detected_events / self.n_events if self.n_events else 0.0

    @property
    def fp_rate(self) -> float:
        return min(1.0, self.false_dets / self.n_fakes) if self.n_fakes else 0.0

    @property
    def precision(self) -> float | None:
        total = self.true_dets + self.false_dets
        return self.true_dets / total if total else None

    def __add__(self, other: "SceneScore") -> "SceneScore":
        return SceneScore(*(a + b for a, b in zip(
            (self.n_events, self.n_fakes, self.detected_events, self.true_dets, self.false_dets),
            (other.n_events, other.n_fakes, other.detected_events, other.true_dets, other.false_dets))))


def score_scene(dets: Sequence[Detection], truth: Sequence[synth.TruthRecord],
                tol_s: float = DEFAULT_TOL_S) -> SceneScore:
    """An earthquake counts as detected if any detection overlaps it (within ``tol_s``).

    A detection is false when it overlaps no earthquake: either it sits
    on a Ricker impostor or on nothing at all.
    """
    quakes = [r for r in truth if r.kind == synth.EARTHQUAKE]
    n_fakes = sum(r.kind == synth.NONEARTHQUAKE for r in truth)
    starts = np.array([d.start_s for d in dets]) - tol_s
    ends = np.array([d.end_s for d in dets]) + tol_s
    detected = sum(bool(np.any((starts <= r.end_s) & (r.start_s <= ends))) for r in quakes)
    true_dets = 0
    for d in dets:
        if any(d.overlaps(r.start_s, r.end_s, tol_s) for r in quakes):
            true_dets += 1
    return SceneScore(len(quakes), n_fakes, detected, true_dets, len(dets) - true_dets)


# ---------------------------------------------------------------------------
# sensitivity benchmark


@dataclass(frozen=True)
class MethodRates:
    detection_rate: float
    false_positive_rate: float
    precision: float | None
    false_positives: float  # median over seeds
    score: SceneScore


@dataclass
class SweepResult:
    snr_db: float
    methods: dict[str, MethodRates]
    per_seed: dict[str, list[SceneScore]] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchSpec:
    scene: synth.SceneSpec = synth.SceneSpec()
    seeds: tuple[int, ...] = (0, 1, 2)
    n_templates: int = 2
    tol_s: float = DEFAULT_TOL_S
    cred_tr: float = DEFAULT_TR
    stalta: StaLtaConfig = StaLtaConfig()
    stalta_grid: tuple[float, ...] = STALTA_GRID
    ncc_grid: tuple[float, ...] = NCC_GRID


def snr_levels(start: float = -2.0, stop: float = 20.0, step: float = 2.0) -> list[float]:
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def worker_count() -> int:
    raw = os.environ.get("CREDKIT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass
class _SceneRun:
    """Detections for one (seed, SNR) scene; baselines keyed by threshold."""

    truth: list
    cred: list[Detection]
    stalta: dict[float, list[Detection]]
    template: dict[float, list[Detection]]


def _stalta_sweep(z: np.ndarray, rate: float, base: StaLtaConfig, grid) -> dict[float, list[Detection]]:
    ratio = sta_lta_ratio(z, rate, base)
    out = {}
    for on in grid:
        off = min(base.trigger_off, 0.5 * on)
        dets = []
        for a, b in triggers(ratio, on, off):
            b = max(b, a + 1)
            dets.append(Detection(a / rate, b / rate, float(ratio[a:b].max()), "stalta"))
        out[on] = dets
    return out


def _template_sweep(data: np.ndarray, templates: list[np.ndarray], rate: float,
                    grid) -> dict[float, list[Detection]]:
    scores = [(ncc_3c(data, t), t.shape[1]) for t in templates]
    out = {}
    for thr in grid:
        dets = []
        for score, m in scores:
            dets += [Detection(i / rate, (i + m) / rate, float(score[i]), "template")
                     for i in pick_peaks(score, thr, m)]
        out[thr] = sorted(dets, key=lambda d: d.start_s)
    return out


def _run_scene(model, clean: synth.SyntheticScene, templates, snr: float, noise_seed: int,
               spec: BenchSpec) -> _SceneRun:
    noisy = synth.add_scene_noise(clean, snr, noise_seed)
    pre = dsp.preprocess(noisy.trace)
    data = pre.data
    rate = pre.sampling_rate
    cred_dets = cred_detect(model, pre, tr=spec.cred_tr) if model is not None else []
    stalta = _stalta_sweep(data[2], rate, spec.stalta, spec.stalta_grid)
    template = _template_sweep(data, templates, rate, spec.ncc_grid)
    return _SceneRun(noisy.truth, cred_dets, stalta, template)


def _tune(runs: list[_SceneRun], attr: str, grid, tol_s: float) -> float:
    """Grid value with the best pooled precision; more true detections break ties."""
    best_key, best = None, None
    for value in grid:
        total = SceneScore(0, 0, 0, 0, 0)
        for run in runs:
            total = total + score_scene(getattr(run, attr)[value], run.truth, tol_s)
        p = total.precision
        key = (-1.0 if p is None else p, total.true_dets)
        if best_key is None or key > best_key:
            best_key, best = key, value
    return best


def sensitivity_bench(model, snr_list: Sequence[float], spec: BenchSpec = BenchSpec(),
                      workers: int | None = None,
                      progress: Callable[[str], None] | None = None) -> tuple[list[SweepResult], dict]:
    """Detection rate, false-positive rate and precision per method and SNR.

    For every seed a clean scene is built once and noised at each SNR.
    Baseline thresholds are tuned once over all levels and seeds, taking
    the grid value with the best pooled precision. Returns the per-level
    results and the chosen baseline settings.
    """
    if not snr_list:
        raise ValueError("need at least one SNR level")
    workers = workers or worker_count()
    jobs = []
    for seed in spec.seeds:
        families = synth.event_families(spec.scene.n_families, spec.scene.rate, seed)
        clean = synth.build_scene(spec.scene, seed, families)
        templates = [dsp.bandpass(f.data, spec.scene.rate) for f in families[:spec.n_templates]]
        for k, snr in enumerate(snr_list):
            jobs.append((seed, k, clean, templates, float(snr), seed * 1000 + k))

    def run(job):
        seed, k, clean, templates, snr, noise_seed = job
        out = _run_scene(model, clean, templates, snr, noise_seed, spec)
        if progress is not None:
            progress(f"seed {seed} snr {snr:g} dB")
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, jobs))
    else:
        runs = [run(j) for j in jobs]

    tuned = {
        "stalta_trigger_on": _tune(runs, "stalta", spec.stalta_grid, spec.tol_s),
        "template_threshold": _tune(runs, "template", spec.ncc_grid, spec.tol_s),
    }
    results = []
    for k, snr in enumerate(snr_list):
        level = [r for (seed, kk, *_), r in zip(jobs, runs) if kk == k]
        per_method = {
            "cred": [score_scene(r.cred, r.truth, spec.tol_s) for r in level],
            "stalta": [score_scene(r.stalta[tuned["stalta_trigger_on"]], r.truth, spec.tol_s)
                       for r in level],
            "template": [score_scene(r.template[tuned["template_threshold"]], r.truth, spec.tol_s)
                         for r in level],
        }
        methods = {}
        for name, scores in per_method.items():
            total = SceneScore(0, 0, 0, 0, 0)
            for s in scores:
                total = total + s
            methods[name] = MethodRates(
                total.detection_rate, total.fp_rate, total.precision,
                float(np.median([s.false_dets for s in scores])), total,
            )
        results.append(SweepResult(float(snr), methods, per_method))
    return results, tuned


# ---------------------------------------------------------------------------
# CSV outputs


def _write(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_pr_curve(curve: PrCurve, path) -> None:
    _write(path, ["threshold", "precision", "recall", "fscore"],
           zip(curve.thresholds, curve.precision, curve.recall, curve.fscore))


def write_confusion(cm: ConfusionMatrix, path, threshold: float | None = None) -> None:
    m = metrics(cm)
    _write(path, ["threshold", "tp", "fp", "fn", "tn", "precision", "recall", "fscore"],
           [[threshold, cm.tp, cm.fp, cm.fn, cm.tn, m.precision, m.recall, m.fscore]])


def write_sweep(results: Sequence[SweepResult], path) -> None:
    rows = []
    for res in results:
        for name, r in res.methods.items():
            rows.append([res.snr_db, name, r.detection_rate, r.false_positive_rate, r.precision])
    _write(path, ["snr_db", "method", "detection_rate", "fp_rate", "precision"], rows)


def magnitude_histogram(magnitudes: Iterable[float], width: float = 0.5) -> list[tuple[float, int]]:
    """Counts per magnitude bin; each bin is labelled by its lower edge."""
    counts: dict[int, int] = {}
    for mag in magnitudes:
        k = math.floor(mag / width + 1e-9)
        counts[k] = counts.get(k, 0) + 1
    return [(round(k * width, 6), counts[k]) for k in sorted(counts)]


def write_magnitude_hist(hist: Sequence[tuple[float, int]], path) -> None:
    _write(path, ["bin", "count"], hist)


def read_csv_columns(path) -> dict[str, list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list[str]] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols
