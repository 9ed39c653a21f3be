"""Event detectors: STA/LTA, template matching and the CRED sliding window.

All detectors return :class:`Detection` lists sorted by start time.
Probability streams are turned into events by :func:`extract_events`.
Frames at or above a fixed ``floor`` form candidate groups, and groups
closer than ``merge_gap_s`` are joined. Each group then yields at most
one detection, spanning its frames ``>= tr``, if that span lasts at
least ``min_dur_s``. Because the groups do not depend on ``tr``, raising
the threshold can only shrink or drop detections, never split one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from . import dsp
from .errors import (
    ConfigError,
    GeometryMismatch,
    MalformedRow,
    TemplateTooLong,
    TraceTooShort,
)
from .waveio import Waveform3C, _check_exists, segment_windows

METHODS = ("cred", "stalta", "template")
DETECTION_HEADER = ["method", "start_s", "end_s", "peak_score"]

DEFAULT_TR = 0.11
DEFAULT_MIN_DUR_S = 1.0
DEFAULT_MERGE_GAP_S = 0.5
DEFAULT_FLOOR = 0.1


@dataclass(frozen=True)
class Detection:
    start_s: float
    end_s: float
    peak_score: float
    method: str

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError(f"detection must have end_s > start_s: {self}")
        if not math.isfinite(self.peak_score):
            raise ValueError(f"peak_score must be finite: {self}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def overlaps(self, start: float, end: float, tol: float = 0.0) -> bool:
        return self.start_s - tol <= end and start <= self.end_s + tol


# ---------------------------------------------------------------------------
# STA/LTA


@dataclass(frozen=True)
class StaLtaConfig:
    sta_s: float = 1.0
    lta_s: float = 30.0
    trigger_on: float = 4.0
    trigger_off: float = 1.5

    def __post_init__(self):
        if not 0 < self.sta_s < self.lta_s:
            raise ConfigError(f"need 0 < sta_s < lta_s, got {self.sta_s}, {self.lta_s}")
        if not self.trigger_off < self.trigger_on:
            raise ConfigError(
                f"trigger_off ({self.trigger_off}) must be below trigger_on ({self.trigger_on})"
            )


def sta_lta_ratio(trace: np.ndarray, rate: float, cfg: StaLtaConfig = StaLtaConfig()) -> np.ndarray:
    """Ratio of trailing mean energies; both windows end at the current sample.

    Samples before the long window is full, and samples where the long
    window holds no energy, get ratio 0.
    """
    x = np.asarray(trace, dtype=np.float64)
    nsta = max(1, int(round(cfg.sta_s * rate)))
    nlta = max(1, int(round(cfg.lta_s * rate)))
    if x.size <= nlta:
        raise TraceTooShort(f"trace of {x.size} samples is not longer than the {nlta}-sample LTA window")
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(nlta - 1, x.size)
    sta = (csum[idx + 1] - csum[idx + 1 - nsta]) / nsta
    lta = (csum[idx + 1] - csum[idx + 1 - nlta]) / nlta
    ratio = np.zeros(x.size)
    # guard against cancellation leaving a tiny negative or zero LTA
    good = lta > 1e-30 * max(1.0, float(csum[-1]))
    ratio[idx[good]] = np.maximum(sta[good], 0.0) / lta[good]
    return ratio


def triggers(ratio: np.ndarray, on: float, off: float) -> list[tuple[int, int]]:
    """``[start, stop)`` sample intervals of an on/off trigger."""
    out = []
    i, n = 0, ratio.size
    above = np.flatnonzero(ratio >= on)
    while True:
        k = np.searchsorted(above, i)
        if k >= above.size:
            break
        start = int(above[k])
        below = np.flatnonzero(ratio[start:] <= off)
        stop = start + int(below[0]) if below.size else n
        out.append((start, stop))
        i = stop
    return out


def sta_lta(trace, rate: float, cfg: StaLtaConfig = StaLtaConfig()) -> list[Detection]:
    """Energy STA/LTA detections on a single channel."""
    ratio = sta_lta_ratio(trace, rate, cfg)
    dets = []
    for start, stop in triggers(ratio, cfg.trigger_on, cfg.trigger_off):
        stop = max(stop, start + 1)
        dets.append(Detection(start / rate, stop / rate, float(ratio[start:stop].max()), "stalta"))
    return dets


# ---------------------------------------------------------------------------
# template matching


def ncc(trace: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Sliding normalised cross-correlation of a 1-D template, one value per lag.

    Lags where either window is (numerically) constant get 0.
    """
    x = np.asarray(trace, dtype=np.float64)
    t = np.asarray(template, dtype=np.float64)
    m = t.size
    t = t - t.mean()
    t_norm = math.sqrt(float(np.dot(t, t)))
    nlag = x.size - m + 1
    if t_norm == 0.0:
        return np.zeros(nlag)
    num = sps.fftconvolve(x, t[::-1], mode="valid")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    csum2 = np.concatenate([[0.0], np.cumsum(x * x)])
    s1 = csum[m:] - csum[:-m]
    s2 = csum2[m:] - csum2[:-m]
    var = s2 - s1 * s1 / m
    scale = max(float(np.max(np.abs(x))), 1e-300) ** 2 * m
    good = var > 1e-10 * scale
    out = np.zeros(nlag)
    out[good] = num[good] / (np.sqrt(var[good]) * t_norm)
    return np.clip(out, -1.0, 1.0)


def ncc_3c(trace, template) -> np.ndarray:
    trace = np.atleast_2d(np.asarray(trace, dtype=np.float64))
    template = np.atleast_2d(np.asarray(template, dtype=np.float64))
    if trace.shape[0] != template.shape[0]:
        raise GeometryMismatch("trace and template have different channel counts")
    if template.shape[1] >= trace.shape[1]:
        raise TemplateTooLong(
            f"template of {template.shape[1]} samples is not shorter than the {trace.shape[1]}-sample trace"
        )
    return np.mean([ncc(x, t) for x, t in zip(trace, template)], axis=0)


def pick_peaks(score: np.ndarray, threshold: float, min_sep: int) -> list[int]:
    """Greedy non-maximum suppression: highest first, neighbours within ``min_sep`` dropped."""
    cand = np.flatnonzero(score >= threshold)
    if cand.size == 0:
        return []
    order = cand[np.argsort(-score[cand], kind="stable")]
    taken: list[int] = []
    blocked = np.zeros(score.size, dtype=bool)
    for i in order:
        if blocked[i]:
            continue
        taken.append(int(i))
        blocked[max(0, i - min_sep + 1):i + min_sep] = True
    return sorted(taken)


def template_match(trace, template, rate: float, threshold: float = 0.8) -> list[Detection]:
    """Detections where the channel-averaged NCC peaks above ``threshold``.

    ``trace`` and ``template`` are ``(channels, npts)`` arrays or
    :class:`Waveform3C`. Peaks are at least one template length apart.
    """
    if not 0 < threshold <= 1:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    trace = trace.data if isinstance(trace, Waveform3C) else trace
    template = template.data if isinstance(template, Waveform3C) else template
    score = ncc_3c(trace, template)
    m = np.atleast_2d(template).shape[1]
    return [Detection(i / rate, (i + m) / rate, float(score[i]), "template")
            for i in pick_peaks(score, threshold, m)]


# ---------------------------------------------------------------------------
# probability streams


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    if mask.size == 0:
        return []
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def support_groups(prob, frame_hop_s: float, merge_gap_s: float = DEFAULT_MERGE_GAP_S,
                   floor: float = DEFAULT_FLOOR) -> list[tuple[int, int]]:
    """Frame intervals above ``floor``, joined across gaps shorter than ``merge_gap_s``."""
    prob = np.asarray(prob, dtype=np.float64)
    groups: list[list[int]] = []
    tol = 1e-9
    for start, stop in _runs(prob >= floor):
        if groups and (start - groups[-1][1]) * frame_hop_s < merge_gap_s - tol:
            groups[-1][1] = stop
        else:
            groups.append([start, stop])
    return [(a, b) for a, b in groups]


def extract_events(prob, frame_hop_s: float, tr: float = DEFAULT_TR,
                   min_dur_s: float = DEFAULT_MIN_DUR_S,
                   merge_gap_s: float = DEFAULT_MERGE_GAP_S,
                   floor: float = DEFAULT_FLOOR, method: str = "cred",
                   offset_s: float = 0.0) -> list[Detection]:
    """Turn a frame-resolution probability stream into detections.

    A detection spans the first to the last frame ``>= tr`` inside one
    support group and is kept when it lasts at least ``min_dur_s``
    (inclusive). ``peak_score`` is the largest probability in the span.
    """
    prob = np.asarray(prob, dtype=np.float64)
    out = []
    for a, b in support_groups(prob, frame_hop_s, merge_gap_s, floor):
        hits = np.flatnonzero(prob[a:b] >= tr)
        if hits.size == 0:
            continue
        first, last = a + int(hits[0]), a + int(hits[-1]) + 1
        if (last - first) * frame_hop_s < min_dur_s - 1e-9:
            continue
        out.append(Detection(offset_s + first * frame_hop_s, offset_s + last * frame_hop_s,
                             float(prob[first:last].max()), method))
    return out


# ---------------------------------------------------------------------------
# CRED over continuous data


def window_inputs(w: Waveform3C, window_s: float = 30.0, stride_s: float = 15.0):
    """Normalised spectrograms of every window plus each window's frame offset."""
    windows = segment_windows(w, window_s, stride_s)
    hop = dsp.STFT_HOP
    xs, offsets = [], []
    for win in windows:
        spec = dsp.stft_spectrogram(win.waveform(), normalize=True)
        xs.append(spec.values.astype(np.float32))
        offsets.append(int(round(win.start_index / hop)))
    return np.stack(xs), offsets


def stitch(step_probs: np.ndarray, offsets: Sequence[int], n_frames: int) -> np.ndarray:
    """Upsample per-window step probabilities and combine them by per-frame maximum."""
    from .cred import upsample_steps

    total = max(offsets) + n_frames if len(offsets) else 0
    stream = np.zeros(total)
    for prob, off in zip(step_probs, offsets):
        frames = upsample_steps(prob, n_frames)
        np.maximum(stream[off:off + n_frames], frames, out=stream[off:off + n_frames])
    return stream


def cred_probability_stream(m, continuous: Waveform3C, window_s: float = 30.0,
                            stride_s: float = 15.0) -> tuple[np.ndarray, float]:
    """Stitched frame probabilities for a preprocessed trace, and the frame hop."""
    if continuous.sampling_rate != dsp.TARGET_RATE:
        raise GeometryMismatch(
            f"expected a trace preprocessed to {dsp.TARGET_RATE} Hz, got {continuous.sampling_rate} Hz"
        )
    x, offsets = window_inputs(continuous, window_s, stride_s)
    n_frames = x.shape[1]
    cfg = getattr(m, "config", None)
    if cfg is not None and (n_frames, x.shape[2]) != (cfg.input_frames, cfg.input_bins):
        raise GeometryMismatch(
            f"{window_s} s windows give {n_frames}x{x.shape[2]} spectrograms, model expects "
            f"{cfg.input_frames}x{cfg.input_bins}"
        )
    probs = np.asarray(m.predict(x), dtype=np.float64)
    return stitch(probs, offsets, n_frames), dsp.STFT_HOP / continuous.sampling_rate


def cred_detect(m, continuous: Waveform3C, window_s: float = 30.0, stride_s: float = 15.0,
                tr: float = DEFAULT_TR, min_dur_s: float = DEFAULT_MIN_DUR_S,
                merge_gap_s: float = DEFAULT_MERGE_GAP_S) -> list[Detection]:
    """Slide the model over a preprocessed 100 Hz trace and extract events.

    ``m`` only needs a ``predict(batch) -> (N, steps)`` method.
    """
    stream, hop = cred_probability_stream(m, continuous, window_s, stride_s)
    return extract_events(stream, hop, tr, min_dur_s, merge_gap_s, method="cred")


# ---------------------------------------------------------------------------
# CSV


def write_detections(dets: Sequence[Detection], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_HEADER)
        for d in dets:
            writer.writerow([d.method, repr(d.start_s), repr(d.end_s), repr(d.peak_score)])


def read_detections(path) -> list[Detection]:
    path = _check_exists(path)
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != DETECTION_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(DETECTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                method, start, end, score = row
                out.append(Detection(float(start), float(end), float(score), method.strip()))
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
    return out
