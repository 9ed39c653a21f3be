"""Semi-synthetic benchmark data.

Scenes are continuous three-component traces built from unit-peak
earthquake inserts, Ricker-wavelet impostors and white Gaussian noise
scaled to an exact peak-amplitude SNR. Gaussian samples come from a
Philox counter-based generator fed through the Box-Muller transform, so
any implementation using the same two pieces reproduces them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    AllZeroClean,
    DoesNotFit,
    FrequencyAboveNyquist,
    MalformedRow,
    NonPositivePeak,
)
from .waveio import Waveform3C, _check_exists

EARTHQUAKE = "earthquake"
NONEARTHQUAKE = "nonearthquake"
TRUTH_HEADER = ["kind", "start_s", "end_s", "peak_amplitude"]

RICKER_FREQ_RANGE = (1.0, 20.0)
RICKER_AMP_RANGE = (0.5, 1.5)


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples via the Box-Muller transform."""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps the log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)


# ---------------------------------------------------------------------------
# elementary signals


def ricker(peak_freq: float, sampling_rate: float, amplitude: float = 1.0) -> np.ndarray:
    """Ricker wavelet sampled on ``[-3/f, 3/f]`` with its peak at the centre sample."""
    if not peak_freq > 0 or not sampling_rate > 2.0 * peak_freq:
        raise FrequencyAboveNyquist(
            f"need 0 < peak_freq < rate/2, got f={peak_freq} Hz at {sampling_rate} Hz"
        )
    half = int(math.floor(3.0 / peak_freq * sampling_rate))
    k = np.arange(-half, half + 1)
    t = np.abs(k) / sampling_rate  # |k| keeps the two halves bitwise symmetric
    arg = (np.pi * peak_freq * t) ** 2
    return amplitude * (1.0 - 2.0 * arg) * np.exp(-arg)


def snr_db(signal_peak: float, noise_peak: float) -> float:
    """Peak-amplitude SNR in decibels."""
    if not signal_peak > 0 or not noise_peak > 0:
        raise NonPositivePeak(f"peaks must be positive, got {signal_peak}, {noise_peak}")
    return 20.0 * math.log10(signal_peak / noise_peak)


def noise_for_snr(clean: Waveform3C, target_snr_db: float, seed: int,
                  signal_peak: float | None = None) -> Waveform3C:
    """Add white Gaussian noise whose realised peak hits ``target_snr_db``.

    The noise is rescaled after generation so that its largest absolute
    sample (over all three channels) is exactly
    ``S_A * 10**(-target/20)``. ``S_A`` is the peak of ``clean`` unless
    ``signal_peak`` overrides it, as scenes built from unit-peak inserts do.
    """
    data = clean.data
    if signal_peak is None:
        signal_peak = float(np.max(np.abs(data)))
        if signal_peak == 0.0:
            raise AllZeroClean("cannot set an SNR against an all-zero trace")
    elif not signal_peak > 0:
        raise NonPositivePeak(f"signal_peak must be positive, got {signal_peak}")
    noise = gaussian(philox(seed), data.shape)
    raw_peak = float(np.max(np.abs(noise)))
    noise *= signal_peak * 10.0 ** (-target_snr_db / 20.0) / raw_peak
    return clean.replace_data(data + noise)


def synthetic_event(rate: float, rng: np.random.Generator, sp_s: float | None = None) -> tuple[np.ndarray, float]:
    """A crude local-earthquake record starting at its P onset.

    P is a short, high-frequency, vertically polarised burst; S follows
    after ``sp_s`` seconds with larger, lower-frequency horizontal
    motion and an exponentially decaying coda that has died away by
    ``P + 3 sp_s``. Returns the ``(3, npts)`` array normalised to unit
    peak and the S-P time used.
    """
    if sp_s is None:
        sp_s = float(rng.uniform(2.0, 6.0))
    npts = int(round((3.0 * sp_s + 0.5) * rate))
    t = np.arange(npts) / rate

    def band_noise(fc: float) -> np.ndarray:
        # sum of a few random-phase sinusoids around fc
        freqs = fc * rng.uniform(0.6, 1.5, 6)
        phases = rng.uniform(0.0, 2.0 * np.pi, (3, 6))
        return np.sin(2.0 * np.pi * freqs[None, :, None] * t + phases[..., None]).sum(axis=1)

    fp = float(rng.uniform(6.0, 14.0))
    fs = float(rng.uniform(2.0, 6.0))
    p_env = (1.0 - np.exp(-t / 0.05)) * np.exp(-t / (0.3 * sp_s))
    ts = np.clip(t - sp_s, 0.0, None)
    s_env = np.where(t >= sp_s, (1.0 - np.exp(-ts / 0.1)) * np.exp(-ts / (0.35 * sp_s)), 0.0)
    p_pol = np.array([0.4, 0.4, 1.0])[:, None]
    s_pol = np.array([1.0, 1.0, 0.5])[:, None]
    data = 0.4 * p_pol * p_env * band_noise(fp) + 1.0 * s_pol * s_env * band_noise(fs)
    taper = np.ones(npts)
    ramp = int(0.5 * rate)
    taper[-ramp:] = 0.5 + 0.5 * np.cos(np.linspace(0.0, np.pi, ramp))
    data *= taper
    return data / np.max(np.abs(data)), sp_s


@dataclass(frozen=True)
class EventInsert:
    """A unit-peak earthquake waveform whose first sample is the P onset."""

    data: np.ndarray
    sp_s: float
    family: int = 0

    @property
    def npts(self) -> int:
        return self.data.shape[1]


def event_families(n_families: int, rate: float, seed: int) -> list[EventInsert]:
    """Distinct master events; repeats of a master form a family."""
    rng = philox(seed)
    out = []
    for k in range(n_families):
        data, sp = synthetic_event(rate, rng)
        out.append(EventInsert(data, sp, k))
    return out


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class TruthRecord:
    kind: str
    start_s: float
    end_s: float
    peak_amplitude: float

    def __post_init__(self):
        if self.kind not in (EARTHQUAKE, NONEARTHQUAKE):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if not self.end_s > self.start_s:
            raise ValueError(f"truth record must have end_s > start_s: {self}")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    trace: Waveform3C
    truth: list[TruthRecord] = field(default_factory=list)
    snr_db: float = math.inf

    def earthquakes(self) -> list[TruthRecord]:
        return [r for r in self.truth if r.kind == EARTHQUAKE]

    def fakes(self) -> list[TruthRecord]:
        return [r for r in self.truth if r.kind == NONEARTHQUAKE]


def _as_3c(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return np.broadcast_to(arr, (3, arr.size))
    return arr


def assemble_scene(events: Sequence, fakes: Sequence, duration_s: float,
                   min_gap_s: float, seed: int, rate: float = 100.0) -> SyntheticScene:
    """Place inserts at random non-overlapping positions in a silent trace.

    ``events`` are waveforms (``Waveform3C``, ``EventInsert`` or
    ``(3, n)`` arrays); ``fakes`` are 1-D arrays copied onto all three
    channels. Inserts keep at least ``min_gap_s`` between each other.
    The placement is uniform over all valid configurations of the
    shuffled insert order (stars and bars over the free samples).
    """
    inserts = []
    for ev in events:
        data = ev.data if hasattr(ev, "data") else ev
        inserts.append((EARTHQUAKE, np.asarray(data, dtype=np.float64)))
    for fk in fakes:
        inserts.append((NONEARTHQUAKE, _as_3c(fk)))
    total = int(round(duration_s * rate))
    gap = int(math.ceil(min_gap_s * rate - 1e-9))
    used = sum(a.shape[1] for _, a in inserts) + gap * max(len(inserts) - 1, 0)
    if used > total:
        raise DoesNotFit(
            f"{len(inserts)} inserts need {used / rate:.1f} s with gaps, scene is {duration_s} s"
        )
    rng = philox(seed)
    order = rng.permutation(len(inserts))
    slack = total - used
    # sorted uniform cut points split the slack into len+1 free stretches
    cuts = np.sort(rng.integers(0, slack + 1, len(inserts)))
    free = np.diff(np.concatenate([[0], cuts]))
    trace = np.zeros((3, total))
    truth = []
    pos = 0
    for i, idx in enumerate(order):
        kind, arr = inserts[idx]
        pos += int(free[i])
        trace[:, pos:pos + arr.shape[1]] += arr
        peak = float(np.max(np.abs(arr)))
        truth.append(TruthRecord(kind, pos / rate, (pos + arr.shape[1]) / rate, peak))
        pos += arr.shape[1] + gap
    return SyntheticScene(Waveform3C.from_array(trace, rate), truth, math.inf)


def add_scene_noise(scene: SyntheticScene, target_snr_db: float, seed: int) -> SyntheticScene:
    """Noise the scene against the unit insert peak."""
    noisy = noise_for_snr(scene.trace, target_snr_db, seed, signal_peak=1.0)
    return SyntheticScene(noisy, list(scene.truth), float(target_snr_db))


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a benchmark scene (50 events and 50 impostors in about 50 minutes by default)."""

    n_events: int = 50
    n_fakes: int = 50
    duration_s: float = 3024.0
    min_gap_s: float = 5.0
    n_families: int = 5
    rate: float = 100.0


def ricker_fakes(n: int, rate: float, rng: np.random.Generator) -> list[np.ndarray]:
    lo, hi = RICKER_FREQ_RANGE
    a_lo, a_hi = RICKER_AMP_RANGE
    out = []
    for _ in range(n):
        f = float(rng.uniform(lo, hi))
        a = float(rng.uniform(a_lo, a_hi))
        out.append(ricker(f, rate, a))
    return out


def build_scene(spec: SceneSpec, seed: int, families: list[EventInsert] | None = None) -> SyntheticScene:
    """Noise-free scene: ``n_events`` repeats drawn from the family masters plus Ricker fakes."""
    rng = philox(seed)
    if families is None:
        families = event_families(spec.n_families, spec.rate, seed)
    picks = rng.integers(0, len(families), spec.n_events)
    events = [families[int(k)] for k in picks]
    fakes = ricker_fakes(spec.n_fakes, spec.rate, rng)
    return assemble_scene(events, fakes, spec.duration_s, spec.min_gap_s,
                          int(rng.integers(0, 2**63 - 1)), spec.rate)


# ---------------------------------------------------------------------------
# labelled training windows


@dataclass(frozen=True, eq=False)
class TrainingWindow:
    waveform: Waveform3C
    p_s: float | None
    s_s: float | None
    kind: str  # earthquake, noise or ricker


def training_windows(n_events: int, n_noise: int, seed: int, window_s: float = 30.0,
                     rate: float = 100.0, snr_range=(12.0, 20.0)) -> list[TrainingWindow]:
    """Event windows and noise windows for training the detector.

    Event windows hold one synthetic earthquake whose labelled span
    (P to P + 3 (S - P)) fits inside the window, noised to a random SNR
    in ``snr_range``. Half of the noise windows are pure Gaussian noise,
    the other half hold a Ricker impostor at a comparable SNR.
    """
    rng = philox(seed)
    npts = int(round(window_s * rate))
    out = []
    for _ in range(n_events):
        data, sp = synthetic_event(rate, rng)
        n = data.shape[1]
        p_idx = int(rng.integers(int(rate), max(npts - n, int(rate)) + 1))
        clean = np.zeros((3, npts))
        stop = min(npts, p_idx + n)
        clean[:, p_idx:stop] = data[:, :stop - p_idx]
        snr = float(rng.uniform(*snr_range))
        w = noise_for_snr(Waveform3C.from_array(clean, rate), snr,
                          int(rng.integers(0, 2**63 - 1)), signal_peak=1.0)
        p_s = p_idx / rate
        out.append(TrainingWindow(w, p_s, p_s + sp, EARTHQUAKE))
    for i in range(n_noise):
        clean = np.zeros((3, npts))
        kind = "noise"
        if i % 2 == 1:
            wav = ricker_fakes(1, rate, rng)[0]
            start = int(rng.integers(0, npts - wav.size + 1))
            clean[:, start:start + wav.size] = wav
            kind = "ricker"
        snr = float(rng.uniform(*snr_range))
        w = noise_for_snr(Waveform3C.from_array(clean, rate), snr,
                          int(rng.integers(0, 2**63 - 1)), signal_peak=1.0)
        out.append(TrainingWindow(w, None, None, kind))
    return out


# ---------------------------------------------------------------------------
# truth CSV


def write_truth(truth: Sequence[TruthRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for r in truth:
            writer.writerow([r.kind, repr(r.start_s), repr(r.end_s), repr(r.peak_amplitude)])


def read_truth(path) -> list[TruthRecord]:
    path = _check_exists(path)
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != TRUTH_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(TRUTH_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                kind, start, end, peak = row
                out.append(TruthRecord(kind.strip(), float(start), float(end), float(peak)))
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
    return out
