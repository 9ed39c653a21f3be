"""Preprocessing, spectrograms and frame labels.

The chain applied to every trace is: remove the mean, zero-phase
Butterworth band-pass (1-45 Hz), polyphase resampling to 100 Hz and a
joint normalisation by the largest absolute amplitude of the three
components. Spectrograms use a periodic Hann window of 80 samples, hop
20 and nfft 80, so a 30 s window at 100 Hz gives 147 frames x 41 bins.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import (
    CorruptFile,
    SamplingRateTooLow,
    SNotAfterP,
    TraceTooShort,
    VersionMismatch,
)
from .waveio import Waveform3C

TARGET_RATE = 100.0
FREQMIN = 1.0
FREQMAX = 45.0
FILTER_ORDER = 4
MIN_INPUT_RATE = 90.0

STFT_WINDOW = 80
STFT_HOP = 20
STFT_NFFT = 80


class AllZeroTraceWarning(UserWarning):
    """Normalisation skipped because every sample is zero."""


# ---------------------------------------------------------------------------
# preprocessing

def butter_bandpass_sos(rate: float, freqmin: float = FREQMIN,
                        freqmax: float = FREQMAX, order: int = FILTER_ORDER) -> np.ndarray:
    """Second-order sections of the band-pass used by :func:`preprocess`.

    When ``freqmax`` is not below Nyquist the upper edge is meaningless
    and a high-pass is returned instead.
    """
    nyquist = 0.5 * rate
    if freqmax < 0.99 * nyquist:
        return signal.butter(order, [freqmin, freqmax], btype="bandpass", output="sos", fs=rate)
    return signal.butter(order, freqmin, btype="highpass", output="sos", fs=rate)


def bandpass(data: np.ndarray, rate: float, freqmin: float = FREQMIN,
             freqmax: float = FREQMAX, order: int = FILTER_ORDER) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    sos = butter_bandpass_sos(rate, freqmin, freqmax, order)
    data = np.asarray(data, dtype=np.float64)
    padlen = min(3 * (2 * len(sos) + 1), data.shape[-1] - 1)
    return signal.sosfiltfilt(sos, data, axis=-1, padlen=max(padlen, 0))


def resample(data: np.ndarray, rate: float, target_rate: float = TARGET_RATE) -> np.ndarray:
    """Rational-ratio polyphase resampling along the last axis."""
    if rate == target_rate:
        return np.array(data, dtype=np.float64)
    ratio = Fraction(target_rate / rate).limit_denominator(1000)
    return signal.resample_poly(np.asarray(data, dtype=np.float64),
                                ratio.numerator, ratio.denominator, axis=-1)


def normalize(data: np.ndarray) -> tuple[np.ndarray, bool]:
    """Divide by the peak absolute amplitude over all channels.

    Returns the scaled array and ``False`` if the input was all zeros
    (in which case it is returned unchanged).
    """
    peak = float(np.max(np.abs(data))) if data.size else 0.0
    if peak == 0.0:
        return data, False
    return data / peak, True


def preprocess(w: Waveform3C, target_rate: float = TARGET_RATE,
               freqmin: float = FREQMIN, freqmax: float = FREQMAX) -> Waveform3C:
    """Demean, band-pass, resample to ``target_rate`` and normalise.

    An all-zero result is returned unnormalised with an
    :class:`AllZeroTraceWarning`.
    """
    if w.sampling_rate < MIN_INPUT_RATE:
        raise SamplingRateTooLow(
            f"sampling rate {w.sampling_rate} Hz is below {MIN_INPUT_RATE} Hz"
        )
    data = w.data
    data = data - data.mean(axis=1, keepdims=True)
    if data.shape[1] > 1:
        data = bandpass(data, w.sampling_rate, freqmin, freqmax)
    data = resample(data, w.sampling_rate, target_rate)
    data, scaled = normalize(data)
    if not scaled:
        warnings.warn(f"{w.station_id}: all-zero trace left unnormalised",
                      AllZeroTraceWarning, stacklevel=2)
    return Waveform3C.from_array(data, target_rate, w.station_id, w.start_time)


# ---------------------------------------------------------------------------
# spectrograms

@dataclass(frozen=True, eq=False)
class Spectrogram:
    """STFT magnitudes, shape ``(frames, bins, channels)``."""

    values: np.ndarray
    frame_hop_s: float
    bin_hz: float

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise TraceTooShort(f"bad spectrogram shape {self.values.shape}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class LabelVector:
    values: np.ndarray
    frame_hop_s: float

    @property
    def frames(self) -> int:
        return int(self.values.size)


def hann(n: int = STFT_WINDOW) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_frame_count(npts: int, window: int = STFT_WINDOW, hop: int = STFT_HOP) -> int:
    if npts < window:
        return 0
    return (npts - window) // hop + 1


def stft_magnitude(x: np.ndarray, window: int = STFT_WINDOW, hop: int = STFT_HOP,
                   nfft: int = STFT_NFFT) -> np.ndarray:
    """One-sided STFT magnitude of a 1-D signal, shape ``(frames, nfft//2+1)``.

    Scaled by ``1/sqrt(nfft)`` so that, with DC and Nyquist counted once
    and the other bins twice, the squared magnitudes of a frame sum to
    the energy of the windowed segment.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < window:
        raise TraceTooShort(f"trace of {x.size} samples is shorter than the {window}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    spec = np.fft.rfft(frames * hann(window), n=nfft, axis=-1)
    return np.abs(spec) / np.sqrt(nfft)


def stft_spectrogram(w: Waveform3C, normalize: bool = False) -> Spectrogram:
    """Per-channel magnitude spectrogram of a (preprocessed) waveform.

    With ``normalize=True`` the values are divided by their maximum
    (skipped when that maximum is zero), which is the scaling used for
    network input.
    """
    values = np.stack([stft_magnitude(ch) for ch in w.data], axis=-1)
    if normalize:
        values = normalize_values(values)
    return Spectrogram(values, STFT_HOP / w.sampling_rate, w.sampling_rate / STFT_NFFT)


def normalize_values(values: np.ndarray) -> np.ndarray:
    peak = float(values.max()) if values.size else 0.0
    return values / peak if peak > 0 else values


def normalize_spectrogram(spec: Spectrogram) -> Spectrogram:
    return Spectrogram(normalize_values(spec.values), spec.frame_hop_s, spec.bin_hz)


def onesided_weights(nfft: int = STFT_NFFT) -> np.ndarray:
    """Bin weights that turn one-sided power into two-sided power."""
    weights = np.full(nfft // 2 + 1, 2.0)
    weights[0] = 1.0
    if nfft % 2 == 0:
        weights[-1] = 1.0
    return weights


# ---------------------------------------------------------------------------
# labels

def make_label(p_time_s: float | None, s_time_s: float | None, spec) -> LabelVector:
    """Binary frame labels: 1 from P to ``P + 3 (S - P)``, clipped at the window end.

    ``spec`` only needs ``frames`` and ``frame_hop_s``. A frame belongs
    to the event when its start time lies in the half-open interval.
    Passing ``None`` for both times gives an all-zero (noise) label.
    """
    n = spec.frames
    hop = spec.frame_hop_s
    if p_time_s is None and s_time_s is None:
        return LabelVector(np.zeros(n, dtype=np.float64), hop)
    if p_time_s is None or s_time_s is None or not (0.0 <= p_time_s < s_time_s):
        raise SNotAfterP(f"need 0 <= P < S, got P={p_time_s}, S={s_time_s}")
    end = min(p_time_s + 3.0 * (s_time_s - p_time_s), n * hop)
    starts = np.arange(n) * hop
    values = ((starts >= p_time_s) & (starts < end)).astype(np.float64)
    return LabelVector(values, hop)


# ---------------------------------------------------------------------------
# binary container
#
# header (16 bytes): b"CRSP", u16 version, u16 kind, f32 frame_hop_s, f32 bin_hz
# then u32 ndim, ndim x u32 dims, then float32 values (frame-major), all little-endian.

_MAGIC = b"CRSP"
_VERSION = 1
_KIND_SPECTROGRAM = 1
_KIND_LABEL = 2
_HEADER = struct.Struct("<4sHHff")


def _pack(kind: int, values: np.ndarray, hop: float, bin_hz: float) -> bytes:
    dims = values.shape
    head = _HEADER.pack(_MAGIC, _VERSION, kind, hop, bin_hz)
    head += struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    return head + np.ascontiguousarray(values, dtype="<f4").tobytes()


def _unpack(blob: bytes, kind: int) -> tuple[np.ndarray, float, float]:
    if len(blob) < _HEADER.size + 4:
        raise CorruptFile("file too short for header")
    magic, version, got_kind, hop, bin_hz = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC or got_kind != kind:
        raise CorruptFile("bad magic or record kind")
    if version != _VERSION:
        raise VersionMismatch(f"format version {version}, expected {_VERSION}")
    (ndim,) = struct.unpack_from("<I", blob, _HEADER.size)
    offset = _HEADER.size + 4
    if len(blob) < offset + 4 * ndim:
        raise CorruptFile("truncated dimensions")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    count = int(np.prod(dims))
    if len(blob) != offset + 4 * count:
        raise CorruptFile("payload size does not match dimensions")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims)
    return values.astype(np.float32), float(hop), float(bin_hz)


def save_spectrogram(spec: Spectrogram, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack(_KIND_SPECTROGRAM, spec.values, spec.frame_hop_s, spec.bin_hz))


def load_spectrogram(path) -> Spectrogram:
    with open(path, "rb") as fh:
        values, hop, bin_hz = _unpack(fh.read(), _KIND_SPECTROGRAM)
    return Spectrogram(values, hop, bin_hz)


def save_label(label: LabelVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack(_KIND_LABEL, label.values, label.frame_hop_s, 0.0))


def load_label(path) -> LabelVector:
    with open(path, "rb") as fh:
        values, hop, _ = _unpack(fh.read(), _KIND_LABEL)
    return LabelVector(values, hop)
