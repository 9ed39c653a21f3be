"""The CRED detector: architecture, training loop, inference and model files.

Layout of the network (input is a batch of normalised spectrograms
``(N, frames, bins, 3)``):

* for each stage: a stride-2 3x3 convolution to the stage's filter
  count, followed by ``res_blocks_per_stage`` pre-activation residual
  blocks;
* a closing batch norm + ReLU, then the feature volume is flattened to
  a sequence ``(N, T', bins' * filters)``;
* a time-distributed projection to ``2 * lstm_hidden`` features,
  ``bilstm_blocks`` residual bidirectional LSTM blocks and one
  forward-only LSTM;
* a ReLU dense layer and a sigmoid output unit per time step.

Three stride-2 stages turn 147 input frames into ``T' = 19`` outputs.
"""
from __future__ import annotations

import copy
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .errors import (
    CorruptFile,
    EmptyDataset,
    GeometryMismatch,
    InvalidConfig,
    VersionMismatch,
)
from .nn import layers as L
from .nn.functional import bce_loss
from .nn.optim import AdamState, adam_step


@dataclass(frozen=True)
class CredConfig:
    input_frames: int = 147
    input_bins: int = 41
    channels: int = 3
    conv_stage_filters: tuple[int, ...] = (8, 16, 32)
    res_blocks_per_stage: int = 2
    lstm_hidden: int = 24
    bilstm_blocks: int = 2
    dense_hidden: int = 64
    kernel: int = 3
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "conv_stage_filters", tuple(int(f) for f in self.conv_stage_filters))
        counts = [self.input_frames, self.input_bins, self.channels, self.lstm_hidden,
                  self.dense_hidden, self.kernel]
        if any(int(c) < 1 for c in counts) or not self.conv_stage_filters:
            raise InvalidConfig(f"all sizes must be positive: {self}")
        if any(f < 1 for f in self.conv_stage_filters):
            raise InvalidConfig("filter counts must be positive")
        for a, b in zip(self.conv_stage_filters, self.conv_stage_filters[1:]):
            if b != 2 * a:
                raise InvalidConfig(f"conv_stage_filters must double per stage: {self.conv_stage_filters}")
        if self.res_blocks_per_stage < 0 or self.bilstm_blocks < 0:
            raise InvalidConfig("block counts must be non-negative")

    @property
    def output_frames(self) -> int:
        n = self.input_frames
        for _ in self.conv_stage_filters:
            n = -(-n // 2)
        return n

    @property
    def output_bins(self) -> int:
        n = self.input_bins
        for _ in self.conv_stage_filters:
            n = -(-n // 2)
        return n

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CredConfig":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                raise CorruptFile(f"config is missing {f.name!r}")
            raw = values[f.name]
            if f.name == "conv_stage_filters":
                kwargs[f.name] = tuple(int(v) for v in raw.split(",") if v)
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


PRESETS = {
    "desk": CredConfig(),
    # full-size network, about 270k trainable parameters
    "paper": CredConfig(lstm_hidden=56),
}


class CredModel:
    """A built CRED network plus its configuration."""

    def __init__(self, config: CredConfig, net: L.Sequential):
        self.config = config
        self.net = net

    # -- parameter access -------------------------------------------------
    def named_params(self):
        return list(self.net.named_params())

    def params(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.net.named_params()}

    def grads(self) -> dict[str, np.ndarray]:
        return {name: g for name, _, g in self.net.named_params()}

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.net.named_buffers())

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for _, p, _ in self.net.named_params()))

    @property
    def dtype(self):
        return next(iter(self.params().values())).dtype

    @property
    def output_frames(self) -> int:
        return self.config.output_frames

    def astype(self, dtype) -> "CredModel":
        self.net.astype(dtype)
        return self

    def copy(self) -> "CredModel":
        return copy.deepcopy(self)

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed by name."""
        out = {k: v.copy() for k, v in self.params().items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in list(self.params().items()) + list(self.buffers().items()):
            arr[...] = state[name]

    # -- computation ------------------------------------------------------
    def check_geometry(self, batch: np.ndarray) -> None:
        cfg = self.config
        expected = (cfg.input_frames, cfg.input_bins, cfg.channels)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise GeometryMismatch(
                f"expected spectrogram batch (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {batch.shape}"
            )

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        batch = np.asarray(batch, dtype=self.dtype)
        self.check_geometry(batch)
        return self.net.forward(batch, train)

    def backward(self, dprob: np.ndarray) -> None:
        self.net.backward(dprob)

    def predict(self, batch: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference-mode probabilities ``(N, T')`` computed in chunks."""
        batch = np.asarray(batch)
        self.check_geometry(batch)
        if len(batch) == 0:
            return np.zeros((0, self.output_frames), dtype=self.dtype)
        out = [self.forward(batch[i:i + batch_size], train=False)
               for i in range(0, len(batch), batch_size)]
        return np.concatenate(out, axis=0)


def build_model(cfg: CredConfig | None = None, dtype=np.float32) -> CredModel:
    """Construct a CRED network with deterministic initialisation from ``cfg.seed``."""
    cfg = cfg or CredConfig()
    rng = np.random.default_rng(cfg.seed)
    k = (cfg.kernel, cfg.kernel)
    layers: list[L.Layer] = []
    names: list[str] = []
    c_in = cfg.channels
    for s, filters in enumerate(cfg.conv_stage_filters):
        layers.append(L.Conv2D(c_in, filters, k, (2, 2), rng=rng, bias=False))
        names.append(f"stage{s}.down")
        for r in range(cfg.res_blocks_per_stage):
            layers.append(L.preact_block(filters, k, rng=rng, bias=False))
            names.append(f"stage{s}.res{r}")
        c_in = filters
    layers += [L.BatchNorm(c_in), L.ReLU(), L.ToSequence()]
    names += ["post_bn", "post_relu", "to_sequence"]

    seq_width = cfg.output_bins * c_in
    width = 2 * cfg.lstm_hidden
    if cfg.bilstm_blocks:
        layers.append(L.Dense(seq_width, width, rng))
        names.append("seq_proj")
        for b in range(cfg.bilstm_blocks):
            layers.append(L.Residual(L.BiLSTM(width, cfg.lstm_hidden, rng=rng)))
            names.append(f"bilstm{b}")
    else:
        width = seq_width
    layers.append(L.LSTM(width, cfg.lstm_hidden, rng=rng))
    names.append("lstm")
    layers += [L.Dense(cfg.lstm_hidden, cfg.dense_hidden, rng), L.ReLU(),
               L.Dense(cfg.dense_hidden, 1, rng), L.Squeeze(), L.Sigmoid()]
    names += ["dense_hidden", "dense_relu", "dense_out", "squeeze", "sigmoid"]
    model = CredModel(cfg, L.Sequential(*layers, names=names))
    return model.astype(dtype)


def forward(m: CredModel, batch, mode: str = "infer") -> np.ndarray:
    """Per-step earthquake probabilities ``(N, T')`` for a spectrogram batch."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return m.forward(batch, train=mode == "train")


# ---------------------------------------------------------------------------
# resolution bridge between frames and network steps


def chunk_size(n_frames: int, n_steps: int) -> int:
    return -(-n_frames // n_steps)


def pool_labels(label, T_out: int) -> np.ndarray:
    """Max-pool a frame label (array or LabelVector) onto ``T_out`` steps.

    Frames are grouped into contiguous chunks of ``ceil(len / T_out)``.
    """
    values = np.asarray(getattr(label, "values", label))
    n = values.shape[-1]
    if T_out > n:
        raise GeometryMismatch(f"cannot pool {n} frames onto {T_out} steps")
    size = chunk_size(n, T_out)
    padded = np.zeros(values.shape[:-1] + (size * T_out,), dtype=values.dtype)
    padded[..., :n] = values
    return padded.reshape(values.shape[:-1] + (T_out, size)).max(axis=-1)


def upsample_steps(prob: np.ndarray, n_frames: int) -> np.ndarray:
    """Repeat each step's probability over the frames of its chunk."""
    prob = np.asarray(prob)
    size = chunk_size(n_frames, prob.shape[-1])
    return np.repeat(prob, size, axis=-1)[..., :n_frames]


# ---------------------------------------------------------------------------
# training


@dataclass
class WindowDataset:
    """Network inputs ``x`` (N, frames, bins, 3) and frame labels ``y`` (N, frames)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise GeometryMismatch("x and y differ in length")

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "WindowDataset":
        return WindowDataset(self.x[idx], self.y[idx])

    @property
    def window_labels(self) -> np.ndarray:
        return self.y.max(axis=1) > 0


def dataset_from_windows(windows) -> WindowDataset:
    """Preprocess labelled windows into network inputs and frame labels.

    Each item needs ``waveform``, ``p_s`` and ``s_s`` (both ``None`` for
    noise), as produced by :func:`credkit.synth.training_windows`.
    """
    xs, ys = [], []
    for item in windows:
        w = dsp.preprocess(item.waveform)
        spec = dsp.stft_spectrogram(w, normalize=True)
        xs.append(spec.values.astype(np.float32))
        ys.append(dsp.make_label(item.p_s, item.s_s, spec).values.astype(np.float32))
    if not xs:
        raise EmptyDataset("no windows given")
    return WindowDataset(np.stack(xs), np.stack(ys))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_accuracy: float
    val_accuracy: float
    train_mae: float
    val_mae: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    epochs_run: int = 0
    early_stop_epoch: int | None = None
    best_epoch: int | None = None

    def to_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 20
    seed: int = 42


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # batch norm needs two samples: fold a lone trailing sample into the previous batch
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def evaluate_loss(model: CredModel, data: WindowDataset, batch_size: int = 64):
    """Inference-mode ``(loss, accuracy, mae)`` against step-pooled labels."""
    prob = model.predict(data.x, batch_size).astype(np.float64)
    target = pool_labels(data.y, model.output_frames).astype(np.float64)
    loss, _ = bce_loss(prob, target)
    loss = float(loss)
    acc = float(np.mean((prob >= 0.5) == (target >= 0.5)))
    mae = float(np.mean(np.abs(prob - target)))
    return loss, acc, mae


def train(model: CredModel, train_set: WindowDataset, val_set: WindowDataset,
          hyper: TrainHyper = TrainHyper(),
          on_epoch: Callable[[EpochRecord], None] | None = None,
          stop_when: Callable[[EpochRecord], bool] | None = None):
    """Fit ``model`` with Adam on binary cross-entropy.

    Stops early once validation loss has not improved for
    ``hyper.patience`` epochs (or when ``stop_when`` returns true) and
    restores the parameters of the best validation epoch. ``model`` is
    updated in place and also returned.
    """
    report = TrainReport()
    if hyper.epochs <= 0:
        return model, report
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if len(train_set) < 2:
        raise EmptyDataset("need at least two training windows for batch norm")
    rng = np.random.Generator(np.random.Philox(hyper.seed))
    dtype = model.dtype
    targets = pool_labels(train_set.y, model.output_frames).astype(dtype)
    params = model.params()
    grads = model.grads()
    state = AdamState(alpha=hyper.lr)
    best_loss = math.inf
    best_state = model.state()
    since_best = 0
    for epoch in range(1, hyper.epochs + 1):
        total_loss = total_correct = total_abs = 0.0
        count = 0
        for idx in _batches(len(train_set), hyper.batch_size, rng):
            x = train_set.x[idx].astype(dtype, copy=False)
            y = targets[idx]
            model.net.zero_grad()
            prob = model.forward(x, train=True)
            loss, dprob = bce_loss(prob, y)
            model.backward(dprob)
            adam_step(params, grads, state)
            total_loss += float(loss) * y.size
            total_correct += float(np.sum((prob >= 0.5) == (y >= 0.5)))
            total_abs += float(np.sum(np.abs(prob - y)))
            count += y.size
        val_loss, val_acc, val_mae = evaluate_loss(model, val_set)
        record = EpochRecord(epoch, total_loss / count, val_loss, total_correct / count,
                             val_acc, total_abs / count, val_mae)
        report.records.append(record)
        report.epochs_run = epoch
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = model.state()
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        if since_best >= hyper.patience or (stop_when is not None and stop_when(record)):
            if epoch < hyper.epochs:
                report.early_stop_epoch = epoch
            break
    model.load_state(best_state)
    return model, report


# ---------------------------------------------------------------------------
# model files
#
# b"CRED", u16 version, u32 config length, config text (utf-8 key=value
# lines), float32 tensors (parameters then buffers, declaration order),
# u32 CRC-32 of everything before it. All little-endian.

MODEL_MAGIC = b"CRED"
MODEL_VERSION = 1


def model_bytes(m: CredModel) -> bytes:
    cfg = m.config.to_text().encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(cfg)), cfg]
    for _, arr in list(m.params().items()) + list(m.buffers().items()):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_model(m: CredModel, path) -> None:
    """Write ``m``; parameters are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(model_bytes(m))


def model_from_bytes(blob: bytes) -> CredModel:
    head = struct.Struct("<4sHI")
    if len(blob) < head.size + 4 or blob[:4] != MODEL_MAGIC:
        raise CorruptFile("not a CRED model file")
    _, version, cfg_len = head.unpack_from(blob, 0)
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {MODEL_VERSION}")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptFile("checksum mismatch (truncated or corrupted file)")
    try:
        cfg = CredConfig.from_text(payload[head.size:head.size + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError, InvalidConfig) as exc:
        raise CorruptFile(f"unreadable config block: {exc}") from None
    model = build_model(cfg, dtype=np.float32)
    offset = head.size + cfg_len
    for _, arr in list(model.params().items()) + list(model.buffers().items()):
        nbytes = arr.size * 4
        if offset + nbytes > len(payload):
            raise CorruptFile("tensor data shorter than the config implies")
        arr[...] = np.frombuffer(payload, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(payload):
        raise CorruptFile("trailing bytes after tensor data")
    return model


def load_model(path) -> CredModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
