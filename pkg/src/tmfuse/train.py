"""Toy training loop: AAM-softmax, Adam and a warm-up cosine schedule on synthetic speakers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .metrics import all_pair_trials, compute_eer
from .model import ModelConfig, ModelGraph, build_model, model_forward
from .tensor import ConfigError, Tape, Tensor, UsageError, backward, parameter


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class AamConfig:
    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if not 0 <= self.margin < math.pi / 2 or self.scale <= 0:
            raise ConfigError(f"need 0 <= margin < pi/2 and scale > 0, got {self}")


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    warmup_steps: int = 10
    lr_max: float = 1e-3
    lr_min: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(f"need 0 <= warmup_steps < total_steps, got {self}")
        if not 0 <= self.lr_min < self.lr_max:
            raise ConfigError(f"need 0 <= lr_min < lr_max, got {self}")


def cosine_lr(step: int, cfg: ScheduleConfig) -> float:
    """Linear warm-up to ``lr_max``, then cosine decay reaching ``lr_min`` on the last step."""
    if not 0 <= step < cfg.total_steps:
        raise UsageError(f"step {step} outside [0, {cfg.total_steps})")
    if step < cfg.warmup_steps:
        return cfg.lr_max * step / cfg.warmup_steps
    decay = cfg.total_steps - 1 - cfg.warmup_steps
    if decay == 0:
        return cfg.lr_max
    progress = (step - cfg.warmup_steps) / decay
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# synthetic speakers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (U, N, T)
    speakers: np.ndarray  # (U,)

    def __len__(self) -> int:
        return len(self.speakers)


def synth_dataset(n_speakers: int, n_utts: int, n: int = 80, t: int = 100, seed: int = 0,
                  noise: float = 1.0) -> Dataset:
    """Speakers are smooth random spectral band patterns; utterances add white noise."""
    if n_speakers < 2:
        raise DatasetError(f"need at least 2 speakers, got {n_speakers}")
    if n_utts < 1:
        raise DatasetError(f"need at least 1 utterance per speaker, got {n_utts}")
    rng = np.random.default_rng(seed)
    grid = np.arange(n)[None, :]
    feats, spk = [], []
    for s in range(n_speakers):
        centres = rng.uniform(0, n, size=4)
        widths = rng.uniform(2.0, max(2.0, n / 8.0), size=4)
        amps = rng.normal(0.0, 1.5, size=4)
        pattern = (amps[:, None] * np.exp(-0.5 * ((grid - centres[:, None]) / widths[:, None]) ** 2)).sum(0)
        for _ in range(n_utts):
            feats.append(pattern[:, None] + noise * rng.standard_normal((n, t)))
            spk.append(s)
    return Dataset(np.stack(feats), np.asarray(spk))


def split_dataset(data: Dataset, val_per_speaker: int) -> tuple[Dataset, Dataset]:
    """Hold out the last ``val_per_speaker`` utterances of every speaker."""
    train_idx, val_idx = [], []
    for s in np.unique(data.speakers):
        idx = np.flatnonzero(data.speakers == s)
        if len(idx) <= val_per_speaker:
            raise DatasetError(f"speaker {s} has {len(idx)} utterances, cannot hold out {val_per_speaker}")
        train_idx.extend(idx[:-val_per_speaker] if val_per_speaker else idx)
        val_idx.extend(idx[len(idx) - val_per_speaker :])
    tr, va = np.asarray(train_idx), np.asarray(val_idx, dtype=np.intp)
    return Dataset(data.features[tr], data.speakers[tr]), Dataset(data.features[va], data.speakers[va])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    val_per_speaker: int = 6
    seed: int = 0
    aam: AamConfig = AamConfig()
    warmup_steps: int = 10
    lr_max: float = 1e-3
    lr_min: float = 1e-8


@dataclass(frozen=True)
class LogRow:
    epoch: int
    loss: float
    val_eer: float
    lr: float


@dataclass
class TrainResult:
    model: ModelGraph
    class_weights: Tensor
    log: list[LogRow] = field(default_factory=list)

    def log_tsv(self) -> str:
        lines = ["epoch\tloss\tval_eer\tlr"]
        lines += [f"{r.epoch}\t{r.loss:.6g}\t{r.val_eer:.6g}\t{r.lr:.6g}" for r in self.log]
        return "\n".join(lines) + "\n"


def embed(model: ModelGraph, features: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [model_forward(model, features[i : i + batch_size]).data for i in range(0, len(features), batch_size)]
    return np.concatenate(out)


def validation_eer(model: ModelGraph, val: Dataset) -> float:
    if len(np.unique(val.speakers)) < 2 or len(val) < 3:
        return float("nan")
    trials = all_pair_trials(embed(model, val.features), val.speakers)
    return compute_eer(trials).eer


def _loss(model, weights, xb, yb, aam: AamConfig):
    emb = model_forward(model, xb)
    return ops.aam_softmax_loss(emb, ops.l2_normalize(weights), yb, aam.margin, aam.scale)


def dataset_loss(model, weights, data: Dataset, aam: AamConfig, batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(data), batch_size):
        xb, yb = data.features[i : i + batch_size], data.speakers[i : i + batch_size]
        total += float(_loss(model, weights, xb, yb, aam).data) * len(yb)
    return total / len(data)


def train_toy(model: ModelGraph | ModelConfig, data: Dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch AAM-softmax training with Adam.

    Updates ``model``'s parameters in place. The log starts with an epoch-0
    row measured before any update; every row's loss is the mean training
    loss at the end of that epoch.
    """
    if isinstance(model, ModelConfig):
        model = build_model(model, seed=cfg.seed)
    n_spk = len(np.unique(data.speakers))
    if n_spk < 2:
        raise DatasetError(f"training needs at least 2 speakers, got {n_spk}")
    if data.features.ndim != 3 or data.features.shape[1] != model.config.n:
        raise DatasetError(f"features must be (U, {model.config.n}, T), got {data.features.shape}")
    if data.speakers.min() < 0 or data.speakers.max() >= n_spk:
        raise DatasetError("speaker ids must be 0 .. n_speakers-1")
    train, val = split_dataset(data, cfg.val_per_speaker)

    rng = np.random.default_rng(cfg.seed)
    dim = model.config.embedding_dim
    weights = parameter(rng.standard_normal((n_spk, dim)))
    result = TrainResult(model, weights)
    result.log.append(LogRow(0, dataset_loss(model, weights, train, cfg.aam), validation_eer(model, val), 0.0))
    if cfg.epochs == 0:
        return result

    params = model.parameters() + [weights]
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    sched = ScheduleConfig(cfg.epochs * steps_per_epoch, min(cfg.warmup_steps, cfg.epochs * steps_per_epoch - 1),
                           cfg.lr_max, cfg.lr_min)
    state = AdamState.zeros_like([p.data for p in params])
    step = 0
    lr = 0.0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            for p in params:
                p.grad = None
            with Tape() as tape:
                loss = _loss(model, weights, train.features[idx], train.speakers[idx], cfg.aam)
            backward(tape, loss)
            lr = cosine_lr(step, sched)
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            new, state = adam_step([p.data for p in params], grads, state, lr)
            for p, arr in zip(params, new):
                arr.setflags(write=False)
                p.data = arr
            step += 1
        result.log.append(LogRow(epoch, dataset_loss(model, weights, train, cfg.aam), validation_eer(model, val), lr))
    return result
