"""TM-augmented frame-level block stack with a stats-pooling embedding head.

With the module enabled the graph is::

    TM_1 -> Block_1 (per lane) -> TM_2 -> Block_2 (per lane) ... -> Concat -> StatsPool -> Embedding

Each block's weights are shared by all lanes. ``channels`` is the per-lane
width, so a J-lane model with ``channels = C / J`` spends the same total
channel budget as a single-lane model with ``channels = C``. Later modules see
the lanes concatenated along channels (``J * channels``) and re-partition them
with their own subset size (``tm_l``, default ``channels``, which keeps the
lanes as they are). The concatenation before pooling joins lanes along time,
so the head's size does not depend on ``J``.
"""

from __future__ import annotations

import contextlib
import io
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import ops
from .partition import PartitionPlan, plan_partition
from .tensor import ConfigError, ShapeError, Tape, Tensor, as_tensor, parameter
from .tm import TmParams, tm_apply, tm_init


@dataclass(frozen=True)
class ModelConfig:
    name: str = "model"
    n: int = 80
    l: int = 20  # noqa: E741
    overlap: float = 0.0
    q: int | None = None
    pool_window: int = 3
    blocks: int = 2
    channels: int = 64
    kernel: tuple[int, ...] = (3,)
    dilation: tuple[int, ...] = (1,)
    embedding_dim: int = 256
    tm_enabled: bool = True
    tm_l: tuple[int, ...] = ()
    tm_overlap: tuple[float, ...] = ()

    def block_kernel(self, k: int) -> int:
        return _per_block(self.kernel, k, "kernel")

    def block_dilation(self, k: int) -> int:
        return _per_block(self.dilation, k, "dilation")

    def later_tm(self, k: int) -> tuple[int, float]:
        """Subset size and overlap of the module in front of block ``k >= 1``."""
        lk = self.tm_l[k - 1] if len(self.tm_l) >= k else self.channels
        ok = self.tm_overlap[k - 1] if len(self.tm_overlap) >= k else 0.0
        return lk, ok

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def _per_block(values: tuple, k: int, what: str) -> int:
    if len(values) == 1:
        return values[0]
    if k >= len(values):
        raise ConfigError(f"{what} lists {len(values)} values but block {k + 1} needs one")
    return values[k]


# ---------------------------------------------------------------------------
# config files: ``key = value`` lines, ``#`` comments
# ---------------------------------------------------------------------------

_INT_KEYS = {"n", "l", "q", "pool_window", "blocks", "channels", "embedding_dim"}
_INT_LIST_KEYS = {"kernel", "dilation", "tm_l"}
_FLOAT_LIST_KEYS = {"tm_overlap"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, source: str = "<config>", default_name: str | None = None) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    values: dict = {} if default_name is None else {"name": default_name}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = None if (key == "q" and value.lower() in ("", "none")) else int(value)
            elif key == "overlap":
                values[key] = float(value)
            elif key == "tm_enabled":
                values[key] = _parse_bool(value)
            elif key in _INT_LIST_KEYS:
                values[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key in _FLOAT_LIST_KEYS:
                values[key] = tuple(float(v) for v in value.split(",") if v.strip())
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return ModelConfig(**values)


def load_config(path) -> ModelConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path), default_name=path.stem)


def format_config(cfg: ModelConfig) -> str:
    out = []
    for f in fields(ModelConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "none"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TmStage:
    plan: PartitionPlan
    params: TmParams
    merge_input: bool  # lanes must be concatenated along channels first

    def tensors(self):
        return self.params.tensors()


@dataclass(frozen=True)
class FrameBlock:
    conv: ops.ConvParams
    residual: bool

    def tensors(self):
        return self.conv.tensors()


@dataclass(frozen=True)
class ConcatStage:
    def tensors(self):
        return []


@dataclass(frozen=True)
class StatsPool:
    def tensors(self):
        return []


@dataclass(frozen=True)
class Embedding:
    weight: Tensor
    bias: Tensor

    def tensors(self):
        return [self.weight, self.bias]


@dataclass(frozen=True)
class ModelGraph:
    config: ModelConfig
    stages: tuple = field(default_factory=tuple)

    def parameters(self) -> list[Tensor]:
        return [t for s in self.stages for t in s.tensors()]

    @property
    def lanes(self) -> int:
        js = [s.plan.j for s in self.stages if isinstance(s, TmStage)]
        return js[-1] if js else 1


def frame_block_forward(x, block: FrameBlock) -> Tensor:
    """``relu(conv(x)) + x`` when the block keeps its width, else ``relu(conv(x))``."""
    y = ops.relu(ops.conv1d(x, block.conv))
    return ops.add(y, x) if block.residual else y


def _validate(cfg: ModelConfig):
    if cfg.blocks < 1:
        raise ConfigError(f"blocks must be >= 1, got {cfg.blocks}")
    if cfg.channels < 1 or cfg.embedding_dim < 1 or cfg.n < 1:
        raise ConfigError("n, channels and embedding_dim must be positive")
    for k in range(cfg.blocks):
        ks, dl = cfg.block_kernel(k), cfg.block_dilation(k)
        if ks < 1 or ks % 2 == 0:
            raise ConfigError(f"block {k + 1}: kernel must be odd and positive, got {ks}")
        if dl < 1:
            raise ConfigError(f"block {k + 1}: dilation must be >= 1, got {dl}")


def build_model(cfg: ModelConfig, seed: int = 0) -> ModelGraph:
    """Instantiate the stage list for ``cfg`` with seeded uniform weights."""
    _validate(cfg)
    rng = np.random.default_rng(seed)
    stages = []
    width = cfg.n
    lanes = 0  # 0 = no lane axis yet
    for k in range(cfg.blocks):
        if cfg.tm_enabled:
            if k == 0:
                n_k, l_k, ov = cfg.n, cfg.l, cfg.overlap
                q = cfg.q
            else:
                n_k = lanes * width
                l_k, ov = cfg.later_tm(k)
                q = None
            try:
                plan = plan_partition(n_k, l_k, ov)
            except ValueError as exc:
                raise ConfigError(f"stage TM{k + 1}: {exc}") from None
            stages.append(TmStage(plan, tm_init(l_k, q, cfg.pool_window, rng=rng), merge_input=k > 0))
            width, lanes = l_k, plan.j
        conv = ops.init_conv(cfg.channels, width, cfg.block_kernel(k), cfg.block_dilation(k), rng=rng)
        stages.append(FrameBlock(conv, residual=width == cfg.channels))
        width = cfg.channels
    if cfg.tm_enabled:
        stages.append(ConcatStage())
    stages.append(StatsPool())
    bound = 1.0 / np.sqrt(2 * width)
    w = rng.uniform(-bound, bound, size=(cfg.embedding_dim, 2 * width))
    b = rng.uniform(-bound, bound, size=cfg.embedding_dim)
    stages.append(Embedding(parameter(w), parameter(b)))
    return ModelGraph(cfg, tuple(stages))


def run_stages(model: ModelGraph, x) -> list[Tensor]:
    """Every stage output for input ``(..., N, T)``; the last one is the embedding."""
    x = as_tensor(x)
    if x.data.ndim < 2 or x.shape[-2] != model.config.n:
        raise ShapeError(f"model expects {model.config.n} input channels, got shape {x.shape}")
    outs = []
    h = x
    for stage in model.stages:
        if isinstance(stage, TmStage):
            if stage.merge_input:
                h = ops.merge_lanes(h)
            h = tm_apply(h, stage.plan, stage.params).out
        elif isinstance(stage, FrameBlock):
            h = frame_block_forward(h, stage)
        elif isinstance(stage, ConcatStage):
            h = ops.splice_frames(h)
        elif isinstance(stage, StatsPool):
            h = ops.stats_pooling(h)
        elif isinstance(stage, Embedding):
            h = ops.l2_normalize(ops.linear(h, stage.weight, stage.bias))
        outs.append(h)
    return outs


def model_forward(model: ModelGraph, f, tape: Tape | None = None) -> Tensor:
    """Unit-norm embedding for an ``N x T`` feature (or a ``(B, N, T)`` batch)."""
    ctx = tape if tape is not None else contextlib.nullcontext()
    with ctx:
        return run_stages(model, f)[-1]


# ---------------------------------------------------------------------------
# serialisation: b"TMMD1", u32 config length, config text, u64 value count, f64 payload
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"TMMD1"


class ModelFormatError(ValueError):
    pass


def save_model(model: ModelGraph, path) -> None:
    cfg = format_config(model.config).encode("utf-8")
    payload = np.concatenate([np.asarray(t.data, dtype="<f8").reshape(-1) for t in model.parameters()])
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<Q", payload.size))
    buf.write(payload.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> ModelGraph:
    raw = Path(path).read_bytes()
    if raw[:5] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {raw[:5]!r}, expected {MODEL_MAGIC!r}")
    try:
        (clen,) = struct.unpack_from("<I", raw, 5)
        cfg = parse_config(raw[9 : 9 + clen].decode("utf-8"), f"{path}:config")
        (count,) = struct.unpack_from("<Q", raw, 9 + clen)
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated header ({exc})") from None
    model = build_model(cfg, seed=0)
    params = model.parameters()
    expected = sum(t.data.size for t in params)
    if count != expected:
        raise ModelFormatError(f"{path}: value count {count} does not match config ({expected})")
    start = 9 + clen + 8
    if len(raw) != start + 8 * count:
        raise ModelFormatError(f"{path}: payload length {len(raw) - start} bytes, expected {8 * count}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=start) if count else np.zeros(0)
    pos = 0
    for t in params:
        chunk = data[pos : pos + t.data.size].reshape(t.shape).astype(t.dtype)
        chunk.setflags(write=False)
        t.data = chunk
        pos += t.data.size
    return model
