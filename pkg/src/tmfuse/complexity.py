"""Parameter and multiply-accumulate accounting for model graphs.

Counting convention (one MAC = one multiply plus its paired add):

* convolution: ``out * in * kernel * T`` MACs plus ``out * T`` bias adds,
  padded taps included;
* every other elementwise add, multiply or divide counts as one MAC:
  moving average ``window`` per element, subset mean ``J`` per element,
  z-score ``4`` per element plus ``2`` per frame (sqrt, eps), residual ``1``
  per element, stats pooling ``3`` per element plus ``2`` per channel,
  L2 normalisation ``2 * D + 1``;
* ReLU, splitting and concatenation are free.

Per-lane work is tracked separately from shared work, so lane scaling can be
checked exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ConcatStage, Embedding, FrameBlock, ModelConfig, ModelGraph, StatsPool, TmStage, build_model


def conv_params(out_ch: int, in_ch: int, kernel: int = 1) -> int:
    return out_ch * in_ch * kernel + out_ch


def conv_macs(out_ch: int, in_ch: int, kernel: int, frames: int) -> int:
    return out_ch * in_ch * kernel * frames + out_ch * frames


def tm_params(l: int, q: int) -> int:  # noqa: E741
    return conv_params(q, l) + conv_params(q, q) + conv_params(l, 2 * q)


@dataclass(frozen=True)
class StageCost:
    name: str
    pn: int
    lane_macs: int
    shared_macs: int

    @property
    def macs(self) -> int:
        return self.lane_macs + self.shared_macs


@dataclass(frozen=True)
class ComplexityReport:
    pn: int
    macs: int
    per_stage: list[StageCost] = field(default_factory=list)

    @property
    def lane_macs(self) -> int:
        return sum(s.lane_macs for s in self.per_stage)

    @property
    def shared_macs(self) -> int:
        return sum(s.shared_macs for s in self.per_stage)


def _tm_cost(stage: TmStage, frames: int, idx: int) -> StageCost:
    j, l, q, w = stage.plan.j, stage.params.l, stage.params.q, stage.params.pool_window  # noqa: E741
    per_lane = (
        conv_macs(q, l, 1, frames)  # init
        + (q * frames * w if w > 1 else 0)  # moving average
        + conv_macs(l, 2 * q, 1, frames)  # fuse
        + 4 * l * frames + 2 * frames  # z-score
        + l * frames  # residual
    )
    lane = j * per_lane + j * q * frames  # subset mean: (J-1) adds + 1 scale per element
    shared = conv_macs(q, q, 1, frames)  # interaction layer runs once
    return StageCost(f"tm{idx}", tm_params(l, q), lane, shared)


def stage_costs(model: ModelGraph, frames: int) -> list[StageCost]:
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    costs = []
    lanes = 1
    width = model.config.n
    n_tm = n_block = 0
    for stage in model.stages:
        if isinstance(stage, TmStage):
            n_tm += 1
            costs.append(_tm_cost(stage, frames, n_tm))
            lanes, width = stage.plan.j, stage.plan.l
        elif isinstance(stage, FrameBlock):
            n_block += 1
            c = stage.conv
            per = conv_macs(c.out_channels, c.in_channels, c.kernel_size, frames)
            if stage.residual:
                per += c.out_channels * frames
            costs.append(StageCost(f"block{n_block}", conv_params(c.out_channels, c.in_channels, c.kernel_size),
                                   lanes * per, 0))
            width = c.out_channels
        elif isinstance(stage, ConcatStage):
            costs.append(StageCost("concat", 0, 0, 0))
        elif isinstance(stage, StatsPool):
            pooled = lanes * frames
            costs.append(StageCost("statspool", 0, 0, width * 3 * pooled + 2 * width))
        elif isinstance(stage, Embedding):
            d, din = stage.weight.shape
            costs.append(StageCost("embedding", d * din + d, 0, d * din + d + 2 * d + 1))
    return costs


def count_params(model: ModelGraph) -> int:
    """Total learnable parameters; shared weights count once whatever the lane count."""
    return sum(c.pn for c in stage_costs(model, 1))


def count_macs(model: ModelGraph, frames: int) -> int:
    return sum(c.macs for c in stage_costs(model, frames))


def complexity(model: ModelGraph, frames: int) -> ComplexityReport:
    costs = stage_costs(model, frames)
    return ComplexityReport(sum(c.pn for c in costs), sum(c.macs for c in costs), costs)


@dataclass(frozen=True)
class ReportRow:
    name: str
    pn: int
    macs: int
    pn_pct: float
    macs_pct: float


def complexity_report(configs: list[ModelConfig], frames: int) -> list[ReportRow]:
    """PN/MACs per config, with percentages relative to the first config."""
    if not configs:
        raise ValueError("complexity_report needs at least one config")
    reports = [complexity(build_model(cfg), frames) for cfg in configs]
    base = reports[0]
    return [
        ReportRow(cfg.name, r.pn, r.macs, 100.0 * r.pn / base.pn, 100.0 * r.macs / base.macs)
        for cfg, r in zip(configs, reports)
    ]


def format_report(rows: list[ReportRow]) -> str:
    lines = ["name\tpn\tmacs\tpn_pct\tmacs_pct"]
    for r in rows:
        lines.append(f"{r.name}\t{r.pn}\t{r.macs}\t{r.pn_pct:.6g}\t{r.macs_pct:.6g}")
    return "\n".join(lines) + "\n"
