import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import Counter, naive_conv_count
from tmfuse.complexity import (
    complexity, complexity_report, conv_macs, conv_params, count_macs, count_params, format_report, tm_params,
)
from tmfuse.model import ModelConfig, build_model

TM = ModelConfig(name="tm", n=80, l=20, channels=16, kernel=(5,), dilation=(1, 2), embedding_dim=128)
BASE = ModelConfig(name="base", n=80, l=80, channels=64, kernel=(5,), dilation=(1, 2), embedding_dim=128,
                   tm_enabled=False)


def test_reference_values():
    assert tm_params(20, 40) == 4100
    assert conv_params(256, 80) == 20736
    assert conv_macs(3, 2, 1, 4) == 24 + 12  # 24 MACs plus one bias add per output
    assert count_params(build_model(BASE)) == 62720
    assert count_params(build_model(TM)) == 13876


@pytest.mark.parametrize("out_c,in_c,k,d,t", [(3, 2, 1, 1, 4), (2, 3, 3, 2, 5), (4, 1, 5, 1, 3)])
def test_conv_counts_match_literal_oracle(out_c, in_c, k, d, t):
    rng = np.random.default_rng(0)
    w, b = rng.standard_normal((out_c, in_c, k)), rng.standard_normal(out_c)
    c = Counter()
    naive_conv_count(rng.standard_normal((in_c, t)), w, b, d, c)
    assert conv_macs(out_c, in_c, k, t) == c.mul + c.add
    assert conv_params(out_c, in_c, k) == w.size + b.size


def test_per_stage_sums():
    r = complexity(build_model(TM), 200)
    assert r.pn == sum(s.pn for s in r.per_stage)
    assert r.macs == sum(s.macs for s in r.per_stage) == r.lane_macs + r.shared_macs
    assert r.pn == sum(t.data.size for t in build_model(TM).parameters())


@given(t=st.integers(1, 2000), ov=st.sampled_from([0.0, 0.25, 0.5]))
def test_pn_independent_of_frames_and_overlap(t, ov):
    m = build_model(TM.with_overrides(overlap=ov))
    assert complexity(m, t).pn == count_params(build_model(TM))


@given(t=st.integers(1, 1000))
def test_macs_affine_in_frames(t):
    m = build_model(TM)
    a, b, c = count_macs(m, t), count_macs(m, 2 * t), count_macs(m, 3 * t)
    assert c - b == b - a
    # every stage except the utterance-level head is exactly proportional to T
    frame = lambda T: sum(s.macs for s in complexity(m, T).per_stage if s.name != "embedding")  # noqa: E731
    pool = lambda T: next(s.macs for s in complexity(m, T).per_stage if s.name == "statspool")  # noqa: E731
    assert frame(2 * t) - pool(2 * t) == 2 * (frame(t) - pool(t))


def test_macs_strictly_increase_with_j():
    macs = [count_macs(build_model(TM.with_overrides(overlap=ov)), 200) for ov in (0.0, 0.25, 0.5)]
    assert macs[0] < macs[1] < macs[2]


def test_lane_ratio_is_seven_quarters():
    j4 = complexity(build_model(TM), 200).lane_macs
    j7 = complexity(build_model(TM.with_overrides(overlap=0.5)), 200).lane_macs
    assert 4 * j7 == 7 * j4


def test_wide_channel_example():
    # 256 channels in total: one 256-wide lane against four 64-wide lanes
    base = count_params(build_model(BASE.with_overrides(channels=256)))
    tm = count_params(build_model(TM.with_overrides(channels=64)))
    assert tm < base


def test_report():
    rows = complexity_report([BASE, TM, TM.with_overrides(name="tm50", overlap=0.5)], 800)
    assert [r.name for r in rows] == ["base", "tm", "tm50"]
    assert rows[0].pn_pct == 100.0 and rows[0].macs_pct == 100.0
    assert rows[1].pn == rows[2].pn and rows[1].macs < rows[2].macs
    text = format_report(rows)
    assert text.splitlines()[0] == "name\tpn\tmacs\tpn_pct\tmacs_pct"
    assert text.splitlines()[1] == f"base\t62720\t{rows[0].macs}\t100\t100"
    single = complexity_report([TM], 10)
    assert single[0].pn_pct == single[0].macs_pct == 100.0


def test_errors():
    with pytest.raises(ValueError):
        complexity_report([], 10)
    with pytest.raises(ValueError):
        count_macs(build_model(TM), 0)
