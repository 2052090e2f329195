import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcases import MODEL_TOL, model_case
from tmfuse import ops
from tmfuse.gradcheck import check_gradients
from tmfuse.model import (
    ConcatStage, Embedding, FrameBlock, ModelConfig, ModelFormatError, ModelGraph, StatsPool, TmStage,
    build_model, format_config, frame_block_forward, load_config, load_model, model_forward, parse_config,
    run_stages, save_model,
)
from tmfuse.tensor import ConfigError, ShapeError
from tmfuse.tm import TmParams

TINY = ModelConfig(name="tiny", n=8, l=4, channels=8, blocks=2, kernel=(3,), dilation=(1, 2), embedding_dim=6)


def test_full_model_gradient():
    loss_fn, tensors = model_case()
    errs = check_gradients(loss_fn, tensors)
    assert max(errs) <= MODEL_TOL, errs


def test_graph_layouts():
    base = build_model(TINY.with_overrides(tm_enabled=False, l=8))
    assert [type(s) for s in base.stages] == [FrameBlock, FrameBlock, StatsPool, Embedding]
    tm = build_model(ModelConfig(n=80, l=20, blocks=2, channels=16))
    assert [type(s) for s in tm.stages] == [TmStage, FrameBlock, TmStage, FrameBlock, ConcatStage, StatsPool,
                                            Embedding]
    assert tm.stages[0].plan.j == 4 and tm.stages[2].plan.j == 4 and tm.lanes == 4


def test_same_seed_same_weights():
    a, b = build_model(TINY, seed=4), build_model(TINY, seed=4)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))
    c = build_model(TINY, seed=5)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


@given(seed=st.integers(0, 999), t=st.integers(1, 9))
def test_embedding_shape_and_norm(seed, t):
    model = build_model(TINY, seed=seed)
    e = model_forward(model, np.random.default_rng(seed).standard_normal((8, t))).data
    assert e.shape == (6,)
    assert abs(np.linalg.norm(e) - 1.0) <= 1e-9


def test_batch_matches_single(rng):
    model = build_model(TINY, seed=1)
    x = rng.standard_normal((3, 8, 7))
    batch = model_forward(model, x).data
    for i in range(3):
        assert np.allclose(batch[i], model_forward(model, x[i]).data, atol=1e-13)


def test_block_shares_weights_across_lanes():
    counts = {len(build_model(TINY.with_overrides(overlap=ov)).parameters()) for ov in (0.0, 0.5)}
    assert len(counts) == 1
    pn = {sum(t.data.size for t in build_model(TINY.with_overrides(overlap=ov)).parameters()) for ov in (0.0, 0.5)}
    assert len(pn) == 1


def test_zeroing_one_lane_only_changes_that_lane(rng):
    model = build_model(TINY, seed=2)
    block = model.stages[1]
    lanes = run_stages(model, rng.standard_normal((8, 6)))[0].data
    out = frame_block_forward(lanes, block).data
    zeroed = lanes.copy()
    zeroed[1] = 0.0
    out_z = frame_block_forward(zeroed, block).data
    changed = [not np.array_equal(out[k], out_z[k]) for k in range(lanes.shape[0])]
    assert changed == [False, True]


def test_pass_through_tm_equals_plain_stack(rng):
    cfg = TINY.with_overrides(l=8)  # J = 1
    model = build_model(cfg, seed=3)
    stages = []
    for s in model.stages:
        if isinstance(s, TmStage):
            p = s.params
            zero = ops.conv_from_arrays(np.zeros((p.l, 2 * p.q)), np.zeros(p.l))
            s = TmStage(s.plan, TmParams(p.init, p.interact, zero, p.pool_window), s.merge_input)
        stages.append(s)
    tm_model = ModelGraph(cfg, tuple(stages))
    plain = ModelGraph(cfg.with_overrides(tm_enabled=False),
                       tuple(s for s in model.stages if not isinstance(s, (TmStage, ConcatStage))))
    x = rng.standard_normal((8, 9))
    assert np.max(np.abs(model_forward(tm_model, x).data - model_forward(plain, x).data)) <= 1e-6


def test_frame_block_examples():
    x = np.arange(6.0).reshape(2, 3)
    zero = FrameBlock(ops.conv_from_arrays(np.zeros((2, 2, 3)), np.zeros(2)), residual=True)
    assert np.array_equal(frame_block_forward(x, zero).data, x)
    neg = FrameBlock(ops.conv_from_arrays(-np.ones((1, 2, 1)), -np.ones(1)), residual=False)
    assert np.array_equal(frame_block_forward(x, neg).data, np.zeros((1, 3)))
    # one channel, kernel 3: y[t] = relu(x[t-1] - x[t+1] + 0.5), zero padded
    one = FrameBlock(ops.conv_from_arrays(np.array([[[1.0, 0.0, -1.0]]]), np.array([0.5])), residual=True)
    got = frame_block_forward(np.array([[1.0, 3.0, 2.0]]), one).data
    want = np.array([[max(0 - 3 + 0.5, 0) + 1, max(1 - 2 + 0.5, 0) + 3, max(3 - 0 + 0.5, 0) + 2]])
    assert np.array_equal(got, want)


def test_input_dim_mismatch(rng):
    with pytest.raises(ShapeError):
        model_forward(build_model(TINY), rng.standard_normal((7, 5)))


def test_bad_config_names_stage():
    with pytest.raises(ConfigError, match="TM2"):
        build_model(TINY.with_overrides(tm_l=(5,)))
    with pytest.raises(ConfigError):
        build_model(TINY.with_overrides(kernel=(4,)))
    with pytest.raises(ConfigError):
        build_model(TINY.with_overrides(blocks=0))


# ---------------------------------------------------------------------------
# config and model files
# ---------------------------------------------------------------------------


@given(
    n=st.sampled_from([8, 16]), l=st.sampled_from([2, 4, 8]), ov=st.sampled_from([0.0, 0.25, 0.5]),
    blocks=st.integers(1, 3), channels=st.integers(1, 32), q=st.one_of(st.none(), st.integers(1, 9)),
    kernel=st.lists(st.sampled_from([1, 3, 5]), min_size=1, max_size=3), emb=st.integers(1, 300),
    tm=st.booleans(),
)
def test_config_text_round_trip(n, l, ov, blocks, channels, q, kernel, emb, tm):
    cfg = ModelConfig(name="x", n=n, l=l, overlap=ov, q=q, blocks=blocks, channels=channels, kernel=tuple(kernel),
                      embedding_dim=emb, tm_enabled=tm, tm_overlap=(0.5,))
    assert parse_config(format_config(cfg)) == cfg


def test_config_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text("# comment\nn = 8\nl = 4   # trailing\ndilation = 1, 2\ntm_enabled = yes\n\n")
    cfg = load_config(p)
    assert cfg.name == "small" and cfg.n == 8 and cfg.dilation == (1, 2) and cfg.tm_enabled


@pytest.mark.parametrize("text", ["bogus = 1\n", "n 8\n", "n = eight\n", "tm_enabled = maybe\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_model_file_round_trip(tmp_path, rng):
    model = build_model(TINY, seed=9)
    path = tmp_path / "m.tmmd"
    save_model(model, path)
    raw = path.read_bytes()
    assert raw[:5] == b"TMMD1"
    back = load_model(path)
    assert back.config == model.config
    x = rng.standard_normal((8, 5))
    assert np.array_equal(model_forward(back, x).data, model_forward(model, x).data)
    save_model(back, tmp_path / "again.tmmd")
    assert (tmp_path / "again.tmmd").read_bytes() == raw


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.tmmd"
    save_model(build_model(TINY), path)
    raw = path.read_bytes()
    for name, data in [("magic", b"XXXXX" + raw[5:]), ("short", raw[:-8]), ("header", raw[:7])]:
        bad = tmp_path / f"{name}.tmmd"
        bad.write_bytes(data)
        with pytest.raises(ModelFormatError):
            load_model(bad)
