import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import partition_starts
from tmfuse.partition import PartitionError, concat_subsets, plan_partition, split
from tmfuse.tensor import ShapeError


@pytest.mark.parametrize("overlap,j,stride", [(0.0, 4, 20), (0.25, 5, 15), (0.5, 7, 10)])
def test_reference_triples(overlap, j, stride):
    plan = plan_partition(80, 20, overlap)
    assert (plan.j, plan.stride) == (j, stride)
    assert plan.starts[-1] + plan.l == 80


def test_describe():
    assert plan_partition(80, 20, 0.5).describe() == "J=7\tstride=10\tstarts=0,10,20,30,40,50,60"


def test_full_width_is_single_subset():
    plan = plan_partition(80, 80, 0.0)
    assert plan.j == 1 and plan.starts == (0,)


def test_non_tiling_error_names_everything():
    with pytest.raises(PartitionError) as exc:
        plan_partition(80, 20, 0.3)
    msg = str(exc.value)
    assert "N=80" in msg and "L=20" in msg and "stride=14" in msg


@pytest.mark.parametrize("n,l,ov", [(10, 0, 0.0), (10, 11, 0.0), (10, 5, 1.0), (10, 5, -0.1)])
def test_invalid_arguments(n, l, ov):
    with pytest.raises(PartitionError):
        plan_partition(n, l, ov)


@given(n=st.integers(1, 200), l=st.integers(1, 200), ov=st.floats(0, 0.95))
def test_j_matches_bruteforce(n, l, ov):
    assume(l <= n)
    want = partition_starts(n, l, ov)
    if want is None:
        with pytest.raises(PartitionError):
            plan_partition(n, l, ov)
        return
    plan = plan_partition(n, l, ov)
    assert list(plan.starts) == want
    assert plan.j == len(want) == (n - l) // plan.stride + 1


@given(l=st.integers(1, 16), j=st.integers(1, 8), ov=st.sampled_from([0.0, 0.25, 0.5, 0.75]),
       t=st.integers(1, 5), seed=st.integers(0, 999))
def test_coverage_and_split(l, j, ov, t, seed):
    stride = l - int(np.floor(ov * l + 0.5))
    assume(stride >= 1)
    n = l + (j - 1) * stride
    plan = plan_partition(n, l, ov)
    f = np.random.default_rng(seed).standard_normal((n, t))
    parts = split(f, plan)
    assert len(parts) == plan.j and all(p.shape == (l, t) for p in parts)
    counts = np.zeros(n, int)
    for s, p in zip(plan.starts, parts):
        counts[s : s + l] += 1
        assert np.array_equal(p, f[s : s + l])
    assert counts.min() >= 1
    if plan.overlap_dims == 0:
        assert np.all(counts == 1)
        assert np.array_equal(concat_subsets(parts), f)


def test_split_shape_errors():
    plan = plan_partition(8, 4)
    with pytest.raises(ShapeError):
        split(np.zeros((6, 3)), plan)
    with pytest.raises(ShapeError):
        concat_subsets([np.zeros((2, 3)), np.zeros((2, 4))])
