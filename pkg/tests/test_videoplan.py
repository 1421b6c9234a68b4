import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groundplan.baselines import unipi_execute
from groundplan.core import DegenerateLatentError, RngStream
from groundplan.envs import EnvSpec, EnvState, Goal, env_observe
from groundplan.videoplan import (
    VideoPlan,
    align_temporal,
    corrupt_blur,
    corrupt_drift,
    corrupt_teleport,
    encode_plan,
    load_plan,
    make_oracle_plan,
    parse_source,
    save_plan,
)
from groundplan.worldmodel import Encoder

WALL = EnvSpec.wallnav()
E = Encoder.random(2, 8, RngStream(0, 1))
RAMP = VideoPlan(np.arange(5.0)[:, None])

plans = st.integers(2, 30).flatmap(
    lambda T: arrays(np.float64, (T + 1, 2), elements=st.floats(0.0, 1.0, allow_nan=False))
).map(VideoPlan)


def test_oracle_plan_examples():
    s0, g = EnvState([0.2, 0.3]), Goal([0.8, 0.2])
    plan = make_oracle_plan(WALL, s0, g, 25)
    np.testing.assert_array_equal(plan.frames[0], env_observe(s0))
    assert np.linalg.norm(plan.frames[-1] - g.target) < WALL.eps
    assert unipi_execute(WALL, s0, g, plan).success


def test_blur_examples():
    np.testing.assert_array_equal(corrupt_blur(RAMP, 1).frames, RAMP.frames)
    const = VideoPlan(np.full((6, 2), 0.4))
    np.testing.assert_allclose(corrupt_blur(const, 4).frames, const.frames, atol=1e-15)
    out = corrupt_blur(RAMP, 3)
    np.testing.assert_allclose(out.frames[:, 0], [0, 1, 2, 3, 4])
    assert out.source == "BLUR_3"
    # even window: [i - 1, i]
    np.testing.assert_allclose(corrupt_blur(RAMP, 2).frames[:, 0], [0, 0.5, 1.5, 2.5, 4])
    with pytest.raises(ValueError):
        corrupt_blur(RAMP, 0)


def test_teleport_examples():
    np.testing.assert_array_equal(corrupt_teleport(RAMP, 1, 0).frames, RAMP.frames)
    np.testing.assert_array_equal(corrupt_teleport(RAMP, 1, 2).frames[:, 0], [0, 3, 3, 3, 4])
    with pytest.raises(ValueError):
        corrupt_teleport(RAMP, 0, 1)
    with pytest.raises(ValueError):
        corrupt_teleport(RAMP, 2, 3)


def test_teleport_jump_exceeds_action_bound():
    plan = make_oracle_plan(WALL, EnvState([0.1, 0.3]), Goal([0.9, 0.3]), 25)
    tp = corrupt_teleport(plan, 2, 4)
    jumps = np.abs(np.diff(tp.frames, axis=0))
    assert np.any(np.linalg.norm(jumps, axis=1) > np.linalg.norm(WALL.bounds.a_max))
    assert np.any(np.abs(jumps) > WALL.bounds.a_max + 1e-12)


def test_drift_examples():
    plan = make_oracle_plan(WALL, EnvState([0.2, 0.3]), Goal([0.8, 0.2]), 25)
    np.testing.assert_array_equal(corrupt_drift(plan, 0.0, 1.1, RngStream(1)).frames, plan.frames)
    a = corrupt_drift(plan, 0.05, 1.1, RngStream(1))
    np.testing.assert_array_equal(a.frames, corrupt_drift(plan, 0.05, 1.1, RngStream(1)).frames)
    hits = 0
    for seed in range(100):
        d = corrupt_drift(plan, 0.05, 1.1, RngStream(seed))
        hits += np.any(np.abs(np.diff(d.frames, axis=0)) > WALL.bounds.a_max)
    assert hits >= 95


def test_align_examples():
    ramp = VideoPlan(np.linspace(0, 1, 11)[:, None])
    np.testing.assert_array_equal(align_temporal(ramp, 1, 10).frames, ramp.frames)
    sub = align_temporal(ramp, 2, 5)
    np.testing.assert_allclose(sub.frames[:, 0], np.linspace(0, 1, 6), atol=1e-15)
    four = VideoPlan(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    up = align_temporal(four, 1, 6)
    assert len(up) == 7
    np.testing.assert_array_equal(up.frames[0], four.frames[0])
    np.testing.assert_array_equal(up.frames[-1], four.frames[-1])
    # 7 frames over 3 segments: positions 0, 0.5, 1, ..., 3
    np.testing.assert_allclose(up.frames[1], [0.5, 0.0])
    np.testing.assert_allclose(up.frames[3], [1.0, 0.5])
    with pytest.raises(ValueError):
        align_temporal(four, 1, 0)


def test_encode_plan_examples():
    plan = make_oracle_plan(WALL, EnvState([0.2, 0.3]), Goal([0.8, 0.2]), 25)
    np.testing.assert_array_equal(encode_plan(Encoder.identity(2), plan).latents, plan.frames)
    assert len(encode_plan(E, plan)) == len(plan)
    np.testing.assert_array_equal(encode_plan(E, corrupt_blur(plan, 1)).latents, encode_plan(E, plan).latents)
    with pytest.raises(DegenerateLatentError):
        encode_plan(E, VideoPlan(np.zeros((3, 2))))


@settings(max_examples=100, deadline=None)
@given(plans, st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_corruptions_keep_endpoints_and_length(plan, k, seed):
    T = plan.horizon
    outs = [corrupt_blur(plan, k), corrupt_drift(plan, 0.05, 1.1, RngStream(seed))]
    if T >= 2:
        cs = 1 + seed % (T - 1)
        outs.append(corrupt_teleport(plan, cs, seed % (T - cs)))
    for out in outs:
        assert len(out) == len(plan)
        np.testing.assert_array_equal(out.frames[0], plan.frames[0])
        np.testing.assert_array_equal(out.frames[-1], plan.frames[-1])


@settings(max_examples=100, deadline=None)
@given(plans, st.integers(1, 12))
def test_blur_is_windowed_convex_combination_and_linear(plan, k):
    out = corrupt_blur(plan, k)
    T = plan.horizon
    for i in range(1, T):
        lo, hi = max(i - k // 2, 0), min(i + (k + 1) // 2 - 1, T)
        win = plan.frames[lo:hi + 1]
        assert np.all(out.frames[i] >= win.min(0) - 1e-12) and np.all(out.frames[i] <= win.max(0) + 1e-12)
    # blur commutes with the linear encoder
    in_latent = corrupt_blur(VideoPlan(plan.frames @ E.E.T), k).frames
    np.testing.assert_allclose(out.frames @ E.E.T, in_latent, atol=1e-12)


def test_plan_file_round_trip(tmp_path):
    plan = corrupt_blur(make_oracle_plan(WALL, EnvState([0.2, 0.3]), Goal([0.8, 0.2]), 10), 3)
    path = tmp_path / "plan.csv"
    save_plan(plan, path)
    assert path.read_text().splitlines()[0] == "frame_idx,source,v0,v1"
    back = load_plan(path, plan.frames[0], plan.frames[-1])
    np.testing.assert_array_equal(back.frames, plan.frames)
    assert back.source == "BLUR_3"
    with pytest.raises(ValueError):
        load_plan(path, plan.frames[0] + 0.1, plan.frames[-1])
    bad = tmp_path / "bad.csv"
    bad.write_text("idx,source,v0\n0,ORACLE,0.1\n")
    with pytest.raises(ValueError):
        load_plan(bad)


def test_parse_source():
    assert parse_source("BLUR_10") == (parse_source("BLUR_3")[0], 10)
    for bad in ("BLUR_0", "blur_3", "NOISE"):
        with pytest.raises(ValueError):
            parse_source(bad)
