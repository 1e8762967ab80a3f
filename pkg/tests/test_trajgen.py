import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynfm.data import Trajectory, dumps_dataset, total_variation
from dynfm.rkhs import SamplerConfig, eval_scalar, sample_vector_field
from dynfm.rng import substream
from dynfm.trajgen import (BlowUpError, Decision, InsufficientDataError, TrajGenConfig,
                           accept_trajectory, bin_and_downsample, context_prediction_tv,
                           euler_rollout, generate_dataset, sample_system_dataset, tv_bin)


def small_cfg(**kw):
    base = dict(horizon_steps=7, context_len=4, pred_len=4, tv_min=0.0, tv_max=10.0, delta=9.0)
    base.update(kw)
    return TrajGenConfig(**base)


def line(values, dt=0.1):
    s = np.asarray(values, dtype=float)
    return Trajectory(s, np.zeros((len(s), 1)), dt)


# rollout


def test_zero_field_is_fixed_point():
    tr = euler_rollout(lambda x: np.zeros_like(x), [1.5, -2.0], TrajGenConfig())
    assert np.all(tr.states == np.array([1.5, -2.0]))
    assert len(tr) == 64
    assert np.all(tr.actions == 0)


def test_single_euler_step():
    tr = euler_rollout(lambda x: -x, [1.0], TrajGenConfig(dt=0.1))
    assert tr.states[1, 0] == pytest.approx(0.9, abs=1e-15)


def test_rollout_matches_stepwise_oracle():
    field = sample_vector_field(SamplerConfig(d_x=2, seed=3), 1)
    cfg = TrajGenConfig(dt=0.05)
    tr = euler_rollout(field, [0.5, -1.0], cfg)
    x = np.array([0.5, -1.0])
    for k in range(cfg.horizon_steps):
        x = x + cfg.dt * np.array([eval_scalar(c, x) for c in field.components])
        np.testing.assert_allclose(tr.states[k + 1], x, rtol=1e-12, atol=1e-12)


def test_rollout_deterministic_bitwise():
    field = sample_vector_field(SamplerConfig(seed=8), 0)
    a = euler_rollout(field, [1.0, 2.0], TrajGenConfig())
    b = euler_rollout(field, [1.0, 2.0], TrajGenConfig())
    assert a.states.tobytes() == b.states.tobytes()


def test_rollout_blowup_reports_step():
    with pytest.raises(BlowUpError) as exc:
        euler_rollout(lambda x: 1e4 * x, [1.0], TrajGenConfig(dt=1.0))
    assert exc.value.step == 2
    assert "step 2" in str(exc.value)


def test_process_noise():
    cfg = TrajGenConfig(process_noise_std=0.1)
    with pytest.raises(ValueError):
        euler_rollout(lambda x: 0 * x, [0.0], cfg)
    tr = euler_rollout(lambda x: 0 * x, [0.0], cfg, rng=substream(0, "n"))
    steps = np.diff(tr.states[:, 0])
    assert 0.05 < steps.std() < 0.15


def test_config_validation():
    with pytest.raises(ValueError):
        TrajGenConfig(tv_min=5.0, tv_max=1.0)
    with pytest.raises(ValueError):
        TrajGenConfig(delta=19.5 + 1.0)
    with pytest.raises(ValueError):
        TrajGenConfig(horizon_steps=10)  # c + m = 64 > 11
    assert TrajGenConfig(n_functions=1000, n_bins=20).effective_bin_cap == 50


# total variation


def test_tv_examples():
    assert total_variation(line([2.0, 2.0, 2.0])) == 0.0
    assert total_variation(line([0.0, 1.0, -1.0])) == 3.0
    assert total_variation(line([[0.0, 0.0], [3.0, 4.0]])) == 5.0


seqs = arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 3)), elements=st.floats(-100, 100))


@given(seqs, st.floats(-50, 50), st.floats(0.01, 100))
def test_tv_properties(s, offset, scale):
    tv = total_variation(s)
    assert total_variation(s[::-1]) == pytest.approx(tv, rel=1e-12, abs=1e-12)
    assert total_variation(s + offset) == pytest.approx(tv, rel=1e-9, abs=1e-9)
    assert total_variation(scale * s) == pytest.approx(scale * tv, rel=1e-9, abs=1e-9)


# filtering


def test_accept_boundary_inclusive():
    tr = line(np.arange(8.0))  # TV 7, halves 3 and 3
    assert accept_trajectory(tr, small_cfg(tv_max=7.0, delta=1.0)) is Decision.ACCEPT
    assert accept_trajectory(tr, small_cfg(tv_min=7.0, tv_max=9.0, delta=1.0)) is Decision.ACCEPT


def test_reject_delta():
    # context TV 5, prediction TV 1
    tr = line([0, 1, 2, 3, 8, 9, 9, 9])
    ctx, pred = context_prediction_tv(tr, 4, 4)
    assert (ctx, pred) == (3.0, 1.0)
    tr = line([0, 2, 4, 5, 5, 6, 6, 6])
    assert context_prediction_tv(tr, 4, 4) == (5.0, 1.0)
    assert accept_trajectory(tr, small_cfg(delta=3.0)) is Decision.REJECT_DELTA


def test_reject_tv_range():
    tr = line([0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    assert accept_trajectory(tr, small_cfg(tv_min=1.0, delta=5.0)) is Decision.REJECT_TV_RANGE


def test_accept_short_trajectory_errors():
    with pytest.raises(ValueError):
        accept_trajectory(line([0, 1, 2]), small_cfg())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 3.0), st.floats(1.0, 5.0))
def test_filter_monotone(widen_lo, widen_hi, widen_delta):
    scfg = SamplerConfig(seed=4)
    base = TrajGenConfig(n_functions=40, tv_min=2.0, tv_max=12.0, delta=4.0)
    wide = TrajGenConfig(n_functions=40, tv_min=max(0.0, 2.0 - widen_lo), tv_max=12.0 + widen_hi,
                         delta=4.0 + widen_delta)
    pool = []
    for i in range(40):
        f = sample_vector_field(scfg, i)
        x0 = substream(0, "mono", i).uniform(-5, 5, size=2)
        try:
            pool.append(euler_rollout(f, x0, base))
        except BlowUpError:
            pass
    narrow = {i for i, t in enumerate(pool) if accept_trajectory(t, base) is Decision.ACCEPT}
    broad = {i for i, t in enumerate(pool) if accept_trajectory(t, wide) is Decision.ACCEPT}
    assert narrow <= broad


# binning


def test_tv_bin_edges():
    cfg = TrajGenConfig()  # bins of width 0.975 over [0.5, 20]
    assert tv_bin(0.5, cfg) == 0
    assert tv_bin(20.0, cfg) == 19
    assert tv_bin(1.5, cfg) == 1


def test_bin_under_cap_is_identity():
    trs = [line([0, t]) for t in (1.0, 5.0, 9.0)]
    out = bin_and_downsample(trs, TrajGenConfig(bin_cap=3))
    assert out == trs


def test_bin_cap_enforced_and_order_kept():
    cfg = TrajGenConfig(bin_cap=2)
    trs = [line([0, 1.0 + 0.01 * i]) for i in range(5)] + [line([0, 10.0])]
    out = bin_and_downsample(trs, cfg, rng=substream(1, "b"))
    assert len(out) == 3
    assert out[-1] is trs[-1]
    idx = [trs.index(t) for t in out]
    assert idx == sorted(idx)


def test_generated_histogram_respects_cap():
    cfg = TrajGenConfig(n_functions=150, bin_cap=4)
    ds = generate_dataset(SamplerConfig(seed=2), cfg)
    counts = np.bincount([tv_bin(total_variation(t), cfg) for t in ds], minlength=cfg.n_bins)
    assert counts.max() <= 4


# dataset generation


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(SamplerConfig(seed=1), TrajGenConfig(n_functions=100, seed=1))


def test_generated_dataset_contract(small_dataset):
    ds = small_dataset
    assert 0 < len(ds) <= 100
    cfg = TrajGenConfig(n_functions=100, seed=1)
    assert all(accept_trajectory(t, cfg) is Decision.ACCEPT for t in ds)
    stats = ds.provenance["stats"]
    assert stats["candidates"] == 100
    assert stats["accepted"] + sum(stats["rejects"].values()) == 100
    assert ds.provenance["sampler"]["seed"] == 1
    assert all(len(t) == 64 and np.all(t.actions == 0) for t in ds)


def test_generated_dataset_deterministic(small_dataset):
    again = generate_dataset(SamplerConfig(seed=1), TrajGenConfig(n_functions=100, seed=1))
    assert dumps_dataset(again) == dumps_dataset(small_dataset)


def test_blowups_counted_separately(monkeypatch):
    import dynfm.trajgen as G

    class Exploding:
        def __call__(self, x):
            return 1e9 * np.ones_like(x)

    monkeypatch.setattr(G, "sample_vector_field", lambda scfg, index: Exploding())
    with pytest.raises(InsufficientDataError, match="reject_blowup': 5"):
        generate_dataset(SamplerConfig(), TrajGenConfig(n_functions=5))


def test_system_dataset():
    f = sample_vector_field(SamplerConfig(seed=6), 0)
    cfg = TrajGenConfig()
    ds = sample_system_dataset(f, 10, cfg, d_x=2, seed=3)
    assert len(ds) == 10
    assert all(accept_trajectory(t, cfg) is Decision.ACCEPT for t in ds)
    with pytest.raises(InsufficientDataError):
        sample_system_dataset(lambda x: 1e9 * x, 2, cfg, d_x=2, max_attempts=3)
