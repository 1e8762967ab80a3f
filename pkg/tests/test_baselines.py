import numpy as np
import pytest

from dynfm.baselines import (FNN_HIDDEN, FnnConfig, dataset_windows, fit_fnn, fit_linear,
                             fnn_param_count, iterative_rollout, load_regressor, save_regressor,
                             small_transformer_config, window_features)
from dynfm.data import Dataset, Trajectory
from dynfm.model import count_params
from dynfm.rng import substream


def decay_dataset(n=20, length=64, excite=True, seed=0):
    """x_{k+1} = 0.9 x_k + u_k; with excite=False the input is zero."""
    rng = substream(seed, "decay")
    trajs = []
    for i in range(n):
        u = rng.normal(size=length) if excite else np.zeros(length)
        x = np.empty(length)
        x[0] = rng.uniform(-2, 2)
        for k in range(length - 1):
            x[k + 1] = 0.9 * x[k] + u[k]
        trajs.append(Trajectory(x[:, None], u[:, None], 0.1, f"d{i}"))
    return Dataset(trajs, 1, 1, 0.1)


def one_window_dataset(n=200, seed=0, rule=None):
    """Independent 33-step samples: 32 random pairs, then one step of ``rule``.

    Unlike windows cut from one trajectory, these features are not collinear,
    so the least-squares weights are unique.
    """
    rule = rule or (lambda X: 0.9 * X[:, 62] + X[:, 63])
    rng = substream(seed, "windows")
    states, actions = rng.normal(size=(n, 33)), rng.normal(size=(n, 33))
    X = np.stack([states[:, :32], actions[:, :32]], axis=2).reshape(n, -1)
    states[:, 32] = np.reshape(rule(X), n)
    trajs = [Trajectory(states[i, :, None], actions[i, :, None], 0.1, f"w{i}") for i in range(n)]
    return Dataset(trajs, 1, 1, 0.1)


def test_window_layout():
    states = np.arange(5.0)[:, None]
    actions = 10 + np.arange(5.0)[:, None]
    X, Y = window_features(states, actions, window=2)
    np.testing.assert_array_equal(X[0], [0, 10, 1, 11])
    np.testing.assert_array_equal(Y[:, 0], [2, 3, 4])
    assert window_features(states, actions, window=5)[0].shape == (0, 10)


def test_linear_recovers_dynamics():
    reg = fit_linear(one_window_dataset())
    w = reg.weights[:, 0]
    expected = np.zeros(65)
    expected[62] = 0.9  # x_{k+31}
    expected[63] = 1.0  # u_{k+31}
    np.testing.assert_allclose(w, expected, atol=1e-8)
    X, Y = dataset_windows(decay_dataset(seed=1))
    assert np.mean((reg(X) - Y) ** 2) < 1e-10


@pytest.mark.parametrize("data", ["autonomous", "identifiable"])
def test_linear_geometric_rollout(data):
    ds = decay_dataset(excite=False) if data == "autonomous" else one_window_dataset()
    reg = fit_linear(ds)
    context = 0.9 ** np.arange(-31, 1)  # ends at 1.0
    preds = iterative_rollout(reg, context[:, None], np.zeros(32), np.zeros(32))
    np.testing.assert_allclose(preds[:, 0], 0.9 ** np.arange(1, 33), rtol=0, atol=1e-8)


def test_linear_idempotent_on_own_predictions():
    reg = fit_linear(one_window_dataset(rule=lambda X: np.sin(X[:, 0]) + X[:, 5] ** 2))
    own = one_window_dataset(seed=1, rule=reg)
    refit = fit_linear(own)
    np.testing.assert_allclose(refit.weights, reg.weights, atol=1e-8)


def test_ridge_limit_and_singularity():
    ds = decay_dataset()
    huge = fit_linear(ds, ridge=1e14)
    assert np.max(np.abs(huge.weights)) < 1e-6
    with pytest.raises(np.linalg.LinAlgError, match="ridge"):
        fit_linear(decay_dataset(excite=False), ridge=0.0)
    with pytest.raises(ValueError):
        fit_linear(ds, ridge=-1.0)


def test_rollout_contract():
    reg = fit_linear(decay_dataset())
    rng = np.random.default_rng(0)
    cs, ca, fa = rng.normal(size=(40, 1)), rng.normal(size=40), rng.normal(size=5)
    one = iterative_rollout(reg, cs, ca, fa[:1])
    feats = np.concatenate([cs[-32:], ca[-32:, None]], axis=1).reshape(1, -1)
    np.testing.assert_array_equal(one, reg(feats))
    np.testing.assert_array_equal(iterative_rollout(reg, cs, ca, fa), iterative_rollout(reg, cs, ca, fa))
    batch = iterative_rollout(reg, np.stack([cs, cs]), np.stack([ca, ca]), np.stack([fa, fa]))
    assert batch.shape == (2, 5, 1)
    with pytest.raises(ValueError):
        iterative_rollout(reg, cs, ca, np.zeros(0))
    with pytest.raises(ValueError):
        iterative_rollout(reg, cs[:10], ca[:10], fa)


def test_fnn_shape_and_count():
    assert FNN_HIDDEN == (128, 64, 32)
    assert fnn_param_count(4, 1) == 31076
    reg = fit_fnn(decay_dataset(n=2), FnnConfig(epochs=0))
    assert sum(p.data.size for p in reg.net.parameters()) == fnn_param_count(1, 1)
    assert [l.weight.shape[1] for l in reg.net.layers] == [128, 64, 32]
    X, _ = dataset_windows(decay_dataset(n=2))
    assert np.all(np.isfinite(reg(X)))


def test_fnn_learns_linear_system():
    test = decay_dataset(n=10, seed=9, excite=False)
    X, Y = dataset_windows(test)
    errs = [np.mean((fit_fnn(decay_dataset(n=40, excite=False), FnnConfig(epochs=40, seed=s))(X) - Y) ** 2)
            for s in range(3)]
    assert np.median(errs) < 1e-4


def test_regressor_checkpoints(tmp_path):
    ds = decay_dataset(n=4)
    X, _ = dataset_windows(ds)
    for reg in (fit_linear(ds), fit_fnn(ds, FnnConfig(epochs=1))):
        save_regressor(reg, tmp_path / f"{reg.kind}.ckpt")
        back = load_regressor(tmp_path / f"{reg.kind}.ckpt")
        np.testing.assert_array_equal(back(X), reg(X))


def test_small_transformer():
    cfg = small_transformer_config(d_x=4, d_u=1)
    assert cfg.n_layers == 8
    assert 150_000 <= count_params(cfg) <= 250_000
