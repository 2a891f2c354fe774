import math
import warnings

import numpy as np
import pytest
from scipy import stats

from kdsm.datasets import MODES, gen_two_gaussians
from kdsm.errors import InvalidInputError, NumericError, StateError
from kdsm.neural import forward, init_network
from kdsm.training import (TrainConfig, TrainedModel, anomaly_score, filter_survivors, fit,
                           fit_dsm, fit_kdsm_ema, score_with_teacher)

SMALL = dict(n_blocks=2, main_width=64, hidden_width=64)


def small_cfg(**kw):
    return TrainConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def two_gauss_model():
    X = gen_two_gaussians(2000, 0).X
    return fit_dsm(X, small_cfg(epochs=60, seed=0))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(gamma=100.0)
    with pytest.raises(InvalidInputError):
        TrainConfig(gamma=0.0)
    with pytest.raises(InvalidInputError):
        TrainConfig(rho=1.5)
    with pytest.raises(InvalidInputError):
        TrainConfig(epochs=0)
    cfg = TrainConfig(seed=4, ema=True)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_filter_hand_trace():
    norms = np.array([0.5, 2.0, 0.1, 3.0, 0.7, 0.9, 1.1, 0.3, 1.5, 0.2])
    keep = filter_survivors(norms, 80.0)
    # ceil(0.8 * 10) = 8 survivors; 3.0 and 2.0 are dropped
    np.testing.assert_array_equal(keep, [0, 2, 4, 5, 6, 7, 8, 9])


def test_filter_cardinality():
    rng = np.random.default_rng(0)
    for _ in range(200):
        b = int(rng.integers(2, 300))
        gamma = float(rng.uniform(0.5, 99.5))
        keep = filter_survivors(rng.random(b), gamma)
        expected = math.ceil(gamma * b / 100.0)
        assert len(keep) == (expected if expected >= 2 else b)


def test_filter_ties_and_fallback():
    np.testing.assert_array_equal(filter_survivors(np.zeros(6), 50.0), np.arange(6))
    np.testing.assert_array_equal(filter_survivors([3.0, 1.0, 2.0], 10.0), [0, 1, 2])


def test_initial_loss_balanced_across_sigmas():
    # zero head: each feature contributes eps_j^2 / 2 whatever its sigma
    arch = small_cfg().architecture(2)
    net = init_network(arch, 0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20_000, 2))
    eps = rng.standard_normal((20_000, 2))
    out = forward(net, x + np.array([0.1, 2.0]) * eps)
    per_feature = 0.5 * np.mean((out + eps) ** 2, axis=0)
    np.testing.assert_allclose(per_feature, 0.5, atol=0.02)
    assert abs(per_feature[0] - per_feature[1]) < 0.03


def test_score_lower_at_mode_1d():
    X = np.random.default_rng(0).standard_normal((2000, 1))
    model = fit_dsm(X, small_cfg(epochs=50, rule="global"))
    s = anomaly_score(model, np.array([[0.0], [4.0]]))
    assert s[0] < s[1]


def test_score_field_points_to_nearest_mode(two_gauss_model):
    angles = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * 0.8
    for mode in MODES:
        pts = mode + ring
        Z = (pts - [s.mean for s in two_gauss_model.feature_stats]) / \
            [s.scale for s in two_gauss_model.feature_stats]
        field = forward(two_gauss_model.net, Z)
        toward = (mode - pts)
        assert np.all(np.sum(field * toward, axis=1) > 0)


def test_mode_scores_below_probe_scores(two_gauss_model):
    centres = anomaly_score(two_gauss_model, MODES)
    t = np.linspace(-0.75, 1.75, 8)[:, None]
    probes = MODES[0] + t * (MODES[1] - MODES[0])
    assert centres.mean() < anomaly_score(two_gauss_model, probes).mean()


def test_training_deterministic():
    X = np.random.default_rng(2).standard_normal((300, 3))
    a = fit_dsm(X, small_cfg(epochs=5, seed=3))
    b = fit_dsm(X, small_cfg(epochs=5, seed=3))
    assert a.loss_history == b.loss_history
    assert a.net.checksum() == b.net.checksum()
    c = fit_dsm(X, small_cfg(epochs=5, seed=4))
    assert c.net.checksum() != a.net.checksum()


def test_loss_history_starts_near_half_d():
    X = np.random.default_rng(3).standard_normal((1000, 4))
    model = fit_dsm(X, small_cfg(epochs=3))
    assert len(model.loss_history) == 3
    assert model.loss_history[0] < 2.2
    assert model.loss_history[-1] < model.loss_history[0]


def test_ema_with_gamma_near_100_equals_plain_training():
    X = np.random.default_rng(4).standard_normal((400, 2))
    cfg = small_cfg(epochs=4, rule="global", clip_min=1e-3, clip_max=1e3, gamma=99.99, ema=True)
    assert np.all(fit_dsm(X, cfg).plan.sigmas == 0.5)
    a = fit_dsm(X, cfg)
    b = fit_kdsm_ema(X, cfg)
    assert a.net.checksum() == b.net.checksum()
    assert a.loss_history == b.loss_history


def test_fit_dispatch():
    X = np.random.default_rng(5).standard_normal((200, 2))
    cfg = small_cfg(epochs=2, ema=True)
    assert fit(X, cfg).net.checksum() == fit_kdsm_ema(X, cfg).net.checksum()


def test_teacher_lag_and_frozen_teacher():
    X = np.random.default_rng(6).standard_normal((300, 2))
    seen = []

    def check(step):
        # teacher unchanged between filtering and the student step
        out = forward(step["net"], X[step["batch"]], use_ema=True)
        np.testing.assert_array_equal(np.sqrt(np.sum(out ** 2, axis=1)), step["norms"])
        seen.append(step["survivors"])

    model = fit_kdsm_ema(X, small_cfg(epochs=3, rho=1.0, ema=True), callback=check)
    assert seen and all(s <= 128 for s in seen)
    init = init_network(model.net.arch, np.random.SeedSequence(0).spawn(2)[0])
    np.testing.assert_array_equal(model.net.ema_params, init.params)


def test_filter_drops_samples_during_training():
    X = np.random.default_rng(7).standard_normal((256, 2))
    counts = []
    fit_kdsm_ema(X, small_cfg(epochs=3, gamma=50.0, ema=True, rho=0.9),
                 callback=lambda s: counts.append(s["survivors"]))
    # first step: teacher output is all zeros, so every sample ties and survives
    assert counts[0] == 128
    assert min(counts[1:]) == 64


def test_teacher_scores():
    X = np.random.default_rng(8).standard_normal((400, 2))
    held = np.random.default_rng(9).standard_normal((200, 2)) * 1.5
    m0 = fit_dsm(X, small_cfg(epochs=3, rho=0.0))
    np.testing.assert_array_equal(score_with_teacher(m0, held), anomaly_score(m0, held))
    m = fit_dsm(X, small_cfg(epochs=20, rho=0.99))
    rho = stats.spearmanr(score_with_teacher(m, held), anomaly_score(m, held)).statistic
    assert rho > 0
    m.net.ema_params = None
    with pytest.raises(StateError):
        score_with_teacher(m, held)


def test_teacher_equals_student_at_init():
    X = np.random.default_rng(10).standard_normal((50, 2))
    m = fit_dsm(X, small_cfg(epochs=1))
    m.net.init_ema()
    np.testing.assert_array_equal(score_with_teacher(m, X), anomaly_score(m, X))


def test_scoring_is_pure_and_deterministic(two_gauss_model):
    before = two_gauss_model.net.checksum()
    x = np.array([[0.0, 0.0], [1.0, -1.0], [0.0, 0.0]])
    s = anomaly_score(two_gauss_model, x)
    assert two_gauss_model.net.checksum() == before
    assert s[0] == s[2] and np.all(s >= 0) and np.all(np.isfinite(s))
    np.testing.assert_array_equal(s, anomaly_score(two_gauss_model, x))
    with pytest.raises(InvalidInputError):
        anomaly_score(two_gauss_model, np.zeros((2, 3)))


def test_score_invariant_to_affine_rescaling():
    X = np.random.default_rng(11).standard_normal((500, 2))
    probe = np.random.default_rng(12).standard_normal((20, 2)) * 2
    a, b = np.array([3.0, 0.25]), np.array([-7.0, 40.0])
    m1 = fit_dsm(X, small_cfg(epochs=5))
    m2 = fit_dsm(a * X + b, small_cfg(epochs=5))
    np.testing.assert_allclose(anomaly_score(m2, a * probe + b), anomaly_score(m1, probe), rtol=1e-6)


def test_bad_data_and_divergence():
    with pytest.raises(InvalidInputError):
        fit_dsm(np.array([[1.0, np.nan]] * 10), small_cfg(epochs=1))
    X = np.random.default_rng(13).standard_normal((200, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(NumericError) as info:
            fit_dsm(X, small_cfg(epochs=5, lr=1e200))
    assert info.value.epoch == 1


def test_save_load_round_trip(tmp_path, two_gauss_model):
    paths = two_gauss_model.save(tmp_path / "m")
    assert all(p.exists() for p in paths)
    back = TrainedModel.load(tmp_path / "m")
    assert back.net.checksum() == two_gauss_model.net.checksum()
    assert back.config == two_gauss_model.config
    assert back.loss_history == two_gauss_model.loss_history
    np.testing.assert_array_equal(back.plan.sigmas, two_gauss_model.plan.sigmas)
    x = np.random.default_rng(14).standard_normal((10, 2))
    np.testing.assert_array_equal(anomaly_score(back, x), anomaly_score(two_gauss_model, x))
    with pytest.raises(InvalidInputError):
        TrainedModel.load(tmp_path / "missing")
