import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfcons_gp.datagen import CnnArch, QuadArch, make_cnn_dataset, sample_inputs
from selfcons_gp.langevin import (LangevinConfig, LangevinDivergence, attach_test_alpha, bootstrap_alpha_stderr,
                                  derive_weight_decay, empirical_alpha_trace, ensemble_predict, init_params,
                                  prior_variances, snapshot_hidden_weights, train_ensemble)


@pytest.mark.parametrize("arch", [CnnArch(3, 4, 16, sigma_a2=1.5), QuadArch(5, 12, sigma_w2=0.8)])
def test_prior_variances_at_equilibrium(arch):
    s2 = 0.6
    cfg = LangevinConfig(sigma2=s2, steps=6000, burn_in=1000, thin=50, n_seeds=8, record_params=True)
    st_ = train_ensemble(arch, None, None, config=cfg, seed=1)
    gam = derive_weight_decay(arch, s2)
    for k, v in st_.param_snapshots.items():
        assert np.var(v) == pytest.approx(2 * s2 / gam[k], rel=0.05)
        assert 2 * s2 / gam[k] == pytest.approx(prior_variances(arch)[k], rel=1e-12)


def test_weight_decay_rejects_bad_sigma():
    with pytest.raises(ValueError):
        derive_weight_decay(CnnArch(1, 2, 1), 0.0)


def test_config_validation():
    assert LangevinConfig(steps=100).burn_in == 50
    assert LangevinConfig(steps=100, thin=10).n_snapshots == 5
    for bad in ({"sigma2": 0}, {"eps": -1}, {"steps": 10, "burn_in": 10}, {"thin": 0}, {"init": "warm"},
                {"eta": 0.0}):
        with pytest.raises(ValueError):
            LangevinConfig(**bad)


@pytest.fixture(scope="module")
def small():
    arch = CnnArch(2, 3, 4)
    ds, _ = make_cnn_dataset(arch.with_channels(1), 10, seed=5)
    Xt = sample_inputs(6, arch.d, seed=6)
    return arch, ds, Xt


def test_bitwise_determinism(small):
    arch, ds, Xt = small
    cfg = LangevinConfig(steps=400, thin=10, n_seeds=3)
    a = train_ensemble(arch, ds.X, ds.g, Xt, cfg, seed=9)
    b = train_ensemble(arch, ds.X, ds.g, Xt, cfg, seed=9)
    assert a.seed_train_means.tobytes() == b.seed_train_means.tobytes()
    assert a.seed_test_means.tobytes() == b.seed_test_means.tobytes()
    c = train_ensemble(arch, ds.X, ds.g, Xt, cfg, seed=10)
    assert not np.array_equal(a.seed_train_means, c.seed_train_means)


def test_seed_partitioning(small):
    # chains are independent streams: one run of 4 seeds equals two runs of 2
    arch, ds, _ = small
    cfg4 = LangevinConfig(steps=300, thin=10, n_seeds=4)
    cfg2 = LangevinConfig(steps=300, thin=10, n_seeds=2)
    full = train_ensemble(arch, ds.X, ds.g, None, cfg4, seed=2)
    lo = train_ensemble(arch, ds.X, ds.g, None, cfg2, seed=2)
    hi = train_ensemble(arch, ds.X, ds.g, None, cfg2, seed=2, seed_offset=2)
    assert np.allclose(full.seed_train_means, np.vstack([lo.seed_train_means, hi.seed_train_means]),
                       rtol=1e-12, atol=1e-14)


def test_init_params_shapes_and_cold():
    arch = CnnArch(2, 3, 5)
    p = init_params(arch, 4, seed=0)
    assert p["a"].shape == (4, 2, 5) and p["w"].shape == (4, 3, 5)
    assert all(np.all(v == 0) for v in init_params(arch, 2, 0, "cold").values())


def test_divergence_is_reported(small):
    arch, ds, _ = small
    cfg = LangevinConfig(steps=600, eta=5.0, n_seeds=2)
    with pytest.raises(LangevinDivergence) as err:
        train_ensemble(arch, ds.X, 50 * ds.g, None, cfg, seed=0)
    assert err.value.step <= 600


def test_ensemble_predict_matches_running_mean(small):
    arch, ds, Xt = small
    cfg = LangevinConfig(steps=400, thin=20, n_seeds=3, record_params=True, record_weights=True)
    st_ = train_ensemble(arch, ds.X, ds.g, Xt, cfg, seed=4)
    assert np.allclose(ensemble_predict(arch, st_.param_snapshots, ds.X), st_.mean_train_output, rtol=1e-10)
    assert np.allclose(ensemble_predict(arch, st_.param_snapshots, Xt, chunk=7), st_.mean_test_output, rtol=1e-10)
    W = snapshot_hidden_weights(st_)
    assert len(W) == 3 * cfg.n_snapshots and W[0].shape == (3, 4)


def test_rao_blackwell_mean_is_consistent(small):
    arch, ds, Xt = small
    cfg = LangevinConfig(steps=6000, thin=10, n_seeds=8, rao_blackwell=True)
    st_ = train_ensemble(arch, ds.X, ds.g, Xt, cfg, seed=3)
    rb = st_.rb_test_means.mean(0)
    plain = st_.seed_test_means.mean(0)
    se = st_.seed_test_means.std(0, ddof=1) / np.sqrt(8)
    assert np.all(np.abs(rb - plain) < 5 * se + 1e-3)
    # the conditional mean has lower seed-to-seed spread
    assert st_.rb_test_means.std(0).mean() < st_.seed_test_means.std(0).mean()


def test_snapshot_error_without_weights(small):
    arch, ds, _ = small
    st_ = train_ensemble(arch, ds.X, ds.g, None, LangevinConfig(steps=100, thin=10, n_seeds=1), seed=0)
    with pytest.raises(TypeError):
        snapshot_hidden_weights(st_)


def test_alpha_stderr_matches_bootstrap(rng):
    g = rng.standard_normal(20)
    M = 0.6 * g + 0.2 * rng.standard_normal((40, 20))
    a, se = empirical_alpha_trace(M, g)
    assert a == pytest.approx(0.4, abs=0.05)
    assert se == pytest.approx(bootstrap_alpha_stderr(M, g, n_boot=4000), rel=0.2)


def test_attach_test_alpha(small):
    arch, ds, Xt = small
    st_ = train_ensemble(arch, ds.X, ds.g, Xt, LangevinConfig(steps=200, thin=10, n_seeds=2), seed=0)
    attach_test_alpha(st_, np.ones(Xt.shape[0]))
    assert np.isfinite(st_.alpha_test)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1), offset=st.integers(0, 1000))
def test_init_streams_independent_of_batch(seed, offset):
    arch = QuadArch(3, 2)
    one = init_params(arch, 1, seed, seed_offset=offset + 1)["w"][0]
    two = init_params(arch, 2, seed, seed_offset=offset)["w"][1]
    assert np.array_equal(one, two)
