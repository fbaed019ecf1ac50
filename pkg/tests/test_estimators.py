import numpy as np
import pytest
from sklearn.base import clone
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, DotProduct

from selfcons_gp import LangevinEnsembleRegressor, ShiftedTargetGPRegressor
from selfcons_gp.datagen import CnnArch, make_cnn_dataset, sample_inputs


@pytest.fixture(scope="module")
def data():
    arch = CnnArch(3, 4, 1)
    ds, _ = make_cnn_dataset(arch, 25, seed=8)
    return ds.X, ds.g, sample_inputs(7, arch.d, seed=9)


def test_plain_gp_matches_sklearn(data):
    X, y, Xt = data
    est = ShiftedTargetGPRegressor(S=4, cumulants=False, sigma2=0.4).fit(X, y)
    lam = 1.0 / 12
    ref = GaussianProcessRegressor(ConstantKernel(lam, "fixed") * DotProduct(0.0, "fixed"), alpha=0.4,
                                   optimizer=None).fit(X, y)
    assert np.allclose(est.predict(Xt), ref.predict(Xt), rtol=1e-9, atol=1e-12)


def test_shifted_gp_fit_attributes(data):
    X, y, Xt = data
    est = ShiftedTargetGPRegressor(S=4, C=6, sigma2=0.4).fit(X, y)
    assert est.converged_
    assert est.n_features_in_ == 12
    assert np.allclose(est.discrepancies_, 0.4 * est.dual_)
    assert est.predict(Xt).shape == (7,)
    assert -1.0 <= est.score(X, y) <= 1.0
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 5)))


def test_params_roundtrip():
    est = ShiftedTargetGPRegressor(S=3, C=9, annealing=True)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(C=12)
    assert c.C == 12 and est.C == 9


def test_bad_architecture(data):
    X, y, _ = data
    with pytest.raises(ValueError, match="multiple"):
        ShiftedTargetGPRegressor(S=5).fit(X, y)
    with pytest.raises(ValueError, match="model"):
        ShiftedTargetGPRegressor(model="rnn", S=4).fit(X, y)


def test_quad_estimator():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((15, 4)) / 2
    y = (X @ np.array([1.0, 0.0, 0.0, 0.0])) ** 2 - np.sum(X**2, 1)
    est = ShiftedTargetGPRegressor(model="quad", M=8, sigma2=0.05, annealing=True, anneal_stages=3).fit(X, y)
    assert est.converged_


def test_langevin_estimator(data):
    X, y, Xt = data
    est = LangevinEnsembleRegressor(S=4, C=4, steps=400, thin=20, n_seeds=2, random_state=3).fit(X, y)
    assert np.allclose(est.predict(X), est.stats_.mean_train_output, rtol=1e-10)
    assert np.isfinite(est.alpha_train_)
    again = clone(est).fit(X, y)
    assert np.array_equal(again.predict(Xt), est.predict(Xt))
