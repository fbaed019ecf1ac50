"""scikit-learn style wrappers around the saddle solver and the Langevin ensemble."""

from __future__ import annotations

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .datagen import CnnArch, QuadArch
from .langevin import LangevinConfig, ensemble_predict, train_ensemble
from .saddle import SaddleConfig, predict_test, solve_saddle


def _build_arch(est, d: int):
    if est.model == "cnn":
        S = est.S
        if S is None or d % S:
            raise ValueError(f"input dimension {d} is not a multiple of S={S}")
        N = d // S if est.N is None else est.N
        if N * S != d:
            raise ValueError(f"N*S = {N * S} does not match input dimension {d}")
        return CnnArch(N, S, est.C, est.sigma_a2, est.sigma_w2)
    if est.model == "quad":
        return QuadArch(d, est.M, est.sigma_w2)
    raise ValueError(f"model must be 'cnn' or 'quad', got {est.model!r}")


class ShiftedTargetGPRegressor(RegressorMixin, BaseEstimator):
    """GP regression on self-consistently shifted targets.

    With ``cumulants=False`` this is plain GP regression with the network's
    NNGP kernel.
    """

    def __init__(self, model="cnn", S=None, N=None, C=16, M=None, sigma_a2=1.0, sigma_w2=1.0, sigma2=1.0,
                 cumulants=True, method="newton_krylov", tol=1e-10, annealing=False, anneal_start=1.0,
                 anneal_stages=12, cnn_mode="resummed"):
        self.model = model
        self.S = S
        self.N = N
        self.C = C
        self.M = M
        self.sigma_a2 = sigma_a2
        self.sigma_w2 = sigma_w2
        self.sigma2 = sigma2
        self.cumulants = cumulants
        self.method = method
        self.tol = tol
        self.annealing = annealing
        self.anneal_start = anneal_start
        self.anneal_stages = anneal_stages
        self.cnn_mode = cnn_mode

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        self.arch_ = _build_arch(self, X.shape[1])
        cfg = SaddleConfig(method=self.method, tol=self.tol, anneal_start=self.anneal_start,
                           anneal_stages=self.anneal_stages if self.annealing else 1, cnn_mode=self.cnn_mode)
        self.solution_ = solve_saddle(self.arch_, X, y, self.sigma2, cfg, cumulants=self.cumulants)
        self.dual_ = self.solution_.dual
        self.discrepancies_ = self.solution_.discrepancies.values
        self.target_shift_ = self.solution_.shift.train
        self.converged_ = self.solution_.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = validate_data(self, X, reset=False)
        return predict_test(self.solution_, X)


class LangevinEnsembleRegressor(RegressorMixin, BaseEstimator):
    """Ensemble- and time-averaged predictor of networks trained with noisy GD."""

    def __init__(self, model="cnn", S=None, N=None, C=16, M=None, sigma_a2=1.0, sigma_w2=1.0, sigma2=1.0,
                 steps=20000, eps=2e-3, burn_in=None, thin=20, n_seeds=8, random_state=0):
        self.model = model
        self.S = S
        self.N = N
        self.C = C
        self.M = M
        self.sigma_a2 = sigma_a2
        self.sigma_w2 = sigma_w2
        self.sigma2 = sigma2
        self.steps = steps
        self.eps = eps
        self.burn_in = burn_in
        self.thin = thin
        self.n_seeds = n_seeds
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        self.arch_ = _build_arch(self, X.shape[1])
        cfg = LangevinConfig(sigma2=self.sigma2, eps=self.eps, steps=self.steps, burn_in=self.burn_in,
                             thin=self.thin, n_seeds=self.n_seeds, record_params=True)
        self.stats_ = train_ensemble(self.arch_, X, y, None, cfg, seed=self.random_state)
        self.alpha_train_ = self.stats_.alpha_train
        return self

    def predict(self, X):
        check_is_fitted(self, "stats_")
        X = validate_data(self, X, reset=False)
        return ensemble_predict(self.arch_, self.stats_.param_snapshots, X)
