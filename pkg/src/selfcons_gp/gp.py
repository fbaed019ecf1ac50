"""GP regression on plain and shifted targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import RegularizedGram, factorize


@dataclass(frozen=True)
class TargetShift:
    train: np.ndarray
    test: np.ndarray | None = None


@dataclass(frozen=True)
class Discrepancies:
    values: np.ndarray
    sigma2: float

    @property
    def dual(self) -> np.ndarray:
        return self.values / self.sigma2


@dataclass(frozen=True)
class GpFit:
    gram: RegularizedGram
    g: np.ndarray
    alpha_weights: np.ndarray
    shift: TargetShift | None = None

    @property
    def shift_train(self) -> np.ndarray:
        return np.zeros_like(self.g) if self.shift is None else self.shift.train


def fit_gp(K, g, sigma2: float, shift: TargetShift | None = None, gram: RegularizedGram | None = None) -> GpFit:
    """Solve ``(K + sigma2 I) w = g - dg``."""
    g = np.asarray(g, float).reshape(-1)
    if gram is None:
        gram = factorize(K, sigma2)
    if gram.n != g.size:
        raise ValueError("target length does not match the Gram matrix")
    target = g if shift is None else g - np.asarray(shift.train, float)
    return GpFit(gram, g, gram.solve(target), shift)


def gp_mean_test(fit: GpFit, cross_gram, shift_test=None) -> np.ndarray:
    """Predictive mean ``dg_* + K_*^T Kt^{-1} (g - dg)``.

    ``cross_gram`` is ``n_train x n_test``.
    """
    Ks = np.asarray(cross_gram, float)
    if Ks.ndim != 2 or Ks.shape[0] != fit.gram.n:
        raise ValueError(f"cross gram must have {fit.gram.n} rows, got shape {Ks.shape}")
    out = Ks.T @ fit.alpha_weights
    if shift_test is not None:
        out = out + np.asarray(shift_test, float)
    elif fit.shift is not None and fit.shift.test is not None:
        out = out + fit.shift.test
    return out


def gp_discrepancies_train(fit: GpFit) -> Discrepancies:
    """Train discrepancies ``g - <f>``.

    On the training set ``K Kt^{-1} = I - sigma2 Kt^{-1}``, so the shifted
    mean is ``g - sigma2 w`` (a jitter, if any, is folded in as extra noise).
    """
    s2 = fit.gram.sigma2 + fit.gram.jitter
    return Discrepancies(s2 * fit.alpha_weights, fit.gram.sigma2)


def gp_discrepancies_train_direct(fit: GpFit) -> Discrepancies:
    """Same quantity through the explicit ``K Kt^{-1}`` product; reference path."""
    dg = fit.shift_train
    mean = dg + fit.gram.K @ fit.alpha_weights
    return Discrepancies(fit.g - mean, fit.gram.sigma2)


def posterior_cov_test_gp(fit: GpFit, cross_gram, K_star_star) -> np.ndarray:
    Ks = np.asarray(cross_gram, float)
    Kss = np.atleast_2d(np.asarray(K_star_star, float))
    if Ks.shape[1] != Kss.shape[0]:
        raise ValueError("cross gram and test gram disagree on the number of test points")
    cov = Kss - Ks.T @ fit.gram.solve(Ks)
    return 0.5 * (cov + cov.T)


def posterior_cov_train_shifted(K, delta_K, sigma2: float) -> np.ndarray:
    """Train posterior covariance ``sigma2 I - sigma2^2 (sigma2 I + K + dK)^{-1}``."""
    K = np.asarray(K, float)
    A = K + np.asarray(delta_K, float) + sigma2 * np.eye(K.shape[0])
    try:
        Ainv = np.linalg.solve(A, np.eye(K.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("sigma2 I + K + dK is singular") from exc
    cov = sigma2 * np.eye(K.shape[0]) - sigma2**2 * Ainv
    return 0.5 * (cov + cov.T)


def empirical_alpha(predictions, targets) -> float:
    """Cosine-distance coefficient in ``<f> = (1 - alpha) g``."""
    f = np.asarray(predictions, float).ravel()
    g = np.asarray(targets, float).ravel()
    gg = float(g @ g)
    if gg == 0.0:
        raise ValueError("targets are identically zero")
    return 1.0 - float(f @ g) / gg
