"""NNGP kernels for both models and regularized Gram factorizations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .datagen import CnnArch, QuadArch

JITTER_START = 1e-12
JITTER_MAX = 1e-6


class SPDFailure(np.linalg.LinAlgError):
    def __init__(self, jitter: float):
        super().__init__(f"K + sigma2 I is not positive definite even with jitter {jitter:.3g} * trace/n")
        self.jitter = jitter


@dataclass(frozen=True)
class KernelSpec:
    model: str  # "cnn_linear" or "quad"
    arch: CnnArch | QuadArch

    def __post_init__(self):
        if self.model not in ("cnn_linear", "quad"):
            raise ValueError(f"unknown kernel model {self.model!r}")
        if self.model == "cnn_linear" and not isinstance(self.arch, CnnArch):
            raise TypeError("cnn_linear needs a CnnArch")
        if self.model == "quad" and not isinstance(self.arch, QuadArch):
            raise TypeError("quad needs a QuadArch")

    @property
    def dim(self) -> int:
        return self.arch.d

    @property
    def scale(self) -> float:
        if self.model == "cnn_linear":
            return self.arch.lam
        return self.arch.kernel_scale


def spec_for(arch) -> KernelSpec:
    return KernelSpec("cnn_linear" if isinstance(arch, CnnArch) else "quad", arch)


def _check_dim(spec: KernelSpec, A: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != spec.dim:
        raise ValueError(f"input dimension {A.shape[1]} does not match kernel dimension {spec.dim}")
    return A


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, float).ravel()
    x2 = np.asarray(x2, float).ravel()
    if x.size != spec.dim or x2.size != spec.dim:
        raise ValueError(f"inputs must have dimension {spec.dim}")
    dot = float(x @ x2)
    return spec.scale * (dot if spec.model == "cnn_linear" else dot * dot)


def cross_gram(spec: KernelSpec, X, X_test) -> np.ndarray:
    """``K[mu, star]`` between training rows and test rows."""
    X = _check_dim(spec, X)
    X_test = _check_dim(spec, X_test)
    G = X @ X_test.T
    if spec.model == "quad":
        G = G * G
    return spec.scale * G


def gram(spec: KernelSpec, X) -> np.ndarray:
    K = cross_gram(spec, X, X)
    # enforce exact symmetry independent of BLAS summation order
    return 0.5 * (K + K.T)


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    X = _check_dim(spec, X)
    sq = np.einsum("ij,ij->i", X, X)
    return spec.scale * (sq if spec.model == "cnn_linear" else sq * sq)


@dataclass(frozen=True)
class RegularizedGram:
    """Factorized ``K + sigma2 I``; immutable once built."""

    K: np.ndarray
    sigma2: float
    jitter: float
    _chol: tuple | None
    _eig: tuple | None

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, float)
        if self._chol is not None:
            return linalg.cho_solve(self._chol, v, check_finite=False)
        vals, vecs = self._eig
        return vecs @ ((vecs.T @ v) / (vals[:, None] if v.ndim == 2 else vals))

    def matrix(self) -> np.ndarray:
        return self.K + (self.sigma2 + self.jitter) * np.eye(self.n)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def logdet(self) -> float:
        if self._chol is not None:
            return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))
        return float(np.sum(np.log(self._eig[0])))


def factorize(K, sigma2: float, allow_eig_fallback: bool = False) -> RegularizedGram:
    """Cholesky of ``K + sigma2 I`` with escalating diagonal jitter.

    The first attempt adds nothing; afterwards ``1e-12 * trace(K)/n`` is
    added and escalated by 10x up to ``1e-6 * trace(K)/n``. The jitter that
    was actually used is stored on the returned handle.
    """
    K = np.asarray(K, float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be square")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    n = K.shape[0]
    if n == 0:
        return RegularizedGram(K, sigma2, 0.0, (np.zeros((0, 0)), False), None)
    scale = max(float(np.trace(K)) / n, np.finfo(float).tiny)
    attempts = [0.0]
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        attempts.append(rel * scale)
        rel *= 10
    eye = np.eye(n)
    for jit in attempts:
        try:
            c = linalg.cho_factor(K + (sigma2 + jit) * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(c[0])):
            return RegularizedGram(K, sigma2, jit, c, None)
    if allow_eig_fallback:
        vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
        vals = np.clip(vals, 0.0, None) + sigma2
        return RegularizedGram(K, sigma2, 0.0, None, (vals, vecs))
    raise SPDFailure(attempts[-1] / scale)


@dataclass(frozen=True)
class EkParameters:
    model: str
    lam: float | None = None
    lam0: float | None = None
    lam2: float | None = None


def ek_parameters(arch) -> EkParameters:
    """Kernel eigenvalues entering the equivalent-kernel equations.

    CNN: the single linear-mode eigenvalue under N(0, I). Quadratic model
    on ``N(0, I/d)`` inputs: the two distinct eigenvalues of the quadratic
    sector, ``lam0`` for the trace mode and ``lam2`` for the traceless one.
    """
    if isinstance(arch, CnnArch):
        return EkParameters("cnn_linear", lam=arch.lam)
    d = arch.d
    s = arch.kernel_scale
    return EkParameters("quad", lam0=s * (2.0 / d**2 + 1.0 / d), lam2=s * 2.0 / d**2)
