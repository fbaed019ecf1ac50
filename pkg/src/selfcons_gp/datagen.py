"""Architectures, teachers, input measures and exact network evaluation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .seeding import make_rng


class Measure(str, Enum):
    GAUSSIAN_UNIT = "gaussian_unit"
    GAUSSIAN_1_OVER_D = "gaussian_1_over_d"
    HYPERSPHERE = "hypersphere"


@dataclass(frozen=True)
class CnnArch:
    """Two-layer linear CNN with ``N`` non-overlapping windows of length ``S``."""

    N: int
    S: int
    C: int
    sigma_a2: float = 1.0
    sigma_w2: float = 1.0

    def __post_init__(self):
        for name in ("N", "S", "C"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (self.sigma_a2 > 0 and self.sigma_w2 > 0):
            raise ValueError("prior variances must be positive")

    @property
    def d(self) -> int:
        return self.N * self.S

    @property
    def lam(self) -> float:
        return self.sigma_a2 * self.sigma_w2 / (self.N * self.S)

    def with_channels(self, C: int) -> "CnnArch":
        return CnnArch(self.N, self.S, C, self.sigma_a2, self.sigma_w2)


@dataclass(frozen=True)
class CnnParams:
    a: np.ndarray  # (N, C)
    w: np.ndarray  # (S, C)

    def check(self, arch: CnnArch) -> None:
        if self.a.shape != (arch.N, arch.C) or self.w.shape != (arch.S, arch.C):
            raise ValueError(
                f"parameter shapes a{self.a.shape}, w{self.w.shape} do not match "
                f"N={arch.N}, S={arch.S}, C={arch.C}"
            )


@dataclass(frozen=True)
class QuadArch:
    """Quadratic two-layer network f(x) = sum_m (w_m.x)^2 - sigma_w2 |x|^2."""

    d: int
    M: int
    sigma_w2: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1 or int(self.M) != self.M or self.M < 1:
            raise ValueError("d and M must be positive integers")
        if not self.sigma_w2 > 0:
            raise ValueError("sigma_w2 must be positive")

    @property
    def kernel_scale(self) -> float:
        return 2.0 * self.sigma_w2**2 / self.M


@dataclass
class Dataset:
    X: np.ndarray
    g: np.ndarray
    measure: str
    seed: int
    radius: float = 1.0
    teacher: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        if self.X.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if self.g.shape[0] != self.X.shape[0]:
            raise ValueError("X and g disagree on the number of samples")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("inputs must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def save(self, path: str) -> None:
        """Write ``<path>.npz`` plus a ``<path>.json`` sidecar."""
        base = path[:-4] if path.endswith(".npz") else path
        os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
        np.savez(base + ".npz", X=self.X, g=self.g)
        meta = {
            "n": self.n,
            "d": self.d,
            "measure": self.measure,
            "radius": self.radius,
            "seed": int(self.seed),
            "teacher": self.teacher,
        }
        with open(base + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "Dataset":
        base = path[:-4] if path.endswith(".npz") else path
        with open(base + ".json") as fh:
            meta = json.load(fh)
        with np.load(base + ".npz") as arrs:
            X, g = arrs["X"], arrs["g"]
        return cls(X, g, meta["measure"], meta["seed"], meta.get("radius", 1.0), meta.get("teacher", {}))


def sample_inputs(n: int, d: int, measure="gaussian_unit", seed=0, radius: float = 1.0) -> np.ndarray:
    """Draw an ``n x d`` input matrix from one of the supported measures."""
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    try:
        m = Measure(measure)
    except ValueError:
        raise ValueError(f"unknown measure {measure!r}; expected one of {[x.value for x in Measure]}") from None
    rng = make_rng(seed, "inputs")
    X = rng.standard_normal((n, d))
    if m is Measure.GAUSSIAN_1_OVER_D:
        X /= np.sqrt(d)
    elif m is Measure.HYPERSPHERE:
        if not radius > 0:
            raise ValueError("radius must be positive")
        X *= radius / np.linalg.norm(X, axis=1, keepdims=True)
    return X


def windows(X: np.ndarray, S: int) -> np.ndarray:
    """View inputs as ``(n, N, S)`` non-overlapping windows."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if d % S:
        raise ValueError(f"input dimension {d} is not a multiple of S={S}")
    return X.reshape(n, d // S, S)


def prior_cnn_params(arch: CnnArch, rng) -> CnnParams:
    a = rng.standard_normal((arch.N, arch.C)) * np.sqrt(arch.sigma_a2 / (arch.C * arch.N))
    w = rng.standard_normal((arch.S, arch.C)) * np.sqrt(arch.sigma_w2 / arch.S)
    return CnnParams(a, w)


def make_cnn_teacher(arch: CnnArch, seed=0, normalize: bool = True) -> CnnParams:
    """Single-channel teacher drawn from the layer priors.

    With ``normalize`` the teacher is rescaled to ``|w*|^2 = 1`` and
    ``sum_i a*_i^2 = 1``.
    """
    teacher_arch = arch.with_channels(1)
    p = prior_cnn_params(teacher_arch, make_rng(seed, "cnn_teacher"))
    if normalize:
        return CnnParams(p.a / np.linalg.norm(p.a), p.w / np.linalg.norm(p.w))
    return p


def eval_cnn(arch: CnnArch, params: CnnParams, X: np.ndarray) -> np.ndarray:
    """f(x) = sum_{i,c} a_ic (w_c . x_i) over non-overlapping windows x_i."""
    a, w = np.asarray(params.a, float), np.asarray(params.w, float)
    if a.shape[0] != arch.N or w.shape[0] != arch.S or a.shape[1] != w.shape[1]:
        raise ValueError(f"parameter shapes a{a.shape}, w{w.shape} incompatible with N={arch.N}, S={arch.S}")
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != arch.d:
        raise ValueError(f"inputs have dimension {X.shape[1]}, expected {arch.d}")
    Z = windows(X, arch.S)  # (n, N, S)
    # the effective linear map of the network is the N x S matrix a w^T
    return np.einsum("nis,is->n", Z, a @ w.T)


def make_quadratic_teacher(d: int, sigma_w2: float = 1.0, seed=0) -> np.ndarray:
    """Teacher direction with i.i.d. unit normal entries.

    ``sigma_w2`` only enters when the teacher is evaluated; it is accepted
    here so the call signature mirrors the student.
    """
    if d < 1:
        raise ValueError("d must be positive")
    return make_rng(seed, "quad_teacher").standard_normal(d)


def eval_quadratic(W: np.ndarray, sigma_w2: float, X: np.ndarray) -> np.ndarray:
    """f(x) = sum_m (w_m . x)^2 - sigma_w2 |x|^2, ``W`` is ``M x d``."""
    W = np.atleast_2d(np.asarray(W, float))
    X = np.atleast_2d(np.asarray(X, float))
    if W.shape[1] != X.shape[1]:
        raise ValueError(f"weights have dimension {W.shape[1]}, inputs {X.shape[1]}")
    H = X @ W.T
    return np.sum(H * H, axis=1) - sigma_w2 * np.sum(X * X, axis=1)


def eval_quadratic_teacher(w_star: np.ndarray, sigma_w2: float, X: np.ndarray) -> np.ndarray:
    return eval_quadratic(np.asarray(w_star, float).reshape(1, -1), sigma_w2, X)


def make_cnn_dataset(arch: CnnArch, n: int, seed=0, measure="gaussian_unit", teacher_seed=None,
                     normalize: bool = True) -> tuple[Dataset, CnnParams]:
    teacher = make_cnn_teacher(arch, seed if teacher_seed is None else teacher_seed, normalize)
    X = sample_inputs(n, arch.d, measure, seed)
    g = eval_cnn(arch.with_channels(1), teacher, X)
    spec = {"model": "cnn", "N": arch.N, "S": arch.S, "normalize": normalize}
    return Dataset(X, g, Measure(measure).value, int(seed), teacher=spec), teacher


def make_quad_dataset(arch: QuadArch, n: int, seed=0, measure="hypersphere", radius: float = 1.0,
                      teacher_seed=None) -> tuple[Dataset, np.ndarray]:
    w_star = make_quadratic_teacher(arch.d, arch.sigma_w2, seed if teacher_seed is None else teacher_seed)
    X = sample_inputs(n, arch.d, measure, seed, radius)
    g = eval_quadratic_teacher(w_star, arch.sigma_w2, X)
    spec = {"model": "quad", "d": arch.d, "sigma_w2": arch.sigma_w2}
    return Dataset(X, g, Measure(measure).value, int(seed), radius, spec), w_star


def arch_dict(arch) -> dict:
    return asdict(arch)
