"""Cumulant contractions and target shifts for the two tractable models.

Both models have a closed-form cumulant generating function. For the linear
CNN, with ``B = sum_mu v_mu Z_mu`` (``Z_mu`` the ``N x S`` window matrix of
sample ``mu``) and ``eps = lam / C``::

    C(v) = -(C/2) log det(I_S - eps B^T B)

whose ``v^{2m}`` Taylor coefficients are the even cumulants. Differentiating
gives the target shift on any evaluation point ``x`` with window matrix
``Z_x``::

    dg(x) = lam <Z_x, B [(I - eps B^T B)^{-1} - I]>

whose leading terms are the kappa_4 and kappa_6 contractions
``(lam^2/C) <Z_x, B B^T B>`` and ``(lam^3/C^2) <Z_x, B (B^T B)^2>``.

For the quadratic network the generating function is
``-(M/2) log det(I - (2 sigma_w2/M) sum_mu v_mu x_mu x_mu^T) - sigma_w2 sum_mu v_mu |x_mu|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .datagen import CnnArch, QuadArch, windows
from .kernels import cross_gram, spec_for


class CumulantDomainError(ArithmeticError):
    """The dual vector left the domain where the generating function is finite."""

    def __init__(self, message: str, radius: float):
        super().__init__(message)
        self.radius = radius


@dataclass(frozen=True)
class WindowGrams:
    """Window matrices of a training set, shape ``(n, N, S)``."""

    Z: np.ndarray

    @classmethod
    def from_inputs(cls, X, S: int) -> "WindowGrams":
        return cls(np.ascontiguousarray(windows(np.atleast_2d(X), S)))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def combine(self, v) -> np.ndarray:
        """``B = sum_mu v_mu Z_mu``."""
        v = np.asarray(v, float).reshape(-1)
        if v.size != self.n:
            raise ValueError(f"dual vector has length {v.size}, expected {self.n}")
        n, N, S = self.Z.shape
        return (v @ self.Z.reshape(n, N * S)).reshape(N, S)

    def pair(self, M: np.ndarray) -> np.ndarray:
        """``<Z_mu, M>_F`` for every sample."""
        n, N, S = self.Z.shape
        return self.Z.reshape(n, N * S) @ M.reshape(N * S)

    def overlap(self, mu: int, nu: int) -> np.ndarray:
        """``N x N`` matrix of window dot products ``x_mu,i . x_nu,j``."""
        return self.Z[mu] @ self.Z[nu].T


def _as_grams(X, arch: CnnArch) -> WindowGrams:
    return X if isinstance(X, WindowGrams) else WindowGrams.from_inputs(X, arch.S)


def cnn_kappa4_contract(X, arch: CnnArch, v) -> np.ndarray:
    """``(1/3!) sum kappa_4(nu, m1, m2, m3) v_m1 v_m2 v_m3`` for every ``nu``."""
    Wg = _as_grams(X, arch)
    B = Wg.combine(v)
    return (arch.lam**2 / arch.C) * Wg.pair(B @ (B.T @ B))


def cnn_kappa6_contract(X, arch: CnnArch, v) -> np.ndarray:
    """``(1/5!) sum kappa_6(nu, m1..m5) v_m1 ... v_m5`` for every ``nu``."""
    Wg = _as_grams(X, arch)
    B = Wg.combine(v)
    G = B.T @ B
    return (arch.lam**3 / arch.C**2) * Wg.pair(B @ (G @ G))


def cnn_resummation_radius(X, arch: CnnArch, v) -> float:
    """Largest eigenvalue of ``(lam/C) B^T B``; the closed form needs it below one."""
    B = _as_grams(X, arch).combine(v)
    return float((arch.lam / arch.C) * np.linalg.norm(B, 2) ** 2)


def _resolvent(B: np.ndarray, eps: float) -> np.ndarray:
    G = B.T @ B
    top = eps * float(np.linalg.eigvalsh(G)[-1]) if G.size else 0.0
    if top >= 1.0:
        raise CumulantDomainError(
            f"resummation radius {top:.6g} >= 1: the duals exceed the alpha_pole bound", top
        )
    return linalg.inv(np.eye(G.shape[0]) - eps * G)


def cnn_delta_g(X, arch: CnnArch, v, mode: str = "resummed", order: int = 6, X_eval=None) -> np.ndarray:
    """Target shift of the linear CNN at dual ``v``.

    ``mode="series"`` sums the kappa_4 (``order >= 4``) and kappa_6
    (``order >= 6``) terms; ``mode="resummed"`` uses the closed form and
    raises :class:`CumulantDomainError` outside its domain. ``X_eval``
    selects the evaluation points (default: the training set).
    """
    Wg = _as_grams(X, arch)
    We = Wg if X_eval is None else _as_grams(X_eval, arch)
    B = Wg.combine(v)
    eps = arch.lam / arch.C
    if mode == "series":
        if order < 4 or order % 2:
            raise ValueError("series order must be an even integer >= 4")
        G = B.T @ B
        M = np.zeros_like(B)
        P = B.copy()
        for _ in range(4, order + 1, 2):
            P = eps * (P @ G)
            M += P
        return arch.lam * We.pair(M)
    if mode != "resummed":
        raise ValueError(f"unknown mode {mode!r}")
    R = _resolvent(B, eps)
    return arch.lam * We.pair(B @ (R - np.eye(R.shape[0])))


def cnn_mean(X, arch: CnnArch, v, X_eval=None) -> np.ndarray:
    """Full saddle-point mean ``dC/dv`` at the evaluation points."""
    Wg = _as_grams(X, arch)
    We = Wg if X_eval is None else _as_grams(X_eval, arch)
    B = Wg.combine(v)
    R = _resolvent(B, arch.lam / arch.C)
    return arch.lam * We.pair(B @ R)


def cnn_cgf(X, arch: CnnArch, v) -> float:
    B = _as_grams(X, arch).combine(v)
    ev = np.linalg.eigvalsh(B.T @ B) * (arch.lam / arch.C)
    if ev.size and ev[-1] >= 1.0:
        raise CumulantDomainError("generating function diverges", float(ev[-1]))
    return float(-0.5 * arch.C * np.sum(np.log1p(-ev)))


def cnn_delta_K(X, arch: CnnArch, v) -> np.ndarray:
    """Analytic Jacobian ``dK[nu, mu] = d dg_nu / d v_mu`` (symmetric)."""
    Wg = _as_grams(X, arch)
    Z = Wg.Z
    n, N, S = Z.shape
    B = Wg.combine(v)
    eps = arch.lam / arch.C
    R = _resolvent(B, eps)
    P = B @ R
    Zf = Z.reshape(n, N * S)
    # lam <Z_nu, Z_mu (R - I)>
    t1 = Zf @ (Z @ (R - np.eye(S))).reshape(n, N * S).T
    # lam eps <Z_nu, P Z_mu^T P>  = lam eps tr(A_nu A_mu), A = Z^T P
    A = np.einsum("kis,it->kst", Z, P)
    t2 = A.reshape(n, S * S) @ A.transpose(0, 2, 1).reshape(n, S * S).T
    # lam eps <Z_nu, P B^T Z_mu R> = lam eps <B P^T Z_nu R, Z_mu>
    Gn = np.einsum("it,kts->kis", B @ P.T, Z @ R).reshape(n, N * S)
    t3 = Gn @ Zf.T
    J = arch.lam * (t1 + eps * (t2 + t3))
    return 0.5 * (J + J.T)


def cnn_delta_K_matvec(X, arch: CnnArch, v, u, X_eval=None) -> np.ndarray:
    """Directional derivative of the target shift along ``u``."""
    Wg = _as_grams(X, arch)
    We = Wg if X_eval is None else _as_grams(X_eval, arch)
    B = Wg.combine(v)
    U = Wg.combine(u)
    eps = arch.lam / arch.C
    R = _resolvent(B, eps)
    S = R.shape[0]
    D = eps * (U.T @ B + B.T @ U)
    M = U @ (R - np.eye(S)) + B @ (R @ D @ R)
    return arch.lam * We.pair(M)


def cnn_second_directional(X, arch: CnnArch, v, u, X_eval=None) -> np.ndarray:
    """``d^2/dt^2 dg(v + t u)`` at ``t = 0``."""
    Wg = _as_grams(X, arch)
    We = Wg if X_eval is None else _as_grams(X_eval, arch)
    B = Wg.combine(v)
    U = Wg.combine(u)
    eps = arch.lam / arch.C
    R = _resolvent(B, eps)
    D = eps * (U.T @ B + B.T @ U)
    RD = R @ D
    R1 = RD @ R
    R2 = 2.0 * RD @ R1 + 2.0 * eps * R @ (U.T @ U) @ R
    return arch.lam * We.pair(2.0 * U @ R1 + B @ R2)


# ---------------------------------------------------------------------------
# quadratic network


class QuadBracket:
    """Factorized ``I - (2 sigma_w2/M) sum_mu v_mu x_mu x_mu^T`` for one dual."""

    def __init__(self, X, arch: QuadArch, v):
        X = np.atleast_2d(np.asarray(X, float))
        v = np.asarray(v, float).reshape(-1)
        if v.size != X.shape[0]:
            raise ValueError(f"dual vector has length {v.size}, expected {X.shape[0]}")
        if X.shape[1] != arch.d:
            raise ValueError(f"inputs have dimension {X.shape[1]}, expected {arch.d}")
        self.X, self.arch, self.v = X, arch, v
        c = 2.0 * arch.sigma_w2 / arch.M
        Bm = np.eye(arch.d) - c * (X.T * v) @ X
        Bm = 0.5 * (Bm + Bm.T)
        try:
            self._cho = linalg.cho_factor(Bm, lower=True, check_finite=False)
        except linalg.LinAlgError:
            lo = float(np.linalg.eigvalsh(Bm)[0])
            raise CumulantDomainError(
                f"bracket matrix is not positive definite (smallest eigenvalue {lo:.6g})", lo
            ) from None
        self.matrix = Bm

    def solve(self, Y) -> np.ndarray:
        return linalg.cho_solve(self._cho, Y, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def projector(self, A, Bpts=None) -> np.ndarray:
        """``A Binv B^T`` between two point sets."""
        A = np.atleast_2d(A)
        Bpts = A if Bpts is None else np.atleast_2d(Bpts)
        return A @ self.solve(Bpts.T)

    def quad_forms(self, X_eval) -> np.ndarray:
        X_eval = np.atleast_2d(X_eval)
        return np.einsum("ij,ji->i", X_eval, self.solve(X_eval.T))


def quad_cgf(v, X, arch: QuadArch) -> float:
    br = QuadBracket(X, arch, v)
    sq = np.einsum("ij,ij->i", br.X, br.X)
    return -0.5 * arch.M * br.logdet() - arch.sigma_w2 * float(br.v @ sq)


def quad_mean(v, X, arch: QuadArch, X_eval=None, bracket: QuadBracket | None = None) -> np.ndarray:
    """Saddle-point mean ``sigma_w2 x^T Binv x - sigma_w2 |x|^2``."""
    br = bracket or QuadBracket(X, arch, v)
    Xe = br.X if X_eval is None else np.atleast_2d(np.asarray(X_eval, float))
    return arch.sigma_w2 * (br.quad_forms(Xe) - np.einsum("ij,ij->i", Xe, Xe))


def quad_delta_g(v, X, arch: QuadArch, X_eval=None, bracket: QuadBracket | None = None) -> np.ndarray:
    """Target shift ``mean - sum_mu K(x, x_mu) v_mu`` at the evaluation points."""
    br = bracket or QuadBracket(X, arch, v)
    Xe = br.X if X_eval is None else np.atleast_2d(np.asarray(X_eval, float))
    K = cross_gram(spec_for(arch), br.X, Xe)
    return quad_mean(v, X, arch, Xe, br) - K.T @ br.v


def quad_delta_K(v, X, arch: QuadArch, bracket: QuadBracket | None = None) -> np.ndarray:
    """Analytic Jacobian ``(2 sigma_w2^2/M) (x_mu^T Binv x_nu)^2 - K_mu_nu``."""
    br = bracket or QuadBracket(X, arch, v)
    P = br.projector(br.X)
    P = 0.5 * (P + P.T)
    G = br.X @ br.X.T
    return arch.kernel_scale * (P * P - G * G)


def quad_delta_K_matvec(v, X, arch: QuadArch, u, bracket: QuadBracket | None = None) -> np.ndarray:
    br = bracket or QuadBracket(X, arch, v)
    P = br.projector(br.X)
    G = br.X @ br.X.T
    return arch.kernel_scale * ((P * P) @ u - (G * G) @ u)


def quad_second_contract(v, X, arch: QuadArch, A, bracket: QuadBracket | None = None) -> np.ndarray:
    """``sum_ab d_a d_b dg_mu A_ab`` for a symmetric weight matrix ``A``."""
    br = bracket or QuadBracket(X, arch, v)
    P = br.projector(br.X)
    P = 0.5 * (P + P.T)
    c = 8.0 * arch.sigma_w2**3 / arch.M**2
    return c * np.einsum("ma,ab,bm->m", P, P * A, P)


# ---------------------------------------------------------------------------
# model-generic dispatch used by the solver and diagnostics


class ModelCumulants:
    """Uniform interface over the two models for a fixed training set."""

    def __init__(self, arch, X, cnn_mode: str = "resummed", cnn_order: int = 6):
        self.arch = arch
        self.X = np.atleast_2d(np.asarray(X, float))
        self.is_cnn = isinstance(arch, CnnArch)
        self.cnn_mode = cnn_mode
        self.cnn_order = cnn_order
        if self.is_cnn:
            self.grams = WindowGrams.from_inputs(self.X, arch.S)
        self.K = cross_gram(spec_for(arch), self.X, self.X)
        self.K = 0.5 * (self.K + self.K.T)

    def delta_g(self, v, X_eval=None) -> np.ndarray:
        if self.is_cnn:
            Xe = None if X_eval is None else WindowGrams.from_inputs(X_eval, self.arch.S)
            return cnn_delta_g(self.grams, self.arch, v, self.cnn_mode, self.cnn_order, Xe)
        return quad_delta_g(v, self.X, self.arch, X_eval)

    def delta_K(self, v) -> np.ndarray:
        if self.is_cnn:
            if self.cnn_mode != "resummed":
                return fd_jacobian(lambda w: self.delta_g(w), v)
            return cnn_delta_K(self.grams, self.arch, v)
        return quad_delta_K(v, self.X, self.arch)

    def delta_K_matvec(self, v, u) -> np.ndarray:
        if self.is_cnn:
            if self.cnn_mode != "resummed":
                h = 1e-6 * (1 + np.linalg.norm(v)) / max(np.linalg.norm(u), 1e-300)
                return (self.delta_g(v + h * u) - self.delta_g(v - h * u)) / (2 * h)
            return cnn_delta_K_matvec(self.grams, self.arch, v, u)
        return quad_delta_K_matvec(v, self.X, self.arch, u)

    def second_contract(self, v, A) -> np.ndarray:
        """``sum_ab d_a d_b dg_mu A_ab`` for symmetric ``A``."""
        if not self.is_cnn:
            return quad_second_contract(v, self.X, self.arch, A)
        vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
        out = np.zeros(self.X.shape[0])
        for lam_k, u in zip(vals, vecs.T):
            out += lam_k * cnn_second_directional(self.grams, self.arch, v, u)
        return out

    def check_domain(self, v) -> bool:
        try:
            if self.is_cnn:
                if self.cnn_mode == "resummed":
                    return cnn_resummation_radius(self.grams, self.arch, v) < 1.0
                return True
            QuadBracket(self.X, self.arch, v)
            return True
        except CumulantDomainError:
            return False


def fd_jacobian(fun, v, rel_step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian ``J[i, j] = d fun_i / d v_j``."""
    v = np.asarray(v, float)
    cols = []
    for j in range(v.size):
        h = rel_step * (1.0 + abs(v[j]))
        e = np.zeros_like(v)
        e[j] = h
        cols.append((fun(v + e) - fun(v - e)) / (2 * h))
    return np.column_stack(cols)
