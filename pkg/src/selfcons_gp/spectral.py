"""Hidden-weight covariance spectra, Marchenko-Pastur baseline and the spike surrogate Q."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate


def sigma_w(W) -> np.ndarray:
    """Normalized empirical covariance ``(S/C) W W^T`` of the conv filters."""
    W = np.atleast_2d(np.asarray(W, float))
    S, C = W.shape
    out = (S / C) * (W @ W.T)
    return 0.5 * (out + out.T)


def mp_ratio(S: int, C: float) -> float:
    if not C > 0 or not S > 0:
        raise ValueError("S and C must be positive")
    return S / C


def mp_edges(S: int, C: float) -> tuple[float, float]:
    r = math.sqrt(mp_ratio(S, C))
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def mp_atom(S: int, C: float) -> float:
    """Mass of the zero eigenvalue atom (nonzero only when S > C)."""
    return max(0.0, 1.0 - 1.0 / mp_ratio(S, C))


def mp_density(S: int, C: float, grid) -> np.ndarray:
    """Continuous part of the MP law for aspect ratio ``S/C`` and unit variance.

    For ``S > C`` a warning is issued; the continuous part then carries mass
    ``C/S`` and the rest sits in the atom at zero (see ``mp_atom``).
    """
    r = mp_ratio(S, C)
    if r > 1:
        warnings.warn(f"S/C = {r:.3g} > 1: the MP law has an atom of mass {1 - 1 / r:.3g} at zero",
                      stacklevel=2)
    lo, hi = mp_edges(S, C)
    x = np.asarray(grid, float)
    out = np.zeros_like(x)
    inside = (x > lo) & (x < hi) & (x > 0)
    xi = x[inside]
    out[inside] = np.sqrt((hi - xi) * (xi - lo)) / (2.0 * math.pi * r * xi)
    return out


def mp_cdf(S: int, C: float, x) -> np.ndarray:
    """CDF of the full MP law (atom included), by quadrature of ``mp_density``."""
    lo, hi = mp_edges(S, C)
    atom = mp_atom(S, C)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f = lambda t: float(mp_density(S, C, np.array([t]))[0])
        xs = np.atleast_1d(np.asarray(x, float))
        out = np.empty_like(xs)
        for i, v in enumerate(xs):
            if v < 0:
                out[i] = 0.0
            elif v <= lo:
                out[i] = atom
            elif v >= hi:
                out[i] = 1.0
            else:
                out[i] = atom + integrate.quad(f, lo, v, limit=200)[0]
    return out


def _unit(w_star) -> np.ndarray:
    w = np.asarray(w_star, float).ravel()
    nrm = float(np.linalg.norm(w))
    if nrm == 0.0:
        raise ValueError("w_star is zero")
    return w / nrm


def q_statistic(sigma_w_matrix, w_star) -> float:
    """``w*^T Sigma_W w*`` with ``w*`` normalized to unit length."""
    w = _unit(w_star)
    Sig = np.asarray(sigma_w_matrix, float)
    if Sig.shape != (w.size, w.size):
        raise ValueError(f"Sigma_W shape {Sig.shape} does not match w* of length {w.size}")
    return float(w @ Sig @ w)


def _lam(S: int, N: int, lam: float | None) -> float:
    return 1.0 / (N * S) if lam is None else float(lam)


def c_crit(S: int, N: int, n: float, sigma2: float, lam: float | None = None) -> float:
    """Critical channel count below which the teacher spike leaves the MP bulk.

    At ``N = S`` (``lam = 1/S^2``) this is
    ``4 / (S (1/S + S sigma2/n)^4) * (1 + 1/(S^2 + n/sigma2))``.
    For ``N != S`` the same threshold is written with ``lam = 1/(N S)``:
    ``4 lam^2 / (S (lam + sigma2/n)^4) * (1 + 1/(1/lam + n/sigma2))``.
    """
    if not (S >= 1 and N >= 1 and n > 0 and sigma2 > 0):
        raise ValueError("S, N, n and sigma2 must be positive")
    L = _lam(S, N, lam)
    eta = sigma2 / n
    return 4.0 * L**2 / (S * (L + eta) ** 4) * (1.0 + 1.0 / (1.0 / L + n / sigma2))


def predicted_sigma_w(S: int, N: int, n: float, sigma2: float, C: float, w_star,
                      lam: float | None = None) -> np.ndarray:
    """Ensemble average of ``Sigma_W`` to first order in ``1/C``."""
    w = _unit(w_star)
    if w.size != S:
        raise ValueError("w_star must have length S")
    L = _lam(S, N, lam)
    eta = sigma2 / n
    diag = 1.0 + 1.0 / (1.0 / L + n / sigma2)
    spike = (2.0 / C) * L / (L + eta) ** 2 if math.isfinite(C) else 0.0
    return diag * np.eye(S) + spike * np.outer(w, w)


def predicted_q(S: int, N: int, n: float, sigma2: float, C: float, lam: float | None = None) -> float:
    L = _lam(S, N, lam)
    eta = sigma2 / n
    return 1.0 + 1.0 / (1.0 / L + n / sigma2) + ((2.0 / C) * L / (L + eta) ** 2 if math.isfinite(C) else 0.0)


def fd_bin_edges(values) -> np.ndarray:
    """Freedman-Diaconis bin edges on the pooled sample."""
    return np.histogram_bin_edges(np.asarray(values, float).ravel(), bins="fd")


def bulk_fraction(eigenvalues, edges: tuple[float, float], margin: float = 0.05) -> float:
    ev = np.asarray(eigenvalues, float).ravel()
    lo, hi = edges
    return float(np.mean((ev >= lo - margin) & (ev <= hi + margin)))


@dataclass
class SpectralReport:
    S: int
    C: int
    eigenvalues: np.ndarray  # pooled, one row per snapshot
    mp_edges: tuple[float, float]
    Q: float
    Q_stderr: float
    C_crit: float
    Q_predicted: float
    snapshot_q: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        lo, hi = self.mp_edges
        if lo > hi:
            raise ValueError("mp_edges must satisfy lambda_minus <= lambda_plus")

    @property
    def lambda_plus(self) -> float:
        return self.mp_edges[1]

    @property
    def in_bulk(self) -> bool:
        return bool(self.Q <= self.lambda_plus)

    def histogram(self):
        ev = self.eigenvalues.ravel()
        return np.histogram(ev, bins=fd_bin_edges(ev), density=True)

    def summary(self) -> dict:
        return {"S": self.S, "C": self.C, "Q": self.Q, "Q_stderr": self.Q_stderr,
                "lambda_minus": self.mp_edges[0], "lambda_plus": self.mp_edges[1],
                "C_crit": self.C_crit, "Q_predicted": self.Q_predicted, "in_bulk": self.in_bulk,
                "n_snapshots": int(self.eigenvalues.shape[0]),
                "bulk_fraction": bulk_fraction(self.eigenvalues, self.mp_edges)}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def eigenvalue_rows(self):
        for i, row in enumerate(self.eigenvalues):
            for v in row:
                yield i, float(v)


def spectral_report(snapshots, w_star, n: float, sigma2: float, N: int | None = None,
                    lam: float | None = None) -> SpectralReport:
    """Pool ``Sigma_W`` eigenvalues and Q over snapshots.

    ``snapshots`` is ``(R, T, S, C)`` (seeds x times) or a list of ``S x C``
    matrices. With the 4-d layout the standard error of Q is taken over seed
    means; for a flat list it treats snapshots as independent.
    """
    arr = np.asarray(snapshots, float)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4:
        raise ValueError("snapshots must be (R, T, S, C), (K, S, C) or (S, C)")
    R, T, S, C = arr.shape
    N = S if N is None else N
    w = _unit(w_star)
    if w.size != S:
        raise ValueError("w_star must have length S")
    Sig = (S / C) * np.matmul(arr, np.swapaxes(arr, 2, 3))
    ev = np.linalg.eigvalsh(Sig).reshape(R * T, S)
    v = np.einsum("s,rtsc->rtc", w, arr)
    q = (S / C) * np.sum(v * v, axis=-1)  # (R, T)
    if R > 1:
        stderr = float(q.mean(1).std(ddof=1) / math.sqrt(R))
    elif T > 1:
        stderr = float(q.std(ddof=1) / math.sqrt(T))
    else:
        stderr = math.nan
    return SpectralReport(S, C, ev, mp_edges(S, C), float(q.mean()), stderr,
                          c_crit(S, N, n, sigma2, lam), predicted_q(S, N, n, sigma2, C, lam), q.ravel())


def q_crossing(C_values, Q_values, S: int) -> float:
    """Channel count where the measured Q(C) meets lambda_plus(C).

    Interpolates ``log(Q / lambda_plus)`` linearly in ``log C`` between the
    bracketing sweep points; ``nan`` when there is no sign change.
    """
    C = np.asarray(C_values, float)
    Q = np.asarray(Q_values, float)
    if C.shape != Q.shape or C.size < 2:
        raise ValueError("need at least two (C, Q) points")
    order = np.argsort(C)
    C, Q = C[order], Q[order]
    lp = np.array([mp_edges(S, c)[1] for c in C])
    h = np.log(Q / lp)
    lc = np.log(C)
    for i in range(C.size - 1):
        if h[i] == 0.0:
            return float(C[i])
        if h[i] * h[i + 1] < 0:
            t = h[i] / (h[i] - h[i + 1])
            return float(math.exp(lc[i] + t * (lc[i + 1] - lc[i])))
    return float(C[-1]) if h[-1] == 0.0 else math.nan


def sweep_rows(reports: list[SpectralReport]) -> list[dict]:
    return [{"C": r.C, "Q": r.Q, "Q_stderr": r.Q_stderr, "lambda_plus": r.lambda_plus, "c_crit": r.C_crit}
            for r in sorted(reports, key=lambda r: r.C)]


def report_dict(r: SpectralReport) -> dict:
    d = asdict(r)
    d.pop("eigenvalues")
    d.pop("snapshot_q")
    return d
