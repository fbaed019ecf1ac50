"""Saddle-point validity checks and the GP-convergence scaling test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

# verdict thresholds; overridable per call and from configs
SIMPLE_MIN = 10.0
CORRECTION_MAX = 0.1


class FiniteDifferenceError(ArithmeticError):
    pass


@dataclass
class SpValidityReport:
    criterion_simple: float
    criterion_simple_min: float
    criterion_full: float
    correction_vs_discrepancy: float
    verdict: str
    simple_threshold: float = SIMPLE_MIN
    correction_threshold: float = CORRECTION_MAX

    def to_dict(self) -> dict:
        return asdict(self)


def sp_criterion_simple(discrepancies, sigma2: float, n: int | None = None) -> float:
    """``n * median((dg / sigma2)^2)`` over the training set."""
    d = np.asarray(discrepancies, float).ravel()
    n = d.size if n is None else n
    return float(n * np.median((d / sigma2) ** 2))


def heuristic_correction(n: int, discrepancy: float, sigma2: float, delta_g: float = 1.0) -> tuple[float, float]:
    """Scaling estimate of the beyond-saddle correction.

    Returns ``(correction, correction / discrepancy)`` where the correction is
    ``delta_g / (n (dg/sigma2)^2)``. ``delta_g`` defaults to an O(1) shift.
    """
    ratio = discrepancy / sigma2
    corr = delta_g / (n * ratio**2)
    return corr, corr / abs(discrepancy)


def _shifted_inverse(K, dK, sigma2: float) -> np.ndarray:
    A = sigma2 * np.eye(K.shape[0]) + K + dK
    return linalg.inv(0.5 * (A + A.T), check_finite=True)


def _second_contract_fd(model, s, A, rel_step: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    scale = 1.0 + float(np.max(np.abs(s))) if s.size else 1.0
    h = rel_step * scale
    out = np.zeros(s.size)
    base = model.delta_g(s)
    for lam, u in zip(vals, vecs.T):
        if np.array_equal(s + h * u, s):
            raise FiniteDifferenceError(f"finite-difference step {h:.3g} underflows")
        d2 = (model.delta_g(s + h * u) - 2.0 * base + model.delta_g(s - h * u)) / h**2
        out += lam * d2
    return out


def sp_correction_leading(model, solution, method: str = "analytic", rel_step: float = 1e-4) -> np.ndarray:
    """Leading beyond-saddle correction to the dual variables.

    ``0.5 * Kt^{-1} [d^2 dg : Kt^{-1}]`` with ``Kt = sigma2 I + K + dK`` at the
    saddle. Multiply by ``sigma2`` to compare with predictions. ``model`` is
    the solution's ``ModelCumulants``; ``None`` means the plain GP and gives zeros.
    """
    s = np.asarray(solution.dual, float)
    if model is None:
        return np.zeros_like(s)
    K = model.K
    Kinv = _shifted_inverse(K, model.delta_K(s), solution.sigma2)
    if method == "analytic":
        inner = model.second_contract(s, Kinv)
    elif method == "fd":
        inner = _second_contract_fd(model, s, Kinv, rel_step)
    else:
        raise ValueError("method must be 'analytic' or 'fd'")
    return 0.5 * Kinv @ inner


def sp_validity(model, solution, g, simple_min: float = SIMPLE_MIN,
                correction_max: float = CORRECTION_MAX, method: str = "analytic") -> SpValidityReport:
    g = np.asarray(g, float).ravel()
    d = solution.discrepancies.values
    s2 = solution.sigma2
    simple = sp_criterion_simple(d, s2)
    simple_min_val = float(g.size * np.min((d / s2) ** 2)) if d.size else math.nan
    corr = s2 * sp_correction_leading(model, solution, method)
    gnorm = float(np.linalg.norm(g)) or 1.0
    dnorm = float(np.linalg.norm(d)) or 1.0
    full = float(np.linalg.norm(corr)) / gnorm
    vs_disc = float(np.linalg.norm(corr)) / dnorm
    ok_simple = simple >= simple_min
    ok_full = full <= correction_max
    verdict = "valid" if ok_simple and ok_full else ("marginal" if ok_simple or ok_full else "invalid")
    return SpValidityReport(simple, simple_min_val, full, vs_disc, verdict, simple_min, correction_max)


def gp_convergence_slope(mse_by_C, tail: str = "half") -> float:
    """Least-squares slope of ``log mse`` vs ``log C``.

    ``tail="half"`` keeps the largest-C half of the points (at least two);
    ``tail="all"`` uses every point.
    """
    pts = [(float(c), float(m)) for c, m in mse_by_C]
    if len(pts) < 3:
        raise ValueError("need at least three (C, mse) points")
    Cs = np.array([p[0] for p in pts])
    ms = np.array([p[1] for p in pts])
    if np.any(np.diff(Cs) <= 0):
        raise ValueError("C values must be strictly ascending")
    if np.any(ms <= 0):
        raise ValueError("mse values must be positive")
    if tail == "half":
        k = max(2, math.ceil(len(pts) / 2))
        Cs, ms = Cs[-k:], ms[-k:]
    elif tail != "all":
        raise ValueError("tail must be 'half' or 'all'")
    return float(np.polyfit(np.log(Cs), np.log(ms), 1)[0])
