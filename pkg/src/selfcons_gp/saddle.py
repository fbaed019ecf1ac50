"""Self-consistent saddle-point equations.

The finite-n equations are solved in the dual variable ``s = dg_hat/sigma2``::

    F(s) = (sigma2 I + K) s + dg(s) - g = 0

which is the gradient of ``Phi(s) = sigma2 |s|^2 / 2 + C(s) - g.s`` with ``C``
the model's cumulant generating function. ``Phi`` is strictly convex and
blows up at the boundary of the domain of ``C``, so a damped Newton method
with a backtracking line search on ``Phi`` is globally convergent.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.sparse.linalg import LinearOperator, gmres

from .cumulants import CumulantDomainError, ModelCumulants, cnn_cgf, quad_cgf
from .kernels import cross_gram, factorize, spec_for
from .gp import Discrepancies, TargetShift

METHODS = ("newton_krylov", "newton", "damped_fixed_point")


@dataclass
class SaddleConfig:
    method: str = "newton_krylov"
    damping: float = 0.5
    tol: float = 1e-10
    stage_tol: float = 1e-7
    max_iter: int = 200
    annealing: list | None = None
    anneal_start: float = 1.0
    anneal_stages: int = 12
    jvp: str = "analytic"
    stall_ratio: float = 0.99
    stall_window: int = 10
    cnn_mode: str = "resummed"
    seed_solution: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.jvp not in ("analytic", "fd"):
            raise ValueError("jvp must be 'analytic' or 'fd'")

    def schedule(self, sigma2: float) -> list[float]:
        if self.annealing is not None:
            sched = [float(x) for x in self.annealing]
            if not sched or not math.isclose(sched[-1], sigma2, rel_tol=1e-12):
                sched.append(float(sigma2))
            return sched
        if self.anneal_stages <= 1 or sigma2 >= self.anneal_start:
            return [float(sigma2)]
        return [float(x) for x in np.geomspace(self.anneal_start, sigma2, self.anneal_stages)]


@dataclass
class SaddleSolution:
    dual: np.ndarray
    sigma2: float
    shift: TargetShift
    test_mean: np.ndarray | None
    residual: float
    iterations: int
    converged: bool
    method: str
    anneal_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    model: ModelCumulants | None = field(default=None, repr=False)

    @property
    def discrepancies(self) -> Discrepancies:
        return Discrepancies(self.sigma2 * self.dual, self.sigma2)

    def report(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "method": self.method,
            "anneal_trace": self.anneal_trace,
            "residual_trace": self.residual_trace,
            "wall_time": self.wall_time,
        }


class _Problem:
    """Residual, merit and Jacobian for one noise level."""

    def __init__(self, mc: ModelCumulants | None, K: np.ndarray, g: np.ndarray, sigma2: float, jvp: str):
        self.mc, self.K, self.g, self.sigma2, self.jvp = mc, K, g, sigma2, jvp
        self.gnorm = max(float(np.linalg.norm(g)), np.finfo(float).tiny)

    def shift(self, s):
        return np.zeros_like(s) if self.mc is None else self.mc.delta_g(s)

    def residual(self, s):
        return self.sigma2 * s + self.K @ s + self.shift(s) - self.g

    def merit(self, s) -> float:
        """``Phi(s)``; ``inf`` outside the domain."""
        try:
            if self.mc is None:
                c = 0.5 * float(s @ self.K @ s)
            elif self.mc.is_cnn:
                if self.mc.cnn_mode != "resummed":
                    return float(np.linalg.norm(self.residual(s)) ** 2)
                c = cnn_cgf(self.mc.grams, self.mc.arch, s)
            else:
                c = quad_cgf(s, self.mc.X, self.mc.arch)
        except CumulantDomainError:
            return math.inf
        return 0.5 * self.sigma2 * float(s @ s) + c - float(self.g @ s)

    def in_domain(self, s) -> bool:
        return self.mc is None or self.mc.check_domain(s)

    def jacobian(self, s):
        J = self.K + self.sigma2 * np.eye(self.K.shape[0])
        if self.mc is not None:
            J = J + self.mc.delta_K(s)
        return J

    def jvp_op(self, s):
        n = self.K.shape[0]
        if self.mc is None:
            mv = lambda u: self.sigma2 * u + self.K @ u
        elif self.jvp == "analytic":
            mv = lambda u: self.sigma2 * u + self.K @ u + self.mc.delta_K_matvec(s, u)
        else:
            F0 = self.residual(s)

            def mv(u):
                nu = float(np.linalg.norm(u))
                if nu == 0.0:
                    return np.zeros(n)
                h = math.sqrt(np.finfo(float).eps) * (1.0 + float(np.linalg.norm(s))) / nu
                return (self.residual(s + h * u) - F0) / h

        return LinearOperator((n, n), matvec=mv, dtype=float)


def _line_search(prob: _Problem, s, step, F):
    """Backtrack on ``Phi`` (Armijo) while staying in the domain."""
    phi0 = prob.merit(s)
    slope = float(F @ step)
    fn0 = float(np.linalg.norm(F))
    t = 1.0
    for _ in range(60):
        trial = s + t * step
        if prob.in_domain(trial):
            Ft = prob.residual(trial)
            if np.all(np.isfinite(Ft)):
                phi = prob.merit(trial)
                # near convergence Phi differences drown in rounding; accept residual decrease
                if phi <= phi0 + 1e-4 * t * slope or float(np.linalg.norm(Ft)) < fn0 * (1 - 1e-4 * t):
                    return trial, Ft, t
        t *= 0.5
    return s, F, 0.0


def _newton(prob: _Problem, s, tol, max_iter, krylov: bool, trace: list):
    F = prob.residual(s)
    it = 0
    for it in range(1, max_iter + 1):
        res = float(np.linalg.norm(F)) / prob.gnorm
        trace.append(res)
        if res <= tol:
            return s, res, it - 1, True
        if krylov:
            op = prob.jvp_op(s)
            rtol = min(1e-2, max(1e-13, 0.1 * res))
            n = F.size
            step, info = gmres(op, -F, rtol=rtol, atol=0.0, restart=min(n, 200), maxiter=max(10, n))
            if info < 0 or not np.all(np.isfinite(step)):
                step = np.linalg.solve(prob.jacobian(s), -F)
        else:
            step = np.linalg.solve(prob.jacobian(s), -F)
        s_new, F_new, t = _line_search(prob, s, step, F)
        if t == 0.0:
            # Krylov direction failed to descend: retry with an exact solve once
            if krylov:
                step = np.linalg.solve(prob.jacobian(s), -F)
                s_new, F_new, t = _line_search(prob, s, step, F)
            if t == 0.0:
                return s, res, it, False
        s, F = s_new, F_new
    res = float(np.linalg.norm(F)) / prob.gnorm
    trace.append(res)
    return s, res, max_iter, res <= tol


def _fixed_point(prob: _Problem, s, cfg: SaddleConfig, tol, trace: list):
    """Damped iteration ``s <- (1-b) s + b Kt^{-1}(g - dg(s))``; hands over to Newton on stall."""
    gram = factorize(prob.K, prob.sigma2)
    beta = cfg.damping
    hist = []
    for it in range(1, cfg.max_iter + 1):
        F = prob.residual(s)
        res = float(np.linalg.norm(F)) / prob.gnorm
        trace.append(res)
        hist.append(res)
        if res <= tol:
            return s, res, it - 1, True, False
        if len(hist) > cfg.stall_window and hist[-1] > cfg.stall_ratio * hist[-1 - cfg.stall_window]:
            return s, res, it, False, True
        target = gram.solve(prob.g - prob.shift(s))
        b = beta
        while True:
            trial = (1 - b) * s + b * target
            if prob.in_domain(trial):
                break
            b *= 0.5
            if b < 1e-12:
                raise CumulantDomainError("fixed-point iterate left the cumulant domain", math.nan)
        s = trial
    F = prob.residual(s)
    res = float(np.linalg.norm(F)) / prob.gnorm
    return s, res, cfg.max_iter, res <= tol, True


def make_model(arch, X, cumulants: bool = True, cnn_mode: str = "resummed") -> ModelCumulants | None:
    return ModelCumulants(arch, X, cnn_mode=cnn_mode) if cumulants else None


def solve_saddle(arch, X_train, g, sigma2: float, config: SaddleConfig | None = None,
                 X_test=None, cumulants: bool = True) -> SaddleSolution:
    """Solve the coupled discrepancy / target-shift equations.

    With ``cumulants=False`` the problem is the plain GP and the answer is
    ``Kt^{-1} g`` after a single linear solve.
    """
    cfg = config or SaddleConfig()
    t0 = time.perf_counter()
    X_train = np.atleast_2d(np.asarray(X_train, float))
    g = np.asarray(g, float).reshape(-1)
    if g.size != X_train.shape[0]:
        raise ValueError("targets and inputs disagree on n")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    mc = make_model(arch, X_train, cumulants, cfg.cnn_mode)
    K = mc.K if mc is not None else cross_gram(spec_for(arch), X_train, X_train)

    if mc is None:
        gram = factorize(K, sigma2)
        s = gram.solve(g)
        prob = _Problem(None, K, g, sigma2, cfg.jvp)
        res = float(np.linalg.norm(prob.residual(s))) / prob.gnorm
        sol = SaddleSolution(s, sigma2, TargetShift(np.zeros_like(g)), None, res, 1, True, "gp",
                             [{"sigma2": sigma2, "iterations": 1, "residual": res, "converged": True}], [res])
    else:
        s = np.zeros_like(g) if cfg.seed_solution is None else np.asarray(cfg.seed_solution, float).copy()
        if not mc.check_domain(s):
            s = np.zeros_like(g)
        schedule = cfg.schedule(sigma2)
        anneal, rtrace = [], []
        total, converged, res = 0, False, math.inf
        method = cfg.method
        for k, s2 in enumerate(schedule):
            last = k == len(schedule) - 1
            tol = cfg.tol if last else max(cfg.tol, cfg.stage_tol)
            prob = _Problem(mc, K, g, s2, cfg.jvp)
            r0 = float(np.linalg.norm(prob.residual(s))) / prob.gnorm
            stage_trace: list = []
            if method == "damped_fixed_point":
                s, res, it, converged, stalled = _fixed_point(prob, s, cfg, tol, stage_trace)
                if stalled and not converged:
                    s, res, it2, converged = _newton(prob, s, tol, cfg.max_iter, True, stage_trace)
                    it += it2
            else:
                s, res, it, converged = _newton(prob, s, tol, cfg.max_iter, method == "newton_krylov", stage_trace)
            total += it
            rtrace.extend(stage_trace)
            anneal.append({"sigma2": s2, "iterations": it, "residual_start": r0,
                           "residual": res, "converged": bool(converged)})
        sol = SaddleSolution(s, sigma2, TargetShift(mc.delta_g(s)), None, res, total, bool(converged),
                             method, anneal, rtrace)
    sol.model = mc
    sol._K = K
    sol._X = X_train
    sol._g = g
    sol._arch = arch
    if X_test is not None:
        sol.test_mean = predict_test(sol, X_test)
        sol.shift = TargetShift(sol.shift.train, _test_shift(sol, X_test))
    sol.wall_time = time.perf_counter() - t0
    return sol


def _test_shift(sol: SaddleSolution, X_test) -> np.ndarray:
    X_test = np.atleast_2d(np.asarray(X_test, float))
    if sol.model is None:
        return np.zeros(X_test.shape[0])
    return sol.model.delta_g(sol.dual, X_test)


def predict_test(sol: SaddleSolution, X_test) -> np.ndarray:
    """``dg_* + K_*^T s``, equal to ``dg_* + K_* Kt^{-1} (g - dg)`` at the fixed point."""
    X_test = np.atleast_2d(np.asarray(X_test, float))
    if X_test.shape[0] == 0:
        return np.zeros(0)
    Ks = cross_gram(spec_for(sol._arch), sol._X, X_test)
    return _test_shift(sol, X_test) + Ks.T @ sol.dual


def fixed_point_map(sol: SaddleSolution) -> np.ndarray:
    """One undamped pass ``dg_hat <- sigma2 Kt^{-1}(g - dg(dg_hat/sigma2))``."""
    gram = factorize(sol._K, sol.sigma2)
    return sol.sigma2 * gram.solve(sol._g - sol.shift.train)


# ---------------------------------------------------------------------------
# equivalent-kernel scalar equations for the CNN


@dataclass
class EkSolution:
    alpha_train: float
    alpha_test: float
    q_train: float
    q_test: float
    alpha_pole: float
    branch_report: dict

    @property
    def converged(self) -> bool:
        return bool(np.isfinite(self.alpha_train))


def ek_alpha_rhs(alpha, lam: float, n: float, sigma2: float, C: float, q: float):
    """Right-hand side of the scalar alpha equation."""
    eta = sigma2 / n
    base = eta / (lam + eta) + (1.0 - q) * lam / (lam + eta)
    if math.isinf(C):
        return base + 0.0 * np.asarray(alpha, float)
    r = np.asarray(alpha, float) / eta
    cubic = (lam**2 / C) * r**3 / (1.0 - (lam / C) * r**2)
    return base + (q * lam / (lam + eta) - 1.0) * cubic


def ek_alpha_pole(lam: float, n: float, sigma2: float, C: float) -> float:
    return math.inf if math.isinf(C) else (sigma2 / n) * math.sqrt(C / lam)


def ek_alpha_solve(lam: float, n: float, sigma2: float, C: float, q_train: float = 1.0,
                   q_test: float | None = None, grid: int = 4000) -> EkSolution:
    """Train root continuously connected to the GP root; test value by substitution."""
    if not (lam > 0 and n > 0 and sigma2 > 0 and C > 0):
        raise ValueError("lam, n, sigma2 and C must be positive")
    if q_train < 0 or (q_test is not None and q_test < 0):
        raise ValueError("q factors must be non-negative")
    q_test = q_train if q_test is None else q_test
    eta = sigma2 / n
    a_gp = float(ek_alpha_rhs(0.0, lam, n, sigma2, math.inf, q_train))
    pole = ek_alpha_pole(lam, n, sigma2, C)
    report: dict = {"alpha_gp": a_gp, "brackets": [], "roots": []}
    if math.isinf(C) or C > 1e300:
        a = a_gp
    else:
        hi = pole * (1.0 - 1e-9)
        h = lambda x: x - float(ek_alpha_rhs(x, lam, n, sigma2, C, q_train))
        # uniform grid plus geometric refinement toward the pole
        xs = np.unique(np.concatenate([
            np.linspace(0.0, hi, grid),
            hi - (hi) * np.geomspace(1e-9, 1.0, grid // 4)[::-1],
        ]))
        xs = xs[(xs >= 0) & (xs <= hi)]
        hv = xs - ek_alpha_rhs(xs, lam, n, sigma2, C, q_train)
        roots = []
        for i in np.nonzero(np.sign(hv[:-1]) * np.sign(hv[1:]) <= 0)[0]:
            lo_, hi_ = xs[i], xs[i + 1]
            if hv[i] == 0:
                r = lo_
            else:
                r = optimize.brentq(h, lo_, hi_, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            report["brackets"].append([float(lo_), float(hi_)])
            if not roots or abs(r - roots[-1]) > 1e-14:
                roots.append(float(r))
        report["roots"] = roots
        if not roots:
            report["sign_scan"] = {"x": xs[:: max(1, len(xs) // 50)].tolist(),
                                   "h": hv[:: max(1, len(xs) // 50)].tolist()}
            return EkSolution(math.nan, math.nan, q_train, q_test, pole, report)
        a = min(roots, key=lambda r: abs(r - a_gp))
    a_test = float(ek_alpha_rhs(a, lam, n, sigma2, C, q_test))
    report["eta"] = eta
    return EkSolution(float(a), a_test, q_train, q_test, pole, report)


def estimate_q_empirical(gp_predictions, targets, lam: float, n: float, sigma2: float) -> float:
    """``q = (1 - alpha_gp)(lam + sigma2/n)/lam`` from plain-GP predictions."""
    from .gp import empirical_alpha

    a = empirical_alpha(gp_predictions, targets)
    return (1.0 - a) * (lam + sigma2 / n) / lam


def analytic_q_train(lam: float, n: float, sigma2: float) -> tuple[float, float]:
    """Series estimate of the train-set alpha and the matching q factor.

    Returns ``(alpha_train, q_train)``.
    """
    if not (lam > 0 and n > 0 and sigma2 > 0):
        raise ValueError("inputs must be positive")
    eta = sigma2 / n
    a_ek = eta / (eta + lam)
    a_train = a_ek * (1.0 - a_ek / sigma2 + 0.75 * a_ek**2 / sigma2**2)
    return a_train, (lam + eta) / lam * (1.0 - a_train)


# ---------------------------------------------------------------------------
# equivalent-kernel asymptotics for the quadratic network


@dataclass
class QuadEkSolution:
    alpha: float
    beta: float
    alpha_asymptote: float
    beta_asymptote: float
    form: str
    roots: list
    converged: bool


def _quad_ek_printed(a, b, L0, L2, d):
    D = 1.0 - (a * L2 + 2.0 * (b + a) * L0)
    e1 = a - (1.0 - a * L2 / D + a * L2) / (L2 + 1.0)
    inner = b * (d + 2) / (2.0 * a) + a * d * L2 / D
    e2 = b + ((2.0 * a * L0 / (d + 2)) / (1.0 + a * L2 - 2.0 * b * L0) * inner - b * L0) / (L0 + 1.0)
    return e1, e2


def quad_ek_residual(alpha, beta, lam0, lam2, n, sigma2, d, form="printed"):
    u = n / sigma2
    L0, L2 = lam0 * u, lam2 * u
    if form == "printed":
        return _quad_ek_printed(alpha, beta, L0, L2, d)
    p = 1.0 + alpha * L2 - beta * L0
    return (alpha - 1.0 + alpha * L2 / (p * (p - alpha * d * L2)), beta - alpha + 1.0 / p)


def ek_quad_asymptotics(lam0: float, lam2: float, n: float, sigma2: float, d: int,
                        form: str = "printed", grid: int = 20001) -> QuadEkSolution:
    """Solve the coupled (alpha, beta) equations for the quadratic network.

    ``form="printed"`` solves the two equations exactly as usually quoted;
    ``form="exact"`` solves the reduction obtained directly from the
    generating function with sums replaced by ``n`` times the Gaussian
    average, which can be cross-checked against the matrix-valued fixed
    point (see the tests). In both cases the first equation is linear in
    ``beta``; it is eliminated and the remaining scalar equation is scanned
    for sign changes on ``alpha`` in (0, 1). The root closest to the
    closed-form asymptote is returned together with all roots found.
    """
    u = n / sigma2
    L0, L2 = lam0 * u, lam2 * u
    a_as = (5.0 / 18.0) * sigma2 / (lam0 * n)
    b_as = (4.0 / 18.0) * sigma2 / (lam0 * n)
    if L0 < 10:
        import warnings

        warnings.warn("lam0 n / sigma2 is not large; the asymptotic regime is not reached", stacklevel=2)

    if form == "printed":
        def beta_of(a):
            # D = a L2 / (1 - a) from the first equation
            return (1.0 - a * L2 - a * L2 / (1.0 - a)) / (2.0 * L0) - a

        def h(a):
            return _quad_ek_printed(a, beta_of(a), L0, L2, d)[1]
    elif form == "exact":
        def p_of(a):
            B = 1.0 + a * L2 - a * L0
            return 0.5 * (B + math.sqrt(B * B + 4.0 * L0))

        def beta_of(a):
            return a - 1.0 / p_of(a)

        def h(a):
            p = p_of(a)
            dom = p - a * d * L2
            if dom <= 0:
                return math.nan
            return 1.0 - a - a * L2 / (p * dom)
    else:
        raise ValueError("form must be 'printed' or 'exact'")

    xs = np.geomspace(1e-12, 1.0 - 1e-9, grid)
    with np.errstate(all="ignore"):
        hv = np.array([h(x) for x in xs])
    roots = []
    for i in range(len(xs) - 1):
        h0, h1 = hv[i], hv[i + 1]
        if np.isfinite(h0) and np.isfinite(h1) and h0 * h1 < 0:
            try:
                with np.errstate(all="ignore"):
                    r = optimize.brentq(h, xs[i], xs[i + 1], xtol=1e-300, rtol=1e-14)
            except (ValueError, RuntimeError):
                continue
            rb = beta_of(r)
            res = quad_ek_residual(r, rb, lam0, lam2, n, sigma2, d, form)
            if max(abs(res[0]), abs(res[1])) < 1e-8:
                roots.append((float(r), float(rb)))
        elif np.isfinite(h0) and not np.isfinite(h1) and form == "exact":
            # domain edge: h -> -inf there, so bisect toward the edge
            lo, hi = xs[i], xs[i + 1]
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                hm = h(mid)
                if not np.isfinite(hm) or hm < 0:
                    if np.isfinite(hm) and hm < 0 and h0 > 0:
                        r = optimize.brentq(h, lo, mid, xtol=1e-300, rtol=1e-14)
                        roots.append((float(r), float(beta_of(r))))
                        break
                    hi = mid
                else:
                    lo = mid
    if not roots:
        return QuadEkSolution(math.nan, math.nan, a_as, b_as, form, [], False)
    a, b = min(roots, key=lambda ab: abs(ab[0] - a_as) / a_as + abs(ab[1] - b_as) / b_as)
    return QuadEkSolution(a, b, a_as, b_as, form, roots, True)


def quad_beta_relation(alpha: float, lam0: float, n: float, sigma2: float, d: int) -> float:
    """Large-d linearized relation ``beta ~ -alpha - alpha/(d(1-alpha)) + sigma2/(2 lam0 n)``."""
    return -alpha - alpha / (d * (1.0 - alpha)) + sigma2 / (2.0 * lam0 * n)
