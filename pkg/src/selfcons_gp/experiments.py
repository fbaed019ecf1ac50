"""Experiment recipes: sweep points, tables and summaries for the CLI."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .datagen import (CnnArch, QuadArch, eval_cnn, eval_quadratic_teacher, make_cnn_dataset,
                      make_quad_dataset, sample_inputs)
from .diagnostics import gp_convergence_slope, heuristic_correction, sp_correction_leading, sp_validity
from .gp import empirical_alpha
from .langevin import LangevinConfig, LangevinDivergence, attach_test_alpha, train_ensemble
from .saddle import SaddleConfig, analytic_q_train, ek_alpha_solve, estimate_q_empirical, solve_saddle
from .seeding import derive_seed
from .spectral import fd_bin_edges, mp_density, q_crossing, spectral_report

WORKERS_ENV = "SELFCONS_GP_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class Table:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)


@dataclass
class Outcome:
    tables: dict[str, Table]
    summary: dict
    status: str = "ok"  # ok | nonconverged | diverged
    datasets: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# data


@dataclass
class Problem:
    arch: object
    ds: object
    teacher: object
    X_test: np.ndarray
    g_test: np.ndarray


def _cnn_problem(cfg: ExperimentConfig, S: int, n: int, k: int, N: int | None = None) -> Problem:
    m = cfg.model
    arch1 = CnnArch(N or m.N or S, S, 1, m.sigma_a2, m.sigma_w2)
    ds, teacher = make_cnn_dataset(arch1, n, derive_seed(cfg.seed, "dataset", k), cfg.data.measure,
                                   normalize=cfg.data.teacher_normalize)
    Xt = sample_inputs(cfg.data.n_test, arch1.d, cfg.data.measure, derive_seed(cfg.seed, "test", k))
    return Problem(arch1, ds, teacher, Xt, eval_cnn(arch1, teacher, Xt))


def _quad_problem(cfg: ExperimentConfig, n: int, k: int) -> Problem:
    arch = cfg.model.quad_arch()
    ds, w_star = make_quad_dataset(arch, n, derive_seed(cfg.seed, "dataset", k), cfg.data.measure,
                                   cfg.data.radius)
    Xt = sample_inputs(cfg.data.n_test, arch.d, cfg.data.measure, derive_seed(cfg.seed, "test", k),
                       cfg.data.radius)
    return Problem(arch, ds, w_star, Xt, eval_quadratic_teacher(w_star, arch.sigma_w2, Xt))


def _sizes(cfg: ExperimentConfig) -> list[tuple[int | None, int]]:
    """``(S, n)`` pairs for the CNN, ``(None, n)`` for the quad model."""
    d = cfg.data
    if cfg.model.kind == "quad":
        if d.n_over_d:
            return [(None, int(round(r * cfg.model.d))) for r in d.n_over_d]
        return [(None, d.n)]
    if d.pairs:
        return [(int(s), int(n)) for s, n in d.pairs]
    return [(cfg.model.S, d.n)]


def _saddle_config(cfg: ExperimentConfig) -> SaddleConfig:
    s = cfg.solver
    return SaddleConfig(method=s.method, tol=s.tol, max_iter=s.max_iter, anneal_start=s.anneal_start,
                        anneal_stages=s.anneal_stages if s.annealing else 1, damping=s.damping,
                        cnn_mode=s.cnn_mode)


def _langevin_config(cfg: ExperimentConfig, record_weights: bool = False) -> LangevinConfig:
    lv = cfg.langevin
    return LangevinConfig(sigma2=cfg.solver.sigma2, eta=lv.eta, eps=lv.eps, steps=lv.steps,
                          burn_in=lv.burn_in, thin=lv.thin, n_seeds=lv.n_seeds, init=lv.init,
                          rao_blackwell=lv.rao_blackwell, record_weights=record_weights)


def _alpha(pred, g) -> float:
    return empirical_alpha(pred, g) if np.any(g) else math.nan


def _gp(prob: Problem, sigma2: float):
    return solve_saddle(prob.arch, prob.ds.X, prob.ds.g, sigma2, X_test=prob.X_test, cumulants=False)


def _q_factors(cfg: ExperimentConfig, prob: Problem, gp) -> tuple[float, float]:
    lam, n, s2 = prob.arch.lam, prob.ds.n, cfg.solver.sigma2
    src = cfg.solver.q_source
    if src == "unit":
        return 1.0, 1.0
    if src == "analytic":
        q = analytic_q_train(lam, n, s2)[1]
        return q, q
    q_tr = estimate_q_empirical(prob.ds.g - gp.discrepancies.values, prob.ds.g, lam, n, s2)
    q_te = estimate_q_empirical(gp.test_mean, prob.g_test, lam, n, s2) if prob.X_test.shape[0] else q_tr
    return q_tr, q_te


# ---------------------------------------------------------------------------
# sweep points (top-level so a process pool can pickle them)


def _point_gp(cfg, S, n, k):
    prob = _cnn_problem(cfg, S, n, k) if cfg.model.kind == "cnn" else _quad_problem(cfg, n, k)
    gp = _gp(prob, cfg.solver.sigma2)
    mse = float(np.mean((gp.test_mean - prob.g_test) ** 2)) if prob.X_test.shape[0] else math.nan
    row = {"dataset": k, "S": S, "n": n, "alpha_train": _alpha(prob.ds.g - gp.discrepancies.values, prob.ds.g),
           "alpha_test": _alpha(gp.test_mean, prob.g_test), "test_mse": mse}
    return {"rows": [row], "dataset": prob.ds}


def _saddle_row(cfg, prob: Problem, arch, sol, with_full: bool) -> dict:
    g = prob.ds.g
    row = {"alpha_train": _alpha(g - sol.discrepancies.values, g),
           "alpha_test": _alpha(sol.test_mean, prob.g_test) if prob.X_test.shape[0] else math.nan,
           "test_mse": float(np.mean((sol.test_mean - prob.g_test) ** 2)) if prob.X_test.shape[0] else math.nan,
           "residual": sol.residual, "iterations": sol.iterations, "converged": sol.converged}
    dg = cfg.diagnostics
    if with_full:
        rep = sp_validity(sol.model, sol, g, dg.simple_min, dg.correction_max)
        row.update({"criterion_simple": rep.criterion_simple, "criterion_full": rep.criterion_full,
                    "verdict": rep.verdict})
    return row


def _point_saddle(cfg, S, n, k, C, full=True):
    if cfg.model.kind == "cnn":
        prob = _cnn_problem(cfg, S, n, k)
        arch = prob.arch.with_channels(C)
    else:
        prob = _quad_problem(cfg, n, k)
        arch = prob.arch
    sol = solve_saddle(arch, prob.ds.X, prob.ds.g, cfg.solver.sigma2, _saddle_config(cfg), X_test=prob.X_test)
    row = {"dataset": k, "S": S, "n": n, "C": C}
    row.update(_saddle_row(cfg, prob, arch, sol, full))
    out = {"rows": [row], "converged": sol.converged, "dataset": prob.ds}
    if cfg.experiment == "diagnostics":
        corr = sol.sigma2 * sp_correction_leading(sol.model, sol)
        d = sol.discrepancies.values
        out["detail"] = [{"dataset": k, "C": C, "mu": i, "g": float(prob.ds.g[i]), "discrepancy": float(d[i]),
                          "target_shift": float(sol.shift.train[i]), "correction": float(corr[i])}
                         for i in range(d.size)]
        med = float(np.median(np.abs(d))) if d.size else math.nan
        h_corr, h_rel = heuristic_correction(n, med, sol.sigma2) if med > 0 else (math.nan, math.nan)
        row.update({"heuristic_correction": h_corr, "heuristic_relative": h_rel})
    return out


def _point_ek(cfg, S, n, k):
    prob = _cnn_problem(cfg, S, n, k)
    gp = _gp(prob, cfg.solver.sigma2) if cfg.solver.q_source == "empirical" else None
    q_tr, q_te = _q_factors(cfg, prob, gp)
    rows = []
    for C in cfg.model.channel_values():
        e = ek_alpha_solve(prob.arch.lam, n, cfg.solver.sigma2, C, q_tr, q_te)
        rows.append({"dataset": k, "S": S, "n": n, "C": C, "alpha_train": e.alpha_train, "alpha_test": e.alpha_test,
                     "alpha_pole": e.alpha_pole, "q_train": q_tr, "q_test": q_te})
    return {"rows": rows, "dataset": prob.ds}


def _ensemble_mse(M, target) -> tuple[float, float, float]:
    """``(raw, seed_variance / R, raw - variance)`` for ensemble means vs a target."""
    R = M.shape[0]
    raw = float(np.mean((M.mean(0) - target) ** 2))
    var = float(np.mean(M.var(0, ddof=1)) / R) if R > 1 else 0.0
    return raw, var, raw - var


def _point_langevin(cfg, S, n, k, C):
    prob = _cnn_problem(cfg, S, n, k)
    arch = prob.arch.with_channels(C)
    s2 = cfg.solver.sigma2
    gp = _gp(prob, s2)
    q_tr, q_te = _q_factors(cfg, prob, gp)
    ek = ek_alpha_solve(arch.lam, n, s2, C, q_tr, q_te)
    row = {"dataset": k, "S": S, "n": n, "C": C, "alpha_pred_train": ek.alpha_train,
           "alpha_pred_test": ek.alpha_test, "q_train": q_tr, "q_test": q_te}
    try:
        st = train_ensemble(arch, prob.ds.X, prob.ds.g, prob.X_test, _langevin_config(cfg),
                            derive_seed(cfg.seed, f"langevin/S={S}/n={n}/C={C}", k))
    except LangevinDivergence as exc:
        row["error"] = str(exc)
        return {"rows": [row], "diverged": True}
    attach_test_alpha(st, prob.g_test)
    row.update({"alpha_emp_train": st.alpha_train, "alpha_emp_train_stderr": st.alpha_train_stderr,
                "alpha_emp_test": st.alpha_test, "alpha_emp_test_stderr": st.alpha_test_stderr})
    if prob.X_test.shape[0]:
        M = st.rb_test_means if st.rb_test_means is not None else st.seed_test_means
        raw, var, corr = _ensemble_mse(M, gp.test_mean)
        row.update({"mse_vs_gp_raw": raw, "mse_vs_gp_var": var, "mse_vs_gp": corr})
    return {"rows": [row]}


def _point_spectrum(cfg, S, n, k, C):
    prob = _cnn_problem(cfg, S, n, k)
    arch = prob.arch.with_channels(C)
    try:
        st = train_ensemble(arch, prob.ds.X, prob.ds.g, None, _langevin_config(cfg, record_weights=True),
                            derive_seed(cfg.seed, f"spectrum/S={S}/n={n}/C={C}", k))
    except LangevinDivergence as exc:
        return {"rows": [{"dataset": k, "S": S, "n": n, "C": C, "error": str(exc)}], "diverged": True}
    rep = spectral_report(st.weight_snapshots, prob.teacher.w[:, 0], n, cfg.solver.sigma2, arch.N)
    row = {"dataset": k, "S": S, "n": n, "C": C, "Q": rep.Q, "Q_stderr": rep.Q_stderr,
           "lambda_minus": rep.mp_edges[0], "lambda_plus": rep.lambda_plus, "c_crit": rep.C_crit,
           "Q_predicted": rep.Q_predicted, "in_bulk": rep.in_bulk, "alpha_train": st.alpha_train}
    eig = [{"dataset": k, "C": C, "snapshot_id": i, "eigenvalue": v} for i, v in rep.eigenvalue_rows()]
    ev = rep.eigenvalues.ravel()
    edges = fd_bin_edges(ev)
    dens, _ = np.histogram(ev, bins=edges, density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    mp = mp_density(S, C, mids) if S <= C else np.full(mids.shape, math.nan)
    hist = [{"dataset": k, "C": C, "bin_lo": float(lo), "bin_hi": float(hi), "density": float(p), "mp_density": float(q)}
            for lo, hi, p, q in zip(edges[:-1], edges[1:], dens, mp)]
    return {"rows": [row], "eig": eig, "hist": hist}


def _point_phase(cfg, S, n, k):
    prob = _quad_problem(cfg, n, k)
    s2 = cfg.solver.sigma2
    sol = solve_saddle(prob.arch, prob.ds.X, prob.ds.g, s2, _saddle_config(cfg), X_test=prob.X_test)
    gp = _gp(prob, s2)
    row = {"dataset": k, "n": n, "n_over_d": n / prob.arch.d,
           "test_mse": float(np.mean((sol.test_mean - prob.g_test) ** 2)),
           "gp_test_mse": float(np.mean((gp.test_mean - prob.g_test) ** 2)),
           "residual": sol.residual, "iterations": sol.iterations, "converged": sol.converged}
    return {"rows": [row], "converged": sol.converged, "dataset": prob.ds}


def _call(args):
    fn, a = args
    return fn(*a)


def _dispatch(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_call, tasks))


# ---------------------------------------------------------------------------
# recipes


SADDLE_COLS = ["dataset", "S", "n", "C", "alpha_train", "alpha_test", "test_mse", "residual", "iterations",
               "converged", "criterion_simple", "criterion_full", "verdict"]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> Outcome:
    workers = worker_count() if workers is None else workers
    exp = cfg.experiment
    K = cfg.data.n_datasets
    sizes = _sizes(cfg)
    Cs = cfg.model.channel_values() if cfg.model.kind == "cnn" else [None]

    if exp == "gp_baseline":
        res = _dispatch([(_point_gp, (cfg, S, n, k)) for S, n in sizes for k in range(K)], workers)
        rows = [r for p in res for r in p["rows"]]
        return Outcome({"gp": Table(["dataset", "S", "n", "alpha_train", "alpha_test", "test_mse"], rows)},
                       {"points": len(rows)}, datasets=[p["dataset"] for p in res])

    if exp in ("saddle_solve", "diagnostics"):
        tasks = [(_point_saddle, (cfg, S, n, k, C)) for S, n in sizes for k in range(K) for C in Cs]
        res = _dispatch(tasks, workers)
        rows = [r for p in res for r in p["rows"]]
        cols = SADDLE_COLS + (["heuristic_correction", "heuristic_relative"] if exp == "diagnostics" else [])
        tables = {"saddle": Table(cols, rows)}
        if exp == "diagnostics":
            tables["corrections"] = Table(["dataset", "C", "mu", "g", "discrepancy", "target_shift", "correction"],
                                          [r for p in res for r in p["detail"]])
        ok = all(p["converged"] for p in res)
        verdicts = {v: sum(r["verdict"] == v for r in rows) for v in ("valid", "marginal", "invalid")}
        return Outcome(tables, {"points": len(rows), "all_converged": ok, "verdicts": verdicts},
                       "ok" if ok else "nonconverged", [p["dataset"] for p in res[:: len(Cs)]])

    if exp == "ek_sweep":
        res = _dispatch([(_point_ek, (cfg, S, n, k)) for S, n in sizes for k in range(K)], workers)
        rows = [r for p in res for r in p["rows"]]
        cols = ["dataset", "S", "n", "C", "alpha_train", "alpha_test", "alpha_pole", "q_train", "q_test"]
        bad = sum(not math.isfinite(r["alpha_train"]) for r in rows)
        return Outcome({"ek_alpha": Table(cols, rows)}, {"points": len(rows), "no_root": bad},
                       "ok" if bad == 0 else "nonconverged", [p["dataset"] for p in res])

    if exp == "langevin_sweep":
        tasks = [(_point_langevin, (cfg, S, n, k, C)) for S, n in sizes for k in range(K) for C in Cs]
        res = _dispatch(tasks, workers)
        rows = [r for p in res for r in p["rows"]]
        cols = ["dataset", "S", "n", "C", "alpha_pred_train", "alpha_pred_test", "alpha_emp_train",
                "alpha_emp_train_stderr", "alpha_emp_test", "alpha_emp_test_stderr", "q_train", "q_test",
                "mse_vs_gp_raw", "mse_vs_gp_var", "mse_vs_gp", "error"]
        summary: dict = {"points": len(rows), "slopes": []}
        for S, n in sizes:
            for k in range(K):
                pts = [(r["C"], r.get("mse_vs_gp", math.nan)) for r in rows
                       if r["S"] == S and r["n"] == n and r["dataset"] == k]
                if len(pts) < 3:
                    continue
                entry = {"S": S, "n": n, "dataset": k, "slope": math.nan}
                if all(np.isfinite(m) and m > 0 for _, m in pts):
                    entry["slope"] = gp_convergence_slope(sorted(pts))
                else:
                    entry["note"] = "non-positive corrected mse; seed variance dominates"
                summary["slopes"].append(entry)
        diverged = any(p.get("diverged") for p in res)
        return Outcome({"alpha": Table(cols, rows)}, summary, "diverged" if diverged else "ok")

    if exp == "spectrum_sweep":
        tasks = [(_point_spectrum, (cfg, S, n, k, C)) for S, n in sizes for k in range(K) for C in Cs]
        res = _dispatch(tasks, workers)
        rows = [r for p in res for r in p["rows"]]
        diverged = any(p.get("diverged") for p in res)
        summary = {"points": len(rows), "crossings": []}
        for S, n in sizes:
            for k in range(K):
                sel = [r for r in rows if r["S"] == S and r["n"] == n and r["dataset"] == k and "Q" in r]
                if len(sel) >= 2:
                    cross = q_crossing([r["C"] for r in sel], [r["Q"] for r in sel], S)
                    summary["crossings"].append({"S": S, "n": n, "dataset": k, "crossing": cross,
                                                 "c_crit": sel[0]["c_crit"]})
        tables = {
            "q_sweep": Table(["dataset", "S", "n", "C", "Q", "Q_stderr", "lambda_minus", "lambda_plus", "c_crit",
                              "Q_predicted", "in_bulk", "alpha_train", "error"], rows),
            "eigenvalues": Table(["dataset", "C", "snapshot_id", "eigenvalue"],
                                 [r for p in res for r in p.get("eig", [])]),
            "histograms": Table(["dataset", "C", "bin_lo", "bin_hi", "density", "mp_density"],
                                [r for p in res for r in p.get("hist", [])]),
        }
        return Outcome(tables, summary, "diverged" if diverged else "ok")

    if exp == "phase_retrieval":
        res = _dispatch([(_point_phase, (cfg, S, n, k)) for S, n in sizes for k in range(K)], workers)
        rows = [r for p in res for r in p["rows"]]
        med = []
        for _, n in sizes:
            sel = [r for r in rows if r["n"] == n]
            med.append({"n": n, "n_over_d": n / cfg.model.d, "median_test_mse": float(np.median([r["test_mse"] for r in sel])),
                        "median_gp_test_mse": float(np.median([r["gp_test_mse"] for r in sel])),
                        "datasets": len(sel), "converged": sum(bool(r["converged"]) for r in sel)})
        ok = all(p["converged"] for p in res)
        cols = ["dataset", "n", "n_over_d", "test_mse", "gp_test_mse", "residual", "iterations", "converged"]
        tables = {"runs": Table(cols, rows),
                  "median_mse": Table(["n", "n_over_d", "median_test_mse", "median_gp_test_mse", "datasets",
                                       "converged"], med)}
        return Outcome(tables, {"points": len(rows), "all_converged": ok}, "ok" if ok else "nonconverged",
                       [p["dataset"] for p in res])

    raise ValueError(f"unknown experiment {exp!r}")
