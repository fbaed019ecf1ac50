"""Noisy full-batch gradient descent with weight decay (discrete Langevin).

Update per parameter group ``g``::

    theta <- theta - eta_g (gamma_g theta + grad L) + 2 sigma sqrt(eta_g) xi

with ``L = sum_mu (f_mu - g_mu)^2``. The equilibrium is the Gibbs
distribution whose prior part has variance ``2 sigma^2 / gamma_g``.

Seeds are advanced together as a batch; each seed owns its own random
stream, so results do not depend on how seeds are grouped.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import CnnArch, QuadArch, windows
from .gp import empirical_alpha
from .seeding import make_rng


class LangevinDivergence(FloatingPointError):
    def __init__(self, message: str, step: int, trace: list):
        super().__init__(message)
        self.step = step
        self.trace = trace


def derive_weight_decay(arch, sigma2: float) -> dict:
    """Weight decay that makes the Gibbs prior match the layer priors."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if isinstance(arch, CnnArch):
        return {
            "a": 2.0 * sigma2 * arch.C * arch.N / arch.sigma_a2,
            "w": 2.0 * sigma2 * arch.S / arch.sigma_w2,
        }
    if isinstance(arch, QuadArch):
        return {"w": 2.0 * arch.M * sigma2 / arch.sigma_w2}
    raise TypeError(f"unsupported architecture {type(arch).__name__}")


def prior_variances(arch) -> dict:
    if isinstance(arch, CnnArch):
        return {"a": arch.sigma_a2 / (arch.C * arch.N), "w": arch.sigma_w2 / arch.S}
    return {"w": arch.sigma_w2 / arch.M}


@dataclass
class LangevinConfig:
    """Sampler settings.

    ``eta`` is a learning rate shared by all groups. When it is ``None`` each
    group uses ``eta_g = eps / gamma_g``; this is a constant diagonal
    preconditioner and leaves the continuous-time equilibrium unchanged.
    """

    sigma2: float = 1.0
    eta: float | None = None
    eps: float = 2e-3
    steps: int = 20000
    burn_in: int | None = None
    thin: int = 20
    n_seeds: int = 8
    init: str = "prior"
    rao_blackwell: bool = False
    record_weights: bool = False
    record_params: bool = False
    noise_block: int = 16
    divergence_factor: float = 1e6
    trace_every: int = 0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.burn_in is None:
            self.burn_in = self.steps // 2
        if not 0 <= self.burn_in < self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if self.thin < 1 or self.n_seeds < 1:
            raise ValueError("thin and n_seeds must be positive")
        if self.init not in ("prior", "cold"):
            raise ValueError("init must be 'prior' or 'cold'")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def step_sizes(self, gammas: dict) -> dict:
        if self.eta is not None:
            return {k: self.eta for k in gammas}
        return {k: self.eps / gam if gam > 0 else self.eps for k, gam in gammas.items()}

    @property
    def n_snapshots(self) -> int:
        return (self.steps - self.burn_in) // self.thin


@dataclass
class EnsembleStats:
    mean_train_output: np.ndarray
    mean_test_output: np.ndarray
    seed_train_means: np.ndarray
    seed_test_means: np.ndarray
    alpha_train: float = math.nan
    alpha_train_stderr: float = math.nan
    alpha_test: float = math.nan
    alpha_test_stderr: float = math.nan
    weight_snapshots: np.ndarray | None = None
    snapshot_steps: np.ndarray | None = None
    param_snapshots: dict | None = None
    rb_train_means: np.ndarray | None = None
    rb_test_means: np.ndarray | None = None
    trace: list = field(default_factory=list)
    n_snapshots: int = 0
    wall_time: float = 0.0

    def manifest(self) -> dict:
        return {
            "alpha_train": self.alpha_train,
            "alpha_train_stderr": self.alpha_train_stderr,
            "alpha_test": self.alpha_test,
            "alpha_test_stderr": self.alpha_test_stderr,
            "n_snapshots": self.n_snapshots,
            "wall_time": self.wall_time,
        }


class _NoiseStreams:
    """Per-seed Gaussian streams drawn in blocks of ``block`` steps."""

    def __init__(self, seed, seed_ids, size: int, block: int):
        self.gens = [make_rng(seed, "langevin", int(i)) for i in seed_ids]
        self.size, self.block = size, block
        self.buf = None
        self.pos = block

    def next(self) -> np.ndarray:
        if self.pos >= self.block:
            self.buf = np.stack([g.standard_normal((self.block, self.size)) for g in self.gens], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


# ---------------------------------------------------------------------------
# model-specific pieces: every model exposes forward / grad / pack / unpack


class _CnnModel:
    def __init__(self, arch: CnnArch, X):
        self.arch = arch
        Z = windows(np.atleast_2d(X), arch.S)
        self.Zf = Z.reshape(Z.shape[0], arch.N * arch.S)
        self.sizes = {"a": arch.N * arch.C, "w": arch.S * arch.C}

    def forward(self, p, Zf=None):
        Zf = self.Zf if Zf is None else Zf
        Theta = np.matmul(p["a"], np.swapaxes(p["w"], 1, 2))  # (R, N, S)
        return Theta.reshape(Theta.shape[0], -1) @ Zf.T  # (R, n)

    def grads(self, p, e):
        N, S = self.arch.N, self.arch.S
        E = (e @ self.Zf).reshape(-1, N, S)  # sum_mu e_mu Z_mu
        return {"a": np.matmul(E, p["w"]), "w": np.matmul(np.swapaxes(E, 1, 2), p["a"])}

    def shapes(self, R):
        a = self.arch
        return {"a": (R, a.N, a.C), "w": (R, a.S, a.C)}

    def rao_blackwell(self, p, g, sigma2, Zf_test):
        """Conditional posterior mean of f given the conv filters."""
        arch = self.arch
        N, S = arch.N, arch.S
        c = arch.sigma_a2 / (arch.C * arch.N)
        W = p["w"]  # (R, S, C)
        n = self.Zf.shape[0]
        Phi = np.matmul(self.Zf.reshape(n * N, S)[None], W).reshape(W.shape[0], n, -1)
        Kw = c * np.matmul(Phi, np.swapaxes(Phi, 1, 2))
        A = Kw + sigma2 * np.eye(n)[None]
        wts = np.linalg.solve(A, np.broadcast_to(g, (W.shape[0], n))[..., None])[..., 0]
        train = np.matmul(Kw, wts[..., None])[..., 0]
        if Zf_test is None or Zf_test.shape[0] == 0:
            return train, np.zeros((W.shape[0], 0))
        nt = Zf_test.shape[0]
        Pt = np.matmul(Zf_test.reshape(nt * N, S)[None], W).reshape(W.shape[0], nt, -1)
        v = np.matmul(np.swapaxes(Phi, 1, 2), wts[..., None])  # (R, N*C, 1)
        return train, c * np.matmul(Pt, v)[..., 0]


class _QuadModel:
    def __init__(self, arch: QuadArch, X):
        self.arch = arch
        self.X = np.atleast_2d(np.asarray(X, float))
        self.sizes = {"w": arch.M * arch.d}
        self.sq = np.einsum("ij,ij->i", self.X, self.X)

    def forward(self, p, X=None):
        X = self.X if X is None else X
        H = np.matmul(p["w"], X.T)  # (R, M, n)
        sq = np.einsum("ij,ij->i", X, X)
        return np.sum(H * H, axis=1) - self.arch.sigma_w2 * sq[None]

    def grads(self, p, e):
        H = np.matmul(p["w"], self.X.T)  # (R, M, n)
        return {"w": 2.0 * np.matmul(H * e[:, None, :], self.X)}

    def shapes(self, R):
        return {"w": (R, self.arch.M, self.arch.d)}


def _model_for(arch, X):
    if isinstance(arch, CnnArch):
        return _CnnModel(arch, X)
    if isinstance(arch, QuadArch):
        return _QuadModel(arch, X)
    raise TypeError(f"unsupported architecture {type(arch).__name__}")


def init_params(arch, n_seeds: int, seed, mode: str = "prior", seed_offset: int = 0) -> dict:
    """Draw initial parameters for every seed from its own stream."""
    var = prior_variances(arch)
    dummy = _model_for(arch, np.zeros((1, arch.d)))
    shapes = dummy.shapes(n_seeds)
    out = {}
    for k, shp in shapes.items():
        if mode == "cold":
            out[k] = np.zeros(shp)
            continue
        blocks = [make_rng(seed, f"init_{k}", seed_offset + r).standard_normal(shp[1:]) for r in range(n_seeds)]
        out[k] = np.stack(blocks) * math.sqrt(var[k])
    return out


def train_ensemble(arch, X, g, X_test=None, config: LangevinConfig | None = None, seed: int = 0,
                   params0: dict | None = None, seed_offset: int = 0, gammas: dict | None = None) -> EnsembleStats:
    """Run ``n_seeds`` independent chains and average their post burn-in outputs."""
    cfg = config or LangevinConfig()
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, float)) if X is not None and np.size(X) else np.zeros((0, arch.d))
    g = np.asarray(g, float).reshape(-1) if g is not None else np.zeros(0)
    if g.size != X.shape[0]:
        raise ValueError("targets and inputs disagree on n")
    X_test = np.zeros((0, arch.d)) if X_test is None else np.atleast_2d(np.asarray(X_test, float))
    model = _model_for(arch, X)
    R = cfg.n_seeds
    gam = derive_weight_decay(arch, cfg.sigma2) if gammas is None else dict(gammas)
    etas = cfg.step_sizes(gam)
    p = params0 if params0 is not None else init_params(arch, R, seed, cfg.init, seed_offset)
    p = {k: np.array(v, float, copy=True) for k, v in p.items()}
    keys = list(model.sizes)
    total = sum(model.sizes[k] for k in keys)
    noise = _NoiseStreams(seed, range(seed_offset, seed_offset + R), total, cfg.noise_block)
    scale = {k: math.sqrt(2 * cfg.sigma2 / gam[k]) if gam[k] > 0 else 1.0 for k in keys}
    limit = {k: cfg.divergence_factor * scale[k] * math.sqrt(model.sizes[k]) for k in keys}
    amp = {k: 2.0 * cfg.sigma * math.sqrt(etas[k]) for k in keys}
    offs = np.cumsum([0] + [model.sizes[k] for k in keys])

    if isinstance(model, _CnnModel):
        Zt = windows(X_test, arch.S).reshape(X_test.shape[0], arch.d)
    else:
        Zt = X_test
    n, nt = X.shape[0], X_test.shape[0]
    acc_tr = np.zeros((R, n))
    acc_te = np.zeros((R, nt))
    rb_tr = np.zeros((R, n)) if cfg.rao_blackwell else None
    rb_te = np.zeros((R, nt)) if cfg.rao_blackwell else None
    snaps, snap_steps = [], []
    pstore = {k: [] for k in keys} if cfg.record_params else None
    count = 0
    trace = []
    # overflow in a diverging chain is caught by the norm check below
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, cfg.steps + 1):
            if n:
                f = model.forward(p)
                e = 2.0 * (f - g[None])
                grads = model.grads(p, e)
            else:
                grads = {k: 0.0 for k in keys}
            xi = noise.next()
            for j, k in enumerate(keys):
                z = xi[:, offs[j]: offs[j + 1]].reshape(p[k].shape)
                p[k] = p[k] - etas[k] * (gam[k] * p[k] + grads[k]) + amp[k] * z
            if step % 256 == 0 or step == cfg.steps:
                for k in keys:
                    norms = np.sqrt(np.sum(p[k].reshape(R, -1) ** 2, axis=1))
                    if not np.all(np.isfinite(norms)) or np.any(norms > limit[k]):
                        worst = float(np.max(np.where(np.isfinite(norms), norms, np.inf)))
                        raise LangevinDivergence(
                            f"parameter group {k!r} diverged at step {step} (norm {worst:.3g})", step, trace)
            if step > cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
                count += 1
                if n:
                    acc_tr += model.forward(p)
                if nt:
                    acc_te += model.forward(p, Zt)
                if cfg.rao_blackwell and n and isinstance(model, _CnnModel):
                    a_tr, a_te = model.rao_blackwell(p, g, cfg.sigma2, Zt)
                    rb_tr += a_tr
                    rb_te += a_te
                if cfg.record_weights and "w" in p and isinstance(model, _CnnModel):
                    snaps.append(p["w"].copy())
                    snap_steps.append(step)
                if pstore is not None:
                    for k in keys:
                        pstore[k].append(p[k].reshape(R, -1).copy())
            if cfg.trace_every and n and step % cfg.trace_every == 0:
                f = model.forward(p)
                mse = np.mean((f - g[None]) ** 2, axis=1)
                for r in range(R):
                    ar = empirical_alpha(acc_tr[r] / count, g) if count else math.nan
                    trace.append({"seed": seed_offset + r, "step": step, "train_mse": float(mse[r]),
                                  "alpha_running": float(ar)})

    count = max(count, 1)
    seed_tr, seed_te = acc_tr / count, acc_te / count
    stats = EnsembleStats(seed_tr.mean(0), seed_te.mean(0), seed_tr, seed_te, trace=trace,
                          n_snapshots=R * cfg.n_snapshots)
    if cfg.rao_blackwell and rb_tr is not None:
        stats.rb_train_means = rb_tr / count
        stats.rb_test_means = rb_te / count
    if cfg.record_weights and snaps:
        stats.weight_snapshots = np.stack(snaps, axis=1)  # (R, T, S, C)
        stats.snapshot_steps = np.asarray(snap_steps)
    if pstore is not None:
        stats.param_snapshots = {k: np.stack(v, axis=1) for k, v in pstore.items()}  # (R, T, size)
    if n and np.any(g):
        stats.alpha_train, stats.alpha_train_stderr = empirical_alpha_trace(seed_tr, g)
    stats.wall_time = time.perf_counter() - t0
    return stats


def attach_test_alpha(stats: EnsembleStats, g_test) -> EnsembleStats:
    if stats.seed_test_means.shape[1]:
        stats.alpha_test, stats.alpha_test_stderr = empirical_alpha_trace(stats.seed_test_means, g_test)
    return stats


def empirical_alpha_trace(seed_means, targets) -> tuple[float, float]:
    """Ensemble alpha and its standard error over seed blocks.

    ``seed_means`` is ``(n_seeds, n)`` (one time-averaged output per seed) or
    a plain vector (no error estimate).
    """
    g = np.asarray(targets, float).ravel()
    M = np.atleast_2d(np.asarray(seed_means, float))
    a = empirical_alpha(M.mean(0), g)
    if M.shape[0] < 2:
        return a, math.nan
    per = np.array([empirical_alpha(m, g) for m in M])
    return a, float(per.std(ddof=1) / math.sqrt(M.shape[0]))


def bootstrap_alpha_stderr(seed_means, targets, n_boot: int = 2000, seed: int = 0) -> float:
    """Bootstrap over seeds; used as an oracle for the seed-block error."""
    g = np.asarray(targets, float).ravel()
    M = np.atleast_2d(np.asarray(seed_means, float))
    rng = make_rng(seed, "bootstrap")
    idx = rng.integers(0, M.shape[0], size=(n_boot, M.shape[0]))
    vals = [empirical_alpha(M[i].mean(0), g) for i in idx]
    return float(np.std(vals, ddof=1))


def snapshot_hidden_weights(stats: EnsembleStats) -> list:
    """All recorded ``S x C`` filter matrices, seeds first then time."""
    if stats.weight_snapshots is None:
        raise TypeError("no conv-filter snapshots recorded (CNN model with record_weights=True required)")
    R, T = stats.weight_snapshots.shape[:2]
    return [stats.weight_snapshots[r, t] for r in range(R) for t in range(T)]


def ensemble_predict(arch, param_snapshots: dict, X, chunk: int = 256) -> np.ndarray:
    """Average network output over every recorded ``(seed, time)`` snapshot."""
    X = np.atleast_2d(np.asarray(X, float))
    model = _model_for(arch, np.zeros((1, arch.d)))
    flat = {k: v.reshape(-1, v.shape[-1]) for k, v in param_snapshots.items()}
    total = next(iter(flat.values())).shape[0]
    if isinstance(model, _CnnModel):
        Zf = windows(X, arch.S).reshape(X.shape[0], arch.d)
    else:
        Zf = X
    acc = np.zeros(X.shape[0])
    for lo in range(0, total, chunk):
        block = {k: v[lo: lo + chunk] for k, v in flat.items()}
        m = next(iter(block.values())).shape[0]
        p = {k: block[k].reshape(shp) for k, shp in model.shapes(m).items()}
        acc += model.forward(p, Zf).sum(0)
    return acc / total
