"""Independent reference implementations shared by the unit and acceptance tests."""

import itertools

import numpy as np


def pairings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in pairings(rest[:i] + rest[i + 1:]):
            yield [(first, other)] + tail


def naive_kappa(X, arch, order):
    """Full cumulant tensor from pairing sums of symmetrised window overlaps."""
    n = X.shape[0]
    Z = X.reshape(n, arch.N, arch.S)
    G = np.empty((n, n, arch.S, arch.S))
    for a in range(n):
        for b in range(n):
            G[a, b] = 0.5 * (Z[a].T @ Z[b] + Z[b].T @ Z[a])
    if order == 4:
        coef = 2 * arch.lam**2 / arch.C
    else:
        coef = 8 * arch.lam**3 / arch.C**2
    T = np.zeros((n,) * order)
    for idx in itertools.product(range(n), repeat=order):
        tot = 0.0
        for pr in pairings(list(idx)):
            M = np.eye(arch.S)
            for a, b in pr:
                M = M @ G[a, b]
            tot += np.trace(M)
        T[idx] = coef * tot
    return T


def contract(T, v):
    out = T
    for _ in range(T.ndim - 1):
        out = out @ v
    return out


def odd_taylor(fun, v, deg=12, nodes=40):
    """Coefficients ``a_k`` of ``fun(t v) = sum_k a_k t^(2k+1)``, ``t`` in [0, 1].

    Least squares of ``fun(t v)/t`` in ``s = t^2`` on Chebyshev nodes, then
    converted to the power basis.
    """
    s = 0.5 * (1.0 - np.cos(np.pi * (np.arange(nodes) + 0.5) / nodes))
    t = np.sqrt(s)
    Y = np.array([fun(tk * v) / tk for tk in t])
    V = np.polynomial.chebyshev.chebvander(2.0 * s - 1.0, deg - 1)
    c, *_ = np.linalg.lstsq(V, Y, rcond=None)
    out = np.zeros((deg, Y.shape[1]))
    for j in range(Y.shape[1]):
        p = np.polynomial.Chebyshev(c[:, j], domain=[0, 1]).convert(kind=np.polynomial.Polynomial)
        out[: p.coef.size, j] = p.coef
    return out
