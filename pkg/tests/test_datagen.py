import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfcons_gp.datagen import (CnnArch, CnnParams, Dataset, QuadArch, eval_cnn, eval_quadratic,
                                 eval_quadratic_teacher, make_cnn_dataset, make_cnn_teacher,
                                 make_quadratic_teacher, sample_inputs, windows)

seeds = st.integers(0, 2**32 - 1)


def naive_cnn(arch, p, X):
    out = np.zeros(X.shape[0])
    for mu in range(X.shape[0]):
        for i in range(arch.N):
            win = X[mu, arch.S * i: arch.S * (i + 1)]
            for c in range(arch.C):
                out[mu] += p.a[i, c] * sum(p.w[s, c] * win[s] for s in range(arch.S))
    return out


def naive_quad(W, s2, X):
    out = np.zeros(X.shape[0])
    for mu in range(X.shape[0]):
        for m in range(W.shape[0]):
            out[mu] += sum(W[m, j] * X[mu, j] for j in range(X.shape[1])) ** 2
        out[mu] -= s2 * sum(v * v for v in X[mu])
    return out


def test_arch_lambda():
    a = CnnArch(3, 4, 2, sigma_a2=2.0, sigma_w2=0.5)
    assert a.d == 12
    assert a.lam == pytest.approx(1.0 / 12)


def test_gaussian_unit_variance():
    X = sample_inputs(10_000, 5, "gaussian_unit", seed=1)
    assert np.allclose(X.var(0), 1.0, rtol=0.05)


def test_hypersphere_norms():
    X = sample_inputs(10_000, 20, "hypersphere", seed=2, radius=1.0)
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-14)


def test_one_over_d_norm():
    X = sample_inputs(10_000, 20, "gaussian_1_over_d", seed=3)
    assert np.mean(np.sum(X**2, 1)) == pytest.approx(1.0, rel=0.05)


def test_unknown_measure():
    with pytest.raises(ValueError, match="unknown measure"):
        sample_inputs(3, 2, "uniform", seed=0)


def test_teacher_normalized():
    t = make_cnn_teacher(CnnArch(5, 4, 1), seed=7)
    assert np.sum(t.w**2) == pytest.approx(1.0, abs=1e-14)
    assert np.sum(t.a**2) == pytest.approx(1.0, abs=1e-14)
    t2 = make_cnn_teacher(CnnArch(5, 4, 1), seed=7)
    assert np.array_equal(t.a, t2.a) and np.array_equal(t.w, t2.w)


def test_teacher_is_single_channel():
    t = make_cnn_teacher(CnnArch(2, 2, 3), seed=0)
    assert t.a.shape == (2, 1) and t.w.shape == (2, 1)


def test_eval_cnn_trivial_cases():
    arch = CnnArch(1, 4, 1)
    x = np.array([[1.0, 2.0, -1.0, 0.5]])
    assert eval_cnn(arch, CnnParams(np.ones((1, 1)), x.T.copy()), x)[0] == pytest.approx(np.sum(x**2))
    arch = CnnArch(3, 2, 4)
    p = CnnParams(np.zeros((3, 4)), np.ones((2, 4)))
    assert np.all(eval_cnn(arch, p, np.ones((5, 6))) == 0)


def test_eval_cnn_vs_loops(rng):
    arch = CnnArch(3, 4, 5)
    p = CnnParams(rng.standard_normal((3, 5)), rng.standard_normal((4, 5)))
    X = rng.standard_normal((7, 12))
    ref = naive_cnn(arch, p, X)
    assert np.allclose(eval_cnn(arch, p, X), ref, rtol=1e-12, atol=0)


def test_eval_cnn_shape_mismatch():
    arch = CnnArch(2, 2, 1)
    with pytest.raises(ValueError):
        eval_cnn(arch, CnnParams(np.ones((2, 1)), np.ones((2, 1))), np.ones((3, 5)))


def test_windows_layout():
    X = np.arange(12.0).reshape(1, 12)
    Z = windows(X, 4)
    assert Z.shape == (1, 3, 4)
    assert np.array_equal(Z[0, 1], [4, 5, 6, 7])


def test_eval_quadratic_cases(rng):
    X = rng.standard_normal((6, 4))
    assert np.allclose(eval_quadratic(np.zeros((3, 4)), 0.7, X), -0.7 * np.sum(X**2, 1))
    w = make_quadratic_teacher(4, 1.0, seed=5)
    assert np.allclose(eval_quadratic(w[None], 1.0, X), eval_quadratic_teacher(w, 1.0, X))
    W = rng.standard_normal((3, 4))
    assert np.allclose(eval_quadratic(W, 0.3, X), naive_quad(W, 0.3, X), rtol=1e-12, atol=1e-13)


def test_quadratic_teacher_mean_over_teachers():
    # E_w[(w.x)^2] = |x|^2 = 1 so E[g] = 1 - sigma_w2 = 0 at sigma_w2 = 1
    x = sample_inputs(1, 20, "hypersphere", seed=0)
    vals = np.array([eval_quadratic_teacher(make_quadratic_teacher(20, 1.0, seed=s), 1.0, x)[0]
                     for s in range(4000)])
    assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(vals.size)


def test_teacher_at_origin():
    w = make_quadratic_teacher(6, 1.0, seed=3)
    assert eval_quadratic_teacher(w, 1.0, np.zeros((1, 6)))[0] == 0.0


def test_dataset_roundtrip(tmp_path):
    ds, _ = make_cnn_dataset(CnnArch(2, 3, 1), 5, seed=4)
    ds.save(str(tmp_path / "d"))
    back = Dataset.load(str(tmp_path / "d"))
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.g, ds.g)
    assert back.seed == ds.seed and back.measure == ds.measure


def test_dataset_rejects_nonfinite():
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.array([1.0]), "gaussian_unit", 0)


# -- properties --------------------------------------------------------------


@given(seed=seeds, alpha=st.floats(-5, 5))
def test_cnn_homogeneous_degree_one(seed, alpha):
    r = np.random.default_rng(seed)
    arch = CnnArch(2, 3, 2)
    p = CnnParams(r.standard_normal((2, 2)), r.standard_normal((3, 2)))
    x = r.standard_normal((1, 6))
    assert np.allclose(eval_cnn(arch, p, alpha * x), alpha * eval_cnn(arch, p, x), rtol=1e-10, atol=1e-10)


@given(seed=seeds, alpha=st.floats(-5, 5))
def test_quadratic_homogeneous_degree_two(seed, alpha):
    r = np.random.default_rng(seed)
    W = r.standard_normal((3, 4))
    x = r.standard_normal((1, 4))
    assert np.allclose(eval_quadratic(W, 0.8, alpha * x), alpha**2 * eval_quadratic(W, 0.8, x),
                       rtol=1e-10, atol=1e-10)


@given(seed=seeds)
def test_quadratic_first_term_nonnegative(seed):
    r = np.random.default_rng(seed)
    W = r.standard_normal((3, 5))
    X = r.standard_normal((4, 5))
    first = eval_quadratic(W, 1.0, X) + np.sum(X**2, 1)
    assert np.all(first >= -1e-12)


@given(seed=seeds, measure=st.sampled_from(["gaussian_unit", "gaussian_1_over_d", "hypersphere"]))
def test_sampling_bitwise_deterministic(seed, measure):
    a = sample_inputs(5, 3, measure, seed=seed)
    b = sample_inputs(5, 3, measure, seed=seed)
    assert a.tobytes() == b.tobytes()
