import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spsgm.data import FunctionalDataset, grid2d_generate
from spsgm.eigensystem import TruncationConfig, build_eigensystem, select_truncation
from spsgm.errors import InvalidConfigError, InvalidInputError, ParseError
from spsgm.kernels import KernelSpec
from spsgm.spectral import (
    FunctionSample,
    MeanFunction,
    coeffs_csv_text,
    fit_mean,
    marginal_eval,
    project,
    read_coeffs_csv,
    reconstruct,
    reconstruct_many,
)

GRID = np.linspace(0, 1, 50)


@pytest.fixture(scope="module")
def matern_es():
    ds = FunctionalDataset.from_grid(GRID, np.zeros((1, GRID.size)))
    return build_eigensystem(KernelSpec("Matern12", 0.3), ds)


def test_single_mode_projects_to_unit_vector(matern_es):
    es = matern_es
    mu = np.sin(3 * GRID)
    mean = MeanFunction(es, mu)
    y = mu + np.sqrt(es.eigenvalues[1]) * es.eigvec_table[:, 1]
    sd = project(FunctionalDataset.from_grid(GRID, y[None]), es, 5, mean)
    np.testing.assert_allclose(sd.coeffs[0], [0, 1, 0, 0, 0, 0], atol=1e-6)


def test_mean_projects_to_zero(matern_es):
    mu = GRID**2
    ds = FunctionalDataset.from_grid(GRID, np.tile(mu, (3, 1)))
    sd = project(ds, matern_es, 4, MeanFunction(matern_es, mu))
    np.testing.assert_allclose(sd.coeffs, 0.0, atol=1e-12)


def test_whitening_quadratic(quadratic, quadratic_es):
    M = select_truncation(quadratic_es, TruncationConfig("threshold", 0.99))
    Z = project(quadratic, quadratic_es, M).coeffs
    L = Z.shape[0]
    assert np.max(np.abs(Z.mean(axis=0))) < 5 / np.sqrt(L)
    assert np.max(np.abs(Z.mean(axis=0))) < 0.05
    assert np.max(np.abs(np.atleast_2d(np.cov(Z.T)) - np.eye(M + 1))) < 0.15


def test_truncation_too_large(matern_es):
    ds = FunctionalDataset.from_grid(GRID, np.zeros((2, GRID.size)))
    with pytest.raises(InvalidConfigError):
        project(ds, matern_es, matern_es.size, MeanFunction(matern_es))


def test_unit_coefficient_reconstruction(matern_es):
    es = matern_es
    q = np.array([0.0137, 0.5, 0.9])
    for m in range(4):
        Z = np.zeros(4)
        Z[m] = 1.0
        got = reconstruct(Z, es, MeanFunction(es), q)
        np.testing.assert_allclose(got, np.sqrt(es.eigenvalues[m]) * es.basis(q, 4)[:, m], rtol=1e-13)


def test_zero_coefficients_give_mean(matern_es):
    mean = MeanFunction(matern_es, np.cos(GRID))
    np.testing.assert_array_equal(reconstruct(np.zeros(3), matern_es, mean, GRID), np.cos(GRID))


def test_round_trip_full_basis(quadratic, quadratic_es):
    M = select_truncation(quadratic_es, TruncationConfig("threshold", 1.0))
    sub = quadratic.subset(range(50))
    sd = project(sub, quadratic_es, M, fit_mean(quadratic, quadratic_es))
    rec = reconstruct_many(sd.coeffs, quadratic_es, sd.mean, quadratic.grid)
    Y = sub.values
    rel = np.linalg.norm(rec - Y, axis=1) / np.linalg.norm(Y, axis=1)
    assert np.all(rel < 1e-6)


def test_error_non_increasing_in_M():
    rng = np.random.default_rng(0)
    Y = np.array([a * GRID**2 + b * np.sin(5 * GRID) + c for a, b, c in rng.normal(size=(40, 3))])
    ds = FunctionalDataset.from_grid(GRID, Y)
    es = build_eigensystem(KernelSpec("RBF", 0.2), ds)
    mean = fit_mean(ds, es)
    errs = []
    for M in range(min(es.size, 12)):
        sd = project(ds, es, M, mean)
        rec = reconstruct_many(sd.coeffs, es, mean, GRID)
        errs.append(np.mean((rec - Y) ** 2))
    assert all(b <= a * (1 + 1e-10) + 1e-14 for a, b in zip(errs, errs[1:]))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(matern_es, z1, z2, a, b):
    mean = MeanFunction(matern_es)
    q = np.array([0.1, 0.33, 0.77])
    lhs = reconstruct(a * np.array(z1) + b * np.array(z2), matern_es, mean, q)
    rhs = a * reconstruct(z1, matern_es, mean, q) + b * reconstruct(z2, matern_es, mean, q)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_marginal_eval_swap_and_restriction(matern_es):
    f = FunctionSample(np.array([0.3, -1.2, 0.5]), matern_es, MeanFunction(matern_es, GRID))
    x1, x2, x3 = 0.2, 0.731, GRID[4]
    a = marginal_eval(f, [x1, x2])
    b = marginal_eval(f, [x2, x1])
    assert a[0] == b[1] and a[1] == b[0]
    big = f([x3, x1, 5.0, x2])
    assert big[1] == a[0] and big[3] == a[1]
    assert marginal_eval(f, []).shape == (0,)


@given(st.lists(st.floats(-1, 2), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_exchangeable_and_consistent(matern_es, xs, rnd):
    f = FunctionSample(np.array([1.0, 0.2, -0.4, 2.0]), matern_es, MeanFunction(matern_es, np.sin(GRID)))
    xs = np.array(xs)
    full = f(xs)
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    assert np.array_equal(f(xs[perm]), full[perm])
    keep = sorted(rnd.sample(range(len(xs)), max(1, len(xs) // 2)))
    assert np.array_equal(f(xs[keep]), full[keep])


def test_ragged_projection_matches_formula():
    rng = np.random.default_rng(5)
    pts = [np.sort(rng.uniform(0, 1, n)) for n in (20, 35, 12)]
    vals = [np.sin(4 * p) + rng.normal(size=p.size) * 0.1 for p in pts]
    ds = FunctionalDataset(pts, vals)
    es = build_eigensystem(KernelSpec("Matern32", 0.3), ds)
    mean = MeanFunction(es)
    sd = project(ds, es, 3, mean)
    for i, (p, v) in enumerate(zip(pts, vals)):
        B = es.basis(p, 4)
        expect = [np.mean(v * B[:, m]) / np.sqrt(es.eigenvalues[m]) for m in range(4)]
        np.testing.assert_allclose(sd.coeffs[i], expect, rtol=1e-10, atol=1e-12)


def test_ragged_sample_mean():
    ds = FunctionalDataset([[0.0, 1.0], [1.0, 2.0], [0.0, 2.0]], [[1.0, 2.0], [4.0, 6.0], [3.0, 0.0]])
    es = build_eigensystem(KernelSpec("RBF", 0.5), ds)
    mean = fit_mean(ds, es)
    np.testing.assert_allclose(mean([[0.0], [1.0], [2.0]]), [2.0, 3.0, 3.0])
    with pytest.raises(InvalidConfigError):
        fit_mean(ds, es, mode="median")


def test_mean_off_anchor_interpolates_smooth_mean(matern_es):
    mean = MeanFunction(matern_es, np.ones(GRID.size))
    assert abs(mean([0.5 + 1e-3])[0] - 1.0) < 0.05


def test_grid2d_pipeline_smoke():
    ds = grid2d_generate(8, 60, seed=0)
    es = build_eigensystem(KernelSpec("RBF", 0.2), ds)
    M = select_truncation(es, TruncationConfig("threshold", 0.99))
    sd = project(ds, es, M)
    rec = reconstruct_many(sd.coeffs, es, sd.mean, ds.grid)
    err = np.linalg.norm(rec - ds.values) / np.linalg.norm(ds.values)
    assert err < 0.2


def test_coeffs_csv_roundtrip(tmp_path):
    Z = np.random.default_rng(1).normal(size=(5, 3))
    p = tmp_path / "c.csv"
    p.write_text(coeffs_csv_text(Z, "config_sha256=abc"))
    assert p.read_text().splitlines()[1] == "z0,z1,z2"
    assert np.array_equal(read_coeffs_csv(p), Z)


def test_coeffs_csv_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        read_coeffs_csv(p)
    p.write_text("z0,z1\n1,2\n3\n")
    with pytest.raises(ParseError) as info:
        read_coeffs_csv(p)
    assert info.value.line == 3


def test_mean_needs_one_value_per_anchor(matern_es):
    with pytest.raises(InvalidInputError):
        MeanFunction(matern_es, np.ones(3))
