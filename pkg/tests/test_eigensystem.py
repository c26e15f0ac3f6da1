import json
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spsgm.data import FunctionalDataset
from spsgm.eigensystem import (
    TruncationConfig,
    build_eigensystem,
    dumps_eigensystem,
    eigensystem_from_dict,
    eigensystem_to_dict,
    eval_eigenfunction,
    load_eigensystem,
    nystrom_eigensystem,
    save_eigensystem,
    select_truncation,
)
from spsgm.errors import InvalidConfigError, InvalidIndexError, NumericFailureError, ParseError
from spsgm.kernels import GramMatrix, KernelSpec, assemble_gram

from oracles import brownian_eigenfunction, brownian_eigenvalue


def _es(spec, anchors, normalization=None):
    return nystrom_eigensystem(assemble_gram(spec, anchors), spec, normalization)


def test_constant_kernel():
    es = _es(KernelSpec("Constant"), np.linspace(0, 1, 7))
    assert es.size == 1  # the zero eigenvalues are clamped and dropped
    assert es.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(es.eigvec_table[:, 0], 1.0, atol=1e-12)


def test_identity_gram():
    S = 5
    es = _es(KernelSpec("RBF", 1e-6), np.linspace(0, 1, S))
    np.testing.assert_allclose(es.eigenvalues, np.full(S, 1.0 / S), rtol=1e-12)


def test_brownian_oracle(brownian_es):
    for k in range(1, 6):
        assert brownian_es.eigenvalues[k - 1] == pytest.approx(brownian_eigenvalue(k), rel=0.02)
    assert brownian_es.eigenvalues[0] == pytest.approx(0.405285, rel=0.02)
    assert eval_eigenfunction(brownian_es, 0, 0.5) == pytest.approx(brownian_eigenfunction(1, 0.5), rel=0.03)


def test_constant_kernel_extension():
    es = _es(KernelSpec("Constant"), np.linspace(0, 1, 9))
    for x in (-3.0, 0.123, 10.0):
        assert eval_eigenfunction(es, 0, x) == pytest.approx(1.0, rel=1e-12)


def test_extension_reproduces_table_at_anchors():
    anchors = np.linspace(0, 1, 60)
    es = _es(KernelSpec("Matern32", 0.2), anchors)
    for m in range(5):
        for s in (0, 17, 59):
            assert eval_eigenfunction(es, m, anchors[s]) == pytest.approx(es.eigvec_table[s, m], rel=1e-6, abs=1e-9)


def test_extension_index_errors():
    es = _es(KernelSpec("Constant"), [0.0, 1.0])
    with pytest.raises(InvalidIndexError):
        eval_eigenfunction(es, 1, 0.5)
    with pytest.raises(InvalidIndexError):
        eval_eigenfunction(es, -1, 0.5)


def test_orthonormality_and_gram_reconstruction():
    anchors = np.linspace(0, 1, 150)
    spec = KernelSpec("Matern12", 0.3)
    K = assemble_gram(spec, anchors).entries
    es = _es(spec, anchors)
    S = anchors.size
    E = es.eigvec_table
    np.testing.assert_allclose(E.T @ E / S, np.eye(es.size), atol=1e-8)
    U = E / math.sqrt(S)
    R = U @ np.diag(es.eigenvalues) @ U.T
    assert np.linalg.norm(K / S - R) / np.linalg.norm(K / S) < 1e-8


def test_sign_convention():
    es = _es(KernelSpec("RBF", 0.2), np.linspace(0, 1, 40))
    for m in range(es.size):
        col = es.eigvec_table[:, m]
        first = col[np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]]
        assert first > 0


def test_clamping_drops_tiny_eigenvalues():
    es = _es(KernelSpec("RBF", 0.5), np.linspace(0, 1, 200))
    assert np.all(es.eigenvalues > 1e-12 * es.eigenvalues[0])
    assert np.all(np.diff(es.eigenvalues) <= 0)
    assert es.size < 200


def test_baker_convergence():
    spec = KernelSpec("RBF", 0.3)
    lam = {S: _es(spec, np.linspace(0, 1, S)).eigenvalues[:3] for S in (250, 500, 1000)}
    assert np.all(np.abs(lam[1000] - lam[500]) < np.abs(lam[500] - lam[250]))


def test_deterministic_bitwise():
    pts = np.random.default_rng(0).uniform(size=(80, 2))
    a = _es(KernelSpec("Matern32", 0.3), pts)
    b = _es(KernelSpec("Matern32", 0.3), pts.copy())
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigvec_table, b.eigvec_table)


def test_degenerate_cluster_deterministic():
    spec = KernelSpec("RBF", 1e-6)
    a = _es(spec, np.linspace(0, 1, 6))
    b = _es(spec, np.linspace(0, 1, 6))
    assert np.array_equal(a.eigvec_table, b.eigvec_table)
    np.testing.assert_allclose(a.eigvec_table.T @ a.eigvec_table / 6, np.eye(6), atol=1e-10)


def test_eigensolver_failure(monkeypatch):
    def boom(*_):
        raise np.linalg.LinAlgError("did not converge")

    monkeypatch.setattr(np.linalg, "eigh", boom)
    with pytest.raises(NumericFailureError):
        _es(KernelSpec("RBF"), [0.0, 1.0])


def test_duplicate_observation_points_deduplicated():
    ds = FunctionalDataset([[0.0, 0.5, 1.0], [0.5, 1.0, 0.25]], [[1, 2, 3], [4, 5, 6]])
    es = build_eigensystem(KernelSpec("RBF", 0.3), ds)
    assert es.S == 4


@pytest.mark.parametrize(
    "lam, eta, M", [([9, 1], 0.89, 0), ([9, 1], 0.95, 1), ([5, 3, 2, 1e-3], 1.0, 3), ([5, 3, 2], 0.0, 0)]
)
def test_select_truncation_examples(lam, eta, M):
    assert select_truncation(np.array(lam, float), TruncationConfig("threshold", eta)) == M


def test_select_truncation_fixed():
    assert select_truncation(np.array([3.0, 2.0, 1.0]), TruncationConfig("fixed", M=2)) == 2
    with pytest.raises(InvalidConfigError):
        select_truncation(np.array([3.0, 2.0]), TruncationConfig("fixed", M=2))
    with pytest.raises(InvalidConfigError):
        TruncationConfig("threshold", 1.5)


@given(
    st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=30),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_select_truncation_monotone(vals, e1, e2):
    lam = np.sort(np.array(vals))[::-1]
    lo, hi = min(e1, e2), max(e1, e2)
    M1 = select_truncation(lam, TruncationConfig("threshold", lo))
    M2 = select_truncation(lam, TruncationConfig("threshold", hi))
    assert M1 <= M2
    cum = np.cumsum(lam) / lam.sum()
    assert cum[M2] >= hi - 1e-12
    if M2 > 0:
        assert cum[M2 - 1] < hi


def test_serialisation_roundtrip_bitwise(tmp_path):
    pts = np.random.default_rng(2).uniform(size=(30, 2))
    ds = FunctionalDataset([pts], [np.zeros(30)])
    es = build_eigensystem(KernelSpec("RBF", 0.4), ds)
    digest = save_eigensystem(es, tmp_path / "e.json")
    back = load_eigensystem(tmp_path / "e.json")
    assert np.array_equal(back.eigenvalues, es.eigenvalues)
    assert np.array_equal(back.eigvec_table, es.eigvec_table)
    assert np.array_equal(back.anchor_points, es.anchor_points)
    assert back.normalization == es.normalization
    assert dumps_eigensystem(back) == dumps_eigensystem(es)
    assert len(digest) == 64
    x = np.array([[0.3, 0.9]])
    assert np.array_equal(back.basis(x), es.basis(x))


def test_serialisation_header_first():
    es = _es(KernelSpec("Constant"), [0.0, 1.0])
    keys = list(json.loads(dumps_eigensystem(es)))
    assert keys.index("header") < keys.index("eigenvalues") < keys.index("eigvec_table")
    assert eigensystem_from_dict(eigensystem_to_dict(es)).size == 1


def test_load_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError):
        load_eigensystem(tmp_path / "bad.json")
    (tmp_path / "other.json").write_text('{"format": "x"}')
    with pytest.raises(ParseError):
        load_eigensystem(tmp_path / "other.json")


def test_empirical_covariance_eigensystem_quadratic(quadratic_es):
    lam = quadratic_es.eigenvalues
    assert lam.size >= 2 and np.all(np.diff(lam) <= 0)
    M = select_truncation(quadratic_es, TruncationConfig("threshold", 0.99))
    cum = np.cumsum(lam) / lam.sum()
    assert cum[M] >= 0.99 and (M == 0 or cum[M - 1] < 0.99)


def test_brownian_runtime():
    grid = np.arange(1, 1001) / 1000.0
    spec = KernelSpec("Custom", func=lambda A, B: np.minimum(A[:, :1], B[:, 0][None, :]))
    t0 = time.perf_counter()
    _es(spec, grid)
    assert time.perf_counter() - t0 < 30.0


def test_gram_object_used_directly():
    G = GramMatrix(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([[0.0], [1.0]]))
    es = nystrom_eigensystem(G, KernelSpec("Constant"))
    np.testing.assert_allclose(es.eigenvalues, [1.5, 0.5])
