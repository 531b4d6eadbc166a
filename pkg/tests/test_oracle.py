import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specbasis.errors import ContractError, DegenerateGeometryError, DimensionError
from specbasis.geometry import PointCloud, TriangleMesh, build_knn, icosphere
from specbasis.oracle import (
    aligned_cosine_similarity,
    calibrate_scale,
    cotan_laplacian,
    degenerate_cluster_diagnostic,
    eigenvalue_discrepancy,
    generalized_eigens,
    graph_laplacian,
    jacobi_eigh,
    path_operator,
    pca_expected_error,
    run_theorem_suite,
    segment_analytic_eigens,
    sym_eigendecomposition,
    verify_minmax_theorem,
    verify_normalized_relation,
    verify_pca_equivalence,
)


@pytest.fixture(scope="module")
def sphere_op():
    return cotan_laplacian(icosphere(3))


@pytest.fixture(scope="module")
def sphere_eigs(sphere_op):
    return generalized_eigens(sphere_op, 20)


# ------------------------------------------------------------------ cotangent


def test_equilateral_triangle_weights():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    S = cotan_laplacian(TriangleMesh(V, np.array([[0, 1, 2]]))).dense()
    off = S[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, -1 / (2 * np.sqrt(3)), rtol=1e-14)


def test_square_diagonal_weight_vanishes():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    op = cotan_laplacian(TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]])))
    S = op.dense()
    assert abs(S[0, 2]) <= 1e-15
    np.testing.assert_allclose(op.mass, [1 / 3, 1 / 6, 1 / 3, 1 / 6])


def test_icosphere_operator_sanity(sphere_op):
    assert sphere_op.nullspace_residual() <= 1e-10
    assert sphere_op.symmetry_error() <= 1e-10
    assert abs(sphere_op.mass.sum() / (4 * np.pi) - 1) <= 0.02
    assert not sphere_op.disconnected


def test_zero_area_face_reports_index():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
    with pytest.raises(DegenerateGeometryError) as info:
        cotan_laplacian(TriangleMesh(V, np.array([[0, 1, 3], [0, 1, 2]])))
    assert info.value.index == 1


# ---------------------------------------------------------------------- graph


def test_path_graph_binary():
    g = build_knn(PointCloud(np.array([[0.0], [1.0], [2.0]])), 1)
    op = graph_laplacian(g)
    np.testing.assert_array_equal(op.dense(), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    np.testing.assert_array_equal(op.mass, [1, 2, 1])


def test_complete_graph_spectrum():
    pts = np.array([[0.0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])
    op = graph_laplacian(build_knn(pts, 2))
    np.testing.assert_allclose(np.linalg.eigvalsh(op.dense()), [0, 3, 3], atol=1e-12)


@pytest.mark.parametrize("weights,norm", [("binary", "none"), ("gaussian", "none"), ("gaussian", "symmetric")])
def test_graph_operator_invariants(weights, norm):
    pts = np.random.default_rng(0).standard_normal((60, 3))
    op = graph_laplacian(build_knn(pts, 6), weights, sigma=0.8, normalization=norm)
    assert op.symmetry_error() <= 1e-10
    assert op.nullspace_residual() <= 1e-8
    W = -op.dense() + np.diag(np.diag(op.dense()))
    np.testing.assert_array_equal(W, W.T)


def test_disconnected_graph_warns():
    pts = np.vstack([np.zeros((5, 2)) + np.arange(5)[:, None] * 0.1, 100 + np.arange(5)[:, None] * 0.1 + np.zeros((5, 2))])
    with pytest.warns(RuntimeWarning, match="2 connected components"):
        op = graph_laplacian(build_knn(pts, 2))
    assert op.disconnected and op.n_components == 2


def test_graph_bad_options():
    g = build_knn(np.random.default_rng(0).standard_normal((10, 2)), 3)
    with pytest.raises(ContractError):
        graph_laplacian(g, "gaussian")
    with pytest.raises(ContractError):
        graph_laplacian(g, normalization="rw")


def test_path_spectrum():
    for n in (5, 17, 100):
        w = np.linalg.eigvalsh(path_operator(n).dense())
        np.testing.assert_allclose(w, 2 - 2 * np.cos(np.arange(n) * np.pi / n), atol=1e-8)


# -------------------------------------------------------------------- segment


def test_segment_analytic():
    e = segment_analytic_eigens(100, 5)
    np.testing.assert_allclose(e.vectors[:, 0], 1.0, atol=1e-12)
    assert e.values[0] == 0 and e.values[1] == pytest.approx(np.pi**2, rel=1e-15)
    assert e.orthonormality_error() <= 1e-12
    for n in (50, 100, 400):
        x = np.linspace(0, 1, n)
        assert abs(np.trapezoid(np.cos(np.pi * x) * np.cos(2 * np.pi * x), x)) <= 1 / n**2


def test_segment_count_range():
    with pytest.raises(ContractError):
        segment_analytic_eigens(5, 6)


# ---------------------------------------------------------------- eigensolver


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_diagonal_eigens(method):
    e = sym_eigendecomposition(np.diag([3.0, 1.0, 2.0]), method=method)
    np.testing.assert_allclose(e.values, [1, 2, 3])
    np.testing.assert_allclose(np.abs(e.vectors), np.eye(3)[:, [1, 2, 0]], atol=1e-14)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_path5_eigens(method):
    e = sym_eigendecomposition(path_operator(5).dense(), method=method)
    np.testing.assert_allclose(e.values, 2 - 2 * np.cos(np.arange(5) * np.pi / 5), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_random_symmetric_residuals(seed):
    A = np.random.default_rng(seed).standard_normal((20, 20))
    A = A + A.T
    norm = np.linalg.norm(A, 2)
    for method in ("lapack", "jacobi"):
        e = sym_eigendecomposition(A, method=method)
        assert np.all(np.diff(e.values) >= 0)
        assert np.linalg.norm(A @ e.vectors - e.vectors * e.values, axis=0).max() <= 1e-8 * norm
    w_j, _ = jacobi_eigh(A)
    np.testing.assert_allclose(w_j, np.linalg.eigvalsh(A), atol=1e-12 * norm)


def test_eigen_errors():
    with pytest.raises(ContractError):
        sym_eigendecomposition(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        sym_eigendecomposition(np.ones((2, 3)))
    with pytest.raises(ContractError):
        sym_eigendecomposition(np.eye(3), count=4)


# ---------------------------------------------------------------- generalized


def test_identity_mass_views_coincide():
    q, v = generalized_eigens(path_operator(8), 8)
    np.testing.assert_array_equal(q.vectors, v.vectors)
    np.testing.assert_array_equal(q.values, v.values)


def test_views_orthonormal_and_null(sphere_op, sphere_eigs):
    q, v = sphere_eigs
    assert q.orthonormality_error() <= 1e-8
    assert v.orthonormality_error() <= 1e-8
    np.testing.assert_array_equal(q.values, v.values)
    s = np.sqrt(sphere_op.mass)
    np.testing.assert_allclose(q.vectors[:, 0], s / np.linalg.norm(s), atol=1e-8)
    np.testing.assert_allclose(v.vectors[:, 0], v.vectors[0, 0], atol=1e-8)
    assert abs(q.values[0]) <= 1e-8


def test_sphere_harmonic_clusters(sphere_eigs):
    q, _ = sphere_eigs
    lam = q.values[:16]
    scale = 2.0 / lam[1:4].mean()
    lam = lam * scale
    start = 0
    for ell in range(4):
        block = lam[start : start + 2 * ell + 1]
        np.testing.assert_allclose(block, ell * (ell + 1), rtol=0.05, atol=1e-8)
        start += 2 * ell + 1


# -------------------------------------------------------------------- metrics


def test_cosine_identical_and_negated():
    B = np.random.default_rng(0).standard_normal((30, 4))
    rep = aligned_cosine_similarity(B, B)
    np.testing.assert_allclose(rep.per_index, 1.0)
    rep = aligned_cosine_similarity(-B, B, upto=3)
    np.testing.assert_allclose(rep.per_index, 1.0)
    assert rep.flipped.all() and rep.upto == 3


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_cosine_sign_invariance(seed):
    rng = np.random.default_rng(seed)
    P, R = rng.standard_normal((2, 25, 5))
    base = aligned_cosine_similarity(P, R).per_index
    sp, sr = rng.choice([-1, 1], 5), rng.choice([-1, 1], 5)
    np.testing.assert_allclose(aligned_cosine_similarity(P * sp, R * sr).per_index, base, atol=1e-15)


def test_cosine_errors():
    with pytest.raises(ContractError):
        aligned_cosine_similarity(np.zeros((5, 2)), np.ones((5, 2)))
    with pytest.raises(ContractError):
        aligned_cosine_similarity(np.ones((5, 2)), np.ones((5, 2)), upto=3)


def test_cluster_diagnostic_rotation_inside_cluster(sphere_eigs):
    q, _ = sphere_eigs
    R = q.vectors[:, :4]
    c, s = np.cos(0.7), np.sin(0.7)
    P = R.copy()
    P[:, 1], P[:, 2] = c * R[:, 1] - s * R[:, 2], s * R[:, 1] + c * R[:, 2]
    per_index = aligned_cosine_similarity(P, R).per_index
    assert per_index[1] < 0.8
    diag = degenerate_cluster_diagnostic(P, R, q.values, 4)
    assert [d["indices"] for d in diag] == [[1], [2, 3, 4]]
    assert diag[1]["mean_cosine"] >= 1 - 1e-10


def test_discrepancy_examples():
    ref = np.array([0.0, 1.0, 4.0, 9.0])
    assert eigenvalue_discrepancy(ref, ref)[:2] == (0.0, 0.0)
    mean, std, rel = eigenvalue_discrepancy(1.1 * ref, ref)
    assert mean == pytest.approx(0.1) and std == pytest.approx(0, abs=1e-15)
    assert len(rel) == 3
    with pytest.raises(ContractError):
        eigenvalue_discrepancy(ref, np.array([0.0, 1.0, 0.0, 9.0]))


@pytest.mark.parametrize("method", ["l1", "lsq", "first"])
def test_calibration_recovers_scale(method):
    ref = (np.arange(6) * np.pi) ** 2
    s = calibrate_scale(ref / 37.0, ref, (2, 6), method)
    assert s == pytest.approx(37.0, rel=1e-12)


def test_l1_calibration_minimizes_discrepancy():
    rng = np.random.default_rng(0)
    ref = (np.arange(8) * np.pi) ** 2
    pred = ref * rng.uniform(0.5, 1.5, 8) / 20
    s = calibrate_scale(pred, ref, (2, 8), "l1")
    best = eigenvalue_discrepancy(s * pred, ref, (2, 8))[0]
    for t in np.linspace(0.5 * s, 1.5 * s, 401):
        assert best <= eigenvalue_discrepancy(t * pred, ref, (2, 8))[0] + 1e-12


# ------------------------------------------------------------- theorem checks


def test_minmax_diagonal():
    rep = verify_minmax_theorem(3, 1, seed=0, L=np.diag([1.0, 2.0, 3.0]))
    assert rep.passed
    P = np.diag([0.0, 1.0, 1.0])
    f = np.array([0, 1, 0]) / np.sqrt(2)
    assert f @ P @ f == pytest.approx(0.5)


def test_minmax_identity_is_degenerate_not_failed():
    rep = verify_minmax_theorem(4, 2, seed=1, L=np.eye(4))
    assert rep.passed and rep.notes


@pytest.mark.parametrize("seed", range(20))
def test_minmax_random(seed):
    assert verify_minmax_theorem(8, 3, seed).passed


def test_pca_diagonal_closed_form():
    C = np.diag([5.0, 3.0, 2.0, 1.0])
    assert pca_expected_error(np.eye(4)[:, :2], C) == pytest.approx(3.0)


def test_pca_identity_ties():
    rng = np.random.default_rng(0)
    errs = [pca_expected_error(np.linalg.qr(rng.standard_normal((5, 2)))[0], np.eye(5)) for _ in range(10)]
    np.testing.assert_allclose(errs, 3.0)


def test_pca_random():
    rep = verify_pca_equivalence(6, 2, samples=100_000, seed=0)
    assert rep.passed, rep.to_json()


def test_normalized_identity_and_scalar():
    assert verify_normalized_relation(10, seed=0, N=1.0).passed
    rng = np.random.default_rng(0)
    W = np.triu(rng.uniform(0.1, 1, (6, 6)), 1)
    Sigma = np.diag((W + W.T).sum(1)) - (W + W.T)
    a = np.linalg.eigvalsh(Sigma)
    b = np.linalg.eigvalsh(Sigma / 4.0)
    np.testing.assert_allclose(b, a / 4, atol=1e-12)
    assert verify_normalized_relation(10, seed=0, N=2.0).passed


def test_normalized_random():
    assert verify_normalized_relation(20, seed=5).passed


def test_suite_runtime_and_json():
    t = time.perf_counter()
    out = run_theorem_suite(range(20), n=8, k=3, samples=100_000)
    assert time.perf_counter() - t < 60
    assert out["passed"]
    assert len(out["reports"]) == 22
    json.dumps(out)


def test_theorem_argument_checks():
    with pytest.raises(ContractError):
        verify_minmax_theorem(13, 2)
    with pytest.raises(ContractError):
        verify_pca_equivalence(11, 2)
    with pytest.raises(ContractError):
        verify_normalized_relation(51)
