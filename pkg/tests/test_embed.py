import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specbasis.embed import (
    METRIC_NAMES,
    Embedding,
    aggregate_table,
    class_weighted_subsample,
    clustering_metrics,
    kmeans,
    kmeans_fit,
    laplacian_eigenmaps,
    oa_eigenmaps,
    pca_embed,
    scatter_svg,
    write_aggregate_table,
    write_embedding_csv,
)
from specbasis.errors import ContractError, DimensionError
from specbasis.geometry import PointCloud, synth_manifold
from specbasis.oracle import segment_analytic_eigens
from specbasis.spectral import SpectralBasis


def segment_basis(n=100, K=5):
    e = segment_analytic_eigens(n, K)
    Q = e.vectors * np.sqrt(e.mass)[:, None]
    return SpectralBasis(Q, Q[:, 0] ** 2, e.values)


@pytest.fixture(scope="module")
def blobs():
    return synth_manifold("blobs", {"c": 3, "n": 300, "d": 20, "sigma": 0.05}, seed=1)


# --------------------------------------------------------------- embeddings


def test_oa_first_harmonic_is_monotone():
    emb = oa_eigenmaps(segment_basis(), 1)
    x = emb.coords[:, 0]
    assert np.all(np.diff(x) < 0) or np.all(np.diff(x) > 0)
    grid = np.linspace(0, 1, 100)
    assert abs(np.corrcoef(x, np.cos(np.pi * grid))[0, 1]) > 0.999


def test_oa_needs_nontrivial_columns():
    b = segment_basis(K=1)
    with pytest.raises(ContractError):
        oa_eigenmaps(b, 1)
    with pytest.raises(ContractError):
        oa_eigenmaps(segment_basis(K=3), 3)


def test_oa_sign_flip_reflects_and_keeps_metrics(blobs):
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(np.column_stack([np.ones(blobs.n), blobs.points[:, :3] + 0.01 * rng.standard_normal((blobs.n, 3))]))
    Q[:, 0] = np.abs(Q[:, 0])
    b = SpectralBasis(Q, Q[:, 0] ** 2)
    e1 = oa_eigenmaps(b, 2)
    Q2 = Q.copy()
    Q2[:, 1] *= -1
    e2 = oa_eigenmaps(SpectralBasis(Q2, Q2[:, 0] ** 2), 2)
    np.testing.assert_array_equal(e2.coords[:, 0], -e1.coords[:, 0])
    m1 = clustering_metrics(kmeans(e1, 3, seed=0), blobs.labels).as_dict()
    m2 = clustering_metrics(kmeans(e2, 3, seed=0), blobs.labels).as_dict()
    for name in METRIC_NAMES:
        assert m1[name] == pytest.approx(m2[name], abs=1e-12)


def test_laplacian_fiedler_separates_two_blobs():
    rng = np.random.default_rng(1)
    pts = np.vstack([rng.standard_normal((40, 2)), rng.standard_normal((40, 2)) + [6.0, 0.0]])
    truth = np.repeat([0, 1], 40)
    emb = laplacian_eigenmaps(pts, 10, 1)
    assert len(emb.index) == 80
    side = emb.coords[:, 0] > 0
    assert np.array_equal(side, truth == 1) or np.array_equal(side, truth == 0)


def test_laplacian_complete_graph_degenerate():
    pts = np.random.default_rng(1).standard_normal((6, 3))
    emb = laplacian_eigenmaps(pts, 5, 2)
    assert emb.meta["degenerate"]
    np.testing.assert_allclose(emb.meta["eigenvalues"][1:], emb.meta["eigenvalues"][1], rtol=1e-10)


def test_laplacian_circle_recovers_angle():
    pc = synth_manifold("circle", {"n": 120})
    emb = laplacian_eigenmaps(pc, 4, 2)
    r = np.linalg.norm(emb.coords, axis=1)
    assert r.std() / r.mean() < 1e-6
    theta = np.unwrap(np.arctan2(emb.coords[:, 1], emb.coords[:, 0]))
    assert abs(abs(theta[-1] - theta[0]) - 2 * np.pi * 119 / 120) < 1e-6


def test_laplacian_disconnected_modes():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.standard_normal((50, 2)), rng.standard_normal((20, 2)) + 100])
    with pytest.warns(RuntimeWarning, match="largest component"):
        emb = laplacian_eigenmaps(pts, 5, 2)
    assert len(emb.index) == 50
    kept = laplacian_eigenmaps(pts, 5, 2, on_disconnected="keep")
    assert len(kept.index) == 70 and kept.meta["components"] == 2
    with pytest.raises(ContractError, match="fragmented"):
        laplacian_eigenmaps(pts, 5, 2, min_component_fraction=0.9)


def test_pca_line():
    t = np.linspace(-2, 3, 40)
    pts = np.outer(t, [1.0, 2.0, -1.0]) + [5.0, 0.0, 1.0]
    emb = pca_embed(PointCloud(pts), 1)
    coef = np.polyfit(t, emb.coords[:, 0], 1)
    np.testing.assert_allclose(np.polyval(coef, t), emb.coords[:, 0], atol=1e-10)
    assert emb.meta["explained_variance_ratio"][0] == pytest.approx(1.0)


def test_pca_isotropic_ratios():
    pts = np.random.default_rng(0).standard_normal((20000, 4))
    ratios = pca_embed(pts, 4).meta["explained_variance_ratio"]
    np.testing.assert_allclose(ratios, 0.25, atol=0.01)


def test_pca_full_rank_preserves_distances():
    pts = np.random.default_rng(1).standard_normal((30, 5))
    emb = pca_embed(pts, 5)
    X = pts - pts.mean(0)
    np.testing.assert_allclose(emb.coords @ emb.coords.T, X @ X.T, atol=1e-8)


def test_pca_k_range():
    with pytest.raises(ContractError):
        pca_embed(np.zeros((5, 2)) + np.arange(5)[:, None], 3)


def test_embedding_validation():
    with pytest.raises(ContractError):
        Embedding(np.array([[np.nan]]), "x")
    with pytest.raises(DimensionError):
        Embedding(np.zeros(4), "x")


# -------------------------------------------------------------------- k-means


def test_kmeans_recovers_blobs(blobs):
    rep = clustering_metrics(kmeans(blobs.points, 3, seed=0), blobs.labels)
    assert rep.nmi == 1.0 and rep.ari == 1.0


def test_kmeans_single_cluster(blobs):
    assert np.all(kmeans(blobs.points, 1) == 0)


def test_kmeans_c_equals_n():
    X = np.random.default_rng(0).standard_normal((12, 2))
    res = kmeans_fit(X, 12, seed=1)
    assert res.inertia == pytest.approx(0, abs=1e-12)
    assert len(np.unique(res.labels)) == 12


def test_kmeans_deterministic(blobs):
    a = kmeans_fit(blobs.points[:, :2], 4, seed=3)
    b = kmeans_fit(blobs.points[:, :2], 4, seed=3)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.inertia == b.inertia


def test_kmeans_reseeds_empty_cluster():
    # duplicated points force k-means++ to pick coincident centres
    X = np.vstack([np.zeros((10, 2)), np.ones((10, 2))])
    res = kmeans_fit(X, 3, restarts=1, seed=0)
    assert res.inertia == 0.0 and res.reseeded > 0
    assert np.all(np.isfinite(res.centers))


def test_kmeans_bad_c():
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 4)


# -------------------------------------------------------------------- metrics


def test_identical_labels():
    y = np.array([0, 0, 1, 1, 2, 2])
    rep = clustering_metrics(y, y)
    assert rep.nmi == pytest.approx(1) and rep.ari == pytest.approx(1) and rep.fmi == pytest.approx(1)


def test_single_cluster_ari_zero():
    rep = clustering_metrics(np.zeros(8, int), np.repeat([0, 1], 4))
    assert rep.ari == 0.0


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    true = rng.integers(0, 4, 50)
    pred = rng.integers(0, 3, 50)
    base = clustering_metrics(pred, true).as_dict()
    renamed = clustering_metrics(rng.permutation(3)[pred], rng.permutation(4)[true]).as_dict()
    for name in METRIC_NAMES:
        assert renamed[name] == pytest.approx(base[name], abs=1e-12)
    assert 0 <= base["nmi"] <= 1 and -1 <= base["ari"] <= 1 and 0 <= base["fmi"] <= 1


def test_metrics_length_mismatch():
    with pytest.raises(DimensionError):
        clustering_metrics(np.zeros(3), np.zeros(4))


# ------------------------------------------------------------------- sampling


def test_class_weighted_subsample(blobs):
    idx, w = class_weighted_subsample(blobs.labels, 150, seed=4)
    assert len(idx) == 150 == len(np.unique(idx))
    gap = 1 + (w * np.log(w)).sum() / np.log(3)
    assert 0.01 <= gap <= 0.1
    again, _ = class_weighted_subsample(blobs.labels, 150, seed=4)
    np.testing.assert_array_equal(idx, again)


def test_class_weighted_subsample_too_large(blobs):
    with pytest.raises(ContractError):
        class_weighted_subsample(blobs.labels, 301)


# --------------------------------------------------------------------- output


def test_embedding_csv_round_trip(tmp_path):
    emb = Embedding(np.random.default_rng(0).standard_normal((10, 2)), "pca")
    labels = np.arange(10) % 3
    path = write_embedding_csv(emb, tmp_path / "e.csv", labels)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["index", "x0", "x1", "label"]
    back = np.array([[float(v) for v in r[1:3]] for r in rows[1:]])
    np.testing.assert_array_equal(back, emb.coords)


def test_aggregate_table(tmp_path):
    runs = {"pca": [dict.fromkeys(METRIC_NAMES, v) for v in (0.5, 0.7)]}
    table = aggregate_table(runs)
    assert table["pca"]["nmi"] == pytest.approx((0.6, 0.1))
    path = write_aggregate_table(runs, tmp_path / "agg.csv")
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert rows[0][:3] == ["method", "runs", "nmi"]
    assert rows[1][:3] == ["pca", "2", "0.600 ± 0.100"]


def test_scatter_svg_is_valid_xml(tmp_path):
    X = np.random.default_rng(0).standard_normal((25, 2))
    svg = scatter_svg(X, np.arange(25) % 3, tmp_path / "s.svg", title="demo")
    root = ET.fromstring(svg)
    circles = [el for el in root if el.tag.endswith("circle")]
    assert len(circles) == 25
    assert (tmp_path / "s.svg").read_text() == svg
    assert ET.fromstring(scatter_svg(np.arange(5.0))) is not None
