import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specbasis.errors import ContractError, SmoothingUnderflowError
from specbasis.geometry import KnnGraph, PointCloud, build_knn, synth_manifold
from specbasis.oracle import path_operator
from specbasis.probes import (
    PRESETS,
    ProbeConfig,
    build_smoother,
    generate_probes,
    sample_raw_signals,
)


def test_raw_single_value():
    v = sample_raw_signals(1, 1, seed=0)
    assert v.shape == (1, 1) and -1 <= v[0, 0] <= 1


def test_raw_mean_and_range():
    v = sample_raw_signals(1000, 1000, seed=2)
    assert abs(v.mean()) <= 0.01
    assert v.min() >= -1 and v.max() <= 1


def test_raw_streams():
    a = sample_raw_signals(10, 3, seed=1, stream=(2, 5))
    np.testing.assert_array_equal(a, sample_raw_signals(10, 3, seed=1, stream=(2, 5)))
    assert not np.array_equal(a, sample_raw_signals(10, 3, seed=1, stream=(2, 6)))
    assert not np.array_equal(a, sample_raw_signals(10, 3, seed=2, stream=(2, 5)))


def test_raw_bad_sizes():
    with pytest.raises(ContractError):
        sample_raw_signals(0, 3, seed=0)


# ------------------------------------------------------------------ smoother


def test_smoother_single_self_loop():
    g = KnnGraph(0, np.array([[0]]), np.array([[0.0]]), self_loops=True)
    np.testing.assert_array_equal(build_smoother(g, 1.0).dense(), [[1.0]])


def test_smoother_coincident_pair():
    g = build_knn(PointCloud(np.zeros((2, 1))), 1, self_loops=True)
    np.testing.assert_allclose(build_smoother(g, 0.5).dense(), 0.5)


def test_smoother_three_node_path():
    pc = PointCloud(np.array([[0.0], [1.0], [2.0]]))
    S = build_smoother(build_knn(pc, 2), 1.0).dense()
    a, b = np.exp(-0.5), np.exp(-2.0)
    expected = np.array([[0, a, b], [0.5, 0, 0.5], [b, a, 0]])
    expected[0] /= a + b
    expected[2] /= a + b
    np.testing.assert_allclose(S, expected, rtol=1e-14)
    # with a single neighbour the middle row goes entirely to the lower index
    S1 = build_smoother(build_knn(pc, 1), 1.0).dense()
    np.testing.assert_array_equal(S1[1], [1.0, 0.0, 0.0])


def test_smoother_underflow():
    pc = PointCloud(np.array([[0.0], [1.0], [2.0]]))
    with pytest.raises(SmoothingUnderflowError):
        build_smoother(build_knn(pc, 1), 1e-3)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.booleans())
def test_smoother_stochastic_and_contractive(seed, sigma, loops):
    rng = np.random.default_rng(seed)
    pc = PointCloud(rng.uniform(size=(40, 2)))
    S = build_smoother(build_knn(pc, 5, self_loops=loops), sigma)
    np.testing.assert_allclose(S.dense().sum(axis=1), 1.0, atol=1e-12)
    f = rng.uniform(-1, 1, (3, 40))
    assert np.abs(S.apply(f)).max() <= np.abs(f).max() + 1e-15


# -------------------------------------------------------------------- probes


@pytest.fixture(scope="module")
def segment():
    return synth_manifold("segment", {"n": 100})


def test_zero_rounds_equal_raw(segment):
    cfg = ProbeConfig(m=7, smoothing_iterations=0, seed=3)
    batch = generate_probes(segment, cfg, stream=4)
    np.testing.assert_array_equal(batch.signals, sample_raw_signals(100, 7, 3, 4))
    assert np.abs(batch.signals).max() <= 1


def test_constants_are_fixed_points(segment):
    S = build_smoother(build_knn(segment, 16, self_loops=True), 0.1)
    c = np.full((1, 100), -0.37)
    np.testing.assert_allclose(S.apply(c, 25), c, atol=1e-12)


def test_max_norm_non_increasing_in_rounds(segment):
    peaks = [np.abs(generate_probes(segment, ProbeConfig(m=32, smoothing_iterations=t)).signals).max() for t in range(8)]
    assert all(b <= a + 1e-15 for a, b in zip(peaks, peaks[1:]))


def test_smoothing_lowers_dirichlet_energy(segment):
    L = path_operator(100).dense()
    raw = sample_raw_signals(100, 64, seed=0)
    smooth = generate_probes(segment, ProbeConfig(m=64, smoothing_iterations=5, knn_k=16, seed=0)).signals
    e_raw = np.einsum("ij,jk,ik->i", raw, L, raw)
    e_smooth = np.einsum("ij,jk,ik->i", smooth, L, smooth)
    assert np.all(e_smooth < e_raw)


def test_degenerate_range_matches_fixed(segment):
    fixed = generate_probes(segment, ProbeConfig(m=16, sigma=0.1, seed=5), stream=2)
    ranged = generate_probes(segment, ProbeConfig(m=16, sigma=(0.1, 0.1), seed=5), stream=2)
    np.testing.assert_array_equal(fixed.signals, ranged.signals)


def test_ranged_sigma_draws(segment):
    batch = generate_probes(segment, ProbeConfig(m=50, sigma=(0.01, 0.2)), stream=1)
    assert batch.sigmas.min() >= 0.01 and batch.sigmas.max() <= 0.2
    assert np.unique(batch.sigmas).size == 50


def test_ranged_matches_per_probe_smoother(segment):
    cfg = ProbeConfig(m=4, smoothing_iterations=3, sigma=(0.02, 0.2), knn_k=8)
    batch = generate_probes(segment, cfg, stream=9)
    graph = build_knn(segment, 8, self_loops=True)
    raw = sample_raw_signals(100, 4, cfg.seed, 9)
    for i in range(4):
        S = build_smoother(graph, batch.sigmas[i])
        np.testing.assert_allclose(batch.signals[i], S.apply(raw[i], 3)[0], atol=1e-14)


def test_probes_deterministic(segment):
    cfg = PRESETS["seg1d"]
    a = generate_probes(segment, cfg, stream=(2, 11))
    b = generate_probes(segment, cfg, stream=(2, 11))
    np.testing.assert_array_equal(a.signals, b.signals)


def test_probe_csv(segment, tmp_path):
    batch = generate_probes(segment, ProbeConfig(m=3), stream=0)
    path = batch.to_csv(tmp_path / "probes.csv")
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 2:], batch.signals)


@pytest.mark.parametrize(
    "kw",
    [{"m": 0}, {"smoothing_iterations": -1}, {"sigma": 0.0}, {"sigma": (0.2, 0.1)}, {"knn_k": 0}],
)
def test_config_validation(kw):
    with pytest.raises(ContractError):
        ProbeConfig(**kw)


def test_knn_k_too_large(segment):
    with pytest.raises(ContractError):
        generate_probes(segment, ProbeConfig(knn_k=100))
