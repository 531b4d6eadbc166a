import numpy as np
import pytest

from specbasis import ndiff as nd
from specbasis.errors import ContractError, DimensionError
from specbasis.geometry import PointCloud
from specbasis.model import extractor_forward, init_extractor
from specbasis.probes import sample_raw_signals
from specbasis.spectral import extract_mass, orthonormalize, progressive_project_tensor, reconstruction_loss

from gradcheck import numeric_grad, rel_err


def test_seg1d_seeds_keep_rank():
    # few ReLU kinks inside [0, 1] at init used to collapse rank early on
    from specbasis import synth_manifold, train
    from specbasis.train import preset_config

    pc = synth_manifold("segment", {"n": 100})
    for seed in range(5):
        res = train(pc, preset_config("seg1d", seed=seed, steps=150, eval_probes=None))
        assert len(res.history) == 150


def test_interval_toy_architecture():
    model = init_extractor([1, 64, 64, 64, 5], "relu", seed=0)
    shapes = [p.shape for p in model.parameters()]
    assert shapes == [(1, 64), (64,), (64, 64), (64,), (64, 64), (64,), (64, 5), (5,)]
    assert model.K == 5 and model.d_in == 1


def test_overfit_architecture():
    model = init_extractor([3, 128, 128, 128, 20], "gelu", seed=0)
    out = extractor_forward(model, np.random.default_rng(0).standard_normal((50, 3)))
    assert out.shape == (50, 20)


def test_glorot_bounds():
    model = init_extractor([3, 40, 7], seed=1)
    for w, b in zip(model.weights, model.biases):
        bound = np.sqrt(6 / sum(w.shape))
        assert np.abs(w.value).max() <= bound and np.abs(b.value).max() <= bound


def test_init_deterministic():
    a = init_extractor([2, 8, 3], seed=[4, 0])
    b = init_extractor([2, 8, 3], seed=[4, 0])
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.value, q.value)
    c = init_extractor([2, 8, 3], seed=[5, 0])
    assert not np.array_equal(a.weights[0].value, c.weights[0].value)


@pytest.mark.parametrize(
    "widths,act",
    [([1, 5], "relu"), ([1, 0, 3], "relu"), ([1, 4, 3], "swish")],
)
def test_init_validation(widths, act):
    with pytest.raises(ContractError):
        init_extractor(widths, act)


def test_zero_weights_output_bias():
    model = init_extractor([2, 6, 3], seed=0)
    params = [np.zeros_like(p.value) for p in model.parameters()]
    params[-1] = np.array([0.5, -1.0, 2.0])
    model.set_parameters(params)
    out = extractor_forward(model, np.random.default_rng(1).standard_normal((4, 2)))
    np.testing.assert_array_equal(out.value, np.tile([0.5, -1.0, 2.0], (4, 1)))


@pytest.mark.parametrize("act", ["relu", "gelu", "tanh"])
def test_permutation_equivariance(act):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 3))
    perm = rng.permutation(30)
    model = init_extractor([3, 16, 16, 4], act, seed=3)
    a = extractor_forward(model, x).value
    b = extractor_forward(model, x[perm]).value
    np.testing.assert_array_equal(b, a[perm])


def test_forward_accepts_point_cloud():
    pc = PointCloud(np.random.default_rng(0).standard_normal((5, 2)))
    model = init_extractor([2, 4, 3], seed=0)
    np.testing.assert_array_equal(extractor_forward(model, pc).value, extractor_forward(model, pc.points).value)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionError):
        extractor_forward(init_extractor([3, 4, 2]), np.zeros((5, 2)))


def test_first_layer_gradient_fd():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (10, 1))
    F = sample_raw_signals(10, 6, seed=7)
    model = init_extractor([1, 8, 8, 3], "gelu", seed=7)
    params = [p.value.copy() for p in model.parameters()]

    def loss_of(ps):
        model.set_parameters(ps)
        Q, _ = orthonormalize(extractor_forward(model, x))
        mass, _ = extract_mass(Q)
        return reconstruction_loss(progressive_project_tensor(Q, mass, F))

    nd.backward(loss_of(params))
    auto = model.weights[0].grad.copy()

    def f(w):
        with nd.no_grad():
            return loss_of([w] + params[1:]).item()

    assert rel_err(auto, numeric_grad(f, params[0], h=1e-4)) <= 1e-4
