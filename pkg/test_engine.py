"""
Tests for the classical forward engine and BN fitting.
"""

import math

import numpy as np
import pytest

from core.engine import (
    BinaryWeightVector,
    BNParams,
    LayerKind,
    LayerSpec,
    NetworkKind,
    NetworkSpec,
    TwoPointInput,
    batch_adj,
    bn_fit_batch,
    bn_forward,
    build_network,
    class_probabilities,
    evaluate,
    fit_gamma,
    fit_theta,
    forward_batch,
    layer_inputs,
    network_forward,
    normalize_amplitudes,
    plyr_forward,
    plyr_forward_bruteforce,
    predict,
    ulyr_embed,
    ulyr_forward,
)
from core.data import Dataset
from core.errors import (
    DatasetError,
    EmptyInputError,
    EngineError,
    ProblemSizeError,
    ShapeMismatchError,
    WidthMismatchError,
    ZeroVectorError,
)


@pytest.mark.parametrize("m", [2, 4, 8, 12])
def test_plyr_matches_enumeration(m):
    rng = np.random.default_rng(m)
    for _ in range(125):
        p = rng.uniform(0, 1, m)
        w = rng.choice([-1, 1], m)
        assert abs(plyr_forward(p, w) - plyr_forward_bruteforce(p, w)) < 1e-12


def test_plyr_known_values():
    assert plyr_forward(np.zeros(4), np.ones(4)) == pytest.approx(1.0)
    # two inputs with opposite weights: x + y - 2xy
    assert plyr_forward([0.2, 0.6], [1, -1]) == pytest.approx(0.56)
    assert plyr_forward([0.2, 0.6], [1, 1]) == pytest.approx(0.44)


def test_plyr_batched_rows():
    rng = np.random.default_rng(1)
    p = rng.uniform(0, 1, (6, 4))
    w = np.array([1, -1, -1, 1])
    np.testing.assert_allclose(plyr_forward(p, w), [plyr_forward(row, w) for row in p])


def test_plyr_errors():
    with pytest.raises(WidthMismatchError):
        plyr_forward([0.1, 0.2], [1, 1, 1])
    with pytest.raises(EngineError):
        plyr_forward([1.2, 0.2], [1, 1])
    with pytest.raises(EmptyInputError):
        plyr_forward([], [])
    with pytest.raises(ProblemSizeError):
        plyr_forward_bruteforce(np.full(21, 0.5), np.ones(21))


def test_two_point_input():
    assert TwoPointInput(0.25).expectation == pytest.approx(0.5)
    with pytest.raises(EngineError):
        TwoPointInput(1.5)


def test_ulyr_embedding_is_orthogonal():
    rng = np.random.default_rng(2)
    values = rng.uniform(0.1, 1.0, 8)
    embedding = ulyr_embed(values)
    np.testing.assert_allclose(embedding.u, values / np.linalg.norm(values), atol=1e-12)
    np.testing.assert_allclose(embedding.matrix.T @ embedding.matrix, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(embedding.matrix[:, 0], embedding.u, atol=1e-12)


def test_ulyr_embed_errors():
    with pytest.raises(ZeroVectorError):
        ulyr_embed(np.zeros(4))
    with pytest.raises(WidthMismatchError):
        ulyr_embed(np.ones(6))
    with pytest.raises(ZeroVectorError):
        normalize_amplitudes(np.zeros((2, 4)))


def test_ulyr_forward():
    m = 16
    u = np.full(m, 1 / math.sqrt(m))
    assert ulyr_forward(u, np.ones(m)) == pytest.approx(1.0)
    w = np.array([1, -1] * (m // 2))
    assert ulyr_forward(u, w) == pytest.approx(0.0)


def test_ulyr_embed_examples():
    np.testing.assert_allclose(ulyr_embed([3.0, 4.0]).u, [0.6, 0.8], atol=1e-12)
    uniform = ulyr_embed(np.ones(4))
    np.testing.assert_allclose(uniform.u, [0.5] * 4, atol=1e-12)
    np.testing.assert_allclose(uniform.matrix.T @ uniform.matrix, np.eye(4), atol=1e-9)
    basis = ulyr_embed([1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(basis.u, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(basis.matrix, np.eye(4), atol=1e-12)


@pytest.mark.parametrize("m", [2, 4, 8, 16])
def test_activations_ignore_global_sign(m):
    rng = np.random.default_rng(m)
    for _ in range(10):
        w = rng.choice([-1, 1], m)
        p = rng.uniform(0.0, 1.0, m)
        u = ulyr_embed(rng.uniform(0.1, 1.0, m)).u
        assert plyr_forward(p, w) == pytest.approx(plyr_forward(p, -w), abs=1e-12)
        assert ulyr_forward(u, w) == pytest.approx(ulyr_forward(u, -w), abs=1e-12)


@pytest.mark.parametrize("mean", [0.05, 0.2, 0.5, 0.7, 0.95])
def test_batch_adj_recenters_mean(mean):
    rng = np.random.default_rng(int(mean * 100))
    z = np.clip(rng.normal(mean, 0.02, 64), 0.0, 1.0)
    t, theta = fit_theta(float(np.mean(z)))
    assert t == (0 if np.mean(z) <= 0.5 else 1)
    assert np.mean(batch_adj(z, t, theta)) == pytest.approx(0.5, abs=1e-9)


def test_bn_forward_closed_form():
    params = BNParams(t=0, theta=1.1, gamma=2.0)
    s = math.sin(0.55) ** 2
    assert bn_forward(0.3, params) == pytest.approx(((1 - s) * 0.3 + s) * math.sin(1.0) ** 2)
    params = BNParams(t=1, theta=1.1, gamma=2.0)
    assert bn_forward(0.3, params) == pytest.approx(s * 0.3 * math.sin(1.0) ** 2)


def test_bn_forward_stays_in_unit_interval():
    z = np.linspace(0.0, 1.0, 21)
    for t in (0, 1):
        for theta in np.linspace(0.0, 2 * math.pi, 13):
            for gamma in np.linspace(0.0, 2 * math.pi, 13):
                out = bn_forward(z, BNParams(t=t, theta=theta, gamma=gamma))
                assert out.min() >= 0.0
                assert out.max() <= 1.0 + 1e-12


def test_identity_bn():
    assert bn_forward(0.37, BNParams()) == pytest.approx(0.37)


def test_fit_gamma_at_center_is_pi():
    assert fit_gamma(np.zeros(8), 1.0) == pytest.approx(math.pi)
    assert fit_gamma(np.full(8, 0.5), 2.0) < math.pi


def test_bn_fit_running_statistics():
    params = BNParams(momentum=0.25)
    first = bn_fit_batch(np.full(10, 0.3), params)
    assert first.fitted and first.running_t == 0
    assert first.running_theta == pytest.approx(first.theta)
    assert first.running_gamma == pytest.approx(first.gamma)

    second = bn_fit_batch(np.full(10, 0.2), first)
    assert second.running_theta == pytest.approx(0.25 * first.theta + 0.75 * second.theta)
    assert second.running_gamma == pytest.approx(0.25 * first.gamma + 0.75 * second.gamma)

    # switching t restarts the theta average
    third = bn_fit_batch(np.full(10, 0.8), second)
    assert third.running_t == 1
    assert third.running_theta == pytest.approx(third.theta)


def test_bn_inference_uses_running_values():
    params = BNParams(t=0, theta=0.4, gamma=2.0, running_t=1, running_theta=1.3, running_gamma=2.5)
    frozen = params.inference()
    assert (frozen.t, frozen.theta, frozen.gamma) == (1, 1.3, 2.5)


def test_bn_params_round_trip():
    params = BNParams(t=1, theta=0.9, gamma=2.2, lam=1.4, running_t=1, running_theta=0.8,
                      running_gamma=2.1, fitted=True)
    data = params.to_dict()
    assert data["lambda"] == 1.4
    assert BNParams.from_dict(data) == params


def test_binary_weights_tie_to_plus_one():
    np.testing.assert_array_equal(BinaryWeightVector(np.array([-0.2, 0.0, 0.5])).binarized, [-1, 1, 1])
    np.testing.assert_array_equal(BinaryWeightVector.from_signs([1, -1]).binarized, [1, -1])


def test_network_validation():
    ulyr = LayerSpec(LayerKind.ULYR, [BinaryWeightVector(np.ones(4))] * 2)
    plyr = LayerSpec(LayerKind.PLYR, [BinaryWeightVector(np.ones(2))] * 2)
    NetworkSpec(NetworkKind.HNET, [ulyr, plyr], (2, 2), 2)
    with pytest.raises(EngineError):
        NetworkSpec(NetworkKind.PNET, [ulyr, plyr], (2, 2), 2)
    with pytest.raises(DatasetError):
        NetworkSpec(NetworkKind.HNET, [ulyr, plyr], (2, 2), 3)
    with pytest.raises(WidthMismatchError):
        NetworkSpec(NetworkKind.HNET, [ulyr, plyr], (2, 4), 2)
    with pytest.raises(WidthMismatchError):
        LayerSpec(LayerKind.ULYR, [BinaryWeightVector(np.ones(6))])


def test_build_network_shapes():
    net = build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, bn=True, seed=3)
    assert [layer.kind for layer in net.layers] == [LayerKind.ULYR, LayerKind.PLYR]
    assert [layer.width for layer in net.layers] == [16, 4]
    assert all(len(layer.bn) == layer.size for layer in net.layers)
    again = build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, bn=True, seed=3)
    np.testing.assert_array_equal(net.layers[0].latent_matrix(), again.layers[0].latent_matrix())

    plain = build_network(NetworkKind.PNET, (2, 2), [2], 2, bn=False)
    assert plain.layers[0].bn is None and not plain.has_bn


def test_forward_and_predict():
    rng = np.random.default_rng(4)
    net = build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, seed=1)
    images = rng.uniform(0.05, 1.0, (5, 4, 4))
    probs = forward_batch(net, images)
    assert probs.shape == (5, 2)
    assert np.all((probs >= 0) & (probs <= 1))
    np.testing.assert_allclose(network_forward(net, images[0]), probs[0])
    np.testing.assert_array_equal(predict(net, images), np.argmax(probs, axis=1))


def test_single_output_two_classes():
    np.testing.assert_allclose(class_probabilities(np.array([[0.7]]), 2), [[0.7, 0.3]])
    net = NetworkSpec(NetworkKind.PNET,
                      [LayerSpec(LayerKind.PLYR, [BinaryWeightVector.from_signs([1, -1])])], (1, 2), 2)
    data = Dataset(np.array([[[0.2, 0.6]], [[0.1, 0.1]]]), np.array([0, 1]))
    assert evaluate(net, data) == pytest.approx(1.0)


def test_layer_inputs():
    net = build_network(NetworkKind.PNET, (2, 2), [2], 2)
    np.testing.assert_allclose(layer_inputs(net, np.full((2, 2), 0.3)), np.full((1, 4), 0.3))
    with pytest.raises(ShapeMismatchError):
        layer_inputs(net, np.zeros((3, 3)))
    hnet = build_network(NetworkKind.HNET, (2, 2), [2], 2)
    np.testing.assert_allclose(layer_inputs(hnet, np.full((2, 2), 0.3)), np.full((1, 4), 0.5))


def test_evaluate_empty():
    net = build_network(NetworkKind.PNET, (2, 2), [2], 2)
    with pytest.raises(EmptyInputError):
        evaluate(net, Dataset(np.zeros((0, 2, 2)), np.zeros(0)))
