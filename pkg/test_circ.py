"""
Tests for network-to-circuit lowering: every circuit must reproduce the engine.
"""

import math

import numpy as np
import pytest

from core.circ import (
    CutPolicy,
    attach_bn,
    basic_gate_cost,
    design4_angle,
    emit_circuit,
    gray_code,
    input_source,
    merged_angle,
    network_gate_counts,
    probability_angle,
    synth_bn,
    synth_network,
    synth_neuron_design4,
    synth_plyr,
    synth_ulyr,
    synth_ulyr_neuron,
)
from core.engine import (
    BNParams,
    LayerKind,
    NetworkKind,
    bn_forward,
    build_network,
    forward_batch,
    layer_forward,
    layer_inputs,
    plyr_forward,
    ulyr_embed,
    ulyr_forward,
)
from core.errors import CircuitWidthError, WidthMismatchError
from core.costs import chain_cost, flip_cost
from core.mapping import gate_cost, pg_gate, weight_map
from core.simulator import Gate, QbitRole, load_circuit, output_probability

TOLERANCE = 1e-9


@pytest.mark.parametrize("m", [2, 4, 8])
def test_plyr_circuit_matches_engine(m):
    rng = np.random.default_rng(m)
    for _ in range(200 if m < 8 else 20):
        p = rng.uniform(0, 1, m)
        w = rng.choice([-1, 1], m)
        neuron = synth_plyr(p, w)
        assert abs(neuron.probability() - plyr_forward(p, w)) < TOLERANCE


def test_plyr_circuit_layout_and_cost():
    neuron = synth_plyr([0.1, 0.2, 0.3, 0.4], [1, -1, 1, -1])
    circuit = neuron.circuit
    assert circuit.num_qbits == 7
    assert circuit.qbits_with_role(QbitRole.INPUT) == [0, 1, 2, 3]
    assert circuit.qbits_with_role(QbitRole.ENCODING) == [4, 5]
    assert neuron.output_qbit == 6
    # 12 coupling gates, 5 projection gates, one X per -1 weight
    assert neuron.basic_gate_count == 17 + 2


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_ulyr_circuit_matches_engine(k):
    rng = np.random.default_rng(10 + k)
    m = 1 << k
    for _ in range(100):
        values = rng.uniform(-1, 1, m)
        w = rng.choice([-1, 1], m)
        u = ulyr_embed(values).u
        neuron = synth_ulyr(u, weight_map(w))
        assert abs(neuron.probability() - ulyr_forward(u, w)) < TOLERANCE


def test_ulyr_cost_is_plan_plus_activation():
    w = np.array([1, -1, -1, 1, 1, 1, -1, 1])
    neuron = synth_ulyr_neuron(np.arange(1, 9), w)
    # H^3, X^3 and a 3-control CX costing 5
    assert neuron.basic_gate_count == weight_map(w).cost + 3 + 3 + 5
    assert neuron.circuit.gates[0].kind.value == "INIT"


def test_ulyr_plan_mismatch():
    with pytest.raises(WidthMismatchError):
        synth_ulyr(np.full(4, 0.5), weight_map(np.ones(8, dtype=int)))


@pytest.mark.parametrize("t", [0, 1])
@pytest.mark.parametrize("merged", [True, False])
def test_bn_circuit_matches_closed_form(t, merged):
    for z in np.linspace(0, 1, 6):
        for theta in np.linspace(0, math.pi, 5):
            for gamma in np.linspace(0.2, math.pi, 4):
                params = BNParams(running_t=t, running_theta=theta, running_gamma=gamma)
                neuron = attach_bn(input_source(z), synth_bn(params.inference(), merged))
                assert abs(neuron.probability() - bn_forward(z, params.inference())) < TOLERANCE


def test_merged_angle():
    for theta in np.linspace(0, math.pi, 7):
        for gamma in np.linspace(0, math.pi, 7):
            g = merged_angle(theta, gamma)
            expected = math.sin(theta / 2) ** 2 * math.sin(gamma / 2) ** 2
            assert abs(math.sin(g / 2) ** 2 - expected) < 1e-12


def test_bn_fragment_sizes():
    assert synth_bn(BNParams(t=1, theta=1.0, gamma=2.0), merged=True).circuit.num_qbits == 3
    assert synth_bn(BNParams(t=1, theta=1.0, gamma=2.0), merged=False).circuit.num_qbits == 5
    assert synth_bn(BNParams(t=0, theta=1.0, gamma=2.0), merged=True).circuit.num_qbits == 5


def test_design4_spot_value():
    assert design4_angle(0.2, 0.6) == pytest.approx(1.6910, abs=1e-3)
    neuron = synth_neuron_design4(probability_angle(0.2), probability_angle(0.6), [-1, 1])
    assert neuron.probability() == pytest.approx(0.56)
    assert neuron.basic_gate_count == 1


@pytest.mark.parametrize("w", [(1, -1), (-1, 1), (1, 1), (-1, -1)])
def test_design4_matches_general_circuit(w):
    grid = np.linspace(0, 1, 11)
    for x in grid:
        for y in grid:
            small = synth_neuron_design4(probability_angle(x), probability_angle(y), w)
            general = synth_plyr([x, y], w)
            assert abs(small.probability() - general.probability()) < TOLERANCE


def test_symmetric_inputs():
    for x in np.linspace(0, 1, 11):
        neuron = synth_neuron_design4(probability_angle(x), probability_angle(x), [1, -1])
        assert neuron.probability() == pytest.approx(2 * x - 2 * x * x, abs=TOLERANCE)


def test_basic_gate_cost():
    assert basic_gate_cost(Gate.x(0)) == 1
    assert basic_gate_cost(Gate.cz([0, 1], 2)) == 1
    assert basic_gate_cost(Gate.cx([0, 1, 2], 3)) == 5
    assert basic_gate_cost(Gate.cz([0, 1], 2, [0, 1])) == 3
    assert basic_gate_cost(Gate.init(np.eye(4))) == 0


def test_ccz_costs_differ_between_circuits_and_plans():
    ccz = Gate.cz([0, 1], 2)
    assert basic_gate_cost(ccz) == chain_cost(2) == 1
    assert gate_cost(pg_gate(7, 3)) == flip_cost(3) == 5
    # a U-LYR neuron charges its weight block at plan cost only
    w = np.array([1, -1, -1, -1, 1, 1, 1, -1])
    plan = weight_map(w)
    neuron = synth_ulyr_neuron(np.arange(1.0, 9.0), w)
    activation = [Gate.h(q) for q in range(3)] + [Gate.x(q) for q in range(3)] + [Gate.cx([0, 1, 2], 3)]
    assert neuron.basic_gate_count == plan.cost + sum(basic_gate_cost(g) for g in activation)


@pytest.mark.parametrize("seed", range(5))
def test_hnet_4_2_compiles_small(seed):
    net = build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, bn=True, seed=seed)
    assert network_gate_counts(net).total <= 150


def test_gray_code():
    codes = gray_code(3)
    assert codes == [0, 1, 3, 2, 6, 7, 5, 4]
    assert all(bin(a ^ b).count("1") == 1 for a, b in zip(codes, codes[1:]))


def test_width_cap():
    with pytest.raises(CircuitWidthError):
        synth_plyr(np.full(32, 0.5), np.ones(32))


def _check_network(net, policy, images):
    for image in images:
        synthesized = synth_network(net, image, policy)
        activations = layer_inputs(net, image)
        for position, layer in enumerate(net.layers):
            activations = layer_forward(layer, activations)
            np.testing.assert_allclose(synthesized.layer_outputs[position], activations[0], atol=TOLERANCE)
        np.testing.assert_allclose(synthesized.class_probabilities, forward_batch(net, image[None])[0],
                                   atol=TOLERANCE)


def _with_bn(net, seed):
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        for params in layer.bn or []:
            params.running_t = int(rng.integers(2))
            params.running_theta = rng.uniform(0.2, 2.5)
            params.running_gamma = rng.uniform(1.5, math.pi)
    return net


def test_measured_network_matches_engine():
    rng = np.random.default_rng(21)
    net = _with_bn(build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, bn=True, seed=2), 5)
    _check_network(net, CutPolicy.MEASURE_BETWEEN_LAYERS, rng.uniform(0.05, 1, (3, 4, 4)))


def test_continuous_pnet_matches_engine():
    rng = np.random.default_rng(22)
    net = build_network(NetworkKind.PNET, (2, 2), [2, 1], 2, bn=False, seed=4)
    _check_network(net, CutPolicy.CONTINUOUS, rng.uniform(0, 1, (3, 2, 2)))
    layer2 = synth_network(net, np.full((2, 2), 0.5), CutPolicy.CONTINUOUS).layers[1][0]
    # two independent copies of the 7-qbit first-layer neurons plus encoding and output
    assert layer2.circuit.num_qbits == 16


def test_continuous_hnet_matches_engine():
    rng = np.random.default_rng(23)
    net = _with_bn(build_network(NetworkKind.HNET, (2, 2), [2, 2], 2, bn=True, seed=6), 9)
    _check_network(net, CutPolicy.CONTINUOUS, rng.uniform(0.05, 1, (3, 2, 2)))


def test_network_gate_counts():
    net = build_network(NetworkKind.HNET, (4, 4), [4, 2], 2, bn=True, seed=0)
    cost = network_gate_counts(net)
    first, second = cost.layers
    assert first.kind == LayerKind.ULYR.value
    assert first.mlp_operators == 4 * 33 and second.mlp_operators == 2 * 9
    assert first.weight_gates == sum(weight_map(w).cost for w in net.layers[0].weight_matrix())
    assert first.overhead_gates == 4 * (4 + 4 + 7)
    negatives = int(np.count_nonzero(net.layers[1].weight_matrix() < 0))
    assert second.weight_gates == negatives
    assert second.overhead_gates == 2 * 17
    assert cost.total == first.total + second.total
    assert cost.reduction == pytest.approx(cost.mlp_total / cost.total)
    assert cost.bn_total > 0


def test_emit_circuit_round_trip(tmp_path):
    neuron = synth_ulyr_neuron(np.arange(1, 5), [1, -1, 1, 1])
    path = emit_circuit(tmp_path / "layer1_neuron0.circ", neuron.circuit)
    assert (tmp_path / "layer1_neuron0.matrix").exists()
    loaded = load_circuit(path)
    assert output_probability(loaded, neuron.output_qbit) == pytest.approx(neuron.probability(), abs=1e-12)
