"""
Network-to-circuit lowering.
Builds P-LYR, U-LYR and N-LYR circuits whose measured output equals the engine's forward value.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.costs import chain_cost, polarity_cost
from core.engine import (
    BNParams,
    LayerKind,
    NetworkSpec,
    class_probabilities,
    layer_inputs,
    ulyr_embed,
)
from core.errors import CircuitFormatError, CircuitWidthError, WidthMismatchError
from core.mapping import GatePlan, lower_plan, weight_map
from core.simulator import (
    MAX_QBITS,
    Circuit,
    Gate,
    GateKind,
    QbitRole,
    output_probability,
    save_circuit,
)

logger = logging.getLogger(__name__)

MAX_ULYR_QBITS = 12


class CutPolicy(Enum):
    """How layers are joined when a whole network is lowered."""
    MEASURE_BETWEEN_LAYERS = "measure_between_layers"
    CONTINUOUS = "continuous"


@dataclass
class SynthesizedNeuron:
    """A neuron circuit and the qbit whose |1> probability is the neuron output."""
    circuit: Circuit
    output_qbit: int
    input_binding: Dict[int, float] = field(default_factory=dict)  # qbit -> Ry angle
    init_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    basic_gate_count: int = 0
    bn_gate_count: int = 0

    def probability(self) -> float:
        return output_probability(self.circuit, self.output_qbit)


@dataclass
class BNFragment:
    """N-LYR circuit fragment; local qbit 0 is the neuron output it consumes."""
    circuit: Circuit
    output_qbit: int
    basic_gate_count: int


@dataclass
class SynthesizedNetwork:
    policy: CutPolicy
    layers: List[List[SynthesizedNeuron]]
    layer_outputs: List[np.ndarray]
    class_probabilities: np.ndarray


@dataclass
class LayerCost:
    """Basic-gate bookkeeping of one compiled layer."""
    kind: str
    neurons: int
    width: int
    weight_gates: int
    overhead_gates: int
    bn_gates: int
    mlp_operators: int

    @property
    def total(self) -> int:
        return self.weight_gates + self.overhead_gates


@dataclass
class NetworkCost:
    layers: List[LayerCost]

    @property
    def total(self) -> int:
        return sum(layer.total for layer in self.layers)

    @property
    def bn_total(self) -> int:
        return sum(layer.bn_gates for layer in self.layers)

    @property
    def mlp_total(self) -> int:
        return sum(layer.mlp_operators for layer in self.layers)

    @property
    def reduction(self) -> float:
        return self.mlp_total / self.total if self.total else float('inf')


def basic_gate_cost(gate: Gate) -> int:
    """Circuit-gate cost of one gate; UnitaryInit is input encoding and free."""
    if gate.kind == GateKind.UNITARY_INIT:
        return 0
    zero_controls = sum(1 for level in gate.polarity if level == 0)
    return chain_cost(len(gate.controls)) + polarity_cost(zero_controls)


def probability_angle(p: float) -> float:
    """Ry angle that prepares P(|1>) = p."""
    return 2.0 * math.asin(math.sqrt(min(max(float(p), 0.0), 1.0)))


def gray_code(bits: int) -> List[int]:
    return [i ^ (i >> 1) for i in range(1 << bits)]


def _encoding_bits(m: int) -> int:
    if m < 1 or m & (m - 1):
        raise WidthMismatchError(f"input count {m} is not a power of two")
    return m.bit_length() - 1


def _remap(gate: Gate, mapping: Sequence[int]) -> Gate:
    if gate.kind == GateKind.UNITARY_INIT:
        if any(mapping[q] != q for q in gate.qbits):
            raise CircuitFormatError("UnitaryInit can only sit on the first qbits of a circuit")
        return gate
    return Gate(gate.kind, mapping[gate.target],
                tuple(mapping[c] for c in gate.controls), gate.polarity, gate.angle)


def _stack(parts: Sequence[SynthesizedNeuron]) -> Tuple[Circuit, List[int], Dict[int, float]]:
    """Place parts side by side on disjoint qbits; returns circuit, output qbits, bindings."""
    width = sum(p.circuit.num_qbits for p in parts)
    circuit = Circuit(width)
    outputs, binding = [], {}
    offset = 0
    for part in parts:
        mapping = [offset + q for q in range(part.circuit.num_qbits)]
        circuit.extend(_remap(g, mapping) for g in part.circuit.gates)
        for q, role in part.circuit.qbit_roles.items():
            circuit.qbit_roles[mapping[q]] = QbitRole.AUXILIARY if role == QbitRole.OUTPUT else role
        binding.update({mapping[q]: angle for q, angle in part.input_binding.items()})
        outputs.append(mapping[part.output_qbit])
        offset += part.circuit.num_qbits
    return circuit, outputs, binding


def _check_width(num_qbits: int):
    if num_qbits > MAX_QBITS:
        raise CircuitWidthError(f"circuit needs {num_qbits} qbits, simulator cap is {MAX_QBITS}")


def input_source(p: float) -> SynthesizedNeuron:
    """One qbit prepared with P(|1>) = p."""
    angle = probability_angle(p)
    circuit = Circuit(1, [Gate.ry(0, angle)], {0: QbitRole.INPUT})
    return SynthesizedNeuron(circuit, 0, {0: angle})


def plyr_from_sources(sources: Sequence[SynthesizedNeuron], w: Sequence[int]) -> SynthesizedNeuron:
    """P-LYR over sources whose output qbits carry the input probabilities."""
    w = np.asarray(w)
    m = len(sources)
    if w.size != m:
        raise WidthMismatchError(f"{m} inputs but {w.size} weights")
    n = _encoding_bits(m)
    _check_width(sum(s.circuit.num_qbits for s in sources) + n + 1)

    circuit, inputs, binding = _stack(sources)
    base = circuit.num_qbits
    encoding = list(range(base, base + n))
    output = base + n
    circuit.num_qbits = output + 1
    circuit.tag(inputs, QbitRole.INPUT).tag(encoding, QbitRole.ENCODING).tag([output], QbitRole.OUTPUT)
    start = len(circuit.gates)

    # Part 1: -1 weights negate their input.
    circuit.extend(Gate.x(inputs[k]) for k in range(m) if w[k] < 0)

    # Part 2: sign of input k lands on encoding state |k>, visited in Gray order.
    circuit.extend(Gate.h(q) for q in encoding)
    flipped = 0
    for state in gray_code(n):
        wanted = ~state & (m - 1)
        circuit.extend(Gate.x(encoding[b]) for b in range(n) if (flipped ^ wanted) >> b & 1)
        flipped = wanted
        circuit.add(Gate.cz(encoding, inputs[state]))
    circuit.extend(Gate.x(encoding[b]) for b in range(n) if flipped >> b & 1)

    # Part 3: amplitude of encoding |0...0> is y; copy it onto the output qbit.
    circuit.extend(Gate.h(q) for q in encoding)
    circuit.extend(Gate.x(q) for q in encoding)
    circuit.add(Gate.cx(encoding, output))

    own_cost = sum(basic_gate_cost(g) for g in circuit.gates[start:])
    inherited = sum(s.basic_gate_count for s in sources)
    return SynthesizedNeuron(circuit, output, binding,
                             basic_gate_count=own_cost + inherited,
                             bn_gate_count=sum(s.bn_gate_count for s in sources))


def synth_plyr(p: Sequence[float], w: Sequence[int]) -> SynthesizedNeuron:
    """P-LYR neuron on m Ry-encoded inputs; P(output=1) = E(y^2)."""
    p = np.asarray(p, dtype=float).ravel()
    return plyr_from_sources([input_source(value) for value in p], w)


def synth_ulyr(u: Sequence[float], plan: GatePlan) -> SynthesizedNeuron:
    """U-LYR neuron: MAT_u init with rows permuted by the plan, sign flips, uniform projection."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size < 2 or u.size & (u.size - 1):
        raise WidthMismatchError(f"U-LYR input length {u.size} is not a power of two")
    k = u.size.bit_length() - 1
    if plan.k != k or plan.permutation.size != u.size:
        raise WidthMismatchError(f"plan compiled for k={plan.k}, input needs k={k}")
    if k > MAX_ULYR_QBITS:
        raise CircuitWidthError(f"U-LYR with k={k} exceeds {MAX_ULYR_QBITS} encoding qbits")

    matrix = ulyr_embed(u).matrix
    permuted = np.empty_like(matrix)
    permuted[plan.permutation] = matrix
    encoding = list(range(k))
    circuit = Circuit(k + 1, [Gate.init(permuted)])
    circuit.tag(encoding, QbitRole.ENCODING).tag([k], QbitRole.OUTPUT)
    circuit.extend(lower_plan(plan, encoding))
    activation_start = len(circuit.gates)
    circuit.extend(Gate.h(q) for q in encoding)
    circuit.extend(Gate.x(q) for q in encoding)
    circuit.add(Gate.cx(encoding, k))

    overhead = sum(basic_gate_cost(g) for g in circuit.gates[activation_start:])
    return SynthesizedNeuron(circuit, k, init_matrix=permuted,
                             basic_gate_count=plan.cost + overhead)


def synth_ulyr_neuron(values: Sequence[float], w: Sequence[int]) -> SynthesizedNeuron:
    """Embed raw inputs, compile the weights and lower the U-LYR neuron."""
    embedding = ulyr_embed(values)
    return synth_ulyr(embedding.u, weight_map(w))


def synth_bn(params: BNParams, merged: bool = True) -> BNFragment:
    """batch_adj then indiv_adj; with t=1 and merged, one AND stage at angle g(theta, gamma)."""
    gates: List[Gate] = []
    roles = {0: QbitRole.INPUT}
    source = 0
    next_qbit = 1

    def stage(angle: float, or_gate: bool):
        nonlocal source, next_qbit
        parameter, out = next_qbit, next_qbit + 1
        next_qbit += 2
        gates.append(Gate.ry(parameter, angle))
        if or_gate:
            # flip unless both inputs are |0>, i.e. input OR parameter
            gates.append(Gate.cx([source, parameter], out, [0, 0]))
            gates.append(Gate.x(out))
        else:
            gates.append(Gate.cx([source, parameter], out))
        roles[parameter] = QbitRole.PARAMETER
        roles[out] = QbitRole.AUXILIARY
        source = out

    if params.t == 1 and merged:
        stage(merged_angle(params.theta, params.gamma), or_gate=False)
    else:
        stage(params.theta, or_gate=params.t == 0)
        stage(params.gamma, or_gate=False)
    roles[source] = QbitRole.OUTPUT
    circuit = Circuit(next_qbit, gates, roles)
    return BNFragment(circuit, source, sum(basic_gate_cost(g) for g in gates))


def merged_angle(theta: float, gamma: float) -> float:
    """g with sin^2(g/2) = sin^2(theta/2) * sin^2(gamma/2)."""
    return 2.0 * math.asin(min(1.0, abs(math.sin(theta / 2.0) * math.sin(gamma / 2.0))))


def attach_bn(neuron: SynthesizedNeuron, fragment: BNFragment) -> SynthesizedNeuron:
    """Append a BN fragment reading the neuron's output qbit."""
    offset = neuron.circuit.num_qbits
    width = offset + fragment.circuit.num_qbits - 1
    _check_width(width)
    mapping = [neuron.output_qbit] + [offset + q - 1 for q in range(1, fragment.circuit.num_qbits)]
    circuit = neuron.circuit.copy()
    circuit.num_qbits = width
    circuit.qbit_roles[neuron.output_qbit] = QbitRole.AUXILIARY
    for q, role in fragment.circuit.qbit_roles.items():
        if q:
            circuit.qbit_roles[mapping[q]] = role
    circuit.extend(_remap(g, mapping) for g in fragment.circuit.gates)
    return SynthesizedNeuron(circuit, mapping[fragment.output_qbit], dict(neuron.input_binding),
                             neuron.init_matrix, neuron.basic_gate_count,
                             neuron.bn_gate_count + fragment.basic_gate_count)


def design4_angle(x: float, y: float, same_sign: bool = False) -> float:
    """Single Ry angle reproducing a 2-input P-LYR neuron: 2*arcsin(sqrt(x+y-2xy))."""
    value = x + y - 2.0 * x * y
    if same_sign:
        value = 1.0 - value
    return probability_angle(value)


def synth_neuron_design4(alpha: float, beta: float, w: Sequence[int]) -> SynthesizedNeuron:
    """One-qbit 2-input neuron; inputs given as Ry angles."""
    w = np.asarray(w)
    if w.size != 2:
        raise WidthMismatchError(f"the one-qbit neuron takes 2 weights, got {w.size}")
    x = math.sin(alpha / 2.0) ** 2
    y = math.sin(beta / 2.0) ** 2
    angle = design4_angle(x, y, same_sign=bool(w[0] == w[1]))
    circuit = Circuit(1, [Gate.ry(0, angle)], {0: QbitRole.OUTPUT})
    return SynthesizedNeuron(circuit, 0, {0: angle}, basic_gate_count=1)


def _neuron_circuit(kind: LayerKind, inputs: np.ndarray, w: np.ndarray,
                    bn: Optional[BNParams], merged: bool) -> SynthesizedNeuron:
    neuron = synth_ulyr_neuron(inputs, w) if kind == LayerKind.ULYR else synth_plyr(inputs, w)
    if bn is not None:
        neuron = attach_bn(neuron, synth_bn(bn.inference(), merged))
    return neuron


def _measured(net: NetworkSpec, image, merged: bool) -> SynthesizedNetwork:
    activations = layer_inputs(net, image)[0]
    layers, outputs = [], []
    for position, layer in enumerate(net.layers):
        neurons = []
        weights = layer.weight_matrix()
        for j in range(layer.size):
            bn = layer.bn[j] if layer.bn is not None else None
            neurons.append(_neuron_circuit(layer.kind, activations, weights[j], bn, merged))
        activations = np.array([n.probability() for n in neurons])
        logger.debug("layer %d measured outputs %s", position, np.round(activations, 6))
        layers.append(neurons)
        outputs.append(activations)
    probabilities = class_probabilities(activations[None, :], net.class_count)[0]
    return SynthesizedNetwork(CutPolicy.MEASURE_BETWEEN_LAYERS, layers, outputs, probabilities)


def _continuous(net: NetworkSpec, image, merged: bool) -> SynthesizedNetwork:
    # A circuit holds one UnitaryInit, so a U-LYR layer is measured and feeds the
    # P-LYR trees through Ry leaves.
    activations = layer_inputs(net, image)[0]
    sources = [input_source(p) for p in activations] if net.layers[0].kind == LayerKind.PLYR else None
    layers, outputs = [], []
    for position, layer in enumerate(net.layers):
        weights = layer.weight_matrix()
        neurons = []
        for j in range(layer.size):
            bn = layer.bn[j] if layer.bn is not None else None
            if layer.kind == LayerKind.ULYR:
                neuron = _neuron_circuit(layer.kind, activations, weights[j], bn, merged)
            else:
                neuron = plyr_from_sources(sources, weights[j])
                if bn is not None:
                    neuron = attach_bn(neuron, synth_bn(bn.inference(), merged))
            neurons.append(neuron)
        values = np.array([n.probability() for n in neurons])
        if layer.kind == LayerKind.ULYR:
            sources = [input_source(v) for v in values]
        else:
            sources = neurons
        layers.append(neurons)
        outputs.append(values)
        activations = values
    probabilities = class_probabilities(outputs[-1][None, :], net.class_count)[0]
    return SynthesizedNetwork(CutPolicy.CONTINUOUS, layers, outputs, probabilities)


def synth_network(net: NetworkSpec, image, policy: CutPolicy = CutPolicy.MEASURE_BETWEEN_LAYERS,
                  merged_bn: bool = True) -> SynthesizedNetwork:
    """Lower every neuron of net for one input image and simulate it."""
    if policy == CutPolicy.CONTINUOUS:
        return _continuous(net, image, merged_bn)
    return _measured(net, image, merged_bn)


def network_gate_counts(net: NetworkSpec, merged_bn: bool = True) -> NetworkCost:
    """Basic gates per layer without input encoding; N-LYR reported separately."""
    layers = []
    for layer in net.layers:
        m = layer.width
        weights = layer.weight_matrix()
        weight_gates = overhead = bn_gates = 0
        for j in range(layer.size):
            if layer.kind == LayerKind.ULYR:
                neuron = synth_ulyr_neuron(np.ones(m), weights[j])
                plan_cost = weight_map(weights[j]).cost
                weight_gates += plan_cost
                overhead += neuron.basic_gate_count - plan_cost
            else:
                neuron = synth_plyr(np.full(m, 0.5), weights[j])
                negatives = int(np.count_nonzero(weights[j] < 0))
                weight_gates += negatives
                overhead += neuron.basic_gate_count - negatives
            if layer.bn is not None:
                bn_gates += synth_bn(layer.bn[j].inference(), merged_bn).basic_gate_count
        layers.append(LayerCost(
            kind=layer.kind.value,
            neurons=layer.size,
            width=m,
            weight_gates=weight_gates,
            overhead_gates=overhead,
            bn_gates=bn_gates,
            mlp_operators=layer.size * (2 * m + 1),
        ))
    return NetworkCost(layers)


def emit_circuit(path: Union[str, Path], circuit: Circuit) -> Path:
    """Write circuit text (and the UnitaryInit matrix file, if any)."""
    written = save_circuit(path, circuit)
    logger.info("circuit written to %s", written)
    return written
