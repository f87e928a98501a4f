"""
Weight mapping and qbit placement.
Compiles +/-1 weight vectors into sign-flip gate plans and places circuits on backends.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from core.costs import flip_cost, polarity_cost
from core.errors import BackendFormatError, NoBackendError, StateRangeError, WidthMismatchError
from core.simulator import Circuit, Gate

logger = logging.getLogger(__name__)


class FlipKind(Enum):
    """Sign-flip gate families."""
    FG = "FG"  # flips one basis state
    PG = "PG"  # flips every state containing the anchor's 1-bits


@dataclass
class SignPattern:
    """Sign (+1/-1) carried by each of the 2^k basis states."""
    k: int
    signs: np.ndarray

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=int)
        if self.signs.shape != (1 << self.k,):
            raise WidthMismatchError(f"sign pattern over k={self.k} needs {1 << self.k} entries")

    @classmethod
    def positive(cls, k: int) -> 'SignPattern':
        return cls(k, np.ones(1 << k, dtype=int))

    @property
    def negative_states(self) -> List[int]:
        return [int(s) for s in np.flatnonzero(self.signs < 0)]

    @property
    def flip_count(self) -> int:
        return int(np.count_nonzero(self.signs < 0))


@dataclass(frozen=True)
class FlipGateSpec:
    """An FG or PG gate anchored at basis state `anchor` of a k-qbit register."""
    kind: FlipKind
    anchor: int
    k: int

    @property
    def one_bits(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.k) if (self.anchor >> j) & 1)

    @property
    def zero_bits(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.k) if not (self.anchor >> j) & 1)

    @property
    def qbits(self) -> Tuple[int, ...]:
        """Local qbits the gate acts on."""
        return tuple(range(self.k)) if self.kind == FlipKind.FG else self.one_bits

    def flip_mask(self) -> np.ndarray:
        """Boolean mask of the basis states whose sign this gate flips."""
        index = np.arange(1 << self.k)
        if self.kind == FlipKind.FG:
            return index == self.anchor
        return (index & self.anchor) == self.anchor

    def __str__(self):
        return f"{self.kind.value}_{self.anchor}"


@dataclass
class GatePlan:
    """Sign-flip gates plus the weight-index -> basis-state permutation they assume."""
    k: int
    gates: List[FlipGateSpec] = field(default_factory=list)
    permutation: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    global_negated: bool = False
    cost: int = 0

    @property
    def flip_count(self) -> int:
        return flipped_states(self.gates, self.k).flip_count

    def describe(self) -> str:
        gates = " ".join(str(g) for g in self.gates) or "(none)"
        sign = "-" if self.global_negated else "+"
        return f"k={self.k} [{sign}] {gates} cost={self.cost}"


def _check_state(x: int, k: int):
    if k < 1:
        raise StateRangeError(f"register width must be >= 1, got {k}")
    if not 0 <= x < (1 << k):
        raise StateRangeError(f"state {x} outside [0, {1 << k}) for k={k}")


def fg_gate(x: int, k: int) -> FlipGateSpec:
    """Gate flipping exactly basis state x."""
    _check_state(x, k)
    return FlipGateSpec(FlipKind.FG, int(x), int(k))


def pg_gate(x: int, k: int) -> FlipGateSpec:
    """Gate flipping every state whose bits contain x's 1-bits."""
    _check_state(x, k)
    if x == 0:
        raise StateRangeError("PG anchor must be non-zero")
    return FlipGateSpec(FlipKind.PG, int(x), int(k))


def gate_cost(gate: FlipGateSpec) -> int:
    """Plan cost of one flip gate; FG adds an X pair per zero bit."""
    cost = flip_cost(len(gate.qbits))
    if gate.kind == FlipKind.FG:
        cost += polarity_cost(len(gate.zero_bits))
    return cost


def flipped_states(gates: Iterable[FlipGateSpec], k: int) -> SignPattern:
    """Compose sign flips starting from the all-positive pattern."""
    signs = np.ones(1 << k, dtype=int)
    for gate in gates:
        if gate.k != k:
            raise WidthMismatchError(f"gate {gate} is for k={gate.k}, pattern has k={k}")
        signs[gate.flip_mask()] *= -1
    return SignPattern(k, signs)


def _validate_weights(weights: Sequence[int]) -> Tuple[np.ndarray, int]:
    w = np.asarray(weights)
    size = w.shape[0] if w.ndim == 1 else 0
    if size < 2 or size & (size - 1):
        raise WidthMismatchError(f"weight count {size} is not a power of two >= 2")
    if not np.all(np.isin(w, (-1, 1))):
        raise WidthMismatchError("weights must be +1 or -1")
    return w.astype(int), size.bit_length() - 1


def _decompose(remaining: int, level: int, width: int, gates: List[FlipGateSpec]):
    # Gate at `level` is anchored at the lowest (width - level + 1) bits and flips
    # 2^(level-1) states; every deeper gate flips a subset of it.
    while remaining:
        if level >= 2 and remaining <= 1 << (level - 2):
            level -= 1
            continue
        gates.append(pg_gate((1 << (width - level + 1)) - 1, width))
        remaining = (1 << (level - 1)) - remaining
        level -= 1


def _pairing(signs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    flipped = np.flatnonzero(signs < 0)
    kept = np.flatnonzero(signs > 0)
    permutation = np.empty(weights.shape[0], dtype=int)
    permutation[np.flatnonzero(weights < 0)] = flipped
    permutation[np.flatnonzero(weights > 0)] = kept
    return permutation


def weight_map(weights: Sequence[int]) -> GatePlan:
    """Compile weights into a PG plan costing at most k^2+1 basic gates."""
    w, k = _validate_weights(weights)
    negated = False
    negatives = int(np.count_nonzero(w < 0))
    if negatives > 1 << (k - 1):
        w = -w
        negated = True
        negatives = (1 << k) - negatives

    gates: List[FlipGateSpec] = []
    _decompose(negatives, k, k, gates)
    pattern = flipped_states(gates, k)
    if pattern.flip_count != negatives:
        raise StateRangeError(f"plan flips {pattern.flip_count} states, expected {negatives}")

    plan = GatePlan(
        k=k,
        gates=gates,
        permutation=_pairing(pattern.signs, w),
        global_negated=negated,
        cost=sum(gate_cost(g) for g in gates),
    )
    logger.debug("weight_map R=%d: %s", negatives, plan.describe())
    return plan


def naive_weight_map(weights: Sequence[int]) -> GatePlan:
    """Baseline: one FG per -1 weight, identity permutation."""
    w, k = _validate_weights(weights)
    gates = [fg_gate(int(i), k) for i in np.flatnonzero(w < 0)]
    return GatePlan(
        k=k,
        gates=gates,
        permutation=np.arange(1 << k),
        global_negated=False,
        cost=sum(gate_cost(g) for g in gates),
    )


def lower_flip_gate(gate: FlipGateSpec, qbits: Sequence[int]) -> List[Gate]:
    """Circuit gates for one flip spec; qbits[j] hosts local qbit j."""
    if len(qbits) != gate.k:
        raise WidthMismatchError(f"{gate} needs {gate.k} qbits, got {len(qbits)}")
    if gate.kind == FlipKind.PG:
        *controls, target = gate.one_bits
        return [Gate.cz([qbits[c] for c in controls], qbits[target])]

    # FG: zero bits become |0>-polarity controls around a |1> target.
    ones = gate.one_bits
    if ones:
        target = ones[-1]
        controls = [j for j in range(gate.k) if j != target]
        polarity = [(gate.anchor >> j) & 1 for j in controls]
        return [Gate.cz([qbits[c] for c in controls], qbits[target], polarity)]
    target = gate.k - 1
    controls = list(range(gate.k - 1))
    return [
        Gate.x(qbits[target]),
        Gate.cz([qbits[c] for c in controls], qbits[target], [0] * len(controls)),
        Gate.x(qbits[target]),
    ]


def lower_plan(plan: GatePlan, qbits: Sequence[int]) -> List[Gate]:
    gates: List[Gate] = []
    for spec in plan.gates:
        gates.extend(lower_flip_gate(spec, qbits))
    return gates


# Physical backends

UNREACHABLE_ERROR = 1.0
SCORE_DIGITS = 12
EXHAUSTIVE_LIMIT = 5040


@dataclass
class BackendDescriptor:
    """Physical device: per-qbit error rates and coupling edges with error rates."""
    name: str
    qbit_errors: List[float]
    edges: List[Tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.qbit_errors:
            raise BackendFormatError(f"backend '{self.name}' has no qbits")
        for rate in self.qbit_errors:
            if not 0.0 <= rate <= 1.0:
                raise BackendFormatError(f"backend '{self.name}': error rate {rate} outside [0,1]")
        for a, b, rate in self.edges:
            if not (0 <= a < self.num_qbits and 0 <= b < self.num_qbits) or a == b:
                raise BackendFormatError(f"backend '{self.name}': bad edge ({a}, {b})")
            if not 0.0 <= rate <= 1.0:
                raise BackendFormatError(f"backend '{self.name}': edge error {rate} outside [0,1]")

    @property
    def num_qbits(self) -> int:
        return len(self.qbit_errors)

    @property
    def mean_error(self) -> float:
        rates = list(self.qbit_errors) + [rate for _, _, rate in self.edges]
        return float(np.mean(rates))

    def coupling_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.num_qbits))
        for a, b, rate in self.edges:
            graph.add_edge(a, b, error=rate)
        return graph

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "qbits": list(self.qbit_errors),
            "edges": [[a, b, rate] for a, b, rate in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'BackendDescriptor':
        try:
            return cls(
                name=str(data["name"]),
                qbit_errors=[float(e) for e in data["qbits"]],
                edges=[(int(a), int(b), float(e)) for a, b, e in data.get("edges", [])],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise BackendFormatError(f"malformed backend descriptor: {e}") from e


@dataclass
class PhysicalMapping:
    """Virtual -> physical qbit assignment on a named backend."""
    backend: str
    assignment: Dict[int, int]

    def __post_init__(self):
        if len(set(self.assignment.values())) != len(self.assignment):
            raise BackendFormatError("qbit assignment is not injective")

    def to_dict(self) -> Dict:
        return {"backend": self.backend,
                "assignment": {str(v): p for v, p in sorted(self.assignment.items())}}


def load_backends(path: Union[str, Path]) -> List[BackendDescriptor]:
    """Read a JSON list of backend descriptors (or {"backends": [...]})."""
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (IOError, json.JSONDecodeError) as e:
        raise BackendFormatError(f"cannot read backend file {path}: {e}") from e
    if isinstance(data, dict):
        data = data.get("backends", [data])
    if not isinstance(data, list):
        raise BackendFormatError(f"backend file {path} must hold a list")
    return [BackendDescriptor.from_dict(entry) for entry in data]


def select_backend(circuit: Union[Circuit, int],
                   backends: Sequence[BackendDescriptor]) -> BackendDescriptor:
    """Smallest backend that fits; ties broken by mean error rate."""
    needed = circuit.num_qbits if isinstance(circuit, Circuit) else int(circuit)
    fitting = [b for b in backends if b.num_qbits >= needed]
    if not fitting:
        raise NoBackendError(f"no backend offers {needed} qbits")
    chosen = min(fitting, key=lambda b: (b.num_qbits, b.mean_error))
    logger.info("selected backend %s (%d qbits, mean error %.4f) for %d-qbit circuit",
                chosen.name, chosen.num_qbits, chosen.mean_error, needed)
    return chosen


def qbit_gate_counts(circuit: Circuit) -> Dict[int, int]:
    return circuit.gate_counts()


def interaction_weights(circuit: Circuit) -> Dict[Tuple[int, int], int]:
    """Number of multi-qbit gates shared by each virtual qbit pair (a < b)."""
    weights: Dict[Tuple[int, int], int] = {}
    for gate in circuit.gates:
        qbits = sorted(set(gate.qbits))
        for i, a in enumerate(qbits):
            for b in qbits[i + 1:]:
                weights[(a, b)] = weights.get((a, b), 0) + 1
    return weights


def coupling_distances(backend: BackendDescriptor) -> Dict[int, Dict[int, int]]:
    return dict(nx.all_pairs_shortest_path_length(backend.coupling_graph()))


def route_errors(backend: BackendDescriptor) -> Dict[int, Dict[int, float]]:
    """Error of one two-qbit gate between any two physical qbits.

    The gate runs on the quietest edge of the least noisy path; every other
    edge on that path costs one SWAP (three two-qbit gates).
    """
    graph = backend.coupling_graph()
    errors: Dict[int, Dict[int, float]] = {}
    for source, paths in nx.all_pairs_dijkstra_path(graph, weight="error"):
        row = errors.setdefault(source, {})
        for target, path in paths.items():
            if target == source:
                continue
            edge_errors = [graph.edges[a, b]["error"] for a, b in zip(path, path[1:])]
            row[target] = 3 * sum(edge_errors) - 2 * min(edge_errors)
    return errors


class PlacementCost:
    """Expected error of a (partial) virtual -> physical assignment.

    Each gate touching a virtual qbit pays its physical qbit's error rate and
    each shared multi-qbit gate pays the route error between the two physical
    qbits. Scores are rounded so float noise never decides a tie.
    """

    def __init__(self, circuit: Circuit, backend: BackendDescriptor):
        self.backend = backend
        self.counts = qbit_gate_counts(circuit)
        self.weights = interaction_weights(circuit)
        self.partners: Dict[int, Dict[int, int]] = {q: {} for q in range(circuit.num_qbits)}
        for (a, b), shared in self.weights.items():
            self.partners[a][b] = shared
            self.partners[b][a] = shared
        self.routes = route_errors(backend)
        self.distances = coupling_distances(backend)

    def route(self, p: int, q: int) -> float:
        return self.routes.get(p, {}).get(q, UNREACHABLE_ERROR)

    def hops(self, p: int, q: int) -> int:
        return self.distances.get(p, {}).get(q, self.backend.num_qbits)

    def place(self, v: int, p: int, assignment: Dict[int, int]) -> Tuple[float, int]:
        """Added error and hop spread when v lands on p next to the qbits already placed."""
        error = self.counts[v] * self.backend.qbit_errors[p]
        spread = 0
        for u, shared in self.partners[v].items():
            if u in assignment:
                error += shared * self.route(p, assignment[u])
                spread += self.hops(p, assignment[u])
        return round(error, SCORE_DIGITS), spread

    def total(self, assignment: Dict[int, int]) -> Tuple[float, int]:
        error = sum(self.counts[v] * self.backend.qbit_errors[p] for v, p in assignment.items())
        spread = 0
        for (a, b), shared in self.weights.items():
            error += shared * self.route(assignment[a], assignment[b])
            spread += self.hops(assignment[a], assignment[b])
        return round(error, SCORE_DIGITS), spread


def assign_qbits(circuit: Circuit, backend: BackendDescriptor,
                 exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> PhysicalMapping:
    """Place virtual qbits on low-error physical qbits close to their partners.

    Placements are scored by PlacementCost, then by total coupling distance
    between interacting qbits, then by the lowest physical indices. Small
    instances are searched exhaustively. Larger ones place the busiest virtual
    qbits first, each on the candidate with the least added cost.
    """
    if circuit.num_qbits > backend.num_qbits:
        raise NoBackendError(
            f"backend {backend.name} has {backend.num_qbits} qbits, circuit needs {circuit.num_qbits}"
        )
    cost = PlacementCost(circuit, backend)
    virtual = list(range(circuit.num_qbits))

    if math.perm(backend.num_qbits, circuit.num_qbits) <= exhaustive_limit:
        best = min(itertools.permutations(range(backend.num_qbits), circuit.num_qbits),
                   key=lambda placed: (cost.total(dict(zip(virtual, placed))), placed))
        assignment = dict(zip(virtual, best))
    else:
        assignment = {}
        free = list(range(backend.num_qbits))
        for v in sorted(virtual, key=lambda q: (-cost.counts[q], q)):
            chosen = min(free, key=lambda p: (cost.place(v, p, assignment), p))
            assignment[v] = chosen
            free.remove(chosen)

    logger.debug("assignment on %s: %s (error %.4f)", backend.name, assignment, cost.total(assignment)[0])
    return PhysicalMapping(backend.name, assignment)
