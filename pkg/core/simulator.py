"""
Dense statevector simulator for the compiled circuits.
Qbit j is bit j of the basis index: |b_{k-1}...b_0> <-> sum(b_j * 2^j).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import (
    CircuitFormatError,
    CircuitWidthError,
    NonOrthogonalMatrixError,
    QbitIndexError,
)

logger = logging.getLogger(__name__)

MAX_QBITS = 24
ORTHOGONALITY_TOLERANCE = 1e-9

_SQRT2_INV = 1.0 / math.sqrt(2.0)
_PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_HADAMARD = np.array([[_SQRT2_INV, _SQRT2_INV], [_SQRT2_INV, -_SQRT2_INV]], dtype=complex)
_PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


class GateKind(Enum):
    """Gate set understood by the simulator."""
    PAULI_X = "X"
    HADAMARD = "H"
    RY = "RY"
    Z = "Z"
    CONTROLLED_Z = "CZ"
    CONTROLLED_X = "CX"
    UNITARY_INIT = "INIT"


class QbitRole(Enum):
    """Role tags for circuit qbits."""
    INPUT = "input"
    ENCODING = "encoding"
    OUTPUT = "output"
    PARAMETER = "parameter"
    AUXILIARY = "auxiliary"


def check_orthogonal(matrix: np.ndarray, tolerance: float = ORTHOGONALITY_TOLERANCE) -> None:
    """Raise unless matrix is a real square 2^k matrix with M^T M = I."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NonOrthogonalMatrixError(f"matrix must be square, got shape {matrix.shape}")
    size = matrix.shape[0]
    if size < 2 or size & (size - 1):
        raise NonOrthogonalMatrixError(f"matrix size {size} is not a power of two")
    if np.iscomplexobj(matrix) and np.max(np.abs(matrix.imag)) > tolerance:
        raise NonOrthogonalMatrixError("matrix must be real")
    real = np.real(matrix)
    deviation = np.max(np.abs(real.T @ real - np.eye(size)))
    if deviation > tolerance:
        raise NonOrthogonalMatrixError(f"M^T M deviates from identity by {deviation:.3e}")


@dataclass(frozen=True)
class Gate:
    """A single gate. Controlled gates fire when every control matches its polarity."""
    kind: GateKind
    target: int = 0
    controls: Tuple[int, ...] = ()
    polarity: Tuple[int, ...] = ()
    angle: float = 0.0
    matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.polarity) != len(self.controls):
            raise CircuitFormatError(
                f"{len(self.controls)} controls but {len(self.polarity)} polarity entries"
            )
        if any(p not in (0, 1) for p in self.polarity):
            raise CircuitFormatError(f"polarity entries must be 0 or 1, got {self.polarity}")
        if self.kind == GateKind.UNITARY_INIT:
            if self.matrix is None:
                raise CircuitFormatError("UnitaryInit requires a matrix")
            check_orthogonal(self.matrix)
        elif len(set(self.qbits)) != len(self.qbits):
            raise CircuitFormatError(f"gate {self.kind.value} repeats a qbit: {self.qbits}")

    @classmethod
    def x(cls, qbit: int) -> 'Gate':
        return cls(GateKind.PAULI_X, qbit)

    @classmethod
    def h(cls, qbit: int) -> 'Gate':
        return cls(GateKind.HADAMARD, qbit)

    @classmethod
    def ry(cls, qbit: int, angle: float) -> 'Gate':
        return cls(GateKind.RY, qbit, angle=float(angle))

    @classmethod
    def z(cls, qbit: int) -> 'Gate':
        return cls(GateKind.Z, qbit)

    @classmethod
    def cz(cls, controls: Sequence[int], target: int,
           polarity: Optional[Sequence[int]] = None) -> 'Gate':
        """Controlled Z; with no controls this is a plain Z."""
        controls = tuple(int(c) for c in controls)
        if not controls:
            return cls.z(target)
        polarity = tuple(polarity) if polarity is not None else (1,) * len(controls)
        return cls(GateKind.CONTROLLED_Z, int(target), controls, tuple(int(p) for p in polarity))

    @classmethod
    def cx(cls, controls: Sequence[int], target: int,
           polarity: Optional[Sequence[int]] = None) -> 'Gate':
        """Controlled X; with no controls this is a plain X."""
        controls = tuple(int(c) for c in controls)
        if not controls:
            return cls.x(target)
        polarity = tuple(polarity) if polarity is not None else (1,) * len(controls)
        return cls(GateKind.CONTROLLED_X, int(target), controls, tuple(int(p) for p in polarity))

    @classmethod
    def init(cls, matrix: np.ndarray) -> 'Gate':
        """Orthogonal initialization acting on qbits 0..k-1."""
        return cls(GateKind.UNITARY_INIT, matrix=np.array(matrix, dtype=float))

    @property
    def init_width(self) -> int:
        return int(self.matrix.shape[0]).bit_length() - 1 if self.matrix is not None else 0

    @property
    def qbits(self) -> Tuple[int, ...]:
        """All qbits the gate touches."""
        if self.kind == GateKind.UNITARY_INIT:
            return tuple(range(self.init_width))
        return self.controls + (self.target,)


@dataclass
class Circuit:
    """Ordered gate list over indexed qbits."""
    num_qbits: int
    gates: List[Gate] = field(default_factory=list)
    qbit_roles: Dict[int, QbitRole] = field(default_factory=dict)

    def add(self, gate: Gate) -> 'Circuit':
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> 'Circuit':
        self.gates.extend(gates)
        return self

    def tag(self, qbits: Iterable[int], role: QbitRole) -> 'Circuit':
        for q in qbits:
            self.qbit_roles[q] = role
        return self

    def qbits_with_role(self, role: QbitRole) -> List[int]:
        return sorted(q for q, r in self.qbit_roles.items() if r == role)

    def validate(self):
        """Check gate indices and the UnitaryInit placement rule."""
        if self.num_qbits < 1:
            raise CircuitFormatError("circuit needs at least one qbit")
        for position, gate in enumerate(self.gates):
            for q in gate.qbits:
                if not 0 <= q < self.num_qbits:
                    raise QbitIndexError(
                        f"gate {position} ({gate.kind.value}) uses qbit {q} "
                        f"outside a {self.num_qbits}-qbit register"
                    )
            if gate.kind == GateKind.UNITARY_INIT and position != 0:
                raise CircuitFormatError("UnitaryInit must be the first gate")

    def gate_counts(self) -> Dict[int, int]:
        """Number of gates touching each qbit."""
        counts = {q: 0 for q in range(self.num_qbits)}
        for gate in self.gates:
            for q in gate.qbits:
                counts[q] += 1
        return counts

    def copy(self) -> 'Circuit':
        return Circuit(self.num_qbits, list(self.gates), dict(self.qbit_roles))


@dataclass(frozen=True)
class StateVector:
    """Amplitudes of a k-qbit register; the array is read-only."""
    num_qbits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.num_qbits,):
            raise CircuitFormatError(
                f"{self.num_qbits} qbits need {1 << self.num_qbits} amplitudes, "
                f"got shape {self.amplitudes.shape}"
            )
        self.amplitudes.setflags(write=False)

    @classmethod
    def zero(cls, num_qbits: int) -> 'StateVector':
        """The |0...0> state."""
        _check_width(num_qbits)
        amplitudes = np.zeros(1 << num_qbits, dtype=complex)
        amplitudes[0] = 1.0
        return cls(num_qbits, amplitudes)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex]) -> 'StateVector':
        """Build a state from an explicit amplitude list (copied)."""
        array = np.array(amplitudes, dtype=complex).ravel()
        size = array.shape[0]
        if size < 2 or size & (size - 1):
            raise CircuitFormatError(f"amplitude count {size} is not a power of two")
        num_qbits = size.bit_length() - 1
        _check_width(num_qbits)
        return cls(num_qbits, array)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def is_real(self, tolerance: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.amplitudes.imag)) <= tolerance)


def _check_width(num_qbits: int):
    if num_qbits < 1:
        raise CircuitFormatError("register needs at least one qbit")
    if num_qbits > MAX_QBITS:
        raise CircuitWidthError(f"{num_qbits} qbits exceeds the simulator cap of {MAX_QBITS}")


def _check_indices(gate: Gate, num_qbits: int):
    for q in gate.qbits:
        if not 0 <= q < num_qbits:
            raise QbitIndexError(f"{gate.kind.value} uses qbit {q} on a {num_qbits}-qbit state")


def _apply_single(psi: np.ndarray, num_qbits: int, qbit: int, unitary: np.ndarray):
    view = psi.reshape(1 << (num_qbits - qbit - 1), 2, 1 << qbit)
    low = view[:, 0, :].copy()
    high = view[:, 1, :]
    view[:, 0, :] = unitary[0, 0] * low + unitary[0, 1] * high
    view[:, 1, :] = unitary[1, 0] * low + unitary[1, 1] * high


def _control_mask(num_qbits: int, controls: Tuple[int, ...],
                  polarity: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
    index = np.arange(1 << num_qbits)
    mask = np.ones(index.shape[0], dtype=bool)
    for control, level in zip(controls, polarity):
        mask &= ((index >> control) & 1) == level
    return index, mask


def _ry_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _apply_inplace(psi: np.ndarray, num_qbits: int, gate: Gate):
    kind = gate.kind
    if kind == GateKind.PAULI_X:
        _apply_single(psi, num_qbits, gate.target, _PAULI_X)
    elif kind == GateKind.HADAMARD:
        _apply_single(psi, num_qbits, gate.target, _HADAMARD)
    elif kind == GateKind.Z:
        _apply_single(psi, num_qbits, gate.target, _PAULI_Z)
    elif kind == GateKind.RY:
        _apply_single(psi, num_qbits, gate.target, _ry_matrix(gate.angle))
    elif kind == GateKind.CONTROLLED_Z:
        index, mask = _control_mask(num_qbits, gate.controls, gate.polarity)
        mask &= ((index >> gate.target) & 1) == 1
        psi[mask] *= -1.0
    elif kind == GateKind.CONTROLLED_X:
        index, mask = _control_mask(num_qbits, gate.controls, gate.polarity)
        low = index[mask & (((index >> gate.target) & 1) == 0)]
        high = low | (1 << gate.target)
        psi[low], psi[high] = psi[high].copy(), psi[low].copy()
    elif kind == GateKind.UNITARY_INIT:
        width = gate.init_width
        if width > num_qbits:
            raise QbitIndexError(f"{width}-qbit UnitaryInit on a {num_qbits}-qbit state")
        view = psi.reshape(1 << (num_qbits - width), 1 << width)
        psi[:] = (view @ gate.matrix.T).ravel()
    else:
        raise CircuitFormatError(f"unsupported gate kind {kind}")


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return the state after applying gate; the input state is untouched."""
    _check_indices(gate, state.num_qbits)
    if gate.kind == GateKind.UNITARY_INIT:
        check_orthogonal(gate.matrix)
    psi = np.array(state.amplitudes, dtype=complex, copy=True)
    _apply_inplace(psi, state.num_qbits, gate)
    return StateVector(state.num_qbits, psi)


def run(circuit: Circuit) -> StateVector:
    """Simulate circuit from |0...0> and return the final state."""
    _check_width(circuit.num_qbits)
    circuit.validate()
    psi = np.zeros(1 << circuit.num_qbits, dtype=complex)
    psi[0] = 1.0
    for gate in circuit.gates:
        _apply_inplace(psi, circuit.num_qbits, gate)
    logger.debug("simulated %d gates on %d qbits", len(circuit.gates), circuit.num_qbits)
    return StateVector(circuit.num_qbits, psi)


def measure_prob(state: StateVector, qbit: int) -> float:
    """Marginal probability of reading |1> on qbit."""
    if not 0 <= qbit < state.num_qbits:
        raise QbitIndexError(f"qbit {qbit} outside a {state.num_qbits}-qbit state")
    index = np.arange(1 << state.num_qbits)
    ones = ((index >> qbit) & 1) == 1
    return float(np.sum(np.abs(state.amplitudes[ones]) ** 2))


def output_probability(circuit: Circuit, qbit: int) -> float:
    """Run circuit and measure one qbit."""
    return measure_prob(run(circuit), qbit)


# Circuit text format

def _format_qbit(qbit: int, level: int = 1) -> str:
    return f"{'' if level else '!'}{qbit}"


def format_circuit(circuit: Circuit, matrix_path: Optional[Union[str, Path]] = None) -> str:
    """Render circuit in the one-gate-per-line text format."""
    lines = [f"# qbits: {circuit.num_qbits}"]
    for q in sorted(circuit.qbit_roles):
        lines.append(f"# role {q} {circuit.qbit_roles[q].value}")
    for gate in circuit.gates:
        kind = gate.kind
        if kind == GateKind.RY:
            lines.append(f"RY {gate.target} {gate.angle!r}")
        elif kind == GateKind.PAULI_X:
            lines.append(f"X {gate.target}")
        elif kind == GateKind.HADAMARD:
            lines.append(f"H {gate.target}")
        elif kind == GateKind.Z:
            lines.append(f"CZ {gate.target}")
        elif kind in (GateKind.CONTROLLED_Z, GateKind.CONTROLLED_X):
            operands = [_format_qbit(c, p) for c, p in zip(gate.controls, gate.polarity)]
            operands.append(str(gate.target))
            lines.append(f"{kind.value} {' '.join(operands)}")
        elif kind == GateKind.UNITARY_INIT:
            if matrix_path is None:
                raise CircuitFormatError("a matrix path is needed to format UnitaryInit")
            lines.append(f"INIT {matrix_path}")
    return "\n".join(lines) + "\n"


def _parse_operand(token: str, line_number: int) -> Tuple[int, int]:
    level = 1
    if token.startswith("!"):
        level, token = 0, token[1:]
    try:
        qbit = int(token)
    except ValueError:
        raise CircuitFormatError(f"line {line_number}: bad qbit '{token}'") from None
    if qbit < 0:
        raise CircuitFormatError(f"line {line_number}: negative qbit {qbit}")
    return qbit, level


def parse_circuit(text: str, base_dir: Optional[Union[str, Path]] = None,
                  num_qbits: Optional[int] = None) -> Circuit:
    """Parse the text format; a '# qbits: N' header fixes the register width."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    gates: List[Gate] = []
    roles: Dict[int, QbitRole] = {}
    declared = num_qbits
    for line_number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            header = line[1:].split()
            if declared is None and len(header) == 2 and header[0] == "qbits:":
                declared = int(header[1])
            elif len(header) == 3 and header[0] == "role":
                try:
                    roles[int(header[1])] = QbitRole(header[2])
                except ValueError:
                    raise CircuitFormatError(f"line {line_number}: bad role '{line}'") from None
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        op, *args = line.split()
        op = op.upper()
        if op in ("X", "H"):
            if len(args) != 1:
                raise CircuitFormatError(f"line {line_number}: {op} takes one qbit")
            qbit, level = _parse_operand(args[0], line_number)
            if not level:
                raise CircuitFormatError(f"line {line_number}: {op} target cannot be negated")
            gates.append(Gate.x(qbit) if op == "X" else Gate.h(qbit))
        elif op == "RY":
            if len(args) != 2:
                raise CircuitFormatError(f"line {line_number}: RY takes a qbit and an angle")
            qbit, level = _parse_operand(args[0], line_number)
            if not level:
                raise CircuitFormatError(f"line {line_number}: RY target cannot be negated")
            try:
                angle = float(args[1])
            except ValueError:
                raise CircuitFormatError(f"line {line_number}: bad angle '{args[1]}'") from None
            gates.append(Gate.ry(qbit, angle))
        elif op in ("CZ", "CX"):
            if not args or (op == "CX" and len(args) < 2):
                raise CircuitFormatError(f"line {line_number}: {op} needs qbits")
            operands = [_parse_operand(a, line_number) for a in args]
            target, target_level = operands[-1]
            if not target_level:
                raise CircuitFormatError(f"line {line_number}: {op} target cannot be negated")
            controls = [q for q, _ in operands[:-1]]
            polarity = [lvl for _, lvl in operands[:-1]]
            factory = Gate.cz if op == "CZ" else Gate.cx
            gates.append(factory(controls, target, polarity))
        elif op == "INIT":
            if len(args) != 1:
                raise CircuitFormatError(f"line {line_number}: INIT takes one path")
            path = Path(args[0])
            gates.append(Gate.init(load_matrix(path if path.is_absolute() else base / path)))
        else:
            raise CircuitFormatError(f"line {line_number}: unknown gate '{op}'")

    if declared is None:
        declared = max((max(g.qbits) for g in gates if g.qbits), default=0) + 1
    circuit = Circuit(declared, gates, roles)
    circuit.validate()
    return circuit


def load_circuit(path: Union[str, Path]) -> Circuit:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CircuitFormatError(f"cannot read circuit file {path}: {e}") from e
    return parse_circuit(text, base_dir=path.parent)


def save_circuit(path: Union[str, Path], circuit: Circuit) -> Path:
    """Write circuit text; a UnitaryInit matrix goes to a sibling .matrix file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix_name = None
    for gate in circuit.gates:
        if gate.kind == GateKind.UNITARY_INIT:
            matrix_name = path.with_suffix(".matrix").name
            save_matrix(path.parent / matrix_name, gate.matrix)
    path.write_text(format_circuit(circuit, matrix_name), encoding="utf-8")
    return path


def load_matrix(path: Union[str, Path]) -> np.ndarray:
    """Read a matrix file: first line k, then 2^k x 2^k row-major floats."""
    try:
        tokens = Path(path).read_text(encoding="utf-8").split()
    except OSError as e:
        raise CircuitFormatError(f"cannot read matrix file {path}: {e}") from e
    if not tokens:
        raise CircuitFormatError(f"matrix file {path} is empty")
    try:
        width = int(tokens[0])
        values = [float(t) for t in tokens[1:]]
    except ValueError:
        raise CircuitFormatError(f"matrix file {path} holds non-numeric data") from None
    size = 1 << width
    if len(values) != size * size:
        raise CircuitFormatError(
            f"matrix file {path} declares k={width} but holds {len(values)} entries"
        )
    return np.array(values, dtype=float).reshape(size, size)


def save_matrix(path: Union[str, Path], matrix: np.ndarray):
    size = matrix.shape[0]
    rows = [" ".join(repr(float(v)) for v in row) for row in np.real(matrix)]
    Path(path).write_text(f"{size.bit_length() - 1}\n" + "\n".join(rows) + "\n", encoding="utf-8")
