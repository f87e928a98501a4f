"""
Tests for weight mapping (sign-flip gate plans) and backend qbit placement.
"""

import json

import numpy as np
import pytest

from core.config import SHIPPED_BACKENDS
from core.errors import BackendFormatError, NoBackendError, StateRangeError, WidthMismatchError
from core.mapping import (
    BackendDescriptor,
    FlipKind,
    assign_qbits,
    fg_gate,
    flipped_states,
    gate_cost,
    load_backends,
    lower_flip_gate,
    lower_plan,
    naive_weight_map,
    pg_gate,
    select_backend,
    weight_map,
)
from core.simulator import Circuit, Gate, run


def _placed_signs(plan):
    signs = flipped_states(plan.gates, plan.k).signs[plan.permutation]
    return -signs if plan.global_negated else signs


@pytest.mark.parametrize("k", range(1, 11))
def test_weight_map_exhaustive_counts(k):
    rng = np.random.default_rng(k)
    m = 1 << k
    for negatives in range(0, m // 2 + 1):
        w = np.ones(m, dtype=int)
        w[rng.permutation(m)[:negatives]] = -1
        plan = weight_map(w)
        assert plan.flip_count == negatives
        assert not plan.global_negated
        assert plan.cost <= k * k + 1
        np.testing.assert_array_equal(_placed_signs(plan), w)


def test_weight_map_folds_majority_negative():
    w = np.array([-1, -1, -1, 1, -1, -1, 1, -1])
    plan = weight_map(w)
    assert plan.global_negated
    assert plan.flip_count == 2
    np.testing.assert_array_equal(_placed_signs(plan), w)


def test_weight_map_uses_pg_gates():
    plan = weight_map(np.array([-1, -1, 1, 1, 1, 1, 1, 1]))
    assert all(g.kind == FlipKind.PG for g in plan.gates)
    assert sorted(plan.permutation.tolist()) == list(range(8))


def test_weight_map_validation():
    with pytest.raises(WidthMismatchError):
        weight_map([1, -1, 1])
    with pytest.raises(WidthMismatchError):
        weight_map([1, 0, 1, 1])
    with pytest.raises(WidthMismatchError):
        weight_map([1])


def test_flip_masks():
    np.testing.assert_array_equal(np.flatnonzero(fg_gate(5, 3).flip_mask()), [5])
    np.testing.assert_array_equal(np.flatnonzero(pg_gate(5, 3).flip_mask()), [5, 7])
    np.testing.assert_array_equal(np.flatnonzero(pg_gate(1, 2).flip_mask()), [1, 3])


def test_state_range():
    with pytest.raises(StateRangeError):
        fg_gate(8, 3)
    with pytest.raises(StateRangeError):
        pg_gate(0, 3)
    with pytest.raises(StateRangeError):
        fg_gate(-1, 3)


def test_gate_cost():
    assert gate_cost(pg_gate(4, 3)) == 1
    assert gate_cost(pg_gate(6, 3)) == 1
    assert gate_cost(pg_gate(7, 3)) == 5
    assert gate_cost(fg_gate(7, 3)) == 5
    assert gate_cost(fg_gate(5, 3)) == 7
    assert gate_cost(fg_gate(0, 4)) == 7 + 8


@pytest.mark.parametrize("kind", [FlipKind.FG, FlipKind.PG])
def test_lowered_gates_flip_the_right_states(kind):
    k = 3
    for anchor in range(0 if kind == FlipKind.FG else 1, 1 << k):
        spec = fg_gate(anchor, k) if kind == FlipKind.FG else pg_gate(anchor, k)
        circuit = Circuit(k, [Gate.h(q) for q in range(k)])
        circuit.extend(lower_flip_gate(spec, list(range(k))))
        amplitudes = run(circuit).amplitudes.real * np.sqrt(1 << k)
        expected = np.where(spec.flip_mask(), -1.0, 1.0)
        np.testing.assert_allclose(amplitudes, expected, atol=1e-12)


def test_lower_plan_on_offset_qbits():
    plan = weight_map(np.array([1, -1, -1, 1]))
    gates = lower_plan(plan, [3, 4])
    assert all(set(g.qbits) <= {3, 4} for g in gates)


def test_naive_plan():
    w = np.array([1, -1, -1, 1, 1, 1, 1, -1])
    plan = naive_weight_map(w)
    assert len(plan.gates) == 3 and all(g.kind == FlipKind.FG for g in plan.gates)
    np.testing.assert_array_equal(plan.permutation, np.arange(8))
    np.testing.assert_array_equal(_placed_signs(plan), w)


def test_plan_is_cheaper_than_naive_at_scale():
    rng = np.random.default_rng(0)
    w = rng.choice([-1, 1], 1 << 8)
    assert weight_map(w).cost < naive_weight_map(w).cost


def test_shipped_backends_load():
    backends = load_backends(SHIPPED_BACKENDS)
    assert {b.name for b in backends} >= {"single-1", "bowtie-5a", "bowtie-5b"}
    for backend in backends:
        assert BackendDescriptor.from_dict(backend.to_dict()) == backend


def test_select_backend():
    backends = load_backends(SHIPPED_BACKENDS)
    assert select_backend(1, backends).name == "single-1"
    assert select_backend(Circuit(3), backends).name == "bowtie-5b"
    with pytest.raises(NoBackendError):
        select_backend(100, backends)


def test_load_backends_variants(tmp_path):
    entry = {"name": "pair", "qbits": [0.01, 0.02], "edges": [[0, 1, 0.03]]}
    (tmp_path / "one.json").write_text(json.dumps(entry))
    (tmp_path / "wrapped.json").write_text(json.dumps({"backends": [entry]}))
    (tmp_path / "broken.json").write_text(json.dumps([{"name": "x"}]))
    assert load_backends(tmp_path / "one.json")[0].name == "pair"
    assert load_backends(tmp_path / "wrapped.json")[0].num_qbits == 2
    with pytest.raises(BackendFormatError):
        load_backends(tmp_path / "broken.json")
    with pytest.raises(BackendFormatError):
        load_backends(tmp_path / "missing.json")


def test_backend_validation():
    with pytest.raises(BackendFormatError):
        BackendDescriptor("bad", [0.1, 0.2], [(0, 2, 0.1)])
    with pytest.raises(BackendFormatError):
        BackendDescriptor("bad", [1.5])
    with pytest.raises(BackendFormatError):
        BackendDescriptor("bad", [])


def line_backend(qbit_errors, edge_errors):
    edges = [(i, i + 1, rate) for i, rate in enumerate(edge_errors)]
    return BackendDescriptor("line", list(qbit_errors), edges)


def test_assign_qbits_prefers_quiet_and_close_qbits():
    backend = line_backend([0.05, 0.01, 0.01, 0.02, 0.01], [0.01] * 4)
    circuit = Circuit(3, [Gate.h(0), Gate.h(0), Gate.cx([0], 1), Gate.cx([0], 2), Gate.x(1)])
    mapping = assign_qbits(circuit, backend)
    # busiest qbit sits between its two partners
    assert mapping.assignment == {0: 2, 1: 1, 2: 3}
    assert mapping.to_dict()["assignment"] == {"0": 2, "1": 1, "2": 3}


def test_assign_qbits_greedy_on_large_instances():
    backend = line_backend([0.05, 0.01, 0.01, 0.02, 0.01], [0.01] * 4)
    circuit = Circuit(3, [Gate.h(0), Gate.h(0), Gate.cx([0], 1), Gate.cx([0], 2), Gate.x(1)])
    mapping = assign_qbits(circuit, backend, exhaustive_limit=0)
    assert mapping.assignment == {0: 1, 1: 2, 2: 0}


@pytest.mark.parametrize("edge_errors", [[0.02] * 4, [0.03, 0.01, 0.02, 0.01]])
def test_assign_qbits_single_cz_matches_exhaustive_oracle(edge_errors):
    qbit_errors = [0.01, 0.05, 0.01, 0.05, 0.02]
    backend = line_backend(qbit_errors, edge_errors)
    mapping = assign_qbits(Circuit(2, [Gate.cz([0], 1)]), backend)

    a, b = sorted(mapping.assignment.values())
    assert b == a + 1
    best = min(qbit_errors[i] + qbit_errors[i + 1] + edge_errors[i] for i in range(4))
    assert qbit_errors[a] + qbit_errors[b] + edge_errors[a] == pytest.approx(best)


def test_assign_qbits_avoids_distant_low_error_pair():
    # the two quietest qbits are two hops apart
    backend = line_backend([0.01, 0.05, 0.01, 0.05, 0.02], [0.02] * 4)
    mapping = assign_qbits(Circuit(2, [Gate.cz([0], 1)]), backend)
    assert mapping.assignment == {0: 0, 1: 1}


def test_assign_qbits_single_qbit():
    backend = line_backend([0.03, 0.02, 0.01], [0.01, 0.01])
    assert assign_qbits(Circuit(1, [Gate.h(0)]), backend).assignment == {0: 2}


def test_assign_qbits_uniform_errors_minimal_distance():
    backend = line_backend([0.02] * 5, [0.02] * 4)
    circuit = Circuit(3, [Gate.cz([0], 1), Gate.cz([1], 2)])
    mapping = assign_qbits(circuit, backend)
    assert mapping.assignment == {0: 0, 1: 1, 2: 2}


def test_assign_qbits_is_injective_on_grid():
    backend = [b for b in load_backends(SHIPPED_BACKENDS) if b.name == "grid-16"][0]
    circuit = Circuit(6, [Gate.cz([q], q + 1) for q in range(5)] + [Gate.h(0)])
    mapping = assign_qbits(circuit, backend)
    assert sorted(mapping.assignment) == list(range(6))
    assert len(set(mapping.assignment.values())) == 6


def test_assign_qbits_needs_room():
    backend = BackendDescriptor("single", [0.01])
    with pytest.raises(NoBackendError):
        assign_qbits(Circuit(2), backend)
