"""
Basic-gate accounting shared by circuit lowering and weight mapping.

Two conventions live side by side:

* Circuit gates: a gate with at most two controls (CNOT, CZ, Toffoli, CCZ)
  is one basic gate. More controls decompose into an ancilla chain of 2c-1
  Toffolis.
* Sign-flip plans: a PG touching y qbits costs 2y-1 once y > 2 (y-1 Toffolis
  build the control, one CZ, y-1 Toffolis undo it). Plan costs and the
  k^2+1 bound use this one.

So a CCZ costs 1 as a circuit gate and 5 inside a plan. Network totals charge
a U-LYR weight block with its plan cost and every other gate as a circuit
gate, so no gate is counted twice.
"""

# X pair around each |0>-polarity control or zero anchor bit.
ZERO_POLARITY_COST = 2


def chain_cost(controls: int) -> int:
    """Circuit-gate cost of a gate with `controls` control qbits."""
    if controls <= 2:
        return 1
    return 2 * controls - 1


def flip_cost(qbits: int) -> int:
    """Plan cost of a sign flip acting on `qbits` qbits."""
    if qbits <= 2:
        return 1
    return 2 * qbits - 1


def polarity_cost(zero_controls: int) -> int:
    return ZERO_POLARITY_COST * zero_controls
