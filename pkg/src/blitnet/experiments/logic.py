"""Unsupervised learning of logic gates in minimal spiking networks.

Inputs are presented as amplitude-1 spikes, one random combination per
timestep; activity reaches the features one step later and the outputs a
step after that. The gates emerge from threshold adaptation alone: each
output's target firing rate matches the gate's truth-table statistics, so
ITP parks its threshold between the relevant drive levels (an AND output
ends up above the single-input drive level but below the both-inputs one,
which arrives earlier in the timestep and hence stronger).
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..core import Network, step, train_step
from ..topology import apply_rate_overrides, build_network, preset_logic

GATE_TABLES = {
    "AND": {(0, 0): 0, (0, 1): 0, (1, 0): 0, (1, 1): 1},
    "OR": {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 1},
    "XOR": {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 0},
    "NOT": {(0,): 1, (1,): 0},
}

# input at t, features respond at t+1, outputs at t+2
PIPELINE_DELAY = 2


@dataclass
class LogicReport:
    gate: str
    seed: int
    table: dict                   # input combination -> output spike (0/1)
    passed: bool
    gates_found: dict = field(default_factory=dict)   # for the ALL preset

    def summary(self) -> dict:
        return {"gate": self.gate, "seed": self.seed, "passed": self.passed,
                "table": {"".join(map(str, k)): v for k, v in self.table.items()},
                "gates_found": self.gates_found}


def _input_combos(n_inputs):
    return list(product((0, 1), repeat=n_inputs))


def _settle(net: Network, combo) -> None:
    """Hold one input combination long enough for it to reach the outputs."""
    drive = {0: np.asarray(combo, dtype=float)}
    for _ in range(PIPELINE_DELAY + 1):
        step(net, external=drive)


def read_response(net: Network, combo, layer: int) -> np.ndarray:
    """Spike pattern of a layer once the pipeline has settled on a combo."""
    _settle(net, combo)
    return (net.layers[layer].x_now > 0).astype(int)


def run_logic(gate: str, seed: int = 0, train_steps: int = 10000,
              net: Network | None = None) -> LogicReport:
    """Train a gate preset on random binary inputs, then evaluate the
    frozen network's truth table."""
    gate = gate.upper()
    preset = preset_logic(gate)
    if net is None:
        preset.horizon = train_steps
        net = build_network(preset, seed=seed)
        apply_rate_overrides(net, preset)
        rng = np.random.default_rng([seed, 0x10])
        n_inputs = net.layers[0].size
        for _ in range(train_steps):
            combo = rng.integers(0, 2, n_inputs).astype(float)
            train_step(net, external={0: combo})

    n_inputs = net.layers[0].size
    combos = _input_combos(n_inputs)

    if gate == "ALL":
        found = find_gates(net)
        want = ("AND", "OR", "XOR", "NOT")
        passed = all(g in found for g in want)
        return LogicReport(gate="ALL", seed=seed, table={}, passed=passed,
                           gates_found=found)

    out_layer = len(net.layers) - 1
    readout = int(preset.params.get("readout", 0))
    table = {}
    for combo in combos:
        response = read_response(net, combo, out_layer)
        table[combo] = int(response[readout])
    passed = table == GATE_TABLES[gate]
    return LogicReport(gate=gate, seed=seed, table=table, passed=passed)


def find_gates(net: Network) -> dict:
    """Scan every non-input neuron's truth table and name the two-input
    gates realized somewhere in the network. NOT counts when some neuron
    computes the complement of either single input."""
    combos = _input_combos(net.layers[0].size)
    responses = {}
    for combo in combos:
        for li in range(1, len(net.layers)):
            responses.setdefault(li, {})[combo] = read_response(net, combo, li)

    found = {}
    for li in range(1, len(net.layers)):
        for j in range(net.layers[li].size):
            table = tuple(int(responses[li][c][j]) for c in combos)
            for name, target in _two_input_targets(combos).items():
                key = "NOT" if name == "NOT_B" else name
                if table == target and key not in found:
                    found[key] = {"layer": li, "neuron": j}
    return found


def _two_input_targets(combos):
    targets = {}
    for name in ("AND", "OR", "XOR"):
        targets[name] = tuple(GATE_TABLES[name][c] for c in combos)
    targets["NOT"] = tuple(1 - c[0] for c in combos)
    targets["NOT_B"] = tuple(1 - c[1] for c in combos)
    return targets
