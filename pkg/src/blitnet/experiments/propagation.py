"""Signal propagation through a deep feedforward chain.

Trains one of the four chain configurations with noise driving the first
layer, freezes it, and measures how strongly each layer's spike count
predicts the next layer's count one step later. Unbalanced chains show
near-perfect count coupling (activity vanishes or avalanches); balanced,
individually-tuned chains decouple the counts.
"""

from dataclasses import dataclass, field

import numpy as np

from ..core import Network, step, train_step
from ..topology import build_network, preset_propagation
from .metrics import pooled_lag_correlation


@dataclass
class PropagationReport:
    variant: str
    seed: int
    r: float                      # pooled count correlation, layer n -> n+1
    layer_rates: np.ndarray       # mean firing rate per layer over the test window
    counts: np.ndarray            # (test_steps, n_layers) spike counts
    vanish_fraction: float        # test steps where the final layer is silent
    avalanche_fraction: float     # test steps where every final-layer neuron fires
    params: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "r": self.r,
                "vanish_fraction": self.vanish_fraction,
                "avalanche_fraction": self.avalanche_fraction,
                "layer_rates": [float(v) for v in self.layer_rates]}


def run_propagation(variant: str, seed: int = 0, train_steps: int = 10000,
                    test_steps: int = 1000, net: Network | None = None) -> PropagationReport:
    """Train a propagation chain, then measure a frozen test window."""
    if net is None:
        preset = preset_propagation(variant)
        preset.horizon = train_steps
        net = build_network(preset, seed=seed)
    for _ in range(train_steps):
        train_step(net)

    counts = np.zeros((test_steps, len(net.layers)), dtype=int)
    for t in range(test_steps):
        trace = step(net)
        counts[t] = trace.counts

    final = counts[:, -1]
    size = net.layers[-1].size
    report = PropagationReport(
        variant=variant.upper(), seed=seed,
        r=pooled_lag_correlation(counts),
        layer_rates=counts.mean(axis=0) / np.array([lay.size for lay in net.layers]),
        counts=counts,
        vanish_fraction=float((final == 0).mean()),
        avalanche_fraction=float((final == size).mean()),
        params={"train_steps": train_steps, "test_steps": test_steps},
    )
    return report
