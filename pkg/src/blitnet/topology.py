"""Network construction: connectivity patterns, parameter draws, presets.

Presets encode the experiment configurations used by the propagation,
logic-gate and MNIST harnesses: layer sizes, connection probabilities,
learning-rule switches and training horizons. Construction is fully
deterministic given a seed; all draws flow through one generator.

Excitatory weights are initialized uniformly in (0, 1/fan_in] and then
row-normalized, so only their relative values matter. Inhibitory
magnitudes are initialized with row sums matching the excitatory
normalization constant of the same pathway ("balanced") unless a preset
pins them to an explicit value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigError,
    LayerState,
    Network,
    PlasticitySchedule,
    Projection,
    normalize_excitatory,
)

LRF_FIELD = 10          # receptive-field edge, pixels
LRF_STRIDE = 6          # field grid stride; 4x4 positions tile a 28x28 image


@dataclass
class ConnectivitySpec:
    """One signed connection pattern between two layers.

    kind: 'full', 'sparse' (iid Bernoulli(p)), 'local_rf' (each target
    neuron fully connected to one field_h x field_w image patch, patches
    tiled across the image), or 'explicit' (mask given directly, used by
    the hand-sized logic networks).
    """
    kind: str = "full"
    p: float = 1.0
    field_h: int = LRF_FIELD
    field_w: int = LRF_FIELD
    image_h: int = 28
    image_w: int = 28
    plastic: bool = False
    mask: np.ndarray | None = None
    fixed_weight: float | None = None   # explicit patterns may pin all entries

    def validate(self):
        if self.kind not in ("full", "sparse", "local_rf", "explicit"):
            raise ConfigError(f"unknown connectivity kind {self.kind!r}")
        if self.kind == "sparse" and not (0.0 < self.p <= 1.0):
            raise ConfigError(f"connection probability must be in (0, 1], got {self.p}")
        if self.kind == "local_rf":
            if self.field_h > self.image_h or self.field_w > self.image_w:
                raise ConfigError("receptive field does not fit inside the image")

    def probability(self, n_src: int) -> float:
        if self.kind == "full":
            return 1.0
        if self.kind == "sparse":
            return self.p
        if self.kind == "local_rf":
            return (self.field_h * self.field_w) / (self.image_h * self.image_w)
        return float(self.mask.mean()) if self.mask is not None else 0.0

    def build_mask(self, n_dst: int, n_src: int, rng) -> np.ndarray:
        self.validate()
        if self.kind == "full":
            return np.ones((n_dst, n_src), dtype=bool)
        if self.kind == "sparse":
            return rng.random((n_dst, n_src)) < self.p
        if self.kind == "explicit":
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (n_dst, n_src):
                raise ConfigError(f"explicit mask shape {mask.shape} != ({n_dst}, {n_src})")
            return mask.copy()
        return self._local_rf_mask(n_dst, n_src)

    def _local_rf_mask(self, n_dst: int, n_src: int) -> np.ndarray:
        if n_src != self.image_h * self.image_w:
            raise ConfigError(f"source size {n_src} != image extent "
                              f"{self.image_h}x{self.image_w}")
        rows = _grid_positions(self.image_h, self.field_h)
        cols = _grid_positions(self.image_w, self.field_w)
        fields = []
        for r0 in rows:
            for c0 in cols:
                m = np.zeros((self.image_h, self.image_w), dtype=bool)
                m[r0:r0 + self.field_h, c0:c0 + self.field_w] = True
                fields.append(m.ravel())
        mask = np.zeros((n_dst, n_src), dtype=bool)
        for j in range(n_dst):
            mask[j] = fields[j % len(fields)]
        return mask


def _grid_positions(extent: int, field: int, stride: int = LRF_STRIDE):
    """Field origins along one axis; the last field is pinned to the edge
    so the tiling always covers every pixel."""
    pos = list(range(0, extent - field + 1, stride))
    if pos[-1] != extent - field:
        pos.append(extent - field)
    return pos


@dataclass
class LayerSpec:
    size: int
    thr_max: float = 0.1
    rate_lo: float = 0.1
    rate_hi: float = 0.1
    const_lo: float = 0.0
    const_hi: float = 0.0
    noise_ceiling: float = 0.0
    itp_enabled: bool = True

    def validate(self):
        if self.size <= 0:
            raise ConfigError("layer size must be positive")
        if not (0.0 <= self.rate_lo <= self.rate_hi):
            raise ConfigError("rate bounds must satisfy 0 <= lo <= hi")
        if self.rate_hi >= 1.0 or self.rate_lo <= 0.0:
            raise ConfigError("target rates must lie in (0, 1)")
        if not (0.0 <= self.const_lo <= self.const_hi):
            raise ConfigError("constant-input bounds must satisfy 0 <= lo <= hi")
        if self.thr_max < 0 or self.noise_ceiling < 0:
            raise ConfigError("thr_max and noise ceiling must be >= 0")


@dataclass
class ProjectionSpec:
    src: int
    dst: int
    exc: ConnectivitySpec | None = None
    inh: ConnectivitySpec | None = None
    norm_mode: str = "adaptive"
    norm_k: float = 1.0
    inh_init: str = "balanced"    # 'balanced' | 'fixed' (use inh.fixed_weight)


@dataclass
class ExperimentPreset:
    name: str
    layers: list
    projections: list
    horizon: int = 10000
    eta_init: float = 0.001
    params: dict = field(default_factory=dict)   # protocol knobs for the harness

    def to_config(self) -> dict:
        """Flat key/value view of the protocol parameters (round-trippable
        for the named presets; see config_to_preset)."""
        out = {"preset": self.name, "horizon": str(self.horizon),
               "eta_init": repr(self.eta_init)}
        for key, val in self.params.items():
            if isinstance(val, (str, int, float, bool)):
                out[key] = str(val)
        return out


def config_to_preset(cfg: dict) -> ExperimentPreset:
    """Rebuild a named preset from its flat config mapping."""
    name = cfg["preset"]
    if name.startswith("propagation-"):
        preset = preset_propagation(name.split("-", 1)[1])
    elif name.startswith("logic-"):
        preset = preset_logic(name.split("-", 1)[1])
    elif name == "mnist":
        kwargs = {}
        for key in ("n_features", "n_outputs"):
            if key in cfg:
                kwargs[key] = int(cfg[key])
        for key in ("p_exc", "p_inh_in", "p_exc_out", "p_inh_out"):
            if key in cfg:
                kwargs[key] = float(cfg[key])
        if "exc_kind" in cfg:
            kwargs["exc_kind"] = cfg["exc_kind"]
        if "inhibition" in cfg:
            kwargs["inhibition"] = cfg["inhibition"]
        preset = preset_mnist(**kwargs)
    else:
        raise ConfigError(f"unknown preset {name!r}")
    if "horizon" in cfg:
        preset.horizon = int(cfg["horizon"])
    if "eta_init" in cfg:
        preset.eta_init = float(cfg["eta_init"])
    return preset


# -- construction -------------------------------------------------------------

def build_network(preset: ExperimentPreset, seed: int = 0) -> Network:
    """Materialize a preset into a network, drawing thresholds, rates,
    constant inputs and initial weights from a generator seeded by
    (seed, substream). Non-plastic excitatory pathways are normalized once
    here and then never rescaled; plastic ones are re-normalized every
    training step."""
    rng = np.random.default_rng([seed, 0x70])
    layers = []
    for i, ls in enumerate(preset.layers):
        ls.validate()
        thr = rng.uniform(0.0, ls.thr_max, ls.size) if ls.thr_max > 0 else np.zeros(ls.size)
        rate = (rng.uniform(ls.rate_lo, ls.rate_hi, ls.size)
                if ls.rate_hi > ls.rate_lo else np.full(ls.size, ls.rate_lo))
        const = (rng.uniform(ls.const_lo, ls.const_hi, ls.size)
                 if ls.const_hi > ls.const_lo else np.full(ls.size, ls.const_lo))
        layers.append(LayerState(i, ls.size, thr=thr, target_rate=rate, const_input=const,
                                 noise_ceiling=ls.noise_ceiling, itp_enabled=ls.itp_enabled))

    projections = []
    for ps in preset.projections:
        n_src = layers[ps.src].size
        n_dst = layers[ps.dst].size
        exc_mask = inh_mask = None
        p_exc = p_inh = 0.0
        if ps.exc is not None:
            exc_mask = ps.exc.build_mask(n_dst, n_src, rng)
            p_exc = ps.exc.probability(n_src)
        if ps.inh is not None:
            inh_mask = ps.inh.build_mask(n_dst, n_src, rng)
            p_inh = ps.inh.probability(n_src)
        proj = Projection(ps.src, ps.dst, n_dst, n_src,
                          exc_mask=exc_mask, inh_mask=inh_mask,
                          p_exc=p_exc, p_inh=p_inh,
                          exc_plastic=bool(ps.exc and ps.exc.plastic),
                          inh_plastic=bool(ps.inh and ps.inh.plastic),
                          norm_mode=ps.norm_mode, norm_k=ps.norm_k)
        if ps.exc is not None:
            fan_in = max(p_exc * n_src, 1.0)
            if ps.exc.fixed_weight is not None:
                proj.set_exc_weights(np.full((n_dst, n_src), ps.exc.fixed_weight))
            else:
                proj.set_exc_weights(rng.uniform(0.0, 1.0 / fan_in, (n_dst, n_src)))
            normalize_excitatory(proj, layers[ps.src].mean_rate())
        if ps.inh is not None:
            if ps.inh.fixed_weight is not None:
                proj.set_inh_weights(np.full((n_dst, n_src), ps.inh.fixed_weight))
            else:
                fan_in = max(p_inh * n_src, 1.0)
                proj.set_inh_weights(rng.uniform(0.0, 1.0 / fan_in, (n_dst, n_src)))
                _normalize_inhibition(proj, layers[ps.src].mean_rate())
        projections.append(proj)

    schedule = PlasticitySchedule(eta_init=preset.eta_init, horizon=preset.horizon)
    return Network(layers, projections, schedule=schedule, seed=int(np.random.default_rng([seed, 0x71]).integers(2**31)))


def _normalize_inhibition(proj: Projection, mean_src_rate: float):
    """Scale inhibitory rows so their sums match the excitatory
    normalization constant: balanced mean drive at construction."""
    k = proj.k_value(mean_src_rate)
    sums = proj.inh_w.sum(axis=1)
    rows = proj.inh_mask.any(axis=1) & (sums > 0)
    scale = np.ones_like(sums)
    scale[rows] = k / sums[rows]
    proj.inh_w = proj.inh_w * scale[:, None]


# -- presets ------------------------------------------------------------------

def preset_propagation(variant: str) -> ExperimentPreset:
    """Ten 100-neuron layers in a feedforward chain, 10% excitatory
    connectivity, noise driving the first layer only.

    A: excitation only, no weight plasticity.
    B: adds fixed balancing inhibition (same sparsity).
    C: inhibition becomes plastic and every neuron gets a small constant
       input drawn from [0, 0.099].
    D: C plus per-neuron target rates drawn from [0.025, 0.175] instead of
       a uniform 0.1.
    """
    variant = variant.upper()
    if variant not in "ABCD" or len(variant) != 1:
        raise ConfigError(f"propagation variant must be one of A|B|C|D, got {variant!r}")
    with_inh = variant in "BCD"
    plastic_inh = variant in "CD"
    const_hi = 0.099 if variant in "CD" else 0.0
    rate_lo, rate_hi = (0.025, 0.175) if variant == "D" else (0.1, 0.1)
    # plastic balancing inhibition needs enough afferents per neuron to
    # track the upstream population; at 0.1 it cannot cancel count
    # fluctuations and the chain stays strongly count-coupled
    p_inh = 0.3 if plastic_inh else 0.1

    layers = []
    for i in range(10):
        layers.append(LayerSpec(size=100, thr_max=0.1,
                                rate_lo=rate_lo, rate_hi=rate_hi,
                                const_lo=0.0, const_hi=const_hi,
                                noise_ceiling=0.1 if i == 0 else 0.0,
                                itp_enabled=True))
    projections = []
    for i in range(9):
        exc = ConnectivitySpec(kind="sparse", p=0.1, plastic=False)
        inh = ConnectivitySpec(kind="sparse", p=p_inh, plastic=plastic_inh) if with_inh else None
        projections.append(ProjectionSpec(src=i, dst=i + 1, exc=exc, inh=inh,
                                          norm_mode="adaptive"))
    return ExperimentPreset(name=f"propagation-{variant}", layers=layers,
                            projections=projections, horizon=10000,
                            params={"variant": variant, "n_layers": 10, "layer_size": 100,
                                    "p_exc": 0.1, "p_inh": p_inh if with_inh else 0.0,
                                    "noise_ceiling_input": 0.1,
                                    "plastic_inhibition": plastic_inh,
                                    "const_hi": const_hi,
                                    "rate_lo": rate_lo, "rate_hi": rate_hi})


def preset_logic(gate: str) -> ExperimentPreset:
    """Minimal gate-learning networks; inputs are noiseless amplitude-1
    spikes and inhibitory connections are fixed. Target firing rates match
    the gate statistics under uniform random binary inputs (two inputs:
    AND fires 1/4 of steps, OR 3/4, XOR 1/2; NOT mirrors its input).
    """
    gate = gate.upper()
    if gate in ("AND", "OR"):
        # two inputs -> one feature -> AND and OR read the feature's
        # amplitude: both-inputs spikes are stronger (earlier), so a high
        # threshold isolates AND while a low one catches any spike.
        layers = [LayerSpec(2, thr_max=0.0, rate_lo=0.5, rate_hi=0.5, itp_enabled=False),
                  LayerSpec(1, thr_max=0.1, rate_lo=0.75, rate_hi=0.75),
                  LayerSpec(2, thr_max=0.1, rate_lo=0.25, rate_hi=0.25)]
        projections = [
            ProjectionSpec(0, 1, exc=ConnectivitySpec("full", plastic=True),
                           norm_mode="fixed", norm_k=1.0),
            ProjectionSpec(1, 2, exc=ConnectivitySpec("full", plastic=True),
                           norm_mode="fixed", norm_k=1.0),
        ]
        rates = {"AND": 0.25, "OR": 0.75}
        params = {"gate": gate, "output_rates": "0.25,0.75", "readout": 0 if gate == "AND" else 1}
        preset = ExperimentPreset(name=f"logic-{gate}", layers=layers,
                                  projections=projections, horizon=10000, params=params)
        preset.params["rate_overrides"] = {2: np.array([0.25, 0.75])}
        return preset

    if gate == "XOR":
        # two one-hot features (input AND NOT other-input) via a crossed
        # fixed inhibitory pattern; the output fires for either feature.
        layers = [LayerSpec(2, thr_max=0.0, rate_lo=0.5, rate_hi=0.5, itp_enabled=False),
                  LayerSpec(2, thr_max=0.1, rate_lo=0.25, rate_hi=0.25),
                  LayerSpec(1, thr_max=0.1, rate_lo=0.5, rate_hi=0.5)]
        cross = np.array([[False, True], [True, False]])
        projections = [
            ProjectionSpec(0, 1, exc=ConnectivitySpec("full", plastic=True),
                           inh=ConnectivitySpec("explicit", mask=cross, fixed_weight=1.0),
                           norm_mode="fixed", norm_k=1.0),
            ProjectionSpec(1, 2, exc=ConnectivitySpec("full", plastic=True),
                           norm_mode="fixed", norm_k=1.0),
        ]
        return ExperimentPreset(name="logic-XOR", layers=layers, projections=projections,
                                horizon=10000, params={"gate": "XOR", "readout": 0})

    if gate == "NOT":
        # inhibition vetoes the constant input when the input neuron spikes
        layers = [LayerSpec(1, thr_max=0.0, rate_lo=0.5, rate_hi=0.5, itp_enabled=False),
                  LayerSpec(1, thr_max=0.1, rate_lo=0.5, rate_hi=0.5,
                            const_lo=0.5, const_hi=0.5),
                  LayerSpec(1, thr_max=0.1, rate_lo=0.5, rate_hi=0.5)]
        projections = [
            ProjectionSpec(0, 1, inh=ConnectivitySpec("explicit",
                                                      mask=np.ones((1, 1), bool),
                                                      fixed_weight=0.5)),
            ProjectionSpec(1, 2, exc=ConnectivitySpec("full", plastic=True),
                           norm_mode="fixed", norm_k=1.0),
        ]
        return ExperimentPreset(name="logic-NOT", layers=layers, projections=projections,
                                horizon=10000, params={"gate": "NOT", "readout": 0})

    if gate == "ALL":
        # a feature population with mixed-sign sparse connections, constant
        # inputs and spread-out rates; gates are read off whichever neurons
        # happen to realize them.
        layers = [LayerSpec(2, thr_max=0.0, rate_lo=0.5, rate_hi=0.5, itp_enabled=False),
                  LayerSpec(32, thr_max=0.1, rate_lo=0.05, rate_hi=0.45,
                            const_lo=0.0, const_hi=0.5),
                  LayerSpec(24, thr_max=0.1, rate_lo=0.05, rate_hi=0.95)]
        projections = [
            ProjectionSpec(0, 1, exc=ConnectivitySpec("sparse", p=0.5, plastic=True),
                           inh=ConnectivitySpec("sparse", p=0.5, fixed_weight=1.0),
                           norm_mode="fixed", norm_k=1.0),
            ProjectionSpec(1, 2, exc=ConnectivitySpec("sparse", p=0.4, plastic=True),
                           norm_mode="fixed", norm_k=1.0),
        ]
        return ExperimentPreset(name="logic-ALL", layers=layers, projections=projections,
                                horizon=10000, params={"gate": "ALL"})

    raise ConfigError(f"unknown logic gate {gate!r}")


def preset_mnist(n_features: int = 400, n_outputs: int = 100, exc_kind: str = "sparse",
                 p_exc: float = 0.015625, p_inh_in: float = 0.015,
                 p_exc_out: float = 0.25, p_inh_out: float = 0.9,
                 inhibition: str = "plastic") -> ExperimentPreset:
    """Three layers, 784 inputs -> features -> outputs in 10 equal groups.

    exc_kind selects the pixel-to-feature pattern: 'full', 'local'
    (tiled 10x10 receptive fields) or 'sparse' (probability p_exc; the
    default sits at the sweet spot of about 2^-6). inhibition controls the
    pixel-to-feature inhibitory pathway: 'none', 'fixed' or 'plastic'.
    No noise and no constant input anywhere.
    """
    if n_outputs % 10 != 0:
        raise ConfigError(f"n_outputs must be divisible by 10, got {n_outputs}")
    if inhibition not in ("none", "fixed", "plastic"):
        raise ConfigError(f"inhibition must be none|fixed|plastic, got {inhibition!r}")
    if not (0.0 < p_exc_out <= 1.0 and 0.0 < p_inh_out <= 1.0 and 0.0 < p_inh_in <= 1.0):
        raise ConfigError("connection probabilities must lie in (0, 1]")

    layers = [LayerSpec(784, thr_max=0.0, rate_lo=0.13, rate_hi=0.13, itp_enabled=False),
              LayerSpec(n_features, thr_max=0.1, rate_lo=0.03, rate_hi=0.25),
              LayerSpec(n_outputs, thr_max=0.1, rate_lo=0.1, rate_hi=0.1)]

    if exc_kind == "full":
        exc_in = ConnectivitySpec("full", plastic=True)
    elif exc_kind == "local":
        exc_in = ConnectivitySpec("local_rf", plastic=True)
    elif exc_kind == "sparse":
        exc_in = ConnectivitySpec("sparse", p=p_exc, plastic=True)
    else:
        raise ConfigError(f"exc_kind must be full|local|sparse, got {exc_kind!r}")

    inh_in = None
    if inhibition != "none":
        inh_in = ConnectivitySpec("sparse", p=p_inh_in, plastic=(inhibition == "plastic"))

    projections = [
        ProjectionSpec(0, 1, exc=exc_in, inh=inh_in, norm_mode="adaptive"),
        ProjectionSpec(1, 2, exc=ConnectivitySpec("sparse", p=p_exc_out, plastic=True),
                       inh=ConnectivitySpec("sparse", p=p_inh_out, plastic=True),
                       norm_mode="adaptive"),
    ]
    return ExperimentPreset(name="mnist", layers=layers, projections=projections,
                            horizon=60000,
                            params={"n_features": n_features, "n_outputs": n_outputs,
                                    "exc_kind": exc_kind, "p_exc": p_exc,
                                    "p_inh_in": p_inh_in, "p_exc_out": p_exc_out,
                                    "p_inh_out": p_inh_out, "inhibition": inhibition,
                                    "group_size": n_outputs // 10})


def apply_rate_overrides(net: Network, preset: ExperimentPreset):
    """Install per-neuron target rates a preset pins explicitly (the small
    logic networks print a specific rate inside each neuron)."""
    for idx, rates in preset.params.get("rate_overrides", {}).items():
        net.layers[idx].target_rate = np.asarray(rates, dtype=float).copy()
        net.layers[idx].measured_rate = net.layers[idx].target_rate.copy()
    return net
