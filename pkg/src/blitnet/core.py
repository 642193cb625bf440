"""Time-stepped spiking network engine with local plasticity.

Neurons carry no state between timesteps: each step computes every layer's
net input from the current spike amplitudes, subtracts the firing threshold
and clips to [0, 1]. An amplitude of 1 means a spike at the very start of
the timestep, values in (0, 1) mean progressively later / weaker spikes,
and 0 means no spike. One timestep is nominally one gamma cycle, so the
amplitude doubles as a sub-timestep spike time.

Five local rules act on the state each training step, in a fixed order:

1. causal excitatory STDP on plastic excitatory connections,
2. per-neuron excitatory weight normalization (fixed or adaptive sum),
3. inhibitory STDP (causal strengthening, rate-scaled weakening),
4. multiplicative homeostatic scaling of inhibition toward zero mean drive,
5. intrinsic threshold plasticity (ITP) toward a per-neuron target rate.

Supervised spike forcing replaces rules 1/3/5 for a layer whose desired
output spikes are imposed externally (see apply_spike_forcing).

Inhibitory connection strengths are stored as positive magnitudes and
subtracted from the net input; a magnitude can never change sign, it is
floored at EPS instead, mirroring the floor on excitatory weights.
"""

from __future__ import annotations

import json

import numpy as np

# Floor for plastic connection strengths; a connection cannot change sign.
EPS = 1e-6

# Floor for the mean-rate divisor of the adaptive normalization constant.
RATE_FLOOR = 1e-3

# Default smoothing for the running firing-rate estimate.
RATE_EMA_ALPHA = 0.01


class ConfigError(ValueError):
    """Raised for malformed network configuration or mismatched drives."""


class PlasticitySchedule:
    """Annealed learning rates over a fixed training horizon.

    The STDP rate starts at eta_init and decays as (1 - t/T)^2; the ITP
    rate is twice that. Both are exactly zero from t = T onward, so
    stepping a network past its horizon is pure inference.
    """

    def __init__(self, eta_init: float = 0.001, horizon: int = 10000, t: int = 0):
        if horizon <= 0:
            raise ConfigError(f"training horizon must be positive, got {horizon}")
        if eta_init < 0:
            raise ConfigError(f"eta_init must be >= 0, got {eta_init}")
        self.eta_init = float(eta_init)
        self.horizon = int(horizon)
        self.t = int(t)

    def _anneal(self) -> float:
        if self.t >= self.horizon:
            return 0.0
        frac = 1.0 - self.t / self.horizon
        return frac * frac

    def stdp_rate(self) -> float:
        return self.eta_init * self._anneal()

    def itp_rate(self) -> float:
        return 2.0 * self.eta_init * self._anneal()

    def advance(self):
        self.t += 1

    def state(self) -> dict:
        return {"eta_init": self.eta_init, "horizon": self.horizon, "t": self.t}


class LayerState:
    """Per-layer neuron state: amplitudes, thresholds, rates, drives."""

    def __init__(self, layer_id: int, size: int, thr=None, target_rate=0.1,
                 const_input=0.0, noise_ceiling=0.0, itp_enabled=True):
        self.layer_id = int(layer_id)
        self.size = int(size)
        self.x_now = np.zeros(size)
        self.x_prev = np.zeros(size)
        self.thr = np.zeros(size) if thr is None else np.asarray(thr, dtype=float).copy()
        self.target_rate = np.broadcast_to(np.asarray(target_rate, dtype=float), (size,)).copy()
        self.measured_rate = self.target_rate.copy()
        self.const_input = np.broadcast_to(np.asarray(const_input, dtype=float), (size,)).copy()
        self.noise_ceiling = float(noise_ceiling)
        self.itp_enabled = bool(itp_enabled)
        if self.thr.shape != (size,):
            raise ConfigError(f"thr shape {self.thr.shape} does not match layer size {size}")
        if np.any(self.thr < 0):
            raise ConfigError("thresholds must be non-negative")

    def fired(self) -> np.ndarray:
        return self.x_now > 0

    def mean_rate(self) -> float:
        return float(self.measured_rate.mean())


class Projection:
    """Signed synaptic pathway between two layers.

    Excitatory weights and inhibitory magnitudes live in dense arrays of
    shape (n_dst, n_src); boolean masks fix which entries exist, and the
    masks never change after construction. Off-mask entries are kept at
    exactly zero. norm_mode is 'fixed' (row sums renormalized to norm_k)
    or 'adaptive' (row sums renormalized to (0.1 / p_exc) / mean source
    rate, which boosts weights for sparse connectivity and quiet sources).
    """

    def __init__(self, src: int, dst: int, n_dst: int, n_src: int,
                 exc_mask=None, inh_mask=None, p_exc=0.0, p_inh=0.0,
                 exc_plastic=False, inh_plastic=False,
                 norm_mode="fixed", norm_k=1.0):
        self.src = int(src)
        self.dst = int(dst)
        self.shape = (int(n_dst), int(n_src))
        self.exc_mask = self._as_mask(exc_mask)
        self.inh_mask = self._as_mask(inh_mask)
        self.exc_w = np.zeros(self.shape)
        self.inh_w = np.zeros(self.shape)
        self.p_exc = float(p_exc)
        self.p_inh = float(p_inh)
        self.exc_plastic = bool(exc_plastic)
        self.inh_plastic = bool(inh_plastic)
        if norm_mode not in ("fixed", "adaptive"):
            raise ConfigError(f"unknown norm_mode {norm_mode!r}")
        self.norm_mode = norm_mode
        self.norm_k = float(norm_k)

    def _as_mask(self, mask):
        if mask is None:
            return np.zeros(self.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.shape:
            raise ConfigError(f"mask shape {mask.shape} does not match {self.shape}")
        return mask.copy()

    def set_exc_weights(self, w):
        w = np.asarray(w, dtype=float)
        self.exc_w = np.where(self.exc_mask, np.maximum(w, EPS), 0.0)

    def set_inh_weights(self, w):
        w = np.asarray(w, dtype=float)
        self.inh_w = np.where(self.inh_mask, np.maximum(w, EPS), 0.0)

    def net_weights(self) -> np.ndarray:
        """Signed weight matrix: excitatory minus inhibitory magnitudes."""
        return self.exc_w - self.inh_w

    def k_value(self, mean_src_rate: float) -> float:
        if self.norm_mode == "fixed":
            return self.norm_k
        return (0.1 / self.p_exc) / max(float(mean_src_rate), RATE_FLOOR)


class StepTrace:
    """Snapshot of one network step.

    amplitudes are the network-driven post-clip spike amplitudes (spike
    forcing later overrides the layer state but not this record).
    net_input is the pre-threshold drive (synaptic + noise + constant +
    external), which also feeds the inhibitory homeostatic scaling;
    drive = net_input - thr is the value that was clipped into [0, 1].
    """

    def __init__(self, amplitudes, net_input, drive):
        self.amplitudes = amplitudes
        self.net_input = net_input
        self.drive = drive
        self.counts = np.array([int((a > 0).sum()) for a in amplitudes])


class Network:
    """Layers, projections and a single seeded noise generator."""

    def __init__(self, layers, projections, schedule=None, seed=0):
        self.layers = list(layers)
        self.projections = list(projections)
        self.schedule = schedule if schedule is not None else PlasticitySchedule()
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        for proj in self.projections:
            if not (0 <= proj.src < len(self.layers) and 0 <= proj.dst < len(self.layers)):
                raise ConfigError(f"projection {proj.src}->{proj.dst} references missing layer")
            expect = (self.layers[proj.dst].size, self.layers[proj.src].size)
            if proj.shape != expect:
                raise ConfigError(f"projection {proj.src}->{proj.dst} shape {proj.shape} != {expect}")

    def afferents(self, dst: int):
        return [p for p in self.projections if p.dst == dst]

    # -- persistence ------------------------------------------------------

    def save(self, path):
        """Snapshot every array plus schedule/RNG state for bit-exact resume."""
        arrays = {}
        meta = {"seed": self.seed, "schedule": self.schedule.state(),
                "rng_state": _encode_rng_state(self.rng.bit_generator.state),
                "n_layers": len(self.layers), "n_projections": len(self.projections),
                "layers": [], "projections": []}
        for i, lay in enumerate(self.layers):
            meta["layers"].append({"layer_id": lay.layer_id, "size": lay.size,
                                   "noise_ceiling": lay.noise_ceiling,
                                   "itp_enabled": lay.itp_enabled})
            for name in ("x_now", "x_prev", "thr", "target_rate", "measured_rate", "const_input"):
                arrays[f"layer{i}_{name}"] = getattr(lay, name)
        for i, proj in enumerate(self.projections):
            meta["projections"].append({"src": proj.src, "dst": proj.dst,
                                        "p_exc": proj.p_exc, "p_inh": proj.p_inh,
                                        "exc_plastic": proj.exc_plastic,
                                        "inh_plastic": proj.inh_plastic,
                                        "norm_mode": proj.norm_mode, "norm_k": proj.norm_k})
            arrays[f"proj{i}_exc_w"] = proj.exc_w
            arrays[f"proj{i}_inh_w"] = proj.inh_w
            arrays[f"proj{i}_exc_mask"] = proj.exc_mask
            arrays[f"proj{i}_inh_mask"] = proj.inh_mask
        np.savez_compressed(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            layers = []
            for i, lm in enumerate(meta["layers"]):
                lay = LayerState(lm["layer_id"], lm["size"],
                                 thr=data[f"layer{i}_thr"],
                                 target_rate=data[f"layer{i}_target_rate"],
                                 const_input=data[f"layer{i}_const_input"],
                                 noise_ceiling=lm["noise_ceiling"],
                                 itp_enabled=lm["itp_enabled"])
                lay.x_now = data[f"layer{i}_x_now"].copy()
                lay.x_prev = data[f"layer{i}_x_prev"].copy()
                lay.measured_rate = data[f"layer{i}_measured_rate"].copy()
                layers.append(lay)
            projections = []
            for i, pm in enumerate(meta["projections"]):
                n_dst = layers[pm["dst"]].size
                n_src = layers[pm["src"]].size
                proj = Projection(pm["src"], pm["dst"], n_dst, n_src,
                                  exc_mask=data[f"proj{i}_exc_mask"],
                                  inh_mask=data[f"proj{i}_inh_mask"],
                                  p_exc=pm["p_exc"], p_inh=pm["p_inh"],
                                  exc_plastic=pm["exc_plastic"],
                                  inh_plastic=pm["inh_plastic"],
                                  norm_mode=pm["norm_mode"], norm_k=pm["norm_k"])
                proj.exc_w = data[f"proj{i}_exc_w"].copy()
                proj.inh_w = data[f"proj{i}_inh_w"].copy()
                projections.append(proj)
        sched = PlasticitySchedule(**meta["schedule"])
        net = cls(layers, projections, schedule=sched, seed=meta["seed"])
        net.rng.bit_generator.state = _decode_rng_state(meta["rng_state"])
        return net


def _encode_rng_state(state):
    return json.loads(json.dumps(state, default=str))


def _decode_rng_state(state):
    out = dict(state)
    inner = dict(out["state"])
    for key, val in inner.items():
        if isinstance(val, str):
            inner[key] = int(val)
    out["state"] = inner
    return out


# -- one synchronous update ------------------------------------------------

def step(net: Network, external=None) -> StepTrace:
    """Advance all layers one timestep synchronously.

    external maps layer index -> drive vector added to that layer's net
    input (used to inject stimuli into input layers). All net inputs are
    computed from the pre-step amplitudes before any layer is updated.
    """
    n = len(net.layers)
    u_syn = [np.zeros(lay.size) for lay in net.layers]
    for proj in net.projections:
        u_syn[proj.dst] += proj.net_weights() @ net.layers[proj.src].x_now

    net_input = []
    drive = []
    for i, lay in enumerate(net.layers):
        u = u_syn[i]
        if lay.noise_ceiling > 0:
            u = u + net.rng.uniform(0.0, lay.noise_ceiling, lay.size)
        u = u + lay.const_input
        if external is not None and external.get(i) is not None:
            ext = np.asarray(external[i], dtype=float)
            if ext.shape != (lay.size,):
                raise ConfigError(f"external drive for layer {i} has shape {ext.shape}, "
                                  f"expected ({lay.size},)")
            if not np.all(np.isfinite(ext)):
                raise ConfigError(f"external drive for layer {i} is not finite")
            u = u + ext
        net_input.append(u)
        drive.append(u - lay.thr)

    amplitudes = []
    for i, lay in enumerate(net.layers):
        x_new = np.clip(drive[i], 0.0, 1.0)
        lay.x_prev = lay.x_now
        lay.x_now = x_new
        amplitudes.append(x_new)
    return StepTrace(amplitudes, net_input, drive)


# -- plasticity rules --------------------------------------------------------

def apply_excitatory_stdp(proj: Projection, pre_prev, pre_now, post_prev, post_now,
                          eta: float) -> Projection:
    """Causal STDP: pre-then-post strengthens, post-then-pre weakens.

    Spike detection is amplitude > 0; entries driven to <= 0 are reset to
    EPS so an excitatory connection stays excitatory.
    """
    pre_prev_f = (np.asarray(pre_prev) > 0).astype(float)
    pre_now_f = (np.asarray(pre_now) > 0).astype(float)
    post_prev_f = (np.asarray(post_prev) > 0).astype(float)
    post_now_f = (np.asarray(post_now) > 0).astype(float)
    dw = eta * (np.outer(post_now_f, pre_prev_f) - np.outer(post_prev_f, pre_now_f))
    w = proj.exc_w + np.where(proj.exc_mask, dw, 0.0)
    proj.exc_w = np.where(proj.exc_mask & (w <= 0.0), EPS, np.where(proj.exc_mask, w, 0.0))
    return proj


def normalize_excitatory(proj: Projection, mean_src_rate: float) -> Projection:
    """Rescale each target neuron's incoming excitatory weights to sum to k.

    Preserves relative strengths while forcing competition: one connection
    can only grow at the expense of the others. Rows with no excitatory
    afferents are left untouched.
    """
    k = proj.k_value(mean_src_rate)
    sums = proj.exc_w.sum(axis=1)
    rows = proj.exc_mask.any(axis=1) & (sums > 0)
    scale = np.ones_like(sums)
    scale[rows] = k / sums[rows]
    proj.exc_w = proj.exc_w * scale[:, None]
    return proj


def apply_inhibitory_stdp(proj: Projection, pre_prev, post_now, target_rate_dst,
                          eta: float) -> Projection:
    """Inhibitory STDP: pre-then-post strengthens inhibition; pre followed
    by a silent target weakens it, scaled by the target's desired rate so
    sparse firing does not bias the rule toward runaway weakening."""
    pre_f = (np.asarray(pre_prev) > 0).astype(float)
    post_f = (np.asarray(post_now) > 0).astype(float)
    f_dst = np.asarray(target_rate_dst, dtype=float)
    per_dst = post_f - (1.0 - post_f) * f_dst
    dm = eta * np.outer(per_dst, pre_f)
    m = proj.inh_w + np.where(proj.inh_mask, dm, 0.0)
    proj.inh_w = np.where(proj.inh_mask & (m <= 0.0), EPS, np.where(proj.inh_mask, m, 0.0))
    return proj


def scale_inhibition(proj: Projection, net_input_dst, eta: float,
                     src_active: bool = True) -> Projection:
    """Homeostatic gain control for inhibition.

    All inhibitory magnitudes onto a target neuron grow by a factor
    (1 + eta) when that neuron's pre-threshold net input was positive
    this step, and shrink by (1 - eta) when it was negative, driving the
    typical drive toward zero so spikes ride on fluctuations. Like any
    synaptic rule it only applies when the source layer actually fired
    (src_active); otherwise the connections were not used this step and
    are left alone.
    """
    if not src_active:
        return proj
    factor = 1.0 + eta * np.sign(np.asarray(net_input_dst, dtype=float))
    proj.inh_w = proj.inh_w * factor[:, None]
    return proj


def apply_itp(layer: LayerState, eta_itp: float) -> LayerState:
    """Threshold adaptation toward the target firing rate.

    A spike nudges the threshold up by eta*(1 - f), silence nudges it down
    by eta*f; thresholds are floored at zero so no neuron becomes
    spontaneously active.
    """
    fired = (layer.x_now > 0).astype(float)
    layer.thr = np.maximum(layer.thr + eta_itp * (fired - layer.target_rate), 0.0)
    return layer


def update_measured_rates(layer: LayerState, alpha: float = RATE_EMA_ALPHA) -> LayerState:
    """Exponential moving estimate of the per-neuron firing probability."""
    fired = (layer.x_now > 0).astype(float)
    layer.measured_rate = (1.0 - alpha) * layer.measured_rate + alpha * fired
    return layer


def apply_spike_forcing(layer: LayerState, forced, afferents, sources, eta: float):
    """Supervised readout training by imposing desired output spikes.

    Each neuron falls into one of four conditions comparing its desired
    (forced) spike with the spike the network actually produced this step:

    * forced only:  threshold -eta; causal STDP treating the forced spike
      as the postsynaptic spike; anti-causal weakening of inhibition.
    * network only: threshold +eta; anti-STDP on the unwanted network
      spike; inhibition strengthened.
    * both:         threshold unchanged; normal STDP / inhibitory STDP.
    * neither:      nothing changes.

    Afterwards the layer state is replaced by the forced pattern
    (amplitude 1 where a spike was demanded), which is what downstream
    rules and the rate estimate see.
    """
    forced_f = np.asarray(forced, dtype=bool)
    if forced_f.shape != (layer.size,):
        raise ConfigError(f"forced vector shape {forced_f.shape} != ({layer.size},)")
    net_f = layer.x_now > 0
    forced_only = forced_f & ~net_f
    network_only = net_f & ~forced_f

    layer.thr = np.maximum(
        layer.thr + eta * (network_only.astype(float) - forced_only.astype(float)), 0.0)

    # Post spike is amplitude-1 in every active condition, so the causal
    # STDP term reduces to the presynaptic spike indicator; the sign flips
    # for unwanted network spikes.
    exc_sign = forced_f.astype(float) - network_only.astype(float)
    inh_sign = (net_f).astype(float) - forced_only.astype(float)
    post_prev_f = (layer.x_prev > 0).astype(float)

    for proj, src in zip(afferents, sources):
        pre_prev_f = (src.x_prev > 0).astype(float)
        pre_now_f = (src.x_now > 0).astype(float)
        if proj.exc_mask.any():
            base = pre_prev_f[None, :] - np.outer(post_prev_f, pre_now_f)
            dw = eta * exc_sign[:, None] * base
            w = proj.exc_w + np.where(proj.exc_mask, dw, 0.0)
            proj.exc_w = np.where(proj.exc_mask & (w <= 0.0), EPS,
                                  np.where(proj.exc_mask, w, 0.0))
        if proj.inh_mask.any():
            dm = eta * np.outer(inh_sign, pre_prev_f)
            m = proj.inh_w + np.where(proj.inh_mask, dm, 0.0)
            proj.inh_w = np.where(proj.inh_mask & (m <= 0.0), EPS,
                                  np.where(proj.inh_mask, m, 0.0))

    layer.x_now = forced_f.astype(float)
    return layer


# -- one full training step --------------------------------------------------

def train_step(net: Network, external=None, forced=None) -> StepTrace:
    """Run one step followed by every plasticity rule in canonical order.

    forced maps layer index -> boolean vector of desired spikes; layers in
    it are trained by spike forcing and skipped by the ordinary STDP and
    ITP passes that step. Past the schedule horizon all rates are zero and
    this reduces to pure inference.
    """
    eta = net.schedule.stdp_rate()
    eta_itp = net.schedule.itp_rate()
    forced = forced or {}
    trace = step(net, external)

    if eta > 0 or eta_itp > 0:
        for proj in net.projections:
            if proj.dst in forced:
                continue
            if proj.exc_plastic and eta > 0 and proj.exc_mask.any():
                src, dst = net.layers[proj.src], net.layers[proj.dst]
                apply_excitatory_stdp(proj, src.x_prev, src.x_now, dst.x_prev, dst.x_now, eta)
        for proj in net.projections:
            if proj.exc_plastic and proj.exc_mask.any():
                normalize_excitatory(proj, net.layers[proj.src].mean_rate())
        for proj in net.projections:
            if proj.dst in forced or not proj.inh_plastic or not proj.inh_mask.any():
                continue
            src, dst = net.layers[proj.src], net.layers[proj.dst]
            if eta > 0:
                apply_inhibitory_stdp(proj, src.x_prev, dst.x_now, dst.target_rate, eta)
                scale_inhibition(proj, trace.net_input[proj.dst], eta,
                                 src_active=bool(np.any(src.x_prev > 0)))
        for i, lay in enumerate(net.layers):
            if lay.itp_enabled and i not in forced:
                apply_itp(lay, eta_itp)
        for i, fvec in forced.items():
            lay = net.layers[i]
            aff = net.afferents(i)
            srcs = [net.layers[p.src] for p in aff]
            apply_spike_forcing(lay, fvec, aff, srcs, eta)
        for lay in net.layers:
            update_measured_rates(lay)

    net.schedule.advance()
    return trace
