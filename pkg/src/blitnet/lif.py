"""Leaky integrate-and-fire input-output frequency theory and simulator.

Analytic gain curves for a LIF neuron driven by regular or Poisson input
spike trains through a gamma-kernel synapse, plus a direct numerical
simulator used as the independent check. The regular-train curve uses the
asymptotic mean current; it is exactly zero below a minimum input rate.
The Poisson curve models the stationary synaptic current as a Gaussian
truncated at zero, moment-matched to the shot-noise mean and variance,
and integrates the constant-current rate function over that distribution,
so it is positive (if tiny) at every input rate.

Units: time ms, potential mV, current pA, resistance MOhm; all spike
rates at the public interface are Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfcx, log_ndtr

try:
    from numba import njit
except ImportError:          # pragma: no cover - numba is a hard dependency
    njit = None

MV_PER_MOHM_PA = 1e-3        # R[MOhm] * I[pA] -> mV


class NumericError(RuntimeError):
    """A numeric routine failed to converge within its budget."""


@dataclass(frozen=True)
class LifModel:
    tau_m: float          # membrane time constant, ms
    resistance: float     # membrane resistance, MOhm
    v_rest: float         # resting potential, mV
    v_after: float        # post-spike potential, mV
    v_thr: float          # firing threshold, mV
    t_r: float = 0.0      # absolute refractory period, ms

    def __post_init__(self):
        if self.tau_m <= 0 or self.resistance <= 0:
            raise ValueError("tau_m and resistance must be positive")
        if not (self.v_after <= self.v_rest < self.v_thr):
            raise ValueError("need v_after <= v_rest < v_thr")
        if self.t_r < 0:
            raise ValueError("refractory period must be >= 0")


@dataclass(frozen=True)
class SynapseModel:
    """Synaptic current kernel sum_j a_j * t^k * exp(-t/tau_j).

    amplitudes in pA * ms^-k; time constants in ms; k >= 0. The net kernel
    integral must be positive (excitatory overall).
    """
    amplitudes: tuple
    time_constants: tuple
    k: float = 0.0

    def __post_init__(self):
        if len(self.amplitudes) != len(self.time_constants):
            raise ValueError("amplitudes and time constants must pair up")
        if any(tau <= 0 for tau in self.time_constants):
            raise ValueError("time constants must be positive")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.mean_kernel_integral() <= 0:
            raise ValueError("net kernel integral must be positive")

    @classmethod
    def double_exp(cls, i0: float, tau1: float, tau2: float) -> "SynapseModel":
        """I0 * (exp(-t/tau1) - exp(-t/tau2)), the classic difference of
        exponentials (tau1 > tau2 for an excitatory kernel)."""
        return cls(amplitudes=(i0, -i0), time_constants=(tau1, tau2), k=0.0)

    @classmethod
    def alpha(cls, w: float, tau: float) -> "SynapseModel":
        """w * (t/tau) * exp(1 - t/tau): alpha kernel peaking at w."""
        return cls(amplitudes=(w * math.e / tau,), time_constants=(tau,), k=1.0)

    def kernel(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t >= 0
        for a, tau in zip(self.amplitudes, self.time_constants):
            out[pos] += a * t[pos] ** self.k * np.exp(-t[pos] / tau)
        return out

    def mean_kernel_integral(self) -> float:
        """Integral of the kernel over [0, inf): sum a_j tau_j^(k+1) Gamma(k+1),
        in pA*ms."""
        return sum(a * tau ** (self.k + 1) * math.gamma(self.k + 1)
                   for a, tau in zip(self.amplitudes, self.time_constants))

    def squared_kernel_integral(self) -> float:
        """Integral of the squared kernel over [0, inf), in pA^2*ms."""
        total = 0.0
        g = math.gamma(2 * self.k + 1)
        for ai, ti in zip(self.amplitudes, self.time_constants):
            for aj, tj in zip(self.amplitudes, self.time_constants):
                total += ai * aj * g / (1.0 / ti + 1.0 / tj) ** (2 * self.k + 1)
        return total


# -- first and second moments of the synaptic current -------------------------

def mean_current(rate_hz: float, syn: SynapseModel) -> float:
    """Stationary mean synaptic current (pA) at the given input rate.

    Identical for regular and Poisson trains: rate times kernel integral.
    """
    if rate_hz < 0:
        raise ValueError("input rate must be >= 0")
    return (rate_hz / 1000.0) * syn.mean_kernel_integral()


def current_variance(rate_hz: float, syn: SynapseModel) -> float:
    """Stationary synaptic current variance (pA^2) for a Poisson train."""
    if rate_hz < 0:
        raise ValueError("input rate must be >= 0")
    return (rate_hz / 1000.0) * syn.squared_kernel_integral()


# -- constant-current response -------------------------------------------------

def min_current(lif: LifModel) -> float:
    """Smallest constant current (pA) that ever reaches threshold."""
    return (lif.v_thr - lif.v_rest) / (lif.resistance * MV_PER_MOHM_PA)


def membrane_trajectory(i_const: float, lif: LifModel, t) -> np.ndarray:
    """Potential at time t (ms) after a spike, under constant current."""
    drive = lif.v_rest - lif.v_after + lif.resistance * i_const * MV_PER_MOHM_PA
    return lif.v_after + drive * (1.0 - np.exp(-np.asarray(t, dtype=float) / lif.tau_m))


def output_rate_from_current(i_const: float, lif: LifModel) -> float:
    """Firing rate (Hz) under constant current; zero at or below the
    threshold current, saturating at 1/t_r for large drive."""
    if i_const <= min_current(lif):
        return 0.0
    drive = lif.v_rest - lif.v_after + lif.resistance * i_const * MV_PER_MOHM_PA
    arg = 1.0 - (lif.v_thr - lif.v_after) / drive
    isi = lif.t_r - lif.tau_m * math.log(arg)
    return 1000.0 / isi


def min_input_rate(syn: SynapseModel, lif: LifModel) -> float:
    """Input rate (Hz) below which a regular train cannot cause output."""
    return 1000.0 * (lif.v_thr - lif.v_rest) / (
        lif.resistance * MV_PER_MOHM_PA * syn.mean_kernel_integral())


def output_rate_regular(rate_hz: float, syn: SynapseModel, lif: LifModel) -> float:
    """Mean output rate (Hz) for a regular input train, via the asymptotic
    mean current; exactly zero at or below the minimum input rate."""
    if rate_hz <= min_input_rate(syn, lif):
        return 0.0
    return output_rate_from_current(mean_current(rate_hz, syn), lif)


# -- truncated-Gaussian machinery for Poisson trains ---------------------------

def kappa_of_gamma(gamma: float) -> float:
    """Hazard ratio phi(-gamma) / (1 - Phi(-gamma)) of the standard normal,
    stable for arbitrarily negative gamma."""
    return math.sqrt(2.0 / math.pi) / erfcx(-gamma / math.sqrt(2.0))


def cutoff_frequency(syn: SynapseModel) -> float:
    """Input rate (Hz) where the current variance equals the squared mean:
    the seam of the piecewise Poisson gain curve."""
    return 1000.0 * syn.squared_kernel_integral() / syn.mean_kernel_integral() ** 2


@dataclass(frozen=True)
class TruncGaussFit:
    """Zero-truncated Gaussian matched to the current moments at the
    cutoff rate. gamma = mu/sigma of the untruncated Gaussian; kappa is
    its hazard at -gamma; denom = 1 - kappa*(kappa+gamma) relates the
    truncated variance to sigma^2. kappa + gamma cancels catastrophically
    in doubles at the solution, so its extended-precision value is kept
    separately (kplusg) for the truncated-mean identity mean = sigma *
    (kappa + gamma)."""
    mu: float
    sigma: float
    gamma: float
    kappa: float
    denom: float
    kplusg: float

    def truncated_mean(self) -> float:
        return self.sigma * self.kplusg

    def truncated_variance(self) -> float:
        return self.sigma ** 2 * self.denom


def _moment_residual_mp(s, mp):
    """Relative mismatch of the two moment equations at the cutoff
    (where mean^2 equals variance), for gamma = -s, in high precision."""
    gamma = -s
    kappa = mp.sqrt(2 / mp.pi) / mp.erfc(s / mp.sqrt(2)) / mp.exp(s * s / 2)
    ratio = (kappa + gamma) ** 2 / (1 - kappa * (kappa + gamma))
    return ratio - 1


def fit_gamma_min(syn: SynapseModel, lif: LifModel, tol: float = 1e-10,
                  max_iter: int = 200) -> TruncGaussFit:
    """Shape of the truncated Gaussian at the cutoff rate.

    The moment equations {truncated mean = E, truncated variance = V} with
    V = E^2 are only satisfied in the limit gamma -> -inf (the truncated
    Gaussian tends to an exponential, whose mean equals its standard
    deviation), so "solving" them means driving the residual below tol.
    The residual decays like 1/gamma^2 and needs extended precision to
    evaluate that deep in the tail, hence mpmath.
    """
    import mpmath as mp
    mp.mp.dps = 50

    lo, hi = 1.0, 2.0
    it = 0
    while _moment_residual_mp(hi, mp) > tol:
        lo, hi = hi, hi * 2.0
        it += 1
        if it > max_iter:
            raise NumericError(f"gamma fit did not reach residual {tol}; "
                               f"last residual {float(_moment_residual_mp(hi, mp)):.3e}")
    for _ in range(200):        # bisect s where residual crosses tol
        mid = 0.5 * (lo + hi)
        if _moment_residual_mp(mid, mp) > tol:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * hi:
            break
    s = hi
    gamma = -s
    kappa_mp = mp.sqrt(2 / mp.pi) / mp.erfc(s / mp.sqrt(2)) / mp.exp(s * s / 2)
    denom = float(1 - kappa_mp * (kappa_mp - s))
    kplusg = float(kappa_mp - s)
    kappa = float(kappa_mp)

    rate_c = cutoff_frequency(syn)
    e_t = mean_current(rate_c, syn)
    v_t = current_variance(rate_c, syn)
    sigma = math.sqrt(v_t / denom)
    mu = e_t - kappa * sigma
    return TruncGaussFit(mu=mu, sigma=sigma, gamma=gamma, kappa=kappa,
                         denom=denom, kplusg=kplusg)


def _poisson_params(rate_hz, syn, fit):
    """(mu, sigma) of the truncated-Gaussian current at one input rate."""
    e_t = mean_current(rate_hz, syn)
    v_t = current_variance(rate_hz, syn)
    rate_c = cutoff_frequency(syn)
    if rate_hz <= rate_c:
        sigma = math.sqrt(v_t / fit.denom)
        mu = e_t - fit.kappa * sigma
        return mu, sigma
    # above the cutoff the moment equations have an exact solution,
    # parameterized by gamma with (kappa+gamma)^2 / (1 - kappa*(kappa+gamma))
    # equal to mean^2/variance = rate / cutoff rate
    target = e_t * e_t / v_t

    def ratio(gamma):
        kap = kappa_of_gamma(gamma)
        return (gamma + kap) ** 2 / (1.0 - kap * (kap + gamma))

    # ratio -> 1 like 1 + 1.5/gamma^2 as gamma -> -inf, and its float
    # evaluation is pure cancellation noise out there; the seam keeps the
    # high branch at target >= 1.02, whose root lies above gamma = -10,
    # so the bracket can start well inside the clean zone
    lo, hi = -50.0, 10.0
    while ratio(hi) < target:
        hi *= 2.0
    from scipy.optimize import brentq
    gamma = brentq(lambda g: ratio(g) - target, lo, hi, xtol=1e-12, rtol=1e-12)
    kap = kappa_of_gamma(gamma)
    sigma = e_t / (kap + gamma)
    mu = e_t - kap * sigma
    return mu, sigma


def _truncated_log_pdf(x, mu, sigma, gamma):
    z = (x - mu) / sigma
    return -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(sigma) - log_ndtr(gamma)


def _upper_integration_limit(mu, sigma, gamma, floor):
    """Point beyond which the truncated Gaussian carries < ~1e-15 mass.

    For mu far below zero the distribution is effectively exponential with
    scale sigma^2 / |mu|, so the limit must follow that scale rather than
    sigma itself (which can be astronomically larger).
    """
    if mu > 0:
        hi = mu + 8.0 * sigma
    else:
        hi = 40.0 * sigma * sigma / (sigma - mu)
    hi = max(hi, floor)
    log_norm = log_ndtr(gamma)
    for _ in range(200):
        log_sf = log_ndtr((mu - hi) / sigma) - log_norm
        if log_sf < -35.0:
            return hi
        hi *= 1.5
    return hi


# seam half-width: between the cutoff and (1 + this) * cutoff the two
# branches are blended linearly (they only meet exactly in the
# gamma -> -inf limit, which float arithmetic cannot invert)
SEAM_FRACTION = 0.02


def output_rate_poisson(rate_hz: float, syn: SynapseModel, lif: LifModel,
                        fit: TruncGaussFit | None = None,
                        rel_tol: float = 1e-6) -> float:
    """Mean output rate (Hz) for a Poisson input train.

    Integrates the constant-current rate function over the truncated-
    Gaussian current distribution whose moments track the input rate.
    """
    if rate_hz < 0:
        raise ValueError("input rate must be >= 0")
    if rate_hz == 0.0:
        return 0.0
    if fit is None:
        fit = fit_gamma_min(syn, lif)
    rate_c = cutoff_frequency(syn)
    seam_hi = rate_c * (1.0 + SEAM_FRACTION)
    if rate_c < rate_hz < seam_hi:
        lo = _integrate_rate(rate_c, syn, lif, fit, rel_tol)
        hi = _integrate_rate(seam_hi, syn, lif, fit, rel_tol)
        w = (rate_hz - rate_c) / (seam_hi - rate_c)
        return (1.0 - w) * lo + w * hi
    return _integrate_rate(rate_hz, syn, lif, fit, rel_tol)


def _integrate_rate(rate_hz, syn, lif, fit, rel_tol):
    mu, sigma = _poisson_params(rate_hz, syn, fit)
    gamma = mu / sigma
    i_min = min_current(lif)
    upper = _upper_integration_limit(mu, sigma, gamma, floor=2.0 * i_min)
    if upper <= i_min:
        return 0.0

    def integrand(x):
        return math.exp(_truncated_log_pdf(x, mu, sigma, gamma)) * \
            output_rate_from_current(x, lif)

    # guide the subdivision toward the density bump, otherwise the
    # adaptive rule can miss it entirely on wide intervals
    anchors = sorted(x for x in (mu - 2 * sigma, mu, mu + 2 * sigma)
                     if i_min < x < upper)
    import warnings
    with warnings.catch_warnings():
        # roundoff warnings at the rate-function kink; accuracy is
        # verified against the Monte Carlo simulator instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(integrand, i_min, upper, limit=200,
                                points=anchors or None,
                                epsrel=rel_tol, epsabs=1e-12)
    return val


# -- direct numerical simulation ----------------------------------------------

def _integrate_lif_py(current, v0, v_rest, v_after, v_thr, tau_m, r_factor,
                      t_r_steps, dt):
    spikes = np.empty(current.size, dtype=np.int64)
    n_spikes = 0
    v = v0
    refr = 0
    for i in range(current.size):
        if refr > 0:
            refr -= 1
            v = v_after
            continue
        v = v + (dt / tau_m) * (-(v - v_rest) + r_factor * current[i])
        if v >= v_thr:
            spikes[n_spikes] = i
            n_spikes += 1
            v = v_after
            refr = t_r_steps
    return spikes[:n_spikes]


if njit is not None:
    _integrate_lif = njit(cache=True)(_integrate_lif_py)
else:                                   # pragma: no cover
    _integrate_lif = _integrate_lif_py


def _kernel_samples(syn: SynapseModel, dt: float) -> np.ndarray:
    """Kernel sampled on the dt grid, truncated where it falls below 1e-6
    of its peak for good."""
    tau_max = max(syn.time_constants)
    t = np.arange(0.0, 80.0 * tau_max + dt, dt)
    vals = syn.kernel(t)
    peak = np.abs(vals).max()
    if peak == 0.0:
        return vals[:1]
    keep = np.nonzero(np.abs(vals) >= 1e-6 * peak)[0]
    return vals[:keep[-1] + 1] if keep.size else vals[:1]


def simulate_lif(spike_times, syn: SynapseModel, lif: LifModel, duration: float,
                 dt: float = 0.01, const_current: float = 0.0) -> np.ndarray:
    """Explicitly integrate the membrane equation and return output spike
    times (ms). The synaptic current is the superposition of one kernel
    per input spike; threshold crossings clamp the potential to v_after
    for the refractory period.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration / dt))
    spike_times = np.asarray(spike_times, dtype=float)
    if spike_times.size and np.any(np.diff(spike_times) < 0):
        raise ValueError("input spike times must be sorted")

    current = np.full(n, float(const_current))
    if spike_times.size:
        idx = np.round(spike_times / dt).astype(np.int64)
        idx = idx[(idx >= 0) & (idx < n)]
        impulses = np.bincount(idx, minlength=n).astype(float)
        kern = _kernel_samples(syn, dt)
        from scipy.signal import fftconvolve
        current += fftconvolve(impulses, kern)[:n]

    out_idx = _integrate_lif(current, lif.v_rest, lif.v_rest, lif.v_after,
                             lif.v_thr, lif.tau_m,
                             lif.resistance * MV_PER_MOHM_PA,
                             int(round(lif.t_r / dt)), dt)
    return np.asarray(out_idx, dtype=float) * dt


def regular_train(rate_hz: float, duration: float) -> np.ndarray:
    if rate_hz <= 0:
        return np.zeros(0)
    period = 1000.0 / rate_hz
    return np.arange(period, duration, period)


def poisson_train(rate_hz: float, duration: float, seed: int = 0) -> np.ndarray:
    if rate_hz <= 0:
        return np.zeros(0)
    rng = np.random.default_rng([seed, 0x1f])
    n_expect = int(rate_hz * duration / 1000.0 * 1.5) + 64
    gaps = rng.exponential(1000.0 / rate_hz, n_expect)
    times = np.cumsum(gaps)
    while times.size and times[-1] < duration:
        more = rng.exponential(1000.0 / rate_hz, n_expect)
        times = np.concatenate([times, times[-1] + np.cumsum(more)])
    return times[times < duration]


def simulated_rate(spike_times, syn, lif, duration, rate_hz, kind="poisson",
                   seed=0, dt=0.01) -> float:
    """Convenience: generate a train, simulate, return output rate in Hz."""
    if spike_times is None:
        if kind == "poisson":
            spike_times = poisson_train(rate_hz, duration, seed)
        else:
            spike_times = regular_train(rate_hz, duration)
    out = simulate_lif(spike_times, syn, lif, duration, dt=dt)
    return 1000.0 * out.size / duration


# -- spurious synchrony of pooled Poisson inputs --------------------------------

def spurious_correlation_ratio(lambda0: float, n_inputs: int, n_thr: int) -> float:
    """How much more often a spike-count threshold is reached by the pooled
    input than by any single input channel: the tail ratio
    P(Poisson(n*lambda0) >= n_thr) / (n * P(Poisson(lambda0) >= n_thr)),
    computed in log space."""
    if lambda0 <= 0 or n_inputs < 1 or n_thr < 1:
        raise ValueError("need lambda0 > 0, n_inputs >= 1, n_thr >= 1")
    log_ratio = (_poisson_log_tail(n_inputs * lambda0, n_thr)
                 - math.log(n_inputs)
                 - _poisson_log_tail(lambda0, n_thr))
    return math.exp(log_ratio)


def _poisson_log_tail(mu: float, n_thr: int) -> float:
    """log P(N >= n_thr) for N ~ Poisson(mu), stable for tiny tails."""
    from scipy import stats
    return float(stats.poisson.logsf(n_thr - 1, mu))


# -- named parameter sets for the gain-curve datasets ---------------------------

PRESET_CURVES = {
    "A4-left": (SynapseModel.double_exp(100.0, 10.0, 2.0),
                LifModel(tau_m=16.0, resistance=400.0, v_rest=-70.0,
                         v_after=-90.0, v_thr=-50.0, t_r=2.0)),
    "A4-right": (SynapseModel.double_exp(30.0, 20.0, 2.0),
                 LifModel(tau_m=10.0, resistance=800.0, v_rest=-70.0,
                          v_after=-90.0, v_thr=-55.0, t_r=2.0)),
    "A5-left": (SynapseModel.alpha(100.0, 10.0),
                LifModel(tau_m=16.0, resistance=200.0, v_rest=-70.0,
                         v_after=-90.0, v_thr=-50.0, t_r=2.0)),
    "A5-right": (SynapseModel.alpha(25.0, 12.0),
                 LifModel(tau_m=16.0, resistance=450.0, v_rest=-70.0,
                          v_after=-90.0, v_thr=-50.0, t_r=2.0)),
}
