"""Block flat-fading D2D channels and AirComp precoding/decoding.

Within one consensus iteration every device acts once as the receiving hub of
its star subgraph: neighbors invert their channel, scale by the receiver's
uniform power factor and their mixing weight, and transmit simultaneously;
the superposed signal divided by the scaling factor is the weighted neighbor
average plus decoded noise of per-component variance sigma^2 / p.

Fading draws are keyed by (rep, iteration, receiver) and conditioned on
|h| > gamma, matching the gain-threshold construction of the graph; a weaker
coefficient could not satisfy the power constraint the convergence bound
relies on.  Decoded noise is real Gaussian with the full variance sigma^2/p
rather than the half left in the real part of a circular complex draw, which
keeps the simulator aligned with the variance the error bound assumes.
"""

import numpy as np

from dataclasses import dataclass

from . import _kernels as kernels
from ._rng import REALM_CHANNEL, substream


@dataclass(frozen=True)
class ChannelParams:
    noise_power: float      # sigma^2, linear scale (1.0 for 0 dBm normalized)
    peak_power: float       # P
    gain_threshold: float   # gamma
    dimension: int          # time slots per block = model dimension

    def __post_init__(self):
        if self.peak_power <= 0.0:
            raise ValueError("peak power must be positive")
        if self.noise_power < 0.0:
            raise ValueError("noise power must be nonnegative")
        if self.gain_threshold < 0.0:
            raise ValueError("gain threshold must be nonnegative")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


@dataclass(frozen=True)
class ScalingFactor:
    """Uniform per-receiver transmit scaling sqrt(p) for one block."""

    value: float

    def __post_init__(self):
        if not self.value > 0.0:
            raise ValueError("scaling factor must be positive")


class ChannelBlockRealization:
    """Fading coefficients for one consensus iteration.

    Coefficients exist for every ordered (receiver, sender) pair along graph
    edges, drawn i.i.d. CN(0,1) conditioned on |h| > gamma (reciprocity is not
    assumed).  Each receiver's noise is drawn on demand from the same
    substream that produced its coefficients.
    """

    def __init__(self, graph, params, coefficients, noise_rngs):
        self.graph = graph
        self.params = params
        self.coefficients = coefficients      # (i, j) -> complex
        self._noise_rngs = noise_rngs         # i -> Generator

    @classmethod
    def draw(cls, graph, params, master_seed, rep, iteration):
        coefficients = {}
        noise_rngs = {}
        for i in range(graph.n_devices):
            rng = substream(master_seed, REALM_CHANNEL, rep, iteration, i)
            coeffs = _draw_conditioned(rng, len(graph.neighbors[i]), params.gain_threshold)
            for j, h in zip(graph.neighbors[i], coeffs):
                coefficients[(i, j)] = h
            noise_rngs[i] = rng
        return cls(graph, params, coefficients, noise_rngs)

    def coeff_array(self, receiver):
        """Coefficients for the receiver's neighbors, in sorted neighbor order."""
        return np.array(
            [self.coefficients[(receiver, j)] for j in self.graph.neighbors[receiver]],
            dtype=np.complex128,
        )

    def noise_vector(self, receiver, scaling):
        """Decoded-noise draw z~ with per-component variance sigma^2 / p."""
        if self.params.noise_power == 0.0:
            return None
        std = np.sqrt(self.params.noise_power) / scaling.value
        return std * self._noise_rngs[receiver].standard_normal(self.params.dimension)


def _draw_conditioned(rng, count, gamma):
    """CN(0,1) draws conditioned on |h| > gamma, by rejection."""
    out = np.empty(count, dtype=np.complex128)
    pending = np.arange(count)
    while pending.size:
        raw = rng.standard_normal((pending.size, 2)) * np.sqrt(0.5)
        h = raw[:, 0] + 1j * raw[:, 1]
        good = np.abs(h) > gamma
        out[pending[good]] = h[good]
        pending = pending[~good]
    return out


def compute_scaling(receiver, realization, models, params):
    """sqrt(p) = min over transmitting neighbors of |h| sqrt(P) / ||theta||.

    Zero-norm neighbors transmit nothing and are excluded from the min; with
    every neighbor at zero the safe default sqrt(P)/gamma applies.
    """
    if not models:
        raise ValueError("receiver has no transmitting neighbors")
    senders = sorted(models)
    habs = np.empty(len(senders))
    norms = np.empty(len(senders))
    for k, j in enumerate(senders):
        try:
            habs[k] = abs(realization.coefficients[(receiver, j)])
        except KeyError:
            raise ValueError(f"no channel coefficient for edge ({receiver}, {j})") from None
        norms[k] = np.linalg.norm(models[j])
    return ScalingFactor(_scaling_value(habs, norms, params.peak_power, params.gain_threshold))


def _scaling_value(habs, norms, peak_power, gamma):
    live = norms > 0.0
    if not np.any(live):
        if gamma <= 0.0:
            raise ValueError("all models zero and gamma = 0: scaling undefined")
        return float(np.sqrt(peak_power) / gamma)
    return float(np.min(habs[live] * np.sqrt(peak_power) / norms[live]))


def precode(sender, receiver, model, weight, coeff, scaling):
    """x_j = sqrt(p) w_ij conj(h)/|h|^2 theta_j; the channel inverts exactly."""
    abs2 = coeff.real * coeff.real + coeff.imag * coeff.imag
    if abs2 == 0.0:
        raise ValueError(f"zero channel coefficient on edge ({receiver}, {sender})")
    c = scaling.value * weight * np.conj(coeff) / abs2
    return c * np.asarray(model, dtype=np.float64)


def superpose_and_decode(receiver, transmissions, own_model, self_weight, scaling, params, rng):
    """Sum of h_j x_j, divided by sqrt(p), real part, plus self term and noise.

    `transmissions` is a list of (x_j, h_j) pairs precoded with this
    receiver's scaling factor.  With sigma^2 = 0 the result is the exact
    weighted neighborhood average.
    """
    own = np.asarray(own_model, dtype=np.float64)
    d = own.shape[0]
    y = np.zeros(d, dtype=np.complex128)
    for x, h in transmissions:
        if x.shape[0] != d:
            raise ValueError(f"transmission dimension {x.shape[0]} != {d}")
        y += h * x
    out = y.real / scaling.value + self_weight * own
    if params.noise_power > 0.0:
        out += (np.sqrt(params.noise_power) / scaling.value) * rng.standard_normal(d)
    return out


class ConsensusPlan:
    """Per-receiver neighbor indices and mixing weights, precomputed per run."""

    def __init__(self, graph, mixing):
        if mixing.n_devices != graph.n_devices:
            raise ValueError("mixing matrix size does not match graph")
        w = mixing.weights
        self.graph = graph
        self.nbr_idx = [
            np.array(graph.neighbors[i], dtype=np.intp) for i in range(graph.n_devices)
        ]
        self.nbr_w = [
            np.ascontiguousarray(w[i, graph.neighbors[i]]) for i in range(graph.n_devices)
        ]
        self.self_w = [float(w[i, i]) for i in range(graph.n_devices)]


def block_consensus(theta_half, plan, realization):
    """One AirComp consensus sweep: every receiver's block, via the kernels.

    Returns (theta_new, noise_energy per receiver, sqrt_p per receiver).
    Entries for an isolated device are 0 and nan: nothing is transmitted.
    """
    params = realization.params
    n, d = theta_half.shape
    theta_new = np.empty_like(theta_half)
    noise_energy = np.zeros(n)
    sqrt_ps = np.full(n, np.nan)
    norms = np.linalg.norm(theta_half, axis=1)
    for i in range(n):
        idx = plan.nbr_idx[i]
        if idx.size == 0:
            theta_new[i] = plan.self_w[i] * theta_half[i]
            continue
        coeffs = realization.coeff_array(i)
        sp = _scaling_value(np.abs(coeffs), norms[idx], params.peak_power, params.gain_threshold)
        scaling = ScalingFactor(sp)
        noise = realization.noise_vector(i, scaling)
        kernels.aircomp_receive(
            theta_half, idx, plan.nbr_w[i], coeffs,
            sp, plan.self_w[i], theta_half[i], noise, params.peak_power,
            theta_new[i],
        )
        sqrt_ps[i] = sp
        if noise is not None:
            noise_energy[i] = float(noise @ noise)
    return theta_new, noise_energy, sqrt_ps
