"""Per-device optimizers: DSGD, DSGT, and DSGT-VR with AirComp consensus.

One consensus iteration, for every device i in parallel:

    theta_half_i = theta_i - alpha * d_i          (for DSGD, d_i is the raw
                                                   stochastic gradient drawn
                                                   at the top of the round)
    theta_i      <- consensus of the halves       (AirComp or exact mixing)
    g_i          <- variance-reduced gradient at the new model (DSGT-VR),
                    or a plain stochastic gradient (DSGT)
    d_half_i     = d_i + g_i_new - g_i_old
    d_i          <- sum_j w_ij d_half_j           (error-free broadcast link)

Model consensus can run over the fading channel; the tracker broadcast is
received in a dedicated interference-free block and is modeled error-free.
The tracker mix applies to the locally corrected halves, which preserves the
average-tracking identity mean(d) = mean(g) under any doubly stochastic W.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from . import channel

VARIANTS = ("dsgd", "dsgt", "dsgt_vr")
CONSENSUS_MODES = ("error_free", "aircomp")


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str = "dsgt_vr"
    step_size: float = 0.1
    max_iterations: int = 100
    consensus_mode: str = "error_free"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.consensus_mode not in CONSENSUS_MODES:
            raise ValueError(f"consensus_mode must be one of {CONSENSUS_MODES}")
        if not self.step_size > 0.0:
            raise ValueError("step size must be positive")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")


class DeviceState:
    """One device's model, tracker, last gradient estimate, and SAGA table."""

    def __init__(self, theta, tracker, last_vr_grad, grad_table=None, table_avg=None):
        self.theta = theta
        self.tracker = tracker
        self.last_vr_grad = last_vr_grad
        self.grad_table = grad_table
        self.table_avg = table_avg

    @classmethod
    def initialize(cls, problem, device, theta0, with_table=True):
        """Algorithm start: common theta0, tracker = last grad = full gradient,
        every table entry at theta0."""
        theta0 = np.asarray(theta0, dtype=np.float64)
        if with_table:
            ds = problem.datasets[device]
            table = np.empty((ds.n_samples, problem.dim))
            for j in range(ds.n_samples):
                kernels.sample_grad(ds.features[j], ds.labels[j], problem.lam, theta0, table[j])
            avg = table.mean(axis=0)
            return cls(theta0.copy(), avg.copy(), avg.copy(), table, avg)
        full = problem.full_local_grad(device, theta0)
        return cls(theta0.copy(), full.copy(), full.copy())


def vr_gradient(state, sample_index, problem, device):
    """SAGA-style unbiased gradient; replaces the drawn table entry.

    Returns grad_fresh - table[xi] + table_mean evaluated with the pre-update
    mean, then stores the fresh gradient and refreshes the mean incrementally.
    """
    fresh = np.empty(problem.dim)
    problem.sample_grad_into(device, sample_index, state.theta, fresh)
    out = np.empty(problem.dim)
    kernels.saga_merge(state.grad_table, state.table_avg, sample_index, fresh, out)
    return out


def local_step(state, alpha):
    """theta_half = theta - alpha * tracker."""
    return state.theta - alpha * state.tracker


def tracker_half(state, new_grad):
    """Locally corrected tracker d + g_new - g_old, before broadcast mixing."""
    return state.tracker + new_grad - state.last_vr_grad


def tracker_update(state, mixed_trackers, new_grad, old_grad):
    """Commit the mixed tracker halves; records new_grad for the next round."""
    mixed = np.asarray(mixed_trackers, dtype=np.float64)
    if mixed.shape != state.tracker.shape or np.shape(new_grad) != mixed.shape:
        raise ValueError("tracker/gradient dimension mismatch")
    state.tracker = mixed.copy()
    state.last_vr_grad = np.asarray(new_grad, dtype=np.float64).copy()
    return state.tracker


@dataclass
class IterationStats:
    noise_energy: float      # mean ||z~||^2 over receivers
    scaling_factor: float    # mean sqrt(p) over receivers (nan when error-free)


def run_iteration(states, mixing, schedule, realization, config, problem, sample_rngs,
                  plan=None):
    """One full consensus iteration; mutates `states`, returns channel stats.

    `realization` must be a ChannelBlockRealization when consensus is over the
    air, and is ignored in error-free mode.  The schedule fixes how receivers
    share transmission blocks; draws are keyed by (iteration, receiver), so it
    never affects the numbers, only the block count the harness reports.
    """
    del schedule  # latency accounting only; see module docstring
    n = len(states)
    w = mixing.weights
    alpha = config.step_size

    if config.variant == "dsgd":
        scratch = np.empty(problem.dim)
        for i, st in enumerate(states):
            xi = int(sample_rngs[i].integers(problem.datasets[i].n_samples))
            problem.sample_grad_into(i, xi, st.theta, scratch)
            st.tracker[:] = scratch

    theta_half = np.empty((n, problem.dim))
    for i, st in enumerate(states):
        theta_half[i] = local_step(st, alpha)

    if config.consensus_mode == "aircomp":
        if realization is None:
            raise ValueError("aircomp consensus needs a channel realization")
        if plan is None:
            plan = channel.ConsensusPlan(realization.graph, mixing)
        theta_new, noise_energy, sqrt_ps = channel.block_consensus(theta_half, plan, realization)
        stats = IterationStats(
            noise_energy=float(np.mean(noise_energy)),
            scaling_factor=float(np.nanmean(sqrt_ps)) if np.any(np.isfinite(sqrt_ps)) else float("nan"),
        )
    else:
        theta_new = w @ theta_half
        stats = IterationStats(noise_energy=0.0, scaling_factor=float("nan"))

    if config.variant == "dsgd":
        for i, st in enumerate(states):
            st.theta = theta_new[i].copy()
        return stats

    new_grads = []
    d_half = np.empty((n, problem.dim))
    for i, st in enumerate(states):
        st.theta = theta_new[i].copy()
        xi = int(sample_rngs[i].integers(problem.datasets[i].n_samples))
        if config.variant == "dsgt_vr":
            g_new = vr_gradient(st, xi, problem, i)
        else:
            g_new = np.empty(problem.dim)
            problem.sample_grad_into(i, xi, st.theta, g_new)
        d_half[i] = tracker_half(st, g_new)
        new_grads.append(g_new)
    mixed = w @ d_half
    for i, st in enumerate(states):
        tracker_update(st, mixed[i], new_grads[i], st.last_vr_grad)
    return stats


def initialize_states(problem, theta0, variant):
    with_table = variant == "dsgt_vr"
    return [
        DeviceState.initialize(problem, i, theta0, with_table=with_table)
        for i in range(problem.n_devices)
    ]
