"""Experiment orchestration, metrics, and the convergence-bound evaluator.

A run builds one fixed problem and topology from the master seed, solves the
centralized oracle once, then executes the configured algorithm for T
iterations, recording one metrics row per iteration (plus the initial state).
Repetitions rerun with independent sampling/channel substreams and are
averaged pointwise; with a fixed master seed the emitted CSV is byte-identical
regardless of how many worker processes computed the repetitions.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import scheduler, topology
from ._rng import REALM_SAMPLE, substream
from .channel import ChannelBlockRealization, ChannelParams, ConsensusPlan
from .learners import (
    CONSENSUS_MODES,
    VARIANTS,
    AlgorithmConfig,
    IterationStats,
    initialize_states,
    run_iteration,
)
from .problems import load_idx_binary_pair, make_problem, partition, solve_centralized, synthesize

GAP_ABORT = 1e12
GROWTH_LIMIT = 50


@dataclass
class ExperimentConfig:
    seed: int = 0
    variant: str = "dsgt_vr"
    consensus: str = "aircomp"
    n_devices: int = 20
    dimension: int = 20
    alpha: object = "auto"        # float, or "auto" for the theorem-order step
    iters: int = 500
    sigma2: float = 1.0           # 0 dBm normalized
    power: float = 100.0
    gamma: float = 0.5
    schedule: str = "naive"
    data: str = "synthetic"       # "synthetic" | "idx"
    samples: int = 1000           # synthetic: total training samples
    flip_rate: float = 0.1
    test_samples: int = 500       # synthetic holdout size
    train_images: str = ""
    train_labels: str = ""
    class_a: int = 3
    class_b: int = 5
    train_count: int = 1000
    test_count: int = 1968
    per_device: int = 0           # idx: samples per device (0 = even split)
    topology_file: str = ""
    out: str = ""
    repetitions: int = 1
    jobs: int = 1
    oracle_tol: float = 1e-13

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.consensus not in CONSENSUS_MODES:
            raise ValueError(f"consensus must be one of {CONSENSUS_MODES}")
        if self.schedule not in ("naive", "coloring"):
            raise ValueError("schedule must be naive or coloring")
        if self.data not in ("synthetic", "idx"):
            raise ValueError("data must be synthetic or idx")
        if self.alpha != "auto" and not float(self.alpha) > 0.0:
            raise ValueError("alpha must be positive or 'auto'")
        for name in ("n_devices", "repetitions", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.sigma2 < 0 or self.power <= 0 or self.gamma < 0:
            raise ValueError("need sigma2 >= 0, power > 0, gamma >= 0")
        if self.consensus == "aircomp" and self.sigma2 > 0 and self.gamma <= 0:
            raise ValueError("aircomp with noise needs gamma > 0")
        if self.data == "idx" and not (self.train_images and self.train_labels):
            raise ValueError("idx data needs train_images and train_labels paths")


@dataclass
class MetricsRecord:
    iteration: int
    gap_mean: float
    gap_per_device: np.ndarray
    consensus_error: float
    test_accuracy: float
    param_norm_max: float        # running max ||theta_i||, the empirical bound B
    block_noise_energy: float    # mean decoded-noise energy over receivers
    scaling_factor: float        # mean sqrt(p) over receivers, nan if error-free
    blocks_used: int


class DivergenceError(RuntimeError):
    """Raised when a run blows up; carries the metrics recorded so far."""

    def __init__(self, message, records=()):
        super().__init__(message)
        self.records = list(records)

    def __reduce__(self):
        return (DivergenceError, (self.args[0], self.records))


@dataclass
class ExperimentResult:
    records: list
    summary: dict


def build_problem(config):
    if config.data == "synthetic":
        per, rem = divmod(config.samples, config.n_devices)
        if rem:
            raise ValueError(
                f"{config.samples} samples do not divide over {config.n_devices} devices"
            )
        return synthesize(config.n_devices, per, config.dimension, config.seed,
                          flip_rate=config.flip_rate, test_count=config.test_samples)
    train, test = load_idx_binary_pair(
        config.train_images, config.train_labels, config.class_a, config.class_b,
        config.train_count, config.test_count)
    parts = partition(train, config.n_devices, config.per_device or None)
    return make_problem(parts, holdout=test)


def build_topology(config):
    if config.topology_file:
        graph = topology.load_graph(config.topology_file)
        if graph.n_devices != config.n_devices:
            raise ValueError(
                f"topology file has {graph.n_devices} devices, config says {config.n_devices}"
            )
        if not graph.is_connected():
            raise ValueError("topology file describes a disconnected graph")
    else:
        graph, _ = topology.random_gain_graph(config.n_devices, config.gamma, config.seed)
    return graph, topology.laplacian_mixing(graph)


def theorem_order_step(problem, mixing):
    """Theorem-order step size with unit constants; a starting point only."""
    mu = problem.strong_convexity()
    smooth = problem.smoothness()
    kappa = smooth / mu
    sizes = problem.device_sizes()
    m_big, m_small = max(sizes), min(sizes)
    return min(1.0 / (mu * m_big),
               m_small * (1.0 - mixing.beta) ** 2 / (m_big * smooth * kappa * kappa))


def run_experiment(config):
    """Full experiment: oracle, repetitions, averaging, optional CSV."""
    config.validate()
    problem = build_problem(config)
    theta_opt, f_opt = solve_centralized(problem, config.oracle_tol)
    graph, mixing = build_topology(config)
    if config.schedule == "naive":
        sched = scheduler.naive_schedule(graph)
    else:
        sched = scheduler.coloring_schedule(graph)

    auto = config.alpha == "auto"
    alpha = theorem_order_step(problem, mixing) if auto else float(config.alpha)
    for _ in range(60):
        try:
            per_rep = _run_reps(problem, mixing, graph, sched, config, alpha, f_opt,
                                watch_growth=auto)
            break
        except DivergenceError:
            if not auto:
                raise
            alpha *= 0.5
    else:
        raise RuntimeError("no stable step size found by halving the theorem-order value")

    records = average_records(per_rep)
    if config.out:
        write_metrics_csv(config.out, records)
    summary = {
        "variant": config.variant,
        "consensus": config.consensus,
        "alpha": alpha,
        "seed": config.seed,
        "repetitions": config.repetitions,
        "f_opt": f_opt,
        "beta": mixing.beta,
        "n_edges": len(graph.edges),
        "blocks_used": sched.n_blocks,
        "final_gap": records[-1].gap_mean,
        "plateau_gap": plateau_gap(records),
        "final_accuracy": records[-1].test_accuracy,
        "b_empirical": records[-1].param_norm_max,
    }
    return ExperimentResult(records=records, summary=summary)


def _run_reps(problem, mixing, graph, sched, config, alpha, f_opt, watch_growth):
    reps = config.repetitions
    if config.jobs > 1 and reps > 1:
        out = [None] * reps
        with ProcessPoolExecutor(max_workers=min(config.jobs, reps)) as ex:
            futures = {
                ex.submit(_run_single, problem, mixing, graph, sched, config, alpha,
                          rep, f_opt, watch_growth): rep
                for rep in range(reps)
            }
            for fut, rep in futures.items():
                out[rep] = fut.result()
        return out
    return [
        _run_single(problem, mixing, graph, sched, config, alpha, rep, f_opt, watch_growth)
        for rep in range(reps)
    ]


def _run_single(problem, mixing, graph, sched, config, alpha, rep, f_opt, watch_growth):
    alg = AlgorithmConfig(variant=config.variant, step_size=alpha,
                          max_iterations=max(config.iters, 1),
                          consensus_mode=config.consensus)
    states = initialize_states(problem, np.zeros(problem.dim), config.variant)
    sample_rngs = [substream(config.seed, REALM_SAMPLE, rep, i)
                   for i in range(problem.n_devices)]
    aircomp = config.consensus == "aircomp"
    params = ChannelParams(config.sigma2, config.power, config.gamma, problem.dim) \
        if aircomp else None
    plan = ConsensusPlan(graph, mixing) if aircomp else None

    records = []
    running_b = 0.0
    rec, running_b = _measure(0, states, problem, f_opt, running_b,
                              IterationStats(0.0, float("nan")), sched.n_blocks)
    records.append(rec)
    prev_gap = rec.gap_mean
    growth = 0
    for t in range(1, config.iters + 1):
        realization = ChannelBlockRealization.draw(graph, params, config.seed, rep, t) \
            if aircomp else None
        stats = run_iteration(states, mixing, sched, realization, alg, problem,
                              sample_rngs, plan)
        rec, running_b = _measure(t, states, problem, f_opt, running_b, stats,
                                  sched.n_blocks)
        records.append(rec)
        if not np.isfinite(rec.gap_mean) or rec.gap_mean > GAP_ABORT:
            raise DivergenceError(
                f"run diverged at iteration {t} (gap {rec.gap_mean:.3e}); "
                f"try a smaller step size, e.g. --alpha {alpha / 2:g}",
                records,
            )
        if watch_growth:
            growth = growth + 1 if rec.gap_mean > prev_gap else 0
            if growth >= GROWTH_LIMIT:
                raise DivergenceError(
                    f"gap grew for {GROWTH_LIMIT} consecutive iterations at step size "
                    f"{alpha:g}", records)
        prev_gap = rec.gap_mean
    return records


def _measure(t, states, problem, f_opt, running_b, stats, blocks_used):
    thetas = np.stack([st.theta for st in states])
    gaps = problem.global_loss_stack(thetas) - f_opt
    mean_model = thetas.mean(axis=0)
    consensus_err = float(np.mean(np.sum((thetas - mean_model) ** 2, axis=1)))
    running_b = max(running_b, float(np.max(np.linalg.norm(thetas, axis=1))))
    rec = MetricsRecord(
        iteration=t,
        gap_mean=float(gaps.mean()),
        gap_per_device=np.asarray(gaps, dtype=float),
        consensus_error=consensus_err,
        test_accuracy=problem.test_accuracy(mean_model),
        param_norm_max=running_b,
        block_noise_energy=stats.noise_energy,
        scaling_factor=stats.scaling_factor,
        blocks_used=blocks_used,
    )
    return rec, running_b


def average_records(per_rep):
    """Pointwise mean over repetitions, in repetition order."""
    length = len(per_rep[0])
    if any(len(r) != length for r in per_rep):
        raise ValueError("repetitions produced different trace lengths")
    out = []
    for t in range(length):
        rows = [r[t] for r in per_rep]
        if any(r.iteration != rows[0].iteration or r.blocks_used != rows[0].blocks_used
               for r in rows):
            raise ValueError("repetition records out of alignment")
        gaps = np.mean(np.stack([r.gap_per_device for r in rows]), axis=0)
        out.append(MetricsRecord(
            iteration=rows[0].iteration,
            gap_mean=float(np.mean([r.gap_mean for r in rows])),
            gap_per_device=gaps,
            consensus_error=float(np.mean([r.consensus_error for r in rows])),
            test_accuracy=float(np.mean([r.test_accuracy for r in rows])),
            param_norm_max=float(np.mean([r.param_norm_max for r in rows])),
            block_noise_energy=float(np.mean([r.block_noise_energy for r in rows])),
            scaling_factor=float(np.mean([r.scaling_factor for r in rows])),
            blocks_used=rows[0].blocks_used,
        ))
    return out


def plateau_gap(records, tail_fraction=0.1, min_points=10):
    """Mean gap over the trailing window; the run's noise/bias floor."""
    k = max(min_points, int(len(records) * tail_fraction))
    tail = records[-min(k, len(records)):]
    return float(np.mean([r.gap_mean for r in tail]))


def csv_header(n_devices):
    cols = ["iteration", "gap_mean"]
    cols += [f"gap_dev_{i}" for i in range(n_devices)]
    cols += ["consensus_error", "test_accuracy", "param_norm_max",
             "block_noise_energy", "scaling_factor", "blocks_used"]
    return cols


def write_metrics_csv(path, records):
    n = len(records[0].gap_per_device)
    lines = [",".join(csv_header(n))]
    for r in records:
        row = [str(r.iteration), repr(float(r.gap_mean))]
        row += [repr(float(g)) for g in r.gap_per_device]
        row += [repr(float(r.consensus_error)), repr(float(r.test_accuracy)),
                repr(float(r.param_norm_max)), repr(float(r.block_noise_energy)),
                repr(float(r.scaling_factor)), str(r.blocks_used)]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        n = sum(1 for c in header if c.startswith("gap_dev_"))
        if header != csv_header(n):
            raise ValueError(f"unexpected CSV header in {path}")
        records = []
        for line in f:
            parts = line.strip().split(",")
            records.append(MetricsRecord(
                iteration=int(parts[0]),
                gap_mean=float(parts[1]),
                gap_per_device=np.array([float(v) for v in parts[2:2 + n]]),
                consensus_error=float(parts[2 + n]),
                test_accuracy=float(parts[3 + n]),
                param_norm_max=float(parts[4 + n]),
                block_noise_energy=float(parts[5 + n]),
                scaling_factor=float(parts[6 + n]),
                blocks_used=int(parts[7 + n]),
            ))
    return records


@dataclass(frozen=True)
class TheoremBound:
    """Inputs to the convergence-bound envelope.

    rho is supplied externally or fitted from a noiseless trace; c is the
    initial-condition constant; the remaining fields parameterize the
    channel-noise series term.
    """

    rho: float
    c: float
    n_devices: int
    dim: int
    sigma2: float
    b_bound: float
    gamma: float
    power: float


def evaluate_bound(bound, smoothness, t):
    """(cL/2) rho^t + (LN/(2(N-1))) (d sigma^2 B^2/(gamma^2 P)) sum_{tau=1}^t rho^{t-tau}.

    The series is the closed form (1 - rho^t)/(1 - rho); it vanishes at t = 0.
    """
    if not 0.0 < bound.rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {bound.rho}")
    head = 0.5 * bound.c * smoothness * bound.rho ** t
    if bound.sigma2 == 0.0:
        return float(head)
    if bound.n_devices < 2:
        raise ValueError("noise term needs at least two devices")
    if bound.gamma <= 0.0:
        raise ValueError("noise term needs gamma > 0")
    geo = (1.0 - bound.rho ** t) / (1.0 - bound.rho)
    coef = smoothness * bound.n_devices / (2.0 * (bound.n_devices - 1.0))
    noise = coef * bound.dim * bound.sigma2 * bound.b_bound ** 2 \
        / (bound.gamma ** 2 * bound.power) * geo
    return float(head + noise)


def initial_condition_constant(thetas0, theta_opt):
    """Per-device c = N/(N-1) ||theta_i - mean||^2 + N ||mean - theta_opt||^2."""
    thetas0 = np.asarray(thetas0, dtype=float)
    n = thetas0.shape[0]
    if n < 2:
        raise ValueError("constant is defined for at least two devices")
    mean = thetas0.mean(axis=0)
    dev = np.sum((thetas0 - mean) ** 2, axis=1)
    center = float(np.sum((mean - theta_opt) ** 2))
    return n / (n - 1.0) * dev + n * center


@dataclass(frozen=True)
class RhoFit:
    rho: float
    r_squared: float
    start: int
    stop: int


def fit_rho(gaps, start=0, floor_factor=10.0):
    """Least-squares log-gap slope over the pre-floor window.

    The window runs from `start` until the trace first dips within
    `floor_factor` of its smallest positive value.  Raises if the window is too
    short, the trace is flat, or the slope is not negative.
    """
    g = np.asarray(gaps, dtype=float)
    if g.ndim != 1:
        raise ValueError("expected a 1-d gap trace")
    pos = g > 0
    if not np.any(pos):
        raise ValueError("trace has no positive entries")
    floor = floor_factor * float(g[pos].min())
    stop = g.size
    for t in range(start, g.size):
        if not pos[t] or g[t] <= floor:
            stop = t
            break
    if stop - start < 3:
        raise ValueError("fitting window shorter than 3 points before the numerical floor")
    t = np.arange(start, stop, dtype=float)
    y = np.log(g[start:stop])
    tm, ym = t.mean(), y.mean()
    var = float(((t - tm) ** 2).sum())
    slope = float(((t - tm) * (y - ym)).sum()) / var
    ss_tot = float(((y - ym) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("flat trace: not in the linear regime")
    ss_res = float(((y - (ym + slope * (t - tm))) ** 2).sum())
    if slope >= 0.0:
        raise ValueError("trace is not decreasing over the fitting window")
    rho = min(max(float(np.exp(slope)), 1e-300), 1.0 - 1e-15)
    return RhoFit(rho=rho, r_squared=1.0 - ss_res / ss_tot, start=start, stop=stop)
