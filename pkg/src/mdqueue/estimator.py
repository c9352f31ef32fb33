"""Risk-sensitive cost estimation and the convergence harness.

The estimate of interest is (1/b_n^2) log E exp(b_n^2 H) where H is the
pathwise cost of one replication.  Weights exp(b_n^2 H) are heavy tailed, so
every estimate carries an effective sample size; ESS below 10 marks it
unusable rather than pretending the jackknife band is trustworthy.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .game import CostSpec
from .paths import ModelParams, TimeGrid
from .queue_sim import (
    PolicySpec,
    PrimitiveDistributions,
    ScalingScheme,
    replication_rng,
    run,
    sample_primitives,
    scale_trace,
)

__all__ = [
    "RiskSensitiveEstimate",
    "horizon_cost",
    "estimate_J",
    "TailDecayResult",
    "estimate_tail_decay",
    "ConvergenceRow",
    "ConvergenceReport",
    "convergence_suite",
    "log_mean_exp",
]

LOW_ESS = 10.0


def log_mean_exp(values: np.ndarray) -> float:
    """Numerically stable log of the mean of exp(values)."""
    values = np.asarray(values, dtype=float)
    m = float(values.max())
    return m + math.log(float(np.mean(np.exp(values - m))))


def horizon_cost(scaled, cost: CostSpec) -> float:
    """Running cost integrated over the output grid plus terminal cost."""
    x = scaled.x_tilde.values
    dt = scaled.grid.dt
    return float(np.trapezoid(cost.h(x), dx=dt) + cost.g(x[-1]))


@dataclass(frozen=True, eq=False)
class RiskSensitiveEstimate:
    """Log-mean-exp estimate with jackknife spread and effective sample size."""

    J: float
    replications: int
    log_weights: np.ndarray  # b_n^2 * H per replication
    stderr: float
    ess: float
    low_reliability: bool
    stream_checksums: np.ndarray
    b_n: float


def _replication_batch(args) -> tuple[np.ndarray, np.ndarray]:
    (params, cost, scaling, dists, policy, horizon, grid_steps, seed, lo, hi) = args
    grid = TimeGrid(horizon, grid_steps)
    costs = np.empty(hi - lo)
    sums = np.empty(hi - lo, dtype=np.uint32)
    for r in range(lo, hi):
        rng = replication_rng(seed, r)
        streams = sample_primitives(dists, scaling, params, horizon, rng)
        trace = run(params, scaling, streams, policy, horizon, cost=cost)
        scaled = scale_trace(trace, grid)
        costs[r - lo] = horizon_cost(scaled, cost)
        sums[r - lo] = streams.checksum
    return costs, sums


def _simulate_costs(params, cost, scaling, dists, policy, horizon, grid_steps,
                    seed, replications, n_jobs):
    """Per-replication pathwise costs, reduced in replication order regardless
    of the worker split."""
    if n_jobs <= 1 or replications < 2 * n_jobs:
        h, s = _replication_batch(
            (params, cost, scaling, dists, policy, horizon, grid_steps, seed, 0, replications))
        return h, s
    bounds = np.linspace(0, replications, n_jobs + 1, dtype=int)
    jobs = [
        (params, cost, scaling, dists, policy, horizon, grid_steps, seed, int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
    ]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(_replication_batch, jobs))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def risk_sensitive_summary(h_vals: np.ndarray, b_n: float) -> tuple[float, float, float]:
    """(J, jackknife stderr, ESS) from per-replication pathwise costs."""
    h_vals = np.asarray(h_vals, dtype=float)
    r = h_vals.size
    b2 = b_n**2
    log_w = b2 * h_vals
    shift = float(log_w.max())
    w = np.exp(log_w - shift)
    total = float(w.sum())
    J = (shift + math.log(total / r)) / b2

    # delete-one jackknife on the log-mean-exp scale
    rest = np.maximum(total - w, 1e-300)
    loo = (shift + np.log(rest / (r - 1))) / b2
    stderr = float(np.sqrt((r - 1) / r * np.sum((loo - loo.mean()) ** 2)))

    ess = float(total**2 / np.sum(w**2))
    return float(J), stderr, ess


def estimate_J(params: ModelParams, cost: CostSpec, scaling: ScalingScheme,
               dists: PrimitiveDistributions, policy: PolicySpec, horizon: float,
               replications: int, seed: int, grid_steps: int = 512,
               n_jobs: int = 1) -> RiskSensitiveEstimate:
    if replications < 2:
        raise ValueError("need at least 2 replications")
    h_vals, checksums = _simulate_costs(
        params, cost, scaling, dists, policy, horizon, grid_steps, seed, replications, n_jobs)
    J, stderr, ess = risk_sensitive_summary(h_vals, scaling.b_n)
    return RiskSensitiveEstimate(
        J=J,
        replications=replications,
        log_weights=scaling.b_n**2 * h_vals,
        stderr=stderr,
        ess=ess,
        low_reliability=ess < LOW_ESS,
        stream_checksums=checksums,
        b_n=scaling.b_n,
    )


# ---------------------------------------------------------------------------
# moderate-deviation tail decay of the scaled arrival process


@dataclass(frozen=True)
class TailDecayResult:
    empirical_rate: float
    predicted_rate: float
    probability: float
    hits: int
    replications: int
    one_sided: bool


def estimate_tail_decay(params: ModelParams, dists: PrimitiveDistributions,
                        level: float, scaling: ScalingScheme, replications: int,
                        seed: int, horizon: float = 1.0,
                        class_index: int = 0) -> TailDecayResult:
    """Empirical vs predicted decay rate of P(sup_t A~(t) > level).

    The predicted rate is the action of the cheapest path to the level: a
    straight line reaching `level` at the horizon, costing
    level^2 / (2 T lam sigma2_ia).
    """
    lam = float(params.lam[class_index])
    s2 = float(params.sigma2_ia[class_index])
    predicted = level**2 / (2.0 * horizon * lam * s2)
    b2 = scaling.b_n**2
    p_pred = math.exp(-b2 * predicted)
    if not (1e-4 <= p_pred <= 1e-2):
        raise ValueError(
            f"predicted probability {p_pred:.2e} outside [1e-4, 1e-2]; "
            "recalibrate n, b_n, or the level"
        )
    lam_n = float(scaling.lam_n(params)[class_index])
    dist = dists.ia[class_index]
    sf = scaling.scale_factor
    threshold = level * sf

    rng = replication_rng(seed, class_index)
    expect = lam_n * horizon
    k_cols = int(expect + 10.0 * math.sqrt(max(expect, 1.0) * max(dist.variance, 1.0)) + 30)
    chunk = max(1, min(replications, (1 << 22) // k_cols))
    hits = 0
    done = 0
    ks = np.arange(1, k_cols + 1, dtype=float)
    while done < replications:
        m = min(chunk, replications - done)
        epochs = np.cumsum(dist.sample(rng, (m, k_cols)) / lam_n, axis=1)
        stat = np.where(epochs <= horizon, ks[None, :] - lam_n * epochs, -np.inf)
        sup = stat.max(axis=1)
        short = epochs[:, -1] <= horizon
        if np.any(short):
            # rare: the pre-drawn block did not cover the horizon
            for row in np.nonzero(short)[0]:
                e = epochs[row]
                k = float(k_cols)
                last = e[-1]
                s = sup[row]
                while last <= horizon:
                    step = dist.sample(rng, 1)[0] / lam_n
                    last += step
                    k += 1.0
                    if last <= horizon:
                        s = max(s, k - lam_n * last)
                sup[row] = s
        hits += int(np.sum(sup > threshold))
        done += m

    one_sided = hits == 0
    prob = hits / replications if hits > 0 else 1.0 / replications
    empirical = -math.log(prob) / b2
    return TailDecayResult(
        empirical_rate=float(empirical),
        predicted_rate=float(predicted),
        probability=float(hits / replications),
        hits=hits,
        replications=replications,
        one_sided=one_sided,
    )


# ---------------------------------------------------------------------------
# convergence harness


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    b_n: float
    policy: str
    J: float
    stderr: float
    ess: float
    gap: float


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    value: float
    rows: tuple
    gap_nonincreasing: bool | None
    final_gap_ok: bool | None
    final_gap_frac: float
    paired_ordering: dict
    insufficient_points: bool

    @property
    def passed(self) -> bool:
        trend = (self.gap_nonincreasing is not False) and (self.final_gap_ok is not False)
        return trend and all(self.paired_ordering.values())


def convergence_suite(params: ModelParams, cost: CostSpec,
                      dists: PrimitiveDistributions, policies: list,
                      schemes: list, horizon: float, replications,
                      seed: int, value: float, grid_steps: int = 512,
                      final_gap_frac: float = 0.20, n_jobs: int = 1) -> ConvergenceReport:
    """Estimate J along the n-sequence for the first policy and compare the
    rest at the largest n under paired seeds.

    `policies` is a list of (name, PolicySpec); `replications` is an int or
    one int per scheme.  The game value must be solved beforehand.
    """
    if not policies:
        raise ValueError("need at least one policy")
    if isinstance(replications, int):
        replications = [replications] * len(schemes)
    if len(replications) != len(schemes):
        raise ValueError("replications must match the n-sequence")

    rows = []
    main_name, main_policy = policies[0]
    main_gaps = []
    main_last = None
    for scheme, reps in zip(schemes, replications):
        main_last = estimate_J(params, cost, scheme, dists, main_policy, horizon,
                               reps, seed, grid_steps, n_jobs)
        gap = abs(main_last.J - value)
        main_gaps.append(gap)
        rows.append(ConvergenceRow(scheme.n, scheme.b_n, main_name, main_last.J,
                                   main_last.stderr, main_last.ess, gap))

    paired = {}
    last_scheme, last_reps = schemes[-1], replications[-1]
    for name, spec in policies[1:]:
        est = estimate_J(params, cost, last_scheme, dists, spec, horizon,
                         last_reps, seed, grid_steps, n_jobs)
        if not np.array_equal(est.stream_checksums, main_last.stream_checksums):
            raise RuntimeError("paired comparison streams differ; seeding is broken")
        rows.append(ConvergenceRow(last_scheme.n, last_scheme.b_n, name, est.J,
                                   est.stderr, est.ess, abs(est.J - value)))
        paired[name] = bool(main_last.J <= est.J + 1e-12)

    insufficient = len(schemes) < 2
    if insufficient:
        gap_nonincreasing = None
        final_gap_ok = None
    else:
        gap_nonincreasing = bool(
            all(b <= a + 1e-12 for a, b in zip(main_gaps, main_gaps[1:])))
        final_gap_ok = bool(main_gaps[-1] <= final_gap_frac * (1.0 + abs(value)))

    return ConvergenceReport(
        value=value,
        rows=tuple(rows),
        gap_nonincreasing=gap_nonincreasing,
        final_gap_ok=final_gap_ok,
        final_gap_frac=final_gap_frac,
        paired_ordering=paired,
        insufficient_points=insufficient,
    )
