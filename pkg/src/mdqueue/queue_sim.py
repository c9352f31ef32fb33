"""Event-driven simulation of the prelimit multi-class single-server system.

Renewal arrivals, general service, processor sharing, and admissible
scheduling policies.  One replication is one isolated state machine driven
by policy-independent primitive streams, so paired-seed policy comparisons
reuse identical randomness.  Between events service accrues by exact linear
integration of the allocation; there is no time stepping.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .paths import GridPath, ModelParams, TimeGrid
from . import game as _game

__all__ = [
    "ScalingScheme",
    "scaling_sequence",
    "ClassDistribution",
    "PrimitiveDistributions",
    "PrimitiveStreams",
    "sample_primitives",
    "replication_rng",
    "PolicySpec",
    "cmu_policy",
    "tracking_policy",
    "static_rho_policy",
    "zero_policy",
    "SimulationError",
    "SimTrace",
    "run",
    "ScaledTrace",
    "scale_trace",
    "workload_identity_residual",
    "EVENT_DEPARTURE",
    "EVENT_ARRIVAL",
    "EVENT_POLICY_TICK",
]

EVENT_DEPARTURE = 0
EVENT_ARRIVAL = 1
EVENT_POLICY_TICK = 2


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingScheme:
    """One point of the moderate-deviation scaling: index n and rate b_n."""

    n: int
    b_n: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("scaling index n must be >= 1")
        if not (self.b_n > 0 and np.isfinite(self.b_n)):
            raise ValueError("b_n must be positive and finite")

    @property
    def scale_factor(self) -> float:
        """b_n * sqrt(n) -- the state scaling denominator."""
        return self.b_n * math.sqrt(self.n)

    def lam_n(self, params: ModelParams) -> np.ndarray:
        rates = self.n * params.lam + self.scale_factor * params.lam_tilde
        if np.any(rates <= 0):
            raise ValueError("prelimit arrival rate is nonpositive at this n")
        return rates

    def mu_n(self, params: ModelParams) -> np.ndarray:
        rates = self.n * params.mu + self.scale_factor * params.mu_tilde
        if np.any(rates <= 0):
            raise ValueError("prelimit service rate is nonpositive at this n")
        return rates

    def theta_n(self, params: ModelParams) -> np.ndarray:
        return self.n / self.mu_n(params)

    def y_n(self, params: ModelParams) -> np.ndarray:
        sf = self.scale_factor
        lam_t = (self.lam_n(params) - self.n * params.lam) / sf
        mu_t = (self.mu_n(params) - self.n * params.mu) / sf
        return lam_t - params.rho * mu_t

    def x0_counts(self, params: ModelParams) -> np.ndarray:
        return np.rint(params.x0 * self.scale_factor).astype(int)


def scaling_sequence(n_list, beta: float | None = None,
                     b_n_list=None) -> list[ScalingScheme]:
    """Schemes along an n-sequence, checking the MD conditions on the
    sequence: b_n increasing and b_n / sqrt(n) decreasing."""
    n_arr = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_arr, n_arr[1:])):
        raise ValueError("n_list must be strictly increasing")
    if (beta is None) == (b_n_list is None):
        raise ValueError("give exactly one of beta or b_n_list")
    if beta is not None:
        if not (0.0 < beta < 0.5):
            raise ValueError("beta must lie in (0, 1/2)")
        b_arr = [float(n) ** beta for n in n_arr]
    else:
        b_arr = [float(b) for b in b_n_list]
        if len(b_arr) != len(n_arr):
            raise ValueError("b_n_list must match n_list in length")
    for (n0, b0), (n1, b1) in zip(zip(n_arr, b_arr), zip(n_arr[1:], b_arr[1:])):
        if b1 <= b0:
            raise ValueError("b_n must increase along the sequence")
        if b1 / math.sqrt(n1) >= b0 / math.sqrt(n0):
            raise ValueError("b_n / sqrt(n) must decrease along the sequence")
    return [ScalingScheme(n, b) for n, b in zip(n_arr, b_arr)]


# ---------------------------------------------------------------------------
# primitive distributions and streams

_FAMILIES = ("exponential", "gamma", "lognormal", "uniform", "deterministic")


@dataclass(frozen=True)
class ClassDistribution:
    """Unit-mean positive distribution with configured variance."""

    family: str
    sigma2: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; have {_FAMILIES}")
        if self.family == "deterministic":
            return
        if self.sigma2 <= 0:
            raise ValueError("variance must be positive")
        if self.family == "exponential" and abs(self.sigma2 - 1.0) > 1e-6:
            raise ValueError("unit-mean exponential has variance 1; use gamma instead")
        if self.family == "uniform" and self.sigma2 > 1.0 / 3.0 - 1e-12:
            raise ValueError("shifted uniform requires sigma2 < 1/3 for positive support")

    @property
    def test_only(self) -> bool:
        return self.family == "deterministic"

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return 0.0 if self.family == "deterministic" else self.sigma2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "deterministic":
            return np.ones(size)
        if self.family == "exponential":
            return rng.exponential(1.0, size)
        if self.family == "gamma":
            shape = 1.0 / self.sigma2
            return rng.gamma(shape, self.sigma2, size)
        if self.family == "lognormal":
            s2 = math.log1p(self.sigma2)
            return rng.lognormal(-s2 / 2.0, math.sqrt(s2), size)
        half = math.sqrt(3.0 * self.sigma2)
        return rng.uniform(1.0 - half, 1.0 + half, size)


@dataclass(frozen=True)
class PrimitiveDistributions:
    ia: tuple
    st: tuple

    @classmethod
    def from_model(cls, params: ModelParams, ia_families, st_families) -> "PrimitiveDistributions":
        """Families may be a single name or one per class; configured
        variances must match the model (deterministic exempt, test only)."""
        I = params.I
        ia_families = [ia_families] * I if isinstance(ia_families, str) else list(ia_families)
        st_families = [st_families] * I if isinstance(st_families, str) else list(st_families)
        if len(ia_families) != I or len(st_families) != I:
            raise ValueError("need one family per class")
        ia, st = [], []
        for i in range(I):
            d_ia = ClassDistribution(ia_families[i], float(params.sigma2_ia[i]))
            d_st = ClassDistribution(st_families[i], float(params.sigma2_st[i]))
            for d, target in ((d_ia, params.sigma2_ia[i]), (d_st, params.sigma2_st[i])):
                if not d.test_only and abs(d.variance - target) > 1e-6:
                    raise ValueError(
                        f"family {d.family} cannot match variance {target}"
                    )
            ia.append(d_ia)
            st.append(d_st)
        return cls(ia=tuple(ia), st=tuple(st))


@dataclass(frozen=True, eq=False)
class PrimitiveStreams:
    """Arrival epochs on [0, T] and service requirements, one array per class.

    Service requirements are drawn eagerly for every job that can possibly
    exist (initial jobs plus arrivals), so the stream content is independent
    of the policy consuming it; that makes common-random-number comparisons
    exact and checksummable.
    """

    arrivals: tuple
    services: tuple
    checksum: int

    @property
    def I(self) -> int:
        return len(self.arrivals)


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Deterministic per-replication stream: master seed and replication
    index mixed through SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, replication))))


def sample_primitives(dists: PrimitiveDistributions, scaling: ScalingScheme,
                      params: ModelParams, horizon: float,
                      rng: np.random.Generator,
                      x0_counts: np.ndarray | None = None) -> PrimitiveStreams:
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    lam_n = scaling.lam_n(params)
    mu_n = scaling.mu_n(params)
    if x0_counts is None:
        x0_counts = scaling.x0_counts(params)
    arrivals, services = [], []
    crc = 0
    for i in range(params.I):
        epochs = _renewal_epochs(dists.ia[i], lam_n[i], horizon, rng)
        n_jobs = int(x0_counts[i]) + epochs.size
        reqs = dists.st[i].sample(rng, n_jobs) / mu_n[i]
        arrivals.append(epochs)
        services.append(reqs)
        crc = zlib.crc32(epochs.tobytes(), crc)
        crc = zlib.crc32(reqs.tobytes(), crc)
    return PrimitiveStreams(arrivals=tuple(arrivals), services=tuple(services), checksum=crc)


def _renewal_epochs(dist: ClassDistribution, rate: float, horizon: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Partial sums of interarrival times / rate, truncated to [0, horizon]."""
    expect = rate * horizon
    chunk = int(expect + 8.0 * math.sqrt(max(expect, 1.0) * max(dist.variance, 1.0)) + 16)
    total = dist.sample(rng, chunk) / rate
    epochs = np.cumsum(total)
    while epochs[-1] <= horizon:
        more = np.cumsum(dist.sample(rng, chunk) / rate) + epochs[-1]
        epochs = np.concatenate([epochs, more])
    return epochs[epochs <= horizon]


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class PolicySpec:
    """Declarative scheduling rule interpreted by the engine.

    kind: "cmu_priority" (serve the first nonempty class in `permutation`
    exclusively), "tracking" (drive to the minimizing curve, then imitate the
    game response in differenced form), "static_rho", or "zero".
    """

    kind: str
    permutation: tuple | None = None
    review_period: float | None = None
    norm_threshold: float | None = None


def cmu_policy(permutation) -> PolicySpec:
    perm = tuple(int(k) for k in permutation)
    if sorted(perm) != list(range(len(perm))):
        raise ValueError(f"permutation must reorder 0..{len(perm) - 1}, got {perm}")
    return PolicySpec(kind="cmu_priority", permutation=perm)


def tracking_policy(review_period: float, norm_threshold: float, horizon: float) -> PolicySpec:
    if not (0.0 < review_period <= horizon / 4.0):
        raise ValueError(f"review period must lie in (0, T/4], got {review_period}")
    if norm_threshold <= 0:
        raise ValueError("norm threshold must be positive")
    return PolicySpec(kind="tracking", review_period=float(review_period),
                      norm_threshold=float(norm_threshold))


def static_rho_policy() -> PolicySpec:
    return PolicySpec(kind="static_rho")


def zero_policy() -> PolicySpec:
    return PolicySpec(kind="zero")


def _gate(a: np.ndarray, b: float) -> np.ndarray:
    """Entrywise a * 1{0<=a<=1} * 1{0<=b<=1} (allocation feasibility gate)."""
    if not (0.0 <= b <= 1.0):
        return np.zeros_like(a)
    return np.where((a >= 0.0) & (a <= 1.0), a, 0.0)


class _TrackingState:
    """Review-period machinery: sampled observation path and the current
    unmasked allocation."""

    def __init__(self, params: ModelParams, scaling: ScalingScheme, cost,
                 policy: PolicySpec, horizon: float, x_scaled: np.ndarray):
        self.params = params
        self.cost = cost
        self.v = policy.review_period
        self.m_threshold = policy.norm_threshold
        self.rho = params.rho
        self.gain = scaling.b_n / (params.mu * math.sqrt(scaling.n))
        self.x = x_scaled
        self.samples = [np.zeros(2 * params.I)]  # observation at times 0, v, 2v, ...
        n_ticks = int(math.floor(horizon / self.v + 1e-9))
        self.tick_times = [k * self.v for k in range(1, n_ticks + 1)]
        ell = np.asarray(cost.f(float(params.theta @ x_scaled)), dtype=float) - x_scaled
        a = self.rho - self.gain * ell / self.v
        self.current = _gate(a, float(np.sum(np.maximum(a, 0.0))))

    def observe(self, sample: np.ndarray) -> None:
        self.samples.append(sample)

    def allocation_for_window(self, j: int) -> np.ndarray:
        """Unmasked allocation on [j v, (j+1) v)."""
        if j == 1:
            return self.rho.copy()
        # windows j >= 2 read the observation path only at review points
        obs = np.asarray(self.samples[:j], dtype=float)  # times 0..(j-1)v
        I = self.params.I
        sup_a = float(np.linalg.norm(obs[:, :I], axis=1).max())
        sup_d = float(np.linalg.norm(obs[:, I:], axis=1).max())
        if sup_a + sup_d >= self.m_threshold + 2.0:
            return self.rho.copy()
        times = np.arange(j) * self.v
        zeta = _game.strategy_response_values(self.params, self.cost, self.x, times, obs)
        f_n = self.gain * (zeta[-1] - zeta[-2]) / self.v
        a = self.rho - f_n
        return _gate(a, float(np.sum(np.maximum(a, 0.0))))


# ---------------------------------------------------------------------------
# the event engine


@dataclass(frozen=True, eq=False)
class SimTrace:
    """One realized trajectory: event log plus exact allocation segments."""

    params: ModelParams
    scaling: ScalingScheme
    policy: PolicySpec
    horizon: float
    x0_counts: np.ndarray
    event_times: np.ndarray
    event_types: np.ndarray
    event_classes: np.ndarray
    arrival_times: tuple
    departure_times: tuple
    seg_times: np.ndarray
    seg_alloc: np.ndarray
    seg_service: np.ndarray
    final_service: np.ndarray
    streams_checksum: int

    def arrivals_at(self, t) -> np.ndarray:
        """A^n_i(t) for an array of times; shape (len(t), I)."""
        t = np.atleast_1d(t)
        return np.stack(
            [np.searchsorted(self.arrival_times[i], t, side="right") for i in range(self.params.I)],
            axis=1,
        )

    def departures_at(self, t) -> np.ndarray:
        t = np.atleast_1d(t)
        return np.stack(
            [np.searchsorted(self.departure_times[i], t, side="right") for i in range(self.params.I)],
            axis=1,
        )

    def queue_at(self, t) -> np.ndarray:
        return self.x0_counts[None, :] + self.arrivals_at(t) - self.departures_at(t)

    def allocated_time_at(self, t) -> np.ndarray:
        """T^n_i(t) by exact linear interpolation within allocation segments."""
        t = np.atleast_1d(t)
        k = np.clip(np.searchsorted(self.seg_times, t, side="right") - 1, 0, len(self.seg_times) - 1)
        return self.seg_service[k] + self.seg_alloc[k] * (t - self.seg_times[k])[:, None]


def run(params: ModelParams, scaling: ScalingScheme, streams: PrimitiveStreams,
        policy: PolicySpec, horizon: float, x0_counts: np.ndarray | None = None,
        cost=None) -> SimTrace:
    """Run one replication to the horizon under the given policy."""
    I = params.I
    if x0_counts is None:
        x0_counts = scaling.x0_counts(params)
    x0_counts = np.asarray(x0_counts, dtype=int)
    if np.any(x0_counts < 0):
        raise ValueError("initial counts must be nonnegative")
    if policy.kind == "tracking" and cost is None:
        raise ValueError("tracking policy needs the cost's minimizing curve")

    lam_n = scaling.lam_n(params)
    mu_n = scaling.mu_n(params)
    sf = scaling.scale_factor
    svc_cum = [np.cumsum(s) for s in streams.services]
    arr = streams.arrivals

    X = x0_counts.copy()
    t = 0.0
    T_alloc = np.zeros(I)
    arr_ptr = np.zeros(I, dtype=int)
    dep_count = np.zeros(I, dtype=int)

    tracking = None
    tick_times: list = []
    tick_idx = 0
    if policy.kind == "tracking":
        tracking = _TrackingState(params, scaling, cost, policy, horizon, x0_counts / sf)
        tick_times = tracking.tick_times

    perm = policy.permutation if policy.kind == "cmu_priority" else None
    rho = params.rho

    def unmasked_allocation() -> np.ndarray:
        if policy.kind == "zero":
            return np.zeros(I)
        if policy.kind == "static_rho":
            return rho.copy()
        if policy.kind == "tracking":
            return tracking.current
        # cmu: all effort to the first nonempty class in priority order
        c = np.zeros(I)
        for i in perm:
            if X[i] > 0:
                c[i] = 1.0
                break
        return c

    C = unmasked_allocation()
    B = C * (X > 0)

    ev_t, ev_type, ev_cls = [], [], []
    dep_times: list[list] = [[] for _ in range(I)]
    seg_t, seg_b, seg_svc = [0.0], [B.copy()], [T_alloc.copy()]

    inf = math.inf
    dep_cand = np.empty(I)
    arr_cand = np.empty(I)
    while True:
        t_next = inf
        for i in range(I):
            if X[i] > 0 and B[i] > 0.0:
                if dep_count[i] >= svc_cum[i].size:
                    raise SimulationError(f"service stream exhausted for class {i}")
                dep_cand[i] = t + (svc_cum[i][dep_count[i]] - T_alloc[i]) / B[i]
            else:
                dep_cand[i] = inf
            arr_cand[i] = arr[i][arr_ptr[i]] if arr_ptr[i] < arr[i].size else inf
            t_next = min(t_next, dep_cand[i], arr_cand[i])
        tick_cand = tick_times[tick_idx] if tick_idx < len(tick_times) else inf
        t_next = min(t_next, tick_cand)
        if t_next < t - 1e-12:
            raise SimulationError(f"negative time-to-event at t={t}: next={t_next}")
        if t_next > horizon or t_next == inf:
            T_alloc += B * (horizon - t)
            t = horizon
            break

        T_alloc += B * (t_next - t)
        t = t_next

        # departures first, then arrivals, then policy ticks; class order within type
        for i in range(I):
            if dep_cand[i] == t_next:
                T_alloc[i] = svc_cum[i][dep_count[i]]
                X[i] -= 1
                dep_count[i] += 1
                dep_times[i].append(t)
                ev_t.append(t); ev_type.append(EVENT_DEPARTURE); ev_cls.append(i)
        for i in range(I):
            if arr_cand[i] == t_next:
                X[i] += 1
                arr_ptr[i] += 1
                ev_t.append(t); ev_type.append(EVENT_ARRIVAL); ev_cls.append(i)
        if tick_cand == t_next:
            a_tilde = (arr_ptr - lam_n * t) / sf
            d_tilde = (dep_count - mu_n * T_alloc) / sf
            tracking.observe(np.concatenate([a_tilde, d_tilde]))
            tick_idx += 1
            tracking.current = tracking.allocation_for_window(tick_idx)
            ev_t.append(t); ev_type.append(EVENT_POLICY_TICK); ev_cls.append(-1)

        C = unmasked_allocation()
        newB = C * (X > 0)
        if not np.array_equal(newB, B):
            B = newB
            seg_t.append(t)
            seg_b.append(B.copy())
            seg_svc.append(T_alloc.copy())

    return SimTrace(
        params=params,
        scaling=scaling,
        policy=policy,
        horizon=horizon,
        x0_counts=x0_counts,
        event_times=np.asarray(ev_t),
        event_types=np.asarray(ev_type, dtype=int),
        event_classes=np.asarray(ev_cls, dtype=int),
        arrival_times=tuple(a[a <= horizon] for a in arr),
        departure_times=tuple(np.asarray(d) for d in dep_times),
        seg_times=np.asarray(seg_t),
        seg_alloc=np.asarray(seg_b),
        seg_service=np.asarray(seg_svc),
        final_service=T_alloc.copy(),
        streams_checksum=streams.checksum,
    )


# ---------------------------------------------------------------------------
# scaled paths


@dataclass(frozen=True, eq=False)
class ScaledTrace:
    """Centered and scaled trajectory sampled on an output grid."""

    grid: TimeGrid
    a_tilde: GridPath      # (A^n - lam^n t) / (b_n sqrt(n))
    st_tilde: GridPath     # (S^n o T^n - mu^n T^n) / (b_n sqrt(n))
    x_tilde: GridPath      # X^n / (b_n sqrt(n))
    z: GridPath            # effort-deficit term
    identity_residual: float


def scale_trace(trace: SimTrace, grid: TimeGrid) -> ScaledTrace:
    params = trace.params
    scaling = trace.scaling
    sf = scaling.scale_factor
    lam_n = scaling.lam_n(params)
    mu_n = scaling.mu_n(params)
    y_n = scaling.y_n(params)
    t = grid.t

    counts_a = trace.arrivals_at(t)
    counts_d = trace.departures_at(t)
    T_at = trace.allocated_time_at(t)
    x_tilde = (trace.x0_counts[None, :] + counts_a - counts_d) / sf
    a_tilde = (counts_a - lam_n[None, :] * t[:, None]) / sf
    st_tilde = (counts_d - mu_n[None, :] * T_at) / sf
    z = (mu_n[None, :] / scaling.n) * (math.sqrt(scaling.n) / scaling.b_n) \
        * (params.rho[None, :] * t[:, None] - T_at)

    recon = (trace.x0_counts[None, :] / sf + y_n[None, :] * t[:, None]
             + a_tilde - st_tilde + z)
    residual = float(np.abs(x_tilde - recon).max())

    return ScaledTrace(
        grid=grid,
        a_tilde=GridPath(grid, a_tilde, kind="step"),
        st_tilde=GridPath(grid, st_tilde, kind="step"),
        x_tilde=GridPath(grid, x_tilde, kind="step"),
        z=GridPath(grid, z, kind="linear"),
        identity_residual=residual,
    )


def workload_identity_residual(trace: SimTrace, grid: TimeGrid) -> float:
    """Residual of theta^n . X~^n = Gamma[theta^n . Y^n] at grid points, for
    work-conserving priority policies.

    The running infimum is taken at event resolution (using left limits at
    jumps), not on the coarse output grid, because the net-input path moves
    at rate ~ sqrt(n)/b_n between grid points.
    """
    params = trace.params
    scaling = trace.scaling
    sf = scaling.scale_factor
    lam_n = scaling.lam_n(params)
    mu_n = scaling.mu_n(params)
    y_n = scaling.y_n(params)
    theta_n = scaling.theta_n(params)

    times = np.unique(np.concatenate([trace.event_times, grid.t, [0.0, trace.horizon]]))
    times = times[(times >= 0.0) & (times <= trace.horizon)]

    def net_input(counts_a, counts_d, T_at, tt):
        a_tilde = (counts_a - lam_n[None, :] * tt[:, None]) / sf
        st_tilde = (counts_d - mu_n[None, :] * T_at) / sf
        y = trace.x0_counts[None, :] / sf + y_n[None, :] * tt[:, None] + a_tilde - st_tilde
        return y @ theta_n

    T_at = trace.allocated_time_at(times)
    right = net_input(trace.arrivals_at(times), trace.departures_at(times), T_at, times)
    left_a = np.stack(
        [np.searchsorted(trace.arrival_times[i], times, side="left") for i in range(params.I)],
        axis=1,
    )
    left_d = np.stack(
        [np.searchsorted(trace.departure_times[i], times, side="left") for i in range(params.I)],
        axis=1,
    )
    left = net_input(left_a, left_d, T_at, times)

    # running infimum over the piecewise-linear path with jumps at event times
    interleaved = np.empty(2 * times.size)
    interleaved[0::2] = left
    interleaved[1::2] = right
    run_min = np.minimum.accumulate(np.minimum(interleaved, 0.0))[1::2]
    workload = right - run_min

    x_tilde = (trace.x0_counts[None, :] + trace.arrivals_at(times)
               - trace.departures_at(times)) / sf
    lhs = x_tilde @ theta_n

    on_grid = np.isin(times, grid.t)
    return float(np.abs(lhs[on_grid] - workload[on_grid]).max())
