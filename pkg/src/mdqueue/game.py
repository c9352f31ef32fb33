"""Differential game on path space and its workload reduction.

The maximizing player picks a 2I-dimensional perturbation path psi; the
minimizing player's optimal response is explicit: project the free dynamics
onto the workload direction, reflect at zero, and lift back through the
minimizing curve f.  The game value is computed two independent ways: a
multi-start ascent over piecewise-linear psi (exact adjoint gradients), and
a backward-induction oracle on the reduced one-dimensional problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
import scipy.optimize

from .paths import (
    GridPath,
    ModelParams,
    TimeGrid,
    path_from_slopes,
    rate_function,
    sup_norm,
    oscillation,
)
from .skorokhod import reflect_values

__all__ = [
    "CostSpec",
    "GameInstance",
    "StrategyOutput",
    "linear_cost",
    "builtin_cost",
    "cost_from_config",
    "BUILTIN_COSTS",
    "respond",
    "payoff",
    "SolveOptions",
    "SolveResult",
    "solve_value",
    "ReducedInstance",
    "reduce_to_workload",
    "DpOptions",
    "OracleResult",
    "dp_oracle",
    "PropertyChecks",
    "property_bounds",
    "calibrate_modulus",
    "strategy_response_values",
    "growth_constants",
    "workload_variance",
]


# ---------------------------------------------------------------------------
# cost specification


def _linear_fn(x, coef):
    return np.asarray(x) @ coef


def _last_class_curve(w, mu_last, dims):
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape + (dims,))
    out[..., -1] = w * mu_last
    return out


def _scaled_direction_curve(w, direction):
    w = np.asarray(w, dtype=float)
    return w[..., None] * direction


def _norm_alpha_fn(x, alpha, scale):
    return scale * np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** alpha


def _constant_fn(w, value):
    return np.full(np.shape(np.asarray(w)), value, dtype=float)


def _zero_fn(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1])


def _zero_of_w(w):
    return np.zeros(np.shape(np.asarray(w)), dtype=float)


def _compose_curve(w, h, f):
    return h(f(w))


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Running cost h, terminal cost g, and the minimizing curve f.

    h, g map states (..., I) -> (...); f maps workloads (...) -> (..., I)
    with theta . f(w) = w and h(f(w)) = inf{h(x) : x >= 0, theta . x = w}
    (same for g).  hw_prime / gw_prime optionally give d/dw of h(f(w)) and
    g(f(w)); when absent they are differenced numerically.
    """

    h: callable
    g: callable
    f: callable
    c: np.ndarray | None = None
    d: np.ndarray | None = None
    growth_c1: float = 0.0
    growth_c2: float = 0.0
    hw_prime: callable | None = None
    gw_prime: callable | None = None

    def h_of_w(self, w):
        return self.h(self.f(w))

    def g_of_w(self, w):
        return self.g(self.f(w))

    def hw_derivative(self, w):
        if self.hw_prime is not None:
            return self.hw_prime(w)
        return _numeric_slope(self.h_of_w, w)

    def gw_derivative(self, w):
        if self.gw_prime is not None:
            return self.gw_prime(w)
        return _numeric_slope(self.g_of_w, w)

    def validate(self, params: ModelParams, seed: int = 0, n_w: int = 5,
                 n_pairs: int = 64, slice_points: int = 200,
                 curve_tol: float = 1e-10, min_tol: float = 1e-6) -> None:
        """Spot-check nonnegativity, monotonicity, and curve optimality.

        The curve check compares h(f(w)) against a grid search over the
        simplex slice {x >= 0 : theta . x = w}; a finite grid only upper
        bounds the true infimum, so the assertion is one sided (the grid
        search catches a curve that fails to minimize).
        """
        rng = np.random.default_rng(seed)
        theta = params.theta
        ws = rng.uniform(0.1, 5.0, size=n_w)
        for w in ws:
            fx = self.f(w)
            if np.any(fx < -1e-12):
                raise ValueError(f"minimizing curve leaves the orthant at w={w}")
            if abs(float(theta @ fx) - w) > curve_tol:
                raise ValueError(
                    f"curve violates theta.f(w)=w at w={w}: got {float(theta @ fx)}"
                )
        lo = rng.uniform(0.0, 3.0, size=(n_pairs, params.I))
        hi = lo + rng.uniform(0.0, 3.0, size=(n_pairs, params.I))
        for fn_name, fn in (("h", self.h), ("g", self.g)):
            v_lo, v_hi = np.asarray(fn(lo)), np.asarray(fn(hi))
            if np.any(v_lo < -1e-12) or np.any(v_hi < -1e-12):
                raise ValueError(f"{fn_name} takes negative values")
            if np.any(v_hi < v_lo - 1e-9):
                raise ValueError(f"{fn_name} is not monotone in the componentwise order")
        weights = _simplex_grid(params.I, slice_points)
        for w in ws:
            slice_states = w * weights / theta[None, :]
            for fn_name, fn in (("h", self.h), ("g", self.g)):
                best = float(np.min(fn(slice_states)))
                at_curve = float(fn(self.f(w)))
                if at_curve > best + min_tol:
                    raise ValueError(
                        f"curve is not minimizing for {fn_name} at w={w}: "
                        f"{at_curve} > grid minimum {best}"
                    )


def _numeric_slope(fn, w, rel_step: float = 1e-6):
    w = np.asarray(w, dtype=float)
    step = rel_step * (1.0 + np.abs(w))
    lo = np.maximum(w - step, 0.0)
    hi = w + step
    return (fn(hi) - fn(lo)) / (hi - lo)


def _simplex_grid(dims: int, n_points: int) -> np.ndarray:
    """Barycentric grid on the unit simplex with at least n_points nodes."""
    if dims == 1:
        return np.ones((1, 1))
    m = 1
    while math.comb(m + dims - 1, dims - 1) < n_points:
        m += 1
    nodes = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            nodes.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], m, dims)
    return np.asarray(nodes, dtype=float) / m


def linear_cost(params: ModelParams, c, d, validate: bool = True) -> CostSpec:
    """Linear costs h = c.x, g = d.x with the last class cheapest per workload.

    Requires min_i c_i mu_i and min_i d_i mu_i to be attained at the last
    class, so the minimizing curve is f(w) = (0, ..., 0, w mu_I).
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if c.shape != (params.I,) or d.shape != (params.I,):
        raise ValueError("linear cost coefficients must have one entry per class")
    if np.any(c < 0) or np.any(d < 0):
        raise ValueError("linear cost coefficients must be nonnegative")
    cmu, dmu = c * params.mu, d * params.mu
    if cmu[-1] > cmu.min() + 1e-12 or dmu[-1] > dmu.min() + 1e-12:
        raise ValueError(
            "the last class must attain min c_i mu_i and min d_i mu_i; "
            "relabel classes in that order"
        )
    mu_last = float(params.mu[-1])
    spec = CostSpec(
        h=partial(_linear_fn, coef=c),
        g=partial(_linear_fn, coef=d),
        f=partial(_last_class_curve, mu_last=mu_last, dims=params.I),
        c=c,
        d=d,
        growth_c1=float(np.linalg.norm(c) + np.linalg.norm(d)),
        growth_c2=0.0,
        hw_prime=partial(_constant_fn, value=float(c[-1] * mu_last)),
        gw_prime=partial(_constant_fn, value=float(d[-1] * mu_last)),
    )
    if validate:
        spec.validate(params)
    return spec


def _zero_cost(params: ModelParams, **_kw) -> CostSpec:
    direction = params.theta / float(params.theta @ params.theta)
    return CostSpec(
        h=_zero_fn,
        g=_zero_fn,
        f=partial(_scaled_direction_curve, direction=direction),
        hw_prime=_zero_of_w,
        gw_prime=_zero_of_w,
    )


def _norm_alpha_cost(params: ModelParams, alpha: float = 1.0, terminal_weight: float = 0.0,
                     **_kw) -> CostSpec:
    """Homogeneous running cost |x|^alpha with g = terminal_weight * h."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    theta = params.theta
    direction = theta / float(theta @ theta)
    return CostSpec(
        h=partial(_norm_alpha_fn, alpha=alpha, scale=1.0),
        g=partial(_norm_alpha_fn, alpha=alpha, scale=float(terminal_weight)),
        f=partial(_scaled_direction_curve, direction=direction),
        growth_c1=1.0 + float(terminal_weight),
        growth_c2=1.0 + float(terminal_weight),
    )


BUILTIN_COSTS = {
    "zero": _zero_cost,
    "norm_alpha": _norm_alpha_cost,
}


def builtin_cost(name: str, params: ModelParams, validate: bool = True, **kwargs) -> CostSpec:
    if name not in BUILTIN_COSTS:
        raise ValueError(f"unknown builtin cost {name!r}; have {sorted(BUILTIN_COSTS)}")
    spec = BUILTIN_COSTS[name](params, **kwargs)
    if validate:
        spec.validate(params)
    return spec


def cost_from_config(params: ModelParams, cfg: dict) -> CostSpec:
    """Cost object from {"type": "linear", "c": [...], "d": [...]} or
    {"type": "builtin", "name": ..., (extra keys passed through)}."""
    kind = cfg.get("type")
    if kind == "linear":
        if "c" not in cfg or "d" not in cfg:
            raise ValueError("linear cost requires fields c and d")
        return linear_cost(params, cfg["c"], cfg["d"])
    if kind == "builtin":
        if "name" not in cfg:
            raise ValueError("builtin cost requires a name")
        extra = {k: v for k, v in cfg.items() if k not in ("type", "name")}
        return builtin_cost(cfg["name"], params, **extra)
    raise ValueError(f"unknown cost type {kind!r}")


# ---------------------------------------------------------------------------
# instance, strategy response, payoff


@dataclass(frozen=True, eq=False)
class GameInstance:
    params: ModelParams
    cost: CostSpec
    grid: TimeGrid

    @property
    def x(self) -> np.ndarray:
        return self.params.x0


@dataclass(frozen=True, eq=False)
class StrategyOutput:
    """Free dynamics xi, reflected workload w, tracked state phi = f(w),
    and the minimizing response zeta = phi - xi."""

    xi: GridPath
    w: GridPath
    phi: GridPath
    zeta: GridPath


def _split_psi(psi_values: np.ndarray, dims: int):
    return psi_values[:, :dims], psi_values[:, dims:]


def _strategy_core(params: ModelParams, cost: CostSpec, x: np.ndarray,
                   times: np.ndarray, psi_values: np.ndarray):
    psi1, psi2 = _split_psi(np.asarray(psi_values, dtype=float), params.I)
    xi = x[None, :] + params.y[None, :] * np.asarray(times, dtype=float)[:, None] + psi1 - psi2
    s = xi @ params.theta
    w, _ = reflect_values(s)
    phi = cost.f(w)
    zeta = phi - xi
    return xi, w, phi, zeta


def strategy_response_values(params: ModelParams, cost: CostSpec, x: np.ndarray,
                             times: np.ndarray, psi_values: np.ndarray) -> np.ndarray:
    """Minimizing-response values zeta on arbitrary sample times (used by the
    tracking policy, which observes the perturbation only at review points)."""
    return _strategy_core(params, cost, x, times, psi_values)[3]


def _strategy_arrays(inst: GameInstance, psi_values: np.ndarray):
    return _strategy_core(inst.params, inst.cost, inst.x, inst.grid.t, psi_values)


def _check_psi(inst: GameInstance, psi: GridPath, require_zero_start: bool = True) -> None:
    if psi.grid != inst.grid:
        raise ValueError("perturbation path must live on the instance grid")
    if psi.d != 2 * inst.params.I:
        raise ValueError(f"perturbation path needs 2I = {2 * inst.params.I} components")
    if require_zero_start and np.any(psi.values[0] != 0.0):
        raise ValueError("perturbation path must start at zero")


def respond(inst: GameInstance, psi: GridPath) -> StrategyOutput:
    """Minimizing response to a perturbation path (direct formulation,
    no time change on the service block)."""
    _check_psi(inst, psi)
    xi, w, phi, zeta = _strategy_arrays(inst, psi.values)
    g = inst.grid
    return StrategyOutput(
        xi=GridPath(g, xi),
        w=GridPath(g, w),
        phi=GridPath(g, phi),
        zeta=GridPath(g, zeta),
    )


def payoff(inst: GameInstance, psi: GridPath) -> float:
    """Running plus terminal cost along the tracked state, minus the action
    of psi (direct form)."""
    _check_psi(inst, psi)
    _, w, phi, _ = _strategy_arrays(inst, psi.values)
    dt = inst.grid.dt
    running = float(np.trapezoid(inst.cost.h(phi), dx=dt))
    terminal = float(inst.cost.g(phi[-1]))
    return running + terminal - rate_function(psi, inst.params, form="direct")


# ---------------------------------------------------------------------------
# workload reduction and the backward-induction oracle


@dataclass(frozen=True, eq=False)
class ReducedInstance:
    """One-dimensional restatement: reflected workload with quadratic
    perturbation cost at effective variance sigma2_w."""

    w0: float
    drift: float
    sigma2_w: float
    horizon: float
    h_of_w: callable
    g_of_w: callable
    hw_prime: callable
    gw_prime: callable


def workload_variance(params: ModelParams) -> float:
    th = params.theta
    return float(np.sum(th**2 * (params.lam * params.sigma2_ia
                                 + params.rho * params.mu * params.sigma2_st)))


def reduce_to_workload(inst: GameInstance) -> ReducedInstance:
    cost = inst.cost
    if cost.f is None:
        raise ValueError("cost has no minimizing curve; cannot reduce to workload")
    params = inst.params
    return ReducedInstance(
        w0=float(params.theta @ inst.x),
        drift=float(params.theta @ params.y),
        sigma2_w=workload_variance(params),
        horizon=inst.grid.horizon,
        h_of_w=cost.h_of_w,
        g_of_w=cost.g_of_w,
        hw_prime=cost.hw_derivative,
        gw_prime=cost.gw_derivative,
    )


@dataclass(frozen=True)
class DpOptions:
    """Lattice controls for the backward-induction oracle."""

    state_levels: int = 400
    time_steps: int = 256
    velocity_levels: int = 81
    velocity_span: float = 6.0
    refine_velocity: bool = True
    w_max: float | None = None
    check_boundary: bool = True
    check_refinement: bool = True
    boundary_tol: float = 1e-3
    refine_tol: float = 1e-2


@dataclass(frozen=True)
class OracleResult:
    value: float
    converged: bool
    w_max: float
    boundary_change: float | None
    refinement_change: float | None


def _dp_sweep(red: ReducedInstance, w_max: float, m_w: int, n_t: int,
              n_vel: int, span: float, refine: bool) -> float:
    dt = red.horizon / n_t
    wgrid = np.linspace(0.0, w_max, m_w)
    sigma2 = max(red.sigma2_w, 1e-300)
    vmax = span * math.sqrt(sigma2) / math.sqrt(dt)
    vels = np.linspace(-vmax, vmax, n_vel)
    dv = vels[1] - vels[0] if n_vel > 1 else 0.0
    qcost = vels**2 * dt / (2.0 * sigma2)
    h_term = np.asarray(red.h_of_w(wgrid), dtype=float) * dt
    value = np.asarray(red.g_of_w(wgrid), dtype=float)
    rows = np.arange(m_w)
    for _ in range(n_t):
        w_next = np.clip(wgrid[:, None] + (red.drift + vels)[None, :] * dt, 0.0, w_max)
        pay = np.interp(w_next, wgrid, value) - qcost[None, :]
        k = np.argmax(pay, axis=1)
        best = pay[rows, k]
        if refine and n_vel >= 3:
            inner = (k > 0) & (k < n_vel - 1)
            if np.any(inner):
                km, kp = k - 1, k + 1
                pm = pay[rows, np.clip(km, 0, n_vel - 1)]
                pp = pay[rows, np.clip(kp, 0, n_vel - 1)]
                denom = pm - 2.0 * best + pp
                ok = inner & (denom < -1e-14)
                v_hat = np.where(ok, vels[k] - 0.5 * dv * (pp - pm) / np.where(ok, denom, -1.0), vels[k])
                v_hat = np.clip(v_hat, vels[np.clip(km, 0, n_vel - 1)], vels[np.clip(kp, 0, n_vel - 1)])
                w_hat = np.clip(wgrid + (red.drift + v_hat) * dt, 0.0, w_max)
                pay_hat = np.interp(w_hat, wgrid, value) - v_hat**2 * dt / (2.0 * sigma2)
                best = np.where(ok, np.maximum(best, pay_hat), best)
        value = h_term + best
    return float(np.interp(red.w0, wgrid, value))


def _default_w_max(red: ReducedInstance) -> float:
    sigma = math.sqrt(max(red.sigma2_w, 0.0))
    T = red.horizon
    probe_hi = red.w0 + abs(red.drift) * T + 3.0 * sigma * math.sqrt(T) + 1.0
    probes = np.linspace(0.0, probe_hi, 64)
    h_slope = float(np.max(np.abs(red.hw_prime(probes))))
    g_slope = float(np.max(np.abs(red.gw_prime(probes))))
    v_star = red.sigma2_w * (h_slope * T + g_slope)
    return red.w0 + max(red.drift, 0.0) * T + (v_star + 2.0 * sigma / math.sqrt(T)) * T + 1.0


def dp_oracle(red: ReducedInstance, opts: DpOptions = DpOptions()) -> OracleResult:
    """Value of the reduced problem by backward induction on a
    (time x workload) lattice, with boundary and refinement diagnostics."""
    w_max = opts.w_max if opts.w_max is not None else _default_w_max(red)
    args = (opts.state_levels, opts.time_steps, opts.velocity_levels,
            opts.velocity_span, opts.refine_velocity)
    base = _dp_sweep(red, w_max, *args)
    boundary_change = None
    if opts.check_boundary:
        for _ in range(3):
            wider = _dp_sweep(red, 2.0 * w_max, *args)
            boundary_change = abs(wider - base) / (1.0 + abs(base))
            if boundary_change < opts.boundary_tol:
                break
            w_max, base = 2.0 * w_max, wider
    refinement_change = None
    value = base
    if opts.check_refinement:
        fine = _dp_sweep(red, w_max, 2 * opts.state_levels, 2 * opts.time_steps,
                         opts.velocity_levels, opts.velocity_span, opts.refine_velocity)
        refinement_change = abs(fine - base) / (1.0 + abs(base))
        value = fine
    converged = ((boundary_change is None or boundary_change < opts.boundary_tol)
                 and (refinement_change is None or refinement_change < opts.refine_tol))
    return OracleResult(
        value=value,
        converged=converged,
        w_max=w_max,
        boundary_change=boundary_change,
        refinement_change=refinement_change,
    )


# ---------------------------------------------------------------------------
# path-space maximization


@dataclass(frozen=True)
class SolveOptions:
    grid_steps: int = 32
    starts: int = 20
    max_iter: int = 500
    slope_box: float | None = None
    seed: int = 0
    check_refinement: bool = True
    refine_tol: float = 5e-3
    refine_starts: int = 4


@dataclass(frozen=True, eq=False)
class SolveResult:
    value: float
    psi_star: GridPath
    converged: bool
    optimizer_success: bool
    refined_value: float | None
    refinement_change: float | None
    evaluations: int
    message: str


def _payoff_and_grad(slopes_flat: np.ndarray, inst: GameInstance, grid: TimeGrid):
    """Payoff and its exact (a.e.) gradient in the per-step slopes of psi.

    The reflection's running infimum is piecewise linear in the input, so the
    chain rule routes the workload sensitivity to the active argmin index.
    """
    params = inst.params
    I = params.I
    n = grid.steps
    dt = grid.dt
    slopes = slopes_flat.reshape(n, 2 * I)
    psi_vals = np.vstack([np.zeros((1, 2 * I)), np.cumsum(slopes, axis=0) * dt])
    psi1, psi2 = _split_psi(psi_vals, I)
    t = grid.t
    xi = inst.x[None, :] + params.y[None, :] * t[:, None] + psi1 - psi2
    s = xi @ params.theta

    neg = np.minimum(s, 0.0)
    run_min = np.minimum.accumulate(neg)
    w = s - run_min
    argmin_idx = np.empty(n + 1, dtype=int)
    cur = 0
    for j in range(n + 1):
        if j == 0 or neg[j] < run_min[j - 1]:
            cur = j
        argmin_idx[j] = cur
    active = run_min < 0.0

    cost = inst.cost
    h_w = np.asarray(cost.h_of_w(w), dtype=float)
    tau = np.full(n + 1, 1.0)
    tau[0] = tau[-1] = 0.5
    running = float(np.sum(tau * h_w) * dt)
    terminal = float(cost.g_of_w(w[-1]))

    a_w = 1.0 / (2.0 * params.lam * params.sigma2_ia)
    b_w = 1.0 / (2.0 * params.rho * params.mu * params.sigma2_st)
    s1, s2 = slopes[:, :I], slopes[:, I:]
    action = float((np.sum(s1**2 * a_w[None, :]) + np.sum(s2**2 * b_w[None, :])) * dt)
    value = running + terminal - action

    p = dt * tau * np.asarray(cost.hw_derivative(w), dtype=float)
    p[-1] += float(cost.gw_derivative(w[-1]))
    g_s = p.copy()
    np.subtract.at(g_s, argmin_idx[active], p[active])
    rev = np.cumsum(g_s[::-1])[::-1]
    r_m = rev[1:]  # sum_{k > m} g_s[k], m = 0..n-1

    grad = np.empty_like(slopes)
    grad[:, :I] = params.theta[None, :] * dt * r_m[:, None] - 2.0 * dt * a_w[None, :] * s1
    grad[:, I:] = -params.theta[None, :] * dt * r_m[:, None] - 2.0 * dt * b_w[None, :] * s2
    return value, grad.ravel()


def _solve_on_grid(inst: GameInstance, grid: TimeGrid, starts: list[np.ndarray],
                   box: float, max_iter: int):
    best_val, best_slopes, any_success, evals = -np.inf, None, False, 0

    def neg(slopes_flat):
        v, g = _payoff_and_grad(slopes_flat, inst, grid)
        return -v, -g

    n_var = grid.steps * 2 * inst.params.I
    bounds = [(-box, box)] * n_var
    for s0 in starts:
        res = scipy.optimize.minimize(
            neg, s0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-10},
        )
        evals += int(res.nfev)
        any_success = any_success or bool(res.success)
        if -res.fun > best_val:
            best_val, best_slopes = -float(res.fun), res.x.reshape(grid.steps, -1)
    return best_val, best_slopes, any_success, evals


def solve_value(inst: GameInstance, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Game value by multi-start ascent over piecewise-linear perturbations.

    The first start is the zero path (optimal when costs vanish); the rest
    are random slope fields inside the slope box.  Stability is checked by
    re-solving on a doubled grid warm-started from the coarse maximizer.
    """
    params = inst.params
    grid = TimeGrid(inst.grid.horizon, opts.grid_steps)
    sigma_w = math.sqrt(workload_variance(params))
    box = opts.slope_box if opts.slope_box is not None else 10.0 * sigma_w / math.sqrt(grid.horizon)
    rng = np.random.default_rng(opts.seed)
    n, d2 = grid.steps, 2 * params.I
    starts = [np.zeros((n, d2))]
    for _ in range(max(0, opts.starts - 1)):
        scale = box * rng.uniform(0.02, 0.3)
        starts.append(np.clip(rng.normal(0.0, scale, size=(n, d2)), -box, box))

    base_inst = GameInstance(params, inst.cost, grid)
    best_val, best_slopes, success, evals = _solve_on_grid(base_inst, grid, starts, box, opts.max_iter)

    refined_value = None
    refinement_change = None
    if opts.check_refinement:
        fine_grid = grid.refined(2)
        fine_inst = GameInstance(params, inst.cost, fine_grid)
        warm = np.repeat(best_slopes, 2, axis=0)
        fine_starts = [warm]
        for _ in range(max(0, opts.refine_starts - 1)):
            scale = box * rng.uniform(0.02, 0.3)
            fine_starts.append(np.clip(rng.normal(0.0, scale, size=(2 * n, d2)), -box, box))
        refined_value, _, fine_success, fine_evals = _solve_on_grid(
            fine_inst, fine_grid, fine_starts, box, opts.max_iter)
        evals += fine_evals
        success = success and fine_success
        refinement_change = abs(refined_value - best_val) / (1.0 + abs(best_val))

    converged = success and (refinement_change is None or refinement_change < opts.refine_tol)
    message = "ok" if converged else "non-converged: best-so-far returned"
    return SolveResult(
        value=best_val,
        psi_star=path_from_slopes(grid, best_slopes),
        converged=converged,
        optimizer_success=success,
        refined_value=refined_value,
        refinement_change=refinement_change,
        evaluations=evals,
        message=message,
    )


# ---------------------------------------------------------------------------
# qualitative properties of the response map


@dataclass(frozen=True)
class PropertyChecks:
    growth_bound: bool
    growth_margin: float
    modulus: bool | None
    modulus_deltas: tuple | None
    modulus_responses: tuple | None
    oscillation: bool | None
    oscillation_etas: tuple | None
    oscillation_responses: tuple | None


def growth_constants(params: ModelParams, x: np.ndarray, horizon: float) -> tuple[float, float]:
    theta = params.theta
    gamma0 = math.sqrt(params.I) * (2.0 * theta.max() / theta.min() + 1.0)
    gamma1 = gamma0 * float(np.sum(x + horizon * np.abs(params.y)))
    return gamma0, gamma1


def _growth_bound_margin(inst: GameInstance, psi: GridPath) -> float:
    """max over t of ||zeta(t)|| - (gamma0 (|psi1|*_t + |psi2|*_t) + gamma1);
    negative means the linear growth bound holds."""
    _check_psi(inst, psi, require_zero_start=False)
    I = inst.params.I
    _, _, _, zeta = _strategy_arrays(inst, psi.values)
    gamma0, gamma1 = growth_constants(inst.params, inst.x, inst.grid.horizon)
    psi1, psi2 = _split_psi(psi.values, I)
    n1 = np.maximum.accumulate(np.linalg.norm(psi1, axis=1))
    n2 = np.maximum.accumulate(np.linalg.norm(psi2, axis=1))
    zn = np.linalg.norm(zeta, axis=1)
    return float(np.max(zn - (gamma0 * (n1 + n2) + gamma1)))


def _pl_noise(grid: TimeGrid, d: int, rng, sup_bound: float) -> np.ndarray:
    slopes = rng.normal(size=(grid.steps, d))
    vals = np.vstack([np.zeros((1, d)), np.cumsum(slopes, axis=0) * grid.dt])
    peak = np.abs(vals).max()
    if peak == 0.0:
        return vals
    return vals * (sup_bound / peak) * rng.uniform(0.5, 1.0)


def _zeta_of(inst: GameInstance, psi_values: np.ndarray) -> np.ndarray:
    return _strategy_arrays(inst, psi_values)[3]


def property_bounds(inst: GameInstance, psi: GridPath, *, seed: int = 0,
                    pairs: int = 16, eps: float = 0.25, levels: int = 6) -> PropertyChecks:
    """Pass/fail checks on the response map at psi: the linear growth bound,
    continuity in the sup norm (perturbed pairs), and oscillation control."""
    margin = _growth_bound_margin(inst, psi)
    growth_ok = margin <= 1e-9

    rng = np.random.default_rng(seed)
    I = inst.params.I
    zeta0 = _zeta_of(inst, psi.values)
    deltas, responses = [], []
    delta = 0.5 * (1.0 + sup_norm(psi))
    for _ in range(levels):
        worst = 0.0
        for _ in range(pairs):
            noise = _pl_noise(inst.grid, 2 * I, rng, delta / 2.0)
            zeta1 = _zeta_of(inst, psi.values + noise)
            worst = max(worst, float(np.linalg.norm(zeta1 - zeta0, axis=1).max()))
        deltas.append(delta)
        responses.append(worst)
        delta /= 2.0
    modulus_ok = responses[-1] <= eps

    etas, osc_resp = [], []
    zeta_path = GridPath(inst.grid, zeta0)
    eta = inst.grid.horizon / 4.0
    for _ in range(levels):
        etas.append(eta)
        osc_resp.append(oscillation(zeta_path, eta))
        eta /= 2.0
    osc_ok = osc_resp[-1] <= max(eps, 2.0 * oscillation(psi, etas[-1]))

    return PropertyChecks(
        growth_bound=growth_ok,
        growth_margin=margin,
        modulus=modulus_ok,
        modulus_deltas=tuple(deltas),
        modulus_responses=tuple(responses),
        oscillation=osc_ok,
        oscillation_etas=tuple(etas),
        oscillation_responses=tuple(osc_resp),
    )


def calibrate_modulus(inst: GameInstance, psi: GridPath, eps: float, *,
                      trials: int = 32, seed: int = 0, max_halvings: int = 30) -> float:
    """Largest tested perturbation size delta for which all random pairs
    within delta keep the response within eps (bisection-by-halving)."""
    rng = np.random.default_rng(seed)
    zeta0 = _zeta_of(inst, psi.values)
    delta = 1.0 + sup_norm(psi)
    for _ in range(max_halvings):
        worst = 0.0
        for _ in range(trials):
            noise = _pl_noise(inst.grid, psi.d, rng, delta / 2.0)
            zeta1 = _zeta_of(inst, psi.values + noise)
            worst = max(worst, float(np.linalg.norm(zeta1 - zeta0, axis=1).max()))
        if worst <= eps:
            return delta
        delta /= 2.0
    raise RuntimeError(f"no delta found with response <= {eps} after {max_halvings} halvings")
