"""Runtime invariant suite and random-instance builders.

The `validate` subcommand runs these checks on freshly drawn instances and
reports one pass/fail line per check.  The builders are also the source of
random models, costs, and perturbation paths for the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import game as gm
from . import queue_sim as qs
from .estimator import estimate_J, log_mean_exp
from .paths import GridPath, ModelParams, TimeGrid, path_from_slopes, rate_function
from .skorokhod import lipschitz_check, minimality_check, reflect, reflect_values

__all__ = [
    "random_model",
    "random_linear_cost",
    "random_psi",
    "random_admissible_workload_noise",
    "run_validation_suite",
]


def random_model(rng: np.random.Generator, I: int | None = None,
                 with_drift: bool = True) -> ModelParams:
    """Critically loaded model with random rates and variances."""
    if I is None:
        I = int(rng.integers(1, 4))
    mu = rng.uniform(0.5, 3.0, I)
    rho = rng.dirichlet(np.ones(I))
    lam = rho * mu
    scale = 1.0 if with_drift else 0.0
    return ModelParams(
        lam=lam,
        mu=mu,
        sigma2_ia=rng.uniform(0.4, 2.0, I),
        sigma2_st=rng.uniform(0.4, 2.0, I),
        lam_tilde=scale * rng.uniform(-1.0, 1.0, I),
        mu_tilde=scale * rng.uniform(-1.0, 1.0, I),
        x0=rng.uniform(0.0, 2.0, I),
    )


def random_linear_cost(rng: np.random.Generator, params: ModelParams) -> gm.CostSpec:
    """Random linear cost with c_i mu_i and d_i mu_i decreasing in i."""
    I = params.I
    cmu = np.sort(rng.uniform(0.2, 3.0, I))[::-1]
    dmu = np.sort(rng.uniform(0.0, 2.0, I))[::-1]
    return gm.linear_cost(params, cmu / params.mu, dmu / params.mu, validate=False)


def random_psi(rng: np.random.Generator, grid: TimeGrid, I: int,
               scale: float = 1.0) -> GridPath:
    return path_from_slopes(grid, rng.normal(0.0, scale, size=(grid.steps, 2 * I)))


def random_psi_in_ball(rng: np.random.Generator, grid: TimeGrid, I: int,
                       kappa: float, x0: np.ndarray) -> GridPath:
    """Perturbation with |psi1|* + |psi2|* <= kappa and nonnegative initial
    free dynamics; half the draws start away from zero."""
    vals = random_psi(rng, grid, I).values.copy()
    if rng.uniform() < 0.5:
        start1 = rng.uniform(0.0, 0.5, I)
        start2 = np.array([rng.uniform(0.0, x0[i] + start1[i]) for i in range(I)])
        vals += np.concatenate([start1, start2])[None, :]
    n1 = np.linalg.norm(vals[:, :I], axis=1).max()
    n2 = np.linalg.norm(vals[:, I:], axis=1).max()
    total = n1 + n2
    if total > 0:
        vals *= rng.uniform(0.3, 1.0) * kappa / total
    return GridPath(grid, vals)


def random_admissible_workload_noise(rng: np.random.Generator, grid: TimeGrid) -> np.ndarray:
    """Nondecreasing path from zero (extra workload for a competitor)."""
    bumps = np.abs(rng.normal(0.0, 0.5, grid.steps))
    return np.concatenate([[0.0], np.cumsum(bumps)]) * grid.dt


def _standard_two_class(rng) -> tuple[ModelParams, gm.CostSpec]:
    params = ModelParams(
        lam=np.array([1.0, 0.5]),
        mu=np.array([2.0, 1.0]),
        sigma2_ia=np.array([1.0, 1.0]),
        sigma2_st=np.array([1.0, 1.0]),
        lam_tilde=np.zeros(2),
        mu_tilde=np.zeros(2),
        x0=np.array([0.3, 0.2]),
    )
    cost = gm.linear_cost(params, [2.0, 1.0], [0.5, 0.4])
    return params, cost


# ---------------------------------------------------------------------------
# checks


def _check_skorokhod(rng, trials=300, steps=128) -> dict:
    grid = TimeGrid(1.0, steps)
    ok_lip = ok_min = ok_idem = ok_comp = True
    for _ in range(trials):
        z = path_from_slopes(grid, rng.normal(0.0, 2.0, size=(steps, 1)))
        w = path_from_slopes(grid, rng.normal(0.0, 2.0, size=(steps, 1)))
        ok_lip &= lipschitz_check(z, w)
        res = reflect(z)
        extra = np.concatenate([[0.0], np.cumsum(np.abs(rng.normal(0.0, 0.5, steps)))])
        r = res.regulator.values[:, 0] + extra
        ok_min &= minimality_check(z, z.with_values(r - 0.0))
        again = reflect(res.reflected)
        ok_idem &= bool(np.allclose(again.reflected.values, res.reflected.values, atol=1e-12)
                        and np.abs(again.regulator.values).max() <= 1e-12)
        reg = res.regulator.values[:, 0]
        refl = res.reflected.values[:, 0]
        inc = np.diff(reg) > 1e-12
        touched = (refl[:-1] <= 1e-12) | (refl[1:] <= 1e-12)
        ok_comp &= bool(np.all(~inc | touched))
    return {
        "skorokhod lipschitz bound": ok_lip,
        "skorokhod minimality": ok_min,
        "skorokhod idempotence": ok_idem,
        "skorokhod complementarity": ok_comp,
    }


def _check_strategy(rng, trials=100, steps=96) -> dict:
    ok_adm = ok_dom = ok_growth = ok_workload = True
    for _ in range(trials):
        params = random_model(rng)
        cost = random_linear_cost(rng, params)
        grid = TimeGrid(1.0, steps)
        inst = gm.GameInstance(params, cost, grid)
        psi = random_psi(rng, grid, params.I)
        out = gm.respond(inst, psi)
        tz = out.zeta.values @ params.theta
        ok_adm &= bool(abs(tz[0]) <= 1e-10 and np.all(np.diff(tz) >= -1e-10)
                       and np.all(out.phi.values >= -1e-12))
        ok_workload &= bool(np.abs(out.phi.values @ params.theta - out.w.values[:, 0]).max() <= 1e-10)
        ok_growth &= gm.property_bounds(inst, psi).growth_bound

        r = random_admissible_workload_noise(rng, grid)
        w_tilde = out.w.values[:, 0] + r
        weights = rng.dirichlet(np.ones(params.I), size=grid.steps + 1)
        phi_tilde = w_tilde[:, None] * weights / params.theta[None, :]
        ok_dom &= bool(np.all(cost.h(phi_tilde) >= cost.h(out.phi.values) - 1e-9)
                       and cost.g(phi_tilde[-1]) >= cost.g(out.phi.values[-1]) - 1e-9)
    return {
        "strategy admissibility": ok_adm,
        "strategy dominance": ok_dom,
        "strategy growth bound": ok_growth,
        "strategy workload consistency": ok_workload,
    }


def _check_rate_function(rng, trials=50) -> bool:
    ok = True
    for _ in range(trials):
        params = random_model(rng)
        grid = TimeGrid(1.0, 64)
        psi = random_psi(rng, grid, params.I)
        base = rate_function(psi, params)
        c = rng.uniform(0.3, 3.0)
        scaled = GridPath(grid, c * psi.values)
        ok &= bool(base >= 0.0 and abs(rate_function(scaled, params) - c**2 * base)
                   <= 1e-9 * (1.0 + c**2 * base))
    return ok


def _check_workload_variance(rng, trials=10) -> bool:
    import scipy.optimize

    ok = True
    for _ in range(trials):
        params = random_model(rng)
        I = params.I
        target_v = rng.uniform(0.5, 2.0)
        a = 1.0 / (2.0 * params.lam * params.sigma2_ia)
        b = 1.0 / (2.0 * params.rho * params.mu * params.sigma2_st)
        weights = np.concatenate([a, b])
        signs = np.concatenate([params.theta, -params.theta])

        res = scipy.optimize.minimize(
            lambda u: float(weights @ u**2),
            x0=np.full(2 * I, target_v / (2 * I)),
            jac=lambda u: 2.0 * weights * u,
            constraints=[{"type": "eq", "fun": lambda u: float(signs @ u) - target_v,
                          "jac": lambda u: signs}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 300},
        )
        expected = target_v**2 / (2.0 * gm.workload_variance(params))
        ok &= bool(res.success and abs(res.fun - expected) <= 1e-6)
    return ok


def _check_simulator(rng, trials=10) -> dict:
    params, cost = _standard_two_class(rng)
    scheme = qs.ScalingScheme(64, 64**0.25)
    dists = qs.PrimitiveDistributions.from_model(params, "exponential", "exponential")
    grid = TimeGrid(1.0, 128)
    ok_identity = ok_monotone = ok_conserve = ok_workload = ok_repro = True
    policy = qs.cmu_policy([0, 1])
    for k in range(trials):
        streams = qs.sample_primitives(dists, scheme, params, 1.0, qs.replication_rng(7, k))
        trace = qs.run(params, scheme, streams, policy, 1.0)
        scaled = qs.scale_trace(trace, grid)
        ok_identity &= scaled.identity_residual <= 1e-9
        tz = (scaled.z.values @ scheme.theta_n(params))
        ok_monotone &= bool(np.all(np.diff(tz) >= -1e-9))
        q = trace.queue_at(trace.event_times) if trace.event_times.size else np.zeros((1, 2))
        ok_conserve &= bool(q.min() >= 0)
        ok_workload &= qs.workload_identity_residual(trace, grid) <= 1e-6
        streams2 = qs.sample_primitives(dists, scheme, params, 1.0, qs.replication_rng(7, k))
        trace2 = qs.run(params, scheme, streams2, policy, 1.0)
        ok_repro &= bool(np.array_equal(trace.event_times, trace2.event_times)
                         and np.array_equal(trace.event_types, trace2.event_types)
                         and np.array_equal(trace.event_classes, trace2.event_classes))
    return {
        "simulator scaled identity": ok_identity,
        "simulator effort-shift monotone": ok_monotone,
        "simulator conservation": ok_conserve,
        "simulator cmu workload identity": ok_workload,
        "simulator reproducibility": ok_repro,
    }


def _check_estimator(rng) -> bool:
    vals = rng.normal(0.0, 1.0, 200)
    shift = 3.7
    a = log_mean_exp(vals + shift) - (log_mean_exp(vals) + shift)
    return abs(a) <= 1e-9


def run_validation_suite(seed: int = 0) -> list[tuple[str, bool]]:
    rng = np.random.default_rng(seed)
    results: list[tuple[str, bool]] = []
    results.extend(_check_skorokhod(rng).items())
    results.extend(_check_strategy(rng).items())
    results.append(("rate function quadratic scaling", _check_rate_function(rng)))
    results.append(("workload variance reduction", _check_workload_variance(rng)))
    results.extend(_check_simulator(rng).items())
    results.append(("log-mean-exp shift invariance", _check_estimator(rng)))
    return results
