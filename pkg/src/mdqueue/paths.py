"""Path algebra on uniform time grids.

Vector-valued paths sampled on a uniform grid over [0, T] are the common
currency of the game solver (piecewise-linear perturbations, responses) and
the simulator (piecewise-constant counting processes).  This module holds
the grid/path types, the physical model parameters, sup norms, oscillation,
the quadratic action functional of a perturbation path, and the per-class
time change w(t) -> w(rho_i * t).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

CRITICAL_LOAD_TOL = 1e-9

__all__ = [
    "TimeGrid",
    "GridPath",
    "ModelParams",
    "sup_norm",
    "oscillation",
    "rate_function",
    "time_change_rho",
    "path_from_values",
    "path_from_slopes",
    "path_from_function",
    "zero_path",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


@dataclass(frozen=True, eq=False)
class GridPath:
    """Path values on a TimeGrid; shape (N+1, d).

    kind = "linear" means the path is the piecewise-linear interpolant of its
    samples (game-side objects); kind = "step" means piecewise-constant,
    right-continuous (counting processes).
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"values must have shape (N+1, d) with N={self.grid.steps}, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if self.kind not in ("linear", "step"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def component(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def evaluate(self, t) -> np.ndarray:
        """Value at arbitrary times, by interpolation consistent with `kind`."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tg = self.grid.t
        if self.kind == "linear":
            out = np.stack([np.interp(t, tg, self.values[:, j]) for j in range(self.d)], axis=-1)
        else:
            idx = np.clip(np.searchsorted(tg, t, side="right") - 1, 0, self.grid.steps)
            out = self.values[idx]
        return out

    def with_values(self, values: np.ndarray) -> "GridPath":
        return GridPath(self.grid, values, self.kind)

    def to_csv(self, path) -> None:
        """Write `t,v1,...,vd` rows with round-trip float formatting."""
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"v{j + 1}" for j in range(self.d)) + "\n")
            for t, row in zip(self.grid.t, self.values):
                fh.write(repr(float(t)) + "," + ",".join(repr(float(x)) for x in row) + "\n")


def path_from_values(grid: TimeGrid, values, kind: str = "linear") -> GridPath:
    return GridPath(grid, np.asarray(values, dtype=float), kind)


def path_from_slopes(grid: TimeGrid, slopes: np.ndarray) -> GridPath:
    """Piecewise-linear path starting at zero with given per-step slopes (N, d)."""
    s = np.asarray(slopes, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] != grid.steps:
        raise ValueError(f"need {grid.steps} slope rows, got {s.shape[0]}")
    vals = np.vstack([np.zeros((1, s.shape[1])), np.cumsum(s, axis=0) * grid.dt])
    return GridPath(grid, vals)


def path_from_function(grid: TimeGrid, fn) -> GridPath:
    vals = np.asarray([np.atleast_1d(fn(t)) for t in grid.t], dtype=float)
    return GridPath(grid, vals)


def zero_path(grid: TimeGrid, d: int = 1) -> GridPath:
    return GridPath(grid, np.zeros((grid.steps + 1, d)))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """First- and second-order parameters of the multi-class model.

    Arrival rates lam, service rates mu, squared coefficients of variation of
    the unit-mean primitives, and the second-order rate perturbations
    lam_tilde / mu_tilde.  Critical load sum(rho) = 1 is required, not
    repaired: silently renormalizing would hide user error.
    """

    lam: np.ndarray
    mu: np.ndarray
    sigma2_ia: np.ndarray
    sigma2_st: np.ndarray
    lam_tilde: np.ndarray
    mu_tilde: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("lam", "mu", "sigma2_ia", "sigma2_st", "lam_tilde", "mu_tilde", "x0"):
            a = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        n = arrays["lam"].shape[0]
        for name, a in arrays.items():
            if a.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
        if np.any(arrays["lam"] <= 0) or np.any(arrays["mu"] <= 0):
            raise ValueError("arrival and service rates must be positive")
        if np.any(arrays["sigma2_ia"] <= 0) or np.any(arrays["sigma2_st"] <= 0):
            raise ValueError("squared coefficients of variation must be positive")
        if np.any(arrays["x0"] < 0):
            raise ValueError("initial state must be nonnegative")
        rho = arrays["lam"] / arrays["mu"]
        if abs(rho.sum() - 1.0) > CRITICAL_LOAD_TOL:
            raise ValueError(
                f"critical load violated: sum(rho) = {rho.sum()!r} differs from 1 "
                f"by more than {CRITICAL_LOAD_TOL}"
            )

    @property
    def I(self) -> int:
        return self.lam.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return self.lam / self.mu

    @property
    def theta(self) -> np.ndarray:
        """Workload vector (1/mu_1, ..., 1/mu_I)."""
        return 1.0 / self.mu

    @property
    def y(self) -> np.ndarray:
        """Second-order drift lam_tilde - rho * mu_tilde."""
        return self.lam_tilde - self.rho * self.mu_tilde

    @classmethod
    def from_dict(cls, doc: dict) -> tuple["ModelParams", float]:
        """Build from the JSON document schema; returns (params, horizon)."""
        required = [
            "I", "lambda", "mu", "sigma2_ia", "sigma2_st",
            "lambda_tilde", "mu_tilde", "x0", "horizon",
        ]
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValueError(f"model document missing fields: {missing}")
        I = int(doc["I"])
        params = cls(
            lam=np.asarray(doc["lambda"], dtype=float),
            mu=np.asarray(doc["mu"], dtype=float),
            sigma2_ia=np.asarray(doc["sigma2_ia"], dtype=float),
            sigma2_st=np.asarray(doc["sigma2_st"], dtype=float),
            lam_tilde=np.asarray(doc["lambda_tilde"], dtype=float),
            mu_tilde=np.asarray(doc["mu_tilde"], dtype=float),
            x0=np.asarray(doc["x0"], dtype=float),
        )
        if params.I != I:
            raise ValueError(f"field I = {I} does not match array length {params.I}")
        horizon = float(doc["horizon"])
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        return params, horizon

    @classmethod
    def from_json(cls, text: str) -> tuple["ModelParams", float]:
        return cls.from_dict(json.loads(text))


def sup_norm(p: GridPath, up_to: int | None = None) -> float:
    """max_{j <= up_to} ||p(t_j)||_2; up_to defaults to the full grid."""
    n = p.grid.steps
    if up_to is None:
        up_to = n
    if not (0 <= up_to <= n):
        raise IndexError(f"index {up_to} out of range [0, {n}]")
    norms = np.linalg.norm(p.values[: up_to + 1], axis=1)
    return float(norms.max())


def oscillation(p: GridPath, eta: float) -> float:
    """max ||p(s) - p(t)|| over grid pairs with |s - t| <= eta."""
    if eta <= 0:
        raise ValueError(f"oscillation window must be positive, got {eta}")
    dt = p.grid.dt
    k = int(np.floor(eta / dt + 1e-12))
    if k == 0:
        return 0.0
    v = p.values
    best = 0.0
    for lag in range(1, min(k, p.grid.steps) + 1):
        diff = np.linalg.norm(v[lag:] - v[:-lag], axis=1)
        m = diff.max()
        if m > best:
            best = float(m)
    return best


def rate_function(psi: GridPath, params: ModelParams, form: str = "direct") -> float:
    """Quadratic action of a 2I-dimensional perturbation path.

    form = "direct": arrival block weighted 1/(2 lam_i s2_ia), service block
    weighted 1/(2 rho_i mu_i s2_st); the service component is read post time
    change.  form = "time_changed": service block weighted 1/(2 mu_i s2_st),
    component pre time change.  Evaluated exactly on the piecewise-linear
    interpolant (sum of slope^2 * dt); paths not starting at zero carry
    infinite cost.
    """
    I = params.I
    if psi.d != 2 * I:
        raise ValueError(f"perturbation path must have 2I = {2 * I} components, got {psi.d}")
    if form not in ("direct", "time_changed"):
        raise ValueError(f"unknown rate form {form!r}")
    if np.any(psi.values[0] != 0.0):
        warnings.warn("perturbation path does not start at zero; rate is +inf", stacklevel=2)
        return float("inf")
    dt = psi.grid.dt
    slopes = np.diff(psi.values, axis=0) / dt
    w1 = 1.0 / (2.0 * params.lam * params.sigma2_ia)
    if form == "direct":
        w2 = 1.0 / (2.0 * params.rho * params.mu * params.sigma2_st)
    else:
        w2 = 1.0 / (2.0 * params.mu * params.sigma2_st)
    weights = np.concatenate([w1, w2])
    return float(np.sum(slopes**2 * weights[None, :]) * dt)


def time_change_rho(psi2: GridPath, params: ModelParams) -> GridPath:
    """Component-wise time change: output_i(t) = psi2_i(rho_i * t)."""
    if psi2.d != params.I:
        raise ValueError(f"path must have I = {params.I} components, got {psi2.d}")
    t = psi2.grid.t
    rho = params.rho
    out = np.empty_like(psi2.values)
    for i in range(params.I):
        out[:, i] = np.interp(rho[i] * t, t, psi2.values[:, i])
    return GridPath(psi2.grid, out, psi2.kind)
