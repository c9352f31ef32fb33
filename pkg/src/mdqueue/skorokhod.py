"""One-dimensional Skorokhod reflection at zero.

Gamma[z](t) = z(t) - inf_{s<=t} (z(s) ^ 0) keeps a path nonnegative by adding
the minimal nondecreasing regulator.  Computed at grid points via a running
infimum; intra-step excursions of the linear interpolant below zero are
ignored (consumers refine the grid until results stabilize).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import GridPath

CHECK_TOL = 1e-12

__all__ = ["ReflectionResult", "reflect", "reflect_values", "lipschitz_check", "minimality_check"]


@dataclass(frozen=True, eq=False)
class ReflectionResult:
    reflected: GridPath
    regulator: GridPath


def reflect_values(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(reflected, regulator) arrays for a 1-D sample array."""
    z = np.asarray(z, dtype=float)
    regulator = -np.minimum.accumulate(np.minimum(z, 0.0))
    return z + regulator, regulator


def reflect(z: GridPath) -> ReflectionResult:
    """Reflection of a scalar path: result.reflected = z + result.regulator >= 0."""
    if z.d != 1:
        raise ValueError(f"reflection is one-dimensional, got d={z.d}")
    refl, reg = reflect_values(z.values[:, 0])
    return ReflectionResult(z.with_values(refl), z.with_values(reg))


def _require_same_grid(z: GridPath, w: GridPath) -> None:
    if z.grid != w.grid:
        raise ValueError("paths must share a grid")
    if z.d != 1 or w.d != 1:
        raise ValueError("paths must be one-dimensional")


def lipschitz_check(z: GridPath, w: GridPath) -> bool:
    """sup|Gamma[z] - Gamma[w]| <= 2 sup|z - w|, up to roundoff slack."""
    _require_same_grid(z, w)
    rz, _ = reflect_values(z.values[:, 0])
    rw, _ = reflect_values(w.values[:, 0])
    lhs = np.abs(rz - rw).max()
    rhs = 2.0 * np.abs(z.values[:, 0] - w.values[:, 0]).max()
    return bool(lhs <= rhs + CHECK_TOL)


def minimality_check(z: GridPath, r: GridPath) -> bool:
    """z + r dominates Gamma[z] for any nonnegative nondecreasing r with z + r >= 0.

    Precondition violations raise (they are caller bugs, distinct from the
    dominance check failing).
    """
    _require_same_grid(z, r)
    zv = z.values[:, 0]
    rv = r.values[:, 0]
    if rv[0] < 0:
        raise ValueError(f"r(0) = {rv[0]} must be nonnegative")
    if np.any(np.diff(rv) < -CHECK_TOL):
        raise ValueError("r must be nondecreasing")
    if np.any(zv + rv < -CHECK_TOL):
        raise ValueError("z + r must be nonnegative")
    refl, _ = reflect_values(zv)
    return bool(np.all(zv + rv >= refl - CHECK_TOL))
