"""Fixed-step Euler / Euler-Maruyama integration on the gradient tape.

Brownian increments come from a counter-based generator keyed on
``(seed, step, coordinate)``, so a path is a pure function of its seed and
grid and any sub-block can be regenerated without replaying the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .autodiff import NonFiniteError, ShapeError, Tensor, add, mul, scale, square, sub, tsum

Drift = Callable[[Tensor, float], Tensor]


class IntegrationError(FloatingPointError):
    def __init__(self, step: int, msg: str = "non-finite state"):
        super().__init__(f"step {step}: {msg}")
        self.step = step


class SingularDiffusionError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 20

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"time grid needs t1 > t0, got [{self.t0}, {self.t1}]")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"time grid needs a positive integer step count, got {self.steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    def time(self, j: int) -> float:
        return self.t0 + j * self.dt

    def points(self) -> np.ndarray:
        return self.t0 + np.arange(self.steps + 1) * self.dt

    def nearest_index(self, t) -> np.ndarray:
        """Grid index closest to each time in ``t`` (clipped to the grid)."""
        j = np.rint((np.asarray(t, dtype=np.float64) - self.t0) / self.dt)
        return np.clip(j, 0, self.steps).astype(np.int64)


_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def standard_normals(seed: int, shape, start: int = 0) -> np.ndarray:
    """Box-Muller normals for counters ``start .. start + prod(shape) - 1``."""
    count = int(np.prod(shape))
    bits = _kernels.counter_bits(np.uint64(seed % 2**64), np.uint64(2 * start), 2 * count)
    u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return (np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)).reshape(shape)


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    grid: TimeGrid
    increments: np.ndarray  # (steps, *shape), entries ~ N(0, dt)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.increments.shape[1:]

    def values(self) -> np.ndarray:
        """W(t_j) for j = 0..steps, with W(t_0) = 0."""
        w = np.zeros((self.grid.steps + 1,) + self.shape)
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w


def sample_brownian(grid: TimeGrid, shape, seed: int) -> BrownianPath:
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    z = standard_normals(seed, (grid.steps,) + shape)
    return BrownianPath(int(seed), grid, z * np.sqrt(grid.dt))


def _diffusion_value(diffusion, z: Tensor, t: float):
    return diffusion(z, t) if callable(diffusion) else diffusion


def em_step(z: Tensor, t: float, drift: Drift, diffusion, dW, dt: float, step: int = 0, f: Tensor | None = None) -> Tensor:
    """One Euler-Maruyama update ``z + f(z, t) dt + g(z, t) * dW`` (diagonal noise).

    ``f`` may be passed when the drift at ``(z, t)`` is already known.
    """
    try:
        if f is None:
            f = drift(z, t)
        if f.shape != z.shape:
            raise ShapeError(f"drift shape {f.shape} does not match state {z.shape}")
        dW = np.asarray(dW, dtype=np.float64)
        if dW.shape != z.shape:
            raise ShapeError(f"noise shape {dW.shape} does not match state {z.shape}")
        g = _diffusion_value(diffusion, z, t)
        noise = mul(g, Tensor(dW)) if isinstance(g, Tensor) else Tensor(np.asarray(g, dtype=np.float64) * dW)
        return add(add(z, scale(f, dt)), noise)
    except NonFiniteError as exc:
        raise IntegrationError(step, str(exc)) from exc


@dataclass
class SolvedPath:
    grid: TimeGrid
    states: list = field(default_factory=list)  # z(t_j), j = 0..steps
    drifts: list = field(default_factory=list)  # drift evaluated at z(t_j), j = 0..steps-1

    @property
    def final(self) -> Tensor:
        return self.states[-1]


def integrate_sde(z0: Tensor, grid: TimeGrid, drift: Drift, diffusion, path: BrownianPath) -> SolvedPath:
    if path.grid != grid:
        raise ValueError("Brownian path was sampled on a different grid")
    out = SolvedPath(grid, [z0])
    z, dt = z0, grid.dt
    for j in range(grid.steps):
        t = grid.time(j)
        try:
            f = drift(z, t)
        except NonFiniteError as exc:
            raise IntegrationError(j, str(exc)) from exc
        out.drifts.append(f)
        z = em_step(z, t, drift, diffusion, path.increments[j], dt, step=j, f=f)
        out.states.append(z)
    return out


def integrate_ode(z0: Tensor, grid: TimeGrid, drift: Drift) -> SolvedPath:
    """Explicit Euler; one step of size 1 is exactly a residual block."""
    out = SolvedPath(grid, [z0])
    z, dt = z0, grid.dt
    for j in range(grid.steps):
        try:
            f = drift(z, grid.time(j))
            if f.shape != z.shape:
                raise ShapeError(f"drift shape {f.shape} does not match state {z.shape}")
            out.drifts.append(f)
            z = add(z, scale(f, dt))
        except NonFiniteError as exc:
            raise IntegrationError(j, str(exc)) from exc
        out.states.append(z)
    return out


def kl_path_integral(path: SolvedPath, posterior_drift: Drift | None, prior_drift, diffusion) -> Tensor:
    """Left-Riemann sum of 0.5 * ||(f_post - f_prior) / g||^2 dt along ``path``.

    ``posterior_drift=None`` reuses the drift values recorded during
    integration. ``prior_drift`` may be a callable, a constant array or None (zero).
    """
    grid = path.grid
    total = None
    for j in range(grid.steps):
        z, t = path.states[j], grid.time(j)
        fp = path.drifts[j] if posterior_drift is None else posterior_drift(z, t)
        if prior_drift is None:
            diff = fp
        elif callable(prior_drift):
            diff = sub(fp, prior_drift(z, t))
        else:
            diff = sub(fp, Tensor(np.broadcast_to(prior_drift, fp.shape)))
        g = _diffusion_value(diffusion, z, t)
        if isinstance(g, Tensor):
            if (g.data == 0).any():
                raise SingularDiffusionError(f"zero diffusion at step {j}")
            diff = mul(diff, Tensor(1.0 / g.data))
        else:
            g = np.asarray(g, dtype=np.float64)
            if (g == 0).any():
                raise SingularDiffusionError(f"zero diffusion at step {j}")
            diff = scale(diff, 1.0 / float(g)) if g.size == 1 else mul(diff, Tensor(np.broadcast_to(1.0 / g, diff.shape)))
        term = scale(tsum(square(diff)), 0.5 * grid.dt)
        total = term if total is None else add(total, term)
    return total
