"""Time integration of the stochastic system, its deterministic limit, the
controlled linearization, and the shifted fluctuation process.

All solvers share one integrating-factor step: the dissipation operator is
integrated exactly per mode, advection and forcing enter explicitly with the
weight phi(a, dt) = (1 - exp(-a dt)) / a, and noise enters at the left endpoint
with weight phi / dt (Ito convention).  In the linear additive regime each mode
is therefore an exactly solvable Gaussian recursion, which the test oracles
exploit.

The ensemble entry points integrate many paths at once (vectorized over a
chunk) while each path consumes its own counter-based substream, so results do
not depend on chunking or scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .noise import Control, NoiseModel, sigma_apply_array
from .rng import substream
from .spectral import (
    SpectralField,
    SpectralGrid,
    TWO_PI,
    advection_array,
    h_norm_sq_array,
    v_norm_sq_array,
    zero_field,
)

LOGLOG_LIMIT = math.exp(-math.e)  # log log (1/eps) > 0 requires eps below this


class IntegrationError(RuntimeError):
    """Blowup or non-finite state; carries the failing step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"integration failed at step {step}: {message}")
        self.step = step


class GridMismatchError(ValueError):
    pass


class ParameterError(ValueError):
    pass


def loglog(epsilon: float) -> float:
    """log log (1/epsilon), defined for epsilon in (0, exp(-e))."""
    if not 0.0 < epsilon < LOGLOG_LIMIT:
        raise ParameterError(
            f"epsilon must lie in (0, {LOGLOG_LIMIT:.6f}) for the iterated "
            f"logarithm scaling, got {epsilon}"
        )
    return math.log(math.log(1.0 / epsilon))


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one integration run.

    `nonlinear` switches every advection coupling in every solver (the
    quadratic term of the state equations and the linear advective couplings
    of the controlled/shifted equations), giving the exactly solvable
    diagonal regime when off.
    """

    grid: SpectralGrid
    noise: NoiseModel
    horizon: float
    dt: float
    epsilon: float = 0.0
    initial: SpectralField | None = None
    forcing: SpectralField | Callable[[float], SpectralField] | None = None
    nonlinear: bool = True
    record_stride: int = 1
    blowup_factor: float = 1e6

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if self.horizon < 0:
            raise ParameterError("horizon must be nonnegative")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be nonnegative")
        if self.record_stride < 1:
            raise ParameterError("record_stride must be >= 1")
        n = round(self.horizon / self.dt)
        if abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ParameterError("horizon must be an integral multiple of dt")
        if self.noise.grid != self.grid:
            raise GridMismatchError("noise model grid differs from state grid")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)

    def with_epsilon(self, epsilon: float) -> "SimConfig":
        return replace(self, epsilon=epsilon)


class Propagator:
    """Per-mode integrating-factor weights for one step size."""

    def __init__(self, grid: SpectralGrid, dt: float):
        self.grid = grid
        self.dt = dt
        k2 = grid.k2
        self.decay = np.exp(-k2 * dt)
        phi = np.where(k2 > 0, (1.0 - self.decay) / np.where(k2 > 0, k2, 1.0), dt)
        self.phi = phi
        self.phi_rate = phi / dt
        # exact integral of ||u||^2 over one pure-decay step, per unit |u_k|^2
        self.int_weight = (1.0 - self.decay**2) / 2.0

    def step_int_v2(self, coeffs: np.ndarray) -> np.ndarray:
        return TWO_PI**2 * np.sum(
            self.int_weight * np.abs(coeffs) ** 2, axis=(-3, -2, -1)
        )


def _forcing_at(config: SimConfig, t: float) -> np.ndarray | None:
    f = config.forcing
    if f is None:
        return None
    if isinstance(f, SpectralField):
        return f.coeffs
    return f(t).coeffs


def _initial_coeffs(config: SimConfig) -> np.ndarray:
    if config.initial is None:
        return zero_field(config.grid).coeffs
    if config.initial.grid != config.grid:
        raise GridMismatchError("initial condition grid differs from run grid")
    return config.initial.coeffs


def _blowup_guard(coeffs: np.ndarray, scale: float, step: int) -> None:
    peak = np.max(np.abs(coeffs))
    if not np.isfinite(peak):
        raise IntegrationError(step, "non-finite coefficients")
    if peak > scale:
        raise IntegrationError(step, f"amplitude {peak:.3e} exceeded blowup guard")


def step_deterministic(
    u: SpectralField,
    f_t: SpectralField | None,
    dt: float,
    nonlinear: bool = True,
) -> SpectralField:
    """One integrating-factor step of the unforced-noise dynamics."""
    prop = Propagator(u.grid, dt)
    rhs = None if f_t is None else f_t.coeffs
    out = _step_array(prop, u.coeffs, rhs, nonlinear)
    return SpectralField(u.grid, out)


def step_snse(
    u: SpectralField,
    f_t: SpectralField | None,
    epsilon: float,
    dW: np.ndarray,
    dt: float,
    model: NoiseModel,
    t: float = 0.0,
    nonlinear: bool = True,
) -> SpectralField:
    """Deterministic step plus the phi-weighted left-endpoint noise term.

    With epsilon = 0 the noise branch is skipped entirely, so the result is
    bit-identical to step_deterministic.
    """
    prop = Propagator(u.grid, dt)
    rhs = None if f_t is None else f_t.coeffs
    out = _step_array(prop, u.coeffs, rhs, nonlinear)
    if epsilon > 0.0:
        noise = sigma_apply_array(model, t, u.coeffs, dW)
        out = out + prop.phi_rate * (math.sqrt(epsilon) * noise)
    return SpectralField(u.grid, out)


def _step_array(
    prop: Propagator,
    coeffs: np.ndarray,
    forcing: np.ndarray | None,
    nonlinear: bool,
) -> np.ndarray:
    rhs = None
    if nonlinear:
        rhs = -advection_array(prop.grid, coeffs, coeffs)
    if forcing is not None:
        rhs = forcing if rhs is None else rhs + forcing
    out = prop.decay * coeffs
    if rhs is not None:
        out = out + prop.phi * rhs
    return out


@dataclass
class Trajectory:
    """Recorded states plus running norm functionals of one solution path.

    `sup_h2` and `int_v2` are accumulated over every solver step (the integral
    by the per-step integrating-factor quadrature, exact for pure decay);
    `h2`/`v2` hold the squared norms at the recorded times only.  Treat
    instances as immutable.
    """

    grid: SpectralGrid
    dt: float
    record_stride: int
    times: np.ndarray
    frames: np.ndarray
    h2: np.ndarray
    v2: np.ndarray
    sup_h2: float
    int_v2: float
    provenance: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return len(self.times)

    def field_at(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.frames[i])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def running_energy_sq(self) -> float:
        return self.sup_h2 + self.int_v2

    def aligned_with(self, other: "Trajectory") -> bool:
        return (
            self.grid == other.grid
            and self.n_records == other.n_records
            and np.allclose(self.times, other.times, atol=1e-12)
        )


def derived_trajectory(
    grid: SpectralGrid,
    times: np.ndarray,
    frames: np.ndarray,
    dt: float,
    record_stride: int,
    provenance: dict | None = None,
) -> Trajectory:
    """Trajectory from precomputed frames; functionals on the recording grid."""
    h2 = h_norm_sq_array(grid, frames)
    v2 = v_norm_sq_array(grid, frames)
    if len(times) > 1:
        int_v2 = float(np.sum(v2[:-1] * np.diff(times)))
    else:
        int_v2 = 0.0
    return Trajectory(
        grid=grid,
        dt=dt,
        record_stride=record_stride,
        times=np.asarray(times, dtype=np.float64),
        frames=frames,
        h2=h2,
        v2=v2,
        sup_h2=float(np.max(h2)),
        int_v2=int_v2,
        provenance=dict(provenance or {}),
    )


def combine_trajectories(
    a: Trajectory, b: Trajectory, coef_a: float, coef_b: float, provenance=None
) -> Trajectory:
    """Pointwise linear combination coef_a * a + coef_b * b (aligned grids)."""
    if not a.aligned_with(b):
        raise GridMismatchError("trajectories are not aligned")
    frames = coef_a * a.frames + coef_b * b.frames
    return derived_trajectory(
        a.grid, a.times, frames, a.dt, a.record_stride, provenance
    )


class _Recorder:
    """Accumulates running functionals and recorded frames for one batch."""

    def __init__(self, prop: Propagator, n_paths: int, n_steps: int, stride: int):
        self.prop = prop
        self.stride = stride
        self.n_steps = n_steps
        rec = [i for i in range(n_steps + 1) if i % stride == 0 or i == n_steps]
        self.record_steps = rec
        S = prop.grid.n_coeff
        self.times = np.zeros(len(rec))
        self.frames = np.zeros((n_paths, len(rec), 2, S, S), dtype=np.complex128)
        self.h2 = np.zeros((n_paths, len(rec)))
        self.v2 = np.zeros((n_paths, len(rec)))
        self.sup_h2 = np.zeros(n_paths)
        self.int_v2 = np.zeros(n_paths)
        self._cursor = 0

    def on_state(self, idx: int, t: float, coeffs: np.ndarray) -> None:
        h2 = h_norm_sq_array(self.prop.grid, coeffs)
        np.maximum(self.sup_h2, h2, out=self.sup_h2)
        if idx < self.n_steps:
            self.int_v2 += self.prop.step_int_v2(coeffs)
        if self._cursor < len(self.record_steps) and idx == self.record_steps[self._cursor]:
            self.times[self._cursor] = t
            self.frames[:, self._cursor] = coeffs
            self.h2[:, self._cursor] = h2
            self.v2[:, self._cursor] = v_norm_sq_array(self.prop.grid, coeffs)
            self._cursor += 1

    def trajectory(self, path: int, config: SimConfig, provenance: dict) -> Trajectory:
        return Trajectory(
            grid=config.grid,
            dt=config.dt,
            record_stride=config.record_stride,
            times=self.times.copy(),
            frames=self.frames[path].copy(),
            h2=self.h2[path].copy(),
            v2=self.v2[path].copy(),
            sup_h2=float(self.sup_h2[path]),
            int_v2=float(self.int_v2[path]),
            provenance=provenance,
        )


def _integrate_batch(
    config: SimConfig,
    state: np.ndarray,
    normals: np.ndarray | None,
    hooks,
) -> None:
    """Advance a batch of paths in place, invoking hooks at each step.

    hooks.on_noise(step, dW) and hooks.on_state(idx, t, coeffs) are optional
    callables; state has shape (n, 2, S, S) and normals (n, n_steps, J).
    """
    prop = Propagator(config.grid, config.dt)
    model = config.noise
    sqrt_eps = math.sqrt(config.epsilon)
    scale = config.blowup_factor * max(np.max(np.abs(state)), 1.0 / TWO_PI)
    on_noise = getattr(hooks, "on_noise", None)
    on_state = getattr(hooks, "on_state", None)
    if on_state:
        on_state(0, 0.0, state)
    sqrt_lam_dt = np.sqrt(model.eigenvalues * config.dt)
    for step in range(config.n_steps):
        t = step * config.dt
        forcing = _forcing_at(config, t)
        new = _step_array(prop, state, forcing, config.nonlinear)
        if config.epsilon > 0.0 and normals is not None:
            dW = normals[:, step, :] * sqrt_lam_dt
            if on_noise:
                on_noise(step, dW)
            noise = sigma_apply_array(model, t, state, dW)
            new = new + prop.phi_rate * (sqrt_eps * noise)
        elif on_noise is not None and normals is not None:
            on_noise(step, normals[:, step, :] * sqrt_lam_dt)
        state[...] = new
        _blowup_guard(state, scale, step)
        if on_state:
            on_state(step + 1, t + config.dt, state)


class _SingleHooks:
    def __init__(self, recorder: _Recorder):
        self.rec = recorder

    def on_state(self, idx, t, coeffs):
        self.rec.on_state(idx, t, coeffs)


def solve_deterministic(config: SimConfig, provenance: dict | None = None) -> Trajectory:
    """Integrate the zero-noise dynamics; deterministic given config."""
    cfg = config if config.epsilon == 0.0 else config.with_epsilon(0.0)
    state = _initial_coeffs(cfg)[None].copy()
    prop = Propagator(cfg.grid, cfg.dt)
    rec = _Recorder(prop, 1, cfg.n_steps, cfg.record_stride)
    _integrate_batch(cfg, state, None, _SingleHooks(rec))
    prov = dict(provenance or {})
    prov.setdefault("epsilon", 0.0)
    return rec.trajectory(0, cfg, prov)


def solve_snse(config: SimConfig, seed: int, provenance: dict | None = None) -> Trajectory:
    """Integrate the noisy dynamics; deterministic given (config, seed)."""
    if config.epsilon == 0.0:
        return solve_deterministic(config, provenance)
    rng = substream(seed, 0)
    normals = rng.standard_normal((1, config.n_steps, config.noise.n_directions))
    state = _initial_coeffs(config)[None].copy()
    prop = Propagator(config.grid, config.dt)
    rec = _Recorder(prop, 1, config.n_steps, config.record_stride)
    _integrate_batch(config, state, normals, _SingleHooks(rec))
    prov = dict(provenance or {})
    prov.setdefault("seed", seed)
    prov.setdefault("epsilon", config.epsilon)
    return rec.trajectory(0, config, prov)


def _require_solver_grid(traj: Trajectory, config: SimConfig, name: str) -> None:
    if traj.grid != config.grid:
        raise GridMismatchError(f"{name} grid differs from run grid")
    if traj.record_stride != 1 or traj.n_records != config.n_steps + 1:
        raise GridMismatchError(
            f"{name} must be recorded at every solver step over the full horizon"
        )
    if abs(traj.dt - config.dt) > 1e-15:
        raise GridMismatchError(f"{name} step size differs from run step size")


def _control_values_on_steps(h: Control, config: SimConfig) -> np.ndarray:
    if abs(h.horizon - config.horizon) > 1e-12 * max(1.0, config.horizon):
        raise GridMismatchError("control horizon differs from run horizon")
    vals = np.zeros((config.n_steps, h.model.n_directions))
    for n in range(config.n_steps):
        vals[n] = h.value_at(n * config.dt)
    return vals


def skeleton_forward(
    h_values: np.ndarray,
    u0_frames: np.ndarray,
    config: SimConfig,
) -> np.ndarray:
    """All frames of the controlled linearization driven by per-step controls.

    h_values has shape (n_steps, J); u0_frames holds the deterministic limit at
    every solver step.  Returns (n_steps + 1, 2, S, S).  The dynamics are
    linear in the state and in the control (the noise map is frozen at the
    deterministic limit).
    """
    prop = Propagator(config.grid, config.dt)
    model = config.noise
    n = config.n_steps
    S = config.grid.n_coeff
    out = np.zeros((n + 1, 2, S, S), dtype=np.complex128)
    for step in range(n):
        t = step * config.dt
        u0 = u0_frames[step]
        x = out[step]
        rhs = sigma_apply_array(model, t, u0, h_values[step])
        if config.nonlinear:
            rhs = rhs - advection_array(config.grid, x, u0) - advection_array(
                config.grid, u0, x
            )
        out[step + 1] = prop.decay * x + prop.phi * rhs
    return out


def solve_skeleton(
    h: Control,
    u0_traj: Trajectory,
    config: SimConfig,
    provenance: dict | None = None,
) -> Trajectory:
    """Integrate the controlled linearization around the deterministic limit."""
    _require_solver_grid(u0_traj, config, "deterministic trajectory")
    h_values = _control_values_on_steps(h, config)
    frames = skeleton_forward(h_values, u0_traj.frames, config)
    prop = Propagator(config.grid, config.dt)
    rec = _Recorder(prop, 1, config.n_steps, config.record_stride)
    for idx in range(config.n_steps + 1):
        rec.on_state(idx, idx * config.dt, frames[idx][None])
    prov = dict(provenance or {})
    return rec.trajectory(0, config, prov)


def shifted_diffusion_argument(
    z_coeffs: np.ndarray, u0_coeffs: np.ndarray, epsilon: float
) -> np.ndarray:
    """State at which the diffusion coefficient is evaluated for the shifted process."""
    return math.sqrt(2.0 * epsilon * loglog(epsilon)) * z_coeffs + u0_coeffs


def solve_tilde_z(
    h: Control,
    u_eps_traj: Trajectory,
    u0_traj: Trajectory,
    epsilon: float,
    seed: int | None,
    config: SimConfig,
    provenance: dict | None = None,
) -> Trajectory:
    """Integrate the shifted fluctuation process along a recorded noisy path.

    The drift couples to the recorded noisy solution and the deterministic
    limit; the diffusion coefficient is evaluated at the recentred state.
    `seed` is the noise substream; None runs the degenerate zero-noise mode.
    """
    ll = loglog(epsilon)
    _require_solver_grid(u0_traj, config, "deterministic trajectory")
    _require_solver_grid(u_eps_traj, config, "noisy trajectory")
    h_values = _control_values_on_steps(h, config)
    model = config.noise
    prop = Propagator(config.grid, config.dt)
    n = config.n_steps
    inv_sq = 1.0 / math.sqrt(2.0 * ll)
    if seed is None:
        normals = np.zeros((n, model.n_directions))
    else:
        normals = substream(seed, 0).standard_normal((n, model.n_directions))
    sqrt_lam_dt = np.sqrt(model.eigenvalues * config.dt)
    rec = _Recorder(prop, 1, n, config.record_stride)
    S = config.grid.n_coeff
    z = np.zeros((2, S, S), dtype=np.complex128)
    rec.on_state(0, 0.0, z[None])
    for step in range(n):
        t = step * config.dt
        arg = shifted_diffusion_argument(z, u0_traj.frames[step], epsilon)
        rhs = sigma_apply_array(model, t, arg, h_values[step])
        if config.nonlinear:
            rhs = rhs - advection_array(
                config.grid, u_eps_traj.frames[step], z
            ) - advection_array(config.grid, z, u0_traj.frames[step])
        dW = normals[step] * sqrt_lam_dt
        noise = sigma_apply_array(model, t, arg, dW)
        z = prop.decay * z + prop.phi * rhs + prop.phi_rate * (inv_sq * noise)
        _blowup_guard(z, config.blowup_factor, step)
        rec.on_state(step + 1, t + config.dt, z[None])
    prov = dict(provenance or {})
    prov.setdefault("epsilon", epsilon)
    prov.setdefault("seed", seed)
    return rec.trajectory(0, config, prov)


def _auto_chunk(requested: int | None, n_steps: int, n_dirs: int) -> int:
    budget_floats = 8_000_000
    per_path = max(1, n_steps * n_dirs)
    cap = max(1, budget_floats // per_path)
    return max(1, min(requested or 256, cap))


def ensemble_run(
    config: SimConfig,
    seed: int,
    n_paths: int,
    observer_factory: Callable[[], object],
    chunk: int | None = None,
    normal_source: Callable[[int], np.ndarray] | None = None,
) -> dict:
    """Integrate n_paths independent paths, merging per-path observer output.

    Path i consumes substream(seed, i) unless normal_source provides its
    standard-normal array of shape (n_steps, J) (used for common-noise
    couplings across parameter grids).  The observer factory is invoked per
    chunk; each observer must implement on_start(prop, n, n_steps), optional
    on_noise(step, dW), on_state(idx, t, coeffs), and finish() -> dict of
    arrays with leading axis n.  Results are concatenated across chunks, so
    output is independent of the chunk size.
    """
    J = config.noise.n_directions
    n_steps = config.n_steps
    size = _auto_chunk(chunk, n_steps, J)
    merged: dict[str, list[np.ndarray]] = {}
    start = 0
    while start < n_paths:
        stop = min(start + size, n_paths)
        count = stop - start
        if config.epsilon > 0.0 or normal_source is not None:
            normals = np.empty((count, n_steps, J))
            for i in range(count):
                idx = start + i
                if normal_source is not None:
                    normals[i] = normal_source(idx)
                else:
                    normals[i] = substream(seed, idx).standard_normal((n_steps, J))
        else:
            normals = None
        state = np.broadcast_to(
            _initial_coeffs(config), (count, 2, config.grid.n_coeff, config.grid.n_coeff)
        ).copy()
        obs = observer_factory()
        obs.on_start(Propagator(config.grid, config.dt), count, n_steps)
        _integrate_batch(config, state, normals, obs)
        for key, val in obs.finish().items():
            merged.setdefault(key, []).append(val)
        start = stop
    return {k: np.concatenate(v, axis=0) for k, v in merged.items()}


def shifted_ensemble_run(
    config: SimConfig,
    h: Control,
    epsilon: float,
    u0_traj: Trajectory,
    seed: int,
    n_paths: int,
    observer_factory: Callable[[], object],
    chunk: int | None = None,
) -> dict:
    """Co-integrate (noisy solution, shifted fluctuation) pairs on shared noise.

    The observer sees the shifted process: on_state(idx, t, z_coeffs) with a
    leading path axis.  Used by the moment studies for the shifted process.
    """
    ll = loglog(epsilon)
    _require_solver_grid(u0_traj, config, "deterministic trajectory")
    h_values = _control_values_on_steps(h, config)
    model = config.noise
    prop = Propagator(config.grid, config.dt)
    n_steps = config.n_steps
    J = model.n_directions
    inv_sq = 1.0 / math.sqrt(2.0 * ll)
    sqrt_eps = math.sqrt(epsilon)
    sqrt_lam_dt = np.sqrt(model.eigenvalues * config.dt)
    S = config.grid.n_coeff
    size = _auto_chunk(chunk, n_steps, J)
    merged: dict[str, list[np.ndarray]] = {}
    cfg_eps = config.with_epsilon(epsilon)
    start = 0
    while start < n_paths:
        stop = min(start + size, n_paths)
        count = stop - start
        normals = np.empty((count, n_steps, J))
        for i in range(count):
            normals[i] = substream(seed, start + i).standard_normal((n_steps, J))
        u = np.broadcast_to(_initial_coeffs(config), (count, 2, S, S)).copy()
        z = np.zeros((count, 2, S, S), dtype=np.complex128)
        obs = observer_factory()
        obs.on_start(prop, count, n_steps)
        if hasattr(obs, "on_state"):
            obs.on_state(0, 0.0, z)
        guard = cfg_eps.blowup_factor * max(np.max(np.abs(u)), 1.0 / TWO_PI, 1.0)
        for step in range(n_steps):
            t = step * config.dt
            dW = normals[:, step, :] * sqrt_lam_dt
            forcing = _forcing_at(cfg_eps, t)
            u_new = _step_array(prop, u, forcing, cfg_eps.nonlinear)
            u_noise = sigma_apply_array(model, t, u, dW)
            u_new = u_new + prop.phi_rate * (sqrt_eps * u_noise)
            arg = shifted_diffusion_argument(z, u0_traj.frames[step], epsilon)
            rhs = sigma_apply_array(model, t, arg, np.broadcast_to(h_values[step], dW.shape))
            if cfg_eps.nonlinear:
                rhs = rhs - advection_array(config.grid, u, z) - advection_array(
                    config.grid, z, u0_traj.frames[step]
                )
            z_noise = sigma_apply_array(model, t, arg, dW)
            z = prop.decay * z + prop.phi * rhs + prop.phi_rate * (inv_sq * z_noise)
            u = u_new
            _blowup_guard(u, guard, step)
            _blowup_guard(z, guard, step)
            if hasattr(obs, "on_state"):
                obs.on_state(step + 1, t + config.dt, z)
        for key, val in obs.finish().items():
            merged.setdefault(key, []).append(val)
        start = stop
    return {k: np.concatenate(v, axis=0) for k, v in merged.items()}


class TrajectoryObserver:
    """Observer that materializes light trajectories for every path."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.rec: _Recorder | None = None

    def on_start(self, prop: Propagator, n_paths: int, n_steps: int):
        self.rec = _Recorder(prop, n_paths, n_steps, self.config.record_stride)

    def on_state(self, idx, t, coeffs):
        self.rec.on_state(idx, t, coeffs)

    def finish(self) -> dict:
        r = self.rec
        n = r.frames.shape[0]
        return {
            "frames": r.frames,
            "h2": r.h2,
            "v2": r.v2,
            "sup_h2": r.sup_h2,
            "int_v2": r.int_v2,
            "times": np.broadcast_to(r.times, (n, len(r.times))).copy(),
        }


def trajectories_from_ensemble(result: dict, config: SimConfig, seed: int) -> list[Trajectory]:
    out = []
    for i in range(result["frames"].shape[0]):
        out.append(
            Trajectory(
                grid=config.grid,
                dt=config.dt,
                record_stride=config.record_stride,
                times=result["times"][i],
                frames=result["frames"][i],
                h2=result["h2"][i],
                v2=result["v2"][i],
                sup_h2=float(result["sup_h2"][i]),
                int_v2=float(result["int_v2"][i]),
                provenance={"seed": seed, "path": i, "epsilon": config.epsilon},
            )
        )
    return out
