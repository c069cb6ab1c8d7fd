"""Rate-functional evaluation, rare-event estimation, and moment studies.

The rate functional is evaluated by PDE-constrained optimization: half the
control energy plus a quadratic penalty on a smooth surrogate of the
trajectory-space distance, minimized by a quasi-Newton inner loop with
gradients from the discrete adjoint of the controlled linearization, under
penalty continuation.  Probabilities are naive Monte Carlo with Wilson
intervals; zero-hit events report a finite one-sided upper bound so that
log-probability plots stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .noise import (
    Control,
    control_energy,
    kernel_norm_sq,
    sigma_adjoint_array,
    sigma_apply_array,
)
from .rng import substream
from .solvers import (
    Propagator,
    SimConfig,
    Trajectory,
    TrajectoryObserver,
    ensemble_run,
    loglog,
    shifted_ensemble_run,
    skeleton_forward,
    solve_deterministic,
    _initial_coeffs,
    _step_array,
    _forcing_at,
)
from .spectral import (
    TWO_PI,
    advection_array,
    advection_gradient_transpose_array,
    a_norm_sq_array,
    h_norm_sq_array,
    to_physical,
    v_norm_sq_array,
)


class AdmissibilityError(ValueError):
    """Noise intensity outside the range the estimates are stated for."""


# ---------------------------------------------------------------------------
# constants ledger and admissibility thresholds


@dataclass(frozen=True)
class ConstantsLedger:
    """Positive constants of the assumption set; thresholds derive from them."""

    K1: float = 1.0
    K2: float = 1.0
    K3: float = 1.0
    K4: float = 1.0
    K5: float = 1.0
    K6: float = 1.0
    K7: float = 1.0
    K8: float = 1.0
    K9: float = 1.0

    def __post_init__(self):
        for name in "K1 K2 K3 K4 K5 K6 K7 K8 K9".split():
            if getattr(self, name) <= 0:
                raise AdmissibilityError(f"{name} must be positive")

    @property
    def epsilon0(self) -> float:
        return min(
            1.0 / (2.0 * self.K1 * self.K1),
            1.0 / (4.0 * self.K1),
            1.0 / (2.0 * self.K2),
            1.0 / (78.0 * self.K9),
        )

    @property
    def epsilon1(self) -> float:
        return min(
            1.0 / (2.0 * self.K1 * self.K1),
            1.0 / (4.0 * self.K1),
            1.0 / (2.0 * self.K2),
            1.0 / (36.0 * self.K9),
        )

    def epsilon2(self, p: float) -> float:
        if p < 1:
            raise AdmissibilityError("epsilon2 threshold requires p >= 1")
        return min(self.epsilon1, 1.0 / (self.K9 * (36.0 * p + 2.0)))

    def to_dict(self) -> dict:
        return {f"K{i}": getattr(self, f"K{i}") for i in range(1, 10)}


def epsilon_thresholds(ledger: ConstantsLedger, p: float = 1.0) -> tuple[float, float, float]:
    """The three admissibility thresholds (moment estimates hold below them)."""
    return ledger.epsilon0, ledger.epsilon1, ledger.epsilon2(p)


def require_admissible(epsilon: float, threshold: float, label: str) -> None:
    if not 0.0 < epsilon < threshold:
        raise AdmissibilityError(
            f"epsilon={epsilon} outside (0, {threshold:.6g}) required by {label}"
        )


# ---------------------------------------------------------------------------
# trajectory-space norms


def energy_norm_sq(traj: Trajectory) -> float:
    """Squared trajectory norm: sup of |u|^2 plus left-endpoint integral of ||u||^2."""
    out = float(np.max(traj.h2))
    if traj.n_records > 1:
        out += float(np.sum(traj.v2[:-1] * np.diff(traj.times)))
    return out


def energy_norm(traj: Trajectory) -> float:
    return math.sqrt(energy_norm_sq(traj))


def _frames_energy_sq(grid, times: np.ndarray, frames: np.ndarray) -> float:
    h2 = h_norm_sq_array(grid, frames)
    v2 = v_norm_sq_array(grid, frames)
    out = float(np.max(h2))
    if len(times) > 1:
        out += float(np.sum(v2[:-1] * np.diff(times)))
    return out


def energy_distance(a: Trajectory, b: Trajectory) -> float:
    """Trajectory-norm distance between two aligned trajectories."""
    if not a.aligned_with(b):
        raise ValueError("trajectories are not aligned")
    return math.sqrt(_frames_energy_sq(a.grid, a.times, a.frames - b.frames))


# ---------------------------------------------------------------------------
# rate functional by adjoint-based penalty optimization


@dataclass(frozen=True)
class OptParams:
    """Penalty-continuation settings for the rate optimizer."""

    feasibility_tol: float = 1e-4
    energy_cap: float = 1e3
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e12
    maxiter: int = 400
    gtol: float = 1e-12
    softmax_sharpness: float = 25.0


@dataclass
class RateResult:
    """Outcome of one rate-functional evaluation."""

    value: float
    control: Control
    residual: float
    surrogate_residual: float
    feasible: bool
    iterations: int
    grad_norm: float
    penalty: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "residual": self.residual,
            "surrogate_residual": self.surrogate_residual,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "penalty": self.penalty,
            "diagnostics": dict(self.diagnostics),
        }


class _SkeletonObjective:
    """Energy + penalty objective with gradients from the discrete adjoint.

    The sup part of the squared trajectory distance is replaced by a
    log-sum-exp with sharpness frozen at construction, so each inner solve
    optimizes a smooth function; the exact distance is reported separately.
    """

    def __init__(self, target_frames, u0_frames, config: SimConfig, opt: OptParams):
        self.config = config
        self.model = config.noise
        self.prop = Propagator(config.grid, config.dt)
        self.u0 = u0_frames
        self.v = target_frames
        self.n_steps = config.n_steps
        self.J = self.model.n_directions
        self.dt = config.dt
        self.lam = self.model.eigenvalues
        scale = max(float(np.max(h_norm_sq_array(config.grid, target_frames))), 1e-12)
        self.alpha = opt.softmax_sharpness / scale
        self.mu = opt.penalty_init
        self.nfev = 0

    def forward(self, h_values: np.ndarray) -> np.ndarray:
        return skeleton_forward(h_values, self.u0, self.config)

    def distance_parts(self, frames: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
        grid = self.config.grid
        e = frames - self.v
        x = h_norm_sq_array(grid, e)  # (N+1,)
        v2 = v_norm_sq_array(grid, e)
        x_star = float(np.max(x))
        w = np.exp(self.alpha * (x - x_star))
        lse = x_star + math.log(float(np.sum(w))) / self.alpha
        weights = w / float(np.sum(w))
        integral = float(np.sum(v2[:-1]) * self.dt)
        return lse, integral, e, weights

    def __call__(self, h_flat: np.ndarray) -> tuple[float, np.ndarray]:
        self.nfev += 1
        cfg = self.config
        grid = cfg.grid
        h_values = h_flat.reshape(self.n_steps, self.J)
        frames = self.forward(h_values)
        lse, integral, e, weights = self.distance_parts(frames)
        energy = float(np.sum(h_values**2 / self.lam) * self.dt)
        value = 0.5 * energy + 0.5 * self.mu * (lse + integral)
        # adjoint sweep: gradients paired through the L2 inner product
        k2 = grid.k2
        grad_h = h_values * (self.dt / self.lam)
        p = self.mu * weights[self.n_steps] * e[self.n_steps]
        for n in range(self.n_steps - 1, -1, -1):
            t = n * cfg.dt
            phi_p = self.prop.phi * p
            grad_h[n] += sigma_adjoint_array(self.model, t, self.u0[n], phi_p)
            p_next = self.prop.decay * p
            if cfg.nonlinear:
                u0n = self.u0[n]
                p_next = p_next + advection_array(grid, u0n, phi_p)
                p_next = p_next - advection_gradient_transpose_array(grid, u0n, phi_p)
            g_n = self.mu * (weights[n] * e[n] + self.dt * (k2 * e[n]))
            p = p_next + g_n
        return value, grad_h.ravel()


def rate_function(
    target: Trajectory,
    u0_traj: Trajectory,
    config: SimConfig,
    opt: OptParams = OptParams(),
) -> RateResult:
    """Half the minimal control energy steering the linearization to the target.

    Penalty continuation drives the trajectory-space residual below the
    feasibility tolerance; if the residual cannot be met before the energy cap
    or the penalty ceiling, the result is flagged infeasible (the unreachable
    branch of the rate function) and carries the best iterate.
    """
    from .solvers import _require_solver_grid

    _require_solver_grid(u0_traj, config, "deterministic trajectory")
    _require_solver_grid(target, config, "target trajectory")
    objective = _SkeletonObjective(target.frames, u0_traj.frames, config, opt)
    n, J = config.n_steps, config.noise.n_directions
    h = np.zeros(n * J)
    mu = opt.penalty_init
    iterations = 0
    grad_norm = math.inf
    feasible = False
    residual = math.inf
    surrogate = math.inf
    while True:
        objective.mu = mu
        res = minimize(
            objective,
            h,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": opt.maxiter, "gtol": opt.gtol, "ftol": 1e-16},
        )
        h = res.x
        iterations += int(res.nit)
        grad_norm = float(np.max(np.abs(res.jac)))
        h_values = h.reshape(n, J)
        frames = objective.forward(h_values)
        residual = math.sqrt(
            _frames_energy_sq(config.grid, target.times, frames - target.frames)
        )
        lse, integral, _, _ = objective.distance_parts(frames)
        surrogate = math.sqrt(max(lse + integral, 0.0))
        energy = float(np.sum(h_values**2 / objective.lam) * config.dt)
        if residual <= opt.feasibility_tol:
            feasible = True
            break
        if 0.5 * energy > opt.energy_cap:
            break
        if mu >= opt.penalty_max:
            break
        mu *= opt.penalty_growth
    h_values = h.reshape(n, J)
    control = Control(config.noise, config.horizon, h_values)
    energy = control_energy(control)
    return RateResult(
        value=0.5 * energy if feasible else math.inf,
        control=control,
        residual=residual,
        surrogate_residual=surrogate,
        feasible=feasible,
        iterations=iterations,
        grad_norm=grad_norm,
        penalty=mu,
        diagnostics={
            "best_half_energy": 0.5 * energy,
            "objective_evaluations": objective.nfev,
        },
    )


def rate_gradient_check(
    target: Trajectory,
    u0_traj: Trajectory,
    config: SimConfig,
    n_directions: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    opt: OptParams = OptParams(),
) -> float:
    """Max relative error of the adjoint gradient against central differences."""
    objective = _SkeletonObjective(target.frames, u0_traj.frames, config, opt)
    objective.mu = 1.0
    n = config.n_steps * config.noise.n_directions
    rng = substream(seed, 777)
    h0 = rng.standard_normal(n) * 0.1
    _, grad = objective(h0)
    worst = 0.0
    for _ in range(n_directions):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        fp, _ = objective(h0 + step * d)
        fm, _ = objective(h0 - step * d)
        fd = (fp - fm) / (2.0 * step)
        an = float(grad @ d)
        denom = max(abs(fd), abs(an), 1e-14)
        worst = max(worst, abs(fd - an) / denom)
    return worst


def max_energy_response(
    u0_traj: Trajectory,
    config: SimConfig,
    n_iter: int = 60,
    seed: int = 0,
    restarts: int = 3,
) -> tuple[float, np.ndarray]:
    """Largest trajectory-norm response per unit control energy.

    Power-type iteration on the Rayleigh ratio ||L h||_E^2 / ||h||_W^2 using
    the adjoint for the ascent direction, best of several restarts.  The value
    is attained by a feasible direction, so it is a certified lower bound on
    the true ratio; it serves as the optimizer-side surrogate for the cheapest
    rate of exiting a trajectory-norm ball.
    """
    cfg = config
    grid = cfg.grid
    model = cfg.noise
    prop = Propagator(grid, cfg.dt)
    n, J = cfg.n_steps, model.n_directions
    w_diag = cfg.dt / model.eigenvalues

    def w_norm(hv):
        return math.sqrt(float(np.sum(hv**2 * w_diag)))

    best_value, best_h = 0.0, np.zeros((n, J))
    for restart in range(restarts):
        rng = substream(seed, 4242 + restart)
        h = rng.standard_normal((n, J))
        h /= w_norm(h)
        value = 0.0
        for _ in range(n_iter):
            frames = skeleton_forward(h, u0_traj.frames, cfg)
            x = h_norm_sq_array(grid, frames)
            v2 = v_norm_sq_array(grid, frames)
            value = float(np.max(x) + np.sum(v2[:-1]) * cfg.dt)
            n_star = int(np.argmax(x))
            grad_h = np.zeros_like(h)
            p = (1.0 if n_star == cfg.n_steps else 0.0) * frames[cfg.n_steps]
            for m in range(cfg.n_steps - 1, -1, -1):
                phi_p = prop.phi * p
                grad_h[m] = sigma_adjoint_array(
                    model, m * cfg.dt, u0_traj.frames[m], phi_p
                )
                p_next = prop.decay * p
                if cfg.nonlinear:
                    u0m = u0_traj.frames[m]
                    p_next = p_next + advection_array(grid, u0m, phi_p)
                    p_next = p_next - advection_gradient_transpose_array(
                        grid, u0m, phi_p
                    )
                g_m = cfg.dt * (grid.k2 * frames[m])
                if m == n_star:
                    g_m = g_m + frames[m]
                p = p_next + g_m
            ascent = grad_h / w_diag
            norm = w_norm(ascent)
            if norm == 0.0:
                break
            h = ascent / norm
        if value > best_value:
            best_value, best_h = value, h
    return best_value, best_h


# ---------------------------------------------------------------------------
# Monte Carlo estimation


@dataclass(frozen=True)
class ProbabilityEstimate:
    """Indicator-mean estimate with a Wilson interval.

    For zero hits, `upper_bound` is the exact one-sided (1 - alpha) bound
    1 - alpha**(1/n), keeping log-probability summaries finite.
    """

    n: int
    hits: int
    p_hat: float
    lo: float
    hi: float
    upper_bound: float
    alpha: float = 0.05

    @property
    def zero_hit(self) -> bool:
        return self.hits == 0

    def log_p_or_bound(self) -> float:
        return math.log(self.p_hat) if self.hits > 0 else math.log(self.upper_bound)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "hits": self.hits,
            "p_hat": self.p_hat,
            "lo": self.lo,
            "hi": self.hi,
            "upper_bound": self.upper_bound,
            "alpha": self.alpha,
        }


def wilson_interval(hits: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def estimate_from_hits(hits: int, n: int, alpha: float = 0.05) -> ProbabilityEstimate:
    lo, hi = wilson_interval(hits, n)
    upper = 1.0 - alpha ** (1.0 / n) if n > 0 else 1.0
    return ProbabilityEstimate(
        n=n, hits=hits, p_hat=hits / n if n else 0.0, lo=lo, hi=hi, upper_bound=upper
    )


class _PredicateObserver(TrajectoryObserver):
    """Evaluates an event on each path inside its chunk, keeping only booleans."""

    def __init__(self, config: SimConfig, event):
        super().__init__(config)
        self.event = event

    def finish(self) -> dict:
        data = super().finish()
        n = data["frames"].shape[0]
        hits = np.zeros(n, dtype=bool)
        for i in range(n):
            traj = Trajectory(
                grid=self.config.grid,
                dt=self.config.dt,
                record_stride=self.config.record_stride,
                times=data["times"][i],
                frames=data["frames"][i],
                h2=data["h2"][i],
                v2=data["v2"][i],
                sup_h2=float(data["sup_h2"][i]),
                int_v2=float(data["int_v2"][i]),
            )
            hits[i] = bool(self.event(traj))
        return {"hit": hits}


def mc_probability(
    event,
    epsilon: float,
    n_samples: int,
    config: SimConfig,
    seed: int,
    chunk: int | None = None,
) -> ProbabilityEstimate:
    """Indicator-mean probability of a trajectory event; deterministic given seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cfg = config.with_epsilon(epsilon)
    out = ensemble_run(
        cfg, seed, n_samples, lambda: _PredicateObserver(cfg, event), chunk=chunk
    )
    hits = int(np.sum(out["hit"]))
    return estimate_from_hits(hits, n_samples)


# ---------------------------------------------------------------------------
# deviation observers (difference to a reference trajectory on the fly)


class DiffEnergyObserver:
    """Per-path trajectory-norm of (path - reference) on the recording grid."""

    def __init__(self, config: SimConfig, ref_frames_by_step: np.ndarray):
        self.config = config
        self.ref = ref_frames_by_step
        self.grid = config.grid

    def on_start(self, prop, n_paths, n_steps):
        self.n_steps = n_steps
        stride = self.config.record_stride
        self.record_steps = [
            i for i in range(n_steps + 1) if i % stride == 0 or i == n_steps
        ]
        R = len(self.record_steps)
        self.times = np.zeros(R)
        self.h2 = np.zeros((n_paths, R))
        self.v2 = np.zeros((n_paths, R))
        self._cursor = 0

    def on_state(self, idx, t, coeffs):
        if self._cursor < len(self.record_steps) and idx == self.record_steps[self._cursor]:
            d = coeffs - self.ref[idx]
            self.times[self._cursor] = t
            self.h2[:, self._cursor] = h_norm_sq_array(self.grid, d)
            self.v2[:, self._cursor] = v_norm_sq_array(self.grid, d)
            self._cursor += 1

    def finish(self) -> dict:
        sup = np.max(self.h2, axis=1)
        if len(self.times) > 1:
            integral = np.sum(self.v2[:, :-1] * np.diff(self.times), axis=1)
        else:
            integral = np.zeros_like(sup)
        return {"diff_energy_sq": sup + integral}


def deviation_energy_samples(
    config: SimConfig,
    epsilon: float,
    u0_traj_full: Trajectory,
    n_samples: int,
    seed: int,
    chunk: int | None = None,
    normal_source=None,
) -> np.ndarray:
    """Trajectory-norm samples of (noisy - deterministic) at noise level epsilon."""
    cfg = config.with_epsilon(epsilon)
    out = ensemble_run(
        cfg,
        seed,
        n_samples,
        lambda: DiffEnergyObserver(cfg, u0_traj_full.frames),
        chunk=chunk,
        normal_source=normal_source,
    )
    return np.sqrt(out["diff_energy_sq"])


# ---------------------------------------------------------------------------
# moderate-deviation scaling probe


@dataclass(frozen=True)
class ASpec:
    """Rescaling a(eps): the iterated-logarithm choice or a power law.

    Both satisfy a(eps) > 0 and a(eps)/sqrt(eps) -> infinity as eps -> 0,
    which is the regime the fluctuation rescaling is defined for.
    """

    kind: str = "lil"
    theta: float = 0.25

    def __post_init__(self):
        if self.kind not in ("lil", "power"):
            raise ValueError("a-spec kind must be 'lil' or 'power'")
        if self.kind == "power" and not 0.0 < self.theta < 0.5:
            raise ValueError("power-law a(eps) needs theta in (0, 1/2)")

    def value(self, epsilon: float) -> float:
        if self.kind == "lil":
            return 1.0 / math.sqrt(2.0 * loglog(epsilon))
        return epsilon**self.theta


@dataclass
class ScalingReport:
    radius: float
    a_spec: dict
    rows: list[dict]
    neg_rate: float | None
    gaps: list[float] | None
    gap_monotone: bool | None
    trend_slope: float

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "a_spec": dict(self.a_spec),
            "rows": [dict(r) for r in self.rows],
            "neg_rate": self.neg_rate,
            "gaps": list(self.gaps) if self.gaps is not None else None,
            "gap_monotone": self.gap_monotone,
            "trend_slope": self.trend_slope,
        }


def mdp_scaling_probe(
    radius: float,
    eps_grid,
    a_spec: ASpec,
    config: SimConfig,
    n_samples: int,
    seed: int,
    ledger: ConstantsLedger | None = None,
    chunk: int | None = None,
) -> ScalingReport:
    """Tabulate a(eps)^2 log P(||v^eps||_E >= r) across the grid.

    v^eps is the rescaled fluctuation (a/sqrt(eps)) (u^eps - u0).  Paths are
    coupled across the grid through common substreams, so in the additive
    linear regime the indicator sets are pathwise nested and the tabulated
    curve is exactly monotone in the threshold.  In the linear regime the
    optimizer surrogate for the cheapest rate in the event is included and the
    gap between the two curves is reported.
    """
    from dataclasses import replace

    eps_grid = sorted(float(e) for e in eps_grid)
    if ledger is not None:
        for e in eps_grid:
            require_admissible(e, ledger.epsilon0, "the scaling-probe threshold")
    u0 = solve_deterministic(replace(config, record_stride=1))
    rows = []
    for eps in reversed(eps_grid):  # largest to smallest
        a = a_spec.value(eps)
        dist = deviation_energy_samples(config, eps, u0, n_samples, seed, chunk=chunk)
        scaled = (a / math.sqrt(eps)) * dist
        if radius <= 0.0:
            est = estimate_from_hits(n_samples, n_samples)
        else:
            est = estimate_from_hits(int(np.sum(scaled >= radius)), n_samples)
        y = a * a * est.log_p_or_bound()
        rows.append(
            {
                "epsilon": eps,
                "a": a,
                "p_hat": est.p_hat,
                "lo": est.lo,
                "hi": est.hi,
                "zero_hit": est.zero_hit,
                "upper_bound": est.upper_bound,
                "a2_log_p": y,
            }
        )
    rows.reverse()  # ascending epsilon
    neg_rate = None
    gaps = None
    gap_monotone = None
    if not config.nonlinear and radius > 0.0:
        sigma2, _ = max_energy_response(u0, config, seed=seed)
        rate_min = radius * radius / (2.0 * sigma2)
        neg_rate = -rate_min
        # gap per row, ordered from largest epsilon down (toward the limit)
        by_desc = sorted(rows, key=lambda r: -r["epsilon"])
        gaps = [abs(r["a2_log_p"] - neg_rate) for r in by_desc]
        gap_monotone = all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(len(gaps) - 1))
    xs = np.log([r["epsilon"] for r in rows])
    ys = np.array([r["a2_log_p"] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(rows) > 1 else 0.0
    return ScalingReport(
        radius=radius,
        a_spec={"kind": a_spec.kind, "theta": a_spec.theta},
        rows=rows,
        neg_rate=neg_rate,
        gaps=gaps,
        gap_monotone=gap_monotone,
        trend_slope=slope,
    )


# ---------------------------------------------------------------------------
# conditional deviation probe


@dataclass(frozen=True)
class FWConfig:
    """Thresholds for the conditional deviation probe.

    rho: trajectory-norm deviation threshold; eta: noise-closeness threshold;
    target_exponent: R in the comparison bound exp(-2 R log log(1/eps));
    increment_threshold/dyadic_depth parameterize the companion time-increment
    statistic.
    """

    rho: float
    eta: float
    target_exponent: float
    increment_threshold: float
    dyadic_depth: int
    eps_grid: tuple[float, ...]
    n_samples: int

    def __post_init__(self):
        if min(self.rho, self.eta, self.target_exponent, self.increment_threshold) <= 0:
            raise ValueError("all thresholds must be positive")
        if self.dyadic_depth < 0:
            raise ValueError("dyadic depth must be nonnegative")
        if not self.eps_grid:
            raise ValueError("epsilon grid must be nonempty")


class _ConditionalObserver:
    """Joint event pieces: fluctuation distance to the steered path and
    uniform closeness of the rescaled noise path to the control primitive."""

    def __init__(self, config, u0_frames, x_frames_rec, h_primitive, eps):
        self.config = config
        self.grid = config.grid
        self.u0 = u0_frames
        self.x_rec = x_frames_rec
        self.h_prim = h_primitive  # (n_steps + 1, J)
        self.eps = eps
        self.ll = loglog(eps)
        self.scale = 1.0 / math.sqrt(2.0 * eps * self.ll)
        self.w_scale = 1.0 / math.sqrt(2.0 * self.ll)

    def on_start(self, prop, n_paths, n_steps):
        self.n_steps = n_steps
        stride = self.config.record_stride
        self.record_steps = [
            i for i in range(n_steps + 1) if i % stride == 0 or i == n_steps
        ]
        R = len(self.record_steps)
        self.times = np.zeros(R)
        self.h2 = np.zeros((n_paths, R))
        self.v2 = np.zeros((n_paths, R))
        self.zframes = np.zeros(
            (n_paths, R, 2, self.grid.n_coeff, self.grid.n_coeff), dtype=np.complex128
        )
        self._cursor = 0
        J = self.config.noise.n_directions
        self.w_sum = np.zeros((n_paths, J))
        self.w_close_sq = np.zeros(n_paths)  # sup_t |w_scale W - int h|_0^2

    def on_noise(self, step, dW):
        self.w_sum += dW
        gap = self.w_scale * self.w_sum - self.h_prim[step + 1]
        q = kernel_norm_sq(self.config.noise, gap)
        np.maximum(self.w_close_sq, q, out=self.w_close_sq)

    def on_state(self, idx, t, coeffs):
        if self._cursor < len(self.record_steps) and idx == self.record_steps[self._cursor]:
            z = (coeffs - self.u0[idx]) * self.scale
            d = z - self.x_rec[self._cursor]
            self.times[self._cursor] = t
            self.h2[:, self._cursor] = h_norm_sq_array(self.grid, d)
            self.v2[:, self._cursor] = v_norm_sq_array(self.grid, d)
            self.zframes[:, self._cursor] = z
            self._cursor += 1

    def finish(self) -> dict:
        sup = np.max(self.h2, axis=1)
        if len(self.times) > 1:
            integral = np.sum(self.v2[:, :-1] * np.diff(self.times), axis=1)
        else:
            integral = np.zeros_like(sup)
        return {
            "dist_sq": sup + integral,
            "w_close_sq": self.w_close_sq,
            "z_frames": self.zframes,
            "z_times": np.broadcast_to(self.times, self.h2.shape).copy(),
        }


@dataclass
class FWReport:
    rows: list[dict]
    below_bound_at_smallest: bool

    def to_dict(self) -> dict:
        return {
            "rows": [dict(r) for r in self.rows],
            "below_bound_at_smallest": self.below_bound_at_smallest,
        }


def fw_conditional_probe(
    h: Control,
    fw: FWConfig,
    config: SimConfig,
    seed: int,
    ledger: ConstantsLedger | None = None,
    chunk: int | None = None,
) -> FWReport:
    """Estimate the probability that the rescaled fluctuation strays from the
    steered path while the rescaled noise stays near the control, per epsilon,
    against the exponential comparison bound."""
    from dataclasses import replace

    eps_grid = sorted(fw.eps_grid)
    if ledger is not None:
        for e in eps_grid:
            require_admissible(e, ledger.epsilon0, "the conditional-probe threshold")
    u0 = solve_deterministic(replace(config, record_stride=1))
    x_traj = _skeleton_at_recording(h, u0, config)
    times = config.dt * np.arange(config.n_steps + 1)
    h_prim = h.cumulative(times)
    rows = []
    for eps in eps_grid:
        cfg = config.with_epsilon(eps)
        out = ensemble_run(
            cfg,
            seed,
            fw.n_samples,
            lambda: _ConditionalObserver(cfg, u0.frames, x_traj.frames, h_prim, eps),
            chunk=chunk,
        )
        dist = np.sqrt(out["dist_sq"])
        close = np.sqrt(out["w_close_sq"])
        joint = (dist > fw.rho) & (close < fw.eta)
        est = estimate_from_hits(int(np.sum(joint)), fw.n_samples)
        bound = math.exp(-2.0 * fw.target_exponent * loglog(eps))
        # companion statistic: dyadic time-increment exceedances of the fluctuation
        inc_hits = 0
        z_times = out["z_times"][0]
        for i in range(out["z_frames"].shape[0]):
            stat = _dyadic_stat_frames(
                config.grid, z_times, out["z_frames"][i], fw.dyadic_depth
            )
            inc_hits += int(stat > fw.increment_threshold)
        inc_est = estimate_from_hits(inc_hits, fw.n_samples)
        comparison = est.p_hat if est.hits > 0 else est.upper_bound
        rows.append(
            {
                "epsilon": eps,
                "p_hat": est.p_hat,
                "lo": est.lo,
                "hi": est.hi,
                "zero_hit": est.zero_hit,
                "upper_bound": est.upper_bound,
                "bound": bound,
                "below_bound": bool(comparison <= bound),
                "increment_p_hat": inc_est.p_hat,
                "increment_upper_bound": inc_est.upper_bound,
            }
        )
    return FWReport(rows=rows, below_bound_at_smallest=bool(rows[0]["below_bound"]))


def _skeleton_at_recording(h: Control, u0_full: Trajectory, config: SimConfig):
    from .solvers import solve_skeleton

    return solve_skeleton(h, u0_full, config)


# ---------------------------------------------------------------------------
# dyadic time-increment statistic


def _dyadic_stat_frames(grid, times: np.ndarray, frames: np.ndarray, depth: int) -> float:
    R = len(times)
    cells = 2**depth
    if R < 2:
        raise ValueError("trajectory must have at least two records")
    steps = R - 1
    if cells > steps or steps % cells != 0:
        raise ValueError(
            f"dyadic depth {depth} ({cells} cells) incompatible with {steps} recorded steps"
        )
    dt_rec = np.diff(times)
    if not np.allclose(dt_rec, dt_rec[0], rtol=1e-9, atol=1e-12):
        raise ValueError("dyadic statistic requires a uniform recording grid")
    per_cell = steps // cells
    anchors = (np.arange(R) // per_cell).clip(max=cells - 1) * per_cell
    diff = frames - frames[anchors]
    h2 = h_norm_sq_array(grid, diff)
    v2 = v_norm_sq_array(grid, diff)
    return math.sqrt(float(np.max(h2) + np.sum(v2[:-1] * dt_rec)))


def dyadic_increment_stat(traj: Trajectory, depth: int) -> float:
    """Trajectory norm of t -> u(t) - u(left dyadic anchor of t) at given depth."""
    return _dyadic_stat_frames(traj.grid, traj.times, traj.frames, depth)


# ---------------------------------------------------------------------------
# moment-bound suite


class _MomentObserver:
    """Running moments of one ensemble: sup and integral functionals of powers."""

    def __init__(self, config: SimConfig, p_list, u0_frames=None):
        self.config = config
        self.grid = config.grid
        self.p_list = list(p_list)
        self.u0 = u0_frames

    def on_start(self, prop, n_paths, n_steps):
        self.prop = prop
        self.n_steps = n_steps
        n = n_paths
        self.sup_h2 = np.zeros(n)
        self.int_v2 = np.zeros(n)
        self.sup_h4 = np.zeros(n)
        self.int_h2v2 = np.zeros(n)
        self.sup_h2p = {p: np.zeros(n) for p in self.p_list}
        self.int_h2p = {p: np.zeros(n) for p in self.p_list}
        self.sup_v2p = {p: np.zeros(n) for p in self.p_list}
        self.int_a2 = np.zeros(n)
        self.sup_d2 = np.zeros(n)
        self.int_dv2 = np.zeros(n)

    def on_state(self, idx, t, coeffs):
        dt = self.config.dt
        h2 = h_norm_sq_array(self.grid, coeffs)
        v2 = v_norm_sq_array(self.grid, coeffs)
        np.maximum(self.sup_h2, h2, out=self.sup_h2)
        np.maximum(self.sup_h4, h2**2, out=self.sup_h4)
        for p in self.p_list:
            np.maximum(self.sup_h2p[p], h2**p, out=self.sup_h2p[p])
            np.maximum(self.sup_v2p[p], v2**p, out=self.sup_v2p[p])
        if idx < self.n_steps:
            self.int_v2 += self.prop.step_int_v2(coeffs)
            self.int_h2v2 += h2 * v2 * dt
            for p in self.p_list:
                self.int_h2p[p] += h2 ** (p - 1) * v2 * dt
            self.int_a2 += a_norm_sq_array(self.grid, coeffs) * dt
        if self.u0 is not None:
            d = coeffs - self.u0[idx]
            dh2 = h_norm_sq_array(self.grid, d)
            np.maximum(self.sup_d2, dh2, out=self.sup_d2)
            if idx < self.n_steps:
                self.int_dv2 += v_norm_sq_array(self.grid, d) * dt

    def finish(self) -> dict:
        out = {
            "sup_h2": self.sup_h2,
            "int_v2": self.int_v2,
            "sup_h4": self.sup_h4,
            "int_h2v2": self.int_h2v2,
            "int_a2": self.int_a2,
            "sup_d2": self.sup_d2,
            "int_dv2": self.int_dv2,
        }
        for p in self.p_list:
            out[f"sup_h2p_{p}"] = self.sup_h2p[p]
            out[f"int_h2p_{p}"] = self.int_h2p[p]
            out[f"sup_v2p_{p}"] = self.sup_v2p[p]
        return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


def _fit_exponent(eps: list[float], means: list[float]) -> float:
    xs = np.log(eps)
    ys = np.log(np.maximum(means, 1e-300))
    return float(np.polyfit(xs, ys, 1)[0]) if len(eps) > 1 else math.nan


@dataclass
class MomentReport:
    rows: list[dict]
    fits: dict
    deterministic: dict

    def to_dict(self) -> dict:
        return {
            "rows": [dict(r) for r in self.rows],
            "fits": {k: dict(v) for k, v in self.fits.items()},
            "deterministic": dict(self.deterministic),
        }


def first_order_remainder_samples(
    config: SimConfig,
    epsilon: float,
    u0_traj_full: Trajectory,
    n_samples: int,
    seed: int,
    chunk: int | None = None,
) -> np.ndarray:
    """sup-norm-squared samples of u^eps - u0 - sqrt(eps) Y, with Y the
    linearization of the dynamics around u0 driven by the same noise.

    In the additive linear regime the remainder vanishes identically; with the
    quadratic term on it measures the second-order part of the deviation.
    """
    cfg = config.with_epsilon(epsilon)
    model = cfg.noise
    prop = Propagator(cfg.grid, cfg.dt)
    n_steps = cfg.n_steps
    J = model.n_directions
    sqrt_eps = math.sqrt(epsilon)
    sqrt_lam_dt = np.sqrt(model.eigenvalues * cfg.dt)
    S = cfg.grid.n_coeff
    out = np.zeros(n_samples)
    size = max(1, min(chunk or 128, 8_000_000 // max(1, n_steps * J)))
    start = 0
    while start < n_samples:
        stop = min(start + size, n_samples)
        count = stop - start
        normals = np.empty((count, n_steps, J))
        for i in range(count):
            normals[i] = substream(seed, start + i).standard_normal((n_steps, J))
        u = np.broadcast_to(_initial_coeffs(cfg), (count, 2, S, S)).copy()
        y = np.zeros((count, 2, S, S), dtype=np.complex128)
        sup = np.zeros(count)
        for step in range(n_steps):
            t = step * cfg.dt
            dW = normals[:, step, :] * sqrt_lam_dt
            forcing = _forcing_at(cfg, t)
            u_new = _step_array(prop, u, forcing, cfg.nonlinear)
            u_new = u_new + prop.phi_rate * (
                sqrt_eps * sigma_apply_array(model, t, u, dW)
            )
            u0n = u0_traj_full.frames[step]
            rhs = np.zeros_like(y)
            if cfg.nonlinear:
                rhs = -advection_array(cfg.grid, y, u0n) - advection_array(
                    cfg.grid, u0n, y
                )
            y = (
                prop.decay * y
                + prop.phi * rhs
                + prop.phi_rate * sigma_apply_array(model, t, u0n, dW)
            )
            u = u_new
            rem = u - u0_traj_full.frames[step + 1] - sqrt_eps * y
            np.maximum(sup, h_norm_sq_array(cfg.grid, rem), out=sup)
        out[start:stop] = sup
        start = stop
    return out


def moment_bound_suite(
    eps_grid,
    p_list,
    n_samples: int,
    config: SimConfig,
    seed: int,
    ledger: ConstantsLedger | None = None,
    control: Control | None = None,
    with_remainder: bool = False,
    chunk: int | None = None,
) -> MomentReport:
    """Empirical expectations of every moment functional, regressed in epsilon.

    Rows report means and standard errors per (section, epsilon, p); fits give
    the log-log slope across the grid together with the stated power and the
    implied constant sup_eps mean / eps^stated.  Deterministic quantities
    (the zero-noise solution and steered-path bounds) are single numbers.
    """
    from .noise import zero_control
    from .solvers import solve_skeleton

    ledger = ledger or ConstantsLedger()
    eps_grid = sorted(float(e) for e in eps_grid)
    p_list = sorted(set([1.0] + [float(p) for p in p_list]))
    if p_list[0] < 1.0:
        raise AdmissibilityError("moment orders p must satisfy p >= 1")
    lemma_threshold = min(
        1.0 / (2.0 * ledger.K1 * ledger.K1),
        1.0 / (4.0 * ledger.K1),
        1.0 / (2.0 * ledger.K2),
    )
    for e in eps_grid:
        require_admissible(e, lemma_threshold, "the second-moment estimates")
        require_admissible(e, ledger.epsilon1, "the shifted-process estimates")
        for p in p_list:
            if p >= 2:
                require_admissible(e, 2.0 / (1.0 + 2.0 * p), "the 2p-moment estimate")
            require_admissible(e, ledger.epsilon2(max(p, 1.0)), "the shifted 2p-moment estimate")
    u0_full = solve_deterministic(
        SimConfig(
            grid=config.grid,
            noise=config.noise,
            horizon=config.horizon,
            dt=config.dt,
            epsilon=0.0,
            initial=config.initial,
            forcing=config.forcing,
            nonlinear=config.nonlinear,
            record_stride=1,
        )
    )
    h = control or zero_control(config.noise, config.horizon, max(config.n_steps, 1))
    rows: list[dict] = []
    sections: dict[str, dict[float, float]] = {}

    def add_row(section, eps, p, samples):
        m, se = _mean_se(samples)
        rows.append({"section": section, "epsilon": eps, "p": p, "mean": m, "se": se})
        if eps is not None:
            sections.setdefault(section, {})[eps] = m

    for eps in eps_grid:
        cfg = config.with_epsilon(eps)
        out = ensemble_run(
            cfg,
            seed,
            n_samples,
            lambda: _MomentObserver(cfg, [p for p in p_list], u0_full.frames),
            chunk=chunk,
        )
        add_row(
            "state_sup_sq_plus_int", eps, None, out["sup_h2p_1.0"] + out["int_h2p_1.0"]
        )
        add_row("state_fourth_moment", eps, None, out["sup_h4"] + out["int_h2v2"])
        add_row("deviation_sup_sq_plus_int", eps, None, out["sup_d2"] + out["int_dv2"])
        add_row(
            "grad_sup_plus_dissipation",
            eps,
            None,
            out["sup_v2p_1.0"] + eps * out["int_a2"],
        )
        for p in p_list:
            add_row(
                "state_moment_2p", eps, p, out[f"sup_h2p_{p}"] + out[f"int_h2p_{p}"]
            )
        zout = shifted_ensemble_run(
            config,
            h,
            eps,
            u0_full,
            seed,
            n_samples,
            lambda: _MomentObserver(config, [p for p in p_list]),
            chunk=chunk,
        )
        add_row(
            "shifted_sup_sq_plus_int",
            eps,
            None,
            zout["sup_h2p_1.0"] + zout["int_h2p_1.0"],
        )
        add_row("shifted_fourth_moment", eps, None, zout["sup_h4"] + zout["int_h2v2"])
        for p in p_list:
            add_row(
                "shifted_moment_2p", eps, p, zout[f"sup_h2p_{p}"] + zout[f"int_h2p_{p}"]
            )
        if with_remainder:
            rem = first_order_remainder_samples(
                config, eps, u0_full, n_samples, seed, chunk=chunk
            )
            add_row("second_order_remainder_sup_sq", eps, None, rem)

    stated = {
        "state_sup_sq_plus_int": 1.0,
        "state_fourth_moment": 1.0,
        "deviation_sup_sq_plus_int": 2.0,
        "grad_sup_plus_dissipation": 1.0,
        "second_order_remainder_sup_sq": 2.0,
    }
    fits = {}
    for section, by_eps in sections.items():
        eps_sorted = sorted(by_eps)
        means = [by_eps[e] for e in eps_sorted]
        entry = {"fitted_exponent": _fit_exponent(eps_sorted, means)}
        if section in stated:
            power = stated[section]
            entry["stated_power"] = power
            entry["implied_constant"] = max(
                m / e**power for e, m in zip(eps_sorted, means)
            )
        fits[section] = entry

    # deterministic quantities: the zero-noise solution and the steered path
    l4_int = _l4_integral(u0_full)
    det = {
        "u0_sup_sq_plus_int": u0_full.running_energy_sq,
        "u0_l4_integral": l4_int,
        "u0_interpolation_product": float(np.max(u0_full.h2)) * u0_full.int_v2,
        "u0_grad_sup": float(np.max(u0_full.v2)),
    }
    x_traj = solve_skeleton(h, u0_full, config)
    det["steered_sup_sq_plus_int"] = x_traj.running_energy_sq
    det["steered_grad_sup"] = float(np.max(x_traj.v2))
    return MomentReport(rows=rows, fits=fits, deterministic=det)


def _l4_integral(traj: Trajectory) -> float:
    """Left-endpoint integral of the fourth power of the L4 norm."""
    total = 0.0
    if traj.n_records < 2:
        return 0.0
    widths = np.diff(traj.times)
    phys = to_physical(traj.grid, traj.frames[:-1])
    speed_sq = phys[:, 0] ** 2 + phys[:, 1] ** 2
    per_frame = np.mean(speed_sq**2, axis=(-2, -1)) * TWO_PI**2
    total = float(np.sum(per_frame * widths))
    return total
