"""Iterated-logarithm studies: cluster-set behavior of the rescaled
fluctuation and the normalized-ratio statistics.

Almost-sure limit statements are not desk-verifiable; these studies replace
them by finite surrogates.  The cluster study measures distances from the
rescaled fluctuation to a finite probe of the unit rate-ball (a certified
upper bound on the distance to the true limit set, refinable by adding
candidates), using one Brownian scaffold per replicate rescaled across the
geometric noise schedule.  The ratio study reports trends and quantiles of
the normalized deviation ratio without asserting limit values: the ratio is a
norm over a positive scalar, so a negative lower limit is impossible, and no
specific limit is claimed for the upper one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .deviation import ConstantsLedger, energy_distance
from .noise import Control, control_energy
from .rng import substream
from .solvers import (
    LOGLOG_LIMIT,
    ParameterError,
    SimConfig,
    Trajectory,
    combine_trajectories,
    loglog,
    solve_deterministic,
    solve_skeleton,
)


@dataclass(frozen=True)
class GeometricSchedule:
    """Noise intensities eps_j = base^(-j) over an integer index window."""

    base: float
    j_min: int
    j_max: int

    def __post_init__(self):
        if self.base <= 1.0:
            raise ParameterError("schedule base must exceed 1")
        if self.j_min > self.j_max:
            raise ParameterError("empty schedule index range")
        if self.epsilon(self.j_min) >= LOGLOG_LIMIT:
            raise ParameterError(
                "largest schedule intensity must stay below exp(-e) so the "
                "iterated-logarithm scaling is defined"
            )

    def epsilon(self, j: int) -> float:
        return self.base ** (-j)

    @property
    def indices(self) -> list[int]:
        return list(range(self.j_min, self.j_max + 1))

    def check_admissible(self, ledger: ConstantsLedger) -> None:
        """Enforce the index floor implied by the admissibility threshold."""
        floor = math.log(1.0 / ledger.epsilon0) / math.log(self.base)
        if self.j_min <= floor:
            raise ParameterError(
                f"schedule start j_min={self.j_min} must exceed "
                f"log(1/eps0)/log(base) = {floor:.3f}"
            )


def z_process(u_eps_traj: Trajectory, u0_traj: Trajectory, epsilon: float) -> Trajectory:
    """Rescaled fluctuation (u_eps - u0) / sqrt(2 eps log log(1/eps))."""
    ll = loglog(epsilon)
    scale = 1.0 / math.sqrt(2.0 * epsilon * ll)
    return combine_trajectories(
        u_eps_traj,
        u0_traj,
        scale,
        -scale,
        provenance={"epsilon": epsilon, "kind": "rescaled_fluctuation"},
    )


@dataclass(frozen=True)
class LimitSetProbe:
    """Finite family of unit-rate-ball controls and their steered images.

    Every candidate control satisfies half-energy <= 1, so each image lies in
    the limit set; the minimum distance over candidates is an upper bound on
    the distance to the set, nonincreasing under refinement.
    """

    controls: tuple[Control, ...]
    images: tuple[Trajectory, ...]
    tolerance: float

    def __post_init__(self):
        if len(self.controls) != len(self.images) or not self.controls:
            raise ParameterError("probe needs matching, nonempty controls and images")
        for h in self.controls:
            if 0.5 * control_energy(h) > 1.0 + 1e-12:
                raise ParameterError(
                    "probe control exceeds the unit rate ball "
                    f"(half-energy {0.5 * control_energy(h):.6f})"
                )

    @property
    def size(self) -> int:
        return len(self.controls)

    def refined(self, extra_controls, extra_images) -> "LimitSetProbe":
        return LimitSetProbe(
            self.controls + tuple(extra_controls),
            self.images + tuple(extra_images),
            self.tolerance,
        )


def limit_set_distance(z: Trajectory, probe: LimitSetProbe) -> tuple[float, int]:
    """Min trajectory-norm distance to the probe images and the nearest index."""
    best = math.inf
    best_i = -1
    for i, g in enumerate(probe.images):
        d = energy_distance(z, g)
        if d < best:
            best, best_i = d, i
    return best, best_i


def _time_shapes(n_cells: int, horizon: float, n_shapes: int) -> list[np.ndarray]:
    """Low-order temporal profiles sampled as piecewise-constant cell values."""
    mids = (np.arange(n_cells) + 0.5) * (horizon / max(n_cells, 1))
    shapes = [np.ones(n_cells)]
    freq = 1
    while len(shapes) < n_shapes:
        shapes.append(np.sin(math.pi * freq * mids / horizon))
        if len(shapes) < n_shapes:
            shapes.append(np.cos(math.pi * freq * mids / horizon))
        freq += 1
    return shapes[:n_shapes]


def build_probe(
    config: SimConfig,
    u0_traj: Trajectory,
    directions: list[int] | None = None,
    n_shapes: int = 2,
    tolerance: float = 0.5,
    include_zero: bool = True,
) -> LimitSetProbe:
    """Probe from per-direction temporal profiles rescaled to the rate-ball
    boundary, plus optionally the zero element (which always belongs)."""
    model = config.noise
    dirs = directions if directions is not None else list(range(model.n_directions))
    n_cells = max(config.n_steps, 1)
    shapes = _time_shapes(n_cells, config.horizon, n_shapes)
    controls: list[Control] = []
    if include_zero:
        controls.append(Control(model, config.horizon, np.zeros((n_cells, model.n_directions))))
    for j in dirs:
        for shape in shapes:
            values = np.zeros((n_cells, model.n_directions))
            values[:, j] = shape
            h = Control(model, config.horizon, values)
            energy = control_energy(h)
            if energy <= 0:
                continue
            controls.append(
                Control(model, config.horizon, values * math.sqrt(2.0 / energy))
            )
    images = [solve_skeleton(h, u0_traj, config) for h in controls]
    return LimitSetProbe(tuple(controls), tuple(images), tolerance)


@dataclass
class ClusterReport:
    tolerance: float
    rows: list[dict]
    candidate_hit_fraction: list[float]
    running_max_distance: float

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "rows": [dict(r) for r in self.rows],
            "candidate_hit_fraction": list(self.candidate_hit_fraction),
            "running_max_distance": self.running_max_distance,
        }


def _scaffold_source(seed: int, rep: int, n_steps: int, n_dirs: int):
    """One pool of standard normals per replicate, reused across the schedule."""
    return substream(seed, rep).standard_normal((n_steps, n_dirs))


def _cluster_replicate(args) -> list[dict]:
    schedule, probe, config, u0_rec, seed, rep = args
    normals = _scaffold_source(
        seed, rep, config.n_steps, config.noise.n_directions
    )
    rows = []
    for j in schedule.indices:
        eps = schedule.epsilon(j)
        traj = _solve_with_normals(config.with_epsilon(eps), normals)
        z = z_process(traj, u0_rec, eps)
        dist, nearest = limit_set_distance(z, probe)
        rows.append(
            {
                "replicate": rep,
                "j": j,
                "epsilon": eps,
                "distance": dist,
                "nearest": nearest,
                "within_tolerance": bool(dist <= probe.tolerance),
            }
        )
    return rows


def _parallel_map(fn, arg_list, workers: int) -> list:
    if workers <= 1 or len(arg_list) <= 1:
        return [fn(a) for a in arg_list]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, arg_list))


def strassen_cluster_study(
    schedule: GeometricSchedule,
    probe: LimitSetProbe,
    n_reps: int,
    config: SimConfig,
    seed: int,
    workers: int = 1,
) -> ClusterReport:
    """Distances from the rescaled fluctuation to the probe along the schedule.

    Each replicate reuses one underlying Brownian scaffold across all schedule
    indices (the noise is rescaled, not redrawn), mirroring the geometric
    coupling of the schedule and reducing cross-index variance.  Replicates
    are independent workers; results merge deterministically by replicate
    index regardless of the worker count.
    """
    u0_rec = solve_deterministic(config)
    arg_list = [(schedule, probe, config, u0_rec, seed, rep) for rep in range(n_reps)]
    per_rep = _parallel_map(_cluster_replicate, arg_list, workers)
    rows = [row for sub in per_rep for row in sub]
    hits = np.zeros(probe.size)
    running_max = 0.0
    for row in rows:
        running_max = max(running_max, row["distance"])
        if row["within_tolerance"]:
            hits[row["nearest"]] += 1
    frac = (hits / max(len(rows), 1)).tolist()
    return ClusterReport(
        tolerance=probe.tolerance,
        rows=rows,
        candidate_hit_fraction=frac,
        running_max_distance=running_max,
    )


def _solve_with_normals(config: SimConfig, normals: np.ndarray) -> Trajectory:
    """Single-path solve driven by a fixed standard-normal pool."""
    from .solvers import ensemble_run, trajectories_from_ensemble, TrajectoryObserver

    out = ensemble_run(
        config,
        seed=0,
        n_paths=1,
        observer_factory=lambda: TrajectoryObserver(config),
        normal_source=lambda i: normals,
    )
    return trajectories_from_ensemble(out, config, seed=-1)[0]


@dataclass
class RatioReport:
    rows: list[dict]
    per_j_quantiles: list[dict]
    running_max: float
    running_min: float
    trend_slope: float

    def to_dict(self) -> dict:
        return {
            "rows": [dict(r) for r in self.rows],
            "per_j_quantiles": [dict(q) for q in self.per_j_quantiles],
            "running_max": self.running_max,
            "running_min": self.running_min,
            "trend_slope": self.trend_slope,
        }


def _ratio_replicate(args) -> list[dict]:
    from .deviation import deviation_energy_samples

    schedule, config, u0_full, seed, rep = args
    normals = _scaffold_source(seed, rep, config.n_steps, config.noise.n_directions)
    rows = []
    for j in schedule.indices:
        eps = schedule.epsilon(j)
        dist = deviation_energy_samples(
            config, eps, u0_full, 1, seed, normal_source=lambda i: normals
        )[0]
        ratio = dist / math.sqrt(2.0 * eps * loglog(eps))
        rows.append({"replicate": rep, "j": j, "epsilon": eps, "ratio": ratio})
    return rows


def classical_ratio_study(
    schedule: GeometricSchedule,
    n_reps: int,
    config: SimConfig,
    seed: int,
    workers: int = 1,
) -> RatioReport:
    """Normalized deviation ratios along the schedule: per-replicate running
    extremes, per-index quantiles, and the regression trend in the index.

    The report presents the observed trend only; it asserts no limit values
    for the ratio.
    """
    u0_full = solve_deterministic(replace(config, record_stride=1))
    arg_list = [(schedule, config, u0_full, seed, rep) for rep in range(n_reps)]
    per_rep = _parallel_map(_ratio_replicate, arg_list, workers)
    rows = [row for sub in per_rep for row in sub]
    per_j: dict[int, list[float]] = {j: [] for j in schedule.indices}
    for row in rows:
        per_j[row["j"]].append(row["ratio"])
    quantiles = []
    for j in schedule.indices:
        arr = np.array(per_j[j])
        quantiles.append(
            {
                "j": j,
                "epsilon": schedule.epsilon(j),
                "q10": float(np.quantile(arr, 0.10)),
                "q50": float(np.quantile(arr, 0.50)),
                "q90": float(np.quantile(arr, 0.90)),
                "mean": float(np.mean(arr)),
            }
        )
    all_ratios = np.array([r["ratio"] for r in rows])
    js = np.array([r["j"] for r in rows], dtype=float)
    if len(rows) > 1 and np.ptp(js) > 0:
        slope = float(np.polyfit(js, all_ratios, 1)[0])
    else:
        slope = 0.0
    return RatioReport(
        rows=rows,
        per_j_quantiles=quantiles,
        running_max=float(np.max(all_ratios)),
        running_min=float(np.min(all_ratios)),
        trend_slope=slope,
    )
