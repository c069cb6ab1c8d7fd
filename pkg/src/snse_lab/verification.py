"""Cross-module invariant suite runnable from the command line.

Each check returns a row (name, passed, value, threshold, detail); the CLI
renders one line per row and exits nonzero if any row fails.  The suite
includes a deliberate negative control: a field with divergence injected must
be caught by the divergence checker, with the offending mode named.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .deviation import (
    OptParams,
    rate_gradient_check,
)
from .noise import (
    Control,
    NoiseModel,
    control_energy,
    verify_assumptions,
    wiener_increment,
)
from .rng import substream
from .solvers import SimConfig, solve_deterministic, solve_snse
from .spectral import (
    SpectralField,
    advection_form,
    advection_term,
    apply_stokes,
    divergence_defect,
    norm_bundle,
    random_solenoidal_field,
    leray_project,
    worst_divergence_mode,
)


@dataclass
class CheckRow:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


def _rel_divergence(field: SpectralField) -> float:
    div, amp = divergence_defect(field)
    return div / max(amp, 1e-300)


def run_invariant_suite(config: SimConfig, seed: int = 0) -> list[CheckRow]:
    rows: list[CheckRow] = []
    grid = config.grid
    rng = substream(seed, 1)

    # spectral identities on random fields
    worst_proj = 0.0
    worst_anti = 0.0
    worst_orth = 0.0
    worst_stokes = 0.0
    interp_const = 0.0
    for _ in range(100):
        u = random_solenoidal_field(grid, rng)
        v = random_solenoidal_field(grid, rng)
        w = random_solenoidal_field(grid, rng)
        worst_proj = max(worst_proj, _rel_divergence(advection_term(u, v)))
        buvw = advection_form(u, v, w)
        buwv = advection_form(u, w, v)
        worst_anti = max(worst_anti, abs(buvw + buwv) / (abs(buvw) + 1.0))
        nb_u, nb_v = norm_bundle(u), norm_bundle(v)
        orth = abs(float(np.vdot(advection_term(u, v).coeffs, v.coeffs).real))
        worst_orth = max(
            worst_orth, orth * (2 * math.pi) ** 2 / (nb_u.v_norm * nb_v.v_norm**2)
        )
        au = apply_stokes(u)
        aun = float(np.vdot(au.coeffs, u.coeffs).real) * (2 * math.pi) ** 2
        worst_stokes = max(worst_stokes, abs(aun - nb_u.v_norm_sq) / nb_u.v_norm_sq)
        interp_const = max(
            interp_const, nb_u.l4_norm**4 / (nb_u.h_norm_sq * nb_u.v_norm_sq)
        )
    rows.append(CheckRow("advection_divergence_free", worst_proj <= 1e-12, worst_proj, 1e-12))
    rows.append(CheckRow("trilinear_antisymmetry", worst_anti <= 1e-10, worst_anti, 1e-10))
    rows.append(CheckRow("advection_energy_orthogonality", worst_orth <= 1e-10, worst_orth, 1e-10))
    rows.append(CheckRow("stokes_consistency", worst_stokes <= 1e-10, worst_stokes, 1e-10))
    rows.append(
        CheckRow(
            "interpolation_constant",
            np.isfinite(interp_const) and interp_const > 0,
            interp_const,
            math.inf,
            "fitted constant in the L4 interpolation inequality",
        )
    )

    # idempotence of the projection
    u = random_solenoidal_field(grid, rng)
    twice = leray_project(grid, u.coeffs)
    idem = float(np.max(np.abs(twice.coeffs - u.coeffs))) / max(
        float(np.max(np.abs(u.coeffs))), 1e-300
    )
    rows.append(CheckRow("leray_idempotence", idem <= 1e-13, idem, 1e-13))

    # negative control: an injected divergence must be reported
    bad = u.copy_coeffs()
    K = grid.max_wavenumber
    bad[0, K, K + 1] += 0.5  # mode (1, 0), velocity parallel to k
    bad[0, K, K - 1] += 0.5
    corrupted = SpectralField(grid, bad)
    kx, ky, amp = worst_divergence_mode(corrupted)
    caught = _rel_divergence(corrupted) > 1e-12 and (kx, ky) in ((1, 0), (-1, 0))
    rows.append(
        CheckRow(
            "corrupted_field_detected",
            caught,
            _rel_divergence(corrupted),
            1e-12,
            f"offending mode ({kx}, {ky}), amplitude {amp:.3e}",
        )
    )

    # noise family constants
    report = verify_assumptions(config.noise, 200, substream(seed, 2))
    rows.append(
        CheckRow(
            "sigma_family_constants",
            report.ok,
            report.bound_est,
            report.declared["bound"] * 1.05,
            f"violations: {list(report.violations)}" if not report.ok else "",
        )
    )
    sigma_field = config.noise.basis_field(0)
    rows.append(
        CheckRow(
            "sigma_output_divergence_free",
            _rel_divergence(sigma_field) <= 1e-12,
            _rel_divergence(sigma_field),
            1e-12,
        )
    )

    # Wiener increment variance against the spectrum
    model = config.noise
    draws = wiener_increment(model, config.dt, substream(seed, 3), size=20000)
    var = np.var(draws, axis=0)
    expected = model.eigenvalues * config.dt
    se = expected * math.sqrt(2.0 / 20000)
    worst_z = float(np.max(np.abs(var - expected) / se))
    rows.append(CheckRow("wiener_increment_variance", worst_z <= 4.0, worst_z, 4.0, "z-score"))

    # control energy invariance under refinement
    cells = max(config.n_steps // 10, 1)
    values = substream(seed, 4).standard_normal((cells, model.n_directions))
    h = Control(model, config.horizon, values)
    h_fine = Control(model, config.horizon, np.repeat(values, 10, axis=0))
    diff = abs(control_energy(h) - control_energy(h_fine))
    rows.append(CheckRow("control_energy_refinement", diff <= 1e-12, diff, 1e-12))

    # zero-noise reduction is bit exact
    short = replace(config, horizon=20 * config.dt, record_stride=1)
    det = solve_deterministic(short)
    sto = solve_snse(short.with_epsilon(0.0), seed=seed)
    bit_equal = bool(np.array_equal(det.frames, sto.frames))
    rows.append(CheckRow("zero_noise_reduction_bit_exact", bit_equal, float(not bit_equal), 0.0))

    # determinism of the stochastic solver
    eps = min(0.01, config.epsilon or 0.01)
    t1 = solve_snse(short.with_epsilon(eps), seed=seed)
    t2 = solve_snse(short.with_epsilon(eps), seed=seed)
    det_equal = bool(np.array_equal(t1.frames, t2.frames))
    rows.append(CheckRow("stochastic_determinism", det_equal, float(not det_equal), 0.0))

    # divergence preservation along a short nonlinear run
    if config.nonlinear and grid.supports_products():
        traj = solve_snse(short.with_epsilon(eps), seed=seed + 1)
        worst = 0.0
        for i in range(traj.n_records):
            worst = max(worst, _rel_divergence(traj.field_at(i)))
        rows.append(CheckRow("solver_divergence_preservation", worst <= 1e-12, worst, 1e-12))

    # adjoint gradient against central differences on a small instance
    small = _small_gradient_config(config)
    u0 = solve_deterministic(replace(small, record_stride=1))
    target = solve_skeleton_target(small, u0, seed)
    err = rate_gradient_check(target, u0, small, n_directions=5, seed=seed, opt=OptParams())
    rows.append(CheckRow("adjoint_gradient_check", err <= 1e-4, err, 1e-4))
    return rows


def _small_gradient_config(config: SimConfig) -> SimConfig:
    from .spectral import default_grid

    grid = default_grid(min(config.grid.max_wavenumber, 2))
    model = NoiseModel(
        grid=grid,
        spectrum_exponent=config.noise.spectrum_exponent,
        family=config.noise.family,
        params=config.noise.params,
    )
    return SimConfig(
        grid=grid,
        noise=model,
        horizon=40 * config.dt,
        dt=config.dt,
        epsilon=0.0,
        nonlinear=config.nonlinear,
        record_stride=1,
    )


def solve_skeleton_target(config: SimConfig, u0, seed: int):
    from .solvers import solve_skeleton

    rng = substream(seed, 5)
    values = 0.3 * rng.standard_normal((config.n_steps, config.noise.n_directions))
    h = Control(config.noise, config.horizon, values)
    return solve_skeleton(h, u0, config)
