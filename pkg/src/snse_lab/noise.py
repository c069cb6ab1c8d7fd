"""Trace-class Wiener noise, diffusion-coefficient families, and controls.

The noise space is spanned by real divergence-free mode-pair fields: for each
representative wavevector k (half lattice, sorted by |k|) there is a cosine and
a sine direction, both unit-normalized in L2.  Covariance eigenvalues follow a
power law lambda_j = |k(j)|^(-2s), summable for s > 1, so the noise is trace
class.  Elements of the reproducing-kernel space of the covariance are handled
through their coefficient vectors over these directions; the kernel-space norm
weights coefficient j by 1/lambda_j.

Two diffusion-coefficient families are provided:

* ``additive``: fixed per-direction gains, independent of the state.
* ``saturated``: gains scaled by m(r) = s0 * r^2 / ((s0 + r) * max(r, delta))
  of the gradient norm r of the state; m is bounded by s0, grows at most
  linearly, and is globally Lipschitz, so boundedness, growth, and Lipschitz
  constants exist by construction and are reported rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    SpectralField,
    SpectralGrid,
    TWO_PI,
    v_norm_sq_array,
)


class NoiseConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SigmaParams:
    """Parameters of a diffusion-coefficient family.

    amplitude scales all gains; gain_decay is the per-mode power-law exponent
    g_j = amplitude * |k_j|^(-gain_decay).  saturation_scale (s0) and
    smoothing_delta only matter for the saturated family.
    """

    amplitude: float = 1.0
    gain_decay: float = 0.0
    saturation_scale: float = 1.0
    smoothing_delta: float = 0.1

    def __post_init__(self):
        if self.saturation_scale <= 0 or self.smoothing_delta <= 0:
            raise NoiseConfigError("saturation scale and delta must be positive")


def _half_lattice(K: int) -> list[tuple[int, int]]:
    """One representative per conjugate mode pair, sorted by |k|^2 then (ky, kx)."""
    reps = []
    for ky in range(-K, K + 1):
        for kx in range(-K, K + 1):
            if (ky > 0) or (ky == 0 and kx > 0):
                reps.append((kx, ky))
    reps.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[1], k[0]))
    return reps


@dataclass(frozen=True)
class NoiseModel:
    """Q-Wiener noise over divergence-free mode pairs plus a sigma family.

    Direction 2p is the cosine and 2p+1 the sine component of pair p; both
    share the eigenvalue |k_p|^(-2 * spectrum_exponent).
    """

    grid: SpectralGrid
    spectrum_exponent: float = 2.0
    num_directions: int | None = None
    family: str = "additive"
    params: SigmaParams = field(default_factory=SigmaParams)

    def __post_init__(self):
        if self.family not in ("additive", "saturated"):
            raise NoiseConfigError(f"unknown sigma family {self.family!r}")
        K = self.grid.max_wavenumber
        reps = _half_lattice(K)
        J_full = 2 * len(reps)
        J = J_full if self.num_directions is None else int(self.num_directions)
        if not (1 <= J <= J_full):
            raise NoiseConfigError(f"num_directions must be in [1, {J_full}]")
        n_pairs = (J + 1) // 2
        kvec = np.array(reps[:n_pairs], dtype=np.int64)  # (P, 2)
        kabs = np.sqrt((kvec**2).sum(axis=1).astype(np.float64))
        # rotate k by 90 degrees for the divergence-free direction
        direction = np.stack([-kvec[:, 1], kvec[:, 0]], axis=1) / kabs[:, None]
        lam_pair = kabs ** (-2.0 * self.spectrum_exponent)
        gain_pair = self.params.amplitude * kabs ** (-self.params.gain_decay)
        lam = np.repeat(lam_pair, 2)[:J]
        gains = np.repeat(gain_pair, 2)[:J]
        S = self.grid.n_coeff
        pos_plus = (K + kvec[:, 1]) * S + (K + kvec[:, 0])
        pos_minus = (K - kvec[:, 1]) * S + (K - kvec[:, 0])
        for name, arr in (
            ("eigenvalues", lam),
            ("gains", gains),
            ("pair_k", kvec),
            ("pair_abs_k", kabs),
            ("pair_direction", direction),
            ("_pos_plus", pos_plus),
            ("_pos_minus", pos_minus),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_directions", J)
        object.__setattr__(self, "n_pairs", n_pairs)
        # unit L2 normalization of cos/sin mode-pair fields on the torus
        object.__setattr__(self, "_basis_amp", np.sqrt(2.0) / TWO_PI)

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    def basis_field(self, j: int) -> SpectralField:
        """The j-th noise direction as a unit-L2 divergence-free field."""
        xi = np.zeros(self.n_directions)
        xi[j] = 1.0
        return SpectralField(self.grid, scatter_coefficients(self, xi))


def _pair_complex(model: NoiseModel, xi: np.ndarray) -> np.ndarray:
    """Combine (cos, sin) coefficients into one complex amplitude per pair."""
    J, P = model.n_directions, model.n_pairs
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != J:
        raise NoiseConfigError(
            f"coefficient vector has length {xi.shape[-1]}, expected {J}"
        )
    if J < 2 * P:
        xi = np.concatenate([xi, np.zeros(xi.shape[:-1] + (2 * P - J,))], axis=-1)
    return 0.5 * model._basis_amp * (xi[..., 0::2] - 1j * xi[..., 1::2])


def scatter_coefficients(
    model: NoiseModel, xi: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Field coefficients of sum_j xi_j w_j e_j; batched over leading axes."""
    xi = np.asarray(xi)
    if xi.shape[-1] != model.n_directions:
        raise NoiseConfigError(
            f"coefficient vector has length {xi.shape[-1]}, expected {model.n_directions}"
        )
    if weights is not None:
        xi = xi * weights
    c = _pair_complex(model, xi)  # (..., P)
    S = model.grid.n_coeff
    amp = c[..., None, :] * model.pair_direction.T  # (..., 2, P)
    out = np.zeros(c.shape[:-1] + (2, S * S), dtype=np.complex128)
    out[..., model._pos_plus] = amp
    out[..., model._pos_minus] = np.conj(amp)
    return out.reshape(c.shape[:-1] + (2, S, S))


def gather_coefficients(model: NoiseModel, coeffs: np.ndarray) -> np.ndarray:
    """L2-adjoint of unweighted scatter: xi_j = (e_j, field)."""
    S = model.grid.n_coeff
    flat = coeffs.reshape(coeffs.shape[:-2] + (S * S,))  # (..., 2, S*S)
    plus = flat[..., model._pos_plus]  # (..., 2, P)
    proj = np.einsum("...cp,pc->...p", plus, model.pair_direction)
    base = TWO_PI**2 * model._basis_amp
    xi = np.empty(proj.shape[:-1] + (2 * model.n_pairs,))
    xi[..., 0::2] = base * proj.real
    xi[..., 1::2] = -base * proj.imag
    return xi[..., : model.n_directions]


def wiener_increment(
    model: NoiseModel, dt: float, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Coefficients of a Q-Wiener increment over a step of length dt.

    Coefficient j is sqrt(lambda_j * dt) times a standard normal draw,
    independent across directions and across calls on one stream.
    """
    if dt < 0:
        raise NoiseConfigError("dt must be nonnegative")
    shape = (model.n_directions,) if size is None else (size, model.n_directions)
    return rng.standard_normal(shape) * np.sqrt(model.eigenvalues * dt)


def saturation_factor(params: SigmaParams, r):
    """Bounded, Lipschitz gain modulation m(r), monotone with plateau s0."""
    r = np.asarray(r, dtype=np.float64)
    s0, delta = params.saturation_scale, params.smoothing_delta
    out = s0 * r * r / ((s0 + r) * np.maximum(r, delta))
    return out if out.ndim else float(out)


def sigma_factor(model: NoiseModel, t: float, u_coeffs: np.ndarray):
    """State-dependent gain modulation; identically 1 for the additive family."""
    if model.family == "additive":
        return np.ones(u_coeffs.shape[:-3]) if u_coeffs.ndim > 3 else 1.0
    r = np.sqrt(v_norm_sq_array(model.grid, u_coeffs))
    return saturation_factor(model.params, r)


def sigma_apply_array(
    model: NoiseModel, t: float, u_coeffs: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    """Coefficients of sigma(t, u) xi; batched when u_coeffs and xi carry a batch axis."""
    factor = sigma_factor(model, t, u_coeffs)
    out = scatter_coefficients(model, xi, weights=model.gains)
    if np.ndim(factor) == 0:
        return out if factor == 1.0 else out * factor
    return out * np.asarray(factor)[..., None, None, None]


def sigma_apply(
    model: NoiseModel, t: float, u: SpectralField, xi: np.ndarray
) -> SpectralField:
    """Noise operator applied to a coefficient vector, as a velocity field."""
    return SpectralField(model.grid, sigma_apply_array(model, t, u.coeffs, xi))


def sigma_adjoint_array(
    model: NoiseModel, t: float, u_coeffs: np.ndarray, y_coeffs: np.ndarray
) -> np.ndarray:
    """Adjoint of sigma(t, u) against the L2 pairing: field -> coefficients."""
    factor = sigma_factor(model, t, u_coeffs)
    xi = gather_coefficients(model, y_coeffs) * model.gains
    if np.ndim(factor) == 0:
        return xi * factor
    return xi * np.asarray(factor)[..., None]


def sigma_hs_norm(model: NoiseModel, t: float, u) -> float:
    """Hilbert-Schmidt norm of sigma(t, u) Q^(1/2) (closed form, diagonal family)."""
    u_coeffs = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    factor = sigma_factor(model, t, u_coeffs)
    base = np.sqrt(np.sum(model.eigenvalues * model.gains**2))
    return float(base * factor)


def sigma_curl_hs_norm(model: NoiseModel, t: float, u) -> float:
    """Hilbert-Schmidt norm of curl sigma(t, u) Q^(1/2)."""
    u_coeffs = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    factor = sigma_factor(model, t, u_coeffs)
    kabs = np.repeat(model.pair_abs_k, 2)[: model.n_directions]
    base = np.sqrt(np.sum(model.eigenvalues * (model.gains * kabs) ** 2))
    return float(base * factor)


def declared_constants(model: NoiseModel) -> dict:
    """Constants the family satisfies by construction.

    bound:      sup over states of the Hilbert-Schmidt norm
    growth:     constant in ||sigma||^2 <= growth * (1 + ||u||^2)
    lipschitz:  constant in ||sigma(u) - sigma(v)|| <= lipschitz * ||u - v||
    curl_bound / curl_growth: same pair for the curl of the map
    """
    base = float(np.sqrt(np.sum(model.eigenvalues * model.gains**2)))
    kabs = np.repeat(model.pair_abs_k, 2)[: model.n_directions]
    curl_base = float(np.sqrt(np.sum(model.eigenvalues * (model.gains * kabs) ** 2)))
    if model.family == "additive":
        return {
            "bound": base,
            "growth": base**2,
            "lipschitz": 0.0,
            "curl_bound": curl_base**2,
            "curl_growth": 0.0,
        }
    s0, delta = model.params.saturation_scale, model.params.smoothing_delta
    lip_m = s0 * (2 * s0 + delta) / (s0 + delta) ** 2  # sup |m'(r)|, attained at delta-
    return {
        "bound": base * s0,
        "growth": base**2,  # m(r) <= r
        "lipschitz": base * lip_m,
        "curl_bound": (curl_base * s0) ** 2,
        "curl_growth": curl_base**2,
    }


@dataclass(frozen=True)
class AssumptionReport:
    """Empirical estimates of the boundedness/growth/Lipschitz constants."""

    family: str
    n_samples: int
    bound_est: float
    growth_est: float
    lipschitz_est: float
    curl_bound_est: float
    curl_ratio_est: float
    declared: dict
    violations: tuple[str, ...]
    sweep_r: tuple[float, ...]
    sweep_norm: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n_samples": self.n_samples,
            "bound_est": self.bound_est,
            "growth_est": self.growth_est,
            "lipschitz_est": self.lipschitz_est,
            "curl_bound_est": self.curl_bound_est,
            "curl_ratio_est": self.curl_ratio_est,
            "declared": dict(self.declared),
            "violations": list(self.violations),
            "sweep": {"r": list(self.sweep_r), "hs_norm": list(self.sweep_norm)},
        }


def verify_assumptions(
    model: NoiseModel, n_samples: int, rng: np.random.Generator
) -> AssumptionReport:
    """Estimate the family's constants over random states and compare to declared.

    States are drawn with gradient norms spread over several decades so both
    small- and large-state behavior of the modulation is exercised.  The sweep
    records the Hilbert-Schmidt norm over a geometric grid of gradient norms;
    for the saturated family it is monotone with a plateau at the configured
    bound, which is the only thing keeping the map bounded.
    """
    from .spectral import random_solenoidal_field

    if n_samples < 100:
        raise NoiseConfigError("verify_assumptions needs n_samples >= 100")
    declared = declared_constants(model)
    slack = 1.05
    bound_est = growth_est = lip_est = 0.0
    curl_bound_est = curl_ratio_est = 0.0
    violations = set()
    for _ in range(n_samples):
        scale = 10.0 ** rng.uniform(-2.0, 2.0)
        u = random_solenoidal_field(model.grid, rng, amplitude=scale)
        v = random_solenoidal_field(model.grid, rng, amplitude=scale)
        t = rng.uniform(0.0, 1.0)
        nu2 = float(v_norm_sq_array(model.grid, u.coeffs))
        s_u = sigma_hs_norm(model, t, u)
        s_v = sigma_hs_norm(model, t, v)
        c_u = sigma_curl_hs_norm(model, t, u)
        bound_est = max(bound_est, s_u)
        growth_est = max(growth_est, s_u**2 / (1.0 + nu2))
        curl_bound_est = max(curl_bound_est, c_u**2)
        curl_ratio_est = max(
            curl_ratio_est,
            c_u**2 / (declared["curl_bound"] + declared["curl_growth"] * nu2),
        )
        dv = float(np.sqrt(v_norm_sq_array(model.grid, u.coeffs - v.coeffs)))
        if dv > 1e-12:
            lip_est = max(lip_est, abs(s_u - s_v) / dv)
        if s_u > slack * declared["bound"]:
            violations.add("bound")
        if s_u**2 > slack * declared["growth"] * (1.0 + nu2):
            violations.add("growth")
        if abs(s_u - s_v) > slack * declared["lipschitz"] * dv + 1e-12:
            violations.add("lipschitz")
        if c_u**2 > slack * (declared["curl_bound"] + declared["curl_growth"] * nu2):
            violations.add("curl")
    sweep_r = np.logspace(-3, 3, 25)
    if model.family == "additive":
        sweep_norm = np.full_like(sweep_r, declared["bound"])
    else:
        base = declared["bound"] / model.params.saturation_scale
        sweep_norm = base * saturation_factor(model.params, sweep_r)
    return AssumptionReport(
        family=model.family,
        n_samples=n_samples,
        bound_est=bound_est,
        growth_est=growth_est,
        lipschitz_est=lip_est,
        curl_bound_est=curl_bound_est,
        curl_ratio_est=curl_ratio_est,
        declared=declared,
        violations=tuple(sorted(violations)),
        sweep_r=tuple(float(r) for r in sweep_r),
        sweep_norm=tuple(float(s) for s in sweep_norm),
    )


@dataclass(frozen=True)
class Control:
    """Piecewise-constant kernel-space control on a uniform time grid.

    values[m, j] is the coefficient of direction j on [t_m, t_{m+1}); the
    energy integral is exact for piecewise-constant paths.
    """

    model: NoiseModel
    horizon: float
    values: np.ndarray  # (M, J)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.model.n_directions:
            raise NoiseConfigError(
                f"control values must be (M, {self.model.n_directions}), got {v.shape}"
            )
        if self.horizon < 0:
            raise NoiseConfigError("horizon must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def cell_width(self) -> float:
        return self.horizon / self.n_cells

    def cell_index(self, t: float) -> int:
        if self.horizon == 0:
            return 0
        return min(int(t / self.cell_width), self.n_cells - 1)

    def value_at(self, t: float) -> np.ndarray:
        return self.values[self.cell_index(t)]

    def cumulative(self, times: np.ndarray) -> np.ndarray:
        """Pathwise primitive of the control at the given times, shape (T, J)."""
        J = self.values.shape[1]
        out = np.zeros((len(times), J))
        if self.horizon == 0:
            return out
        w = self.cell_width
        csum = np.concatenate(
            [np.zeros((1, J)), np.cumsum(self.values, axis=0) * w], axis=0
        )
        for i, t in enumerate(times):
            m = self.cell_index(t)
            out[i] = csum[m] + (t - m * w) * self.values[m]
        return out

    def to_record(self) -> dict:
        return {"horizon": self.horizon, "values": np.asarray(self.values).tolist()}


def control_from_record(model: NoiseModel, record: dict) -> Control:
    return Control(model, float(record["horizon"]), np.asarray(record["values"]))


def control_energy(h: Control) -> float:
    """Exact energy integral of |h(s)|_0^2 with kernel weights 1/lambda_j."""
    if h.n_cells == 0 or h.horizon == 0:
        return 0.0
    return float(np.sum(h.values**2 / h.model.eigenvalues) * h.cell_width)


def kernel_norm_sq(model: NoiseModel, xi: np.ndarray) -> np.ndarray:
    """Squared kernel-space norm of coefficient vectors (batched)."""
    return np.sum(np.asarray(xi) ** 2 / model.eigenvalues, axis=-1)


def zero_control(model: NoiseModel, horizon: float, n_cells: int) -> Control:
    return Control(model, horizon, np.zeros((n_cells, model.n_directions)))
