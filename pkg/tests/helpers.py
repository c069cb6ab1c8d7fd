"""Independent oracles for the test suite.

Everything here is deliberately implemented by a different route than the
package: fields are evaluated by explicit mode summation (no FFT), Fourier
coefficients are extracted with dense exponential matrices, trilinear forms
get both a quadrature and a convolution-sum evaluation, and the linear-regime
statistics come from scalar recursions written from the closed-form update.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def mode_list(K: int) -> list[tuple[int, int]]:
    return [
        (kx, ky)
        for ky in range(-K, K + 1)
        for kx in range(-K, K + 1)
        if not (kx == 0 and ky == 0)
    ]


def eval_field(field, n_points: int) -> np.ndarray:
    """Evaluate a spectral field on an n x n grid by direct mode summation."""
    K = field.grid.max_wavenumber
    x = TWO_PI * np.arange(n_points) / n_points
    X, Y = np.meshgrid(x, x, indexing="xy")  # X varies along axis 1
    out = np.zeros((2, n_points, n_points), dtype=np.complex128)
    for kx, ky in mode_list(K):
        phase = np.exp(1j * (kx * X + ky * Y))
        amp = field.coeffs[:, K + ky, K + kx]
        out += amp[:, None, None] * phase
    return out.real


def eval_gradient(field, n_points: int) -> np.ndarray:
    """d(field_j)/dx_i on the grid by analytic differentiation of the modes.

    Returns array of shape (2 deriv, 2 component, n, n).
    """
    K = field.grid.max_wavenumber
    x = TWO_PI * np.arange(n_points) / n_points
    X, Y = np.meshgrid(x, x, indexing="xy")
    out = np.zeros((2, 2, n_points, n_points), dtype=np.complex128)
    for kx, ky in mode_list(K):
        phase = np.exp(1j * (kx * X + ky * Y))
        amp = field.coeffs[:, K + ky, K + kx]
        out[0] += (1j * kx) * amp[:, None, None] * phase
        out[1] += (1j * ky) * amp[:, None, None] * phase
    return out.real


def quadrature_integral(values: np.ndarray) -> float:
    """Torus integral of grid samples (exact for resolved trig polynomials)."""
    return float(np.mean(values) * TWO_PI**2)


def trilinear_quadrature(u, v, w, n_points: int | None = None) -> float:
    """Trilinear advection form by physical quadrature on a fresh grid."""
    K = u.grid.max_wavenumber
    n = n_points or (3 * K + 5)
    up = eval_field(u, n)
    wp = eval_field(w, n)
    dv = eval_gradient(v, n)
    integrand = sum(up[i] * dv[i, j] * wp[j] for i in range(2) for j in range(2))
    return quadrature_integral(integrand)


def trilinear_convolution(u, v, w) -> float:
    """Trilinear advection form by the triple convolution sum over modes."""
    K = u.grid.max_wavenumber
    total = 0.0 + 0.0j
    modes = mode_list(K)
    for px, py in modes:
        up = u.coeffs[:, K + py, K + px]
        for qx, qy in modes:
            rx, ry = -px - qx, -py - qy
            if abs(rx) > K or abs(ry) > K or (rx == 0 and ry == 0):
                continue
            vq = v.coeffs[:, K + qy, K + qx]
            wr = w.coeffs[:, K + ry, K + rx]
            total += 1j * (up[0] * qx + up[1] * qy) * (vq @ wr)
    return float((TWO_PI**2 * total).real)


def dft_coefficients(values: np.ndarray, K: int) -> np.ndarray:
    """Extract centered Fourier coefficients with dense exponential matrices."""
    n = values.shape[-1]
    x = TWO_PI * np.arange(n) / n
    ks = np.arange(-K, K + 1)
    ex = np.exp(-1j * np.outer(ks, x)) / n  # (S, n)
    # coeff[c, iy, ix] = sum_{a,b} values[c, b, a] e^{-i kx x_a} e^{-i ky y_b} / n^2
    return np.einsum("xa,cab,yb->cyx", ex, np.moveaxis(values, -2, -1), ex)


def project_mode(K: int, coeffs: np.ndarray) -> np.ndarray:
    """Mode-wise removal of the component parallel to k (explicit loop)."""
    out = coeffs.copy()
    for kx, ky in mode_list(K):
        k = np.array([kx, ky], dtype=float)
        amp = out[:, K + ky, K + kx]
        out[:, K + ky, K + kx] = amp - k * (k @ amp) / (k @ k)
    out[:, K, K] = 0.0
    return out


def advection_oracle(u, v) -> np.ndarray:
    """Coefficients of the projected advective product via direct quadrature.

    Physical product on a fine grid evaluated by mode summation, coefficients
    extracted with dense DFT matrices, projected mode by mode.
    """
    K = u.grid.max_wavenumber
    n = 3 * K + 5
    up = eval_field(u, n)
    dv = eval_gradient(v, n)
    w = np.stack(
        [up[0] * dv[0, j] + up[1] * dv[1, j] for j in range(2)], axis=0
    )
    raw = dft_coefficients(w, K)
    return project_mode(K, raw)


def advection_convolution(u, v) -> np.ndarray:
    """Coefficients of the projected advective product via convolution sums."""
    K = u.grid.max_wavenumber
    S = 2 * K + 1
    out = np.zeros((2, S, S), dtype=np.complex128)
    modes = mode_list(K)
    for px, py in modes:
        up = u.coeffs[:, K + py, K + px]
        for qx, qy in modes:
            kx, ky = px + qx, py + qy
            if abs(kx) > K or abs(ky) > K or (kx == 0 and ky == 0):
                continue
            vq = v.coeffs[:, K + qy, K + qx]
            out[:, K + ky, K + kx] += 1j * (up[0] * qx + up[1] * qy) * vq
    return project_mode(K, out)


# ---------------------------------------------------------------------------
# linear-regime (diagonal) closed forms for the integrating-factor scheme


def scheme_weights(a: float, dt: float) -> tuple[float, float]:
    """(decay, phi) of the integrating-factor step for squared wavenumber a."""
    decay = math.exp(-a * dt)
    phi = (1.0 - decay) / a if a > 0 else dt
    return decay, phi


def ou_discrete_moments(
    a: float, dt: float, n_steps: int, c0: complex, noise_rms: float
) -> tuple[complex, float]:
    """Mean and per-real-component variance of the scheme's diagonal recursion.

    The recursion is c' = decay * c + (phi/dt) * noise_rms * (xi_re + i xi_im)
    with unit normal draws, so the terminal law is Gaussian with the returned
    moments (variance per real component).
    """
    decay, phi = scheme_weights(a, dt)
    mean = c0 * decay**n_steps
    w = (phi / dt) * noise_rms
    r = decay**2
    var = w**2 * (1 - r**n_steps) / (1 - r) if r < 1 else w**2 * n_steps
    return mean, var


def ou_continuous_variance(a: float, T: float, noise_rms_rate: float) -> float:
    """Per-real-component variance of the exact diagonal process at time T.

    noise_rms_rate is the coefficient of the Wiener differential (per unit
    sqrt-time), so the stationary variance is rate^2 / (2a).
    """
    return noise_rms_rate**2 * (1 - math.exp(-2 * a * T)) / (2 * a)


def simulate_diagonal_paths(
    a: float,
    dt: float,
    n_steps: int,
    noise_rms: float,
    n_paths: int,
    rng: np.random.Generator,
    c0: complex = 0.0,
) -> np.ndarray:
    """Direct scalar simulation of the scheme's diagonal recursion."""
    decay, phi = scheme_weights(a, dt)
    w = (phi / dt) * noise_rms
    c = np.full(n_paths, c0, dtype=np.complex128)
    for _ in range(n_steps):
        xi = rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)
        c = decay * c + w * xi
    return c


def decay_energy_left_sum(h2_0: float, a: float, T: float, dt_rec: float) -> float:
    """Closed-form left-endpoint sum of the decaying gradient-norm series.

    For |u(t)|^2 = h2_0 e^(-2 a t) and ||u||^2 = a |u|^2 the recorded-grid
    quadrature of the integral term is a geometric sum.
    """
    n = round(T / dt_rec)
    r = math.exp(-2 * a * dt_rec)
    return a * h2_0 * dt_rec * (1 - r**n) / (1 - r)


def wilson_oracle(hits: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson interval written independently for cross-checking."""
    p = hits / n
    z2 = z * z
    center = (p + z2 / (2 * n)) / (1 + z2 / n)
    half = (z / (1 + z2 / n)) * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    return center - half, center + half
