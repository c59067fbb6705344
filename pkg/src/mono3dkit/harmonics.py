"""Real spherical harmonics for encoding viewing directions.

Orthonormal convention without the Condon-Shortley phase, z as the polar
axis, components ordered degree-major: l = 0..max_degree, m = -l..l, so
degree 8 yields 81 values. The basis is orthonormal over the sphere:
integral of Y_i * Y_j over the unit sphere equals delta_ij.

Evaluation is fully Cartesian: associated Legendre terms are built with the
standard l-recurrence on P_l^m / sin(theta)^m, and the azimuthal factors
sin/cos(m * phi) * sin(theta)^m come from the real/imaginary parts of
(x + i y)^m, so directions at the poles are handled without special cases.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["real_spherical_harmonics", "sph_harm_count"]


def sph_harm_count(max_degree: int) -> int:
    """Number of components for degrees 0..max_degree."""
    return (max_degree + 1) ** 2


def _norm_constant(l: int, m: int) -> float:
    # Orthonormal normalization sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!).
    return math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m))


def real_spherical_harmonics(directions, max_degree: int = 8) -> np.ndarray:
    """Evaluate the real spherical harmonic basis at unit directions.

    Args:
        directions: (..., 3) array of unit vectors (normalized internally).
        max_degree: highest degree l to include.

    Returns:
        (..., (max_degree + 1)**2) array; index l*l + l + m holds the
        degree-l, order-m component.
    """
    d = np.asarray(directions, dtype=np.float64)
    if d.shape[-1] != 3:
        raise ValueError("directions must have shape (..., 3)")
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("zero-length direction")
    d = d / norms
    x, y, z = d[..., 0], d[..., 1], d[..., 2]

    n_terms = sph_harm_count(max_degree)
    out = np.empty(d.shape[:-1] + (n_terms,), dtype=np.float64)

    # cos_m = Re[(x+iy)^m] = cos(m phi) sin^m(theta); sin_m its imaginary part.
    cos_m = np.ones_like(x)
    sin_m = np.zeros_like(x)

    # legendre[m][l] holds P_l^m(z) / sin^m(theta), no Condon-Shortley phase.
    for m in range(max_degree + 1):
        if m > 0:
            cos_m, sin_m = x * cos_m - y * sin_m, x * sin_m + y * cos_m
        # Seed P_m^m / s^m = (2m-1)!!, then raise l with the standard
        # three-term recurrence (l-m) P_l = (2l-1) z P_{l-1} - (l+m-1) P_{l-2}.
        double_fact = 1.0
        for k in range(1, m + 1):
            double_fact *= 2 * k - 1
        p_prev = np.full_like(x, double_fact)  # l = m
        p_curr = None
        for l in range(m, max_degree + 1):
            if l == m:
                p = p_prev
            elif l == m + 1:
                p = (2 * m + 1) * z * p_prev
                p_curr = p
            else:
                p = ((2 * l - 1) * z * p_curr - (l + m - 1) * p_prev) / (l - m)
                p_prev, p_curr = p_curr, p
            norm = _norm_constant(l, m)
            base = l * l + l
            if m == 0:
                out[..., base] = norm * p
            else:
                out[..., base + m] = math.sqrt(2.0) * norm * p * cos_m
                out[..., base - m] = math.sqrt(2.0) * norm * p * sin_m
            if l == m:
                p_curr = p  # becomes "previous" once l = m + 1 computed
    return out
