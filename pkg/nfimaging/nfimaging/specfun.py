"""
Special functions and sphere quadrature used by the translation operator.

Time convention is exp(+j 2 pi f t), so outgoing waves use the spherical
Hankel function of the second kind.
"""

from functools import lru_cache

import attrs
import numpy as np
from scipy.special import spherical_jn

from nfimaging import settings
from nfimaging.exceptions import DomainError, SpecialFunctionOverflow


def _readonly(array, dtype=float):
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


def _check_directions(instance, attribute, value):
    if value.ndim != 2 or value.shape[1] != 3:
        raise ValueError("directions must have shape (Q, 3)")
    norms = np.linalg.norm(value, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        raise ValueError("quadrature directions must be unit vectors")


def _check_weights(instance, attribute, value):
    if np.any(value <= 0.0):
        raise ValueError("quadrature weights must be strictly positive")
    if abs(value.sum() - 4.0 * np.pi) > 1e-10 * 4.0 * np.pi:
        raise ValueError("quadrature weights must sum to 4*pi")


@attrs.define(frozen=True, eq=False)
class QuadratureGrid:
    """Unit-sphere directions and weights, exact up to degree 2 * band_limit."""

    directions: np.ndarray = attrs.field(converter=_readonly, validator=_check_directions)
    weights: np.ndarray = attrs.field(converter=_readonly, validator=_check_weights)
    band_limit: int = attrs.field(converter=int)
    n_theta: int = attrs.field(converter=int)
    n_phi: int = attrs.field(converter=int)

    @property
    def size(self):
        return len(self.weights)

    def integrate(self, values):
        """Quadrature sum over the leading (direction) axis."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


def legendre_table(L, x):
    """
    P_0(x) .. P_L(x) stacked along a new leading axis.

    Three-term recurrence; x may be any array inside [-1, 1].
    """
    return np.stack(list(legendre_rows(L, x)))


def legendre_rows(L, x):
    """Yield P_0(x) .. P_L(x) one degree at a time; keeps two rows in memory."""
    if L < 0:
        raise DomainError(f"Legendre degree must be non-negative, got {L}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise DomainError("Legendre argument outside [-1, 1]")
    x = np.clip(x, -1.0, 1.0)

    previous, current = None, np.ones(x.shape)
    yield current
    for l in range(L):
        if previous is None:
            previous, current = current, x.copy()
        else:
            previous, current = current, ((2 * l + 1) * x * current - l * previous) / (l + 1)
        yield current


def legendre_p(l, x):
    """Legendre polynomial P_l(x) for |x| <= 1."""
    value = legendre_table(l, x)[l]
    return float(value) if np.ndim(value) == 0 else value


def sph_hankel2_table(L, x):
    """
    h_0^(2)(x) .. h_L^(2)(x) = j_l(x) - j y_l(x) stacked along a new leading axis.

    y_l comes from the closed forms for l <= 1 and upward recurrence above;
    it is the dominant solution, so the upward pass is stable. j_l is the
    recessive one and loses every digit going up once l > x, so the real
    part is taken from scipy.special.spherical_jn.
    """
    if L < 0:
        raise DomainError(f"Hankel order must be non-negative, got {L}")
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("spherical Hankel argument must be positive")

    y = np.empty((L + 1,) + x.shape)
    y[0] = -np.cos(x) / x
    if L >= 1:
        y[1] = -np.cos(x) / x**2 - np.sin(x) / x
    for l in range(1, L):
        y[l + 1] = (2 * l + 1) / x * y[l] - y[l - 1]
        peak = np.max(np.abs(y[l + 1]))
        if not np.isfinite(peak) or peak > settings.HANKEL_OVERFLOW:
            raise SpecialFunctionOverflow(
                f"h_{l + 1}^(2) overflows at x={np.min(x):.6g}; order far above argument"
            )

    orders = np.arange(L + 1).reshape((L + 1,) + (1,) * x.ndim)
    return spherical_jn(orders, x) - 1j * y


def sph_hankel2(l, x):
    """Spherical Hankel function of the second kind h_l^(2)(x), x > 0."""
    value = sph_hankel2_table(l, x)[l]
    return complex(value) if np.ndim(value) == 0 else value


def gauss_legendre(n):
    """n-point Gauss-Legendre nodes and weights on [-1, 1]."""
    if n < 1:
        raise DomainError(f"Gauss-Legendre rule needs n >= 1, got {n}")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


@lru_cache(maxsize=64)
def sphere_quadrature(L):
    """
    Product rule on the unit sphere: (L+1) Gauss-Legendre nodes in cos(theta)
    times (2L+2) uniform azimuths. Exact for spherical harmonics of degree <= 2L.

    Directions are ordered theta-major.
    """
    if L < 1:
        raise DomainError(f"sphere quadrature needs L >= 1, got {L}")
    n_theta, n_phi = L + 1, 2 * L + 2
    cos_theta, w_theta = gauss_legendre(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi

    sin_theta = np.sqrt(1.0 - cos_theta**2)
    ct, cp = np.meshgrid(cos_theta, np.cos(phi), indexing="ij")
    st, sp = np.meshgrid(sin_theta, np.sin(phi), indexing="ij")
    directions = np.stack([st * cp, st * sp, ct], axis=-1).reshape(-1, 3)
    # renormalize against roundoff in sqrt(1 - x^2)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    weights = np.repeat(w_theta, n_phi) * (2.0 * np.pi / n_phi)
    return QuadratureGrid(
        directions=directions,
        weights=weights,
        band_limit=L,
        n_theta=n_theta,
        n_phi=n_phi,
    )
