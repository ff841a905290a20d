"""
Plane-wave-spectrum sources and the single-level multipole translation
operator.

Field of a region with spectrum J~ at probe r_m:

    E(r_m) = (-j / 4 pi) sum_q w_q T_L(k^_q; r_m - c) (I - k^_q k^_q) J~_q

with T_L(k^; X) = sum_{l<=L} (-j)^l (2l+1) h_l^(2)(k|X|) P_l(k^ . X^).
Spectra are stored as full 3-vectors per direction and kept transverse.
"""

import logging
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError, IncompatibleDataError, SingularityError, ValidityError
from nfimaging.items import PlaneWaveSpectrum, SourceRegion, component_indices, substream, wavenumber
from nfimaging.specfun import legendre_rows, legendre_table, sph_hankel2_table, sphere_quadrature

logger = logging.getLogger(__name__)


def select_order(k, D, digits=settings.ACCURACY_DIGITS):
    """Excess-bandwidth rule L = kD/2 + 1.8 d0^(2/3) (kD/2)^(1/3), at least MIN_ORDER."""
    if k <= 0 or D <= 0:
        raise ConfigurationError("select_order needs positive wavenumber and diameter")
    if not 1 <= digits <= 10:
        raise ConfigurationError(f"accuracy digits must be in [1, 10], got {digits}")
    half = k * D / 2.0
    order = int(np.ceil(half + 1.8 * digits ** (2.0 / 3.0) * half ** (1.0 / 3.0)))
    return max(order, settings.MIN_ORDER)


def make_regions(specs, frequency, digits=settings.ACCURACY_DIGITS):
    """
    Source regions for one frequency. Every region gets its own order; all
    share one quadrature grid sized by the largest order.
    """
    if not specs:
        raise ConfigurationError("at least one source region is required")
    k = float(wavenumber(frequency))
    orders = [select_order(k, 2.0 * spec.radius, digits) for spec in specs]
    grid = sphere_quadrature(max(orders))
    return [
        SourceRegion(center=spec.center, radius=spec.radius, role=spec.role, order=L, grid=grid, name=spec.name)
        for spec, L in zip(specs, orders)
    ]


def project_transverse(directions, vectors):
    """(I - k^ k^) applied per direction."""
    radial = np.einsum("qi,qi->q", directions, vectors)
    return vectors - directions * radial[:, None]


def _translation_sum(L, k, dist, rows):
    """sum_l (-j)^l (2l+1) h_l(k dist) P_l over the Legendre rows P_0 .. P_L."""
    hankel = sph_hankel2_table(L, k * dist)
    coeff = (-1j) ** np.arange(L + 1) * (2 * np.arange(L + 1) + 1)
    total = None
    for l, legendre in enumerate(rows):
        extra = (1,) * (np.ndim(legendre) - np.ndim(dist))
        term = (coeff[l] * hankel[l]).reshape(np.shape(dist) + extra) * legendre
        if total is None:
            total = term
        else:
            total += term
    return total


@lru_cache(maxsize=256)
def _legendre_rows(grid, xhat, L):
    """P_0..P_L of k^_q . X^ for every grid direction, memoized per (grid, X^, L)."""
    cos_gamma = np.clip(grid.directions @ np.asarray(xhat), -1.0, 1.0)
    table = legendre_table(L, cos_gamma)
    table.setflags(write=False)
    return table


def translation_operator(L, k, X, grid):
    """T_L evaluated at every grid direction for a single translation vector X."""
    X = np.asarray(X, dtype=float).reshape(3)
    dist = float(np.linalg.norm(X))
    if dist == 0.0:
        raise SingularityError("translation vector has zero length")
    if grid.band_limit < L:
        raise ConfigurationError(f"grid band limit {grid.band_limit} below translation order {L}")
    return _translation_sum(L, k, dist, _legendre_rows(grid, tuple(X / dist), L))


def translation_matrix(L, k, X, grid):
    """T_L for many translation vectors at once, shape (M, Q)."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    dist = np.linalg.norm(X, axis=1)
    if np.any(dist == 0.0):
        raise SingularityError(f"translation vector {int(np.argmin(dist))} has zero length")
    if grid.band_limit < L:
        raise ConfigurationError(f"grid band limit {grid.band_limit} below translation order {L}")
    cos_gamma = np.clip((X / dist[:, None]) @ grid.directions.T, -1.0, 1.0)
    return _translation_sum(L, k, dist, legendre_rows(L, cos_gamma))


def check_validity(regions, probe_positions):
    probe_positions = np.asarray(probe_positions, dtype=float).reshape(-1, 3)
    for region in regions:
        dist = np.linalg.norm(probe_positions - region.center, axis=1)
        inside = np.flatnonzero(dist <= region.radius)
        if inside.size:
            m = int(inside[0])
            raise ValidityError(
                f"probe {m} at {probe_positions[m].round(4).tolist()} lies inside region "
                f"'{region.name}' (radius {region.radius} m); {inside.size} probe(s) affected"
            )


def point_source_spectrum(region, frequency, moment, offset=None):
    """
    Spectrum of an ideal point current `moment` placed at center + offset,
    scaled so that forward_field reproduces em_forward.dipole_field.
    """
    k = float(wavenumber(frequency))
    dirs = region.grid.directions
    moment = np.asarray(moment, dtype=complex).reshape(3)
    samples = project_transverse(dirs, np.broadcast_to(moment, dirs.shape).astype(complex))
    samples = samples * (k / (4.0 * np.pi))
    if offset is not None:
        samples = samples * np.exp(1j * k * dirs @ np.asarray(offset, dtype=float))[:, None]
    return PlaneWaveSpectrum(region=region, frequency=frequency, samples=samples)


class TranslationPlan:
    """
    Precomputed forward map for one frequency: regions -> probe components.
    Kernels fold the quadrature weights and the -j/4pi factor in.
    """

    def __init__(self, regions, probe_positions, components, frequency):
        self.regions = list(regions)
        self.probe_positions = np.asarray(probe_positions, dtype=float).reshape(-1, 3)
        self.components = tuple(components)
        self.comp_idx = component_indices(self.components)
        self.frequency = float(frequency)
        self.k = float(wavenumber(frequency))
        check_validity(self.regions, self.probe_positions)

        self.kernels = []
        for region in self.regions:
            T = translation_matrix(region.order, self.k, self.probe_positions - region.center, region.grid)
            self.kernels.append(T * (region.grid.weights * (-1j / (4.0 * np.pi)))[None, :])
        self.sizes = [region.grid.size * 3 for region in self.regions]
        logger.debug(
            f"Translation plan at {self.frequency / 1e9:.4f} GHz: {len(self.probe_positions)} probes, "
            f"orders {[r.order for r in self.regions]}, {sum(self.sizes)} unknowns"
        )

    @property
    def shape(self):
        return (len(self.probe_positions) * len(self.comp_idx), sum(self.sizes))

    def forward(self, samples):
        """List of (Q, 3) spectra samples -> (M, C) field."""
        if len(samples) != len(self.regions):
            raise IncompatibleDataError(f"expected {len(self.regions)} spectra, got {len(samples)}")
        field = np.zeros((len(self.probe_positions), 3), dtype=complex)
        for region, kernel, x in zip(self.regions, self.kernels, samples):
            field += kernel @ project_transverse(region.grid.directions, np.asarray(x, dtype=complex))
        return field[:, self.comp_idx]

    def adjoint(self, residual):
        """(M, C) residual -> list of transverse (Q, 3) samples."""
        residual = np.asarray(residual, dtype=complex).reshape(len(self.probe_positions), len(self.comp_idx))
        full = np.zeros((len(self.probe_positions), 3), dtype=complex)
        full[:, self.comp_idx] = residual
        return [
            project_transverse(region.grid.directions, (full.conj().T @ kernel).conj().T)
            for region, kernel in zip(self.regions, self.kernels)
        ]

    def pack(self, samples):
        return np.concatenate([np.asarray(x, dtype=complex).ravel() for x in samples])

    def unpack(self, vector):
        out, start = [], 0
        for size in self.sizes:
            out.append(vector[start:start + size].reshape(-1, 3))
            start += size
        return out

    def as_operator(self):
        return LinearOperator(
            shape=self.shape,
            matvec=lambda v: self.forward(self.unpack(np.ravel(v))).ravel(),
            rmatvec=lambda v: self.pack(self.adjoint(np.ravel(v))),
            dtype=complex,
        )

    def spectra(self, samples):
        return [
            PlaneWaveSpectrum(region=region, frequency=self.frequency, samples=x)
            for region, x in zip(self.regions, samples)
        ]

    def adjoint_mismatch(self, seed=0):
        """Relative defect of <A x, y> = <x, A^H y> for random x, y."""
        rng = np.random.default_rng(substream(seed, "self-check"))
        m, n = self.shape
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        ax = self.forward(self.unpack(x)).ravel()
        ahy = self.pack(self.adjoint(y))
        lhs, rhs = np.vdot(y, ax), np.vdot(ahy, x)
        scale = np.linalg.norm(ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(ahy)
        return float(abs(lhs - rhs) / scale) if scale else 0.0


def _common_frequency(spectra):
    freqs = {round(s.frequency, 6) for s in spectra}
    if len(freqs) != 1:
        raise IncompatibleDataError(f"spectra span several frequencies: {sorted(freqs)}")
    return spectra[0].frequency


def forward_field(spectra, probe_positions, components=("x", "y", "z")):
    """Field of the given spectra at the probe positions, shape (M, C)."""
    spectra = list(spectra)
    if not spectra:
        raise ConfigurationError("forward_field needs at least one spectrum")
    frequency = _common_frequency(spectra)
    plan = TranslationPlan([s.region for s in spectra], probe_positions, components, frequency)
    return plan.forward([s.samples for s in spectra])


def adjoint_field(residual, regions, probe_positions, frequency, components=("x", "y", "z")):
    """Exact adjoint of forward_field: residual (M, C) -> one spectrum per region."""
    plan = TranslationPlan(regions, probe_positions, components, frequency)
    return plan.spectra(plan.adjoint(residual))
