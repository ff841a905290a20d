"""
Records passed between the stages: scene description, field datasets,
plane-wave spectra and image volumes.
"""

import zlib

import attrs
import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError
from nfimaging.specfun import QuadratureGrid

COMPONENT_INDEX = {"x": 0, "y": 1, "z": 2}
REGION_ROLES = ("incident", "scattered")


def wavenumber(frequency):
    return 2.0 * np.pi * np.asarray(frequency, dtype=float) / SPEED_OF_LIGHT


def wavelength(frequency):
    return SPEED_OF_LIGHT / float(frequency)


def vec3(value):
    out = np.array(value, dtype=float).reshape(3)
    out.setflags(write=False)
    return out


def component_tuple(value):
    if isinstance(value, str):
        value = [part.strip() for part in value.replace(",", " ").split()]
    comps = tuple(str(part).lower() for part in value)
    if not comps or any(comp not in COMPONENT_INDEX for comp in comps):
        raise ConfigurationError(f"components must be a non-empty subset of x, y, z, got {value!r}")
    if len(set(comps)) != len(comps):
        raise ConfigurationError(f"duplicate components in {value!r}")
    return comps


def component_indices(components):
    return [COMPONENT_INDEX[comp] for comp in components]


def _finite(instance, attribute, value):
    if not np.all(np.isfinite(value)):
        raise ConfigurationError(f"{type(instance).__name__}.{attribute.name} must be finite")


# ============================================================================
# Scene
# ============================================================================

@attrs.define(frozen=True, eq=False)
class Scatterer:
    position: np.ndarray = attrs.field(converter=vec3, validator=_finite)
    reflectivity: complex = attrs.field(converter=complex, validator=_finite)


@attrs.define(frozen=True, eq=False)
class ScanGrid:
    origin: np.ndarray = attrs.field(converter=vec3)
    u_axis: np.ndarray = attrs.field(converter=vec3)
    v_axis: np.ndarray = attrs.field(converter=vec3)
    n_u: int = attrs.field(converter=int)
    n_v: int = attrs.field(converter=int)
    du: float = attrs.field(converter=float)
    dv: float = attrs.field(converter=float)
    probe_components: tuple = attrs.field(default=("x", "y", "z"), converter=component_tuple)

    def __attrs_post_init__(self):
        for name in ("u_axis", "v_axis"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > 1e-12:
                raise ConfigurationError(f"ScanGrid.{name} must be a unit vector")
        if abs(float(self.u_axis @ self.v_axis)) > 1e-12:
            raise ConfigurationError("ScanGrid axes must be orthogonal")
        if self.n_u < 1 or self.n_v < 1:
            raise ConfigurationError("ScanGrid needs at least one sample per axis")
        if self.du <= 0 or self.dv <= 0:
            raise ConfigurationError("ScanGrid spacings must be positive")

    @classmethod
    def from_corners(cls, corner_a, corner_b, z, n_u, n_v, components=("x", "y", "z")):
        """Plane z = const spanned between two (x, y) corners, inclusive."""
        (xa, ya), (xb, yb) = corner_a, corner_b
        du = (xb - xa) / (n_u - 1) if n_u > 1 else 1.0
        dv = (yb - ya) / (n_v - 1) if n_v > 1 else 1.0
        return cls(
            origin=(xa, ya, z), u_axis=(1, 0, 0), v_axis=(0, 1, 0),
            n_u=n_u, n_v=n_v, du=du, dv=dv, probe_components=components,
        )

    @property
    def n_probes(self):
        return self.n_u * self.n_v

    def positions(self):
        """Probe positions r_m, u-major (m = i_u * n_v + i_v)."""
        iu, iv = np.meshgrid(np.arange(self.n_u), np.arange(self.n_v), indexing="ij")
        pts = (
            self.origin
            + (iu.reshape(-1, 1) * self.du) * self.u_axis
            + (iv.reshape(-1, 1) * self.dv) * self.v_axis
        )
        return pts

    @property
    def center(self):
        return (
            self.origin
            + 0.5 * (self.n_u - 1) * self.du * self.u_axis
            + 0.5 * (self.n_v - 1) * self.dv * self.v_axis
        )


def _frequency_list(value):
    out = np.array(value, dtype=float).reshape(-1)
    out.setflags(write=False)
    return out


@attrs.define(frozen=True, eq=False)
class Scenario:
    tx_position: np.ndarray = attrs.field(converter=vec3)
    tx_polarization: np.ndarray = attrs.field(converter=vec3)
    ref_position: np.ndarray = attrs.field(converter=vec3)
    scatterers: tuple = attrs.field(converter=tuple)
    scan_grid: ScanGrid
    frequencies: np.ndarray = attrs.field(converter=_frequency_list)
    rng_seed: int = attrs.field(default=0, converter=int)
    ref_component: str = attrs.field(default=settings.REFERENCE_COMPONENT)
    name: str = "scenario"

    def __attrs_post_init__(self):
        if abs(np.linalg.norm(self.tx_polarization) - 1.0) > 1e-12:
            raise ConfigurationError("tx_polarization must be a unit vector")
        if self.ref_component not in COMPONENT_INDEX:
            raise ConfigurationError(f"unknown reference component {self.ref_component!r}")
        freqs = self.frequencies
        if freqs.size == 0 or np.any(freqs <= 0) or np.any(np.diff(freqs) <= 0):
            raise ConfigurationError("frequencies must be positive and strictly increasing")
        sep = settings.REFERENCE_SEPARATION_M
        if np.linalg.norm(self.ref_position - self.tx_position) <= sep:
            raise ConfigurationError("reference antenna coincides with the Tx antenna")
        d = np.linalg.norm(self.scan_grid.positions() - self.ref_position, axis=1)
        if np.min(d) <= sep:
            raise ConfigurationError(f"reference antenna coincides with probe {int(np.argmin(d))}")

    @property
    def probe_positions(self):
        return self.scan_grid.positions()

    @property
    def n_probes(self):
        return self.scan_grid.n_probes

    @property
    def components(self):
        return self.scan_grid.probe_components

    def frequency_index(self, frequency):
        idx = np.flatnonzero(np.isclose(self.frequencies, frequency, rtol=1e-12, atol=0.0))
        if idx.size == 0:
            raise ConfigurationError(f"frequency {frequency} Hz is not part of scenario '{self.name}'")
        return int(idx[0])


@attrs.define(frozen=True, eq=False)
class ModulationModel:
    """Per (probe, frequency) complex coefficients B_m(f)."""

    coefficients: np.ndarray = attrs.field(converter=lambda a: np.asarray(a, dtype=complex))
    spread_db: float = 0.0
    seed: int = 0

    def __attrs_post_init__(self):
        if self.coefficients.ndim != 2:
            raise ConfigurationError("modulation coefficients must be indexed (m, f)")
        if np.any(np.abs(self.coefficients) == 0) or not np.all(np.isfinite(self.coefficients)):
            raise ConfigurationError("modulation coefficients must be finite and non-zero")

    @classmethod
    def identity(cls, n_probes, n_freqs):
        return cls(coefficients=np.ones((n_probes, n_freqs), dtype=complex))

    @classmethod
    def generate(cls, n_probes, n_freqs, spread_db=settings.MODULATION_SPREAD_DB, seed=0,
                 stream="modulation"):
        """
        Draw every coefficient up front from the seed: log-magnitude uniform
        in [-spread, spread] dB, phase uniform in [0, 2 pi).
        """
        rng = np.random.default_rng(substream(seed, stream))
        level_db = rng.uniform(-spread_db, spread_db, size=(n_probes, n_freqs))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_probes, n_freqs))
        coeffs = 10.0 ** (level_db / 20.0) * np.exp(1j * phase)
        return cls(coefficients=coeffs, spread_db=spread_db, seed=seed)


def substream(seed, name, *spawn_key):
    """Named, reproducible random substream derived from one integer seed."""
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(k) for k in spawn_key)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


# ============================================================================
# Field datasets
# ============================================================================

@attrs.define(eq=False)
class FieldDataset:
    probe_fields: np.ndarray  # (m, f, component)
    ref_field: np.ndarray  # (m, f)
    frequencies: np.ndarray
    probe_positions: np.ndarray
    components: tuple = attrs.field(converter=component_tuple)
    ref_component: str = settings.REFERENCE_COMPONENT
    normalized: bool = False
    background_subtracted: bool = False
    scenario: Scenario = None

    def __attrs_post_init__(self):
        self.probe_fields = np.asarray(self.probe_fields, dtype=complex)
        self.ref_field = np.asarray(self.ref_field, dtype=complex)
        self.frequencies = np.asarray(self.frequencies, dtype=float).reshape(-1)
        self.probe_positions = np.asarray(self.probe_positions, dtype=float).reshape(-1, 3)
        m, f, c = self.probe_fields.shape
        if self.ref_field.shape != (m, f):
            raise ConfigurationError(
                f"reference field shape {self.ref_field.shape} does not match probe fields {(m, f)}"
            )
        if len(self.frequencies) != f or len(self.probe_positions) != m or len(self.components) != c:
            raise ConfigurationError("dataset axes disagree with frequency/position/component tables")
        if self.normalized != bool(np.all(self.ref_field == 1.0)):
            raise ConfigurationError("normalization flag must be set exactly when the reference is all ones")

    @property
    def shape(self):
        return self.probe_fields.shape

    @property
    def n_probes(self):
        return self.probe_fields.shape[0]

    def frequency_index(self, frequency):
        idx = np.flatnonzero(np.isclose(self.frequencies, frequency, rtol=1e-12, atol=0.0))
        if idx.size == 0:
            raise ConfigurationError(f"frequency {frequency} Hz not present in dataset")
        return int(idx[0])

    def is_finite(self):
        return bool(np.all(np.isfinite(self.probe_fields)) and np.all(np.isfinite(self.ref_field)))


# ============================================================================
# Equivalent sources
# ============================================================================

@attrs.define(frozen=True, eq=False)
class RegionSpec:
    """Frequency-independent description of a source region from config."""

    name: str
    center: np.ndarray = attrs.field(converter=vec3)
    radius: float = attrs.field(converter=float)
    role: str = "scattered"

    def __attrs_post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError(f"region '{self.name}' radius must be positive")
        if self.role not in REGION_ROLES:
            raise ConfigurationError(f"region '{self.name}' role must be one of {REGION_ROLES}")


@attrs.define(frozen=True, eq=False)
class SourceRegion:
    center: np.ndarray = attrs.field(converter=vec3)
    radius: float = attrs.field(converter=float)
    role: str
    order: int = attrs.field(converter=int)
    grid: QuadratureGrid
    name: str = "region"

    def __attrs_post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("source region radius must be positive")
        if self.role not in REGION_ROLES:
            raise ConfigurationError(f"region role must be one of {REGION_ROLES}")
        if self.grid.band_limit < self.order:
            raise ConfigurationError("quadrature band limit below translation order")


@attrs.define(frozen=True, eq=False)
class PlaneWaveSpectrum:
    region: SourceRegion
    frequency: float = attrs.field(converter=float)
    samples: np.ndarray = attrs.field(converter=lambda a: np.asarray(a, dtype=complex))

    def __attrs_post_init__(self):
        q = self.region.grid.size
        if self.samples.shape != (q, 3):
            raise ConfigurationError(f"spectrum samples must have shape ({q}, 3), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigurationError("spectrum samples must be finite")
        dirs = self.region.grid.directions
        radial = np.abs(np.einsum("qi,qi->q", dirs, self.samples))
        if np.any(radial > 1e-9 * np.linalg.norm(self.samples, axis=1) + 1e-300):
            raise ConfigurationError("plane-wave spectrum samples must be transverse")

    @property
    def wavenumber(self):
        return float(wavenumber(self.frequency))


# ============================================================================
# Image volumes
# ============================================================================

@attrs.define(frozen=True, eq=False)
class VolumeGeometry:
    origin: np.ndarray = attrs.field(converter=vec3)
    axes: np.ndarray = attrs.field(converter=lambda a: np.array(a, dtype=float).reshape(3, 3))
    counts: tuple = attrs.field(converter=lambda a: tuple(int(n) for n in a))
    spacing: tuple = attrs.field(converter=lambda a: tuple(float(s) for s in a))

    def __attrs_post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ConfigurationError("volume counts must be three positive integers")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigurationError("volume spacing must be three positive numbers")

    @classmethod
    def from_bounds(cls, lower, upper, spacing):
        """Axis-aligned box sampled at `spacing` including both bounds."""
        lower, upper = vec3(lower), vec3(upper)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
        counts = np.floor((upper - lower) / spacing + 1e-9).astype(int) + 1
        return cls(origin=lower, axes=np.eye(3), counts=counts, spacing=spacing)

    @property
    def n_voxels(self):
        return int(np.prod(self.counts))

    def positions(self):
        """Voxel centers in C order over (i, j, l)."""
        idx = np.indices(self.counts).reshape(3, -1).T.astype(float)
        return self.origin + (idx * np.asarray(self.spacing)) @ self.axes

    def index_of(self, point):
        """Nearest voxel index (i, j, l) to a point."""
        rel = (vec3(point) - self.origin) @ self.axes.T / np.asarray(self.spacing)
        idx = np.clip(np.rint(rel).astype(int), 0, np.asarray(self.counts) - 1)
        return tuple(int(i) for i in idx)

    def compatible(self, other):
        return (
            self.counts == other.counts
            and np.allclose(self.origin, other.origin)
            and np.allclose(self.axes, other.axes)
            and np.allclose(self.spacing, other.spacing)
        )


@attrs.define(frozen=True, eq=False)
class ImageVolume:
    geometry: VolumeGeometry
    values: np.ndarray = attrs.field(converter=lambda a: np.asarray(a, dtype=complex))
    frequency: float = None
    tag: str = "single"

    def __attrs_post_init__(self):
        expected = tuple(self.geometry.counts) + (3,)
        if self.values.shape != expected:
            raise ConfigurationError(f"volume values must have shape {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("volume values must be finite")

    def magnitude(self):
        return np.linalg.norm(self.values, axis=-1)
