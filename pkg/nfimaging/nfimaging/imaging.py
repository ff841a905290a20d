"""
Image generation from solved spectra, phase and magnitude corrections,
multi-frequency fusion and maximum intensity projections.

Phase reference convention: a spectrum is referred to its region center c,
so a voxel r' is imaged with exp(-j k k^ . (r' - c)). A point current at
r0 then images to a peak at r' = r0 with zero phase offset.
"""

import logging

import attrs
import numpy as np

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError, IncompatibleDataError, SingularityError
from nfimaging.items import COMPONENT_INDEX, ImageVolume, vec3, wavenumber

logger = logging.getLogger(__name__)

TAPERS = ("raised-cosine",)


def _unit(value):
    v = vec3(value)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ConfigurationError("window center direction must be non-zero")
    out = v / norm
    out.setflags(write=False)
    return out


@attrs.define(frozen=True, eq=False)
class SpectralWindow:
    center: np.ndarray = attrs.field(converter=_unit)
    cutoff: float = attrs.field(default=np.deg2rad(settings.WINDOW_CUTOFF_DEG), converter=float)
    taper: str = "raised-cosine"
    taper_fraction: float = attrs.field(default=settings.WINDOW_TAPER, converter=float)

    def __attrs_post_init__(self):
        if not 0.0 < self.cutoff <= np.pi:
            raise ConfigurationError("window cutoff angle must lie in (0, pi]")
        if not 0.0 <= self.taper_fraction <= 1.0:
            raise ConfigurationError("window taper fraction must lie in [0, 1]")
        if self.taper not in TAPERS:
            raise ConfigurationError(f"unsupported window taper {self.taper!r}")


def default_window(region_center, scan_center, cutoff_deg=settings.WINDOW_CUTOFF_DEG,
                   taper_fraction=settings.WINDOW_TAPER):
    """Window centered on the direction from the region toward the scan-plane center."""
    direction = vec3(scan_center) - vec3(region_center)
    return SpectralWindow(center=direction, cutoff=np.deg2rad(cutoff_deg), taper_fraction=taper_fraction)


def spectral_window(khat, window):
    """Raised-cosine weight in the angle between khat and the window center."""
    khat = np.asarray(khat, dtype=float)
    gamma = np.arccos(np.clip(khat @ window.center, -1.0, 1.0))
    flat = (1.0 - window.taper_fraction) * window.cutoff
    weight = np.where(gamma <= flat, 1.0, 0.0)
    if window.taper_fraction > 0.0:
        roll = 0.5 * (1.0 + np.cos(np.pi * (gamma - flat) / (window.cutoff - flat)))
        weight = np.where((gamma > flat) & (gamma <= window.cutoff), roll, weight)
    return weight


def generate_image(spectrum, geometry, window, chunk=settings.IMAGE_CHUNK_VOXELS):
    """
    Windowed quadrature of the spectrum back to every voxel:
    sum_q w_q F(k^_q) J~_q exp(-j k k^_q . (r' - c)).
    """
    grid = spectrum.region.grid
    k = spectrum.wavenumber
    weights = grid.weights * spectral_window(grid.directions, window)
    values = np.zeros((geometry.n_voxels, 3), dtype=complex)
    if not np.any(weights):
        logger.warning(
            f"Spectral window removes every direction at {spectrum.frequency / 1e9:.4f} GHz; image is zero"
        )
    else:
        weighted = weights[:, None] * spectrum.samples
        rel = geometry.positions() - spectrum.region.center
        for start in range(0, len(rel), chunk):
            block = rel[start:start + chunk]
            values[start:start + chunk] = np.exp(-1j * k * (block @ grid.directions.T)) @ weighted
    return ImageVolume(
        geometry=geometry,
        values=values.reshape(tuple(geometry.counts) + (3,)),
        frequency=spectrum.frequency,
        tag="single",
    )


def image_scattered(spectra, geometry, make_window):
    """
    Sum of the images of every scattered-role spectrum of one frequency;
    make_window(region) supplies the window of each region.
    """
    scattered = [s for s in spectra if s.region.role == "scattered"]
    if not scattered:
        raise ConfigurationError("no scattered-role spectrum to image")
    total = None
    for spectrum in scattered:
        image = generate_image(spectrum, geometry, make_window(spectrum.region))
        total = image.values if total is None else total + image.values
    return ImageVolume(geometry=geometry, values=total, frequency=scattered[0].frequency, tag="single")


# ============================================================================
# Corrections and fusion
# ============================================================================

def _per_component(value):
    if value is None:
        return None
    out = np.array(value, dtype=float).reshape(3)
    out.setflags(write=False)
    return out


@attrs.define(frozen=True, eq=False)
class CorrectionModel:
    tx_position: np.ndarray = attrs.field(converter=vec3)
    ref_position: np.ndarray = attrs.field(converter=vec3)
    enable_psi_s: bool = True
    enable_psi_ref: bool = True
    enable_magnitude: bool = True
    # extra phase (rad) per x, y, z image component; off when None
    per_component: np.ndarray = attrs.field(default=None, converter=_per_component)

    def __attrs_post_init__(self):
        if not (np.all(np.isfinite(self.tx_position)) and np.all(np.isfinite(self.ref_position))):
            raise ConfigurationError("correction positions must be finite")
        if self.enable_psi_ref and np.linalg.norm(self.ref_position - self.tx_position) == 0.0:
            raise ConfigurationError("reference position coincides with the Tx position")

    @classmethod
    def from_scenario(cls, scenario, **flags):
        return cls(tx_position=scenario.tx_position, ref_position=scenario.ref_position, **flags)

    def component_phases(self):
        if self.per_component is None:
            return np.ones(3, dtype=complex)
        return np.exp(1j * self.per_component)


def corrections(k, r_prime, model):
    """
    Product of the enabled factors psi_s(k, r') psi_ref(k) M_s(k, r').
    Scalar for a single point, one value per row for an (N, 3) array.
    """
    r_prime = np.asarray(r_prime, dtype=float)
    dist = np.linalg.norm(r_prime - model.tx_position, axis=-1)
    if (model.enable_psi_s or model.enable_magnitude) and np.any(dist <= settings.COINCIDENCE_TOLERANCE_M):
        raise SingularityError("correction evaluated at the Tx position")
    value = np.ones(dist.shape, dtype=complex)
    if model.enable_psi_s:
        value = value * np.exp(1j * k * dist)
    if model.enable_psi_ref:
        value = value * np.exp(-1j * k * np.linalg.norm(model.ref_position - model.tx_position))
    if model.enable_magnitude:
        value = value * (4.0 * np.pi * dist)
    return value[()] if value.ndim == 0 else value


def _check_geometries(images):
    geometry = images[0].geometry
    for image in images[1:]:
        if not geometry.compatible(image.geometry):
            raise IncompatibleDataError("per-frequency volumes do not share a voxel geometry")
    return geometry


def combine_frequencies(images, model, mode="coherent"):
    """
    Fuse per-frequency images {frequency: ImageVolume}. Coherent sums the
    corrected complex images; incoherent sums magnitudes per component
    weighted by M_s only.
    """
    if mode not in ("coherent", "incoherent"):
        raise ConfigurationError(f"fusion mode must be coherent or incoherent, got {mode!r}")
    if not images:
        raise IncompatibleDataError("no images to fuse")
    freqs = sorted(images)
    ordered = [images[f] for f in freqs]
    geometry = _check_geometries(ordered)
    positions = geometry.positions()
    shape = tuple(geometry.counts) + (3,)

    total = np.zeros((geometry.n_voxels, 3), dtype=complex)
    phases = model.component_phases()
    magnitude_only = attrs.evolve(model, enable_psi_s=False, enable_psi_ref=False)
    for f, image in zip(freqs, ordered):
        k = float(wavenumber(f))
        values = image.values.reshape(-1, 3)
        if mode == "coherent":
            total += corrections(k, positions, model)[:, None] * values * phases
        else:
            total += np.abs(corrections(k, positions, magnitude_only))[:, None] * np.abs(values)

    logger.info(f"Fused {len(freqs)} frequencies ({mode})")
    return ImageVolume(geometry=geometry, values=total.reshape(shape), frequency=None, tag=mode)


# ============================================================================
# Projections
# ============================================================================

@attrs.define(frozen=True, eq=False)
class MipMap:
    linear: np.ndarray
    db: np.ndarray
    axis: str
    u_coords: np.ndarray
    v_coords: np.ndarray
    floor_db: float
    peak: float
    tag: str = "single"


def mip_project(volume, axis="z", floor_db=settings.MIP_DB_FLOOR):
    """Maximum of the voxel vector magnitude along one volume axis, peak at 0 dB."""
    if axis not in COMPONENT_INDEX:
        raise ConfigurationError(f"projection axis must be x, y or z, got {axis!r}")
    ax = COMPONENT_INDEX[axis]
    linear = volume.magnitude().max(axis=ax)
    peak = float(linear.max())
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(linear / peak) if peak > 0 else np.full(linear.shape, -np.inf)
    db = np.maximum(db, floor_db)

    geometry = volume.geometry
    keep = [i for i in range(3) if i != ax]
    coords = [geometry.origin @ geometry.axes[i] + np.arange(geometry.counts[i]) * geometry.spacing[i] for i in keep]
    return MipMap(
        linear=linear, db=db, axis=axis, u_coords=coords[0], v_coords=coords[1],
        floor_db=float(floor_db), peak=peak, tag=volume.tag,
    )
