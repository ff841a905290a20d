"""
Image quality metrics: peak-to-artifact ratio, peak location and the
phase flatness of corrected per-frequency images.
"""

import logging

import numpy as np

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError, IncompatibleDataError, MetricError
from nfimaging.imaging import corrections
from nfimaging.items import vec3, wavelength, wavenumber

logger = logging.getLogger(__name__)

METRICS = ("peak-to-artifact-dB", "peak-location", "phase-flatness")


def _resultant(phases):
    phases = np.asarray(phases, dtype=float).reshape(-1)
    if phases.size == 0:
        raise MetricError("no phases given")
    return float(np.abs(np.mean(np.exp(1j * phases))))


def circular_variance(phases):
    return 1.0 - _resultant(phases)


def circular_std(phases):
    """sqrt(-2 ln R) with R the mean resultant length."""
    r = _resultant(phases)
    if r <= 0.0:
        return float("inf")
    return float(np.sqrt(-2.0 * np.log(min(r, 1.0))))


def _magnitude(volume):
    mag = volume.magnitude()
    if mag.size == 0 or not np.any(mag > 0):
        raise MetricError(f"volume '{volume.tag}' is empty")
    return mag


def peak_location(volume):
    """(voxel index, voxel position) of the global magnitude maximum."""
    mag = _magnitude(volume)
    index = np.unravel_index(int(np.argmax(mag)), mag.shape)
    flat = np.ravel_multi_index(index, mag.shape)
    return tuple(int(i) for i in index), volume.geometry.positions()[flat]


def peak_to_artifact_db(volume, scatterers, guard_radius):
    """
    20 log10 of the global peak over the largest magnitude found outside
    guard spheres around every true scatterer position.
    """
    mag = _magnitude(volume).reshape(-1)
    positions = volume.geometry.positions()
    outside = np.ones(len(positions), dtype=bool)
    for point in scatterers:
        outside &= np.linalg.norm(positions - vec3(point), axis=1) > guard_radius
    if not np.any(outside):
        raise MetricError("guard spheres cover the whole volume")
    artifact = float(mag[outside].max())
    if artifact == 0.0:
        return float("inf")
    return float(20.0 * np.log10(mag.max() / artifact))


def dominant_component(images, point):
    """Component with the largest summed magnitude at the voxel nearest to point."""
    totals = np.zeros(3)
    for image in images.values():
        totals += np.abs(image.values[image.geometry.index_of(point)])
    return int(np.argmax(totals))


def corrected_phases(images, point, model, component=None):
    freqs = sorted(images)
    if not freqs:
        raise MetricError("no per-frequency images given")
    if component is None:
        component = dominant_component(images, point)
    phases = []
    for f in freqs:
        image = images[f]
        idx = image.geometry.index_of(point)
        voxel = image.geometry.positions()[np.ravel_multi_index(idx, image.geometry.counts)]
        value = corrections(float(wavenumber(f)), voxel, model) * image.values[idx][component]
        if value == 0:
            raise MetricError(f"image at {f / 1e9:.4f} GHz vanishes at the probed voxel")
        phases.append(np.angle(value))
    return np.asarray(phases)


def phase_flatness(images, point, model, component=None):
    """Circular std (rad) of the corrected per-frequency phases at one voxel."""
    return circular_std(corrected_phases(images, point, model, component))


def compare_images(a, b, metric, scatterers=(), guard_radius=None, frequency=None,
                   point=None, model=None):
    """
    Evaluate one metric on two images and report both values and their
    difference. For phase-flatness a and b are per-frequency image maps.
    """
    if metric not in METRICS:
        raise ConfigurationError(f"unknown metric {metric!r}; choose from {METRICS}")

    if metric == "peak-location":
        (ia, pa), (ib, pb) = peak_location(a), peak_location(b)
        return {
            "metric": metric,
            "a": {"index": list(ia), "position_m": pa.tolist()},
            "b": {"index": list(ib), "position_m": pb.tolist()},
            "distance_m": float(np.linalg.norm(pa - pb)),
        }

    if metric == "phase-flatness":
        if point is None or model is None:
            raise ConfigurationError("phase-flatness needs a voxel point and a correction model")
        va, vb = phase_flatness(a, point, model), phase_flatness(b, point, model)
        return {"metric": metric, "a": va, "b": vb, "difference": va - vb, "point_m": vec3(point).tolist()}

    if not a.geometry.compatible(b.geometry):
        raise IncompatibleDataError("peak-to-artifact comparison needs matching volume geometries")
    if guard_radius is None:
        if frequency is None:
            raise ConfigurationError("peak-to-artifact needs a guard radius or a frequency")
        guard_radius = settings.GUARD_RADIUS_WAVELENGTHS * wavelength(frequency)
    va = peak_to_artifact_db(a, scatterers, guard_radius)
    vb = peak_to_artifact_db(b, scatterers, guard_radius)
    logger.info(f"peak-to-artifact: {a.tag} {va:.2f} dB, {b.tag} {vb:.2f} dB")
    return {"metric": metric, "a": va, "b": vb, "difference": va - vb, "guard_radius_m": guard_radius}
