"""
Synthetic measurement generator.

A Hertzian dipole illuminates isotropic point scatterers; scattering is
linearized (Born, no multiple scattering); every probe reading and the
co-recorded reference reading share one modulation coefficient B_m(f).
Physical pre-factors are absorbed into a unit-amplitude dipole.
"""

import logging

import attrs
import numpy as np

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError, DegenerateReferenceError, SingularityError
from nfimaging.items import (
    COMPONENT_INDEX,
    FieldDataset,
    ModulationModel,
    component_indices,
    substream,
    wavenumber,
)
from nfimaging.utils.executor import map_keyed

logger = logging.getLogger(__name__)


def _separation(r, r_prime):
    diff = np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist <= settings.COINCIDENCE_TOLERANCE_M):
        raise SingularityError("source and observation points coincide")
    return diff, dist


def scalar_green(k, r, r_prime):
    """g = exp(-jkR) / (4 pi R)."""
    _, dist = _separation(r, r_prime)
    return np.exp(-1j * k * dist) / (4.0 * np.pi * dist)


def dyadic_green(k, r, r0):
    """
    (I + k^-2 grad grad) g(r, r0) as a (..., 3, 3) array.

    Closed form g * [A I - B R^R^] with A = 1 + 1/(jkR) - 1/(kR)^2 and
    B = 1 + 3/(jkR) - 3/(kR)^2.
    """
    diff, dist = _separation(r, r0)
    g = np.exp(-1j * k * dist) / (4.0 * np.pi * dist)
    kr = k * dist
    a = np.asarray(1.0 + 1.0 / (1j * kr) - 1.0 / kr**2)
    b = np.asarray(1.0 + 3.0 / (1j * kr) - 3.0 / kr**2)
    rhat = diff / dist[..., None]
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(3)
    return g[..., None, None] * (a[..., None, None] * eye - b[..., None, None] * outer)


def dipole_field(k, r0, p, r):
    """Electric field of a Hertzian dipole with moment p at r0, observed at r."""
    p = np.asarray(p, dtype=complex)
    return np.einsum("...ij,j->...i", dyadic_green(k, r, r0), p)


@attrs.define(frozen=True, eq=False)
class BornFields:
    incident: np.ndarray  # (m, 3)
    scattered: np.ndarray  # (m, 3)
    ref_incident: np.ndarray  # (3,)
    ref_scattered: np.ndarray  # (3,)

    @property
    def total(self):
        return self.incident + self.scattered

    @property
    def ref_total(self):
        return self.ref_incident + self.ref_scattered


def _induced_moments(scenario, k):
    moments = []
    for index, scatterer in enumerate(scenario.scatterers):
        try:
            e_inc = dipole_field(k, scenario.tx_position, scenario.tx_polarization, scatterer.position)
        except SingularityError:
            raise SingularityError(f"scatterer {index} coincides with the Tx antenna") from None
        moments.append(scatterer.reflectivity * e_inc)
    return moments


def _scattered_at(scenario, k, moments, points):
    field = np.zeros(points.shape, dtype=complex)
    for index, (scatterer, moment) in enumerate(zip(scenario.scatterers, moments)):
        try:
            field += dipole_field(k, scatterer.position, moment, points)
        except SingularityError:
            raise SingularityError(f"scatterer {index} coincides with an observation point") from None
    return field


def born_fields(scenario, frequency):
    """Incident and singly-scattered fields at every probe and at the reference antenna."""
    scenario.frequency_index(frequency)
    k = float(wavenumber(frequency))
    probes = scenario.probe_positions
    ref = scenario.ref_position.reshape(1, 3)

    incident = dipole_field(k, scenario.tx_position, scenario.tx_polarization, probes)
    ref_incident = dipole_field(k, scenario.tx_position, scenario.tx_polarization, ref)[0]

    moments = _induced_moments(scenario, k)
    scattered = _scattered_at(scenario, k, moments, probes)
    ref_scattered = _scattered_at(scenario, k, moments, ref)[0]
    return BornFields(
        incident=incident,
        scattered=scattered,
        ref_incident=ref_incident,
        ref_scattered=ref_scattered,
    )


def synthesize_measurement(scenario, modulation=None):
    """
    Modulated probe and reference readings for every (probe, frequency).

    The same B_m(f) multiplies the probe reading and the reference reading
    of capture m.
    """
    n_probes, n_freqs = scenario.n_probes, len(scenario.frequencies)
    if modulation is None:
        modulation = ModulationModel.identity(n_probes, n_freqs)
    if modulation.coefficients.shape != (n_probes, n_freqs):
        raise ConfigurationError(
            f"modulation covers {modulation.coefficients.shape}, scenario needs {(n_probes, n_freqs)}"
        )

    comp_idx = component_indices(scenario.components)
    p_idx = COMPONENT_INDEX[scenario.ref_component]
    per_freq = map_keyed(lambda f: born_fields(scenario, f), list(scenario.frequencies))

    probe_fields = np.empty((n_probes, n_freqs, len(comp_idx)), dtype=complex)
    ref_field = np.empty((n_probes, n_freqs), dtype=complex)
    for fi, f in enumerate(scenario.frequencies):
        fields = per_freq[f]
        ref_value = fields.ref_total[p_idx]
        if abs(ref_value) == 0.0:
            raise DegenerateReferenceError(
                f"reference component {scenario.ref_component} vanishes at {f / 1e9:.4f} GHz",
                indices=[(m, fi) for m in range(n_probes)],
            )
        b = modulation.coefficients[:, fi]
        probe_fields[:, fi, :] = b[:, None] * fields.total[:, comp_idx]
        ref_field[:, fi] = b * ref_value

    logger.info(
        f"Synthesized '{scenario.name}': {n_probes} probes x {n_freqs} frequencies x "
        f"{len(comp_idx)} components, {len(scenario.scatterers)} scatterers"
    )
    return FieldDataset(
        probe_fields=probe_fields,
        ref_field=ref_field,
        frequencies=scenario.frequencies,
        probe_positions=scenario.probe_positions,
        components=scenario.components,
        ref_component=scenario.ref_component,
        scenario=scenario,
    )


def background_scenario(scenario):
    """Same setup with the targets removed."""
    return attrs.evolve(scenario, scatterers=(), name=f"{scenario.name}-background")


def add_measurement_noise(dataset, snr_db, seed=0):
    """
    Additive circular complex Gaussian noise on the probe fields, scaled so
    the noise RMS sits snr_db below the RMS of each frequency slice.
    """
    rng = np.random.default_rng(substream(seed, "noise"))
    fields = dataset.probe_fields
    rms = np.sqrt(np.mean(np.abs(fields) ** 2, axis=(0, 2), keepdims=True))
    sigma = rms * 10.0 ** (-snr_db / 20.0)
    noise = (rng.standard_normal(fields.shape) + 1j * rng.standard_normal(fields.shape)) / np.sqrt(2.0)
    return attrs.evolve(dataset, probe_fields=fields + sigma * noise)
