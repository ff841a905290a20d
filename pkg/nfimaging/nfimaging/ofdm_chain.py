"""
SDR-style measurement path: OFDM baseband synthesis, a narrowband
multiplicative channel per subcarrier, dual-channel capture and FFT
harmonic extraction.

Each probe position gets its own transmit realization (payload and
capture phase drift), which is what makes raw harmonics spatially
incoherent; dividing the probe harmonics by the reference harmonics of
the same capture restores coherence.
"""

import logging

import attrs
import numpy as np

from nfimaging import settings
from nfimaging.exceptions import (
    ChainError,
    ConfigurationError,
    FramingError,
    NumericalStageError,
    UndefinedHarmonicError,
)
from nfimaging.em_forward import born_fields
from nfimaging.items import COMPONENT_INDEX, FieldDataset, component_indices, substream
from nfimaging.utils.executor import map_keyed

logger = logging.getLogger(__name__)

CHANNELS = ("probe", "reference")
QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


def _power_of_two(instance, attribute, value):
    if value < 2 or value & (value - 1):
        raise ConfigurationError(f"n_fft must be a power of two, got {value}")


@attrs.define(frozen=True)
class OfdmConfig:
    carrier_frequency: float = attrs.field(default=settings.OFDM_CARRIER_HZ, converter=float)
    sample_rate: float = attrs.field(default=settings.OFDM_SAMPLE_RATE_HZ, converter=float)
    n_fft: int = attrs.field(default=settings.OFDM_N_FFT, converter=int, validator=_power_of_two)
    active_subcarriers: tuple = attrs.field(
        default=settings.OFDM_ACTIVE_SUBCARRIERS, converter=lambda a: tuple(sorted(int(b) for b in a))
    )
    cyclic_prefix_len: int = attrs.field(default=settings.OFDM_CYCLIC_PREFIX, converter=int)
    n_symbols: int = attrs.field(default=settings.OFDM_N_SYMBOLS, converter=int)
    constellation: str = "QPSK"
    rng_seed: int = attrs.field(default=0, converter=int)
    # random common phase per capture (missing Tx-Rx synchronization)
    capture_phase_drift: bool = True

    def __attrs_post_init__(self):
        if not self.active_subcarriers:
            raise ConfigurationError("at least one active subcarrier is required")
        if len(set(self.active_subcarriers)) != len(self.active_subcarriers):
            raise ConfigurationError("duplicate active subcarriers")
        if max(abs(b) for b in self.active_subcarriers) >= self.n_fft // 2:
            raise ConfigurationError("active subcarrier offsets must stay below n_fft / 2")
        if self.cyclic_prefix_len < 0 or self.cyclic_prefix_len > self.n_fft:
            raise ConfigurationError("cyclic prefix must be between 0 and n_fft samples")
        if self.n_symbols < 1:
            raise ConfigurationError("n_symbols must be positive")
        if self.constellation.upper() != "QPSK":
            raise ConfigurationError(f"unsupported constellation {self.constellation!r}")
        if self.sample_rate <= self.occupied_bandwidth:
            raise ConfigurationError("sample rate must exceed the occupied bandwidth")

    @property
    def subcarrier_spacing(self):
        return self.sample_rate / self.n_fft

    @property
    def occupied_bandwidth(self):
        bins = self.active_subcarriers
        return (max(bins) - min(bins) + 1) * self.subcarrier_spacing

    @property
    def symbol_length(self):
        return self.n_fft + self.cyclic_prefix_len

    @property
    def capture_length(self):
        return self.n_symbols * self.symbol_length

    @property
    def duration(self):
        return self.capture_length / self.sample_rate


@attrs.define(frozen=True, eq=False)
class IqRecord:
    samples: np.ndarray = attrs.field(converter=lambda a: np.asarray(a, dtype=complex).reshape(-1))
    sample_rate: float = attrs.field(converter=float)
    channel_id: str = "probe"
    capture_length: int = attrs.field(default=None)

    def __attrs_post_init__(self):
        if self.capture_length is None:
            object.__setattr__(self, "capture_length", len(self.samples))
        if self.channel_id not in CHANNELS:
            raise ConfigurationError(f"channel_id must be one of {CHANNELS}")
        if len(self.samples) != self.capture_length:
            raise FramingError(f"record holds {len(self.samples)} samples, expected {self.capture_length}")
        if not np.all(np.isfinite(self.samples)):
            raise NumericalStageError("I/Q record contains non-finite samples")

    @property
    def duration(self):
        return self.capture_length / self.sample_rate


def subcarrier_frequencies(cfg):
    """Absolute RF frequency of every active subcarrier."""
    return cfg.carrier_frequency + np.asarray(cfg.active_subcarriers) * cfg.subcarrier_spacing


def pilot_symbols(cfg):
    """The (n_symbols, n_active) QPSK payload drawn from cfg.rng_seed."""
    rng = np.random.default_rng(substream(cfg.rng_seed, "payload"))
    picks = rng.integers(0, 4, size=(cfg.n_symbols, len(cfg.active_subcarriers)))
    return QPSK[picks]


def _bins(cfg):
    return np.asarray(cfg.active_subcarriers) % cfg.n_fft


def _frames(iq, cfg):
    """Strip the cyclic prefix and return FFTs of every symbol body."""
    if len(iq.samples) < cfg.symbol_length:
        raise FramingError(f"record shorter than one OFDM symbol ({cfg.symbol_length} samples)")
    if len(iq.samples) % cfg.symbol_length:
        raise FramingError(
            f"record length {len(iq.samples)} is not a whole number of {cfg.symbol_length}-sample symbols"
        )
    frames = iq.samples.reshape(-1, cfg.symbol_length)[:, cfg.cyclic_prefix_len:]
    return np.fft.fft(frames, axis=1)


def _assemble(spectra, cfg):
    bodies = np.fft.ifft(spectra, axis=1)
    if cfg.cyclic_prefix_len:
        bodies = np.concatenate([bodies[:, -cfg.cyclic_prefix_len:], bodies], axis=1)
    return bodies.reshape(-1)


def ofdm_synthesize(cfg, channel_id="probe"):
    """Baseband I/Q of cfg.n_symbols OFDM symbols with a cyclic prefix each."""
    grid = np.zeros((cfg.n_symbols, cfg.n_fft), dtype=complex)
    grid[:, _bins(cfg)] = pilot_symbols(cfg)
    samples = _assemble(grid, cfg)
    return IqRecord(samples=samples, sample_rate=cfg.sample_rate, channel_id=channel_id)


def channel_apply(iq, cfg, response, channel_id=None):
    """
    Multiply every active bin of every symbol by its channel response and
    rebuild the time record (prefix regenerated from the filtered body).
    """
    response = np.asarray(response, dtype=complex).reshape(-1)
    if response.shape != (len(cfg.active_subcarriers),):
        raise ConfigurationError(
            f"channel response needs {len(cfg.active_subcarriers)} values, got {response.shape[0]}"
        )
    spectra = _frames(iq, cfg)
    spectra[:, _bins(cfg)] *= response
    return IqRecord(
        samples=_assemble(spectra, cfg),
        sample_rate=iq.sample_rate,
        channel_id=channel_id or iq.channel_id,
    )


def extract_harmonics(iq, cfg):
    """
    Complex harmonic per active subcarrier: per-symbol FFT bins averaged
    coherently with the known pilots wiped off.
    """
    spectra = _frames(iq, cfg)[:, _bins(cfg)]
    if spectra.shape[0] > cfg.n_symbols:
        raise FramingError(f"record holds {spectra.shape[0]} symbols, pilots cover {cfg.n_symbols}")
    pilots = pilot_symbols(cfg)[: spectra.shape[0]]
    energy = np.sum(np.abs(pilots) ** 2, axis=0)
    if np.any(energy == 0.0):
        bad = [cfg.active_subcarriers[i] for i in np.flatnonzero(energy == 0.0)]
        raise UndefinedHarmonicError(f"no pilot energy on subcarriers {bad}")
    return np.sum(spectra * np.conj(pilots), axis=0) / energy


# ============================================================================
# Dataset assembly
# ============================================================================

@attrs.define(frozen=True)
class TransmitRealization:
    payload_seed: int
    drift_phase: float = 0.0


def draw_realizations(n_probes, cfg, seed=0):
    """One independent payload and capture drift per probe position."""
    payload = np.random.default_rng(substream(seed, "payload")).integers(0, 2**31 - 1, size=n_probes)
    drift_rng = np.random.default_rng(substream(seed, "capture-drift"))
    drift = drift_rng.uniform(0.0, 2.0 * np.pi, size=n_probes)
    if not cfg.capture_phase_drift:
        drift = np.zeros(n_probes)
    return [TransmitRealization(int(p), float(d)) for p, d in zip(payload, drift)]


def capture_records(cfg, realization, probe_responses, ref_response):
    """
    Time records of one capture: the same transmit burst through every
    probe-component channel and through the reference channel.
    """
    cfg_m = attrs.evolve(cfg, rng_seed=realization.payload_seed)
    tx = ofdm_synthesize(cfg_m)
    drift = np.exp(1j * realization.drift_phase)
    probes = [channel_apply(tx, cfg_m, drift * resp, channel_id="probe") for resp in probe_responses]
    ref = channel_apply(tx, cfg_m, drift * ref_response, channel_id="reference")
    return cfg_m, probes, ref


def _capture(cfg, realization, probe_responses, ref_response):
    cfg_m, probes, ref = capture_records(cfg, realization, probe_responses, ref_response)
    harmonics = [extract_harmonics(record, cfg_m) for record in probes]
    return np.stack(harmonics, axis=-1), extract_harmonics(ref, cfg_m)


def chain_responses(scenario, cfg):
    """
    Scenario moved onto the subcarrier frequencies, with the Born channel
    responses per (probe, subcarrier, component) and per reference subcarrier.
    """
    freqs = subcarrier_frequencies(cfg)
    scenario = attrs.evolve(scenario, frequencies=freqs)
    comp_idx = component_indices(scenario.components)
    p_idx = COMPONENT_INDEX[scenario.ref_component]
    fields = [born_fields(scenario, f) for f in freqs]
    probe_response = np.stack([fld.total[:, comp_idx] for fld in fields], axis=1)
    ref_response = np.array([fld.ref_total[p_idx] for fld in fields])
    return scenario, probe_response, ref_response


def dataset_from_chain(scenario, cfg, realizations=None, seed=None):
    """
    Run the capture chain at every probe position and return the extracted
    harmonics as a FieldDataset on the subcarrier frequency table.
    """
    scenario, probe_response, ref_response = chain_responses(scenario, cfg)
    n_probes = scenario.n_probes
    if realizations is None:
        realizations = draw_realizations(n_probes, cfg, scenario.rng_seed if seed is None else seed)
    if len(realizations) != n_probes:
        raise ConfigurationError(f"need {n_probes} transmit realizations, got {len(realizations)}")

    def run_position(m):
        try:
            return _capture(cfg, realizations[m], probe_response[m].T, ref_response)
        except NumericalStageError as e:
            raise ChainError(m, e) from e

    captures = map_keyed(run_position, range(n_probes))
    probe_fields = np.stack([captures[m][0] for m in range(n_probes)])
    ref_field = np.stack([captures[m][1] for m in range(n_probes)])

    logger.info(
        f"Captured {n_probes} positions x {len(scenario.frequencies)} subcarriers around "
        f"{cfg.carrier_frequency / 1e9:.3f} GHz ({cfg.capture_length} samples, {cfg.duration * 1e3:.2f} ms)"
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
