import attrs
import numpy as np
import pytest
from numpy.testing import assert_allclose

from nfimaging import ofdm_chain
from nfimaging.compare import circular_variance
from nfimaging.em_forward import synthesize_measurement
from nfimaging.exceptions import ChainError, ConfigurationError, FramingError, UndefinedHarmonicError
from nfimaging.isr_solver import normalize_by_reference
from nfimaging.ofdm_chain import (
    IqRecord,
    OfdmConfig,
    channel_apply,
    dataset_from_chain,
    draw_realizations,
    extract_harmonics,
    ofdm_synthesize,
    subcarrier_frequencies,
)


@pytest.fixture
def short_cfg():
    return OfdmConfig(n_symbols=8)


def test_default_numerology():
    cfg = OfdmConfig()
    assert cfg.capture_length == 96000
    assert cfg.duration == pytest.approx(6.25e-3)
    assert cfg.subcarrier_spacing == pytest.approx(60e3)
    assert len(cfg.active_subcarriers) == 21
    freqs = subcarrier_frequencies(cfg)
    assert freqs[0] == pytest.approx(2.41e9 - 80 * 60e3)
    assert freqs[-1] == pytest.approx(2.41e9 + 80 * 60e3)
    assert_allclose(np.diff(freqs), 480e3)


@pytest.mark.parametrize("kwargs", [
    {"n_fft": 100},
    {"active_subcarriers": (-128, 0, 8)},
    {"active_subcarriers": ()},
    {"cyclic_prefix_len": -1},
    {"n_symbols": 0},
    {"constellation": "16QAM"},
])
def test_invalid_configurations(kwargs):
    with pytest.raises(ConfigurationError):
        OfdmConfig(**kwargs)


def test_synthesized_record_layout(short_cfg):
    iq = ofdm_synthesize(short_cfg)
    assert len(iq.samples) == short_cfg.capture_length
    assert iq.sample_rate == short_cfg.sample_rate
    assert iq.channel_id == "probe"
    # cyclic prefix repeats the tail of each symbol body
    symbol = iq.samples[: short_cfg.symbol_length]
    assert_allclose(symbol[: short_cfg.cyclic_prefix_len], symbol[-short_cfg.cyclic_prefix_len:])
    again = ofdm_synthesize(short_cfg)
    assert_allclose(again.samples, iq.samples, rtol=0, atol=0)


def test_unit_channel_yields_unit_harmonics(short_cfg):
    harmonics = extract_harmonics(ofdm_synthesize(short_cfg), short_cfg)
    assert_allclose(harmonics, np.ones(21), atol=1e-12)


def test_channel_response_is_recovered(short_cfg, rng):
    response = rng.standard_normal(21) + 1j * rng.standard_normal(21)
    iq = channel_apply(ofdm_synthesize(short_cfg), short_cfg, response, channel_id="reference")
    assert iq.channel_id == "reference"
    assert_allclose(extract_harmonics(iq, short_cfg), response, rtol=1e-12)


def test_channel_response_length_checked(short_cfg):
    with pytest.raises(ConfigurationError):
        channel_apply(ofdm_synthesize(short_cfg), short_cfg, np.ones(20))


def test_truncated_record_is_a_framing_error(short_cfg):
    iq = ofdm_synthesize(short_cfg)
    cut = IqRecord(samples=iq.samples[:-10], sample_rate=iq.sample_rate)
    with pytest.raises(FramingError):
        extract_harmonics(cut, short_cfg)


def test_record_longer_than_pilots_is_a_framing_error(short_cfg):
    iq = ofdm_synthesize(attrs.evolve(short_cfg, n_symbols=10))
    with pytest.raises(FramingError):
        extract_harmonics(iq, short_cfg)


def test_iq_record_length_mismatch():
    with pytest.raises(FramingError):
        IqRecord(samples=np.zeros(10), sample_rate=1e6, capture_length=12)
    with pytest.raises(ConfigurationError):
        IqRecord(samples=np.zeros(10), sample_rate=1e6, channel_id="monitor")


def test_missing_pilot_energy(short_cfg, monkeypatch):
    iq = ofdm_synthesize(short_cfg)
    monkeypatch.setattr(ofdm_chain, "pilot_symbols", lambda cfg: np.zeros((cfg.n_symbols, 21), dtype=complex))
    with pytest.raises(UndefinedHarmonicError):
        extract_harmonics(iq, short_cfg)


def test_realizations_are_independent_and_reproducible():
    cfg = OfdmConfig()
    a = draw_realizations(50, cfg, seed=4)
    assert a == draw_realizations(50, cfg, seed=4)
    assert len({r.payload_seed for r in a}) > 45
    assert len({r.drift_phase for r in a}) == 50
    still = draw_realizations(5, attrs.evolve(cfg, capture_phase_drift=False), seed=4)
    assert all(r.drift_phase == 0.0 for r in still)


def test_chain_matches_direct_synthesis_after_normalization(make_scenario):
    cfg = OfdmConfig()
    scenario = make_scenario(n=10, frequencies=(1.0e9,), scatterers=((0.05, 0.0, 0.0),))
    chain = dataset_from_chain(scenario, cfg, seed=3)
    direct = synthesize_measurement(attrs.evolve(scenario, frequencies=subcarrier_frequencies(cfg)))

    assert chain.shape == (100, 21, 3)
    assert_allclose(chain.frequencies, subcarrier_frequencies(cfg))
    a = normalize_by_reference(chain).probe_fields
    b = normalize_by_reference(direct).probe_fields
    assert_allclose(a, b, rtol=1e-9, atol=1e-12 * np.abs(b).max())


def test_raw_harmonics_are_spatially_incoherent(make_scenario):
    cfg = OfdmConfig(n_symbols=2)
    scenario = make_scenario(n=30, frequencies=(1.0e9,), components=("y",))
    chain = dataset_from_chain(scenario, cfg, seed=9)
    raw = np.angle(chain.probe_fields[:, 10, 0])
    assert circular_variance(raw) > 0.9

    normalized = normalize_by_reference(chain).probe_fields[:, 10, 0]
    direct = synthesize_measurement(attrs.evolve(scenario, frequencies=subcarrier_frequencies(cfg)))
    expected = normalize_by_reference(direct).probe_fields[:, 10, 0]
    assert np.max(np.abs(np.angle(normalized / expected))) < 1e-9


def test_chain_failure_names_the_position(make_scenario, monkeypatch):
    cfg = OfdmConfig(n_symbols=2)

    def broken(iq, cfg):
        raise FramingError("lost sync")

    monkeypatch.setattr(ofdm_chain, "extract_harmonics", broken)
    with pytest.raises(ChainError) as info:
        dataset_from_chain(make_scenario(n=2, frequencies=(1.0e9,)), cfg)
    assert info.value.position == 0
    assert isinstance(info.value.cause, FramingError)
    assert info.value.exit_code == 3


def test_realization_count_checked(make_scenario):
    cfg = OfdmConfig(n_symbols=2)
    with pytest.raises(ConfigurationError):
        dataset_from_chain(make_scenario(n=2, frequencies=(1.0e9,)), cfg, realizations=draw_realizations(3, cfg))
