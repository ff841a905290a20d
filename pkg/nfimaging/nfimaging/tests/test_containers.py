import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nfimaging.em_forward import synthesize_measurement
from nfimaging.exceptions import ConfigurationError
from nfimaging.imaging import mip_project
from nfimaging.items import ImageVolume, RegionSpec, VolumeGeometry
from nfimaging.ofdm_chain import OfdmConfig, channel_apply, ofdm_synthesize
from nfimaging.pws_translation import make_regions, point_source_spectrum
from nfimaging.utils.containers import (
    read_dataset,
    read_iq,
    read_json,
    read_pgm,
    read_spectra,
    read_volume,
    sidecar_path,
    write_dataset,
    write_iq,
    write_mip,
    write_spectra,
    write_volume,
)


@pytest.fixture
def volume(rng):
    geometry = VolumeGeometry.from_bounds((-0.02, -0.01, 0.0), (0.02, 0.01, 0.01), 0.01)
    shape = tuple(geometry.counts) + (3,)
    return ImageVolume(
        geometry=geometry,
        values=rng.standard_normal(shape) + 1j * rng.standard_normal(shape),
        frequency=None,
        tag="coherent",
    )


def test_dataset_round_trip(tmp_path, make_scenario):
    dataset = synthesize_measurement(make_scenario(n=4, frequencies=(3.0e9, 3.1e9), components=("y", "z")))
    path = write_dataset(tmp_path / "datasets" / "measurement.nfd", dataset)
    back = read_dataset(path)

    assert_array_equal(back.probe_fields, dataset.probe_fields)
    assert_array_equal(back.ref_field, dataset.ref_field)
    assert_array_equal(back.frequencies, dataset.frequencies)
    assert_array_equal(back.probe_positions, dataset.probe_positions)
    assert back.components == ("y", "z")
    assert back.ref_component == "y"
    assert not back.normalized
    assert back.scenario is None

    sidecar = read_json(sidecar_path(path))
    assert sidecar["kind"] == "field-dataset"
    assert sidecar["shape"] == [16, 2, 2]
    assert sidecar["scenario"]["name"] == "desk"


def test_spectra_round_trip(tmp_path):
    specs = [RegionSpec("toi", (0, 0, 0), 0.05), RegionSpec("tx", (0, 0, 0.25), 0.02, role="incident")]
    regions = make_regions(specs, 3.0e9)
    spectra = [point_source_spectrum(r, 3.0e9, [0.0, 1.0, 0.5], [0.01, 0.0, 0.0]) for r in regions]
    back = read_spectra(write_spectra(tmp_path / "spectrum.pws", spectra))

    assert len(back) == 2
    for original, restored in zip(spectra, back):
        assert restored.frequency == original.frequency
        assert restored.region.name == original.region.name
        assert restored.region.role == original.region.role
        assert restored.region.order == original.region.order
        assert restored.region.radius == original.region.radius
        assert_array_equal(restored.region.center, original.region.center)
        assert_array_equal(restored.region.grid.directions, original.region.grid.directions)
        assert_array_equal(restored.samples, original.samples)


def test_volume_round_trip(tmp_path, volume):
    back = read_volume(write_volume(tmp_path / "fused" / "coherent.img", volume))
    assert back.frequency is None
    assert back.tag == "coherent"
    assert back.geometry.compatible(volume.geometry)
    assert_array_equal(back.values, volume.values)

    single = ImageVolume(geometry=volume.geometry, values=volume.values, frequency=8.0e9)
    assert read_volume(write_volume(tmp_path / "single.img", single)).frequency == 8.0e9


def test_iq_round_trip(tmp_path):
    cfg = OfdmConfig(n_symbols=2)
    iq = channel_apply(ofdm_synthesize(cfg), cfg, np.full(21, 0.5 - 0.25j), channel_id="reference")
    path = write_iq(tmp_path / "iq" / "reference.cf32", iq)
    assert path.stat().st_size == 8 * cfg.capture_length

    back = read_iq(path)
    assert back.sample_rate == cfg.sample_rate
    assert back.channel_id == "reference"
    assert_allclose(back.samples, iq.samples, rtol=1e-6, atol=1e-6 * np.abs(iq.samples).max())


def test_iq_without_sidecar_needs_a_rate(tmp_path):
    cfg = OfdmConfig(n_symbols=2)
    path = write_iq(tmp_path / "probe.cf32", ofdm_synthesize(cfg))
    sidecar_path(path).unlink()
    with pytest.raises(ConfigurationError):
        read_iq(path)
    assert read_iq(path, sample_rate=cfg.sample_rate).channel_id == "probe"


def test_mip_export(tmp_path):
    geometry = VolumeGeometry.from_bounds((0.0, 0.0, 0.0), (0.04, 0.02, 0.01), 0.01)
    values = np.zeros(tuple(geometry.counts) + (3,), dtype=complex)
    values[4, 0, 1, 2] = 1.0
    values[1, 2, 0, 0] = 10.0 ** -0.5
    mip = mip_project(ImageVolume(geometry=geometry, values=values), axis="z", floor_db=-40.0)
    pgm, csv, meta = write_mip(tmp_path / "mip" / "single_z", mip)

    assert pgm.read_bytes().startswith(b"P5\n3 5\n65535\n")
    levels = read_pgm(pgm)
    assert levels.shape == (5, 3)
    assert levels[4, 0] == 65535
    # -10 dB on a 40 dB range
    assert levels[1, 2] == 49151
    assert levels[0, 0] == 0

    frame = pd.read_csv(csv, index_col=0)
    assert frame.shape == (5, 3)
    assert_allclose(frame.to_numpy(), mip.db, atol=1e-6)

    info = read_json(meta)
    assert info["axis"] == "z"
    assert info["floor_db"] == -40.0
    assert info["rows"] == 5 and info["cols"] == 3


def test_wrong_container_is_rejected(tmp_path, volume):
    path = write_volume(tmp_path / "volume.img", volume)
    with pytest.raises(ConfigurationError, match="PWS1"):
        read_spectra(path)
    with pytest.raises(ConfigurationError, match="NFD1"):
        read_dataset(path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(ConfigurationError, match="truncated"):
        read_volume(path)


def test_containers_are_byte_deterministic(tmp_path, volume):
    a = write_volume(tmp_path / "a.img", volume)
    b = write_volume(tmp_path / "b.img", volume)
    assert a.read_bytes() == b.read_bytes()
