"""
Binary containers for datasets (NFD1), spectra (PWS1) and image volumes
(IMG1), raw I/Q dumps, MIP exports and JSON sidecars.

All binary payloads are little-endian; complex values are complex128
with interleaved real and imaginary parts.
"""

import json
import logging
import struct
from pathlib import Path

import attrs
import numpy as np
import pandas as pd
from itemadapter import ItemAdapter

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError
from nfimaging.items import FieldDataset, ImageVolume, PlaneWaveSpectrum, SourceRegion, VolumeGeometry
from nfimaging.ofdm_chain import IqRecord
from nfimaging.specfun import QuadratureGrid

logger = logging.getLogger(__name__)

VERSION = 1
COMPLEX = np.dtype("<c16")
REAL = np.dtype("<f8")

# magic, version, n_probe, n_freq, n_comp, flags, component codes, reference component
DATASET_HEADER = struct.Struct("<4sHIIIH3s1s")
# magic, version, n_spectra
SPECTRA_HEADER = struct.Struct("<4sHI")
# frequency, role, order, band limit, n_theta, n_phi, n_dir, name length
SPECTRUM_BLOCK = struct.Struct("<dBIIIIIH")
# magic, version, counts, tag, frequency (NaN when fused)
VOLUME_HEADER = struct.Struct("<4sH3I16sd")

FLAG_NORMALIZED = 1
FLAG_BACKGROUND = 2
ROLES = ("incident", "scattered")


# ============================================================================
# JSON sidecars
# ============================================================================

def _jsonable(obj):
    if attrs.has(type(obj)):
        return ItemAdapter(obj).asdict()
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return np.stack([obj.real, obj.imag], axis=-1).tolist()
        return obj.tolist()
    if isinstance(obj, (complex, np.complexfloating)):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding=settings.EXPORT_ENCODING) as f:
        json.dump(payload, f, default=_jsonable, indent=2, sort_keys=True)
    return path


def read_json(path):
    with open(path, "r", encoding=settings.EXPORT_ENCODING) as f:
        return json.load(f)


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise ConfigurationError(f"truncated container while reading {what}")
    return data


def _read_array(f, dtype, count, what):
    return np.frombuffer(_read_exact(f, dtype.itemsize * count, what), dtype=dtype).copy()


def _check_magic(magic, expected, path):
    if magic != expected:
        raise ConfigurationError(f"{path} is not a {expected.decode()} container (magic {magic!r})")


# ============================================================================
# NFD1: field datasets
# ============================================================================

def write_dataset(path, dataset):
    """Write a FieldDataset plus a JSON sidecar echoing its scenario."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, f, c = dataset.shape
    flags = (FLAG_NORMALIZED if dataset.normalized else 0) | (FLAG_BACKGROUND if dataset.background_subtracted else 0)
    codes = "".join(dataset.components).ljust(3, "-").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(DATASET_HEADER.pack(b"NFD1", VERSION, m, f, c, flags, codes, dataset.ref_component.encode("ascii")))
        fh.write(np.ascontiguousarray(dataset.frequencies, dtype=REAL).tobytes())
        fh.write(np.ascontiguousarray(dataset.probe_positions, dtype=REAL).tobytes())
        fh.write(np.ascontiguousarray(dataset.probe_fields, dtype=COMPLEX).tobytes())
        fh.write(np.ascontiguousarray(dataset.ref_field, dtype=COMPLEX).tobytes())

    sidecar = {
        "kind": "field-dataset",
        "shape": [m, f, c],
        "components": list(dataset.components),
        "ref_component": dataset.ref_component,
        "normalized": dataset.normalized,
        "background_subtracted": dataset.background_subtracted,
        "scenario": dataset.scenario,
    }
    write_json(sidecar_path(path), sidecar)
    logger.debug(f"Wrote dataset {path} ({m}x{f}x{c})")
    return path


def read_dataset(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic, _, m, f, c, flags, codes, ref = DATASET_HEADER.unpack(
            _read_exact(fh, DATASET_HEADER.size, "dataset header")
        )
        _check_magic(magic, b"NFD1", path)
        frequencies = _read_array(fh, REAL, f, "frequency table")
        positions = _read_array(fh, REAL, m * 3, "probe positions").reshape(m, 3)
        probe_fields = _read_array(fh, COMPLEX, m * f * c, "probe fields").reshape(m, f, c)
        ref_field = _read_array(fh, COMPLEX, m * f, "reference field").reshape(m, f)
    return FieldDataset(
        probe_fields=probe_fields,
        ref_field=ref_field,
        frequencies=frequencies,
        probe_positions=positions,
        components=tuple(codes.decode("ascii").rstrip("-")),
        ref_component=ref.decode("ascii"),
        normalized=bool(flags & FLAG_NORMALIZED),
        background_subtracted=bool(flags & FLAG_BACKGROUND),
    )


# ============================================================================
# PWS1: plane-wave spectra of one frequency
# ============================================================================

def write_spectra(path, spectra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(SPECTRA_HEADER.pack(b"PWS1", VERSION, len(spectra)))
        for spectrum in spectra:
            region, grid = spectrum.region, spectrum.region.grid
            name = region.name.encode(settings.EXPORT_ENCODING)
            fh.write(SPECTRUM_BLOCK.pack(
                spectrum.frequency, ROLES.index(region.role), region.order, grid.band_limit,
                grid.n_theta, grid.n_phi, grid.size, len(name),
            ))
            fh.write(name)
            fh.write(np.append(region.center, region.radius).astype(REAL).tobytes())
            fh.write(np.ascontiguousarray(grid.directions, dtype=REAL).tobytes())
            fh.write(np.ascontiguousarray(grid.weights, dtype=REAL).tobytes())
            fh.write(np.ascontiguousarray(spectrum.samples, dtype=COMPLEX).tobytes())
    return path


def read_spectra(path):
    path = Path(path)
    spectra = []
    with open(path, "rb") as fh:
        magic, _, count = SPECTRA_HEADER.unpack(_read_exact(fh, SPECTRA_HEADER.size, "spectra header"))
        _check_magic(magic, b"PWS1", path)
        for _ in range(count):
            frequency, role, order, band_limit, n_theta, n_phi, n_dir, n_name = SPECTRUM_BLOCK.unpack(
                _read_exact(fh, SPECTRUM_BLOCK.size, "spectrum block")
            )
            name = _read_exact(fh, n_name, "region name").decode(settings.EXPORT_ENCODING)
            geometry = _read_array(fh, REAL, 4, "region geometry")
            grid = QuadratureGrid(
                directions=_read_array(fh, REAL, n_dir * 3, "directions").reshape(n_dir, 3),
                weights=_read_array(fh, REAL, n_dir, "weights"),
                band_limit=band_limit,
                n_theta=n_theta,
                n_phi=n_phi,
            )
            region = SourceRegion(
                center=geometry[:3], radius=geometry[3], role=ROLES[role], order=order, grid=grid, name=name,
            )
            samples = _read_array(fh, COMPLEX, n_dir * 3, "samples").reshape(n_dir, 3)
            spectra.append(PlaneWaveSpectrum(region=region, frequency=frequency, samples=samples))
    return spectra


# ============================================================================
# IMG1: image volumes
# ============================================================================

def write_volume(path, volume):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    geometry = volume.geometry
    frequency = np.nan if volume.frequency is None else volume.frequency
    with open(path, "wb") as fh:
        fh.write(VOLUME_HEADER.pack(
            b"IMG1", VERSION, *geometry.counts, volume.tag.encode("ascii")[:16].ljust(16, b"\0"), frequency,
        ))
        fh.write(geometry.origin.astype(REAL).tobytes())
        fh.write(np.ascontiguousarray(geometry.axes, dtype=REAL).tobytes())
        fh.write(np.asarray(geometry.spacing, dtype=REAL).tobytes())
        fh.write(np.ascontiguousarray(volume.values, dtype=COMPLEX).tobytes())
    return path


def read_volume(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic, _, nx, ny, nz, tag, frequency = VOLUME_HEADER.unpack(
            _read_exact(fh, VOLUME_HEADER.size, "volume header")
        )
        _check_magic(magic, b"IMG1", path)
        geometry = VolumeGeometry(
            origin=_read_array(fh, REAL, 3, "origin"),
            axes=_read_array(fh, REAL, 9, "axes").reshape(3, 3),
            counts=(nx, ny, nz),
            spacing=_read_array(fh, REAL, 3, "spacing"),
        )
        values = _read_array(fh, COMPLEX, nx * ny * nz * 3, "voxels").reshape(nx, ny, nz, 3)
    return ImageVolume(
        geometry=geometry,
        values=values,
        frequency=None if np.isnan(frequency) else float(frequency),
        tag=tag.rstrip(b"\0").decode("ascii"),
    )


# ============================================================================
# Raw I/Q
# ============================================================================

def write_iq(path, iq):
    """Interleaved float32 I/Q samples with a JSON sidecar for rate and channel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    interleaved = np.empty(2 * len(iq.samples), dtype="<f4")
    interleaved[0::2] = iq.samples.real
    interleaved[1::2] = iq.samples.imag
    interleaved.tofile(path)
    write_json(sidecar_path(path), {
        "kind": "iq", "sample_rate_hz": iq.sample_rate, "channel_id": iq.channel_id,
        "capture_length": iq.capture_length,
    })
    return path


def read_iq(path, sample_rate=None, channel_id=None):
    path = Path(path)
    meta = read_json(sidecar_path(path)) if sidecar_path(path).exists() else {}
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2:
        raise ConfigurationError(f"{path} holds an odd number of float32 values")
    rate = sample_rate or meta.get("sample_rate_hz")
    if rate is None:
        raise ConfigurationError(f"sample rate for {path} is unknown; pass it or keep the sidecar")
    return IqRecord(
        samples=raw[0::2].astype(float) + 1j * raw[1::2].astype(float),
        sample_rate=rate,
        channel_id=channel_id or meta.get("channel_id", "probe"),
    )


# ============================================================================
# MIP exports
# ============================================================================

def write_mip(stem, mip):
    """
    16-bit PGM (rows follow the first remaining axis), CSV of the dB map and
    a JSON sidecar describing the scaling. Returns the written paths.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    scale = 65535.0 / -mip.floor_db
    levels = np.rint((mip.db - mip.floor_db) * scale).clip(0, 65535).astype(">u2")
    rows, cols = levels.shape

    pgm = stem.with_suffix(".pgm")
    with open(pgm, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(levels.tobytes())

    csv = stem.with_suffix(".csv")
    frame = pd.DataFrame(mip.db, index=pd.Index(mip.u_coords, name="u_m"), columns=mip.v_coords)
    frame.to_csv(csv, float_format="%.6f")

    meta = write_json(stem.with_suffix(".json"), {
        "kind": "mip",
        "axis": mip.axis,
        "tag": mip.tag,
        "peak_linear": mip.peak,
        "floor_db": mip.floor_db,
        "pgm_scaling": f"db = floor_db + level * {-mip.floor_db} / 65535",
        "rows": rows,
        "cols": cols,
        "u_coords_m": mip.u_coords,
        "v_coords_m": mip.v_coords,
    })
    return [pgm, csv, meta]


def read_pgm(path):
    """16-bit binary PGM back to an integer array."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, _, rest = data.partition(b"\n65535\n")
    magic, dims = header.split(b"\n", 1)
    if magic != b"P5":
        raise ConfigurationError(f"{path} is not a binary PGM")
    cols, rows = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=">u2").reshape(rows, cols)
