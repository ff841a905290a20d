from pathlib import Path

import numpy as np
import pytest

from nfimaging.items import FieldDataset, RegionSpec, Scatterer, ScanGrid, Scenario

SCENARIO_DIR = Path(__file__).resolve().parents[2] / "scenarios"


def desk_scenario(n=6, frequencies=(3.0e9,), scatterers=((0.02, -0.01, 0.0),), components=("x", "y", "z"),
                  half_width=0.3, z=0.4, seed=0, ref_component="y", reflectivity=1.0):
    """Small bench setup: y-dipole at 25 cm, probe plane at z, reference off to the side."""
    grid = ScanGrid.from_corners((-half_width, -half_width), (half_width, half_width), z, n, n, components)
    return Scenario(
        tx_position=(0.0, 0.0, 0.25),
        tx_polarization=(0.0, 1.0, 0.0),
        ref_position=(-0.3, 0.0, 0.35),
        scatterers=[Scatterer(p, reflectivity) for p in scatterers],
        scan_grid=grid,
        frequencies=frequencies,
        rng_seed=seed,
        ref_component=ref_component,
        name="desk",
    )


def sphere_points(n, radius, center=(0.0, 0.0, 0.0)):
    """Fibonacci points on a sphere; near-uniform probe coverage."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azimuth = np.pi * (1.0 + 5.0 ** 0.5) * i
    unit = np.stack([np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)], axis=1)
    return np.asarray(center) + radius * unit


def observations(positions, fields, frequencies, components=("x", "y", "z"), background_subtracted=True):
    """Already-normalized dataset wrapping fields of shape (m, f, c)."""
    fields = np.asarray(fields, dtype=complex)
    return FieldDataset(
        probe_fields=fields,
        ref_field=np.ones(fields.shape[:2], dtype=complex),
        frequencies=frequencies,
        probe_positions=positions,
        components=components,
        normalized=True,
        background_subtracted=background_subtracted,
    )


@pytest.fixture
def make_scenario():
    return desk_scenario


@pytest.fixture
def toi_spec():
    return RegionSpec(name="toi", center=(0.0, 0.0, 0.0), radius=0.05, role="scattered")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_SCENARIO = """\
[scenario]
name = tiny
seed = 5

[transmitter]
position_m = 0, 0, 0.25
polarization = 0, 1, 0

[reference]
position_m = -0.3, 0, 0.35
component = y

[scan]
corner_a_m = -0.3, -0.3
corner_b_m = 0.3, 0.3
z_m = 0.4
n_u = 6
n_v = 6

[frequencies]
list_ghz = 3.0, 3.2

[scatterer:target]
position_m = 0.02, 0, 0
"""

TINY_PIPELINE = """\
[pipeline]
scenario = tiny.cfg
mode = full
background = true

[region:toi]
center_m = 0, 0, 0
radius_m = {radius}

[solver]
max_iterations = 60
relative_residual_target = 1e-2
accuracy_digits = 3

[volume]
lower_m = -0.06, -0.06, -0.02
upper_m = 0.06, 0.06, 0.02
spacing_m = 0.02

[mip]
axis = z
"""


def write_tiny_config(directory, radius=0.06):
    """Two-frequency bench scenario plus a full pipeline file; returns the pipeline path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "tiny.cfg").write_text(TINY_SCENARIO)
    pipeline = directory / "tiny_pipeline.cfg"
    pipeline.write_text(TINY_PIPELINE.format(radius=radius))
    return pipeline
