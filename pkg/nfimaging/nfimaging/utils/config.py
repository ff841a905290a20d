"""
INI loaders for scenario and pipeline files.

Units live in the key names (position_m, start_ghz, step_mhz, ...).
Repeated objects use named sections: [scatterer:NAME], [region:NAME].
"""

import configparser
import logging
from pathlib import Path

import attrs
import numpy as np

from nfimaging import settings
from nfimaging.exceptions import ConfigurationError
from nfimaging.imaging import CorrectionModel, SpectralWindow
from nfimaging.isr_solver import NormalizationConfig, SolverConfig
from nfimaging.items import RegionSpec, Scatterer, ScanGrid, Scenario, VolumeGeometry, component_tuple
from nfimaging.ofdm_chain import OfdmConfig, subcarrier_frequencies

logger = logging.getLogger(__name__)

MODES = tuple(settings.MODE_STAGES)
FUSION_MODES = ("coherent", "incoherent")


class _Section:
    """Typed access to one INI section with errors that name file, section and key."""

    def __init__(self, parser, name, path):
        self.parser, self.name, self.path = parser, name, path
        if not parser.has_section(name):
            raise ConfigurationError(f"{path}: missing section [{name}]")
        self.data = parser[name]

    def _fail(self, key, problem):
        return ConfigurationError(f"{self.path}: [{self.name}] {key}: {problem}")

    def has(self, key):
        return key in self.data and self.data[key].strip() != ""

    def text(self, key, default=None):
        if not self.has(key):
            if default is None:
                raise self._fail(key, "missing")
            return default
        return self.data[key].strip()

    def number(self, key, default=None, cast=float):
        if not self.has(key):
            if default is None:
                raise self._fail(key, "missing")
            return default
        try:
            return cast(self.data[key])
        except ValueError:
            raise self._fail(key, f"not a number: {self.data[key]!r}") from None

    def flag(self, key, default=False):
        if not self.has(key):
            return default
        try:
            return self.data.getboolean(key)
        except ValueError:
            raise self._fail(key, f"not a boolean: {self.data[key]!r}") from None

    def vector(self, key, size=3, default=None):
        if not self.has(key):
            if default is None:
                raise self._fail(key, "missing")
            return np.asarray(default, dtype=float)
        try:
            values = [float(part) for part in self.data[key].replace(",", " ").split()]
        except ValueError:
            raise self._fail(key, f"not a list of numbers: {self.data[key]!r}") from None
        if len(values) != size:
            raise self._fail(key, f"expected {size} values, got {len(values)}")
        return np.asarray(values)


def _read(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        text = path.read_text(encoding=settings.EXPORT_ENCODING)
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigurationError(f"{path}: {e}") from None
    return parser, text


def _named(parser, prefix):
    return [(name.split(":", 1)[1].strip(), name) for name in parser.sections() if name.startswith(prefix + ":")]


def _wrap(path, where, build):
    try:
        return build()
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}: {where}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{path}: {where}: {e}") from None


# ============================================================================
# Scenario
# ============================================================================

def frequency_table(section):
    """Explicit list_ghz, or start_ghz/stop_ghz/step_mhz inclusive of both ends."""
    if section.has("list_ghz"):
        try:
            values = [float(v) for v in section.text("list_ghz").replace(",", " ").split()]
        except ValueError:
            raise section._fail("list_ghz", "not a list of numbers") from None
        return np.asarray(values) * 1e9
    start = section.number("start_ghz") * 1e9
    stop = section.number("stop_ghz") * 1e9
    step = section.number("step_mhz") * 1e6
    if step <= 0 or stop < start:
        raise section._fail("step_mhz", "needs positive step and stop >= start")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def load_scenario(path, frequencies=None, seed=None):
    """Build a Scenario from its INI file. frequencies/seed override the file."""
    path = Path(path)
    parser, _ = _read(path)
    head = _Section(parser, "scenario", path)
    tx = _Section(parser, "transmitter", path)
    ref = _Section(parser, "reference", path)
    scan = _Section(parser, "scan", path)

    if frequencies is None:
        frequencies = frequency_table(_Section(parser, "frequencies", path))

    scatterers = []
    for name, section_name in _named(parser, "scatterer"):
        section = _Section(parser, section_name, path)
        reflectivity = section.number("reflectivity", default=1.0, cast=lambda v: complex(v.replace(" ", "")))
        scatterers.append(_wrap(path, section_name, lambda: Scatterer(section.vector("position_m"), reflectivity)))

    grid = _wrap(path, "scan", lambda: ScanGrid.from_corners(
        scan.vector("corner_a_m", size=2),
        scan.vector("corner_b_m", size=2),
        scan.number("z_m"),
        scan.number("n_u", cast=int),
        scan.number("n_v", cast=int),
        component_tuple(scan.text("components", "x, y, z")),
    ))
    scenario = _wrap(path, "scenario", lambda: Scenario(
        tx_position=tx.vector("position_m"),
        tx_polarization=tx.vector("polarization"),
        ref_position=ref.vector("position_m"),
        scatterers=scatterers,
        scan_grid=grid,
        frequencies=frequencies,
        rng_seed=head.number("seed", default=0, cast=int) if seed is None else seed,
        ref_component=ref.text("component", settings.REFERENCE_COMPONENT),
        name=head.text("name", path.stem),
    ))
    return scenario


# ============================================================================
# Pipeline
# ============================================================================

@attrs.define(frozen=True, eq=False)
class ModulationSettings:
    enabled: bool = True
    spread_db: float = settings.MODULATION_SPREAD_DB


@attrs.define(frozen=True, eq=False)
class WindowSettings:
    cutoff_deg: float = settings.WINDOW_CUTOFF_DEG
    taper_fraction: float = settings.WINDOW_TAPER
    center: np.ndarray = None

    def build(self, region_center, scan_center):
        center = self.center if self.center is not None else np.asarray(scan_center) - np.asarray(region_center)
        return SpectralWindow(center=center, cutoff=np.deg2rad(self.cutoff_deg), taper_fraction=self.taper_fraction)


@attrs.define(frozen=True, eq=False)
class PipelineConfig:
    path: Path
    scenario_path: Path
    scenario: Scenario
    mode: str
    output_dir: Path
    seed: int
    regions: tuple = ()
    normalization: NormalizationConfig = None
    solver: SolverConfig = None
    accuracy_digits: int = settings.ACCURACY_DIGITS
    window: WindowSettings = attrs.Factory(WindowSettings)
    corrections: CorrectionModel = None
    fusion_mode: str = "coherent"
    volume: VolumeGeometry = None
    mip_axis: str = "z"
    mip_floor_db: float = settings.MIP_DB_FLOOR
    modulation: ModulationSettings = attrs.Factory(ModulationSettings)
    ofdm: OfdmConfig = None
    background: bool = False
    noise_snr_db: float = None
    echo: dict = attrs.Factory(dict)

    @property
    def frequencies(self):
        return self.scenario.frequencies


def _ofdm(parser, path, seed):
    s = _Section(parser, "ofdm", path)
    bins = range(
        s.number("subcarrier_first", cast=int),
        s.number("subcarrier_last", cast=int) + 1,
        s.number("subcarrier_step", default=1, cast=int),
    )
    return _wrap(path, "ofdm", lambda: OfdmConfig(
        carrier_frequency=s.number("carrier_ghz") * 1e9,
        sample_rate=s.number("sample_rate_mhz") * 1e6,
        n_fft=s.number("n_fft", default=settings.OFDM_N_FFT, cast=int),
        active_subcarriers=bins,
        cyclic_prefix_len=s.number("cyclic_prefix", default=settings.OFDM_CYCLIC_PREFIX, cast=int),
        n_symbols=s.number("n_symbols", default=settings.OFDM_N_SYMBOLS, cast=int),
        rng_seed=seed,
        capture_phase_drift=s.flag("capture_phase_drift", True),
    ))


def _check_required(parser, path, mode):
    stages = settings.MODE_STAGES[mode]
    needs = set()
    if "chain-synthesis" in stages:
        needs.add("ofdm")
    if "imaging" in stages:
        needs.add("volume")
    missing = sorted(name for name in needs if not parser.has_section(name))
    if missing:
        raise ConfigurationError(f"{path}: mode '{mode}' needs section(s) {missing}")
    if ("inversion" in stages) and not _named(parser, "region"):
        raise ConfigurationError(f"{path}: mode '{mode}' needs at least one [region:NAME] section")


def load_pipeline(path, mode=None, output_dir=None, seed=None):
    """
    Parse a pipeline file and the scenario it references. CLI arguments
    (mode, output_dir, seed) override the file.
    """
    path = Path(path)
    parser, text = _read(path)
    head = _Section(parser, "pipeline", path)
    mode = mode or head.text("mode", "full")
    if mode not in MODES:
        raise ConfigurationError(f"{path}: unknown mode {mode!r}; choose from {MODES}")
    _check_required(parser, path, mode)

    scenario_path = (path.parent / head.text("scenario")).resolve()
    scenario_seed = seed if seed is not None else (head.number("seed", cast=int) if head.has("seed") else None)
    ofdm = _ofdm(parser, path, 0) if parser.has_section("ofdm") else None
    scenario = load_scenario(
        scenario_path,
        frequencies=subcarrier_frequencies(ofdm) if ofdm is not None else None,
        seed=scenario_seed,
    )
    if ofdm is not None:
        ofdm = attrs.evolve(ofdm, rng_seed=scenario.rng_seed)

    regions = tuple(
        _wrap(path, section_name, lambda s=_Section(parser, section_name, path), n=name: RegionSpec(
            name=n, center=s.vector("center_m"), radius=s.number("radius_m"), role=s.text("role", "scattered"),
        ))
        for name, section_name in _named(parser, "region")
    )

    kwargs = {}
    if parser.has_section("normalization"):
        s = _Section(parser, "normalization", path)
        kwargs["normalization"] = _wrap(path, "normalization", lambda: NormalizationConfig(
            component=s.text("component", scenario.ref_component),
            min_ref_magnitude=s.number("min_ref_magnitude", default=settings.MIN_REF_MAGNITUDE),
        ))
    else:
        kwargs["normalization"] = NormalizationConfig(component=scenario.ref_component)

    solver = _Section(parser, "solver", path) if parser.has_section("solver") else None
    if solver is not None:
        kwargs["solver"] = _wrap(path, "solver", lambda: SolverConfig(
            max_iterations=solver.number("max_iterations", default=settings.SOLVER_MAX_ITERATIONS, cast=int),
            relative_residual_target=solver.number("relative_residual_target", default=settings.SOLVER_RESIDUAL_TARGET),
            report_every=solver.number("report_every", default=settings.SOLVER_REPORT_EVERY, cast=int),
            discrepancy_level=solver.number("discrepancy_level") if solver.has("discrepancy_level") else None,
        ))
        kwargs["accuracy_digits"] = solver.number("accuracy_digits", default=settings.ACCURACY_DIGITS, cast=int)
    else:
        kwargs["solver"] = SolverConfig()

    if parser.has_section("window"):
        s = _Section(parser, "window", path)
        kwargs["window"] = WindowSettings(
            cutoff_deg=s.number("cutoff_deg", default=settings.WINDOW_CUTOFF_DEG),
            taper_fraction=s.number("taper_fraction", default=settings.WINDOW_TAPER),
            center=s.vector("center") if s.has("center") else None,
        )

    s = _Section(parser, "corrections", path) if parser.has_section("corrections") else None
    per_component = None
    if s is not None and s.has("per_component_phase_deg"):
        per_component = np.deg2rad(s.vector("per_component_phase_deg"))
    kwargs["corrections"] = _wrap(path, "corrections", lambda: CorrectionModel.from_scenario(
        scenario,
        enable_psi_s=s.flag("psi_s", True) if s else True,
        enable_psi_ref=s.flag("psi_ref", True) if s else True,
        enable_magnitude=s.flag("magnitude", True) if s else True,
        per_component=per_component,
    ))

    if parser.has_section("volume"):
        s = _Section(parser, "volume", path)
        kwargs["volume"] = _wrap(path, "volume", lambda: VolumeGeometry.from_bounds(
            s.vector("lower_m"), s.vector("upper_m"), s.number("spacing_m"),
        ))
    if parser.has_section("mip"):
        s = _Section(parser, "mip", path)
        kwargs["mip_axis"] = s.text("axis", "z")
        kwargs["mip_floor_db"] = s.number("floor_db", default=settings.MIP_DB_FLOOR)
    if parser.has_section("modulation"):
        s = _Section(parser, "modulation", path)
        kwargs["modulation"] = ModulationSettings(
            enabled=s.flag("enabled", True),
            spread_db=s.number("spread_db", default=settings.MODULATION_SPREAD_DB),
        )

    fusion_mode = head.text("fusion_mode", "coherent")
    if fusion_mode not in FUSION_MODES:
        raise ConfigurationError(f"{path}: [pipeline] fusion_mode must be one of {FUSION_MODES}")

    out = Path(output_dir or head.text("output_dir", str(Path(settings.OUTPUT_DIR) / scenario.name)))
    if not out.is_absolute() and output_dir is None and head.has("output_dir"):
        out = path.parent / out
    config = PipelineConfig(
        path=path,
        scenario_path=scenario_path,
        scenario=scenario,
        mode=mode,
        output_dir=out,
        seed=scenario.rng_seed,
        regions=regions,
        fusion_mode=fusion_mode,
        ofdm=ofdm,
        background=head.flag("background", False),
        noise_snr_db=head.number("noise_snr_db") if head.has("noise_snr_db") else None,
        echo={"pipeline": text, "scenario": scenario_path.read_text(encoding=settings.EXPORT_ENCODING)},
        **kwargs,
    )
    logger.info(
        f"Loaded pipeline {path.name}: scenario '{scenario.name}', mode {mode}, "
        f"{len(scenario.frequencies)} frequencies, {len(regions)} region(s)"
    )
    return config
