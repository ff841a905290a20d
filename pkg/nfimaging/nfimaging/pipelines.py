# Pipeline stages
#
# Stages are enabled in settings.STAGE_PIPELINES and run in ascending
# priority; settings.MODE_STAGES picks the subset for each mode.
# Every stage reads what it needs from the run context and falls back to
# the artifacts of an earlier run in the same output directory, so any
# stage can be rerun on its own.

import importlib
import logging
from pathlib import Path

import attrs

from nfimaging import settings
from nfimaging.em_forward import add_measurement_noise, background_scenario, synthesize_measurement
from nfimaging.exceptions import ConfigurationError, NearFieldImagingError, NumericalStageError, StageError
from nfimaging.imaging import combine_frequencies, image_scattered, mip_project
from nfimaging.isr_solver import background_subtract, normalize_by_reference, solve_all_frequencies
from nfimaging.items import ModulationModel
from nfimaging.ofdm_chain import capture_records, chain_responses, dataset_from_chain, draw_realizations
from nfimaging.utils import containers
from nfimaging.utils.executor import map_keyed
from nfimaging.utils.manifest import ArtifactManifest

logger = logging.getLogger(__name__)

FUSION_MODES = ("coherent", "incoherent")


def frequency_tag(frequency):
    return f"{frequency / 1e6:.3f}MHz".replace(".", "p")


@attrs.define
class PipelineContext:
    config: object
    manifest: ArtifactManifest
    fusion_modes: tuple = FUSION_MODES
    dataset: object = None
    background: object = None
    observations: object = None
    sweep: object = None
    spectra: dict = attrs.Factory(dict)
    images: dict = attrs.Factory(dict)
    fused: dict = attrs.Factory(dict)

    @property
    def out(self):
        return Path(self.config.output_dir)

    def record(self, path, kind, stage, frequency=None):
        self.manifest.record(path, kind, stage, frequency)
        return path


class Stage:
    name = "stage"

    def open_run(self, context):
        pass

    def process(self, context):
        raise NotImplementedError

    def close_run(self, context):
        pass


class SynthesisStage(Stage):
    """Modulated Born measurement of the scenario (and its empty twin)."""

    name = "synthesis"

    def _modulation(self, config, stream):
        scenario = config.scenario
        if not config.modulation.enabled:
            return None
        return ModulationModel.generate(
            scenario.n_probes, len(scenario.frequencies), config.modulation.spread_db,
            seed=config.seed, stream=stream,
        )

    def process(self, context):
        config = context.config
        dataset = synthesize_measurement(config.scenario, self._modulation(config, "modulation"))
        if config.noise_snr_db is not None:
            dataset = add_measurement_noise(dataset, config.noise_snr_db, seed=config.seed)
        context.dataset = dataset
        _write_dataset(context, dataset, "measurement", self.name)

        if config.background:
            empty = background_scenario(config.scenario)
            context.background = synthesize_measurement(empty, self._modulation(config, "background-modulation"))
            _write_dataset(context, context.background, "background", self.name)


class ChainSynthesisStage(Stage):
    """Measurement through the OFDM capture chain; one I/Q pair per run is kept."""

    name = "chain-synthesis"

    def process(self, context):
        config = context.config
        if config.ofdm is None:
            raise ConfigurationError("chain synthesis needs an [ofdm] section")
        scenario, probe_response, ref_response = chain_responses(config.scenario, config.ofdm)
        realizations = draw_realizations(scenario.n_probes, config.ofdm, config.seed)
        context.dataset = dataset_from_chain(scenario, config.ofdm, realizations=realizations)
        _write_dataset(context, context.dataset, "measurement", self.name)

        _, probes, ref = capture_records(config.ofdm, realizations[0], probe_response[0].T, ref_response)
        for component, record in zip(scenario.components, probes):
            path = containers.write_iq(context.out / "iq" / f"probe0_{component}.cf32", record)
            context.record(path, "iq", self.name)
            context.record(containers.sidecar_path(path), "iq-meta", self.name)
        path = containers.write_iq(context.out / "iq" / "probe0_reference.cf32", ref)
        context.record(path, "iq", self.name)
        context.record(containers.sidecar_path(path), "iq-meta", self.name)


class NormalizationStage(Stage):
    """Reference normalization, then background subtraction when a background exists."""

    name = "normalization"

    def process(self, context):
        config = context.config
        if context.dataset is None:
            context.dataset = containers.read_dataset(context.out / "datasets" / "measurement.nfd")
            background = context.out / "datasets" / "background.nfd"
            if config.background and background.is_file():
                context.background = containers.read_dataset(background)
        observations = normalize_by_reference(context.dataset, config.normalization)
        if context.background is not None:
            observations = background_subtract(observations, normalize_by_reference(context.background, config.normalization))
        context.observations = observations


class InversionStage(Stage):
    """Independent inverse source solve per frequency."""

    name = "inversion"

    def process(self, context):
        config = context.config
        sweep = solve_all_frequencies(context.observations, config.regions, config.solver,
                                      digits=config.accuracy_digits)
        context.sweep = sweep
        if not sweep.spectra:
            raise NumericalStageError(f"no frequency could be solved: {sweep.failures}")
        for f in sweep.frequencies:
            path = containers.write_spectra(context.out / "spectra" / f"spectrum_{frequency_tag(f)}.pws", sweep.spectra[f])
            context.record(path, "spectra", self.name, f)
        context.spectra = dict(sweep.spectra)
        path = containers.write_json(context.out / "solver" / "summary.json", sweep.report())
        context.record(path, "report", self.name)


class ImagingStage(Stage):
    """Windowed image of the scattered spectra at every solved frequency."""

    name = "imaging"

    def _load_spectra(self, context):
        spectra = {}
        for path in sorted((context.out / "spectra").glob("spectrum_*.pws")):
            loaded = containers.read_spectra(path)
            spectra[loaded[0].frequency] = loaded
        if not spectra:
            raise ConfigurationError(f"no spectra found under {context.out / 'spectra'}")
        return spectra

    def process(self, context):
        config = context.config
        if config.volume is None:
            raise ConfigurationError("imaging needs a [volume] section")
        spectra = context.spectra or self._load_spectra(context)
        scan_center = config.scenario.scan_grid.center

        def make_window(region):
            return config.window.build(region.center, scan_center)

        images = map_keyed(lambda f: image_scattered(spectra[f], config.volume, make_window), sorted(spectra))
        for f, image in images.items():
            path = containers.write_volume(context.out / "volumes" / f"volume_{frequency_tag(f)}.img", image)
            context.record(path, "volume", self.name, f)
        context.images = images


class FusionStage(Stage):
    name = "fusion"

    def process(self, context):
        images = context.images or _load_volumes(context.out / "volumes", "volume_*.img")
        if not images:
            raise ConfigurationError(f"no per-frequency volumes found under {context.out / 'volumes'}")
        for mode in context.fusion_modes:
            fused = combine_frequencies(images, context.config.corrections, mode)
            context.fused[mode] = fused
            path = containers.write_volume(context.out / "fused" / f"{mode}.img", fused)
            context.record(path, "fused", self.name)
        context.images = images


class MipExportStage(Stage):
    """MIPs of the center-frequency image and of every fused volume."""

    name = "mip-export"

    def process(self, context):
        config = context.config
        images = context.images or _load_volumes(context.out / "volumes", "volume_*.img")
        fused = context.fused or {
            mode: containers.read_volume(context.out / "fused" / f"{mode}.img")
            for mode in context.fusion_modes
            if (context.out / "fused" / f"{mode}.img").is_file()
        }
        targets = {}
        if images:
            freqs = sorted(images)
            targets["single"] = images[freqs[len(freqs) // 2]]
        targets.update(fused)
        if not targets:
            raise ConfigurationError("nothing to project: no volumes found")

        for tag, volume in targets.items():
            mip = mip_project(volume, config.mip_axis, config.mip_floor_db)
            pgm, csv, meta = containers.write_mip(context.out / "mip" / f"{tag}_{config.mip_axis}", mip)
            context.record(pgm, "mip", self.name, volume.frequency)
            context.record(csv, "mip-csv", self.name, volume.frequency)
            context.record(meta, "mip-meta", self.name, volume.frequency)


def _write_dataset(context, dataset, name, stage):
    path = containers.write_dataset(context.out / "datasets" / f"{name}.nfd", dataset)
    context.record(path, "dataset", stage)
    context.record(containers.sidecar_path(path), "dataset-meta", stage)


def _load_volumes(directory, pattern):
    volumes = [containers.read_volume(path) for path in sorted(Path(directory).glob(pattern))]
    return {volume.frequency: volume for volume in volumes}


def load_stages(names):
    """Instantiate the enabled stages whose name is in `names`, in priority order."""
    stages = []
    for dotted, _ in sorted(settings.STAGE_PIPELINES.items(), key=lambda item: item[1]):
        module_name, class_name = dotted.rsplit(".", 1)
        stage = getattr(importlib.import_module(module_name), class_name)()
        if stage.name in names:
            stages.append(stage)
    missing = set(names) - {stage.name for stage in stages}
    if missing:
        raise ConfigurationError(f"stages {sorted(missing)} are not enabled in STAGE_PIPELINES")
    return stages


def run_pipeline(config, fusion_modes=FUSION_MODES):
    """
    Run the stages of config.mode. Returns (exit status, manifest); a stage
    failure is written to error_report.json in the output directory.
    """
    manifest = ArtifactManifest(config.output_dir)
    context = PipelineContext(config=config, manifest=manifest, fusion_modes=tuple(fusion_modes))
    stages = load_stages(settings.MODE_STAGES[config.mode])
    status = 0
    logger.info(f"Running '{config.mode}' on '{config.scenario.name}' into {config.output_dir}")

    current = None
    try:
        for stage in stages:
            current = stage.name
            logger.info(f"Stage {stage.name} started")
            stage.open_run(context)
            stage.process(context)
            stage.close_run(context)
            logger.info(f"Stage {stage.name} finished")
    except Exception as e:
        error = StageError(current, e)
        status = error.exit_code
        if isinstance(e, NearFieldImagingError):
            logger.error(str(error))
        else:
            logger.exception(str(error))
        report = containers.write_json(Path(config.output_dir) / "error_report.json", error.report())
        manifest.record(report, "error-report", error.stage)

    manifest.export_json(config_echo=config.echo, status=status)
    if status == 0:
        logger.info(f"Run complete: {manifest.counts()}")
    return status, manifest
