"""
Command-line entry point.

Usage:
  python -m nfimaging full --config nfimaging/scenarios/two_point_wideband_pipeline.cfg
  python -m nfimaging simulate --config PIPELINE.cfg --out outputs/run1 --seed 3
  python -m nfimaging fuse --config PIPELINE.cfg --mode coherent
  python -m nfimaging compare outputs/run1/fused/coherent.img outputs/run1/fused/incoherent.img \
      --metric peak-to-artifact-dB --config PIPELINE.cfg

Exit codes: 0 success, 2 configuration error, 3 numerical-stage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from nfimaging import settings
from nfimaging.compare import METRICS, compare_images
from nfimaging.exceptions import ConfigurationError, NearFieldImagingError
from nfimaging.pipelines import FUSION_MODES, run_pipeline
from nfimaging.utils import containers
from nfimaging.utils.config import load_pipeline

logger = logging.getLogger(__name__)

PIPELINE_VERBS = ("simulate", "simulate-ofdm", "invert", "image", "fuse", "mip", "full", "full-ofdm")


def configure_logging(level=None):
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format=settings.LOG_FORMAT,
        datefmt=settings.LOG_DATEFORMAT,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="nfimaging", description="Near-field modulated-signal imaging pipeline.")
    parser.add_argument("--log-level", default=None, help="Override NFIMG_LOG_LEVEL.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    for verb in PIPELINE_VERBS:
        sub = verbs.add_parser(verb, help=f"run the '{verb}' stages")
        sub.add_argument("--config", required=True, help="Pipeline file (INI).")
        sub.add_argument("--out", default=None, help="Output directory (overrides the pipeline file).")
        sub.add_argument("--seed", type=int, default=None, help="Seed for every random substream.")
        sub.add_argument("--mode", choices=FUSION_MODES, default=None,
                         help="Fusion mode; both are produced when omitted.")

    sub = verbs.add_parser("compare", help="compare two images with one metric")
    sub.add_argument("a", help="First volume (.img), or a directory of per-frequency volumes for phase-flatness.")
    sub.add_argument("b", help="Second volume or directory.")
    sub.add_argument("--metric", choices=METRICS, default="peak-to-artifact-dB")
    sub.add_argument("--config", default=None, help="Pipeline file giving scatterer positions and corrections.")
    sub.add_argument("--guard-m", type=float, default=None, help="Guard sphere radius (default 2 wavelengths).")
    sub.add_argument("--frequency-ghz", type=float, default=None, help="Frequency that sets the wavelength.")
    sub.add_argument("--point", default=None, help="Voxel 'x,y,z' in m for phase-flatness.")
    sub.add_argument("--report", default=None, help="Write the JSON report to this path.")
    return parser


def _volumes_in(directory):
    volumes = [containers.read_volume(path) for path in sorted(Path(directory).glob("volume_*.img"))]
    if not volumes:
        raise ConfigurationError(f"no per-frequency volumes in {directory}")
    return {volume.frequency: volume for volume in volumes}


def parse_point(text):
    """Parse 'x,y,z' in metres into three finite floats."""
    parts = [p.strip() for p in text.split(",")]
    try:
        point = [float(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"--point must be three numbers x,y,z in m, got {text!r}") from None
    if len(point) != 3 or not all(np.isfinite(point)):
        raise ConfigurationError(f"--point must be three numbers x,y,z in m, got {text!r}")
    return point


def run_compare(args):
    config = load_pipeline(args.config, mode="image") if args.config else None
    scatterers = [s.position for s in config.scenario.scatterers] if config else []
    frequency = args.frequency_ghz * 1e9 if args.frequency_ghz else None
    if frequency is None and config is not None:
        freqs = config.scenario.frequencies
        frequency = float(freqs[len(freqs) // 2])

    if args.metric == "phase-flatness":
        if config is None:
            raise ConfigurationError("phase-flatness needs --config for the correction model")
        if args.point:
            point = parse_point(args.point)
        elif scatterers:
            point = scatterers[0]
        else:
            raise ConfigurationError("phase-flatness needs --point when the scenario has no scatterers")
        report = compare_images(_volumes_in(args.a), _volumes_in(args.b), args.metric,
                                point=point, model=config.corrections)
    else:
        report = compare_images(
            containers.read_volume(args.a), containers.read_volume(args.b), args.metric,
            scatterers=scatterers, guard_radius=args.guard_m, frequency=frequency,
        )
    print(json.dumps(report, indent=2))
    if args.report:
        containers.write_json(args.report, report)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.verb == "compare":
            return run_compare(args)
        config = load_pipeline(args.config, mode=args.verb, output_dir=args.out, seed=args.seed)
        modes = (args.mode,) if args.mode else FUSION_MODES
        status, manifest = run_pipeline(config, fusion_modes=modes)
        if status == 0:
            print(f"{config.mode}: wrote {sum(manifest.counts().values())} artifacts to {config.output_dir}")
        return status
    except NearFieldImagingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
