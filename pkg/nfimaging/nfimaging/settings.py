# Settings for the nfimaging project
#
# Every numeric knob used by the stages has its default here. Scenario and
# pipeline files override the per-run values; environment variables (or a
# .env file at the repo root) override the process-level ones.

import os
from pathlib import Path

from dotenv import load_dotenv

PROJECT_NAME = "nfimaging"

# settings.py is at: nfimaging/nfimaging/settings.py
# .env is at: .env (3 levels up)
env_path = Path(__file__).resolve().parent.parent.parent / ".env"
load_dotenv(env_path)

# Worker threads for per-frequency solves and per-position chain evaluation
THREADS = int(os.getenv("NFIMG_THREADS", "1"))
OUTPUT_DIR = os.getenv("NFIMG_OUTPUT_DIR", "outputs")

# Logging
LOG_LEVEL = os.getenv("NFIMG_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"
LOG_DATEFORMAT = "%Y-%m-%d %H:%M:%S"

EXPORT_ENCODING = "utf-8"

# ============================================================================
# Forward model
# ============================================================================

# Modulation coefficients: log-magnitude uniform in [-spread, +spread] dB
MODULATION_SPREAD_DB = 20.0
# Points closer than this are treated as coincident
COINCIDENCE_TOLERANCE_M = 1e-9
REFERENCE_SEPARATION_M = 1e-6

# ============================================================================
# OFDM chain (numerology is a default, not a measured value)
# ============================================================================

OFDM_CARRIER_HZ = 2.41e9
OFDM_SAMPLE_RATE_HZ = 15.36e6
OFDM_N_FFT = 256
OFDM_CYCLIC_PREFIX = 44
OFDM_N_SYMBOLS = 320  # 320 * (256 + 44) = 96 000 samples, 6.25 ms
OFDM_ACTIVE_SUBCARRIERS = tuple(range(-80, 81, 8))  # 21 bins, 9.6 MHz span

# ============================================================================
# Translation operator / solver
# ============================================================================

ACCURACY_DIGITS = 3
MIN_ORDER = 4
HANKEL_OVERFLOW = 1e300

SOLVER_MAX_ITERATIONS = 500
SOLVER_RESIDUAL_TARGET = 1e-3
SOLVER_REPORT_EVERY = 10
STAGNATION_WINDOW = 10
STAGNATION_TOLERANCE = 1e-12
ADJOINT_CHECK_TOLERANCE = 1e-8
DISCREPANCY_FACTOR = 1.05

# Guard threshold relative to the dataset median reference magnitude
MIN_REF_MAGNITUDE = 1e-6
REFERENCE_COMPONENT = "y"

# ============================================================================
# Imaging
# ============================================================================

WINDOW_CUTOFF_DEG = 90.0
WINDOW_TAPER = 0.25
IMAGE_CHUNK_VOXELS = 2048
GUARD_RADIUS_WAVELENGTHS = 2.0
MIP_DB_FLOOR = -40.0

# ============================================================================
# Pipeline
# ============================================================================

# Stages run in ascending priority; each mode picks a subset
STAGE_PIPELINES = {
    "nfimaging.pipelines.SynthesisStage": 100,
    "nfimaging.pipelines.ChainSynthesisStage": 110,
    "nfimaging.pipelines.NormalizationStage": 200,
    "nfimaging.pipelines.InversionStage": 300,
    "nfimaging.pipelines.ImagingStage": 400,
    "nfimaging.pipelines.FusionStage": 500,
    "nfimaging.pipelines.MipExportStage": 600,
}

MODE_STAGES = {
    "simulate": ("synthesis",),
    "simulate-ofdm": ("chain-synthesis",),
    "invert": ("normalization", "inversion"),
    "image": ("imaging",),
    "fuse": ("fusion",),
    "mip": ("mip-export",),
    "full": ("synthesis", "normalization", "inversion", "imaging", "fusion", "mip-export"),
    "full-ofdm": ("chain-synthesis", "normalization", "inversion", "imaging", "fusion", "mip-export"),
}
