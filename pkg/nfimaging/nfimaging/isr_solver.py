"""
Reference normalization, background subtraction and the per-frequency
inverse source solve.

The solve is conjugate gradients on the normal equations (CGLS) driven by
the LinearOperator view of the translation plan; early stopping is the only
regularization.
"""

import logging

import attrs
import numpy as np

from nfimaging import settings
from nfimaging.exceptions import (
    ConfigurationError,
    ContractError,
    DegenerateReferenceError,
    IncompatibleDataError,
    NumericalStageError,
)
from nfimaging.items import COMPONENT_INDEX
from nfimaging.pws_translation import TranslationPlan, make_regions
from nfimaging.utils.executor import map_keyed

logger = logging.getLogger(__name__)


@attrs.define(frozen=True)
class NormalizationConfig:
    component: str = settings.REFERENCE_COMPONENT
    # guard relative to the median reference magnitude
    min_ref_magnitude: float = attrs.field(default=settings.MIN_REF_MAGNITUDE, converter=float)

    def __attrs_post_init__(self):
        if self.component not in COMPONENT_INDEX:
            raise ConfigurationError(f"normalization component must be x, y or z, got {self.component!r}")
        if not 0.0 < self.min_ref_magnitude <= 1.0:
            raise ConfigurationError("min_ref_magnitude must lie in (0, 1]")


@attrs.define(frozen=True)
class SolverConfig:
    max_iterations: int = attrs.field(default=settings.SOLVER_MAX_ITERATIONS, converter=int)
    relative_residual_target: float = attrs.field(default=settings.SOLVER_RESIDUAL_TARGET, converter=float)
    regularization: str = "early-stopping"
    report_every: int = attrs.field(default=settings.SOLVER_REPORT_EVERY, converter=int)
    discrepancy_level: float = None

    def __attrs_post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if not 0.0 < self.relative_residual_target < 1.0:
            raise ConfigurationError("relative_residual_target must lie in (0, 1)")
        if self.regularization != "early-stopping":
            raise ConfigurationError(f"unsupported regularization {self.regularization!r}")
        if self.discrepancy_level is not None and self.discrepancy_level < 0:
            raise ConfigurationError("discrepancy_level must be non-negative")

    @property
    def stopping_target(self):
        if self.discrepancy_level is None:
            return self.relative_residual_target
        return max(self.relative_residual_target, settings.DISCREPANCY_FACTOR * self.discrepancy_level)


# ============================================================================
# Preprocessing
# ============================================================================

def normalize_by_reference(dataset, cfg=None):
    """
    Divide every probe reading by the reference reading of the same
    capture, which cancels the per-capture modulation.
    """
    cfg = cfg or NormalizationConfig(component=dataset.ref_component)
    if cfg.component != dataset.ref_component:
        raise ConfigurationError(
            f"dataset recorded reference component {dataset.ref_component!r}, "
            f"normalization asks for {cfg.component!r}"
        )
    if dataset.normalized:
        return dataset
    if not dataset.is_finite():
        raise NumericalStageError("dataset contains non-finite samples")

    magnitude = np.abs(dataset.ref_field)
    threshold = cfg.min_ref_magnitude * float(np.median(magnitude))
    bad = np.argwhere(magnitude <= threshold)
    if bad.size:
        indices = [tuple(int(i) for i in row) for row in bad]
        raise DegenerateReferenceError(
            f"{len(indices)} reference sample(s) at or below {threshold:.3e}; "
            f"check the reference antenna placement",
            indices=indices,
        )

    out = attrs.evolve(
        dataset,
        probe_fields=dataset.probe_fields / dataset.ref_field[:, :, None],
        ref_field=np.ones_like(dataset.ref_field),
        normalized=True,
    )
    logger.info(f"Normalized {dataset.n_probes} captures by reference component {cfg.component}")
    return out


def background_subtract(target, background):
    if not (target.normalized and background.normalized):
        raise ContractError("background subtraction needs normalized datasets")
    if target.shape != background.shape:
        raise IncompatibleDataError(f"dataset shapes differ: {target.shape} vs {background.shape}")
    if not np.allclose(target.frequencies, background.frequencies, rtol=1e-12, atol=0.0):
        raise IncompatibleDataError("frequency tables differ")
    if not np.allclose(target.probe_positions, background.probe_positions, rtol=0.0, atol=1e-9):
        raise IncompatibleDataError("probe grids differ")
    if target.components != background.components:
        raise IncompatibleDataError(f"components differ: {target.components} vs {background.components}")
    return attrs.evolve(
        target,
        probe_fields=target.probe_fields - background.probe_fields,
        background_subtracted=True,
    )


# ============================================================================
# Solve
# ============================================================================

@attrs.define
class SolveDiagnostics:
    frequency: float
    iterations: int = 0
    residual_history: list = attrs.Factory(list)
    relative_misfit: float = 0.0
    target: float = 0.0
    converged: bool = False
    stagnated: bool = False
    monotone: bool = True
    adjoint_mismatch: float = 0.0
    stop_reason: str = ""

    def summary(self):
        return {
            "frequency_hz": self.frequency,
            "iterations": self.iterations,
            "relative_misfit": self.relative_misfit,
            "target": self.target,
            "converged": self.converged,
            "stagnated": self.stagnated,
            "monotone": self.monotone,
            "adjoint_mismatch": self.adjoint_mismatch,
            "stop_reason": self.stop_reason,
        }


def _check_roles(observations, regions):
    roles = {region.role for region in regions}
    if observations.background_subtracted and "incident" in roles:
        raise ContractError("background-subtracted observations admit only scattered-role regions")
    if not observations.background_subtracted and "incident" not in roles:
        raise ContractError("observations still contain the incident field; add an incident-role Tx region")


def _cgls(plan, data, cfg, diag):
    """CG on the normal equations from x = 0 through the plan's LinearOperator; returns the best iterate."""
    op = plan.as_operator()
    b = np.asarray(data, dtype=complex).ravel()
    norm_b = float(np.linalg.norm(b))
    target = cfg.stopping_target
    x = np.zeros(op.shape[1], dtype=complex)
    r = b.copy()
    s = op.rmatvec(r)
    p = s.copy()
    gamma = float(np.vdot(s, s).real)

    history = diag.residual_history
    history.append(1.0)
    best_x, best_rel = x.copy(), 1.0

    for it in range(1, cfg.max_iterations + 1):
        q = op.matvec(p)
        qq = float(np.vdot(q, q).real)
        if qq == 0.0 or gamma == 0.0:
            diag.stop_reason = "breakdown"
            break
        alpha = gamma / qq
        x = x + alpha * p
        r = r - alpha * q
        rel = float(np.linalg.norm(r)) / norm_b
        history.append(rel)
        diag.iterations = it

        if rel > history[-2] * (1.0 + 1e-10):
            diag.monotone = False
            logger.warning(f"{plan.frequency / 1e9:.4f} GHz: residual rose at iteration {it} ({history[-2]:.3e} -> {rel:.3e})")
        if rel < best_rel:
            best_x, best_rel = x.copy(), rel
        if cfg.report_every and it % cfg.report_every == 0:
            logger.info(f"{plan.frequency / 1e9:.4f} GHz iteration {it} residual {rel:.6e}")

        if rel <= target:
            diag.converged = True
            diag.stop_reason = "target"
            break
        window = settings.STAGNATION_WINDOW
        if it >= window and history[-window - 1] - rel < settings.STAGNATION_TOLERANCE:
            diag.stagnated = True
            diag.stop_reason = "stagnation"
            logger.warning(
                f"{plan.frequency / 1e9:.4f} GHz: residual stagnated at {rel:.3e} after {it} iterations; "
                f"returning best iterate"
            )
            break

        s = op.rmatvec(r)
        gamma_new = float(np.vdot(s, s).real)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    else:
        diag.stop_reason = "max-iterations"

    diag.relative_misfit = best_rel
    return plan.unpack(best_x)


def solve_isr(observations, regions, cfg, frequency):
    """
    Least-squares equivalent-source spectra for one frequency.

    Returns (spectra, diagnostics), one spectrum per region in input order.
    """
    if not observations.normalized:
        raise ContractError("solve_isr needs reference-normalized observations")
    _check_roles(observations, regions)
    fi = observations.frequency_index(frequency)
    data = observations.probe_fields[:, fi, :]
    if not np.all(np.isfinite(data)):
        raise NumericalStageError(f"non-finite observations at {frequency / 1e9:.4f} GHz")

    plan = TranslationPlan(regions, observations.probe_positions, observations.components, frequency)
    diag = SolveDiagnostics(frequency=float(frequency), target=cfg.stopping_target)
    diag.adjoint_mismatch = plan.adjoint_mismatch()
    if diag.adjoint_mismatch > settings.ADJOINT_CHECK_TOLERANCE:
        raise ConfigurationError(
            f"adjoint self-check failed at {frequency / 1e9:.4f} GHz: mismatch {diag.adjoint_mismatch:.3e}"
        )

    if float(np.linalg.norm(data)) == 0.0:
        diag.converged = True
        diag.stop_reason = "zero-data"
        diag.residual_history.append(0.0)
        zeros = [np.zeros((region.grid.size, 3), dtype=complex) for region in plan.regions]
        return plan.spectra(zeros), diag

    x = _cgls(plan, data, cfg, diag)
    logger.info(
        f"Solved {frequency / 1e9:.4f} GHz: {diag.iterations} iterations, "
        f"misfit {diag.relative_misfit:.3e} ({diag.stop_reason})"
    )
    return plan.spectra(x), diag


@attrs.define
class FrequencySweep:
    spectra: dict = attrs.Factory(dict)
    diagnostics: dict = attrs.Factory(dict)
    failures: dict = attrs.Factory(dict)

    @property
    def frequencies(self):
        return sorted(self.spectra)

    def report(self):
        return {
            "solved": [self.diagnostics[f].summary() for f in self.frequencies],
            "failures": {f"{f:.6f}": message for f, message in sorted(self.failures.items())},
        }


def solve_all_frequencies(observations, region_specs, cfg, frequencies=None,
                          digits=settings.ACCURACY_DIGITS):
    """
    Independent solve per frequency. A failing frequency is recorded in the
    sweep's failure map and does not stop the others.
    """
    if not observations.normalized:
        raise ContractError("solve_all_frequencies needs reference-normalized observations")
    _check_roles(observations, region_specs)
    freqs = list(observations.frequencies if frequencies is None else frequencies)

    def solve_one(f):
        regions = make_regions(region_specs, f, digits)
        return solve_isr(observations, regions, cfg, f)

    results = map_keyed(solve_one, [float(f) for f in freqs], capture_errors=True)
    sweep = FrequencySweep()
    for f, outcome in results.items():
        if isinstance(outcome, ConfigurationError):
            raise outcome
        if isinstance(outcome, Exception):
            sweep.failures[f] = f"{type(outcome).__name__}: {outcome}"
            continue
        sweep.spectra[f], sweep.diagnostics[f] = outcome
    if sweep.failures:
        logger.warning(f"{len(sweep.failures)} of {len(freqs)} frequencies failed")
    return sweep
