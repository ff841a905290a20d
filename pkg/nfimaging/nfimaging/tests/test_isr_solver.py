import attrs
import numpy as np
import pytest
from numpy.testing import assert_allclose

from nfimaging.em_forward import background_scenario, born_fields, synthesize_measurement
from nfimaging.exceptions import (
    ConfigurationError,
    ContractError,
    DegenerateReferenceError,
    IncompatibleDataError,
    NumericalStageError,
)
from nfimaging.isr_solver import (
    NormalizationConfig,
    SolverConfig,
    background_subtract,
    normalize_by_reference,
    solve_all_frequencies,
    solve_isr,
)
from nfimaging.items import FieldDataset, ModulationModel, RegionSpec
from nfimaging.pws_translation import TranslationPlan, make_regions, point_source_spectrum

from .conftest import observations, sphere_points

FREQ = 3.0e9


def _raw(probe, ref):
    probe = np.asarray(probe, dtype=complex)
    return FieldDataset(
        probe_fields=probe,
        ref_field=np.asarray(ref, dtype=complex),
        frequencies=np.arange(1, probe.shape[1] + 1) * 1e9,
        probe_positions=np.arange(probe.shape[0] * 3, dtype=float).reshape(-1, 3),
        components=("x", "y", "z")[: probe.shape[2]],
    )


# ============================================================================
# Normalization and background subtraction
# ============================================================================

def test_normalization_divides_by_the_reference():
    dataset = _raw([[[2.0 + 0j]]], [[1.0 + 1.0j]])
    out = normalize_by_reference(dataset)
    assert out.probe_fields[0, 0, 0] == pytest.approx(1.0 - 1.0j)
    assert out.normalized
    assert np.all(out.ref_field == 1.0)
    assert not dataset.normalized


def test_normalization_is_idempotent():
    dataset = _raw([[[2.0, 1.0j]], [[0.5, -1.0]]], [[2.0j], [0.25]])
    once = normalize_by_reference(dataset)
    twice = normalize_by_reference(once)
    assert_allclose(twice.probe_fields, once.probe_fields, rtol=0, atol=0)


@pytest.mark.parametrize("seed", range(20))
def test_normalization_removes_modulation(make_scenario, seed):
    scenario = make_scenario(n=20)
    plain = normalize_by_reference(synthesize_measurement(scenario))
    modulation = ModulationModel.generate(scenario.n_probes, 1, spread_db=20.0, seed=seed)
    modulated = normalize_by_reference(synthesize_measurement(scenario, modulation))
    assert_allclose(modulated.probe_fields, plain.probe_fields, rtol=1e-12)


def test_degenerate_reference_lists_indices():
    dataset = _raw([[[1.0]], [[1.0]], [[1.0]]], [[1.0], [0.0], [2.0]])
    with pytest.raises(DegenerateReferenceError) as info:
        normalize_by_reference(dataset)
    assert info.value.indices == [(1, 0)]


def test_normalization_component_must_match():
    dataset = _raw([[[1.0]]], [[1.0j]])
    with pytest.raises(ConfigurationError):
        normalize_by_reference(dataset, NormalizationConfig(component="x"))


def test_normalization_rejects_non_finite():
    dataset = _raw([[[np.nan]]], [[1.0j]])
    with pytest.raises(NumericalStageError):
        normalize_by_reference(dataset)


def test_background_of_itself_is_zero(make_scenario):
    dataset = normalize_by_reference(synthesize_measurement(make_scenario()))
    out = background_subtract(dataset, dataset)
    assert out.background_subtracted
    assert not np.any(out.probe_fields)


def test_background_subtraction_leaves_the_scattered_term(make_scenario):
    scenario = make_scenario()
    target = normalize_by_reference(synthesize_measurement(scenario))
    empty = normalize_by_reference(synthesize_measurement(background_scenario(scenario)))
    out = background_subtract(target, empty)

    fields = born_fields(scenario, FREQ)
    expected = fields.total / fields.ref_total[1] - fields.incident / fields.ref_incident[1]
    assert_allclose(out.probe_fields[:, 0, :], expected, rtol=1e-9, atol=1e-12 * np.abs(expected).max())


def test_background_subtraction_contracts(make_scenario):
    raw = synthesize_measurement(make_scenario())
    normalized = normalize_by_reference(raw)
    with pytest.raises(ContractError):
        background_subtract(raw, normalized)
    other = normalize_by_reference(synthesize_measurement(make_scenario(n=5)))
    with pytest.raises(IncompatibleDataError):
        background_subtract(normalized, other)
    shifted = normalize_by_reference(synthesize_measurement(make_scenario(frequencies=(3.1e9,))))
    with pytest.raises(IncompatibleDataError):
        background_subtract(normalized, shifted)


# ============================================================================
# Solve
# ============================================================================

@pytest.fixture
def sphere_problem(toi_spec, rng):
    """Well-posed desk problem: probes on a sphere around a small region."""
    positions = sphere_points(60, 0.4)
    regions = make_regions([toi_spec], FREQ)
    plan = TranslationPlan(regions, positions, ("x", "y", "z"), FREQ)
    return positions, regions, plan


def test_inverse_crime_converges(sphere_problem, rng):
    positions, regions, plan = sphere_problem
    y = rng.standard_normal((60, 3)) + 1j * rng.standard_normal((60, 3))
    x_true = plan.adjoint(y)
    data = plan.forward(x_true)

    obs = observations(positions, data[:, None, :], [FREQ])
    cfg = SolverConfig(max_iterations=500, relative_residual_target=1e-7)
    spectra, diag = solve_isr(obs, regions, cfg, FREQ)

    assert diag.converged
    assert diag.stop_reason == "target"
    assert diag.relative_misfit <= 1e-6
    assert diag.adjoint_mismatch < 1e-10
    assert diag.residual_history[0] == 1.0
    assert len(diag.residual_history) == diag.iterations + 1
    predicted = plan.forward([s.samples for s in spectra])
    assert np.linalg.norm(predicted - data) <= 1e-6 * np.linalg.norm(data)


@pytest.mark.parametrize("noise", [0.0, 0.3])
def test_residual_never_increases(sphere_problem, rng, noise):
    positions, regions, plan = sphere_problem
    truth = point_source_spectrum(regions[0], FREQ, [0.3, 1.0, 0.0], [0.02, -0.01, 0.01])
    data = plan.forward([truth.samples])
    data = data + noise * np.abs(data).mean() * (rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape))
    obs = observations(positions, data[:, None, :], [FREQ])
    _, diag = solve_isr(obs, regions, SolverConfig(max_iterations=40, relative_residual_target=1e-6), FREQ)

    history = np.asarray(diag.residual_history)
    assert len(history) > 5
    assert np.all(np.diff(history) <= 1e-10 * history[:-1])
    assert diag.monotone
    assert diag.summary()["monotone"] is True


def test_solver_iterates_on_the_operator_view(sphere_problem, monkeypatch):
    positions, regions, plan = sphere_problem
    truth = point_source_spectrum(regions[0], FREQ, [0.0, 1.0, 0.0], [0.01, 0.02, -0.01])
    obs = observations(positions, plan.forward([truth.samples])[:, None, :], [FREQ])

    built = []
    original = TranslationPlan.as_operator

    def counting(self):
        op = original(self)
        built.append(op.shape)
        return op

    monkeypatch.setattr(TranslationPlan, "as_operator", counting)
    spectra, diag = solve_isr(obs, regions, SolverConfig(relative_residual_target=1e-4), FREQ)
    assert built == [(60 * 3, regions[0].grid.size * 3)]
    assert diag.converged
    assert spectra[0].samples.shape == (regions[0].grid.size, 3)


def test_point_source_data_is_fitted(sphere_problem):
    positions, regions, plan = sphere_problem
    truth = point_source_spectrum(regions[0], FREQ, [0.0, 1.0, 0.0], [0.01, 0.02, -0.01])
    data = plan.forward([truth.samples])
    obs = observations(positions, data[:, None, :], [FREQ])
    spectra, diag = solve_isr(obs, regions, SolverConfig(relative_residual_target=1e-5), FREQ)
    assert diag.converged
    assert spectra[0].region is regions[0]
    assert spectra[0].frequency == FREQ


def test_discrepancy_stopping_on_noisy_data(sphere_problem, rng):
    positions, regions, plan = sphere_problem
    truth = point_source_spectrum(regions[0], FREQ, [0.0, 1.0, 0.0], [0.01, 0.02, -0.01])
    clean = plan.forward([truth.samples])
    noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    noise *= 0.03 * np.linalg.norm(clean) / np.linalg.norm(noise)
    obs = observations(positions, (clean + noise)[:, None, :], [FREQ])

    cfg = SolverConfig(relative_residual_target=1e-8, discrepancy_level=0.03)
    assert cfg.stopping_target == pytest.approx(0.0315)
    _, diag = solve_isr(obs, regions, cfg, FREQ)
    assert diag.converged
    assert diag.relative_misfit <= 0.0315
    assert diag.relative_misfit <= 2 * 0.03


def test_inconsistent_data_stagnates(rng):
    # a tiny region at 1 GHz has few modes, so random data cannot be fitted
    positions = sphere_points(100, 0.4)
    regions = make_regions([RegionSpec("dot", (0, 0, 0), 0.005)], 1.0e9)
    assert regions[0].order == 4
    data = rng.standard_normal((100, 1, 3)) + 1j * rng.standard_normal((100, 1, 3))
    obs = observations(positions, data, [1.0e9])
    _, diag = solve_isr(obs, regions, SolverConfig(max_iterations=500), 1.0e9)
    assert diag.stagnated
    assert diag.stop_reason == "stagnation"
    assert not diag.converged
    assert diag.relative_misfit > 0.5
    assert diag.iterations < 500


def test_zero_data_returns_zero_spectra(toi_spec):
    positions = sphere_points(20, 0.4)
    regions = make_regions([toi_spec], FREQ)
    obs = observations(positions, np.zeros((20, 1, 3)), [FREQ])
    spectra, diag = solve_isr(obs, regions, SolverConfig(), FREQ)
    assert diag.iterations == 0
    assert diag.stop_reason == "zero-data"
    assert not np.any(spectra[0].samples)


def test_role_contracts(toi_spec):
    positions = sphere_points(20, 0.4)
    regions = make_regions([toi_spec], FREQ)
    data = np.ones((20, 1, 3))
    with pytest.raises(ContractError):
        solve_isr(observations(positions, data, [FREQ], background_subtracted=False), regions, SolverConfig(), FREQ)
    incident = make_regions([attrs.evolve(toi_spec, role="incident")], FREQ)
    with pytest.raises(ContractError):
        solve_isr(observations(positions, data, [FREQ]), incident, SolverConfig(), FREQ)


def test_unnormalized_observations_are_rejected(toi_spec):
    raw = _raw(np.ones((2, 1, 3)), np.full((2, 1), 2.0))
    with pytest.raises(ContractError):
        solve_isr(raw, make_regions([toi_spec], 1e9), SolverConfig(), 1e9)
    with pytest.raises(ContractError):
        solve_all_frequencies(raw, [toi_spec], SolverConfig())


def test_failed_adjoint_self_check(sphere_problem, monkeypatch):
    positions, regions, _ = sphere_problem
    monkeypatch.setattr(TranslationPlan, "adjoint_mismatch", lambda self, seed=0: 1e-3)
    obs = observations(positions, np.ones((60, 1, 3)), [FREQ])
    with pytest.raises(ConfigurationError, match="adjoint"):
        solve_isr(obs, regions, SolverConfig(), FREQ)


@pytest.mark.parametrize("kwargs", [
    {"max_iterations": 0},
    {"relative_residual_target": 0.0},
    {"regularization": "tikhonov"},
    {"discrepancy_level": -0.1},
])
def test_invalid_solver_config(kwargs):
    with pytest.raises(ConfigurationError):
        SolverConfig(**kwargs)


# ============================================================================
# Frequency sweep
# ============================================================================

def _two_frequency_observations(toi_spec, bad=None):
    positions = sphere_points(40, 0.4)
    freqs = [3.0e9, 3.2e9]
    fields = np.empty((40, 2, 3), dtype=complex)
    for fi, f in enumerate(freqs):
        [region] = make_regions([toi_spec], f)
        plan = TranslationPlan([region], positions, ("x", "y", "z"), f)
        fields[:, fi, :] = plan.forward([point_source_spectrum(region, f, [0, 1, 0], [0.01, 0, 0]).samples])
    if bad is not None:
        fields[0, bad, 0] = np.nan
    return observations(positions, fields, freqs)


def test_sweep_records_failures_without_stopping(toi_spec):
    obs = _two_frequency_observations(toi_spec, bad=1)
    sweep = solve_all_frequencies(obs, [toi_spec], SolverConfig(relative_residual_target=1e-4))
    assert sweep.frequencies == [3.0e9]
    assert list(sweep.failures) == [3.2e9]
    assert "NumericalStageError" in sweep.failures[3.2e9]
    report = sweep.report()
    assert len(report["solved"]) == 1
    assert len(report["failures"]) == 1


def test_sweep_is_independent_of_frequency_order(toi_spec):
    obs = _two_frequency_observations(toi_spec)
    cfg = SolverConfig(relative_residual_target=1e-4)
    forward = solve_all_frequencies(obs, [toi_spec], cfg, frequencies=[3.0e9, 3.2e9])
    backward = solve_all_frequencies(obs, [toi_spec], cfg, frequencies=[3.2e9, 3.0e9])
    for f in (3.0e9, 3.2e9):
        assert_allclose(forward.spectra[f][0].samples, backward.spectra[f][0].samples, rtol=1e-12)
        assert forward.diagnostics[f].iterations == backward.diagnostics[f].iterations


def test_sweep_checks_region_roles_up_front(toi_spec):
    obs = attrs.evolve(_two_frequency_observations(toi_spec), background_subtracted=False)
    with pytest.raises(ContractError):
        solve_all_frequencies(obs, [toi_spec], SolverConfig())
