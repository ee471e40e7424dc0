import json

import numpy as np
import pytest
from gmclab.base import ConfigurationError, Direction, DomainError, GmcPhase
from gmclab.field import FieldSample, GridSpec, assemble_X, sample_layers
from gmclab.gmc import (
    advance_supercritical,
    check_phase,
    clipped_mass_fraction,
    critical_gamma,
    gmc_measure,
    laplace_sample,
    lebesgue_measure,
    log_total_mass,
    max_statistics,
    measure_integral,
    phase_prefactor,
    write_measure,
)
from gmclab.kernel import build_seed_kernel, recentering_m_b
from gmclab.util import RandomStream

SQRT2 = np.sqrt(2.0)


def _flat_field(t=1.0, n=16, value=0.0):
    grid = GridSpec(1, 0.0, 1.0, n)
    return FieldSample(grid, np.full(grid.shape, value), {"t": t})


def test_critical_gamma():
    assert critical_gamma(1) == pytest.approx(SQRT2)
    assert critical_gamma(2) == pytest.approx(2.0)


@pytest.mark.parametrize(
    "gamma,phase",
    [
        (2.0, GmcPhase.SUBCRITICAL),
        (1.0, GmcPhase.SUPERCRITICAL),
        (1.0, GmcPhase.CRITICAL_DERIVATIVE),
        (SQRT2, GmcPhase.SUBCRITICAL),
    ],
)
def test_check_phase_mismatch(gamma, phase):
    with pytest.raises(ConfigurationError):
        check_phase(1, gamma, phase)


def test_check_phase():
    assert check_phase(1, 0.5, "subcritical") == GmcPhase.SUBCRITICAL
    assert check_phase(1, SQRT2, GmcPhase.CRITICAL_SENETA_HEYDE).is_critical
    assert check_phase(2, 3.0, GmcPhase.SUPERCRITICAL) == GmcPhase.SUPERCRITICAL


def test_gmc_measure_flat_field():
    X = _flat_field(t=2.0)
    sub = gmc_measure(X, 1.0, GmcPhase.SUBCRITICAL)
    assert sub.total_mass == pytest.approx(np.exp(-1.0))

    sh = gmc_measure(X, SQRT2, GmcPhase.CRITICAL_SENETA_HEYDE)
    assert sh.total_mass == pytest.approx(np.sqrt(2.0) * np.exp(-2.0))

    der = gmc_measure(X, SQRT2, GmcPhase.CRITICAL_DERIVATIVE)
    assert der.total_mass == pytest.approx(2.0 * SQRT2 * np.exp(-2.0))
    assert der.diagnostics["clipped_mass_fraction"] == 0.0

    sup = gmc_measure(X, 2.0, GmcPhase.SUPERCRITICAL)
    expected = phase_prefactor(1, 2.0, 2.0, GmcPhase.SUPERCRITICAL) * np.exp(-4.0)
    assert sup.total_mass == pytest.approx(expected)
    assert sup.summary()["phase"] == "supercritical"


def test_gmc_measure_clipping():
    grid = GridSpec(1, 0.0, 1.0, 4)
    # X > gamma t on the last two cells
    X = FieldSample(grid, np.array([0.0, 0.0, 5.0, 5.0]), {"t": 1.0})
    mu = gmc_measure(X, SQRT2, GmcPhase.CRITICAL_DERIVATIVE)
    assert np.all(mu.cell_weights >= 0)
    assert mu.cell_weights[2] == 0.0
    assert 0.0 < mu.diagnostics["clipped_mass_fraction"] < 1.0


def test_gmc_measure_needs_depth():
    grid = GridSpec(1, 0.0, 1.0, 4)
    with pytest.raises(DomainError):
        gmc_measure(FieldSample(grid, np.zeros(4)), 0.5, GmcPhase.SUBCRITICAL)


def test_clipped_mass_fraction():
    assert clipped_mass_fraction([1.0, -1.0, 2.0]) == pytest.approx(0.25)
    assert clipped_mass_fraction([0.0, 0.0]) == 0.0


def test_lebesgue_measure():
    mu = lebesgue_measure(GridSpec(2, 0.0, 2.0, 8))
    assert mu.total_mass == pytest.approx(4.0)
    assert mu.phase is None
    assert measure_integral(mu, 0.5) == pytest.approx(2.0)
    assert laplace_sample(mu, 1.0) == pytest.approx(np.exp(-4.0))


def test_max_statistics():
    grid = GridSpec(1, 0.0, 1.0, 4)
    X = FieldSample(grid, np.array([0.1, 2.0, -1.0, 0.5]), {"t": 3.0})
    sup, recentered = max_statistics(X)
    assert sup == 2.0
    assert recentered == pytest.approx(2.0 - recentering_m_b(1, 3.0))

    sup, _ = max_statistics(X, region=np.array([True, False, False, True]))
    assert sup == 0.5
    sup, _ = max_statistics(X, region=lambda p: p[:, 0] > 0.6)
    assert sup == 0.5
    with pytest.raises(DomainError):
        max_statistics(X, region=np.zeros(4, dtype=bool))


def test_log_total_mass():
    X = _flat_field(t=1.0, value=0.3)
    mu = gmc_measure(X, 0.8, GmcPhase.SUBCRITICAL)
    assert log_total_mass(X, 0.8) == pytest.approx(np.log(mu.total_mass))
    # finite where the plain exponential overflows
    assert np.isfinite(log_total_mass(_flat_field(t=1.0, value=400.0), 3.0))


def test_advance_supercritical():
    X = _flat_field(t=2.0)
    mu = gmc_measure(X, 2.0, GmcPhase.SUPERCRITICAL)
    W = FieldSample(X.grid, np.zeros(X.grid.shape), {"t": 0.0})
    same = advance_supercritical(mu, W, 0.0)
    assert np.allclose(same.cell_weights, mu.cell_weights)

    later = advance_supercritical(mu, W, 1.0)
    assert later.t == 3.0
    direct = gmc_measure(_flat_field(t=3.0), 2.0, GmcPhase.SUPERCRITICAL)
    # with W = 0 both routes see the same field
    assert later.total_mass == pytest.approx(direct.total_mass)

    with pytest.raises(ConfigurationError):
        advance_supercritical(gmc_measure(X, 1.0, GmcPhase.SUBCRITICAL), W, 1.0)
    with pytest.raises(DomainError):
        advance_supercritical(mu, W, -1.0)


def test_subcritical_mean_mass():
    kernel = build_seed_kernel(1, 1024)
    grid = GridSpec.for_depth(1, 1.0)
    masses = []
    for i in range(300):
        stack = sample_layers(kernel, grid, 1.0, 0.25, Direction.SHRINKING, RandomStream(9, i))
        X = assemble_X(stack, 0.0, 1.0)
        masses.append(gmc_measure(X, 0.5, GmcPhase.SUBCRITICAL).total_mass)
    masses = np.asarray(masses)
    se = masses.std(ddof=1) / np.sqrt(len(masses))
    assert abs(masses.mean() - 1.0) <= 4 * se


def test_write_measure(tmp_path):
    mu = gmc_measure(_flat_field(t=1.0), 0.5, GmcPhase.SUBCRITICAL)
    path = write_measure(mu, tmp_path / "measure.csv", {"gamma": 0.5})
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (16, 3)
    assert table[:, 2].sum() == pytest.approx(mu.total_mass)
    with open(path + ".json") as f:
        assert json.load(f)["summary"]["gamma"] == 0.5
