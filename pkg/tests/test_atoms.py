from dataclasses import replace

import numpy as np
import pytest
from gmclab.atoms import (
    AtomicMeasure,
    WeightPath,
    closed_form_laplace,
    expected_atom_count,
    integrate_P,
    laplace_beta,
    reweighted_measure,
    sample_eta,
    tail_index,
    truncation_bias_bound,
    truncation_laplace_factor,
    weight_process,
    write_atoms,
    write_weight_paths,
)
from gmclab.base import DomainError, ResourceError
from gmclab.field import FieldSample, GridSpec
from gmclab.gmc import lebesgue_measure
from gmclab.kernel import build_seed_kernel
from gmclab.util import RandomStream
from scipy import stats

GAMMA = 2.0 * np.sqrt(2.0)


@pytest.fixture(scope="module")
def nu():
    return lebesgue_measure(GridSpec(1, 0.5 / 64, 1.0, 64))


def test_tail_index():
    assert tail_index(1, GAMMA) == pytest.approx(0.5)
    assert tail_index(2, 4.0) == pytest.approx(0.5)
    assert laplace_beta(1, GAMMA) == pytest.approx(2.0 * np.sqrt(np.pi))


def test_expected_atom_count(nu):
    assert expected_atom_count(nu, GAMMA, 0.01) == pytest.approx(20.0)


def test_sample_eta(nu):
    a = sample_eta(nu, GAMMA, 0.01, RandomStream(0))
    assert len(a) > 0
    assert np.all(a.masses >= 0.01)
    assert np.all((a.locations >= 0.0) & (a.locations <= 1.0))
    assert a.alpha == pytest.approx(0.5)
    assert a.total_mass == pytest.approx(a.masses.sum())
    assert integrate_P(a, 1.0) == pytest.approx(a.total_mass)

    again = sample_eta(nu, GAMMA, 0.01, RandomStream(0))
    assert np.array_equal(a.masses, again.masses)

    left = a.restrict(lambda x: x[:, 0] < 0.5)
    assert len(left) <= len(a)
    assert np.all(left.locations < 0.5)


def test_atom_count_mean(nu):
    counts = np.array([len(sample_eta(nu, GAMMA, 0.01, RandomStream(1, i))) for i in range(400)])
    se = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 20.0) <= 4 * se


def test_pareto_masses(nu):
    masses = np.concatenate(
        [sample_eta(nu, GAMMA, 1e-4, RandomStream(2, i)).masses for i in range(5)]
    )
    # P(M > z) = (z / epsilon)^{-alpha}
    z = 1e-2
    observed = np.mean(masses > z)
    expected = (z / 1e-4) ** -0.5
    se = np.sqrt(expected * (1 - expected) / len(masses))
    assert abs(observed - expected) <= 4 * se


@pytest.mark.parametrize(
    "gamma,epsilon,err",
    [(1.0, 0.01, DomainError), (GAMMA, 0.0, DomainError), (GAMMA, 1e-16, ResourceError)],
)
def test_sample_eta_invalid(nu, gamma, epsilon, err):
    with pytest.raises(err):
        sample_eta(nu, gamma, epsilon, RandomStream(0))


def test_empty_atoms():
    a = AtomicMeasure(np.zeros((0, 1)), np.zeros(0), GAMMA, 0.5, 0.1)
    assert len(a) == 0
    assert integrate_P(a, 1.0) == 0.0


def test_closed_form_laplace(nu):
    assert closed_form_laplace(nu, 1.0, GAMMA) == pytest.approx(
        np.exp(-2.0 * np.sqrt(np.pi))
    )
    with pytest.raises(DomainError):
        closed_form_laplace(nu, -1.0, GAMMA)


def test_truncation(nu):
    assert truncation_bias_bound(nu, 1.0, GAMMA, 0.01) == pytest.approx(0.2)
    assert truncation_bias_bound(nu, 1.0, GAMMA, 0.0) == 0.0
    assert truncation_laplace_factor(nu, 1.0, GAMMA, 0.0) == 1.0
    factor = truncation_laplace_factor(nu, 1.0, GAMMA, 0.01)
    assert 0.0 < factor < 1.0
    # the factor never removes more than the mass below the cutoff
    assert factor >= np.exp(-truncation_bias_bound(nu, 1.0, GAMMA, 0.01))


def test_laplace_functional(nu):
    epsilon = 0.01
    values = np.array(
        [
            np.exp(-integrate_P(sample_eta(nu, GAMMA, epsilon, RandomStream(3, i)), 1.0))
            for i in range(2000)
        ]
    )
    factor = truncation_laplace_factor(nu, 1.0, GAMMA, epsilon)
    se = factor * values.std(ddof=1) / np.sqrt(len(values))
    assert abs(factor * values.mean() - closed_form_laplace(nu, 1.0, GAMMA)) <= 4 * se


def test_weight_process():
    kernel = build_seed_kernel(1, 1024)
    grid = GridSpec.centered(1, 0.125, 8.0)
    x = grid.axis(0)
    psi = FieldSample(grid, -2.0 * np.abs(x))
    path = weight_process(psi, [0.0, 0.5], kernel, RandomStream(4), GAMMA)
    assert len(path.values) == 2
    assert np.all(np.isfinite(path.values))
    expected0 = np.log(grid.spacing * np.sum(np.exp(GAMMA * psi.values)))
    assert path.at(0.0) == pytest.approx(expected0)
    assert path.provenance["stream"]["base_seed"] == 4

    with pytest.raises(DomainError):
        path.at(0.25)
    with pytest.raises(DomainError):
        weight_process(psi, [0.5, 1.0], kernel, RandomStream(4), GAMMA)


def test_reweighted_measure(nu):
    a = sample_eta(nu, GAMMA, 0.01, RandomStream(5))
    paths = [WeightPath(np.array([0.0, 1.0]), np.array([0.0, 0.0])) for _ in range(len(a))]
    b = reweighted_measure(a, 1.0, paths, 2.0)
    # a_star^{gamma / sqrt(2)} = 2^2
    assert np.allclose(b.masses, 4.0 * a.masses)
    assert np.array_equal(b.locations, a.locations)
    with pytest.raises(DomainError):
        reweighted_measure(a, 1.0, paths[:-1], 2.0)


def test_write_atoms(nu, tmp_path):
    a = sample_eta(nu, GAMMA, 0.01, RandomStream(6))
    path = write_atoms(a, tmp_path / "atoms.csv", {"gamma": GAMMA})
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    assert table.shape == (len(a), 2)

    paths = [WeightPath(np.array([0.0, 1.0]), np.array([0.0, 0.5]))]
    out = write_weight_paths(paths, tmp_path / "weights.csv")
    table = np.loadtxt(out, delimiter=",", skiprows=1, ndmin=2)
    assert table.shape == (2, 4)


def test_poisson_thinning(nu):
    # atoms in [0, 1/4) are Poisson with a quarter of the mean count
    counts = np.array(
        [
            len(sample_eta(nu, GAMMA, 0.01, RandomStream(7, i)).restrict(lambda x: x[:, 0] < 0.25))
            for i in range(1000)
        ]
    )
    mean = 0.25 * expected_atom_count(nu, GAMMA, 0.01)
    observed = np.array([np.sum(counts == k) for k in range(10)] + [np.sum(counts >= 10)])
    probs = np.concatenate([stats.poisson.pmf(np.arange(10), mean), [stats.poisson.sf(9, mean)]])
    _, pvalue = stats.chisquare(observed, len(counts) * probs)
    assert pvalue > 0.01


def test_superposition(nu):
    x = nu.grid.axis(0)
    left = replace(nu, cell_weights=np.where(x < 0.5, nu.cell_weights, 0.0))
    right = replace(nu, cell_weights=np.where(x >= 0.5, 2.0 * nu.cell_weights, 0.0))
    both = replace(nu, cell_weights=left.cell_weights + right.cell_weights)

    union_counts, union_mass, single_counts, single_mass = [], [], [], []
    for i in range(1000):
        a = sample_eta(left, GAMMA, 0.01, RandomStream(8, i))
        b = sample_eta(right, GAMMA, 0.01, RandomStream(9, i))
        c = sample_eta(both, GAMMA, 0.01, RandomStream(10, i))
        union_counts.append(len(a) + len(b))
        union_mass.append(a.total_mass + b.total_mass)
        single_counts.append(len(c))
        single_mass.append(c.total_mass)

    assert stats.ks_2samp(union_counts, single_counts).pvalue > 0.001
    assert stats.ks_2samp(union_mass, single_mass).pvalue > 0.001
    assert np.mean(union_counts) == pytest.approx(
        expected_atom_count(both, GAMMA, 0.01), rel=0.05
    )
