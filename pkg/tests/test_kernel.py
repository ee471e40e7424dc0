import numpy as np
import pytest
from gmclab.base import ConfigurationError, Direction, DomainError
from gmclab.kernel import (
    ScaleFunctions,
    autoconvolution_residual,
    build_seed_kernel,
    dft_min_eigenvalue,
    eval_a_b,
    eval_h_b,
    eval_K,
    layer_covariance,
    layer_covariance_grid,
    recentering_m_b,
    write_kernel_table,
)


@pytest.fixture(scope="module")
def kernel():
    return build_seed_kernel(1, 1024)


def test_kernel_normalization(kernel):
    assert kernel.K(0.0) == pytest.approx(1.0, abs=1e-12)
    assert kernel.K(1.0) == 0.0
    assert np.all(kernel.K(np.linspace(1.0, 3.0, 50)) == 0.0)
    assert kernel.Kbar(0.5) == 0.0
    assert kernel.second_derivative_at_zero < 0
    assert eval_K(kernel, 0.3) == kernel.K(0.3)


def test_kernel_radial_and_decreasing(kernel):
    r = np.linspace(0.0, 0.99, 200)
    values = kernel.K(r)
    assert np.array_equal(kernel.K(-r), values)
    assert np.all(np.diff(values) <= 1e-9)


def test_kernel_autoconvolution(kernel):
    assert autoconvolution_residual(kernel) <= 1e-6


def test_kernel_positive_definite(kernel):
    assert dft_min_eigenvalue(kernel) >= -1e-6


@pytest.mark.slow
def test_kernel_2d():
    k = build_seed_kernel(2, 1024)
    assert k.K(0.0) == pytest.approx(1.0, abs=1e-12)
    assert k.K(1.2) == 0.0
    assert autoconvolution_residual(k, radii=[0.0, 0.5]) <= 1e-6


@pytest.mark.parametrize("d,res", [(3, 2048), (1, 512)])
def test_kernel_invalid(d, res):
    with pytest.raises(ConfigurationError):
        build_seed_kernel(d, res)


def test_kernel_table(kernel, tmp_path):
    path = write_kernel_table(kernel, tmp_path / "kernel.csv")
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (1025, 3)
    assert table[0, 1] == pytest.approx(1.0)
    assert table[-1, 1] == 0.0


def test_layer_covariance(kernel):
    assert layer_covariance(kernel, 0.0, 1.0, 0.0) == 1.0
    assert layer_covariance(kernel, 2.0, 3.5, 0.0) == pytest.approx(1.5)
    # K(e^r h) vanishes for e^r h >= 1
    assert layer_covariance(kernel, 0.0, 1.0, 1.0) == 0.0
    assert layer_covariance(kernel, 1.0, 2.0, 0.5) == 0.0
    assert 0.0 < layer_covariance(kernel, 0.0, 1.0, 0.2) < 1.0

    with pytest.raises(DomainError):
        layer_covariance(kernel, 1.0, 1.0, 0.1)


@pytest.mark.parametrize("direction", [Direction.SHRINKING, Direction.GROWING])
def test_layer_covariance_grid(kernel, direction):
    h = np.array([0.0, 0.05, 0.2, 0.45, 0.9, 2.0])
    grid = layer_covariance_grid(kernel, 0.5, 1.5, h, direction)
    quad = [layer_covariance(kernel, 0.5, 1.5, x, direction) for x in h]
    assert grid.shape == h.shape
    assert np.allclose(grid, quad, atol=1e-6)


def test_scale_functions(kernel):
    sf = ScaleFunctions(kernel)
    assert eval_a_b(sf, 0.0, 3.0) == 0.0
    assert eval_a_b(sf, 0.0, np.inf) == 0.0
    assert eval_h_b(sf, 0.0, 3.0) == 1.0

    # far points see no correlation at any scale in [0, b]
    assert eval_a_b(sf, 30.0, 2.0) == pytest.approx(2.0)
    assert eval_h_b(sf, 30.0, 2.0) == 0.0

    r = np.array([0.0, 0.3, 2.0, 7.0])
    grid = sf.a_b_grid(r, 3.0)
    quad = [eval_a_b(sf, x, 3.0) for x in r]
    assert np.allclose(grid, quad, atol=1e-4)

    # a_b(x) + b h_b(x) = b
    x = 2.5
    assert eval_a_b(sf, x, 3.0) + 3.0 * eval_h_b(sf, x, 3.0) == pytest.approx(3.0)

    with pytest.raises(DomainError):
        eval_a_b(sf, 1.0, 0.0)


def test_recentering(kernel):
    assert recentering_m_b(1, 1.0) == pytest.approx(np.sqrt(2.0))
    assert recentering_m_b(2, np.e) == pytest.approx(2.0 * np.e - 0.75)
    with pytest.raises(DomainError):
        recentering_m_b(1, 0.0)
