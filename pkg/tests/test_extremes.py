import json
from os.path import join

import numpy as np
import pytest
from gmclab.base import DomainError, EnsembleKind, ResourceError
from gmclab.field import FieldSample, GridSpec
from gmclab.extremes import (
    ALPHA,
    GAMMA_C,
    annuli_suprema,
    annulus_index,
    bridge_cluster_ratio,
    c_star_oracle,
    control_variable,
    driving_path,
    estimate_a_star,
    estimate_c_star,
    estimate_c_star_from_cluster,
    estimate_cluster_probability,
    estimate_T_gamma,
    excursion_fraction,
    load_ensemble,
    near_max_diagnostics,
    psi_integral,
    reduction_bound,
    resampling_check,
    sample_psi,
    sample_tilde_upsilon,
    sample_upsilon,
    save_ensemble,
    sup_indicator,
    supercritical_scale_constant,
    write_ensemble,
)
from gmclab.kernel import ScaleFunctions, build_seed_kernel, eval_a_b
from gmclab.util import McEstimate, RandomStream

B = 2
LAM = 1.0


@pytest.fixture(scope="module")
def kernel():
    return build_seed_kernel(1, 1024)


@pytest.fixture(scope="module")
def tilde(kernel):
    return sample_tilde_upsilon(kernel, LAM, B, 6, RandomStream(0))


@pytest.fixture(scope="module")
def psi(kernel, tilde):
    return sample_psi(kernel, LAM, B, len(tilde), RandomStream(0), tilde=tilde)


def test_driving_path():
    free = driving_path(2, 0.1, None, RandomStream(1))
    assert len(free) == 21
    assert free[0] == 0.0
    pinned = driving_path(2, 0.1, 1.5, RandomStream(1))
    assert pinned[-1] == 1.5


def test_annulus_index():
    grid = GridSpec.centered(1, 0.125, np.exp(2.0))
    idx = annulus_index(grid, 2)
    x = grid.axis(0)
    assert idx[grid.node_of(0.0)[0]] == 0
    assert idx[grid.node_of(3.0)[0]] == 1
    assert np.all(idx[np.abs(x) > np.exp(2.0) + 1e-9] == -1)


def test_sample_upsilon(kernel):
    s = sample_upsilon(kernel, B, RandomStream(2))
    assert s.grid.spacing == 0.125
    assert s.upsilon.shape == s.grid.shape
    # every piece vanishes at the origin
    assert s.upsilon[s.origin_index] == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(s.upsilon, s.phi - s.drift)
    assert s.maximum() >= s.upsilon[s.origin_index]
    assert s.path_at(0.0) == 0.0

    pinned = sample_upsilon(kernel, B, RandomStream(2), endpoint=1.0)
    assert pinned.driving_path[-1] == 1.0
    assert pinned.endpoint == 1.0

    again = sample_upsilon(kernel, B, RandomStream(2))
    assert np.array_equal(s.upsilon, again.upsilon)


def test_upsilon_moments(kernel):
    sf = ScaleFunctions(kernel)
    samples = [sample_upsilon(kernel, B, RandomStream(9, i)) for i in range(400)]
    grid = samples[0].grid
    # 7.5 lies beyond e^B where K(e^{-s} x) vanishes for every s <= B
    for x in (0.5, 2.0, 7.5):
        idx = grid.node_of(x)[0]
        a_b = eval_a_b(sf, x, B)
        assert samples[0].drift[idx] == pytest.approx(GAMMA_C * a_b, abs=2e-4)

        upsilon = np.array([s.upsilon[idx] for s in samples])
        se = upsilon.std(ddof=1) / np.sqrt(len(upsilon))
        assert abs(upsilon.mean() + GAMMA_C * a_b) <= 4 * se

        # E[Phi_b(x)^2] = 2 a_b(x)
        sq = np.array([s.phi[idx] for s in samples]) ** 2
        se = sq.std(ddof=1) / np.sqrt(len(sq))
        assert abs(sq.mean() - 2.0 * a_b) <= 4 * se
    assert eval_a_b(sf, 7.5, B) == pytest.approx(B)


def test_sample_upsilon_auxiliary_field(kernel):
    s = sample_upsilon(kernel, B, RandomStream(3))
    g = sample_upsilon(kernel, B, RandomStream(3), g=0.5)
    assert np.allclose(g.upsilon, s.upsilon + 0.5)
    assert np.all(g.attached_g == 0.5)


@pytest.mark.parametrize(
    "b,delta,err",
    [(10, 0.1, ResourceError), (1.5, 0.1, DomainError), (0, 0.1, DomainError), (2, 0.2, DomainError)],
)
def test_sample_upsilon_invalid(kernel, b, delta, err):
    with pytest.raises(err):
        sample_upsilon(kernel, b, RandomStream(0), delta=delta)


def test_components(kernel):
    s = sample_upsilon(kernel, B, RandomStream(4), keep_components=True)
    assert s.z_partial.shape == (B + 1,) + s.grid.shape
    assert np.all(s.z_partial[0] == 0.0)
    assert np.allclose(s.z_partial[B], s.z_component)

    sup = annuli_suprema(s)
    assert len(sup["upsilon"]) == B
    assert np.all(np.isfinite(sup["z_j"]))
    k = control_variable(s)
    assert 1 <= k <= B

    with pytest.raises(DomainError):
        control_variable(s.compact())


def test_reduction_bound():
    assert reduction_bound(4, 0) == pytest.approx(4.0 * (1.0 + np.log(5.0) ** 2))
    assert reduction_bound(4, 9, C=1.0) == pytest.approx(1.0 + np.log(10.0) ** 2)


def test_sample_tilde_upsilon(tilde):
    assert len(tilde) == 6
    assert tilde.kind == EnsembleKind.TILDE_UPSILON
    assert np.all(tilde.weights == 1.0)
    assert 0.0 < tilde.acceptance_rate <= 1.0
    assert tilde.trials >= 6
    for s in tilde.members:
        assert s.maximum() <= LAM
        assert s.phi is None


def test_sample_tilde_upsilon_batching(kernel, tilde):
    other = sample_tilde_upsilon(kernel, LAM, B, 6, RandomStream(0), batch_size=3)
    assert [s.seed for s in other.members] == [s.seed for s in tilde.members]
    assert other.trials == tilde.trials


def test_cluster_probability(kernel):
    p = estimate_cluster_probability(kernel, 100.0, B, 5, RandomStream(5))
    assert p.mean == 1.0
    ratio = bridge_cluster_ratio(kernel, 100.0, B, 0.5, 5, RandomStream(5))
    assert ratio.mean == pytest.approx(B / 0.5)
    with pytest.raises(DomainError):
        bridge_cluster_ratio(kernel, 100.0, B, 0.0, 5, RandomStream(5))
    with pytest.raises(DomainError):
        sample_tilde_upsilon(kernel, 0.0, B, 1, RandomStream(0))


def test_c_star(kernel):
    assert c_star_oracle(4) > 0
    est = estimate_c_star(kernel, LAM, 4, 20, RandomStream(6))
    assert 0.0 <= est.mean <= 4 ** (5.0 / 6)

    scaled = estimate_c_star_from_cluster(McEstimate(0.5, 0.1, 10), 4)
    assert scaled.mean == pytest.approx(0.5 * 2.0 / ALPHA)
    assert scaled.stderr == pytest.approx(0.1 * 2.0 / ALPHA)


def test_sample_psi(psi, tilde):
    assert psi.kind == EnsembleKind.PSI
    assert len(psi) == len(tilde)
    assert psi.weights.mean() == pytest.approx(1.0)
    for s in psi.members:
        values = np.asarray(s.upsilon)
        assert values[s.origin_index] == 0.0
        assert np.nanmax(values) == 0.0
        assert psi_integral(s, GAMMA_C) >= s.grid.spacing
        assert psi_integral(s, GAMMA_C, LAM) <= psi_integral(s, GAMMA_C)


def test_resampling_check(tilde):
    lhs, rhs = resampling_check(tilde, sup_indicator(0.0))
    assert 0.0 <= lhs.mean <= 1.0
    assert 0.0 <= rhs.mean <= 1.0
    assert lhs.n == rhs.n == len(tilde)


def test_a_star(psi, tilde):
    gamma = 2.0 * GAMMA_C
    a_star = estimate_a_star(LAM, gamma, psi, McEstimate(0.5, 0.05, 100))
    assert a_star.mean > 0
    assert a_star.stderr > 0
    scale = supercritical_scale_constant(gamma, a_star, psi)
    assert scale.mean > 0

    moment = estimate_T_gamma(gamma, [1.0, 0.0], psi)
    assert moment.mean > 0
    with pytest.raises(DomainError):
        estimate_T_gamma(gamma, [-1.0], psi)
    with pytest.raises(DomainError):
        estimate_a_star(LAM, gamma, tilde, 0.5)


def test_excursion_fraction(tilde):
    assert 0.0 <= excursion_fraction(tilde, 1) <= 1.0


def test_near_max_diagnostics():
    grid = GridSpec(1, 0.0, 1.0, 4)
    X = FieldSample(grid, np.array([0.0, 1.0, 0.5, -3.0]))
    diag = near_max_diagnostics(X, 0.6)
    assert diag.M == 1.0
    assert diag.argmax == 0.25
    assert diag.D_lambda_volume == pytest.approx(0.5)


def test_ensemble_io(psi, tmp_path):
    files = write_ensemble(psi, str(tmp_path / "psi"), {"b": B})
    assert len(files) == len(psi)
    with open(join(str(tmp_path), "psi", "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["kind"] == "psi"
    assert manifest["n"] == len(psi)

    path = save_ensemble(psi, str(tmp_path / "psi.joblib"))
    loaded = load_ensemble(path)
    assert len(loaded) == len(psi)
    assert np.array_equal(loaded.weights, psi.weights)
