import json
from functools import partial

import numpy as np
import pytest
from gmclab.base import (
    ConfigurationError,
    DomainError,
    PartialResultError,
    StatisticsError,
)
from gmclab.field import GridSpec
from gmclab.harness import (
    N_CRITERIA,
    THREADS_ENV,
    CriterionResult,
    PoolMapper,
    SuiteSettings,
    TestReport,
    acceptance_suite,
    cameron_martin_check,
    cameron_martin_shift,
    derived_seed,
    hill_tail_estimator,
    ks_statistic,
    map_replicates,
    resolve_num_workers,
    run_replicates,
    unit_functional,
    weighted_ks_2samp,
)
from gmclab.kernel import build_seed_kernel
from scipy import stats


def _normal(stream):
    return float(stream.generator().standard_normal())


def _fail_on(stream, bad):
    if stream.stream_id == bad:
        raise RuntimeError("boom")
    return stream.stream_id


def _square(i):
    return i * i


def test_resolve_num_workers(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_num_workers(1) == 1
    assert resolve_num_workers(None) >= 1
    assert resolve_num_workers(0) >= 1

    monkeypatch.setenv(THREADS_ENV, "1")
    assert resolve_num_workers(8) == 1

    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigurationError):
        resolve_num_workers(2)


@pytest.mark.parametrize("num_workers", [1, 2])
def test_pool_mapper(num_workers):
    with PoolMapper(num_workers) as mapper:
        assert mapper(_square, range(10)) == [i * i for i in range(10)]
        assert mapper(_square, range(3)) == [0, 1, 4]


def test_map_replicates_determinism():
    serial = map_replicates(_normal, 20, 5, num_workers=1)
    parallel = map_replicates(_normal, 20, 5, num_workers=2)
    assert serial == parallel
    assert serial != map_replicates(_normal, 20, 6, num_workers=1)


@pytest.mark.parametrize("num_workers", [1, 2])
def test_map_replicates_failure(num_workers):
    with pytest.raises(PartialResultError) as e:
        map_replicates(partial(_fail_on, bad=3), 6, 0, num_workers=num_workers)
    assert e.value.completed == 5
    assert e.value.results == [0, 1, 2, 4, 5]


def test_map_replicates_invalid():
    with pytest.raises(DomainError):
        map_replicates(_normal, 0, 0)


def test_run_replicates():
    values, est = run_replicates(_normal, 200, 1)
    assert values.shape == (200,)
    assert est.n == 200
    assert est.seed == 1
    assert abs(est.mean) <= 4 * est.stderr


def test_hill_tail_estimator():
    g = np.random.default_rng(0)
    alpha = 0.5
    samples = (1.0 - g.random(20000)) ** (-1.0 / alpha)
    assert hill_tail_estimator(samples, 2000) == pytest.approx(alpha, rel=0.1)

    with pytest.raises(StatisticsError):
        hill_tail_estimator([], 1)
    with pytest.raises(DomainError):
        hill_tail_estimator([1.0, -1.0, 2.0], 1)
    with pytest.raises(DomainError):
        hill_tail_estimator(samples[:10], 5)


def test_ks_statistic():
    g = np.random.default_rng(1)
    stat, p = ks_statistic(g.random(500), stats.uniform.cdf)
    assert 0.0 <= stat <= 1.0
    assert p > 1e-3

    _, p = ks_statistic(g.random(500) ** 3, stats.uniform.cdf)
    assert p < 1e-3

    with pytest.raises(StatisticsError):
        ks_statistic([], stats.uniform.cdf)


def test_weighted_ks_2samp():
    a = np.array([0.1, 0.4, 0.7])
    d, p = weighted_ks_2samp(a, a)
    assert d == 0.0
    assert p == pytest.approx(1.0)

    g = np.random.default_rng(2)
    d, p = weighted_ks_2samp(g.random(400), g.random(400) + 0.5)
    assert d > 0.3
    assert p < 1e-3

    # weights shift the mass of the first sample
    d, _ = weighted_ks_2samp([0.0, 1.0], [1.0], weights_a=[0.0, 1.0])
    assert d == 0.0

    with pytest.raises(StatisticsError):
        weighted_ks_2samp([], [1.0])


def test_cameron_martin_shift():
    kernel = build_seed_kernel(1, 1024)
    grid = GridSpec.for_depth(1, 1.0, origin=-0.5)
    shift = cameron_martin_shift(kernel, grid, 1.0, 0.25)
    assert shift.shape == grid.shape
    assert shift[grid.node_of(0.0)] == pytest.approx(1.0)
    assert np.all(shift <= 1.0 + 1e-9)


def test_cameron_martin_check():
    kernel = build_seed_kernel(1, 1024)
    lhs, rhs = cameron_martin_check(kernel, 1.0, unit_functional, 300, 3)
    assert rhs.mean == 1.0
    assert abs(lhs.mean - 1.0) <= 4 * lhs.stderr


def test_derived_seed():
    assert derived_seed(0, 1) == derived_seed(0, 1)
    assert derived_seed(0, 1) != derived_seed(0, 2)
    assert derived_seed(0, 1) != derived_seed(1, 1)
    assert derived_seed(0, 1) >= 0


def test_suite_settings():
    settings = SuiteSettings.from_config({"base_seed": 3, "criteria": [1, 5], "scale": 0.5})
    assert settings.criteria == (1, 5)
    assert settings.count(100) == 50
    assert settings.count(1, minimum=10) == 10

    defaults = SuiteSettings.from_config({"criteria": None, "base_seed": 0})
    assert defaults.criteria == tuple(range(1, N_CRITERIA + 1))


@pytest.mark.parametrize(
    "config",
    [None, {}, {"bogus": 1}, {"scale": 0.0}, {"criteria": [0]}, {"criteria": [14]}],
)
def test_suite_settings_invalid(config):
    with pytest.raises(ConfigurationError):
        SuiteSettings.from_config(config)


def test_test_report(tmp_path):
    report = TestReport(
        [
            CriterionResult(1, "a", "pass", 1.0, 1.0, 0.1),
            CriterionResult(2, "b", "fail", 2.0, 1.0, 0.1, detail="too far"),
            CriterionResult(3, "c", "skip", detail="not selected"),
        ],
        {"base_seed": 0},
    )
    assert not report.passed
    assert [r.test_id for r in report.failed] == [2]
    assert report.counts() == {"pass": 1, "fail": 1, "skip": 1}
    text = report.to_text()
    assert text.splitlines()[-1] == "1 passed, 1 failed, 1 skipped"
    assert "too far" in text

    path = report.write(str(tmp_path / "report.json"))
    with open(path) as f:
        record = json.load(f)
    assert record["settings"] == {"base_seed": 0}
    assert [r["status"] for r in record["results"]] == ["pass", "fail", "skip"]


def test_acceptance_suite_kernel_only():
    report = acceptance_suite({"criteria": [1], "table_resolution": 1024})
    assert len(report.results) == N_CRITERIA
    assert report.results[0].status == "pass"
    assert report.counts()["skip"] == N_CRITERIA - 1
    assert report.passed
    assert report.settings["criteria"] == (1,)

