import json

import numpy as np
import pytest
from gmclab.base import StatisticsError
from gmclab.util import (
    McEstimate,
    RandomStream,
    evaluate,
    is_pow2,
    next_pow2,
    write_csv,
    write_lines,
    write_sidecar,
)


def test_random_stream_determinism():
    a = RandomStream(3, 5).generator().standard_normal(8)
    b = RandomStream(3, 5).generator().standard_normal(8)
    assert np.array_equal(a, b)

    c = RandomStream(3, 6).generator().standard_normal(8)
    d = RandomStream(3, 5).child(0).generator().standard_normal(8)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_random_stream_child_order_independent():
    s = RandomStream(11)
    first = s.child(2).generator().random(4)
    s.child(1).generator().random(100)
    again = s.child(2).generator().random(4)
    assert np.array_equal(first, again)
    assert s.child(1, 2).subkey == (1, 2)


def test_random_stream_negative_seed():
    with pytest.raises(ValueError):
        RandomStream(-1)


def test_random_stream_provenance():
    p = RandomStream(7, 2).child(4).provenance()
    assert p == {"base_seed": 7, "stream_id": 2, "subkey": [4]}


def test_mc_estimate():
    est = McEstimate.from_samples([1.0, 2.0, 3.0], seed=1)
    assert est.mean == pytest.approx(2.0)
    assert est.stderr == pytest.approx(1.0 / np.sqrt(3.0))
    assert est.n == 3
    assert est.seed == 1

    single = McEstimate.from_samples([4.0])
    assert np.isinf(single.stderr)


def test_mc_estimate_weighted():
    est = McEstimate.from_samples([1.0, 3.0], weights=[1.0, 3.0])
    assert est.mean == pytest.approx(2.5)

    with pytest.raises(StatisticsError):
        McEstimate.from_samples([1.0, 3.0], weights=[1.0])
    with pytest.raises(StatisticsError):
        McEstimate.from_samples([1.0, 3.0], weights=[0.0, 0.0])
    with pytest.raises(StatisticsError):
        McEstimate.from_samples([])


def test_mc_estimate_agrees_with():
    a = McEstimate(1.0, 0.1, 100)
    b = McEstimate(1.3, 0.1, 100)
    assert a.agrees_with(b)
    assert not a.agrees_with(2.0)
    assert a.agrees_with(1.35)


@pytest.mark.parametrize("n,expected", [(0, 1), (1, 1), (2, 2), (3, 4), (1000, 1024)])
def test_next_pow2(n, expected):
    assert next_pow2(n) == expected
    assert is_pow2(expected)


def test_is_pow2():
    assert not is_pow2(0)
    assert not is_pow2(96)
    assert is_pow2(64)


def test_evaluate():
    points = np.zeros((5, 1))
    assert np.array_equal(evaluate(2.0, points), np.full(5, 2.0))
    assert np.array_equal(evaluate(lambda p: p[:, 0] + 1, points), np.ones(5))
    assert np.array_equal(evaluate(np.arange(5), points), np.arange(5.0))


def test_write_csv_and_sidecar(tmp_path):
    data = np.array([[0.0, 1.0 / 3.0], [1.0, 2.0]])
    path = write_csv(tmp_path / "sub" / "table.csv", data, ["a", "b"])
    with open(path) as f:
        assert f.readline().strip() == "a,b"
    loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(loaded, data)

    sidecar = write_sidecar(path, {"t": 1.0}, {"base_seed": 0}, 1.5, note="x")
    with open(sidecar) as f:
        record = json.load(f)
    assert record["config"] == {"t": 1.0}
    assert record["wall_time"] == 1.5
    assert record["note"] == "x"
    assert "version" in record


def test_write_lines(tmp_path):
    path = write_lines(tmp_path / "lines.txt", ["a=1", "b=2"])
    with open(path) as f:
        assert f.read() == "a=1\nb=2\n"
