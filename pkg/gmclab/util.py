import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from os.path import abspath, dirname, exists
from typing import Optional, Tuple

import numpy as np
from gmclab.base import StatisticsError


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream

    A stream is fully determined by ``(base_seed, stream_id, subkey)``.
    Draws come from numpy's Philox bit generator keyed by a SeedSequence
    whose spawn key is ``(stream_id, *subkey)``. Distinct keys give
    statistically independent streams, whatever order they are consumed in.

    Args:
        base_seed (int): experiment seed
        stream_id (int): replicate index
        subkey (tuple): path of sub-streams below the replicate
    """

    base_seed: int
    stream_id: int = 0
    subkey: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.base_seed < 0 or self.stream_id < 0:
            raise ValueError("seeds must be nonnegative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            self.base_seed, spawn_key=(self.stream_id,) + tuple(self.subkey)
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *keys) -> "RandomStream":
        """Derive an independent sub-stream"""
        return replace(self, subkey=tuple(self.subkey) + tuple(int(k) for k in keys))

    def provenance(self):
        return {
            "base_seed": int(self.base_seed),
            "stream_id": int(self.stream_id),
            "subkey": [int(k) for k in self.subkey],
        }


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo estimate with its standard error

    Args:
        mean (float): estimate
        stderr (float): standard error, ``inf`` when ``n < 2``
        n (int): number of samples
        seed (int): base seed of the replicates
    """

    mean: float
    stderr: float
    n: int
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, values, weights=None, seed=None):
        """Sample mean, or self-normalized weighted mean when weights are given

        Args:
            values (array-like): samples
            weights (array-like): optional nonnegative importance weights
            seed (int): seed provenance

        Returns:
            McEstimate: estimate
        """
        values = np.asarray(values, dtype=np.float64).ravel()
        n = len(values)
        if n == 0:
            raise StatisticsError("no samples")
        if weights is None:
            mean = float(values.mean())
            stderr = float(values.std(ddof=1) / np.sqrt(n)) if n >= 2 else np.inf
            return cls(mean, stderr, n, seed)

        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape != values.shape:
            raise StatisticsError("weights and values differ in length")
        total = weights.sum()
        if not total > 0:
            raise StatisticsError("weights sum to zero")
        mean = float(np.sum(weights * values) / total)
        if n < 2:
            return cls(mean, np.inf, n, seed)
        # delta method for the ratio estimator
        stderr = float(np.sqrt(np.sum(weights ** 2 * (values - mean) ** 2)) / total)
        return cls(mean, stderr, n, seed)

    def agrees_with(self, other, n_se=4.0, slack=0.0):
        """Whether two estimates agree within ``n_se`` joint standard errors"""
        if isinstance(other, McEstimate):
            joint = np.hypot(self.stderr, other.stderr)
            return bool(abs(self.mean - other.mean) <= n_se * joint + slack)
        return bool(abs(self.mean - float(other)) <= n_se * self.stderr + slack)

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "seed": self.seed,
        }


def next_pow2(n):
    """Smallest power of two >= n"""
    n = int(np.ceil(n))
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def evaluate(f, points):
    """Evaluate ``f`` at points

    Args:
        f (callable, float or array): callable mapping an (N, d) array of
            points to N values, a constant, or precomputed values.
        points (np.ndarray): (N, d) points

    Returns:
        np.ndarray: (N,) values
    """
    n = len(points)
    if callable(f):
        out = np.asarray(f(points), dtype=np.float64)
        if out.ndim == 0:
            return np.full(n, float(out))
        return out.reshape(n)
    out = np.asarray(f, dtype=np.float64)
    if out.ndim == 0:
        return np.full(n, float(out))
    return out.reshape(n)


def _to_builtin(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if hasattr(obj, "value") and hasattr(obj, "name"):
        return obj.value
    raise TypeError(f"{type(obj)} is not JSON serializable")


def _atomic_write(path, write_fn, mode="w"):
    path = abspath(path)
    out_dir = dirname(path)
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            write_fn(f)
        os.replace(tmp_path, path)
    except BaseException:
        if exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def write_csv(path, data, header):
    """Write a table as CSV with 17 significant digits

    The file is written to a temporary file in the same directory and
    renamed into place, so a failure never leaves a partial file.

    Args:
        path (str): output path
        data (array-like): (N, len(header)) table
        header (list): column names

    Returns:
        str: absolute path of the written file
    """
    data = np.asarray(data, dtype=np.float64).reshape(-1, len(header))

    def _write(f):
        np.savetxt(
            f, data, fmt="%.17g", delimiter=",", header=",".join(header), comments=""
        )

    return _atomic_write(path, _write)


def write_json(path, obj):
    """Write a JSON document atomically"""

    def _write(f):
        json.dump(obj, f, indent=2, default=_to_builtin)
        f.write("\n")

    return _atomic_write(path, _write)


def provenance(config, seed, wall_time):
    """Provenance record written next to every artifact"""
    from gmclab.version import version

    return {
        "version": version,
        "config": config,
        "seed": seed,
        "wall_time": float(wall_time),
    }


def write_sidecar(artifact_path, config, seed, wall_time, **extra):
    """Write ``<artifact>.json`` with the provenance of an artifact"""
    record = provenance(config, seed, wall_time)
    record.update(extra)
    return write_json(str(artifact_path) + ".json", record)


def write_lines(path, lines):
    """Write text lines atomically"""

    def _write(f):
        for line in lines:
            f.write(line + "\n")

    return _atomic_write(path, _write)
