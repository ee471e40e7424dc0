"""Supercritical limit objects: Poisson atoms, their integrated measure and weights"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from gmclab.base import CoverageError, Direction, DomainError, ResourceError
from gmclab.field import GridSpec, assemble_X, sample_layers
from gmclab.gmc import DiscreteMeasure, critical_gamma
from gmclab.logger import getLogger
from gmclab.util import evaluate, write_csv, write_sidecar
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, logsumexp

logger = getLogger(name=__name__)

MAX_EXPECTED_ATOMS = 1e7
# largest layer step of the independent field W_s
WEIGHT_DELTA = 0.1
# boundary share of the exponential mass above which the domain is too small
COVERAGE_TOL = 0.01


def tail_index(d, gamma):
    """alpha = sqrt(2d) / gamma"""
    return critical_gamma(d) / gamma


@dataclass
class AtomicMeasure:
    """Atoms of mass at least ``epsilon`` of the supercritical limit

    Args:
        locations (np.ndarray): (n, d) atom locations
        masses (np.ndarray): (n,) atom masses
        gamma (float): inverse temperature
        alpha (float): tail index sqrt(2d) / gamma
        epsilon (float): mass cutoff
        intensity_ref (DiscreteMeasure): spatial intensity
        seed (dict): stream provenance
    """

    locations: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)
    gamma: float
    alpha: float
    epsilon: float
    intensity_ref: Optional[DiscreteMeasure] = field(default=None, repr=False)
    seed: Optional[dict] = None

    def __len__(self):
        return len(self.masses)

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def restrict(self, mask_fn):
        """Atoms whose location satisfies ``mask_fn``"""
        keep = np.asarray(mask_fn(self.locations), dtype=bool).reshape(len(self))
        return AtomicMeasure(
            self.locations[keep],
            self.masses[keep],
            self.gamma,
            self.alpha,
            self.epsilon,
            self.intensity_ref,
            self.seed,
        )


@dataclass
class WeightPath:
    """Values of the weight process on a time grid

    Args:
        s_grid (np.ndarray): strictly increasing times starting at 0
        values (np.ndarray): weights at the times
        provenance (dict): source shape sample and stream of the W fields
    """

    s_grid: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def at(self, s):
        idx = np.flatnonzero(np.isclose(self.s_grid, s, rtol=0.0, atol=1e-9))
        if len(idx) == 0:
            raise DomainError(f"s={s} is not on the weight path grid")
        return float(self.values[idx[0]])


def _check_supercritical(d, gamma):
    if not gamma > critical_gamma(d):
        raise DomainError(
            f"gamma={gamma} must exceed the critical value {critical_gamma(d):.6f}"
        )


def expected_atom_count(nu, gamma, epsilon):
    """nu(R^d) epsilon^{-alpha} / alpha"""
    alpha = tail_index(nu.grid.d, gamma)
    return nu.total_mass * epsilon ** (-alpha) / alpha


def sample_eta(nu, gamma, epsilon, stream):
    """Poisson point measure with intensity nu(dx) z^{-1-alpha} dz on masses z >= epsilon

    Locations are drawn from the cells of ``nu`` in proportion to their
    weights, uniformly inside a cell. Masses are Pareto with
    P(M > z) = (z / epsilon)^{-alpha}.

    Args:
        nu (DiscreteMeasure): spatial intensity
        gamma (float): inverse temperature, above sqrt(2d)
        epsilon (float): mass cutoff
        stream (RandomStream): random stream

    Returns:
        AtomicMeasure: atoms
    """
    grid = nu.grid
    _check_supercritical(grid.d, gamma)
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    total = nu.total_mass
    if not total > 0:
        raise DomainError("intensity has no mass")
    alpha = tail_index(grid.d, gamma)
    mean = expected_atom_count(nu, gamma, epsilon)
    if mean > MAX_EXPECTED_ATOMS:
        raise ResourceError(
            f"expected {mean:.3g} atoms above epsilon={epsilon}, "
            f"limit is {MAX_EXPECTED_ATOMS:.0g}"
        )

    g = stream.generator()
    count = int(g.poisson(mean))
    w = np.asarray(nu.cell_weights, dtype=np.float64).ravel()
    cells = g.choice(grid.size, size=count, p=w / w.sum())
    jitter = (g.random((count, grid.d)) - 0.5) * grid.spacing
    locations = grid.points()[cells] + jitter
    masses = epsilon * (1.0 - g.random(count)) ** (-1.0 / alpha)
    return AtomicMeasure(
        locations, masses, float(gamma), alpha, float(epsilon), nu, stream.provenance()
    )


def integrate_P(a, f):
    """Sum of mass times f(location) over the atoms"""
    if len(a) == 0:
        return 0.0
    return float(np.dot(evaluate(f, a.locations), a.masses))


def laplace_beta(d, gamma):
    """beta(d, gamma) = Gamma(1 - alpha) / alpha"""
    _check_supercritical(d, gamma)
    alpha = tail_index(d, gamma)
    return float(gamma_fn(1.0 - alpha) / alpha)


def _cell_values(nu, f):
    values = evaluate(f, nu.grid.points())
    if np.any(values < 0):
        raise DomainError("f must be nonnegative")
    return values


def closed_form_laplace(nu, f, gamma):
    """E[exp(-P(f))] = exp(-beta int f^alpha dnu) for the untruncated atoms"""
    beta = laplace_beta(nu.grid.d, gamma)
    alpha = tail_index(nu.grid.d, gamma)
    values = _cell_values(nu, f)
    w = np.asarray(nu.cell_weights).ravel()
    return float(np.exp(-beta * np.dot(values ** alpha, w)))


def truncation_bias_bound(nu, f, gamma, epsilon):
    """Expected mass of P(f) carried by atoms below the cutoff

    nu(f) epsilon^{1 - alpha} / (1 - alpha). It also bounds the error of the
    Laplace functional caused by the cutoff.
    """
    alpha = tail_index(nu.grid.d, gamma)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha={alpha} must lie in (0, 1)")
    if epsilon == 0:
        return 0.0
    values = _cell_values(nu, f)
    nu_f = float(np.dot(values, np.asarray(nu.cell_weights).ravel()))
    return nu_f * epsilon ** (1.0 - alpha) / (1.0 - alpha)


def truncation_laplace_factor(nu, f, gamma, epsilon):
    """E[exp(-R(f))] for the atoms R below the cutoff

    Multiplying a Monte Carlo mean of exp(-P(f)) over truncated atoms by this
    factor removes the cutoff bias, since both parts are independent.
    """
    alpha = tail_index(nu.grid.d, gamma)
    values = _cell_values(nu, f)
    if epsilon == 0:
        return 1.0
    # int_0^eps (1 - e^{-z f}) z^{-1-alpha} dz, by parts
    x = epsilon * values
    per_cell = (
        values ** alpha * gamma_fn(1.0 - alpha) * gammainc(1.0 - alpha, x)
        - (-np.expm1(-x)) * epsilon ** (-alpha)
    ) / alpha
    per_cell = np.where(values > 0, per_cell, 0.0)
    return float(np.exp(-np.dot(per_cell, np.asarray(nu.cell_weights).ravel())))


def _shape_values(psi):
    values = getattr(psi, "upsilon", None)
    if values is None:
        values = psi.values
    return np.asarray(values, dtype=np.float64)


def _weight_step(s):
    if s < 0.01:
        raise DomainError(f"weight process times must be 0 or at least 0.01, got {s}")
    return s / np.ceil(s / WEIGHT_DELTA - 1e-9)


def weight_process(psi, s_grid, kernel, stream, gamma):
    """Weight process log int exp(gamma Psi_s) along a time grid

    Psi_s(x) = Psi(e^{-s} x) + W_s(e^{-s} x) - sqrt(2d) s, where W_s is a fresh
    field of depth s independent of Psi for every time. After the change of
    variables y = e^{-s} x the integral is computed on a grid resolving W_s.

    Args:
        psi: shape sample (ShapeSample or FieldSample) of a Psi ensemble member
        s_grid (array-like): strictly increasing times starting at 0
        kernel (SeedKernel): seed kernel of W_s
        stream (RandomStream): stream, time ``j`` uses ``stream.child(j)``
        gamma (float): inverse temperature

    Returns:
        WeightPath: weight path
    """
    s_grid = np.asarray(s_grid, dtype=np.float64)
    if len(s_grid) == 0 or s_grid[0] != 0 or np.any(np.diff(s_grid) <= 0):
        raise DomainError("s_grid must be strictly increasing and start at 0")
    grid = psi.grid
    if grid.d != 1:
        raise DomainError("weight process is implemented in d=1")
    gamma_c = critical_gamma(grid.d)
    values = _shape_values(psi)
    finite = np.isfinite(values)
    axis = grid.axis(0)
    expo = np.where(finite, gamma * values, -np.inf)

    # coverage of the exponential mass by the inner half of the domain
    total = logsumexp(expo)
    half = 0.5 * min(abs(axis[0]), abs(axis[-1]))
    outer = np.abs(axis) > half
    if outer.any() and np.isfinite(logsumexp(expo[outer])):
        share = float(np.exp(logsumexp(expo[outer]) - total))
        if share > COVERAGE_TOL:
            raise CoverageError(
                f"{share:.2%} of int exp(gamma Psi) lies beyond radius {half:.1f}"
            )

    # window carrying all but e^{-20} of the exponential mass
    keep = expo >= expo.max() - 20.0
    radius = float(np.max(np.abs(axis[keep]))) + 1.0
    xp = axis[finite]
    fp = values[finite]

    out = np.empty(len(s_grid))
    out[0] = total + np.log(grid.spacing)
    for j, s in enumerate(s_grid[1:], start=1):
        delta = _weight_step(s)
        fine = GridSpec.centered(1, 2.0 ** -np.ceil(np.log2(8.0 * np.exp(s))), radius)
        stack = sample_layers(kernel, fine, s, delta, Direction.SHRINKING, stream.child(j))
        w = assemble_X(stack, 0.0, s).values
        y = fine.axis(0)
        psi_y = np.interp(y, xp, fp, left=-np.inf, right=-np.inf)
        out[j] = (
            grid.d * s
            + logsumexp(gamma * (psi_y + w - gamma_c * s))
            + np.log(fine.spacing)
        )
    provenance = {"stream": stream.provenance()}
    seed = getattr(psi, "seed", None)
    if seed is not None:
        provenance["psi_seed"] = seed
    return WeightPath(s_grid, out, provenance)


def reweighted_measure(a, s, weights, a_star):
    """Atoms with masses a_star^{gamma / sqrt(2d)} e^{W_j(s)} m_j at fixed locations"""
    if len(weights) != len(a):
        raise DomainError(f"{len(weights)} weight paths for {len(a)} atoms")
    d = a.locations.shape[1] if a.locations.ndim == 2 else 1
    factor = a_star ** (a.gamma / critical_gamma(d))
    w = np.array([path.at(s) for path in weights], dtype=np.float64)
    masses = factor * np.exp(w) * a.masses
    return AtomicMeasure(
        a.locations, masses, a.gamma, a.alpha, a.epsilon, a.intensity_ref, a.seed
    )


def write_atoms(a, path, config=None, seed=None, wall_time=0.0):
    """Export atoms as CSV (coordinates, mass)"""
    d = a.locations.shape[1] if a.locations.ndim == 2 else 1
    cols = ["x", "y"][:d] + ["mass"]
    table = np.column_stack([a.locations.reshape(len(a), d), a.masses])
    out = write_csv(path, table, cols)
    write_sidecar(
        out, config, seed, wall_time, gamma=a.gamma, alpha=a.alpha, epsilon=a.epsilon
    )
    return out


def write_weight_paths(paths, path, config=None, seed=None, wall_time=0.0):
    """Export weight paths as CSV (replicate, seed, s, W)"""
    rows = []
    for i, p in enumerate(paths):
        stream_id = p.provenance.get("stream", {}).get("stream_id", i)
        for s, v in zip(p.s_grid, p.values):
            rows.append((i, stream_id, s, v))
    out = write_csv(path, np.asarray(rows, dtype=np.float64), ["replicate", "seed", "s", "W"])
    write_sidecar(out, config, seed, wall_time)
    return out
