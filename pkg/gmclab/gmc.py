"""Chaos measures built from field samples"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from gmclab.base import ConfigurationError, DomainError, GmcPhase
from gmclab.field import GridSpec
from gmclab.kernel import recentering_m_b
from gmclab.logger import getLogger
from gmclab.util import evaluate, write_csv, write_sidecar
from scipy.special import logsumexp

logger = getLogger(name=__name__)


def critical_gamma(d):
    return float(np.sqrt(2.0 * d))


@dataclass
class DiscreteMeasure:
    """Measure given by nonnegative weights on the cells of a grid

    Args:
        grid (GridSpec): grid
        cell_weights (np.ndarray): mass of every cell, with the grid's shape
        phase (GmcPhase): normalization, None for a reference intensity
        gamma (float): inverse temperature
        t (float): depth of the field the measure was built from
        diagnostics (dict): e.g. the clipped mass fraction of the derivative
            normalization
    """

    grid: GridSpec
    cell_weights: np.ndarray = field(repr=False)
    phase: Optional[GmcPhase]
    gamma: float
    t: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_mass(self):
        return float(np.sum(self.cell_weights))

    def summary(self):
        return {
            "phase": None if self.phase is None else self.phase.value,
            "gamma": self.gamma,
            "t": self.t,
            "total_mass": self.total_mass,
            **self.diagnostics,
        }


def check_phase(d, gamma, phase):
    """Check that ``gamma`` is in the regime of ``phase``

    Raises:
        ConfigurationError: on a mismatch
    """
    phase = GmcPhase(phase)
    gamma_c = critical_gamma(d)
    critical = bool(np.isclose(gamma, gamma_c, rtol=1e-6, atol=0.0))
    if phase.is_critical:
        ok = critical
    elif phase == GmcPhase.SUBCRITICAL:
        ok = gamma < gamma_c and not critical and gamma > 0
    else:
        ok = gamma > gamma_c and not critical
    if not ok:
        raise ConfigurationError(
            f"gamma={gamma} is incompatible with phase {phase.value} in d={d} "
            f"(critical value {gamma_c:.6f})"
        )
    return phase


def phase_prefactor(d, gamma, t, phase):
    """Deterministic factor in front of e^{gamma X_t - gamma^2 t / 2}

    Only the Seneta-Heyde and supercritical normalizations have one; the
    derivative normalization multiplies by a random factor instead.
    """
    phase = GmcPhase(phase)
    if phase == GmcPhase.CRITICAL_SENETA_HEYDE:
        return float(np.sqrt(t))
    if phase == GmcPhase.SUPERCRITICAL:
        return float(np.exp(_log_supercritical_prefactor(d, gamma, t)))
    return 1.0


def _log_supercritical_prefactor(d, gamma, t):
    gamma_c = critical_gamma(d)
    return 3.0 * gamma / (2.0 * gamma_c) * np.log(t) + t * (
        gamma / np.sqrt(2.0) - np.sqrt(d)
    ) ** 2


def gmc_measure(X, gamma, phase):
    """Chaos measure of a field sample under a normalization

    Cell weights are the cell volume times the normalized density at the
    cell center. In the derivative normalization the signed density is
    clipped at zero and the clipped fraction is kept in the diagnostics.

    Args:
        X (FieldSample): sample of X_t, carrying t in its metadata
        gamma (float): inverse temperature
        phase (GmcPhase): normalization

    Returns:
        DiscreteMeasure: the measure
    """
    grid = X.grid
    phase = check_phase(grid.d, gamma, phase)
    t = X.t
    if t is None:
        raise DomainError("field sample does not carry its depth t")
    t = float(t)
    values = np.asarray(X.values, dtype=np.float64)
    log_vol = np.log(grid.cell_volume)
    diagnostics = {}

    if phase == GmcPhase.SUPERCRITICAL:
        if not t > 0:
            raise DomainError(f"supercritical normalization needs t > 0, got {t}")
        # log domain, the prefactor alone overflows for moderate t
        log_w = (
            _log_supercritical_prefactor(grid.d, gamma, t)
            + gamma * values
            - 0.5 * gamma ** 2 * t
            + log_vol
        )
        weights = np.exp(log_w)
    else:
        base = np.exp(gamma * values - 0.5 * gamma ** 2 * t + log_vol)
        if phase == GmcPhase.SUBCRITICAL:
            weights = base
        elif phase == GmcPhase.CRITICAL_SENETA_HEYDE:
            weights = np.sqrt(t) * base
        else:
            signed = (gamma * t - values) * base
            weights = np.clip(signed, 0.0, None)
            diagnostics["clipped_mass_fraction"] = clipped_mass_fraction(signed)

    return DiscreteMeasure(grid, weights, phase, float(gamma), t, diagnostics)


def clipped_mass_fraction(signed_weights):
    """Share of the absolute signed mass removed by clipping at zero"""
    signed_weights = np.asarray(signed_weights)
    total = np.abs(signed_weights).sum()
    if total == 0:
        return 0.0
    return float(-signed_weights[signed_weights < 0].sum() / total)


def lebesgue_measure(grid):
    """Lebesgue measure on the cells of ``grid``"""
    weights = np.full(grid.shape, grid.cell_volume)
    return DiscreteMeasure(grid, weights, None, 0.0, 0.0)


def measure_integral(mu, f):
    """Integral of ``f`` against ``mu``, with ``f`` evaluated at cell centers

    Args:
        mu (DiscreteMeasure): measure
        f (callable, float or array): function of (N, d) points, a constant or
            values on the grid

    Returns:
        float: sum over cells of f(center) times the cell weight
    """
    w = np.asarray(mu.cell_weights).ravel()
    if np.isscalar(f) and f == 0:
        return 0.0
    values = evaluate(f, mu.grid.points()) if callable(f) else evaluate(f, w[:, None])
    return float(np.dot(values, w))


def laplace_sample(mu, f):
    """exp(-mu(f)) for one measure sample"""
    return float(np.exp(-measure_integral(mu, f)))


def _region_mask(grid, region):
    if region is None:
        return np.ones(grid.shape, dtype=bool)
    if callable(region):
        mask = np.asarray(region(grid.points()), dtype=bool).reshape(grid.shape)
    else:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != grid.shape:
            raise DomainError(f"region mask has shape {mask.shape}, grid is {grid.shape}")
    return mask


def max_statistics(X, region=None):
    """Maximum of X_t over a region and its recentered value

    Args:
        X (FieldSample): sample of X_t
        region: boolean mask with the grid's shape, a predicate on (N, d)
            points, or None for the whole grid

    Returns:
        tuple: (sup, sup - m_t)
    """
    mask = _region_mask(X.grid, region)
    if not mask.any():
        raise DomainError("empty region")
    sup = float(np.max(np.asarray(X.values)[mask]))
    return sup, sup - recentering_m_b(X.grid.d, float(X.t))


def advance_supercritical(mu, W, s):
    """Supercritical measure at depth t + s from the measure at depth t

    Uses mu_{t+s}(dx) = e^{gamma (W(x) - sqrt(2d) s) + d s} ((t + s) / t)^{3 gamma / (2 sqrt(2d))}
    mu_t(dx), with W the field increment X_{t,t+s} on the same grid.

    Args:
        mu (DiscreteMeasure): supercritical measure at depth t
        W (FieldSample): field increment between the two depths
        s (float): depth increment

    Returns:
        DiscreteMeasure: measure at depth t + s
    """
    if mu.phase != GmcPhase.SUPERCRITICAL:
        raise ConfigurationError("advance_supercritical needs a supercritical measure")
    if W.grid != mu.grid:
        raise DomainError("the increment field lives on a different grid")
    if s < 0:
        raise DomainError(f"s must be nonnegative, got {s}")
    d, gamma, t = mu.grid.d, mu.gamma, mu.t
    gamma_c = critical_gamma(d)
    log_factor = (
        gamma * (np.asarray(W.values) - gamma_c * s)
        + d * s
        + 3.0 * gamma / (2.0 * gamma_c) * np.log((t + s) / t)
    )
    weights = np.asarray(mu.cell_weights) * np.exp(log_factor)
    return DiscreteMeasure(mu.grid, weights, mu.phase, gamma, t + s, dict(mu.diagnostics))


def log_total_mass(X, gamma):
    """log of the subcritically normalized total mass, safe for large gamma"""
    values = np.asarray(X.values, dtype=np.float64).ravel()
    t = float(X.t)
    return float(
        logsumexp(gamma * values) - 0.5 * gamma ** 2 * t + np.log(X.grid.cell_volume)
    )


def write_measure(mu, path, config=None, seed=None, wall_time=0.0):
    """Export a measure as CSV (index, coordinates, weight) plus summary sidecar"""
    grid = mu.grid
    cols = ["index"] + ["x", "y"][: grid.d] + ["weight"]
    table = np.column_stack(
        [np.arange(grid.size), grid.points(), np.asarray(mu.cell_weights).ravel()]
    )
    out = write_csv(path, table, cols)
    write_sidecar(out, config, seed, wall_time, summary=mu.summary())
    return out
