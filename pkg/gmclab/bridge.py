"""Brownian bridges above curves: exact laws and Monte Carlo checkers

All bridges run from ``x`` at time 0 to ``u`` at time ``b``. Paths are
sampled exactly at the grid times by pinning a free Brownian path.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from gmclab.base import CurveKind, DomainError
from gmclab.logger import getLogger
from gmclab.util import McEstimate, write_csv, write_sidecar
from scipy import integrate

logger = getLogger(name=__name__)

# paths simulated per chunk
CHUNK = 1024
# largest grid step relative to the horizon
MAX_STEP_FRACTION = 0.01


@dataclass(frozen=True)
class Curve:
    """Barrier curve on [0, inf)

    Args:
        kind (CurveKind): family
        a (float): scale of the zeta family, value of the constant curve
        k (float): shift of the zeta and theta families
        table (tuple): (times, values) of a tabulated curve
    """

    kind: CurveKind
    a: float = 0.0
    k: float = 0.0
    table: Optional[Tuple[tuple, tuple]] = field(default=None, repr=False)

    @classmethod
    def constant(cls, value):
        return cls(CurveKind.CONSTANT, a=float(value))

    @classmethod
    def zeta(cls, a, k):
        return cls(CurveKind.ZETA, a=float(a), k=float(k))

    @classmethod
    def theta(cls, k):
        return cls(CurveKind.THETA, k=float(k))

    @classmethod
    def from_table(cls, times, values):
        times = tuple(float(t) for t in times)
        values = tuple(float(v) for v in values)
        if len(times) != len(values) or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise DomainError("table needs at least two strictly increasing times")
        return cls(CurveKind.TABLE, table=(times, values))

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == CurveKind.CONSTANT:
            return np.full_like(s, self.a)
        if self.kind == CurveKind.ZETA:
            return self.a * (1.0 + np.log1p(self.k + s) ** 2)
        if self.kind == CurveKind.THETA:
            return np.log1p(np.maximum(self.k, s)) ** 2
        times, values = self.table
        return np.interp(s, times, values)


def theta_k(k, j):
    """[log(1 + max(k, j))]^2"""
    return float(np.log1p(max(k, j)) ** 2)


@dataclass
class BridgePath:
    """Bridge values at the grid times ``i * delta``"""

    x: float
    u: float
    b: float
    delta: float
    values: np.ndarray = field(repr=False)

    @property
    def times(self):
        return np.linspace(0.0, self.b, len(self.values))


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value}")


def p_stay_positive(x, u, b):
    """P(bridge from x to u in time b stays positive) = 1 - e^{-2xu/b}"""
    _check_positive(x=x, u=u, b=b)
    return float(-np.expm1(-2.0 * x * u / b))


def stay_positive_bounds(x, u, b):
    """(2xu/b (1 - xu/b), 2xu/b), bracketing :func:`p_stay_positive`"""
    _check_positive(x=x, u=u, b=b)
    r = 2.0 * x * u / b
    return r * (1.0 - 0.5 * r), r


def first_passage_density(x, u, b, s):
    """Density in s of the first hitting time of 0, on the event it happens

    Integrates with :func:`p_stay_positive` to one over (0, b).
    """
    _check_positive(x=x, u=u, b=b)
    s = np.asarray(s, dtype=np.float64)
    if np.any((s <= 0) | (s >= b)):
        raise DomainError(f"s must lie in (0, {b})")
    expo = -(((b - s) * x + s * u) ** 2) / (2.0 * b * s * (b - s))
    out = b * x * np.exp(expo) / (s ** 1.5 * np.sqrt(2.0 * np.pi * b * (b - s)))
    return float(out) if out.ndim == 0 else out


def min_argmin_density(u, b, s, z):
    """Joint density of (argmin, min) of a bridge from 0 to u in time b"""
    _check_positive(u=u, b=b)
    s = np.asarray(s, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any((s <= 0) | (s >= b)):
        raise DomainError(f"s must lie in (0, {b})")
    if np.any(z >= 0):
        raise DomainError("z must be negative")
    expo = -((b * z - u * s) ** 2) / (2.0 * b * s * (b - s))
    out = (
        np.sqrt(2.0 / np.pi)
        * np.sqrt(b)
        * (-z)
        * (u - z)
        * np.exp(expo)
        / (s * (b - s)) ** 1.5
    )
    return float(out) if out.ndim == 0 else out


def first_passage_tail_bound(x, s):
    """Upper bound 2x^2/s + 8x/s^{1/4} on P(tau_0 > s) for a free path started at x"""
    _check_positive(x=x, s=s)
    return float(2.0 * x ** 2 / s + 8.0 * x / s ** 0.25)


def _tail_integral(f, lo):
    value, _ = integrate.quad(f, lo, np.inf, limit=200)
    return value


def rho_curve(curve, x):
    """zeta(x^4) + 2x^2 int_{x^4}^inf zeta/s^2 + 2x int_{x^4}^inf zeta/s^{5/4}"""
    _check_positive(x=x)
    lo = x ** 4
    return float(
        curve(lo)
        + 2.0 * x ** 2 * _tail_integral(lambda s: float(curve(s)) / s ** 2, lo)
        + 2.0 * x * _tail_integral(lambda s: float(curve(s)) / s ** 1.25, lo)
    )


def rho_tilde_curve(curve, x):
    """rho(x) + 2 zeta(x^2)^2 / x + int_{x^2}^inf zeta^2 / s^{3/2}"""
    _check_positive(x=x)
    lo = x ** 2
    return float(
        rho_curve(curve, x)
        + 2.0 * float(curve(lo)) ** 2 / x
        + _tail_integral(lambda s: float(curve(s)) ** 2 / s ** 1.5, lo)
    )


def curve_avoidance_lower_bound(curve, x, u, b):
    """Lower bound (1 - delta) 2xu/b on P(bridge stays above zeta)"""
    _check_positive(x=x, u=u, b=b)
    delta = 2.0 * (x * u / (2.0 * b) + float(curve(b)) / u + rho_curve(curve, x) / x)
    return max(0.0, (1.0 - delta) * 2.0 * x * u / b)


def curve_avoidance_upper_bound(curve, x, u, b):
    """Upper bound (1 + delta) 2xu/b on P(bridge stays above -zeta)"""
    _check_positive(x=x, u=u, b=b)
    zb = float(curve(b))
    delta = 4.0 * (x / u + 4.0 * zb ** 2 / (x * u) + 4.0 * rho_tilde_curve(curve, x) / x)
    return min(1.0, (1.0 + delta) * 2.0 * x * u / b)


def _n_steps(b, delta):
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return max(1, int(np.ceil(b / delta - 1e-9)))


def sample_bridges(x, u, b, delta, n, stream):
    """(n, steps + 1) array of bridges at times ``np.linspace(0, b, steps + 1)``"""
    _check_positive(b=b)
    steps = _n_steps(b, delta)
    h = b / steps
    g = stream.generator()
    free = np.zeros((n, steps + 1))
    free[:, 1:] = np.cumsum(g.standard_normal((n, steps)) * np.sqrt(h), axis=1)
    times = np.linspace(0.0, b, steps + 1)
    paths = x + free - (times / b)[None, :] * (free[:, -1:] + x - u)
    paths[:, 0] = x
    paths[:, -1] = u
    return times, paths


def sample_bridge(x, u, b, delta, stream):
    """One exact bridge at the grid times

    Raises:
        DomainError: if the step exceeds ``b / 100``
    """
    if delta > MAX_STEP_FRACTION * b + 1e-12:
        raise DomainError(f"delta={delta} exceeds {MAX_STEP_FRACTION} b")
    _, paths = sample_bridges(x, u, b, delta, 1, stream)
    return BridgePath(float(x), float(u), float(b), b / _n_steps(b, delta), paths[0])


def _crossing_survival(d0, d1, h):
    """P(no crossing inside a segment) for bridge gaps d0, d1 above the barrier"""
    prod = np.clip(d0, 0.0, None) * np.clip(d1, 0.0, None)
    return -np.expm1(-2.0 * prod / h)


def _chunks(n):
    for i, start in enumerate(range(0, n, CHUNK)):
        yield i, min(CHUNK, n - start)


def mc_stay_above_curve(
    x, u, b, curve, sign, n, stream, delta=None, t_min=0.0, bridge_correction=False
):
    """Probability that a bridge stays above sign * curve at the grid times

    Args:
        x (float): start
        u (float): end
        b (float): horizon
        curve (Curve): barrier curve
        sign (int): -1 for the barrier -curve, +1 for +curve
        n (int): number of paths
        stream (RandomStream): stream, chunk ``i`` uses ``stream.child(i)``
        delta (float): grid step, ``b / 100`` by default
        t_min (float): barrier is checked from this time on
        bridge_correction (bool): weight every path by the exact probability
            that it does not cross between grid times (exact for constant
            curves)

    Returns:
        McEstimate: estimate
    """
    if sign not in (-1, 1):
        raise DomainError(f"sign must be -1 or +1, got {sign}")
    delta = MAX_STEP_FRACTION * b if delta is None else delta
    values = []
    for i, size in _chunks(n):
        times, paths = sample_bridges(x, u, b, delta, size, stream.child(i))
        gaps = paths - sign * curve(times)[None, :]
        active = times >= t_min - 1e-12
        ok = np.all(gaps[:, active] > 0, axis=1).astype(np.float64)
        if bridge_correction:
            seg = active[:-1] & active[1:]
            h = times[1] - times[0]
            surv = _crossing_survival(gaps[:, :-1][:, seg], gaps[:, 1:][:, seg], h)
            ok *= np.prod(surv, axis=1)
        values.append(ok)
    return McEstimate.from_samples(np.concatenate(values), seed=stream.base_seed)


def sample_first_passage(x, u, b, delta, n, stream):
    """First hitting times of 0 of bridges from x > 0 to u > 0

    A crossing inside a segment is detected with its exact bridge probability
    and dated at the segment midpoint.

    Returns:
        np.ndarray: (n,) hitting times, ``nan`` for paths staying positive
    """
    _check_positive(x=x, u=u, b=b)
    out = []
    for i, size in _chunks(n):
        times, paths = sample_bridges(x, u, b, delta, size, stream.child(i))
        h = times[1] - times[0]
        g = stream.child(i, 1).generator()
        crossed = g.random((size, len(times) - 1)) >= _crossing_survival(
            paths[:, :-1], paths[:, 1:], h
        )
        hit = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        tau = np.where(hit, times[first] + 0.5 * h, np.nan)
        out.append(tau)
    return np.concatenate(out)


def sample_bridge_extrema(u, b, delta, n, stream):
    """(argmin, min) of bridges from 0 to u, using the exact segment minima

    The minimum of a bridge from a to c over a segment of length h is
    (a + c - sqrt((a - c)^2 - 2 h log U)) / 2. The argmin is dated at the
    midpoint of the minimizing segment.
    """
    _check_positive(u=u, b=b)
    argmins, mins = [], []
    for i, size in _chunks(n):
        times, paths = sample_bridges(0.0, u, b, delta, size, stream.child(i))
        h = times[1] - times[0]
        g = stream.child(i, 1).generator()
        a, c = paths[:, :-1], paths[:, 1:]
        log_u = np.log1p(-g.random(a.shape))
        seg_min = 0.5 * (a + c - np.sqrt((a - c) ** 2 - 2.0 * h * log_u))
        j = np.argmin(seg_min, axis=1)
        mins.append(seg_min[np.arange(size), j])
        argmins.append(times[j] + 0.5 * h)
    return np.concatenate(argmins), np.concatenate(mins)


def first_passage_cdf(x, u, b, n_grid=4001):
    """CDF of the hitting time conditioned on hitting, as a callable"""
    s = np.linspace(0.0, b, n_grid)
    dens = np.zeros_like(s)
    dens[1:-1] = first_passage_density(x, u, b, s[1:-1])
    cum = integrate.cumulative_trapezoid(dens, s, initial=0.0)
    cum /= cum[-1]

    def _cdf(t):
        return np.interp(t, s, cum)

    return _cdf


def min_argmin_bin_probabilities(u, b, s_edges, z_edges):
    """Probabilities of (argmin, min) bins under :func:`min_argmin_density`

    Returns:
        np.ndarray: (len(s_edges) - 1, len(z_edges) - 1) bin probabilities
    """
    out = np.zeros((len(s_edges) - 1, len(z_edges) - 1))
    for i in range(len(s_edges) - 1):
        for j in range(len(z_edges) - 1):
            value, _ = integrate.dblquad(
                lambda z, s: min_argmin_density(u, b, s, z),
                s_edges[i],
                s_edges[i + 1],
                z_edges[j],
                min(z_edges[j + 1], -1e-300),
                epsabs=1e-10,
            )
            out[i, j] = value
    return out


def entropic_repulsion_check(a, k_list, b, u, n, stream):
    """Scaled probability of staying above -zeta but dipping below +zeta after k

    For every k the bridge from 0 to u in time b is sampled at integer times,
    with zeta = zeta_{a,k}; the event is {B_j > -zeta(j) for 1 <= j < b} and
    {B_j < zeta(j) for some k <= j < b}.

    Returns:
        list: one dict per k with the probability, its standard error and the
        values scaled by b / u
    """
    if np.any(np.diff(k_list) <= 0):
        raise DomainError("k_list must be increasing")
    rows = []
    for idx, k in enumerate(k_list):
        curve = Curve.zeta(a, k)
        values = []
        for i, size in _chunks(n):
            times, paths = sample_bridges(0.0, u, b, 1.0, size, stream.child(idx, i))
            inner = paths[:, 1:-1]
            z = curve(times[1:-1])[None, :]
            above = np.all(inner > -z, axis=1)
            window = times[1:-1] >= k
            dip = np.any(inner[:, window] < z[:, window], axis=1)
            values.append((above & dip).astype(np.float64))
        est = McEstimate.from_samples(np.concatenate(values), seed=stream.base_seed)
        rows.append(
            {
                "k": int(k),
                "probability": est.mean,
                "stderr": est.stderr,
                "scaled": est.mean * b / u,
                "scaled_stderr": est.stderr * b / u,
            }
        )
    return rows


def scaled_decreasing(rows):
    """Whether the scaled probabilities of :func:`entropic_repulsion_check` strictly decrease in k

    Returns:
        tuple: (verdict, scaled values, two joint standard errors of each
        consecutive difference, reported alongside the verdict)
    """
    scaled = [float(r["scaled"]) for r in rows]
    bands = [
        2.0 * float(np.hypot(r0["scaled_stderr"], r1["scaled_stderr"]))
        for r0, r1 in zip(rows[:-1], rows[1:])
    ]
    ok = all(s1 < s0 for s0, s1 in zip(scaled[:-1], scaled[1:]))
    return ok, scaled, bands


def transfer_check(x, u, b, curve, n, stream, substeps=16):
    """Barrier event at integer times against a fine-grid proxy of continuous time

    Both estimates use the same paths. The fine grid applies the exact
    between-node crossing correction.

    Returns:
        tuple: (discrete-time McEstimate, continuous-time McEstimate)
    """
    steps = int(round(b))
    if abs(steps - b) > 1e-9:
        raise DomainError(f"b must be an integer, got {b}")
    discrete, continuous = [], []
    for i, size in _chunks(n):
        times, paths = sample_bridges(x, u, b, 1.0 / substeps, size, stream.child(i))
        gaps = paths - (-curve(times))[None, :]
        on_integers = gaps[:, ::substeps]
        discrete.append(np.all(on_integers > 0, axis=1).astype(np.float64))
        h = times[1] - times[0]
        surv = np.prod(_crossing_survival(gaps[:, :-1], gaps[:, 1:], h), axis=1)
        continuous.append(np.all(gaps > 0, axis=1) * surv)
    return (
        McEstimate.from_samples(np.concatenate(discrete), seed=stream.base_seed),
        McEstimate.from_samples(np.concatenate(continuous), seed=stream.base_seed),
    )


def write_bridge_table(rows, path, config=None, seed=None, wall_time=0.0):
    """Export a table of dicts sharing the same numeric keys as CSV"""
    if len(rows) == 0:
        raise DomainError("empty table")
    cols = list(rows[0].keys())
    table = np.array([[row[c] for c in cols] for row in rows], dtype=np.float64)
    out = write_csv(path, table, cols)
    write_sidecar(out, config, seed, wall_time)
    return out
