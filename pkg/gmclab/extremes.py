"""Shape fields around extremal points and the cluster ensembles built from them

The shape field of depth b lives on a grid of spacing 1/8 covering
B(0, e^b) in d=1. It is assembled as

    Upsilon_b(x) = -int_0^b (1 - K(e^{-s} x)) dB_s + Z_b(x) + g_b(x) - sqrt(2) a_b(x)

with B a Brownian path (free or pinned at time b), Z_b the pinned field of a
growing layer stack and g_b an optional auxiliary field.
"""
import time
from dataclasses import dataclass, field, replace
from functools import partial
from os.path import join
from typing import List, Optional

import joblib
import numpy as np
from gmclab.base import Direction, DomainError, EnsembleKind, ResourceError
from gmclab.bridge import theta_k
from gmclab.field import GridSpec, sample_layers, sample_Z
from gmclab.kernel import ScaleFunctions, recentering_m_b
from gmclab.logger import getLogger
from gmclab.util import McEstimate, evaluate, write_csv, write_json
from scipy.stats import norm

logger = getLogger(name=__name__)

SHAPE_SPACING = 1.0 / 8
MAX_B = 9
MAX_DELTA = 0.1
DEFAULT_DELTA = 0.1
MIN_ACCEPTANCE = 1e-5
# trials before the acceptance rate is judged
MIN_TRIALS_FOR_RATE = 100_000
GAMMA_C = np.sqrt(2.0)
ALPHA = np.sqrt(2.0 / np.pi)

_SHAPE_CACHE = {}


@dataclass
class _ShapePlan:
    grid: GridSpec
    b: int
    delta: float
    times: np.ndarray
    drift: np.ndarray
    integrand: list


def _shape_plan(kernel, b, delta):
    key = (kernel.key, b, round(delta, 9))
    if key in _SHAPE_CACHE:
        return _SHAPE_CACHE[key]
    grid = GridSpec.centered(1, SHAPE_SPACING, np.exp(b))
    x = grid.axis(0)
    r = np.abs(x)
    steps = int(round(b / delta))
    times = delta * np.arange(steps + 1)
    drift = GAMMA_C * ScaleFunctions(kernel).a_b_grid(r, b)
    # K(e^{-s} x) vanishes outside |x| < e^s
    integrand = []
    for s in times[:-1]:
        radius = np.exp(s)
        lo = int(np.searchsorted(x, -radius, side="right"))
        hi = int(np.searchsorted(x, radius, side="left"))
        integrand.append((slice(lo, hi), kernel.K(np.exp(-s) * r[lo:hi])))
    plan = _ShapePlan(grid, b, delta, times, drift, integrand)
    _SHAPE_CACHE[key] = plan
    return plan


def annulus_index(grid, b):
    """Annulus of every node: 0 for |x| < e, j for e^j <= |x| < e^{j+1}, -1 beyond e^b"""
    r = grid.radii()
    with np.errstate(divide="ignore"):
        j = np.floor(np.log(np.where(r > 0, r, 1.0))).astype(int)
    j = np.clip(j, 0, None)
    within = r <= np.exp(b) * (1 + 1e-12)
    return np.where(within, np.minimum(j, b - 1), -1)


@dataclass
class ShapeSample:
    """One shape field with the pieces it is assembled from

    Args:
        b (int): depth
        delta (float): scale step
        grid (GridSpec): grid of spacing 1/8 covering B(0, e^b)
        upsilon (np.ndarray): phi - drift
        phi (np.ndarray): integral_part + z_component (+ attached_g)
        drift (np.ndarray): sqrt(2d) a_b
        times (np.ndarray): times of the driving path
        driving_path (np.ndarray): Brownian path B at ``times``
        z_component (np.ndarray): pinned field Z_b
        integral_part (np.ndarray): -int (1 - K(e^{-s} x)) dB_s, left point rule
        endpoint (float): value B_b is pinned to, None for a free path
        attached_g (np.ndarray): auxiliary field, None when absent
        z_partial (np.ndarray): rows Z_j, j = 0..b, kept for diagnostics
        shift (float): location moved to the origin by recentering
        seed (dict): stream provenance
    """

    b: int
    delta: float
    grid: GridSpec
    upsilon: np.ndarray = field(repr=False)
    phi: Optional[np.ndarray] = field(default=None, repr=False)
    drift: Optional[np.ndarray] = field(default=None, repr=False)
    times: Optional[np.ndarray] = field(default=None, repr=False)
    driving_path: Optional[np.ndarray] = field(default=None, repr=False)
    z_component: Optional[np.ndarray] = field(default=None, repr=False)
    integral_part: Optional[np.ndarray] = field(default=None, repr=False)
    endpoint: Optional[float] = None
    attached_g: Optional[np.ndarray] = field(default=None, repr=False)
    z_partial: Optional[np.ndarray] = field(default=None, repr=False)
    shift: float = 0.0
    seed: Optional[dict] = None

    @property
    def within(self):
        return self.grid.radii() <= np.exp(self.b) * (1 + 1e-12)

    @property
    def origin_index(self):
        return self.grid.node_of(0.0)[0]

    def maximum(self):
        return float(np.max(self.upsilon[self.within]))

    def path_at(self, t):
        return float(np.interp(t, self.times, self.driving_path))

    def compact(self):
        """Copy keeping the field values and the driving path only"""
        return replace(
            self,
            phi=None,
            drift=None,
            z_component=None,
            integral_part=None,
            attached_g=None,
            z_partial=None,
        )


@dataclass
class ClusterEnsemble:
    """Conditioned shape fields with importance weights of mean 1"""

    members: List[ShapeSample] = field(repr=False)
    weights: np.ndarray = field(repr=False)
    lam: float
    kind: EnsembleKind
    b: int
    delta: float
    acceptance_rate: float = float("nan")
    trials: int = 0
    seed: Optional[dict] = None

    def __len__(self):
        return len(self.members)


@dataclass
class MaxDiagnostics:
    """Maximum, its location and the volume of the near-maximal set"""

    M: float
    D_lambda_volume: float
    argmax: float


def _check_depth(b, delta):
    if b > MAX_B:
        raise ResourceError(f"b={b} is beyond the supported depth {MAX_B}")
    if b < 1 or abs(b - round(b)) > 1e-9:
        raise DomainError(f"b must be a positive integer, got {b}")
    if not 0 < delta <= MAX_DELTA + 1e-12:
        raise DomainError(f"delta must be in (0, {MAX_DELTA}], got {delta}")
    return int(round(b))


def driving_path(b, delta, endpoint, stream):
    """Brownian path on [0, b] at step delta, pinned to ``endpoint`` if given"""
    steps = int(round(b / delta))
    g = stream.generator()
    path = np.zeros(steps + 1)
    path[1:] = np.cumsum(g.standard_normal(steps) * np.sqrt(delta))
    if endpoint is not None:
        times = delta * np.arange(steps + 1)
        path = path - times / b * (path[-1] - endpoint)
        path[-1] = endpoint
    return path


def sample_upsilon(
    kernel, b, stream, delta=DEFAULT_DELTA, endpoint=None, g=None, keep_components=False
):
    """Sample the shape field of depth ``b``

    Args:
        kernel (SeedKernel): seed kernel, d=1
        b (int): depth
        stream (RandomStream): stream, the path uses ``child(0)`` and the
            pinned field ``child(1)``
        delta (float): scale step, at most 0.1
        endpoint (float): pin B_b to this value (bridge from 0)
        g (callable): auxiliary field g_b on (N, 1) points
        keep_components (bool): keep the partial pinned fields Z_j used by
            :func:`control_variable`

    Returns:
        ShapeSample: sample
    """
    if kernel.d != 1:
        raise DomainError("shape fields are implemented in d=1")
    b = _check_depth(b, delta)
    plan = _shape_plan(kernel, b, delta)
    path = driving_path(b, delta, endpoint, stream.child(0))
    stack = sample_layers(kernel, plan.grid, b, delta, Direction.GROWING, stream.child(1))
    z = sample_Z(stack, b).values

    increments = np.diff(path)
    integral = np.full(plan.grid.n, -path[-1])
    for (box, weights), dB in zip(plan.integrand, increments):
        integral[box] += weights * dB

    phi = integral + z
    g_values = None
    if g is not None:
        g_values = evaluate(g, plan.grid.points())
        phi = phi + g_values
    upsilon = phi - plan.drift

    z_partial = None
    if keep_components:
        z_partial = np.stack([sample_Z(stack, j).values for j in range(b)] + [z])
    return ShapeSample(
        b,
        delta,
        plan.grid,
        upsilon,
        phi,
        plan.drift,
        plan.times,
        path,
        z,
        integral,
        endpoint,
        g_values,
        z_partial,
        0.0,
        stream.provenance(),
    )


def annuli_suprema(s):
    """Per annulus suprema of the shape field and of its components

    Returns:
        dict: arrays over j = 0..b-1 of ``upsilon`` (sup of the field),
        ``minus_B`` (-B_j), ``gap`` (|sup upsilon + B_j|), ``z_j`` (sup of Z_j)
        and ``z_jb`` (sup of Z_b - Z_j), the last two nan without components
    """
    idx = annulus_index(s.grid, s.b)
    out = {k: np.full(s.b, np.nan) for k in ("upsilon", "minus_B", "gap", "z_j", "z_jb")}
    for j in range(s.b):
        mask = idx == j
        out["upsilon"][j] = np.max(s.upsilon[mask])
        out["minus_B"][j] = -s.path_at(j)
        if s.z_partial is not None:
            out["z_j"][j] = np.max(s.z_partial[j][mask])
            out["z_jb"][j] = np.max((s.z_partial[s.b] - s.z_partial[j])[mask])
    out["gap"] = np.abs(out["upsilon"] - out["minus_B"])
    out["j"] = np.arange(s.b)
    return out


def control_variable(s):
    """Smallest k in [1, b-1] for which the four control conditions hold, else b

    The conditions bound the oscillation of B over unit intervals, the
    recentered annulus suprema of Z_j, the remainder fields Z_b - Z_j over
    inner annuli and the auxiliary field, by multiples of
    Theta_k(j) = log(1 + max(k, j))^2.
    """
    if s.z_partial is None:
        raise DomainError("control variable needs a sample with components")
    b = s.b
    idx = annulus_index(s.grid, b)
    masks = [idx == j for j in range(b)]
    per_unit = int(round(1.0 / s.delta))
    osc = np.array(
        [np.ptp(s.driving_path[j * per_unit : (j + 1) * per_unit + 1]) for j in range(b)]
    )
    z_dev = np.array(
        [
            abs(np.max(s.z_partial[j][masks[j]]) - recentering_m_b(1, j)) if j >= 1 else 0.0
            for j in range(b)
        ]
    )
    remainder = np.full((b, b), -np.inf)
    for j in range(b):
        diff = s.z_partial[b] - s.z_partial[j]
        for l in range(j + 1):
            remainder[j, l] = np.max(diff[masks[l]])
    g_sup = np.zeros(b)
    if s.attached_g is not None:
        g_sup = np.array([np.max(np.abs(s.attached_g[m])) for m in masks])

    for k in range(1, b):
        theta = np.array([theta_k(k, j) for j in range(b)])
        if np.any(osc > theta):
            continue
        if np.any(z_dev[1:] > theta[1:]):
            continue
        decay = np.exp(-0.5 * (np.arange(b)[:, None] - np.arange(b)[None, :]))
        bound = decay * theta[:, None]
        if np.any(np.tril(remainder > bound)):
            continue
        if np.any(g_sup > np.exp(-0.5 * (b - np.arange(b))) * theta):
            continue
        return k
    return b


def reduction_bound(k, j, C=4.0):
    """R_k(j) = C (1 + Theta_k(j))"""
    return C * (1.0 + theta_k(k, j))


def _default_mapper(fn, indices):
    return [fn(i) for i in indices]


def _accepting_trial(i, kernel, lam, b, delta, endpoint, stream, keep_components):
    s = sample_upsilon(
        kernel, b, stream.child(i), delta, endpoint, keep_components=keep_components
    )
    if s.maximum() > lam:
        return None
    return s if keep_components else s.compact()


def sample_tilde_upsilon(
    kernel,
    lam,
    b,
    n_accepted,
    stream,
    delta=DEFAULT_DELTA,
    endpoint=None,
    mapper=None,
    batch_size=None,
    keep_components=False,
):
    """Rejection sample shape fields whose maximum over B(0, e^b) is at most lam

    Trial ``i`` uses ``stream.child(i)``; the ensemble holds the first
    ``n_accepted`` accepted trials in trial order, whatever the batching.

    Args:
        mapper (callable): ``mapper(fn, indices)`` returning ``[fn(i) ...]``,
            e.g. a process pool from :mod:`gmclab.harness`

    Returns:
        ClusterEnsemble: ensemble of kind TILDE_UPSILON with unit weights

    Raises:
        ResourceError: if the acceptance rate falls below 1e-5
    """
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    b = _check_depth(b, delta)
    mapper = _default_mapper if mapper is None else mapper
    batch_size = batch_size or max(64, 4 * n_accepted)
    fn = partial(
        _accepting_trial,
        kernel=kernel,
        lam=lam,
        b=b,
        delta=delta,
        endpoint=endpoint,
        stream=stream,
        keep_components=keep_components,
    )
    start_time = time.time()
    members = []
    trials = 0
    while len(members) < n_accepted:
        indices = range(trials, trials + batch_size)
        for i, result in zip(indices, mapper(fn, indices)):
            if result is None:
                continue
            members.append(result)
            if len(members) == n_accepted:
                trials = i + 1
                break
        else:
            trials += batch_size
        rate = len(members) / trials
        if trials >= MIN_TRIALS_FOR_RATE and rate < MIN_ACCEPTANCE:
            raise ResourceError(
                f"acceptance rate {rate:.2e} after {trials} trials is below {MIN_ACCEPTANCE}"
            )
    rate = n_accepted / trials
    logger.info(
        "lambda=%g b=%d: accepted %d of %d trials (rate %.4f) in %.1f s",
        lam,
        b,
        n_accepted,
        trials,
        rate,
        time.time() - start_time,
    )
    return ClusterEnsemble(
        members,
        np.ones(n_accepted),
        float(lam),
        EnsembleKind.TILDE_UPSILON,
        b,
        delta,
        rate,
        trials,
        stream.provenance(),
    )


def _max_trial(i, kernel, b, delta, endpoint, stream):
    s = sample_upsilon(kernel, b, stream.child(i), delta, endpoint)
    return s.maximum()


def estimate_cluster_probability(
    kernel, lam, b, n_trials, stream, delta=DEFAULT_DELTA, endpoint=None, mapper=None
):
    """P(max of the shape field over B(0, e^b) <= lam) from ``n_trials`` trials"""
    b = _check_depth(b, delta)
    mapper = _default_mapper if mapper is None else mapper
    fn = partial(
        _max_trial, kernel=kernel, b=b, delta=delta, endpoint=endpoint, stream=stream
    )
    maxima = np.asarray(mapper(fn, range(n_trials)))
    return McEstimate.from_samples(maxima <= lam, seed=stream.base_seed)


def bridge_cluster_ratio(kernel, lam, b, u, n, stream, delta=DEFAULT_DELTA, mapper=None):
    """(b / u) P(max <= lam) for shape fields driven by a bridge from 0 to u"""
    _check_positive_u(u)
    p = estimate_cluster_probability(kernel, lam, b, n, stream, delta, u, mapper)
    return McEstimate(p.mean * b / u, p.stderr * b / u, p.n, p.seed)


def _check_positive_u(u):
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")


def _c_star_trial(i, kernel, lam, k, delta, stream):
    child = stream.child(i)
    path = driving_path(k, delta, None, child.child(0))
    end = path[-1]
    if not k ** (1.0 / 6) <= end <= k ** (5.0 / 6):
        return 0.0
    s = sample_upsilon(kernel, k, child, delta)
    return end if s.maximum() <= lam else 0.0


def estimate_c_star(kernel, lam, k, n, stream, delta=DEFAULT_DELTA, mapper=None):
    """E[B_k 1{B_k in [k^{1/6}, k^{5/6}]} 1{max of Upsilon_k <= lam}]

    The field is only sampled for paths ending in the window.
    """
    k = _check_depth(k, delta)
    mapper = _default_mapper if mapper is None else mapper
    fn = partial(_c_star_trial, kernel=kernel, lam=lam, k=k, delta=delta, stream=stream)
    return McEstimate.from_samples(mapper(fn, range(n)), seed=stream.base_seed)


def c_star_oracle(k):
    """E[B_k 1{B_k in [k^{1/6}, k^{5/6}]}], the value without the max indicator"""
    sd = np.sqrt(k)
    return float(sd * (norm.pdf(k ** (1.0 / 6) / sd) - norm.pdf(k ** (5.0 / 6) / sd)))


def estimate_c_star_from_cluster(p_hat, b):
    """c_star from the cluster probability, sqrt(b) P(max <= lam) / alpha"""
    scale = np.sqrt(b) / ALPHA
    return McEstimate(p_hat.mean * scale, p_hat.stderr * scale, p_hat.n, p_hat.seed)


def _masked_values(s):
    values = np.asarray(s.upsilon, dtype=np.float64)
    return np.where(s.within, values, -np.inf)


def _near_max(values, lam):
    i_star = int(np.argmax(values))
    top = values[i_star]
    near = np.flatnonzero(values >= top - lam)
    return i_star, top, near


def _shift(values, offset, fill):
    """values(. + offset) on the same grid"""
    out = np.full_like(values, fill)
    n = len(values)
    if offset >= 0:
        out[: n - offset] = values[offset:]
    else:
        out[-offset:] = values[: n + offset]
    return out


def sample_psi(
    kernel, lam, b, n, stream, delta=DEFAULT_DELTA, mapper=None, tilde=None
):
    """Canonical shape fields: conditioned fields moved to their argmax, with tilt weights

    Each conditioned field is shifted so its maximum (ties to the lowest
    index) sits at the origin with value 0; its weight is
    1 / int exp(sqrt(2) (Upsilon(x) - Upsilon(x*))) 1{Upsilon(x) >= Upsilon(x*) - lam} dx,
    normalized to mean 1 over the ensemble.

    Args:
        tilde (ClusterEnsemble): conditioned ensemble to reuse; sampled
            with :func:`sample_tilde_upsilon` when omitted

    Returns:
        ClusterEnsemble: ensemble of kind PSI
    """
    if tilde is None:
        tilde = sample_tilde_upsilon(kernel, lam, b, n, stream, delta, mapper=mapper)
    members, raw = [], []
    for s in tilde.members:
        values = _masked_values(s)
        i_star, top, near = _near_max(values, lam)
        volume = s.grid.spacing * np.sum(np.exp(GAMMA_C * (values[near] - top)))
        raw.append(1.0 / volume)
        offset = i_star - s.origin_index
        psi = _shift(values - top, offset, -np.inf)
        members.append(
            replace(
                s.compact(),
                upsilon=psi,
                shift=float(s.grid.axis(0)[i_star]),
            )
        )
    raw = np.asarray(raw)
    return ClusterEnsemble(
        members,
        raw / raw.mean(),
        tilde.lam,
        EnsembleKind.PSI,
        tilde.b,
        tilde.delta,
        tilde.acceptance_rate,
        tilde.trials,
        tilde.seed,
    )


def sup_indicator(level=0.0):
    """Functional 1{sup of the window <= level} for :func:`resampling_check`"""

    def _f(windows):
        return (np.max(windows, axis=1) <= level).astype(np.float64)

    return _f


def clipped_value(offset_nodes, bound):
    """Functional clip(value at ``offset_nodes`` from the center, -bound, bound)"""

    def _f(windows):
        center = windows.shape[1] // 2
        return np.clip(windows[:, center + offset_nodes], -bound, bound)

    return _f


def _windows(values, centers, radius_nodes):
    padded = np.pad(values, radius_nodes, constant_values=-np.inf)
    view = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius_nodes + 1)
    win = view[centers]
    return win - values[centers][:, None]


def resampling_check(ensemble, F, radius=np.e):
    """Both sides of the resampling identity on a conditioned ensemble

    The left side averages F over the conditioned fields; the right side
    averages, for every field, F of the field moved to x with x drawn from the
    near-maximal set with density proportional to exp(sqrt(2) Upsilon(x)).

    Args:
        ensemble (ClusterEnsemble): conditioned ensemble (TILDE_UPSILON)
        F (callable): maps (m, window) arrays of recentered values on
            [x - radius, x + radius] to m values
        radius (float): window radius

    Returns:
        tuple: (lhs, rhs) McEstimate
    """
    lhs, rhs = [], []
    for s in ensemble.members:
        values = _masked_values(s)
        r = int(round(radius / s.grid.spacing))
        lhs.append(F(_windows(values, np.array([s.origin_index]), r))[0])
        _, top, near = _near_max(values, ensemble.lam)
        w = np.exp(GAMMA_C * (values[near] - top))
        rhs.append(float(np.dot(w, F(_windows(values, near, r))) / w.sum()))
    seed = None if ensemble.seed is None else ensemble.seed.get("base_seed")
    return (
        McEstimate.from_samples(lhs, seed=seed),
        McEstimate.from_samples(rhs, seed=seed),
    )


def psi_integral(s, gamma, lam=None):
    """int exp(gamma Psi) dx, restricted to {Psi >= -lam} when lam is given"""
    values = np.asarray(s.upsilon, dtype=np.float64)
    keep = np.isfinite(values)
    if lam is not None:
        keep &= values >= -lam
    return float(s.grid.spacing * np.sum(np.exp(gamma * values[keep])))


def _require_psi(ensemble):
    if ensemble.kind != EnsembleKind.PSI:
        raise DomainError("a PSI ensemble is required")


def _seed_of(ensemble):
    return None if ensemble.seed is None else ensemble.seed.get("base_seed")


def estimate_a_star(lam, gamma, psi_ensemble, c_star):
    """alpha c_star / (gamma E[int exp(sqrt(2) Psi) 1{Psi >= -lam}]), alpha = sqrt(2/pi)

    Args:
        c_star (McEstimate or float): c_star estimate

    Returns:
        McEstimate: estimate with the standard errors of both factors propagated
    """
    _require_psi(psi_ensemble)
    integrals = [psi_integral(s, GAMMA_C, lam) for s in psi_ensemble.members]
    denom = McEstimate.from_samples(integrals, weights=psi_ensemble.weights)
    if isinstance(c_star, McEstimate):
        c, c_se = c_star.mean, c_star.stderr
    else:
        c, c_se = float(c_star), 0.0
    mean = ALPHA * c / (gamma * denom.mean)
    rel = np.hypot(c_se / c if c else 0.0, denom.stderr / denom.mean)
    return McEstimate(mean, abs(mean) * rel, denom.n, _seed_of(psi_ensemble))


def estimate_T_gamma(gamma, theta, psi_ensemble, w_fields=None):
    """E[(sum_i theta_i int exp(gamma (W_i + Psi)))^{sqrt(2)/gamma}] over the tilted ensemble

    Args:
        gamma (float): inverse temperature
        theta (list): nonnegative coefficients
        psi_ensemble (ClusterEnsemble): PSI ensemble
        w_fields (list): per member, (len(theta), n) values of the fields W_i
            on the member's grid; zero fields when omitted

    Returns:
        McEstimate: estimate
    """
    _require_psi(psi_ensemble)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise DomainError("theta must be nonnegative")
    p = GAMMA_C / gamma
    values = []
    for m, s in enumerate(psi_ensemble.members):
        psi = np.asarray(s.upsilon, dtype=np.float64)
        keep = np.isfinite(psi)
        if w_fields is None:
            total = theta.sum() * psi_integral(s, gamma)
        else:
            w = np.asarray(w_fields[m], dtype=np.float64).reshape(len(theta), -1)
            ints = s.grid.spacing * np.sum(np.exp(gamma * (w[:, keep] + psi[keep])), axis=1)
            total = float(np.dot(theta, ints))
        values.append(total ** p)
    return McEstimate.from_samples(
        values, weights=psi_ensemble.weights, seed=_seed_of(psi_ensemble)
    )


def supercritical_scale_constant(gamma, a_star, psi_ensemble):
    """a_star^{gamma/sqrt(2)} E[(int exp(gamma Psi))^{sqrt(2)/gamma}]^{gamma/sqrt(2)}"""
    moment = estimate_T_gamma(gamma, [1.0], psi_ensemble)
    a = a_star.mean if isinstance(a_star, McEstimate) else float(a_star)
    q = gamma / GAMMA_C
    mean = a ** q * moment.mean ** q
    stderr = q * a ** q * moment.mean ** (q - 1) * moment.stderr
    return McEstimate(mean, stderr, moment.n, moment.seed)


def near_max_diagnostics(sample, lam, region=None):
    """Maximum, argmax and volume of the set within ``lam`` of the maximum

    Args:
        sample: ShapeSample (restricted to B(0, e^b)) or FieldSample
        lam (float): level below the maximum
        region (np.ndarray): optional boolean mask

    Returns:
        MaxDiagnostics: diagnostics
    """
    grid = sample.grid
    if isinstance(sample, ShapeSample):
        values = _masked_values(sample).reshape(grid.shape)
    else:
        values = np.asarray(sample.values, dtype=np.float64)
    if region is not None:
        values = np.where(np.asarray(region, dtype=bool), values, -np.inf)
    flat = values.ravel()
    i_star = int(np.argmax(flat))
    top = float(flat[i_star])
    count = int(np.sum(flat >= top - lam))
    point = grid.points()[i_star]
    argmax = float(point[0]) if grid.d == 1 else point
    return MaxDiagnostics(top, count * grid.cell_volume, argmax)


def excursion_fraction(ensemble, k):
    """Fraction of members exceeding -(log j)^2 on some annulus j in [k, b - 1]"""
    hits = 0
    for s in ensemble.members:
        sup = annuli_suprema(s)["upsilon"]
        j = np.arange(k, s.b)
        hits += bool(np.any(sup[j] >= -np.log(np.maximum(j, 1)) ** 2))
    return hits / len(ensemble)


def write_ensemble(ensemble, out_dir, config=None):
    """Export members as CSV (x, value, weight) and a JSON manifest"""
    files = []
    for i, (s, w) in enumerate(zip(ensemble.members, ensemble.weights)):
        values = np.asarray(s.upsilon)
        keep = np.isfinite(values) & s.within
        x = s.grid.axis(0)[keep]
        table = np.column_stack([x, values[keep], np.full(len(x), w)])
        path = write_csv(join(out_dir, f"member_{i:05d}.csv"), table, ["x", "value", "weight"])
        files.append(path)
    manifest = {
        "kind": ensemble.kind.value,
        "lambda": ensemble.lam,
        "b": ensemble.b,
        "delta": ensemble.delta,
        "acceptance_rate": ensemble.acceptance_rate,
        "trials": ensemble.trials,
        "n": len(ensemble),
        "seed": ensemble.seed,
        "member_seeds": [s.seed for s in ensemble.members],
        "members": files,
        "config": config,
    }
    write_json(join(out_dir, "manifest.json"), manifest)
    return files


def save_ensemble(ensemble, path):
    joblib.dump(ensemble, path, compress=3)
    return path


def load_ensemble(path):
    return joblib.load(path)
