"""Layered sampler for star-scale invariant Gaussian fields.

The field is a sum of independent stationary layers, one per scale window
[s, s + delta]. Each layer is sampled exactly on its own lattice by circulant
embedding of its covariance, with a lattice spacing proportional to the
layer's correlation length (``RHO`` nodes per correlation length). Layers
sharing a lattice spacing form a level. Levels are summed on their lattice
and evaluated on the requested grid by cubic interpolation.

Every lattice has the origin as a node, so the per-layer values at 0 form a
discretized standard Brownian motion (the origin path).
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from gmclab.base import ConfigurationError, Direction, DomainError, SamplerError
from gmclab.base import StatisticsError
from gmclab.kernel import SeedKernel, layer_covariance_grid
from gmclab.logger import getLogger
from gmclab.util import RandomStream, is_pow2, next_pow2, write_csv, write_sidecar
from scipy import fft as sp_fft
from scipy.ndimage import map_coordinates

logger = getLogger(name=__name__)

# lattice nodes per correlation length
RHO = 8
# extra lattice nodes on each side for cubic interpolation
MARGIN = 4
DEFAULT_PADDING = 1.0
# relative tolerance on negative circulant eigenvalues before clipping
EIG_TOL = 1e-6
MIN_DELTA = 0.01
MAX_DELTA = 0.25

_PLAN_CACHE: Dict[tuple, "LayerPlan"] = {}


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of ``n`` nodes per side

    Nodes are ``origin + spacing * i`` for ``i = 0..n-1`` on every axis and
    represent the cells ``node + [-spacing/2, spacing/2)^d``.

    Args:
        d (int): dimension
        origin (tuple): first node
        side (float): side length
        n (int): nodes per side, a power of two
    """

    d: int
    origin: Tuple[float, ...]
    side: float
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.d}")
        if not is_pow2(int(self.n)):
            raise ConfigurationError(f"n must be a power of two, got {self.n}")
        if not self.side > 0:
            raise ConfigurationError(f"side must be positive, got {self.side}")
        origin = np.broadcast_to(np.asarray(self.origin, dtype=np.float64), (self.d,))
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "side", float(self.side))

    @classmethod
    def for_depth(cls, d, t, side=1.0, origin=0.0):
        """Grid fine enough for a shrinking field of depth ``t``"""
        n = next_pow2(side * RHO * np.exp(t) * (1 - 1e-12))
        return cls(d, origin, side, n)

    @classmethod
    def centered(cls, d, spacing, half_width):
        """Grid with the given spacing, covering [-half_width, half_width]^d

        The origin is a node.
        """
        n = next_pow2(2.0 * half_width / spacing + 1)
        return cls(d, -(n // 2) * spacing, n * spacing, n)

    @property
    def spacing(self):
        return self.side / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n ** self.d

    @property
    def cell_volume(self):
        return self.spacing ** self.d

    def axis(self, i=0):
        return self.origin[i] + self.spacing * np.arange(self.n)

    def points(self):
        """(size, d) array of node coordinates in C order"""
        axes = [self.axis(i) for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def radii(self):
        """Distance of every node to 0, with the grid's shape"""
        if self.d == 1:
            return np.abs(self.axis(0))
        a0, a1 = self.axis(0), self.axis(1)
        return np.hypot(a0[:, None], a1[None, :])

    def node_of(self, point):
        """Index tuple of the node nearest to ``point``"""
        point = np.broadcast_to(np.asarray(point, dtype=np.float64), (self.d,))
        idx = np.rint((point - np.asarray(self.origin)) / self.spacing).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, self.n - 1))

    def index_of(self, point):
        """Flat (C order) index of the node nearest to ``point``"""
        return int(np.ravel_multi_index(self.node_of(point), self.shape))

    def contains(self, point):
        point = np.broadcast_to(np.asarray(point, dtype=np.float64), (self.d,))
        lo = np.asarray(self.origin) - 0.5 * self.spacing
        hi = lo + self.side
        return bool(np.all(point >= lo) and np.all(point < hi))


@dataclass(frozen=True)
class _Lattice:
    """Lattice ``spacing * (start + i)``, ``i = 0..shape-1`` per axis"""

    spacing: float
    start: Tuple[int, ...]
    shape: Tuple[int, ...]

    @property
    def origin_index(self):
        return tuple(-s for s in self.start)

    def size(self):
        return int(np.prod(self.shape))


@dataclass
class _LayerSpec:
    s: float
    level: int
    embed_shape: Tuple[int, ...]
    sqrt_eig: np.ndarray = field(repr=False)
    min_eigenvalue: float = 0.0


@dataclass
class LayerPlan:
    """Deterministic part of a layered sampler

    Holds the lattices and the square-rooted circulant spectra of every
    layer. Plans depend only on (kernel, domain, t_max, delta, direction,
    padding) and are cached per process.
    """

    kernel: SeedKernel
    domain: GridSpec
    t_max: float
    delta: float
    direction: Direction
    padding: float
    lattices: Dict[int, _Lattice]
    layers: List[_LayerSpec]
    _to_domain: Dict[int, tuple] = field(default_factory=dict, repr=False)
    _projections: Dict[int, tuple] = field(default_factory=dict, repr=False)

    @property
    def n_layers(self):
        return len(self.layers)

    def layer_interval(self, i):
        s = self.layers[i].s
        return (s, s + self.delta)

    def midpoint(self, i):
        return self.layers[i].s + 0.5 * self.delta

    def total_nodes(self):
        """Nodes over the distinct level lattices"""
        return sum(lat.size() for lat in self.lattices.values())

    def finest_nodes(self):
        return self.lattices[min(self.lattices)].size()

    def domain_coordinates(self, level):
        """Lattice coordinates of the domain nodes for a level

        Returns ``("index", idx)`` when the domain nodes are lattice nodes and
        ``("coords", coords)`` with fractional coordinates otherwise.
        """
        if level not in self._to_domain:
            lat = self.lattices[level]
            per_axis = [
                self.domain.axis(i) / lat.spacing - lat.start[i] for i in range(self.domain.d)
            ]
            aligned = all(np.allclose(c, np.rint(c), atol=1e-9, rtol=0) for c in per_axis)
            if aligned:
                idx = [np.rint(c).astype(np.intp) for c in per_axis]
                self._to_domain[level] = ("index", np.ix_(*idx))
            else:
                mesh = np.meshgrid(*per_axis, indexing="ij")
                self._to_domain[level] = ("coords", np.stack(mesh))
        return self._to_domain[level]

    def origin_projection(self, i):
        """Support slice and weights K(e^{-r_mid} x) of growing layer ``i``"""
        if i not in self._projections:
            grid = self.domain
            r_mid = self.midpoint(i)
            radius = np.exp(r_mid)
            box = []
            for a in range(grid.d):
                ax = grid.axis(a)
                lo = int(np.searchsorted(ax, -radius, side="left"))
                hi = int(np.searchsorted(ax, radius, side="right"))
                box.append(slice(lo, hi))
            box = tuple(box)
            sub = grid.radii()[box]
            weights = self.kernel.K(np.exp(-r_mid) * sub)
            self._projections[i] = (box, weights)
        return self._projections[i]


def clear_plan_cache():
    _PLAN_CACHE.clear()


def _layer_geometry(direction, s, delta):
    """(correlation length, support radius) of the layer [s, s + delta]"""
    if direction == Direction.SHRINKING:
        return np.exp(-(s + delta)), np.exp(-s)
    return np.exp(s), np.exp(s + delta)


def _level_lattice(domain, spacing):
    start, shape = [], []
    for i in range(domain.d):
        first = domain.origin[i]
        last = first + (domain.n - 1) * domain.spacing
        lo, hi = min(first, 0.0), max(last, 0.0)
        i_lo = int(np.floor(lo / spacing + 1e-9)) - MARGIN
        i_hi = int(np.ceil(hi / spacing - 1e-9)) + MARGIN
        start.append(i_lo)
        shape.append(i_hi - i_lo + 1)
    return _Lattice(float(spacing), tuple(start), tuple(shape))


def _embedding(kernel, s, delta, direction, lattice, padding, d):
    """Square-rooted half spectrum of the circulant embedding of one layer"""
    _, support = _layer_geometry(direction, s, delta)
    reach = int(np.ceil(support / lattice.spacing))
    # a compactly supported positive definite covariance embeds exactly once the
    # period exceeds n + reach and 2 reach + 1
    pad_axis = padding ** (1.0 / d)
    embed = tuple(
        sp_fft.next_fast_len(int(np.ceil(max(pad_axis * n, n + reach, 2 * reach + 2))), real=True)
        for n in lattice.shape
    )
    for attempt in range(2):
        offsets = np.arange(-reach, reach + 1)
        c = np.zeros(embed)
        if d == 1:
            lags = np.abs(offsets) * lattice.spacing
            c[offsets % embed[0]] = layer_covariance_grid(kernel, s, s + delta, lags, direction)
        else:
            lags = lattice.spacing * np.hypot(offsets[:, None], offsets[None, :])
            c[np.ix_(offsets % embed[0], offsets % embed[1])] = layer_covariance_grid(
                kernel, s, s + delta, lags, direction
            )
        eig = sp_fft.rfftn(c).real
        min_eig = float(eig.min())
        if min_eig >= -EIG_TOL * float(eig.max()):
            break
        if attempt == 0:
            logger.warning(
                "negative circulant eigenvalue %.3e for layer s=%.3f, doubling embedding",
                min_eig,
                s,
            )
            embed = tuple(2 * m for m in embed)
    else:
        raise SamplerError(
            f"circulant embedding of layer s={s:.4f} is not nonnegative definite "
            f"(min eigenvalue {min_eig:.3e}, embedding {embed})",
            min_eigenvalue=min_eig,
            embedding_size=embed,
        )
    return embed, np.sqrt(np.clip(eig, 0.0, None)), min_eig


def _check_delta(t_max, delta):
    if not (MIN_DELTA - 1e-12 <= delta <= MAX_DELTA + 1e-12):
        raise DomainError(f"delta must be in [{MIN_DELTA}, {MAX_DELTA}], got {delta}")
    if not t_max > 0:
        raise DomainError(f"t_max must be positive, got {t_max}")
    n_layers = int(round(t_max / delta))
    if abs(n_layers * delta - t_max) > 1e-9 * max(1.0, t_max):
        raise DomainError(f"t_max={t_max} is not a multiple of delta={delta}")
    return n_layers


def layer_plan(kernel, domain, t_max, delta, direction, padding=DEFAULT_PADDING):
    """Build (or fetch from the cache) the plan of a layered sampler

    Raises:
        DomainError: if delta is out of range or the domain grid is coarser
            than ``1/RHO`` of the finest correlation length
        SamplerError: if a layer cannot be embedded
    """
    direction = Direction(direction)
    n_layers = _check_delta(t_max, delta)
    key = (kernel.key, domain, round(t_max, 9), round(delta, 9), direction, padding)
    if key in _PLAN_CACHE:
        return _PLAN_CACHE[key]

    start_time = time.time()
    lattices = {}
    layers = []
    for i in range(n_layers):
        s = i * delta
        corr, _ = _layer_geometry(direction, s, delta)
        level = int(np.floor(np.log2(corr / (RHO * domain.spacing)) + 1e-9))
        if level < 0:
            raise DomainError(
                f"grid spacing {domain.spacing:.3e} exceeds 1/{RHO} of the correlation "
                f"length {corr:.3e} of layer [{s:.3f}, {s + delta:.3f}]"
            )
        if level not in lattices:
            lattices[level] = _level_lattice(domain, domain.spacing * 2 ** level)
        embed, sqrt_eig, min_eig = _embedding(
            kernel, s, delta, direction, lattices[level], padding, domain.d
        )
        layers.append(_LayerSpec(s, level, embed, sqrt_eig, min_eig))

    plan = LayerPlan(kernel, domain, t_max, delta, direction, padding, lattices, layers)
    _PLAN_CACHE[key] = plan
    logger.debug(
        "layer plan: %d layers, %d levels, %d nodes, built in %.2f s",
        n_layers,
        len(lattices),
        plan.total_nodes(),
        time.time() - start_time,
    )
    return plan


@dataclass
class LayerStack:
    """Independent scale layers of one field realization

    Args:
        plan (LayerPlan): sampler plan
        values (list): per layer values on the layer's lattice
        origin_increments (np.ndarray): per layer value at the origin
        stream (RandomStream): stream the layers were drawn from
    """

    plan: LayerPlan
    values: List[np.ndarray] = field(repr=False)
    origin_increments: np.ndarray = field(repr=False)
    stream: Optional[RandomStream] = None

    @property
    def kernel(self):
        return self.plan.kernel

    @property
    def direction(self):
        return self.plan.direction

    @property
    def delta(self):
        return self.plan.delta

    @property
    def t_max(self):
        return self.plan.t_max

    @property
    def domain(self):
        return self.plan.domain

    @property
    def layers(self):
        """List of ((s, s + delta), level spacing, values)"""
        out = []
        for i, spec in enumerate(self.plan.layers):
            lat = self.plan.lattices[spec.level]
            out.append((self.plan.layer_interval(i), lat.spacing, self.values[i]))
        return out

    @property
    def origin_path(self):
        return origin_path(self)


@dataclass
class FieldSample:
    """Field values on a grid

    Args:
        grid (GridSpec): grid
        values (np.ndarray): values with the grid's shape
        meta (dict): scale window, direction and seed provenance
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.meta.get("t")

    def at(self, point):
        return float(self.values[self.grid.node_of(point)])


def sample_layers(kernel, domain, t_max, delta, direction, stream, padding=DEFAULT_PADDING):
    """Sample every scale layer of a field on ``domain``

    Args:
        kernel (SeedKernel): seed kernel
        domain (GridSpec): grid the field is evaluated on
        t_max (float): total scale depth, a multiple of ``delta``
        delta (float): layer step in [0.01, 0.25]
        direction (Direction): shrinking (X_t) or growing (behind Z_b)
        stream (RandomStream): random stream, layer ``i`` uses ``stream.child(i)``
        padding (float): circulant padding factor (in volume)

    Returns:
        LayerStack: sampled layers
    """
    plan = layer_plan(kernel, domain, t_max, delta, direction, padding)
    values = []
    origin = np.empty(plan.n_layers)
    for i, spec in enumerate(plan.layers):
        lat = plan.lattices[spec.level]
        g = stream.child(i).generator()
        white = g.standard_normal(spec.embed_shape)
        y = sp_fft.irfftn(spec.sqrt_eig * sp_fft.rfftn(white), s=spec.embed_shape)
        layer = np.ascontiguousarray(y[tuple(slice(0, n) for n in lat.shape)])
        values.append(layer)
        origin[i] = layer[lat.origin_index]
    return LayerStack(plan, values, origin, stream)


def _layer_range(stack, s, t):
    delta = stack.delta
    if s < -1e-12 or t > stack.t_max + 1e-9 or s > t + 1e-12:
        raise DomainError(f"need 0 <= s <= t <= {stack.t_max}, got s={s}, t={t}")
    i0, i1 = int(round(s / delta)), int(round(t / delta))
    if abs(i0 * delta - s) > 1e-9 or abs(i1 * delta - t) > 1e-9:
        raise DomainError(f"s={s} and t={t} must be multiples of delta={delta}")
    return i0, i1


def _level_to_domain(plan, level, lattice_values):
    how, where = plan.domain_coordinates(level)
    if how == "index":
        return lattice_values[where]
    return map_coordinates(lattice_values, where, order=3, mode="nearest")


def _sum_layers(stack, i0, i1):
    plan = stack.plan
    out = np.zeros(plan.domain.shape)
    by_level = {}
    for i in range(i0, i1):
        level = plan.layers[i].level
        if level in by_level:
            by_level[level] = by_level[level] + stack.values[i]
        else:
            by_level[level] = stack.values[i].copy()
    for level in sorted(by_level):
        out += _level_to_domain(plan, level, by_level[level])
    return out


def _meta(stack, s, t, **extra):
    meta = {"s": float(s), "t": float(t), "direction": stack.direction.value}
    if stack.stream is not None:
        meta["seed"] = stack.stream.provenance()
    meta.update(extra)
    return meta


def assemble_X(stack, s, t):
    """Sum of the layers in [s, t] on the stack's domain

    Args:
        stack (LayerStack): sampled layers
        s (float): lower scale, a multiple of delta
        t (float): upper scale, a multiple of delta

    Returns:
        FieldSample: X_{s,t}; zero when s == t
    """
    i0, i1 = _layer_range(stack, s, t)
    return FieldSample(stack.domain, _sum_layers(stack, i0, i1), _meta(stack, s, t))


def origin_path(stack):
    """Field at the origin as a function of scale

    Returns:
        tuple: (scales 0, delta, ..., t_max; cumulative values starting at 0)
    """
    scales = stack.delta * np.arange(stack.plan.n_layers + 1)
    path = np.concatenate([[0.0], np.cumsum(stack.origin_increments)])
    return scales, path


def _layer_value_at(stack, i, z):
    """Value of layer ``i`` at point ``z`` by cubic interpolation"""
    plan = stack.plan
    lat = plan.lattices[plan.layers[i].level]
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), (plan.domain.d,))
    coords = (z / lat.spacing - np.asarray(lat.start))[:, None]
    if np.allclose(coords, np.rint(coords), atol=1e-9, rtol=0):
        return float(stack.values[i][tuple(int(c) for c in np.rint(coords[:, 0]))])
    return float(map_coordinates(stack.values[i], coords, order=3, mode="nearest")[0])


def sample_Z(stack, b, pin=None):
    """Field with its projection on the path at a pin point removed

    For a growing stack this is Z_b(x) = X_b(x) - sum_l K(e^{-r_l} x) xi_l(0),
    with r_l the midpoint of layer l and xi_l(0) its value at the origin.
    For a shrinking stack and a pin ``z`` it is the pinned field
    X_b(x) - sum_l K(e^{r_l} (x - z)) xi_l(z), independent of (X_s(z))_s.

    Args:
        stack (LayerStack): sampled layers
        b (float): scale, a multiple of delta not above t_max
        pin (array-like): pin point, 0 by default

    Returns:
        FieldSample: the pinned field
    """
    if b > stack.t_max + 1e-9:
        raise DomainError(f"b={b} exceeds the stack depth {stack.t_max}")
    _, i1 = _layer_range(stack, 0.0, b)
    plan = stack.plan
    values = _sum_layers(stack, 0, i1)
    grid = plan.domain
    pin_point = np.zeros(grid.d) if pin is None else np.broadcast_to(
        np.asarray(pin, dtype=np.float64), (grid.d,)
    )
    at_origin = not np.any(pin_point)

    if stack.direction == Direction.GROWING:
        if not at_origin:
            raise DomainError("growing stacks are pinned at the origin")
        for i in range(i1):
            box, weights = plan.origin_projection(i)
            values[box] -= weights * stack.origin_increments[i]
    else:
        axes = [grid.axis(a) - pin_point[a] for a in range(grid.d)]
        for i in range(i1):
            r_mid = plan.midpoint(i)
            radius = np.exp(-r_mid)
            box = tuple(
                slice(
                    int(np.searchsorted(ax, -radius, side="left")),
                    int(np.searchsorted(ax, radius, side="right")),
                )
                for ax in axes
            )
            if grid.d == 1:
                sub = np.abs(axes[0][box[0]])
            else:
                sub = np.hypot(axes[0][box[0]][:, None], axes[1][box[1]][None, :])
            xi = stack.origin_increments[i] if at_origin else _layer_value_at(stack, i, pin_point)
            values[box] -= stack.kernel.K(np.exp(r_mid) * sub) * xi
    meta = _meta(stack, 0.0, b, pin=pin_point.tolist())
    return FieldSample(grid, values, meta)


def empirical_covariance(samples, pairs):
    """Sample covariance of field values at pairs of points

    Args:
        samples (list): FieldSample replicates on a common grid
        pairs (list): list of (point, point)

    Returns:
        tuple: (covariances, standard errors) as arrays, one entry per pair
    """
    if len(samples) < 100:
        raise StatisticsError(f"need at least 100 samples, got {len(samples)}")
    grid = samples[0].grid
    stacked = np.stack([np.asarray(s.values).ravel() for s in samples])
    n = stacked.shape[0]
    cov = np.empty(len(pairs))
    se = np.empty(len(pairs))
    for j, (p, q) in enumerate(pairs):
        a = stacked[:, grid.index_of(p)]
        b = stacked[:, grid.index_of(q)]
        prod = (a - a.mean()) * (b - b.mean())
        cov[j] = prod.sum() / (n - 1)
        se[j] = prod.std(ddof=1) / np.sqrt(n)
    return cov, se


def write_field_snapshot(sample, path, config=None, seed=None, wall_time=0.0):
    """Export a field sample as CSV (index, coordinates, value) plus sidecar"""
    grid = sample.grid
    points = grid.points()
    cols = ["index"] + ["x", "y"][: grid.d] + ["value"]
    table = np.column_stack([np.arange(grid.size), points, np.asarray(sample.values).ravel()])
    out = write_csv(path, table, cols)
    write_sidecar(out, config, seed, wall_time, meta=sample.meta)
    return out
