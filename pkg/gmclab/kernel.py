"""Seed covariance of the star-scale invariant field and derived scale functions.

The seed covariance K is the autoconvolution of the bump

    Kbar(x) ∝ exp(-1 / (1 - (2|x|)^2)),  |x| < 1/2,

normalized so that K(0) = 1. K is smooth, radial, positive definite and
supported in the unit ball. Both profiles are tabulated on a radial grid and
evaluated with cubic splines.

The scale functions built on top of K are

    a_b(x) = int_0^b (1 - K(e^{-s} x)) ds
    h_b(x) = (1 / b) int_0^b K(e^{-s} x) ds
    m_b    = sqrt(2d) b - 3 / (2 sqrt(2d)) log b

and the covariance of a layer of scales [s, t], which is int_s^t K(e^{r} h) dr
for shrinking layers and int_s^t K(e^{-r} h) dr for growing layers.
"""
from dataclasses import dataclass, field

import numpy as np
from gmclab.base import ConfigurationError, Direction, DomainError
from gmclab.logger import getLogger
from gmclab.util import write_csv
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve

logger = getLogger(name=__name__)

MIN_TABLE_RESOLUTION = 1024

# rows of the 2-D tensor grid convolved at once
_ROW_BLOCK = 256


def _bump(x):
    """Unnormalized Kbar on radii ``x``"""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    inside = x < 0.5
    out[inside] = np.exp(-1.0 / (1.0 - (2.0 * x[inside]) ** 2))
    return out


def _raw_autoconvolution(d, h):
    """Autoconvolution of the bump along the first axis at step ``h``

    Returns the radii ``r_i = i h`` for ``i = 0..ceil(1/h)`` and the values
    of (bump * bump)(r_i e_1).
    """
    half = int(np.ceil(0.5 / h))
    axis = h * np.arange(-half, half + 1)
    line = np.zeros(4 * half + 1)
    if d == 1:
        block = _bump(axis)[None, :]
        line += fftconvolve(block, block, axes=1).sum(axis=0)
    else:
        # K(r e_1) = sum over rows y2 of the 1-D autoconvolution of each row
        for start in range(0, len(axis), _ROW_BLOCK):
            y2 = axis[start : start + _ROW_BLOCK]
            block = _bump(np.hypot(axis[None, :], y2[:, None]))
            line += fftconvolve(block, block, axes=1).sum(axis=0)
    line *= h ** d
    center = 2 * half
    values = line[center:]
    radii = h * np.arange(len(values))
    return radii, values


@dataclass(frozen=True, eq=False)
class SeedKernel:
    """Tabulated seed covariance

    Args:
        d (int): dimension, 1 or 2
        table_resolution (int): samples per unit radius
        radii (np.ndarray): table nodes ``i / table_resolution`` on [0, 1]
        profile_K (np.ndarray): K at the nodes
        profile_Kbar (np.ndarray): Kbar at the nodes on [0, 1/2]
        kbar_scale (float): factor mapping the bump to Kbar
        second_derivative_at_zero (float): radial second derivative of K at 0
    """

    d: int
    table_resolution: int
    radii: np.ndarray = field(repr=False)
    profile_K: np.ndarray = field(repr=False)
    profile_Kbar: np.ndarray = field(repr=False)
    kbar_scale: float
    second_derivative_at_zero: float
    _spline_K: CubicSpline = field(repr=False, default=None)
    _spline_Kbar: CubicSpline = field(repr=False, default=None)

    @property
    def key(self):
        """Hashable identity used by sampler caches"""
        return (self.d, self.table_resolution)

    def K(self, r):
        """Seed covariance at radii ``r`` (exactly 0 for r >= 1)"""
        r = np.abs(np.asarray(r, dtype=np.float64))
        out = np.where(r < 1.0, self._spline_K(np.minimum(r, 1.0)), 0.0)
        return float(out) if out.ndim == 0 else out

    def Kbar(self, r):
        """Convolution square root of K at radii ``r`` (exactly 0 for r >= 1/2)"""
        r = np.abs(np.asarray(r, dtype=np.float64))
        out = np.where(r < 0.5, self._spline_Kbar(np.minimum(r, 0.5)), 0.0)
        return float(out) if out.ndim == 0 else out


def build_seed_kernel(d=1, table_resolution=2048):
    """Build the seed covariance K = Kbar * Kbar in dimension d

    Args:
        d (int): dimension, 1 or 2
        table_resolution (int): samples per unit radius, at least 1024

    Returns:
        SeedKernel: kernel with K(0) = 1

    Raises:
        ConfigurationError: on unsupported dimension or too small resolution
    """
    if d not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {d}")
    if int(table_resolution) < MIN_TABLE_RESOLUTION:
        raise ConfigurationError(
            f"table_resolution must be >= {MIN_TABLE_RESOLUTION}, got {table_resolution}"
        )
    res = int(table_resolution)
    h = 1.0 / (2 * res)
    _, raw = _raw_autoconvolution(d, h)
    k0 = raw[0]

    # table nodes i / res sit at every second quadrature node
    n_nodes = res + 1
    profile_K = raw[0 : 2 * n_nodes : 2][:n_nodes] / k0
    radii = np.arange(n_nodes) / res
    profile_K[-1] = 0.0
    profile_K[radii >= 1.0] = 0.0

    kbar_scale = 1.0 / np.sqrt(k0)
    profile_Kbar = kbar_scale * _bump(radii)

    step = 1.0 / res
    # fourth order central difference, K even in r
    second = (-2.0 * profile_K[2] + 32.0 * profile_K[1] - 30.0) / (12.0 * step ** 2)

    spline_K = CubicSpline(radii, profile_K, bc_type=((1, 0.0), (1, 0.0)))
    half = radii <= 0.5
    spline_Kbar = CubicSpline(radii[half], profile_Kbar[half], bc_type=((1, 0.0), (1, 0.0)))

    kernel = SeedKernel(
        d=d,
        table_resolution=res,
        radii=radii,
        profile_K=profile_K,
        profile_Kbar=profile_Kbar,
        kbar_scale=float(kbar_scale),
        second_derivative_at_zero=float(second),
        _spline_K=spline_K,
        _spline_Kbar=spline_Kbar,
    )
    logger.debug(
        "seed kernel d=%d res=%d K''(0)=%.6f", d, res, kernel.second_derivative_at_zero
    )
    return kernel


def eval_K(k, r):
    """Evaluate the seed covariance at radius ``r``

    Args:
        k (SeedKernel): kernel
        r (float or np.ndarray): radii

    Returns:
        float or np.ndarray: K(r)
    """
    return k.K(r)


def kernel_table(k):
    """Table of (r, K(r), Kbar(r)) at the kernel nodes"""
    return np.column_stack([k.radii, k.profile_K, k.Kbar(k.radii)])


def write_kernel_table(k, path):
    """Export the kernel table as CSV with columns r, K, Kbar"""
    return write_csv(path, kernel_table(k), ["r", "K", "Kbar"])


def dft_min_eigenvalue(k, window=8.0, step=1.0 / 64):
    """Smallest value of the DFT of K sampled on a periodic window

    K is sampled along a line with spacing ``step`` on a window of length
    ``window`` and wrapped periodically. The DFT, scaled by the step so that
    it approximates the Fourier transform, is nonnegative for a positive
    definite K.
    """
    n = int(round(window / step))
    lags = np.minimum(np.arange(n), n - np.arange(n)) * step
    c = k.K(lags)
    return float(np.min(np.fft.fft(c).real) * step)


def autoconvolution_oracle(k, r):
    """Independent quadrature of (Kbar * Kbar)(r e_1) from the analytic bump

    Uses adaptive quadrature on the exact overlap of the two supports (nested
    in d = 2), so it shares no grid with :func:`build_seed_kernel`.
    """
    s = k.kbar_scale
    r = float(r)
    if r >= 1.0:
        return 0.0

    def _line(y2):
        half = np.sqrt(max(0.25 - y2 * y2, 0.0))
        lo, hi = r - half, half
        if hi <= lo:
            return 0.0

        def _f(y1):
            return float(_bump(np.hypot(y1, y2)) * _bump(np.hypot(r - y1, y2)))

        return integrate.quad(_f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]

    if k.d == 1:
        value = _line(0.0)
    else:
        value = integrate.quad(_line, -0.5, 0.5, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return s * s * value


def autoconvolution_residual(k, radii=None):
    """Max |K(r) - oracle(r)| over test radii"""
    if radii is None:
        radii = np.array([0.0, 0.1, 0.25, 0.5, 0.75, 0.9])
    return max(abs(k.K(r) - autoconvolution_oracle(k, r)) for r in radii)


def _norm(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.abs(x)) if x.ndim == 0 else float(np.linalg.norm(x))


@dataclass(frozen=True, eq=False)
class ScaleFunctions:
    """Deterministic scale functions a_b, h_b built on a seed kernel

    Args:
        owner (SeedKernel): seed kernel
        quadrature_step (float): step in scale units of the tabulated
            antiderivative used by :meth:`a_b_grid`
    """

    owner: SeedKernel
    quadrature_step: float = 1.0 / 256
    _table: tuple = field(default=None, repr=False)

    # the tabulated antiderivative starts here, below it 1 - K(e^w) is quadratic
    v_min = -15.0

    def _antiderivative(self):
        if self._table is None:
            k = self.owner
            w = np.arange(self.v_min, self.quadrature_step / 2, self.quadrature_step)
            w[-1] = 0.0
            g = 1.0 - k.K(np.exp(w))
            curvature = -0.5 * k.second_derivative_at_zero
            g0 = 0.5 * curvature * np.exp(2.0 * self.v_min)
            poly = CubicSpline(w, g).antiderivative()
            total = g0 + float(poly(0.0) - poly(self.v_min))
            object.__setattr__(self, "_table", (poly, g0, curvature, total))
        return self._table

    def G(self, v):
        """G(v) = int_{-inf}^{v} (1 - K(e^w)) dw"""
        poly, g0, curvature, total = self._antiderivative()
        v = np.asarray(v, dtype=np.float64)
        mid = np.clip(v, self.v_min, 0.0)
        out = g0 + poly(mid) - poly(self.v_min)
        out = np.where(v > 0.0, total + v, out)
        out = np.where(v < self.v_min, 0.5 * curvature * np.exp(2.0 * np.minimum(v, 0.0)), out)
        return out

    def a_b_grid(self, r, b):
        """Vectorized a_b over radii ``r``

        Args:
            r (np.ndarray): nonnegative radii
            b (float): scale, may be ``np.inf``

        Returns:
            np.ndarray: a_b(r), exactly 0 at r = 0
        """
        r = np.abs(np.asarray(r, dtype=np.float64))
        out = np.zeros_like(r)
        pos = r > 0
        logr = np.log(r[pos])
        if np.isinf(b):
            out[pos] = self.G(logr)
        else:
            out[pos] = self.G(logr) - self.G(logr - b)
        return out


def eval_a_b(sf, x, b):
    """a_b(x) = int_0^b (1 - K(e^{-s} x)) ds

    Args:
        sf (ScaleFunctions): scale functions
        x (float or array-like): point
        b (float): scale, positive or ``np.inf``

    Returns:
        float: a_b(x). a_inf(0) is 0.
    """
    if not b > 0:
        raise DomainError(f"b must be positive, got {b}")
    r = _norm(x)
    if r == 0.0:
        return 0.0
    k = sf.owner
    logr = np.log(r)
    # the integrand is 1 while e^{-s} r >= 1
    flat = min(b, max(logr, 0.0))
    lo = max(logr, 0.0)
    tail = 0.0
    if np.isinf(b):
        curvature = -0.5 * k.second_derivative_at_zero
        hi = logr - 0.5 * np.log(1e-12 / curvature)
        # remaining integral of the quadratic regime
        tail = 0.5 * curvature * (np.exp(-hi) * r) ** 2
    else:
        hi = b
    if hi <= lo:
        return float(flat)
    value, _ = integrate.quad(
        lambda s: 1.0 - k.K(np.exp(-s) * r), lo, hi, epsabs=1e-11, epsrel=1e-10, limit=200
    )
    return float(flat + value + tail)


def eval_h_b(sf, x, b):
    """h_b(x) = (1 / b) int_0^b K(e^{-s} x) ds"""
    if not b > 0 or np.isinf(b):
        raise DomainError(f"b must be positive and finite, got {b}")
    r = _norm(x)
    if r == 0.0:
        return 1.0
    k = sf.owner
    # K(e^{-s} r) vanishes while s <= log r
    lo = max(np.log(r), 0.0)
    if lo >= b:
        return 0.0
    value, _ = integrate.quad(
        lambda s: k.K(np.exp(-s) * r), lo, b, epsabs=1e-11, epsrel=1e-10, limit=200
    )
    return float(value / b)


def recentering_m_b(d, b):
    """Recentering constant sqrt(2d) b - 3 / (2 sqrt(2d)) log b"""
    if not b > 0:
        raise DomainError(f"b must be positive, got {b}")
    gamma_c = np.sqrt(2.0 * d)
    return float(gamma_c * b - 3.0 / (2.0 * gamma_c) * np.log(b))


def _check_window(s, t):
    if s < 0 or not s < t:
        raise DomainError(f"need 0 <= s < t, got s={s}, t={t}")


def layer_covariance(k, s, t, h, direction=Direction.SHRINKING):
    """Covariance of the scale layer [s, t] at separation ``h``

    Args:
        k (SeedKernel): kernel
        s (float): lower scale
        t (float): upper scale
        h (float or array-like): separation
        direction (Direction): shrinking or growing layers

    Returns:
        float: int_s^t K(e^{r} h) dr (shrinking) or int_s^t K(e^{-r} h) dr (growing)
    """
    _check_window(s, t)
    direction = Direction(direction)
    r = _norm(h)
    if r == 0.0:
        return float(t - s)
    if direction == Direction.SHRINKING:
        lo, hi = s, min(t, -np.log(r))

        def _f(u):
            return k.K(np.exp(u) * r)

    else:
        lo, hi = max(s, np.log(r)), t

        def _f(u):
            return k.K(np.exp(-u) * r)

    if hi <= lo:
        return 0.0
    value, _ = integrate.quad(_f, lo, hi, epsabs=1e-11, epsrel=1e-10, limit=200)
    return float(value)


def gauss_legendre_scales(s, t, panel=0.25, order=16):
    """Composite Gauss-Legendre nodes and weights on [s, t]"""
    n_panels = max(1, int(np.ceil((t - s) / panel - 1e-9)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(s, t, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def layer_covariance_grid(k, s, t, h, direction=Direction.SHRINKING, order=16):
    """Vectorized layer covariance for many separations

    The quadrature is a positive combination of rescaled copies of K, hence
    itself a positive definite function of the separation.

    Args:
        k (SeedKernel): kernel
        s (float): lower scale
        t (float): upper scale
        h (np.ndarray): separations (radii)
        direction (Direction): shrinking or growing layers
        order (int): Gauss-Legendre nodes per panel

    Returns:
        np.ndarray: covariances with the shape of ``h``
    """
    _check_window(s, t)
    direction = Direction(direction)
    h = np.abs(np.asarray(h, dtype=np.float64))
    nodes, weights = gauss_legendre_scales(s, t, order=order)
    sign = 1.0 if direction == Direction.SHRINKING else -1.0
    scale = np.exp(sign * nodes)
    flat = h.ravel()
    out = np.empty_like(flat)
    # chunked to bound the (n_h, n_nodes) work array
    chunk = max(1, 2 ** 22 // len(nodes))
    for start in range(0, len(flat), chunk):
        part = flat[start : start + chunk]
        out[start : start + chunk] = k.K(part[:, None] * scale[None, :]) @ weights
    return out.reshape(h.shape)
