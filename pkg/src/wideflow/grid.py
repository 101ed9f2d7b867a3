"""Periodic sampled fields on the d-torus and their spectral calculus.

The torus is normalised to [0, 2pi)^d so wavenumbers are integers.  Vector
fields are stored component-first, ``values[c, i, j(, k)]``, on a uniform
n^d grid.  All differential operators act through the FFT; the Nyquist
column is zeroed in every odd-order derivative so differentiation stays
skew-adjoint on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    BadExponent,
    DivergenceTooLarge,
    NoConvergence,
    NonzeroMean,
    NotSkew,
)

TWO_PI = 2.0 * np.pi


@lru_cache(maxsize=32)
def _wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


@lru_cache(maxsize=32)
def _deriv_wavenumbers(n: int) -> np.ndarray:
    # Nyquist mode removed: keeps ik multipliers skew-adjoint for even n.
    k = _wavenumbers(n).copy()
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on [0, 2pi)^d with n points per axis."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return (TWO_PI / self.n) ** self.d

    @property
    def volume(self) -> float:
        return TWO_PI ** self.d

    def axes(self) -> tuple:
        x = np.arange(self.n) * self.h
        return tuple(x for _ in range(self.d))

    def meshgrid(self) -> tuple:
        return np.meshgrid(*self.axes(), indexing="ij")

    def k_vectors(self) -> np.ndarray:
        """Integer wavenumbers, shape (d, n, ..., n)."""
        k1 = _wavenumbers(self.n)
        return np.stack(np.meshgrid(*[k1] * self.d, indexing="ij"))

    def k_deriv(self) -> np.ndarray:
        """Wavenumbers used in derivatives (Nyquist zeroed)."""
        k1 = _deriv_wavenumbers(self.n)
        return np.stack(np.meshgrid(*[k1] * self.d, indexing="ij"))

    def k_squared(self) -> np.ndarray:
        k = self.k_vectors()
        return np.sum(k * k, axis=0)

    def spatial_axes(self, values: np.ndarray) -> tuple:
        return tuple(range(values.ndim - self.d, values.ndim))


def fftn(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values, axes=grid.spatial_axes(values))


def ifftn(grid: TorusGrid, coeffs: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifftn(coeffs, axes=grid.spatial_axes(coeffs)))


def grad_hat(grid: TorusGrid, f_hat: np.ndarray) -> np.ndarray:
    """Spectral gradient, adds a leading axis of length d."""
    k = grid.k_deriv()
    k = k.reshape((grid.d,) + (1,) * (f_hat.ndim - grid.d) + grid.shape)
    return 1j * k * f_hat[np.newaxis]


def gradient(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Gradient of a (stack of) scalar field(s); leading axis indexes d/dx_j."""
    return ifftn(grid, grad_hat(grid, fftn(grid, values)))


def divergence_raw(grid: TorusGrid, vec: np.ndarray) -> np.ndarray:
    """Divergence of values with a leading component axis of length d."""
    v_hat = fftn(grid, vec)
    k = grid.k_deriv()
    k = k.reshape((grid.d,) + (1,) * (vec.ndim - 1 - grid.d) + grid.shape)
    return ifftn(grid, np.sum(1j * k * v_hat, axis=0))


@dataclass
class VectorField:
    """Sampled velocity-like field, values shape (d, n, ..., n)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        expected = (self.grid.d,) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def zero(cls, grid: TorusGrid) -> "VectorField":
        return cls(grid, np.zeros((grid.d,) + grid.shape))

    @classmethod
    def from_callable(cls, grid: TorusGrid, fn) -> "VectorField":
        mesh = grid.meshgrid()
        comps = fn(*mesh)
        return cls(grid, np.stack([np.broadcast_to(c, grid.shape) for c in comps]).astype(float))

    @classmethod
    def random(cls, grid: TorusGrid, rng, kmax: int = 4, amplitude: float = 1.0) -> "VectorField":
        """Band-limited random field with modes up to |k_i| <= kmax."""
        coeffs = np.zeros((grid.d,) + grid.shape, dtype=complex)
        k = grid.k_vectors()
        mask = np.all(np.abs(k) <= kmax, axis=0)
        noise = rng.standard_normal(coeffs.shape) + 1j * rng.standard_normal(coeffs.shape)
        coeffs[:, mask] = noise[:, mask]
        vals = ifftn(grid, coeffs)
        scale = np.max(np.abs(vals)) or 1.0
        return cls(grid, vals * (amplitude / scale))

    @classmethod
    def random_solenoidal(cls, grid: TorusGrid, rng, kmax: int = 4, amplitude: float = 1.0) -> "VectorField":
        return leray_project(cls.random(grid, rng, kmax=kmax, amplitude=amplitude))

    def mean(self) -> np.ndarray:
        axes = tuple(range(1, 1 + self.grid.d))
        return self.values.mean(axis=axes)

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(self.grid, self.values * a)

    __rmul__ = __mul__


@dataclass
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class TensorField:
    """Sampled d x d tensor field, values shape (d, d, n, ..., n).

    The symmetry / skewness / trace flags are validated against the data,
    never assumed.
    """

    grid: TorusGrid
    values: np.ndarray
    symmetric: bool = False
    skew: bool = False
    trace_free: bool = False
    _flag_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        expected = (self.grid.d, self.grid.d) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")
        scale = np.max(np.abs(self.values))
        tol = self._flag_tol * max(scale, 1.0)
        tr = np.trace(self.values, axis1=0, axis2=1)
        asym = self.values - np.swapaxes(self.values, 0, 1)
        sym = self.values + np.swapaxes(self.values, 0, 1)
        if self.symmetric and np.max(np.abs(asym)) > tol:
            raise ValueError("field marked symmetric fails the symmetry check")
        if self.skew and np.max(np.abs(sym)) > tol:
            raise ValueError("field marked skew fails the skewness check")
        if self.trace_free and np.max(np.abs(tr)) > tol:
            raise ValueError("field marked trace-free has nonzero trace")

    def copy(self) -> "TensorField":
        return TensorField(self.grid, self.values.copy(), self.symmetric, self.skew, self.trace_free)


# ---------------------------------------------------------------------------
# differential operators


def sym_gradient(u: VectorField) -> TensorField:
    """Rate-of-strain tensor, the symmetric part of the velocity gradient."""
    g = grid_gradient_tensor(u)
    eps = 0.5 * (g + np.swapaxes(g, 0, 1))
    return TensorField(u.grid, eps, symmetric=True)


def grid_gradient_tensor(u: VectorField) -> np.ndarray:
    """Velocity gradient as an array G[i, j] = d u_i / d x_j."""
    g = gradient(u.grid, u.values)  # axes (j, i, space)
    return np.swapaxes(g, 0, 1)


def divergence(u: VectorField) -> ScalarField:
    return ScalarField(u.grid, divergence_raw(u.grid, u.values))


def leray_project(u: VectorField) -> VectorField:
    """L2-orthogonal projection onto divergence-free, zero-mean fields."""
    return VectorField(u.grid, leray_project_raw(u.grid, u.values))


@lru_cache(maxsize=32)
def _nyquist_free_mask(d: int, n: int) -> np.ndarray:
    """Modes with no Nyquist component; the derivative is faithful there."""
    k = TorusGrid(d, n).k_vectors()
    return np.all(np.abs(k) < n // 2, axis=0)


def leray_project_raw(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    v_hat = fftn(grid, values)
    k = grid.k_vectors()
    k = k.reshape((grid.d,) + (1,) * (values.ndim - 1 - grid.d) + grid.shape)
    k2 = np.sum(k * k, axis=0)
    k2_safe = np.where(k2 == 0.0, 1.0, k2)
    k_dot_v = np.sum(k * v_hat, axis=0)
    v_hat = v_hat - k * (k_dot_v / k2_safe)[np.newaxis]
    # Nyquist-bearing modes are removed so the range is divergence-free
    # under the (Nyquist-zeroed) spectral derivative; the zero mode goes
    # with them, so the range has zero spatial mean.
    v_hat *= _nyquist_free_mask(grid.d, grid.n)
    zero = (np.s_[...],) + (0,) * grid.d
    v_hat[zero] = 0.0
    return ifftn(grid, v_hat)


def dealias_mask(grid: TorusGrid) -> np.ndarray:
    """2/3-rule mask keeping |k_i| < n/3 on every axis."""
    k = grid.k_vectors()
    return np.all(np.abs(k) < grid.n / 3.0, axis=0)


def dealias(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return ifftn(grid, fftn(grid, values) * dealias_mask(grid))


def convect_raw(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """div(u (x) u), dealiased by the 2/3 rule.

    The product is formed from the band-limited field so the cubic pairing
    <convect(u), u> vanishes exactly for divergence-free u.
    """
    v = dealias(grid, values)
    outer = v[:, np.newaxis] * v[np.newaxis, :]  # (i, j, space) = u_i u_j
    # div over the second index: sum_j d_j (u_i u_j)
    div = divergence_raw(grid, np.swapaxes(outer, 0, 1))
    return dealias(grid, div)


def convect(u: VectorField, div_tol: float = 1e-8) -> VectorField:
    du = divergence(u)
    scale = max(np.max(np.abs(u.values)), 1e-30)
    if np.max(np.abs(du.values)) > div_tol * scale:
        raise DivergenceTooLarge(
            f"divergence {np.max(np.abs(du.values)):.3e} exceeds {div_tol:.1e} * |u|; project first"
        )
    return VectorField(u.grid, convect_raw(u.grid, u.values))


def convect_jacobian_raw(grid: TorusGrid, u_values: np.ndarray, phi_values: np.ndarray) -> np.ndarray:
    """Directional derivative of convect at u in direction phi."""
    uu = dealias(grid, u_values)
    pp = dealias(grid, phi_values)
    outer = uu[:, np.newaxis] * pp[np.newaxis, :] + pp[:, np.newaxis] * uu[np.newaxis, :]
    div = divergence_raw(grid, np.swapaxes(outer, 0, 1))
    return dealias(grid, div)


def convect_jacobian_adjoint_raw(grid: TorusGrid, u_values: np.ndarray, r_values: np.ndarray) -> np.ndarray:
    """Adjoint of phi -> convect'(u)[phi] in the grid L2 inner product."""
    uu = dealias(grid, u_values)
    rr = dealias(grid, r_values)
    g = gradient(grid, rr)  # g[j, i] = d_j r_i
    # <r, div(u x phi)> = -<(grad r)^T u, phi>;  <r, div(phi x u)> = -<(u . grad) r, phi>
    term1 = np.einsum("ji...,i...->j...", g, uu)
    term2 = np.einsum("ji...,j...->i...", g, uu)
    return -dealias(grid, term1 + term2)


def curl_star(v: TensorField, skew_tol: float = 1e-10) -> VectorField:
    """Row divergence of a skew tensor potential; output is solenoidal."""
    sym = v.values + np.swapaxes(v.values, 0, 1)
    scale = max(np.max(np.abs(v.values)), 1e-30)
    if np.max(np.abs(sym)) > skew_tol * scale:
        raise NotSkew(f"asymmetry {np.max(np.abs(sym)):.3e} exceeds tolerance")
    return VectorField(v.grid, curl_star_raw(v.grid, v.values))


def curl_star_raw(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    # (curl* v)_i = sum_j d_j v_ij
    return divergence_raw(grid, np.swapaxes(values, 0, 1))


def potential_T(w: VectorField, mean_tol: float = 1e-12) -> TensorField:
    """Skew tensor potential with curl*(T w) = w on solenoidal zero-mean fields.

    Fourier multiplier (T w)_ij(k) = (-i/|k|^2) (k_j w_i(k) - k_i w_j(k)),
    zero at k = 0.
    """
    scale = max(float(np.sqrt(np.mean(w.values**2))), 1e-30)
    if np.max(np.abs(w.mean())) > mean_tol * scale:
        raise NonzeroMean(f"mean {w.mean()} is not zero")
    return TensorField(w.grid, potential_T_raw(w.grid, w.values), skew=True)


def potential_T_raw(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    w_hat = fftn(grid, values)
    k = grid.k_vectors()
    k = k.reshape((grid.d,) + (1,) * (values.ndim - 1 - grid.d) + grid.shape)
    k2 = np.sum(k * k, axis=0)
    inv = np.where(k2 == 0.0, 0.0, 1.0 / np.where(k2 == 0.0, 1.0, k2))
    inv = inv * _nyquist_free_mask(grid.d, grid.n)
    v_hat = -1j * inv * (k[np.newaxis, :] * w_hat[:, np.newaxis] - k[:, np.newaxis] * w_hat[np.newaxis, :])
    return ifftn(grid, v_hat)


# ---------------------------------------------------------------------------
# norms


def _pointwise_magnitude(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    lead = values.ndim - grid.d
    if lead == 0:
        return np.abs(values)
    flat = values.reshape((-1,) + grid.shape)
    return np.sqrt(np.sum(flat * flat, axis=0))


def lp_norm(f, p: float, grid: TorusGrid | None = None) -> float:
    """L_p norm by the trapezoidal rule (exact for smooth periodic data).

    ``f`` may be a VectorField, TensorField, ScalarField, or a raw array
    (then ``grid`` is required).  p = inf gives the max over nodes.
    """
    if grid is None:
        grid = f.grid
    values = f if isinstance(f, np.ndarray) else f.values
    if p < 1:
        raise BadExponent(f"p must be >= 1, got {p}")
    mag = _pointwise_magnitude(values, grid)
    if np.isinf(p):
        return float(np.max(mag))
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def sobolev_seminorm(f, order: int, p: float, grid: TorusGrid | None = None) -> float:
    """L_p norm of the order-th spectral gradient, order in {0, 1, 2}."""
    if order not in (0, 1, 2):
        raise BadExponent(f"order must be 0, 1 or 2, got {order}")
    if grid is None:
        grid = f.grid
    values = f if isinstance(f, np.ndarray) else f.values
    for _ in range(order):
        values = gradient(grid, values)
    return lp_norm(values, p, grid)


def l2_inner(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b) * grid.cell_volume)


# ---------------------------------------------------------------------------
# Poincare constant


def poincare_constant(
    grid: TorusGrid,
    p: float,
    max_iters: int = 600,
    tol: float = 1e-12,
    seed: int = 7,
) -> float:
    """Estimate sup ||u||_p / ||grad u||_p over zero-mean scalar fields.

    Projected conjugate-gradient ascent on log of the quotient with an
    exact line search per direction.  The result is checked against the
    exact first-mode value 1.0 from below.
    """
    from scipy.optimize import minimize_scalar

    if not (1.0 < p < np.inf):
        raise BadExponent(f"p must lie in (1, inf), got {p}")
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape, dtype=complex)
    k = grid.k_vectors()
    mask = np.all(np.abs(k) <= 2, axis=0)
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coeffs[mask] = noise[mask]
    u = ifftn(grid, coeffs)
    u -= u.mean()
    u /= np.max(np.abs(u))

    # ascent runs in the dealias band: outside it the grid derivative is
    # not faithful (the Nyquist checkerboard has zero spectral gradient)
    def band(v):
        out = dealias(grid, v)
        return out - out.mean()

    def ratio(v):
        return lp_norm(v, p, grid) / lp_norm(gradient(grid, v), p, grid)

    def ascent_dir(v):
        num = lp_norm(v, p, grid)
        g = gradient(grid, v)
        den = lp_norm(g, p, grid)
        # d/du log(num/den) = |u|^{p-2} u / num^p + div(|g|^{p-2} g) / den^p
        gu = np.abs(v) ** (p - 2.0) * v / num**p
        gmag = _pointwise_magnitude(g, grid)
        gg = divergence_raw(grid, gmag ** (p - 2.0) * g) / den**p
        return band(gu + gg)

    r = ratio(u)
    g_prev = None
    d = None
    stall = 0
    for _ in range(max_iters):
        g = ascent_dir(u)
        if g_prev is None:
            d = g
        else:
            beta = max(0.0, np.sum(g * (g - g_prev)) / max(np.sum(g_prev * g_prev), 1e-300))
            d = g + beta * d
        if np.sum(d * g) <= 0.0:
            d = g
        g_prev = g
        dn = d / max(np.sqrt(np.mean(d * d)), 1e-300)
        scale = np.sqrt(np.mean(u * u))
        res = minimize_scalar(
            lambda t: -ratio(u + t * scale * dn),
            bounds=(0.0, 4.0),
            method="bounded",
            options={"xatol": 1e-14},
        )
        trial = band(u + res.x * scale * dn)
        r_new = ratio(trial)
        if r_new <= r * (1.0 + tol):
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
        if r_new > r:
            u, r = trial / np.max(np.abs(trial)), r_new
    # first nonzero wavenumber on the side-2pi torus gives ratio exactly 1
    if not np.isfinite(r) or r < 1.0 - 1e-6:
        raise NoConvergence(f"ascent stalled at ratio {r}")
    return float(max(r, 1.0))
