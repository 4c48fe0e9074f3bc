"""Uniform-grid fields on a rectangle, discrete calculus, norms and smoothing.

Layout conventions
------------------
Arrays are indexed ``[iy, ix, ...]`` (y outer, x inner), so ``values.ravel()``
is row-major with the component index innermost. Gradients are stored as
``(d/dx1, d/dx2)``; Jacobians as ``J[..., i, j] = d F_i / d x_j``. Symmetric
tensors store ``(m11, m12, m22)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage, signal

from .errors import ConfigError, GridMismatch

MIN_NODES = 9


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int = None
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        object.__setattr__(self, "domain", tuple(float(d) for d in self.domain))
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise ConfigError(f"grid needs at least {MIN_NODES} nodes per axis, got {self.nx}x{self.ny}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError(f"degenerate domain {self.domain}")
        if not math.isclose(self.hx, self.hy, rel_tol=1e-12):
            raise ConfigError(f"grid spacing must be isotropic (hx={self.hx}, hy={self.hy})")

    @property
    def hx(self):
        return (self.domain[1] - self.domain[0]) / (self.nx - 1)

    @property
    def hy(self):
        return (self.domain[3] - self.domain[2]) / (self.ny - 1)

    @property
    def h(self):
        return self.hx

    @property
    def shape(self):
        return (self.ny, self.nx)

    def axes(self):
        x0, x1, y0, y1 = self.domain
        return np.linspace(x0, x1, self.nx), np.linspace(y0, y1, self.ny)

    def coords(self):
        """Node coordinates as two ``(ny, nx)`` arrays."""
        xs, ys = self.axes()
        return np.meshgrid(xs, ys, indexing="xy")

    def points(self):
        """Node coordinates as one ``(ny, nx, 2)`` array."""
        return np.stack(self.coords(), axis=-1)

    def quadrature_weights(self):
        """Trapezoidal weights (1/2 on edges, 1/4 on corners) times the cell area."""
        wx = np.ones(self.nx)
        wx[[0, -1]] = 0.5
        wy = np.ones(self.ny)
        wy[[0, -1]] = 0.5
        return np.outer(wy, wx) * (self.hx * self.hy)


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class _Field:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    ncomp = 1
    kind = ""

    def __post_init__(self):
        vals = _frozen(self.values)
        expected = self.spec.shape + self.component_shape
        if vals.shape != expected:
            if vals.size == int(np.prod(expected)):
                vals = _frozen(vals.reshape(expected))
            else:
                raise ValueError(f"{type(self).__name__} expects shape {expected}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{type(self).__name__} contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def component_shape(self):
        return () if self.ncomp == 1 else (self.ncomp,)

    def with_values(self, values):
        return type(self)(self.spec, values)

    def __add__(self, other):
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, s):
        return self.with_values(self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    @classmethod
    def zeros(cls, spec):
        return cls(spec, np.zeros(spec.shape + (() if cls.ncomp == 1 else (cls.ncomp,))))


class ScalarField(_Field):
    ncomp = 1
    kind = "scalar"

    # values are read-only, so derivatives can be cached on the instance
    @cached_property
    def gradient(self):
        return PlanarMapField(self.spec, _gradient_array(self.values, self.spec))

    @cached_property
    def hessian(self):
        return grad_map(self.gradient).sym()


class PlanarMapField(_Field):
    ncomp = 2
    kind = "map2"


class SymTensorField(_Field):
    ncomp = 3
    kind = "symtensor"

    @classmethod
    def constant(cls, spec, m11, m12, m22):
        vals = np.empty(spec.shape + (3,))
        vals[...] = (m11, m12, m22)
        return cls(spec, vals)

    @classmethod
    def from_matrices(cls, spec, mats):
        mats = np.asarray(mats, dtype=float)
        return cls(spec, np.stack([mats[..., 0, 0], 0.5 * (mats[..., 0, 1] + mats[..., 1, 0]), mats[..., 1, 1]], axis=-1))

    def matrices(self):
        m = self.values
        return np.stack([np.stack([m[..., 0], m[..., 1]], -1), np.stack([m[..., 1], m[..., 2]], -1)], -2)

    def eigenvalues(self):
        """Pointwise (smaller, larger) eigenvalue arrays."""
        m11, m12, m22 = np.moveaxis(self.values, -1, 0)
        mean = 0.5 * (m11 + m22)
        rad = np.hypot(0.5 * (m11 - m22), m12)
        return mean - rad, mean + rad


class ImmersionField(_Field):
    ncomp = 3
    kind = "map3"


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Full 2x2 matrix per node, ``values[..., i, j]``; the output of grad_map."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != self.spec.shape + (2, 2):
            raise ValueError(f"MatrixField expects shape {self.spec.shape + (2, 2)}, got {self.values.shape}")

    def sym(self):
        J = self.values
        return SymTensorField(self.spec, np.stack([J[..., 0, 0], 0.5 * (J[..., 0, 1] + J[..., 1, 0]), J[..., 1, 1]], -1))


FIELD_KINDS = {cls.kind: cls for cls in (ScalarField, PlanarMapField, SymTensorField, ImmersionField)}


def _check_same(a, b):
    if a.spec != b.spec:
        raise GridMismatch(f"grid mismatch: {a.spec} vs {b.spec}")
    if type(a) is not type(b):
        raise TypeError(f"cannot combine {type(a).__name__} with {type(b).__name__}")


def require_same_grid(*fields):
    spec = fields[0].spec
    for f in fields[1:]:
        if f.spec != spec:
            raise GridMismatch(f"grid mismatch: {spec} vs {f.spec}")
    return spec


# ---------------------------------------------------------------------------
# discrete calculus


def _gradient_array(arr, spec):
    """Gradient of a (ny, nx, ...) array; returns (ny, nx, ..., 2) with d/dx first."""
    gy, gx = np.gradient(arr, spec.hy, spec.hx, axis=(0, 1), edge_order=2)
    return np.stack([gx, gy], axis=-1)


def grad_scalar(f):
    return f.gradient


def grad_map(F):
    return MatrixField(F.spec, _gradient_array(F.values, F.spec))


def hessian(f):
    """Symmetrized composition of the first-derivative stencils."""
    return f.hessian


def outer_self(g):
    """``g (x) g`` for a PlanarMapField, as a SymTensorField."""
    gx, gy = g.values[..., 0], g.values[..., 1]
    return SymTensorField(g.spec, np.stack([gx * gx, gx * gy, gy * gy], -1))


def vk_residual(v, w, A):
    """Deficit ``A - grad v (x) grad v - 2 sym grad w``."""
    require_same_grid(v, w, A)
    gv = grad_scalar(v).values
    J = grad_map(w).values
    d = np.empty(A.values.shape)
    d[..., 0] = A.values[..., 0] - gv[..., 0] ** 2 - 2.0 * J[..., 0, 0]
    d[..., 1] = A.values[..., 1] - gv[..., 0] * gv[..., 1] - (J[..., 0, 1] + J[..., 1, 0])
    d[..., 2] = A.values[..., 2] - gv[..., 1] ** 2 - 2.0 * J[..., 1, 1]
    return SymTensorField(A.spec, d)


def shortness_margin(v, w, A):
    """Smallest eigenvalue of the deficit over all nodes (positive means short)."""
    lo, _ = vk_residual(v, w, A).eigenvalues()
    return float(lo.min())


# ---------------------------------------------------------------------------
# norms


def sym_spectral(vals):
    """Largest absolute eigenvalue of packed symmetric 2x2 matrices."""
    m11, m12, m22 = vals[..., 0], vals[..., 1], vals[..., 2]
    return np.abs(0.5 * (m11 + m22)) + np.hypot(0.5 * (m11 - m22), m12)


def mat_spectral(vals):
    """Largest singular value of general 2x2 matrices ``vals[..., i, j]``."""
    a, b, c, d = vals[..., 0, 0], vals[..., 0, 1], vals[..., 1, 0], vals[..., 1, 1]
    s = 0.5 * (a * a + b * b + c * c + d * d)
    det = a * d - b * c
    return np.sqrt(s + np.sqrt(np.maximum(s * s - det * det, 0.0)))


def magnitude(f):
    """Pointwise magnitude: |.| for scalars and vectors, spectral norm for tensors."""
    if isinstance(f, MatrixField):
        return mat_spectral(f.values)
    if isinstance(f, SymTensorField):
        return sym_spectral(f.values)
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    return np.sqrt(np.sum(f.values**2, axis=-1))


def _pointwise(f, diff):
    if isinstance(f, MatrixField):
        return mat_spectral(diff)
    if isinstance(f, SymTensorField):
        return sym_spectral(diff)
    if isinstance(f, ScalarField):
        return np.abs(diff)
    return np.sqrt(np.sum(diff**2, axis=-1))


def holder_seminorm(f, beta):
    """Dyadic-pair estimate of ``[f]_beta``.

    Every node is a base point; partners sit at offsets (2^j h, 0), (0, 2^j h)
    and (2^j h, 2^j h). This is a lower bound for the true seminorm.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"Hoelder exponent must lie in (0, 1), got {beta}")
    spec = f.spec
    vals = f.values
    ny, nx = spec.shape
    best = 0.0
    s = 1
    while s < max(nx, ny):
        for dx, dy in ((s, 0), (0, s), (s, s)):
            if dx >= nx or dy >= ny:
                continue
            diff = vals[dy:, dx:] - vals[: ny - dy, : nx - dx]
            dist = math.hypot(dx * spec.hx, dy * spec.hy)
            best = max(best, float(_pointwise(f, diff).max()) / dist**beta)
        s *= 2
    return best


def norm(f, kind="sup", p=2.0, beta=0.5):
    """Field norm: ``sup``, ``lp`` (trapezoidal quadrature) or ``holder`` seminorm."""
    if kind == "sup":
        return float(magnitude(f).max())
    if kind == "lp":
        if not p >= 1.0:
            raise ConfigError(f"L^p needs p >= 1, got {p}")
        integrand = magnitude(f) ** p * f.spec.quadrature_weights()
        return float(np.sum(integrand)) ** (1.0 / p)
    if kind == "holder":
        return holder_seminorm(f, beta)
    raise ConfigError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# mollification

_DIRECT_RADIUS = 32


def _smooth_axis(arr, kernel, axis):
    if len(kernel) // 2 <= _DIRECT_RADIUS:
        return ndimage.correlate1d(arr, kernel, axis=axis, mode="constant", cval=0.0)
    shape = [1] * arr.ndim
    shape[axis] = len(kernel)
    return signal.fftconvolve(arr, kernel.reshape(shape), mode="same", axes=axis)


def gaussian_kernel(length, h):
    radius = int(math.ceil(4.0 * length / h))
    offsets = np.arange(-radius, radius + 1) * h
    k = np.exp(-0.5 * (offsets / length) ** 2)
    return k / k.sum()


def mollify(f, length):
    """Truncated-Gaussian smoothing (std ``length``, cut at 4 std).

    Near the boundary the kernel is renormalized over the nodes that exist,
    so constants are reproduced exactly.
    """
    spec = f.spec
    if length < 2.0 * spec.h * (1 - 1e-12):
        raise ConfigError(f"mollification length {length} is below 2h = {2 * spec.h}")
    k = gaussian_kernel(length, spec.h)
    out = np.asarray(f.values, dtype=float)
    for axis, n in ((0, spec.ny), (1, spec.nx)):
        ones = np.ones(n)
        norm1d = _smooth_axis(ones, k, 0)
        shape = [1] * out.ndim
        shape[axis] = n
        out = _smooth_axis(out, k, axis) / norm1d.reshape(shape)
    return f.with_values(out)


# ---------------------------------------------------------------------------
# synthetic data


def _fourier_component(rng, spec, beta):
    """Real random Fourier sum with |k|^-(beta+1) amplitudes on the periodic grid."""
    my, mx = spec.ny - 1, spec.nx - 1
    ky = np.fft.fftfreq(my, d=1.0 / my)
    kx = np.fft.fftfreq(mx, d=1.0 / mx)
    kk = np.hypot(ky[:, None], kx[None, :])
    amp = np.zeros_like(kk)
    nz = kk > 0
    amp[nz] = kk[nz] ** (-(beta + 1.0))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=kk.shape)
    coef = amp * np.exp(1j * phases)
    periodic = np.real(np.fft.ifft2(coef)) * (mx * my)
    return np.pad(periodic, ((0, 1), (0, 1)), mode="wrap")


def synth_holder_tensor(beta, seed, amplitude, spec):
    """Seeded symmetric tensor field with Hoelder-``beta`` spectral decay.

    Scaled so its sup norm (pointwise spectral) equals ``amplitude``.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"Hoelder exponent must lie in (0, 1), got {beta}")
    if amplitude == 0:
        return SymTensorField.zeros(spec)
    rng = np.random.default_rng(seed)
    comps = np.stack([_fourier_component(rng, spec, beta) for _ in range(3)], axis=-1)
    scale = sym_spectral(comps).max()
    return SymTensorField(spec, comps * (amplitude / scale))
