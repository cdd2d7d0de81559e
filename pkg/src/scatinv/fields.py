"""Uniform 3D grids, complex volume/plane fields, and the discrete
operators shared by every other module.

Differentiation uses second-order central differences in the interior
and second-order one-sided stencils on the faces, so gradients of affine
fields are exact everywhere.  The 2D plane transform is unitary with a
``e^{+i k.x}`` forward kernel; the time transform is a trapezoid rule
for ``int f(t) e^{ikt} dt``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import geometry
from .errors import ValidationError


def fft_workers():
    """Worker count for scipy.fft, overridable via SCATINV_THREADS."""
    import os

    raw = os.environ.get("SCATINV_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else -1


@dataclass
class Grid3:
    """Uniform node-centered 3D grid: ``x_i = origin + i * spacing``."""

    origin: tuple
    spacing: tuple
    counts: tuple

    def __post_init__(self):
        self.origin = tuple(float(v) for v in self.origin)
        self.spacing = tuple(float(v) for v in self.spacing)
        self.counts = tuple(int(v) for v in self.counts)
        if any(s <= 0 for s in self.spacing):
            raise ValidationError("grid spacing must be strictly positive")
        if any(n < 2 for n in self.counts):
            raise ValidationError("grid needs at least 2 nodes per axis")

    @property
    def shape(self):
        return self.counts

    @property
    def cell_volume(self):
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def axis(self, i):
        return self.origin[i] + self.spacing[i] * np.arange(self.counts[i])

    def axes(self):
        return tuple(self.axis(i) for i in range(3))

    def meshgrid(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def upper(self):
        return tuple(self.axis(i)[-1] for i in range(3))


def domain_grid(n=64):
    """Default grid over the 5x5x5 computational domain."""
    lo, hi = geometry.OMEGA_LO, geometry.OMEGA_HI
    counts = (n, n, n)
    spacing = tuple((hi[i] - lo[i]) / (counts[i] - 1) for i in range(3))
    return Grid3(lo, spacing, counts)


@dataclass
class VolumeWave:
    """Complex scalar field sampled on a Grid3."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValidationError(
                f"value shape {self.values.shape} != grid shape {self.grid.shape}"
            )

    def require_finite(self, context=""):
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"non-finite field values {context}".strip())
        return self


@dataclass
class PlaneGrid:
    """2D lattice on a constant-x3 plane."""

    x3: float
    origin2: tuple
    spacing2: tuple
    counts2: tuple

    def __post_init__(self):
        self.x3 = float(self.x3)
        self.origin2 = tuple(float(v) for v in self.origin2)
        self.spacing2 = tuple(float(v) for v in self.spacing2)
        self.counts2 = tuple(int(v) for v in self.counts2)
        if any(s <= 0 for s in self.spacing2):
            raise ValidationError("plane spacing must be strictly positive")
        if any(n < 1 for n in self.counts2):
            raise ValidationError("plane needs at least one node per axis")

    @property
    def shape(self):
        return self.counts2

    def axis(self, i):
        return self.origin2[i] + self.spacing2[i] * np.arange(self.counts2[i])

    def axes(self):
        return self.axis(0), self.axis(1)

    def meshgrid(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def at_x3(self, x3):
        return PlaneGrid(x3, self.origin2, self.spacing2, self.counts2)


def measurement_grid(x3=geometry.MEASUREMENT_PLANE_X3):
    """The 51x51, 0.2-step detector lattice spanning the 10x10 square."""
    n = geometry.MEASUREMENT_COUNT
    step = geometry.MEASUREMENT_STEP
    return PlaneGrid(x3, (-geometry.SM_HALF, -geometry.SM_HALF), (step, step), (n, n))


@dataclass
class PlaneField:
    """Complex 2D field on a plane lattice, tagged with its wave number."""

    plane: PlaneGrid
    k: float
    values: np.ndarray

    def __post_init__(self):
        self.k = float(self.k)
        if self.k <= 0:
            raise ValidationError("plane field wave number must be positive")
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.plane.shape:
            raise ValidationError(
                f"value shape {self.values.shape} != plane shape {self.plane.shape}"
            )


def gradient_arrays(values, spacing):
    """Per-axis second-order derivatives of a raw 3D array."""
    return tuple(
        np.gradient(values, spacing[i], axis=i, edge_order=2) for i in range(3)
    )


def divergence_arrays(gx, gy, gz, spacing):
    """Divergence built from the same stencils as ``gradient_arrays``."""
    return (
        np.gradient(gx, spacing[0], axis=0, edge_order=2)
        + np.gradient(gy, spacing[1], axis=1, edge_order=2)
        + np.gradient(gz, spacing[2], axis=2, edge_order=2)
    )


def gradient3(f: VolumeWave):
    """Gradient of a volume field; returns the three component fields."""
    if any(n < 3 for n in f.grid.counts):
        raise ValidationError("gradient needs at least 3 nodes per axis")
    comps = gradient_arrays(f.values, f.grid.spacing)
    return tuple(VolumeWave(f.grid, c).require_finite("in gradient3") for c in comps)


def divergence3(g):
    """Divergence of a 3-component field tuple sharing one grid."""
    gx, gy, gz = g
    if gx.grid != gy.grid or gx.grid != gz.grid:
        raise ValidationError("divergence components must share one grid")
    if any(n < 3 for n in gx.grid.counts):
        raise ValidationError("divergence needs at least 3 nodes per axis")
    div = divergence_arrays(gx.values, gy.values, gz.values, gx.grid.spacing)
    return VolumeWave(gx.grid, div).require_finite("in divergence3")


def laplacian3(f: VolumeWave):
    """divergence3(gradient3(f)) convenience composition."""
    return divergence3(gradient3(f))


def transverse_wavenumbers(plane: PlaneGrid):
    """Angular wave-number samples (k1, k2) matching the plane DFT bins."""
    n1, n2 = plane.counts2
    k1 = 2.0 * np.pi * sfft.fftfreq(n1, d=plane.spacing2[0])
    k2 = 2.0 * np.pi * sfft.fftfreq(n2, d=plane.spacing2[1])
    return k1, k2


def dft2_forward(p: PlaneField):
    """Unitary 2D transform with e^{+i k.x} kernel (spectrum as raw array)."""
    return sfft.ifft2(p.values, norm="ortho", workers=fft_workers())


def dft2_inverse(spectrum, plane: PlaneGrid, k):
    """Inverse of :func:`dft2_forward`, back onto the plane lattice."""
    vals = sfft.fft2(spectrum, norm="ortho", workers=fft_workers())
    return PlaneField(plane, k, vals)


def dft_time(trace, dt, ks):
    """Trapezoid quadrature of ``int f(t) e^{ikt} dt`` over the record.

    Parameters
    ----------
    trace : real samples, shape (nt,) or (nrows, nt)
    dt : sample interval (dimensionless time)
    ks : wave numbers to evaluate

    Returns complex values with shape (nk,) or (nrows, nk).
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0 or trace.shape[-1] == 0:
        raise ValidationError("empty trace")
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if not np.all(np.isfinite(trace)):
        raise ValidationError("trace contains non-finite samples")
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    nt = trace.shape[-1]
    t = dt * np.arange(nt)
    weights = np.full(nt, dt)
    if nt > 1:
        weights[0] = weights[-1] = 0.5 * dt
    else:
        weights[0] = dt
    kernel = np.exp(1j * np.outer(ks, t)) * weights  # (nk, nt)
    out = trace @ kernel.T
    return out
