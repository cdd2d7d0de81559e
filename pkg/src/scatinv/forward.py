"""Frequency-domain forward solver for the total field.

The scattering problem is posed as a volume integral equation over the
grid: ``u = u0 + k^2 * (Phi conv ((c-1) u))`` with the free-space kernel
``Phi(r) = exp(ikr) / (4 pi r)``.  The convolution is applied spectrally
on a 2x zero-padded grid; the singular self-cell carries the analytic
integral of the kernel over an equal-volume ball, which keeps the scheme
second-order accurate.  The fixed-point map is solved with restarted
GMRES.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as sla

from .errors import SolverConvergenceError, ValidationError
from .fields import Grid3, PlaneField, PlaneGrid, VolumeWave, fft_workers


@dataclass
class MediumField:
    """Real dielectric-constant field c(x) >= 1 on a grid."""

    grid: Grid3
    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != self.grid.shape:
            raise ValidationError(
                f"c shape {self.c.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.c)):
            raise ValidationError("c contains non-finite values")
        if np.min(self.c) < 1.0 - 1e-12:
            raise ValidationError(f"c must be >= 1 everywhere (min {self.c.min()})")

    def contrast(self):
        return self.c - 1.0


@dataclass
class ScatterSolveReport:
    k: float
    iterations: int
    residual: float


def air_medium(grid):
    return MediumField(grid, np.ones(grid.shape))


def greens_kernel(r, k):
    """Free-space kernel exp(ikr) / (4 pi r); r must be positive."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValidationError("kernel distance must be positive")
    out = np.exp(1j * k * r) / (4.0 * np.pi * r)
    if out.ndim == 0:
        return complex(out)
    return out


def _self_cell_integral(spacing, k):
    """Kernel integral over the singular cell via an equal-volume ball."""
    vol = spacing[0] * spacing[1] * spacing[2]
    radius = (3.0 * vol / (4.0 * np.pi)) ** (1.0 / 3.0)
    return (np.exp(1j * k * radius) * (1.0 - 1j * k * radius) - 1.0) / k**2


def kernel_table(grid: Grid3, k):
    """Padded (2nx, 2ny, 2nz) table of cell-weighted kernel values.

    Entry [a, b, c] holds the kernel for the wrapped node offset, so the
    circular convolution with this table equals the linear convolution
    for all in-domain offsets.
    """
    n = grid.counts
    s = grid.spacing
    offs = []
    for i in range(3):
        idx = np.arange(2 * n[i])
        idx = np.where(idx < n[i], idx, idx - 2 * n[i])
        offs.append(idx * s[i])
    dx, dy, dz = np.meshgrid(*offs, indexing="ij")
    r = np.sqrt(dx**2 + dy**2 + dz**2)
    table = np.zeros(r.shape, dtype=np.complex128)
    nz = r > 0
    table[nz] = np.exp(1j * k * r[nz]) / (4.0 * np.pi * r[nz]) * grid.cell_volume
    table[0, 0, 0] = _self_cell_integral(s, k)
    return table


def gradient_kernel_tables(grid: Grid3, k):
    """Padded tables of the kernel gradient components (self cell is zero)."""
    n = grid.counts
    s = grid.spacing
    offs = []
    for i in range(3):
        idx = np.arange(2 * n[i])
        idx = np.where(idx < n[i], idx, idx - 2 * n[i])
        offs.append(idx * s[i])
    dx, dy, dz = np.meshgrid(*offs, indexing="ij")
    r = np.sqrt(dx**2 + dy**2 + dz**2)
    nz = r > 0
    radial = np.zeros(r.shape, dtype=np.complex128)
    # d(Phi)/dr = (ik - 1/r) Phi
    radial[nz] = (
        (1j * k - 1.0 / r[nz])
        * np.exp(1j * k * r[nz])
        / (4.0 * np.pi * r[nz])
        * grid.cell_volume
        / r[nz]
    )
    return tuple(radial * d for d in (dx, dy, dz))


_HAT_CACHE = {}


def _hat_key(grid, k, kind):
    return (grid.counts, grid.spacing, round(float(k), 12), kind)


def kernel_hat(grid, k):
    key = _hat_key(grid, k, "value")
    if key not in _HAT_CACHE:
        if len(_HAT_CACHE) > 12:
            _HAT_CACHE.clear()
        _HAT_CACHE[key] = sfft.fftn(kernel_table(grid, k), workers=fft_workers())
    return _HAT_CACHE[key]


def gradient_kernel_hats(grid, k):
    key = _hat_key(grid, k, "gradient")
    if key not in _HAT_CACHE:
        if len(_HAT_CACHE) > 12:
            _HAT_CACHE.clear()
        _HAT_CACHE[key] = tuple(
            sfft.fftn(t, workers=fft_workers()) for t in gradient_kernel_tables(grid, k)
        )
    return _HAT_CACHE[key]


def _convolve(hat, source):
    shape = hat.shape
    big = sfft.fftn(source, s=shape, workers=fft_workers())
    out = sfft.ifftn(hat * big, workers=fft_workers())
    nx, ny, nz = source.shape
    return out[:nx, :ny, :nz]


def dense_reference_solution(medium: MediumField, k):
    """Direct LU solve of the same discretized integral system.

    Builds the full matrix from the kernel table (identical entries to
    the spectral path) and factorizes it; practical only on small grids
    but independent of the FFT/Krylov machinery.
    """
    grid = medium.grid
    n = grid.counts
    nn = int(np.prod(n))
    table = kernel_table(grid, k)
    chi = medium.contrast().ravel()
    ii = np.arange(nn)
    ix, iy, iz = np.unravel_index(ii, n)
    ox = (ix[:, None] - ix[None, :]) % (2 * n[0])
    oy = (iy[:, None] - iy[None, :]) % (2 * n[1])
    oz = (iz[:, None] - iz[None, :]) % (2 * n[2])
    a = np.eye(nn, dtype=np.complex128) - (k * k) * table[ox, oy, oz] * chi[None, :]
    b = incident_wave(grid, k).values.ravel()
    sol = np.linalg.solve(a, b)
    return VolumeWave(grid, sol.reshape(n))


def incident_wave(grid, k):
    """Plane wave exp(i k x3) travelling along the x3 axis."""
    z = grid.axis(2)
    vals = np.broadcast_to(np.exp(1j * k * z), grid.shape).copy()
    return VolumeWave(grid, vals)


def _check_contrast_margin(medium):
    chi = medium.contrast()
    touched = (
        np.any(chi[0, :, :] != 0)
        or np.any(chi[-1, :, :] != 0)
        or np.any(chi[:, 0, :] != 0)
        or np.any(chi[:, -1, :] != 0)
        or np.any(chi[:, :, 0] != 0)
        or np.any(chi[:, :, -1] != 0)
    )
    if touched:
        raise ValidationError("contrast support touches the grid boundary")


_KRYLOV_MEMORY_BUDGET = 6e8  # bytes of basis storage allowed per solve


def solve_total_field(
    medium: MediumField, k, rtol=1e-6, restart=None, max_iterations=1500, x0=None
):
    """Total field u(x, k) for the given medium.

    Returns (VolumeWave, ScatterSolveReport).  The restart length adapts
    to the grid size (long Krylov recurrences pay off for strong
    scatterers); a stalled GMRES falls back to BiCGSTAB, which needs no
    basis storage.  The reported residual is recomputed by one
    application of the integral operator after the solve, independent of
    the Krylov recurrence.
    """
    if k <= 0:
        raise ValidationError("wave number must be positive")
    _check_contrast_margin(medium)
    grid = medium.grid
    chi = medium.contrast()
    u0 = incident_wave(grid, k).values

    if np.max(np.abs(chi)) == 0.0:
        return VolumeWave(grid, u0), ScatterSolveReport(k, 0, 0.0)

    hat = kernel_hat(grid, k)
    shape = grid.shape
    nn = int(np.prod(shape))
    k2 = k * k

    def apply_op(vec):
        u = vec.reshape(shape)
        return (u - k2 * _convolve(hat, chi * u)).ravel()

    op = sla.LinearOperator((nn, nn), matvec=apply_op, dtype=np.complex128)
    b = u0.ravel()
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    if restart is None:
        restart = int(min(400, max(60, _KRYLOV_MEMORY_BUDGET / (16 * nn))))
    cycles = max(1, math.ceil(max_iterations / restart))
    x0_vec = (x0.values if isinstance(x0, VolumeWave) else x0)
    x0_vec = b.copy() if x0_vec is None else np.asarray(x0_vec).ravel()
    sol, info = sla.gmres(
        op,
        b,
        x0=x0_vec,
        rtol=rtol,
        atol=0.0,
        restart=restart,
        maxiter=cycles,
        callback=count,
        callback_type="pr_norm",
    )
    residual = np.linalg.norm(apply_op(sol) - b) / np.linalg.norm(b)
    if info != 0 or residual > rtol:
        sol, info = sla.bicgstab(
            op, b, x0=sol, rtol=rtol, atol=0.0,
            maxiter=4 * max_iterations, callback=count,
        )
        residual = np.linalg.norm(apply_op(sol) - b) / np.linalg.norm(b)
    if residual > rtol:
        raise SolverConvergenceError(
            f"scattering solve at k={k:g} stalled at residual {residual:.3e} "
            f"after {iterations} iterations",
            residual=residual,
            iterations=iterations,
        )
    u = VolumeWave(grid, sol.reshape(shape)).require_finite("in total field")
    return u, ScatterSolveReport(k, iterations, residual)


def total_field_gradient(medium: MediumField, u: VolumeWave, k):
    """Gradient of the total field via the integral representation.

    The incident part is differentiated analytically, the scattered part
    through the kernel-gradient convolutions, so a contrast-free medium
    yields exactly (0, 0, ik) * u.
    """
    grid = medium.grid
    chi = medium.contrast()
    u0z = 1j * k * incident_wave(grid, k).values
    if np.max(np.abs(chi)) == 0.0:
        zero = np.zeros(grid.shape, dtype=np.complex128)
        return (
            VolumeWave(grid, zero),
            VolumeWave(grid, zero.copy()),
            VolumeWave(grid, u0z),
        )
    hats = gradient_kernel_hats(grid, k)
    src = chi * u.values
    k2 = k * k
    comps = []
    for axis in range(3):
        part = k2 * _convolve(hats[axis], src)
        if axis == 2:
            part = part + u0z
        comps.append(VolumeWave(grid, part).require_finite("in field gradient"))
    return tuple(comps)


def scattered_on_plane(medium: MediumField, u: VolumeWave, k, plane: PlaneGrid):
    """Scattered field on an external plane from the volume solution."""
    grid = medium.grid
    chi = medium.contrast()
    weights = (k * k) * chi * u.values * grid.cell_volume
    idx = np.nonzero(chi)
    if idx[0].size == 0:
        return PlaneField(plane, k, np.zeros(plane.shape, dtype=np.complex128))

    zs = grid.axis(2)[idx[2]]
    zmin, zmax = zs.min() - grid.spacing[2], zs.max() + grid.spacing[2]
    if zmin <= plane.x3 <= zmax:
        raise ValidationError("evaluation plane intersects the contrast support")

    ys = np.stack(
        [grid.axis(0)[idx[0]], grid.axis(1)[idx[1]], zs], axis=1
    )  # (ns, 3)
    w = weights[idx]

    x1, x2 = plane.meshgrid()
    pts = np.stack([x1.ravel(), x2.ravel(), np.full(x1.size, plane.x3)], axis=1)
    out = np.empty(pts.shape[0], dtype=np.complex128)
    chunk = max(1, int(4e6 // max(1, ys.shape[0])))
    for start in range(0, pts.shape[0], chunk):
        block = pts[start : start + chunk]
        diff = block[:, None, :] - ys[None, :, :]
        r = np.sqrt(np.sum(diff * diff, axis=2))
        out[start : start + chunk] = (np.exp(1j * k * r) / (4.0 * np.pi * r)) @ w
    return PlaneField(plane, k, out.reshape(plane.shape))
