"""Globally convergent multi-frequency inversion.

The unknown coefficient is recovered through a double iteration over the
working wave-number lattice.  Writing the total field as ``exp(v)``, the
wave-number derivative ``q = dv/dk`` satisfies an elliptic equation
coupled to the running sum of previous q's and to the gradient/Laplacian
of the truncation-wave-number log-field (the tail).  Each (n, i) step
solves that equation, rebuilds c from the accumulated v, truncates and
smooths it, and refreshes the tail through the forward solver.

The discrete q-equation below keeps the exact wave-number moments of the
k-integrated equation instead of dropping O(h) terms: with
``mu = k_prev + h/2`` and a drift that carries the tail gradient
implicitly,

    lap q + (2 grad V - 2h grad qbar) . grad q - (k_prev h / mu)(grad q)^2
        = (2/mu) (lap V + (grad V)^2 + h^2 (grad qbar)^2
                  - h lap qbar - 2h grad qbar . grad V).

This form is satisfied exactly by the contrast-free solution
``q = i x3`` at every step, which pins the air fixed point at round-off
instead of O(h).  The mild quadratic term is resolved by a short Picard
loop (its coefficient is O(h)).
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geometry
from .elliptic import (FACES, face_shape, lap7_interior, poisson_solver,
                       solve_convection)
from .errors import NumericalError, SolverConvergenceError, ValidationError
from .fields import Grid3, PlaneField, divergence_arrays, gradient_arrays
from .forward import MediumField, solve_total_field, total_field_gradient
from .freqprep import BoundaryData, interp_plane, sp_mask

log = logging.getLogger(__name__)


@dataclass
class InversionConfig:
    k_low: float = geometry.K_WORK_LOW
    k_high: float = geometry.K_WORK_HIGH
    subintervals: int = geometry.N_SUBINTERVALS
    inner_iterations: int = 3
    truncation_level: float = 0.7
    x3_window: tuple = (-0.75, 1.0)
    smoothing_passes: int = 1
    q_rtol: float = 1e-8
    picard_tol: float = 5e-9
    picard_max: int = 8
    forward_rtol: float = 1e-6
    forward_restart: int = 80
    forward_max_iterations: int = 1000

    def __post_init__(self):
        if self.subintervals < 1 or self.inner_iterations < 1:
            raise ValidationError("need at least one subinterval and inner step")
        if not (0 < self.truncation_level < 1):
            raise ValidationError("truncation level must lie in (0, 1)")
        if self.k_high <= self.k_low:
            raise ValidationError("empty working interval")

    @property
    def h(self):
        return (self.k_high - self.k_low) / self.subintervals

    def k_at(self, j):
        """Lattice value k_j = k_high - j h (j = 0 is the truncation node)."""
        return self.k_high - j * self.h


@dataclass
class TailState:
    """Gradient and Laplacian data of the log-field at the truncation
    wave number.

    The iteration consumes the gradient together with the combination
    ``helmholtz_combo = lap V + (grad V)^2``.  For a tail refreshed
    through the forward solver that combination equals ``-kbar^2 c``
    identically, which sidesteps finite differences of the field ratio;
    those blow up near interior nulls of the total field at strong
    contrast.
    """

    grad_v: tuple  # three full-grid complex arrays
    helmholtz_combo: np.ndarray

    @property
    def lap_v(self):
        """Laplacian implied by the stored combination."""
        return self.helmholtz_combo - sum(g**2 for g in self.grad_v)

    def divergence_laplacian(self, grid: Grid3):
        """Laplacian via divergence of the stored gradient (diagnostic)."""
        return divergence_arrays(*self.grad_v, grid.spacing)

    @classmethod
    def from_gradient(cls, grid: Grid3, grad_v):
        grad_v = tuple(np.asarray(g, dtype=np.complex128) for g in grad_v)
        lap = divergence_arrays(*grad_v, grid.spacing)
        return cls(grad_v, lap + sum(g**2 for g in grad_v))


@dataclass
class TruncationMask:
    """Transverse footprint times x3 window where c may differ from air."""

    mask2d: np.ndarray  # (nx, ny) boolean on the grid's transverse lattice
    x3_window: tuple

    def volume_mask(self, grid: Grid3):
        z = grid.axis(2)
        inside = (z > self.x3_window[0]) & (z < self.x3_window[1])
        return self.mask2d[:, :, None] & inside[None, None, :]

    @classmethod
    def empty(cls, grid: Grid3, window=(-0.75, 1.0)):
        return cls(np.zeros(grid.counts[:2], dtype=bool), tuple(window))


def truncation_mask(field_kbar: PlaneField, grid: Grid3, level=0.7,
                    window=(-0.75, 1.0)):
    """Footprint where propagated-data magnitude exceeds level * peak.

    The magnitude is resampled onto the grid's transverse lattice; the
    peak is taken over the restriction square.
    """
    mag_plane = np.abs(np.where(sp_mask(field_kbar.plane), field_kbar.values, 0.0))
    ref = PlaneField(field_kbar.plane, field_kbar.k, mag_plane)
    mag = np.abs(interp_plane(ref, grid.axis(0), grid.axis(1)))
    peak = float(np.max(mag))
    if peak <= 0:
        return TruncationMask.empty(grid, window)
    return TruncationMask(mag > level * peak, tuple(window))


def initial_tail(boundary: BoundaryData, grid: Grid3):
    """First tail from harmonic extensions of the boundary log-derivatives.

    Each gradient component solves a Laplace problem: on the data face it
    matches (grad u)/u built from the assembled boundary data; the
    transverse components vanish on the remaining faces while the x3
    component carries the incident value ik there.  The Laplacian of
    this first tail is taken as zero (harmonic ansatz).
    """
    if boundary.grid is not grid and boundary.grid != grid:
        raise ValidationError("boundary data assembled for a different grid")
    kbar = boundary.kbar
    g_gamma = boundary.g_hat[-1]["x3lo"]
    if np.min(np.abs(g_gamma)) < 1e-12:
        raise NumericalError("total-field data vanish on the data face")
    solver = poisson_solver(grid)
    grad = []
    for j in range(3):
        faces = {}
        for face in FACES:
            if face == "x3lo":
                faces[face] = boundary.grad_on_gamma[j] / g_gamma
            elif j == 2:
                faces[face] = np.full(
                    face_shape(grid, face), 1j * kbar, dtype=np.complex128
                )
            else:
                faces[face] = np.zeros(face_shape(grid, face), dtype=np.complex128)
        grad.append(solver.solve(faces))
    grad = tuple(grad)
    # Harmonic ansatz: the first tail's Laplacian is zero.
    return TailState(grad, sum(g**2 for g in grad))


def solve_q_step(grid: Grid3, tail: TailState, q_bar, psi_faces, n,
                 config: InversionConfig, q_init=None):
    """One elliptic solve for q on subinterval n (Dirichlet data psi).

    Returns (q full array, info dict).  The quadratic gradient term is
    lagged against the latest iterate and re-solved until the nonlinear
    residual is negligible.
    """
    h = config.h
    k_prev = config.k_at(n - 1)
    mu = k_prev + 0.5 * h
    gamma = k_prev * h / mu

    gq_bar = gradient_arrays(q_bar, grid.spacing)
    gv = tail.grad_v
    rhs = np.zeros(grid.shape, dtype=np.complex128)
    lap_qbar_int = lap7_interior(q_bar, grid.spacing)
    inner = (slice(1, -1),) * 3
    gv_sq = sum(g[inner] ** 2 for g in gv)
    gqb_sq = sum(g[inner] ** 2 for g in gq_bar)
    gqb_dot_gv = sum(gq_bar[j][inner] * gv[j][inner] for j in range(3))
    rhs[inner] = (2.0 / mu) * (
        tail.lap_v[inner] + gv_sq + h * h * gqb_sq
        - h * lap_qbar_int - 2.0 * h * gqb_dot_gv
    )

    base_drift = tuple(2.0 * gv[j] - 2.0 * h * gq_bar[j] for j in range(3))
    pe_qbar = max(
        float(np.max(np.abs(2.0 * h * gq_bar[j]))) * grid.spacing[j] / 2.0
        for j in range(3)
    )
    if pe_qbar > 2.0:
        warnings.warn(
            f"running-sum drift grid-Peclet {pe_qbar:.2f} exceeds 2; "
            "central differencing may oscillate"
        )

    # Newton on the quadratic term: linearizing (grad q)^2 about the
    # latest iterate doubles the lag drift and adds -(gamma)(grad
    # q_lag)^2 to the right side; plain one-sided lagging is an unstable
    # fixed-point map here because the operator is interior-Helmholtz
    # like and amplifies lag updates.
    q_lag = np.zeros(grid.shape, dtype=np.complex128) if q_init is None else q_init
    info = {}
    q = None
    for sweep in range(config.picard_max):
        g_lag = gradient_arrays(q_lag, grid.spacing)
        drift = tuple(base_drift[j] - 2.0 * gamma * g_lag[j] for j in range(3))
        rhs_newton = rhs.copy()
        rhs_newton[inner] -= gamma * sum(g[inner] ** 2 for g in g_lag)
        q_new, info = solve_convection(
            grid, drift, rhs_newton, psi_faces, rtol=config.q_rtol
        )
        delta = np.linalg.norm(q_new - q_lag) / max(np.linalg.norm(q_new), 1e-300)
        q_lag = q_new
        q = q_new
        info["picard_sweeps"] = sweep + 1
        info["picard_delta"] = delta
        if delta < config.picard_tol:
            break
    else:
        if info.get("picard_delta", 1.0) > 1e-7:
            raise SolverConvergenceError(
                f"quadratic-term iteration stalled at relative change "
                f"{info['picard_delta']:.3e} in subinterval {n}"
            )
        log.debug(
            "quadratic-term iteration settled at solver-noise level "
            "%.2e in subinterval %d", info["picard_delta"], n,
        )
    info["peclet_qbar"] = pe_qbar
    return q, info


def update_coefficient(grid: Grid3, q, q_bar, tail: TailState, k_cur,
                       mask: TruncationMask, config: InversionConfig):
    """Coefficient from the accumulated log-field, truncated and smoothed.

    grad v = -(h grad q + h grad qbar) + grad V, then
    c = -(lap v + (grad v)^2) / k^2; the modulus is kept on the masked
    region, air elsewhere, followed by box smoothing and the c >= 1 floor.
    """
    h = config.h
    gq = gradient_arrays(q, grid.spacing)
    gqb = gradient_arrays(q_bar, grid.spacing)
    grad_v = tuple(-(h * gq[j] + h * gqb[j]) + tail.grad_v[j] for j in range(3))
    lap_v = divergence_arrays(*grad_v, grid.spacing)
    c_raw = -(lap_v + sum(g**2 for g in grad_v)) / (k_cur * k_cur)

    vol = mask.volume_mask(grid)
    c = np.where(vol, np.abs(c_raw), 1.0)
    for _ in range(config.smoothing_passes):
        c = ndimage.uniform_filter(c, size=3, mode="nearest")
    c[~vol] = 1.0
    np.maximum(c, 1.0, out=c)
    return MediumField(grid, c)


def refresh_tail(medium: MediumField, kbar, config: InversionConfig):
    """Tail state from a forward solve at the truncation wave number."""
    u, report = solve_total_field(
        medium,
        kbar,
        rtol=config.forward_rtol,
        restart=config.forward_restart,
        max_iterations=config.forward_max_iterations,
    )
    if float(np.min(np.abs(u.values))) < 1e-12:
        raise NumericalError(
            "total field vanishes somewhere in the domain; cannot form "
            "the tail ratio"
        )
    grads = total_field_gradient(medium, u, kbar)
    grad_v = tuple(g.values / u.values for g in grads)
    return TailState.from_gradient(medium.grid, grad_v), report


@dataclass
class ReconstructionResult:
    c_comp: MediumField
    n_comp: float
    n0: int
    i0: int
    epsilons: list
    peak_location: tuple
    solver_log: list = field(default_factory=list)

    @property
    def max_c(self):
        return float(np.max(self.c_comp.c))


def run_gcm(boundary: BoundaryData, config: InversionConfig,
            mask: TruncationMask):
    """Full double iteration; returns the stopping-rule selection.

    The relative-error ledger holds one entry per inner step i >= 2 and
    one cross entry when each new outer sweep produces its first
    coefficient; the iterate with the first minimal error is returned.
    """
    grid = boundary.grid
    kbar = boundary.kbar
    n_sub = config.subintervals
    m = config.inner_iterations

    tail = initial_tail(boundary, grid)
    q_bar = np.zeros(grid.shape, dtype=np.complex128)
    q_outer = np.zeros(grid.shape, dtype=np.complex128)
    ledger = []
    solver_log = []
    coefs = {}
    c_prev_inner = None
    c_prev_outer = None

    for n in range(1, n_sub + 1):
        psi_faces = boundary.psi[n - 1]
        q_inner = q_outer
        for i in range(1, m + 1):
            q, qinfo = solve_q_step(grid, tail, q_bar, psi_faces, n, config,
                                    q_init=q_inner)
            medium = update_coefficient(grid, q, q_bar, tail,
                                        config.k_at(n), mask, config)
            tail, report = refresh_tail(medium, kbar, config)
            solver_log.append({
                "n": n, "i": i,
                "q_iterations": qinfo["iterations"],
                "q_residual": qinfo["residual"],
                "picard_sweeps": qinfo["picard_sweeps"],
                "tail_iterations": report.iterations,
                "tail_residual": report.residual,
                "max_c": float(np.max(medium.c)),
            })
            log.info(
                "step (%d,%d): max c = %.4f, tail solve %d its",
                n, i, float(np.max(medium.c)), report.iterations,
            )
            c = medium.c
            if i >= 2:
                ref = c_prev_inner
                ledger.append({
                    "n": n, "i": i,
                    "eps": float(np.linalg.norm(c - ref) / np.linalg.norm(ref)),
                })
            elif n >= 2:
                ref = c_prev_outer
                ledger.append({
                    "n": n, "i": i,
                    "eps": float(np.linalg.norm(c - ref) / np.linalg.norm(ref)),
                })
            coefs[(n, i)] = c
            c_prev_inner = c
            q_inner = q
        q_outer = q
        q_bar = q_bar + q
        c_prev_outer = c_prev_inner

    best = None
    for entry in ledger:
        if best is None or entry["eps"] < best["eps"]:
            best = entry
    n0, i0 = best["n"], best["i"]
    c_comp = MediumField(grid, coefs[(n0, i0)])
    flat = int(np.argmax(c_comp.c))
    pk = np.unravel_index(flat, grid.shape)
    peak_location = tuple(float(grid.axis(j)[pk[j]]) for j in range(3))
    result = ReconstructionResult(
        c_comp=c_comp,
        n_comp=float(np.sqrt(np.max(c_comp.c))),
        n0=n0,
        i0=i0,
        epsilons=ledger,
        peak_location=peak_location,
        solver_log=solver_log,
    )
    return result


def detect_transverse_peaks(field: PlaneField, level=0.7, min_separation=2):
    """Local maxima of |values| above level * peak inside the restriction
    square, separated by at least min_separation lattice nodes."""
    mag = np.abs(np.where(sp_mask(field.plane), field.values, 0.0))
    peak = mag.max()
    if peak <= 0:
        return []
    footprint = ndimage.maximum_filter(mag, size=3, mode="constant")
    local = (mag == footprint) & (mag > level * peak)
    coords = np.argwhere(local)
    order = np.argsort(-mag[local])
    kept = []
    for c in coords[order]:
        if all(np.max(np.abs(c - np.array(k))) >= min_separation for k in kept):
            kept.append(tuple(int(v) for v in c))
    return kept


def split_two_targets(field: PlaneField, level=0.7, min_separation=2):
    """Split plane data along the bisector between its two footprints.

    Returns (copy_a, copy_b, side): copies of the field zeroed on the
    far/near side of the median line between the two strongest peaks,
    and the signed-side array (negative on the strongest peak's side)
    for reuse on other wave numbers.
    """
    peaks = detect_transverse_peaks(field, level, min_separation)
    if len(peaks) < 2:
        raise ValidationError(
            "fewer than two qualifying peaks; single-target path applies"
        )
    x1, x2 = field.plane.axes()
    p1 = np.array([x1[peaks[0][0]], x2[peaks[0][1]]])
    p2 = np.array([x1[peaks[1][0]], x2[peaks[1][1]]])
    mid = 0.5 * (p1 + p2)
    direction = p2 - p1
    g1, g2 = field.plane.meshgrid()
    side = (g1 - mid[0]) * direction[0] + (g2 - mid[1]) * direction[1]
    copy_a = PlaneField(field.plane, field.k,
                        np.where(side < 0, field.values, 0.0))
    copy_b = PlaneField(field.plane, field.k,
                        np.where(side >= 0, field.values, 0.0))
    return copy_a, copy_b, side


def apply_split(fields, side):
    """Apply a precomputed split side-function to a dict of plane fields."""
    before = {}
    after = {}
    for k, f in fields.items():
        before[k] = PlaneField(f.plane, f.k, np.where(side < 0, f.values, 0.0))
        after[k] = PlaneField(f.plane, f.k, np.where(side >= 0, f.values, 0.0))
    return before, after


def merge_reconstructions(res_a: ReconstructionResult, res_b: ReconstructionResult):
    """Pointwise-maximum combination of two single-target runs."""
    grid = res_a.c_comp.grid
    if grid != res_b.c_comp.grid:
        raise ValidationError("cannot merge reconstructions on different grids")
    c = np.maximum(res_a.c_comp.c, res_b.c_comp.c)
    merged = MediumField(grid, c)
    flat = int(np.argmax(c))
    pk = np.unravel_index(flat, grid.shape)
    peak_location = tuple(float(grid.axis(j)[pk[j]]) for j in range(3))
    return ReconstructionResult(
        c_comp=merged,
        n_comp=float(np.sqrt(np.max(c))),
        n0=min(res_a.n0, res_b.n0),
        i0=min(res_a.i0, res_b.i0),
        epsilons=res_a.epsilons + res_b.epsilons,
        peak_location=peak_location,
        solver_log=res_a.solver_log + res_b.solver_log,
    )
