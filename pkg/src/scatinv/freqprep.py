"""Stage-2 preprocessing: plane-to-plane propagation, wave-number
interval selection, frequency shifting, calibration, and assembly of the
total-field boundary data for the inversion.

Propagation uses the angular-spectrum decomposition of the backscatter
field.  In the half space between target and measurement plane every
propagating mode varies as ``exp(-i k_z x3)`` (radiation towards
x3 -> -inf with the ``e^{+ikt}`` time kernel), so moving data from plane
b to plane a multiplies each mode by ``exp(-i k_z (a - b))``; evanescent
modes are discarded.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import geometry
from .elliptic import FACES, face_shape
from .errors import NumericalError, ValidationError
from .fields import (Grid3, PlaneField, PlaneGrid, dft2_forward, dft2_inverse,
                     transverse_wavenumbers)


@dataclass
class PropagationJob:
    """Move plane data from x3 = b to x3 = a for the listed wave numbers."""

    b: float = geometry.MEASUREMENT_PLANE_X3
    a: float = geometry.PROPAGATED_PLANE_X3
    k_list: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValidationError("plane positions must be finite")


def sp_mask(plane: PlaneGrid, half=geometry.SP_HALF):
    """Nodes inside the open restriction square on the propagated plane."""
    x1, x2 = plane.meshgrid()
    return (np.abs(x1) < half) & (np.abs(x2) < half)


def restrict_to_sp(field: PlaneField, half=geometry.SP_HALF):
    vals = np.where(sp_mask(field.plane, half), field.values, 0.0)
    return PlaneField(field.plane, field.k, vals)


def propagate(field: PlaneField, job: PropagationJob):
    """Angular-spectrum transport of a zero-extended plane field."""
    if field.k <= 0:
        raise ValidationError("propagation requires k > 0")
    if abs(field.plane.x3 - job.b) > 1e-9:
        raise ValidationError(
            f"field lives on x3={field.plane.x3}, job source is x3={job.b}"
        )
    spec = dft2_forward(field)
    k1, k2 = transverse_wavenumbers(field.plane)
    ksq = field.k**2 - k1[:, None] ** 2 - k2[None, :] ** 2
    propagating = ksq > 0
    kz = np.sqrt(np.where(propagating, ksq, 0.0))
    phase = np.exp(-1j * kz * (job.a - job.b))
    spec = np.where(propagating, spec * phase, 0.0)
    return dft2_inverse(spec, field.plane.at_x3(job.a), field.k)


def spectrum_peak(fields):
    """Magnitude curve s(k) over the restriction square and its maximizer.

    Returns (ks, s, k_opt); ties resolve toward the smaller wave number.
    """
    if not fields:
        raise ValidationError("no plane fields supplied")
    order = np.argsort([f.k for f in fields])
    ks = np.array([fields[i].k for i in order])
    s = np.empty(ks.size)
    for row, i in enumerate(order):
        f = fields[i]
        s[row] = np.max(np.abs(np.where(sp_mask(f.plane), f.values, 0.0)))
    k_opt = float(ks[int(np.argmax(s))])
    return ks, s, k_opt


@dataclass
class IntervalSelection:
    """Raw wave-number window of width 0.5 centered on the s(k) maximizer."""

    k_opt: float
    k_low_raw: float
    k_high_raw: float

    def __post_init__(self):
        if abs((self.k_high_raw - self.k_low_raw) - 0.5) > 1e-9:
            raise ValidationError("selected interval must have width 0.5")
        if abs(0.5 * (self.k_low_raw + self.k_high_raw) - self.k_opt) > 1e-9:
            raise ValidationError("k_opt must sit at the interval midpoint")

    @classmethod
    def around(cls, k_opt):
        return cls(k_opt, k_opt - 0.25, k_opt + 0.25)

    @property
    def shift_offset(self):
        return self.k_low_raw - geometry.K_WORK_LOW


def _match_index(values, target, tol=1e-6):
    j = int(np.argmin(np.abs(values - target)))
    if abs(values[j] - target) > tol:
        return None
    return j


def select_and_shift(fields, selection: IntervalSelection):
    """Re-index raw-k fields onto the working lattice 6.0 ... 6.5.

    The value measured at raw wave number ``k + shift`` is presented as
    living at working wave number ``k``.  The raw sweep must cover the
    whole selected interval on the 0.05 lattice.
    """
    raw_ks = np.array([f.k for f in fields])
    out = {}
    for k_work in geometry.working_k_lattice():
        k_raw = k_work + selection.shift_offset
        j = _match_index(raw_ks, k_raw)
        if j is None:
            raise ValidationError(
                f"raw sweep does not cover k={k_raw:.3f} needed for the "
                f"selected interval [{selection.k_low_raw}, {selection.k_high_raw}]"
            )
        src = fields[j]
        out[round(float(k_work), 6)] = PlaneField(src.plane, float(k_work),
                                                  src.values.copy())
    return out


@dataclass
class CalibrationFactor:
    """Per-working-k positive scale mapping measured data to solver scale."""

    ks: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.ks.shape != self.d.shape:
            raise ValidationError("calibration lattice/value shape mismatch")
        if np.any(self.d <= 0) or not np.all(np.isfinite(self.d)):
            raise ValidationError("calibration factors must be finite and positive")

    def at(self, k):
        j = _match_index(self.ks, k, tol=1e-6)
        if j is None:
            raise ValidationError(f"no calibration factor stored for k={k}")
        return float(self.d[j])


def calibration_factor(g_sim, g_exp):
    """Ratio of simulated to measured peak magnitudes per working k.

    Both inputs map working wave numbers to plane fields on the
    propagated plane (the measured set already shifted).
    """
    ks = sorted(g_sim.keys())
    if sorted(g_exp.keys()) != ks:
        raise ValidationError("simulated and measured sets cover different k")
    d = np.empty(len(ks))
    for j, k in enumerate(ks):
        sim = g_sim[k]
        exp = g_exp[k]
        sim_max = np.max(np.abs(np.where(sp_mask(sim.plane), sim.values, 0.0)))
        exp_max = np.max(np.abs(np.where(sp_mask(exp.plane), exp.values, 0.0)))
        if exp_max <= 0:
            raise ValidationError(f"measured data vanish on S_p at k={k}")
        d[j] = sim_max / exp_max
    return CalibrationFactor(np.asarray(ks, dtype=float), d)


@dataclass
class BoundaryData:
    """Complemented total-field data on the domain boundary.

    g_hat maps each working k to per-face values; psi holds one per-face
    constant-in-k field per subinterval (index n-1); grad_on_gamma are
    the three spatial derivatives of the total field at the truncation
    wave number on the data face.
    """

    grid: Grid3
    ks: np.ndarray
    g_hat: list
    psi: list
    grad_on_gamma: tuple

    @property
    def kbar(self):
        return float(self.ks[-1])


def interp_plane(field: PlaneField, x_nodes, y_nodes):
    """Bilinear resample of a plane field; zero outside its lattice."""
    itp = RegularGridInterpolator(
        field.plane.axes(), field.values, method="linear",
        bounds_error=False, fill_value=0.0,
    )
    xg, yg = np.meshgrid(x_nodes, y_nodes, indexing="ij")
    return itp(np.stack([xg.ravel(), yg.ravel()], axis=1)).reshape(xg.shape)


def _incident_faces(grid: Grid3, k):
    """Per-face values of exp(i k x3) on the grid boundary."""
    z = grid.axis(2)
    out = {}
    for face in FACES:
        shape = face_shape(grid, face)
        if face.startswith("x3"):
            x3 = z[0] if face == "x3lo" else z[-1]
            out[face] = np.full(shape, np.exp(1j * k * x3), dtype=np.complex128)
        else:
            prof = np.exp(1j * k * z)
            out[face] = np.broadcast_to(prof, shape).astype(np.complex128)
    return out


def assemble_boundary(g_shifted, calib: CalibrationFactor, grid: Grid3,
                      eps_pair=None, eps=0.1):
    """Build the inversion boundary data from calibrated plane fields.

    On the data face (low-x3) the total field is the incident wave plus
    the calibrated propagated data; every other face carries the pure
    incident wave.  psi is the per-subinterval wave-number derivative of
    log g_hat (central in k at interior lattice nodes, one-sided at the
    ends; the logarithm acts on ratios of adjacent-k values, which keeps
    the air case exact).  The x3 derivative on the data face combines
    the analytic incident term with the two-plane difference of the
    propagated data (planes eps apart), scaled by the calibration.

    Parameters
    ----------
    g_shifted : dict working-k -> PlaneField on the propagated plane
    eps_pair : optional (PlaneField, PlaneField) at x3 = a -/+ eps/2 for
        the truncation wave number, used for the x3 derivative
    """
    ks = geometry.working_k_lattice()
    for k in ks:
        if round(float(k), 6) not in g_shifted:
            raise ValidationError(f"missing shifted data at working k={k}")
    xg, yg = grid.axis(0), grid.axis(1)
    z_lo = grid.axis(2)[0]
    h = geometry.K_STEP

    g_hat = []
    gamma_values = []
    for k in ks:
        fk = g_shifted[round(float(k), 6)]
        face_vals = _incident_faces(grid, float(k))
        scat = calib.at(float(k)) * interp_plane(fk, xg, yg)
        face_vals["x3lo"] = face_vals["x3lo"] + scat
        g_hat.append(face_vals)
        gamma_values.append(face_vals["x3lo"])

    def _log_ratio(num_face, den_face, face, n):
        ratio = np.empty_like(num_face)
        small = (np.abs(num_face) < 1e-12) | (np.abs(den_face) < 1e-12)
        if np.any(small):
            where = np.argwhere(small)[0]
            raise NumericalError(
                f"|g_hat| below 1e-12 on face {face} at node {tuple(where)} "
                f"while evaluating psi_{n}"
            )
        np.divide(num_face, den_face, out=ratio)
        return np.log(ratio)

    psi = []
    n_sub = geometry.N_SUBINTERVALS
    for n in range(1, n_sub + 1):
        j = n_sub - n  # ascending lattice index of k_n
        face_psi = {}
        for face in FACES:
            if j >= 1:
                num = g_hat[j + 1][face]
                den = g_hat[j - 1][face]
                face_psi[face] = _log_ratio(num, den, face, n) / (2.0 * h)
            else:
                num = g_hat[1][face]
                den = g_hat[0][face]
                face_psi[face] = _log_ratio(num, den, face, n) / h
        psi.append(face_psi)

    kbar = float(ks[-1])
    g_bar = gamma_values[-1]
    sx, sy = grid.spacing[0], grid.spacing[1]
    d1 = np.gradient(g_bar, sx, axis=0, edge_order=2)
    d2 = np.gradient(g_bar, sy, axis=1, edge_order=2)
    d3 = (1j * kbar) * np.exp(1j * kbar * z_lo) * np.ones_like(g_bar)
    if eps_pair is not None:
        minus, plus = eps_pair
        if abs((plus.plane.x3 - minus.plane.x3) - eps) > 1e-9:
            raise ValidationError("eps planes must be eps apart")
        diff = (interp_plane(plus, xg, yg) - interp_plane(minus, xg, yg)) / eps
        d3 = d3 + calib.at(kbar) * diff
    return BoundaryData(grid, np.asarray(ks), g_hat, psi, (d1, d2, d3))


def air_boundary(grid: Grid3):
    """Boundary data of the pure incident wave (no scatterer)."""
    zero = PlaneField(
        PlaneGrid(geometry.PROPAGATED_PLANE_X3,
                  (-geometry.SM_HALF, -geometry.SM_HALF),
                  (geometry.MEASUREMENT_STEP, geometry.MEASUREMENT_STEP),
                  (geometry.MEASUREMENT_COUNT, geometry.MEASUREMENT_COUNT)),
        1.0, np.zeros((geometry.MEASUREMENT_COUNT,) * 2),
    )
    ks = geometry.working_k_lattice()
    shifted = {
        round(float(k), 6): PlaneField(zero.plane, float(k), zero.values.copy())
        for k in ks
    }
    calib = CalibrationFactor(ks, np.ones_like(ks))
    return assemble_boundary(shifted, calib, grid)
