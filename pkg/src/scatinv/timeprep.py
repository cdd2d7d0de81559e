"""Stage-1 preprocessing of detector trace matrices.

Raw records are corrected for DC offset, aligned to the emission instant
using the direct antenna signal, gated to the geometric travel-time
window of the target echo, and transformed to the frequency domain on
the measurement lattice.  All steps run row-by-row (one row per detector
position) and are applied in the fixed order 1 -> 2 -> 3 -> 4.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import ValidationError
from .fields import PlaneField, dft_time, measurement_grid


@dataclass
class TimeTraceSet:
    """Detector-position x time-sample matrix of real signals."""

    positions: np.ndarray  # (npos, 2) transverse coordinates on the plane
    dt: float
    samples: np.ndarray  # (npos, nt)
    plane_x3: float = geometry.MEASUREMENT_PLANE_X3

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise ValidationError("samples must be a 2D (positions x time) matrix")
        if self.samples.shape[0] != self.positions.shape[0]:
            raise ValidationError("one sample row per detector position required")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        half = geometry.SM_HALF + 1e-9
        if np.any(np.abs(self.positions) > half):
            raise ValidationError("detector positions must lie inside the "
                                  "measurement rectangle")

    @property
    def times(self):
        return self.dt * np.arange(self.samples.shape[1])

    def copy_with(self, samples):
        return TimeTraceSet(self.positions, self.dt, samples, self.plane_x3)


@dataclass
class GateSpec:
    """Travel-time gate parameters.

    standoff is the measurement-plane to target-front-face distance;
    antenna_offset is how far the antenna sits in front of the plane
    (zero models emission from the plane itself).  Target linear sizes
    are bounded by [size_min, size_max].
    """

    standoff: float
    size_min: float = 0.5
    size_max: float = 1.5
    antenna_offset: float = 0.0
    target_transverse: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (0 < self.size_min <= self.size_max):
            raise ValidationError("need 0 < size_min <= size_max")
        if self.standoff <= self.antenna_offset:
            raise ValidationError("antenna must sit between plane and target")


def average_shots(samples):
    """Average repeated shots: (npos, nshots, nt) -> (npos, nt)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise ValidationError("expected a (positions, shots, time) array")
    return samples.mean(axis=1)


def offset_correct(traces: TimeTraceSet):
    """Remove the per-row mean value."""
    rows = traces.samples
    return traces.copy_with(rows - rows.mean(axis=1, keepdims=True))


def detect_time_zero(traces: TimeTraceSet, threshold=0.5):
    """Emission-instant sample per row from the direct antenna signal.

    The direct signal is the globally strongest event of a raw row; the
    emission instant is the first sample whose magnitude exceeds the
    given fraction of it.  Rows without any signal are flagged.
    """
    mags = np.abs(traces.samples)
    peaks = mags.max(axis=1)
    indices = np.zeros(mags.shape[0], dtype=int)
    flagged = np.zeros(mags.shape[0], dtype=bool)
    for i, (row, peak) in enumerate(zip(mags, peaks)):
        if peak <= 0:
            flagged[i] = True
            continue
        above = np.nonzero(row > threshold * peak)[0]
        if above.size == 0:
            flagged[i] = True
        else:
            indices[i] = above[0]
    return indices, flagged


def time_zero_correct(traces: TimeTraceSet, emission_index=None):
    """Shift rows so the emission instant lands on sample 0 (zero fill).

    Rows where no emission instant can be detected are left unshifted.
    """
    if emission_index is None:
        emission_index, flagged = detect_time_zero(traces)
    else:
        emission_index = np.asarray(emission_index, dtype=int)
        flagged = np.zeros(emission_index.shape, dtype=bool)
    if np.any(flagged):
        warnings.warn(
            f"{int(flagged.sum())} trace rows lack a detectable emission "
            "instant; left unshifted"
        )
    out = np.zeros_like(traces.samples)
    nt = traces.samples.shape[1]
    for i, shift in enumerate(emission_index):
        if flagged[i] or shift <= 0:
            out[i] = traces.samples[i]
        else:
            out[i, : nt - shift] = traces.samples[i, shift:]
    return traces.copy_with(out)


def gate_window(traces: TimeTraceSet, gate: GateSpec):
    """Per-row gate (start, end) times from the travel-time geometry."""
    incident_leg = gate.standoff - gate.antenna_offset
    offsets = traces.positions - np.asarray(gate.target_transverse)
    return_leg = np.sqrt(gate.standoff**2 + np.sum(offsets**2, axis=1))
    start = incident_leg + return_leg
    return start, start + 2.0 * gate.size_max


def gate_scattered(traces: TimeTraceSet, gate: GateSpec):
    """Zero everything outside each row's travel-time window."""
    start, end = gate_window(traces, gate)
    t_last = traces.dt * (traces.samples.shape[1] - 1)
    if np.any(end > t_last):
        raise ValidationError(
            f"gate window (up to t={end.max():.3f}) exceeds the record "
            f"length (t={t_last:.3f})"
        )
    t = traces.times
    mask = (t[None, :] >= start[:, None]) & (t[None, :] <= end[:, None])
    return traces.copy_with(traces.samples * mask)


def to_frequency(traces: TimeTraceSet, k_list):
    """Fourier-transform gated rows onto the measurement lattice.

    Returns one zero-extended PlaneField per wave number; lattice nodes
    without a detector stay zero.
    """
    plane = measurement_grid(traces.plane_x3)
    step = plane.spacing2
    idx = np.empty((traces.positions.shape[0], 2), dtype=int)
    for axis in range(2):
        rel = (traces.positions[:, axis] - plane.origin2[axis]) / step[axis]
        near = np.rint(rel)
        if np.any(np.abs(rel - near) > 1e-6):
            bad = int(np.argmax(np.abs(rel - near)))
            raise ValidationError(
                f"detector position {tuple(traces.positions[bad])} is off the "
                "measurement lattice"
            )
        idx[:, axis] = near.astype(int)
    if np.any(idx < 0) or np.any(idx >= plane.counts2[0]):
        raise ValidationError("detector position outside the measurement lattice")

    ks = np.atleast_1d(np.asarray(k_list, dtype=float))
    spectra = dft_time(traces.samples, traces.dt, ks)  # (npos, nk)
    fields = []
    for j, k in enumerate(ks):
        vals = np.zeros(plane.shape, dtype=np.complex128)
        vals[idx[:, 0], idx[:, 1]] = spectra[:, j]
        fields.append(PlaneField(plane, k, vals))
    return fields


def preprocess_traces(traces: TimeTraceSet, gate: GateSpec, k_list):
    """Steps 1-4 in their fixed order; returns per-k plane fields."""
    gated = gate_scattered(time_zero_correct(offset_correct(traces)), gate)
    return to_frequency(gated, k_list)


def load_traces(meta_path, data_path):
    """Read a trace set from its two-file form (JSON metadata + matrix).

    SI metadata carries dt in picoseconds and positions/standoff in
    meters; everything is converted to dimensionless units on load.
    """
    with open(meta_path) as fh:
        meta = json.load(fh)
    unit = meta.get("unit", "dimensionless")
    dt = float(meta["dt"])
    positions = np.asarray(meta["positions"], dtype=float)
    plane_x3 = float(meta.get("plane_x3", geometry.MEASUREMENT_PLANE_X3))
    if unit == "si":
        dt = dt * geometry.PS_TO_DIMLESS
        positions = positions * geometry.METERS_TO_DIMLESS
    elif unit != "dimensionless":
        raise ValidationError(f"unknown unit declaration {unit!r}")
    fmt = meta.get("format", "f64le")
    nt = int(meta["num_samples"])
    if fmt == "f64le":
        raw = np.fromfile(data_path, dtype="<f8")
        samples = raw.reshape(positions.shape[0], nt)
    elif fmt == "csv":
        samples = np.loadtxt(data_path, delimiter=",", ndmin=2)
    else:
        raise ValidationError(f"unknown trace format {fmt!r}")
    return TimeTraceSet(positions, dt, samples, plane_x3)


def save_traces(traces: TimeTraceSet, meta_path, data_path):
    meta = {
        "unit": "dimensionless",
        "dt": traces.dt,
        "positions": traces.positions.tolist(),
        "plane_x3": traces.plane_x3,
        "format": "f64le",
        "num_samples": int(traces.samples.shape[1]),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    traces.samples.astype("<f8").tofile(data_path)
