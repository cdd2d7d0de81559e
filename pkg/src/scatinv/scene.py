"""Synthetic scenes: medium construction, plane-data synthesis, and
optional time-trace synthesis with injected parasitic events.

Forward solves for synthesis run on a tight grid around the inclusion
supports (the volume equation only integrates over the contrast), which
keeps wide wave-number sweeps affordable; the scattered field is then
evaluated directly on the measurement lattice.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import ValidationError
from .fields import Grid3, PlaneField, measurement_grid
from .forward import MediumField, scattered_on_plane, solve_total_field

log = logging.getLogger(__name__)


@dataclass
class Inclusion:
    shape: str  # "box" or "ball"
    center: tuple
    c: float
    half_extents: tuple = None
    radius: float = None

    def __post_init__(self):
        self.center = tuple(float(v) for v in self.center)
        if self.c < 1.0:
            raise ValidationError("inclusion dielectric constant must be >= 1")
        if self.shape == "box":
            if self.half_extents is None:
                raise ValidationError("box inclusion needs half_extents")
            self.half_extents = tuple(float(v) for v in self.half_extents)
        elif self.shape == "ball":
            if self.radius is None:
                raise ValidationError("ball inclusion needs a radius")
            self.radius = float(self.radius)
        else:
            raise ValidationError(f"unknown inclusion shape {self.shape!r}")

    def bounds(self):
        if self.shape == "box":
            ext = self.half_extents
        else:
            ext = (self.radius,) * 3
        lo = tuple(self.center[i] - ext[i] for i in range(3))
        hi = tuple(self.center[i] + ext[i] for i in range(3))
        return lo, hi

    def indicator(self, xg, yg, zg):
        if self.shape == "box":
            hx, hy, hz = self.half_extents
            return (
                (np.abs(xg - self.center[0]) <= hx)
                & (np.abs(yg - self.center[1]) <= hy)
                & (np.abs(zg - self.center[2]) <= hz)
            )
        r2 = (
            (xg - self.center[0]) ** 2
            + (yg - self.center[1]) ** 2
            + (zg - self.center[2]) ** 2
        )
        return r2 <= self.radius**2


@dataclass
class SceneSpec:
    inclusions: list
    measurement_plane_x3: float = geometry.MEASUREMENT_PLANE_X3
    propagated_plane_x3: float = geometry.PROPAGATED_PLANE_X3
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.inclusions = [
            inc if isinstance(inc, Inclusion) else Inclusion(**inc)
            for inc in self.inclusions
        ]
        if self.noise_level < 0:
            raise ValidationError("noise level must be non-negative")


def synth_grid(scene: SceneSpec, spacing=0.05, margin=0.3):
    """Tight uniform grid covering the inclusion supports plus a margin."""
    if not scene.inclusions:
        return Grid3((-0.5, -0.5, -0.5), (spacing,) * 3, (8, 8, 8))
    los, his = zip(*[inc.bounds() for inc in scene.inclusions])
    lo = [min(v[i] for v in los) - margin for i in range(3)]
    hi = [max(v[i] for v in his) + margin for i in range(3)]
    counts = [max(8, int(np.ceil((hi[i] - lo[i]) / spacing)) + 1) for i in range(3)]
    return Grid3(tuple(lo), (spacing,) * 3, tuple(counts))


def build_medium(grid: Grid3, scene: SceneSpec):
    """Paint the scene's dielectric constants onto a grid (max on overlap)."""
    xg, yg, zg = grid.meshgrid()
    c = np.ones(grid.shape)
    for inc in scene.inclusions:
        inside = inc.indicator(xg, yg, zg)
        c = np.where(inside, np.maximum(c, inc.c), c)
    return MediumField(grid, c)


def _apply_noise(values, level, rng):
    if level <= 0:
        return values
    zeta = (rng.standard_normal(values.shape)
            + 1j * rng.standard_normal(values.shape)) / np.sqrt(2.0)
    return values * (1.0 + level * zeta)


def synth_plane_archive(scene: SceneSpec, k_sweep, spacing=0.05, margin=0.3,
                        rtol=1e-6, plane=None):
    """Scattered field on the measurement lattice for each sweep value.

    Returns a list of PlaneField ordered like k_sweep.  Noise, when
    requested, is multiplicative complex Gaussian with the configured
    relative amplitude, drawn from the scene's seeded generator.
    """
    plane = plane or measurement_grid(scene.measurement_plane_x3)
    ks = np.atleast_1d(np.asarray(k_sweep, dtype=float))
    rng = np.random.default_rng(scene.seed)
    if not scene.inclusions:
        return [
            PlaneField(plane, float(k), np.zeros(plane.shape, dtype=np.complex128))
            for k in ks
        ]
    grid = synth_grid(scene, spacing, margin)
    medium = build_medium(grid, scene)
    fields = []
    for k in ks:
        u, report = solve_total_field(medium, float(k), rtol=rtol)
        f = scattered_on_plane(medium, u, float(k), plane)
        log.debug("synth k=%.3f: %d iterations", k, report.iterations)
        fields.append(PlaneField(plane, float(k),
                                 _apply_noise(f.values, scene.noise_level, rng)))
    return fields


@dataclass
class TraceEvent:
    """Gaussian-enveloped burst injected into synthetic traces."""

    amplitude: float
    width: float
    carrier: float
    delay: float = None  # fixed delay; None means the direct-path delay
    per_detector: bool = False

    def waveform(self, t, delay):
        env = np.exp(-0.5 * ((t - delay) / self.width) ** 2)
        return self.amplitude * env * np.cos(self.carrier * (t - delay))


@dataclass
class TraceSynthSpec:
    dt: float = geometry.RAW_DT_PS * geometry.PS_TO_DIMLESS
    num_samples: int = 1000
    dc_offset: float = 0.0
    taper_fraction: float = 0.2
    antenna: tuple = (0.0, 0.0)
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.events = [
            ev if isinstance(ev, TraceEvent) else TraceEvent(**ev)
            for ev in self.events
        ]


def _sweep_taper(nk, fraction):
    win = np.ones(nk)
    edge = max(1, int(fraction * nk))
    ramp = 0.5 * (1 - np.cos(np.pi * np.arange(edge) / edge))
    win[:edge] = ramp
    win[-edge:] = ramp[::-1]
    return win


def synth_traces(archive, spec: TraceSynthSpec):
    """Time traces from a wide-sweep plane archive plus injected events.

    The scattered spectrum is inverted with
    ``f(t) = (1/pi) Re sum_k phi(k) exp(-ikt) dk`` (real signals have
    conjugate-symmetric spectra), tapered at the sweep edges.
    """
    from .timeprep import TimeTraceSet

    if not archive:
        raise ValidationError("empty plane archive")
    ks = np.array([f.k for f in archive])
    order = np.argsort(ks)
    ks = ks[order]
    dk = np.diff(ks)
    if dk.size and (np.any(dk <= 0) or np.ptp(dk) > 1e-9):
        raise ValidationError("sweep must be strictly increasing and uniform")
    step = dk[0] if dk.size else 1.0
    plane = archive[0].plane
    x1, x2 = plane.meshgrid()
    positions = np.stack([x1.ravel(), x2.ravel()], axis=1)
    spectra = np.stack([archive[i].values.ravel() for i in order], axis=1)

    t = spec.dt * np.arange(spec.num_samples)
    taper = _sweep_taper(ks.size, spec.taper_fraction)
    kernel = np.exp(-1j * np.outer(ks, t))  # (nk, nt)
    traces = (spectra * taper) @ kernel
    traces = traces.real * (step / np.pi)

    antenna = np.asarray(spec.antenna)
    direct_delay = np.linalg.norm(positions - antenna[None, :], axis=1)
    for ev in spec.events:
        if ev.per_detector or ev.delay is None:
            for row in range(traces.shape[0]):
                traces[row] += ev.waveform(t, direct_delay[row])
        else:
            traces += ev.waveform(t, ev.delay)[None, :]
    traces += spec.dc_offset
    return TimeTraceSet(positions, spec.dt, traces,
                        plane_x3=plane.x3)
