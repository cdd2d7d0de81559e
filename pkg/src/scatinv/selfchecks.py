"""Built-in consistency checks behind the `selftest` CLI command."""

import time

import numpy as np

from .elliptic import FACES, extract_face, solve_convection
from .errors import NumericalError, SolverConvergenceError, ValidationError
from .fields import Grid3, PlaneField, domain_grid, measurement_grid
from .forward import MediumField, dense_reference_solution, solve_total_field
from .freqprep import PropagationJob, air_boundary, propagate
from .inversion import InversionConfig, TruncationMask, run_gcm


def _check_air_fixed_point(reduced):
    n = 20 if reduced else 64
    tol = 1e-6
    grid = domain_grid(n)
    boundary = air_boundary(grid)
    config = InversionConfig()
    mask = TruncationMask.empty(grid, config.x3_window)
    result = run_gcm(boundary, config, mask)
    dev = float(np.max(np.abs(result.c_comp.c - 1.0)))
    worst_eps = max(e["eps"] for e in result.epsilons)
    ok = dev < tol and worst_eps < tol
    return ok, (f"grid {n}^3: max|c-1| = {dev:.2e}, worst step error "
                f"{worst_eps:.2e} (tolerance {tol:g})")


def _check_dense_oracle(reduced):
    grid = Grid3((-0.55, -0.55, -0.55), (0.1, 0.1, 0.1), (12, 12, 12))
    c = np.ones(grid.shape)
    c[3:9, 3:9, 3:9] = 1.5
    medium = MediumField(grid, c)
    k = 6.5
    u_fft, _ = solve_total_field(medium, k, rtol=1e-12)
    u_dense = dense_reference_solution(medium, k)
    rel = (np.linalg.norm(u_fft.values - u_dense.values)
           / np.linalg.norm(u_dense.values))
    ok = rel < 1e-8
    return ok, f"12^3 grid, 6^3 block c=1.5: relative gap {rel:.2e} (< 1e-8)"


def _check_propagation_roundtrip(reduced):
    rng = np.random.default_rng(7)
    plane = measurement_grid()
    vals = rng.standard_normal(plane.shape) + 1j * rng.standard_normal(plane.shape)
    f = PlaneField(plane, 13.5, vals)
    there = propagate(f, PropagationJob(b=plane.x3, a=-0.75))
    back = propagate(there, PropagationJob(b=-0.75, a=plane.x3))
    filtered = propagate(f, PropagationJob(b=plane.x3, a=plane.x3))
    rel = (np.linalg.norm(back.values - filtered.values)
           / np.linalg.norm(filtered.values))
    ok = rel < 1e-10
    return ok, f"round trip vs evanescent-filtered input: {rel:.2e} (< 1e-10)"


def _check_manufactured_elliptic(reduced):
    n = 20 if reduced else 40
    grid = Grid3((0.0, 0.0, 0.0), (1.0 / (n - 1),) * 3, (n, n, n))
    x, y, z = grid.meshgrid()
    q_true = np.sin(np.pi * x) * np.sin(np.pi * y) * z**2 + 1j * x * y
    drift = (np.full(grid.shape, 0.4 + 0.1j),
             np.full(grid.shape, -0.2 + 0.0j),
             np.full(grid.shape, 0.3 - 0.2j))
    lap = (-2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y) * z**2
           + 2 * np.sin(np.pi * x) * np.sin(np.pi * y))
    gx = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y) * z**2 + 1j * y
    gy = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y) * z**2 + 1j * x
    gz = 2 * np.sin(np.pi * x) * np.sin(np.pi * y) * z
    rhs = lap + drift[0] * gx + drift[1] * gy + drift[2] * gz
    faces = {f: extract_face(q_true, f) for f in FACES}
    sol, info = solve_convection(grid, drift, rhs, faces, rtol=1e-10)
    err = np.max(np.abs(sol - q_true))
    # Second-order scheme: expected truncation level ~ C h^2.
    h = grid.spacing[0]
    bound = 12.0 * h * h
    ok = err < bound
    return ok, (f"grid {n}^3: max error {err:.2e} vs second-order bound "
                f"{bound:.2e}")


CHECKS = [
    ("air-fixed-point", _check_air_fixed_point),
    ("dense-forward-oracle", _check_dense_oracle),
    ("propagation-roundtrip", _check_propagation_roundtrip),
    ("manufactured-elliptic", _check_manufactured_elliptic),
]


def run_all(reduced=True):
    results = []
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.monotonic()
        try:
            ok, detail = fn(reduced)
        except (ValidationError, NumericalError, SolverConvergenceError) as err:
            ok, detail = False, f"raised {type(err).__name__}: {err}"
        results.append({
            "name": name,
            "pass": bool(ok),
            "detail": detail,
            "seconds": round(time.monotonic() - t0, 2),
        })
        all_ok = all_ok and ok
    return {"ok": all_ok, "checks": results, "reduced": reduced}
