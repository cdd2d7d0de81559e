"""End-to-end orchestration of the reconstruction workflow.

Each stage reads/writes files under a run directory and records itself
in the run manifest: synth (or preprocess) -> propagate -> calibrate ->
invert -> report.  Configuration is one JSON document per run.
"""

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import archive, geometry
from .errors import ValidationError
from .fields import domain_grid, measurement_grid
from .freqprep import (CalibrationFactor, IntervalSelection, PropagationJob,
                       assemble_boundary, calibration_factor, propagate,
                       restrict_to_sp, select_and_shift, spectrum_peak)
from .inversion import (InversionConfig, apply_split, merge_reconstructions,
                        run_gcm, split_two_targets, truncation_mask)
from .scene import SceneSpec, TraceSynthSpec, synth_plane_archive, synth_traces
from .timeprep import GateSpec, load_traces, preprocess_traces, save_traces

log = logging.getLogger(__name__)


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    if "scene" not in cfg:
        raise ValidationError("config must declare a scene")
    return cfg


def sweep_values(cfg):
    sw = cfg.get("sweep", {})
    k_min = float(sw.get("k_min", 11.0))
    k_max = float(sw.get("k_max", 16.0))
    step = float(sw.get("k_step", geometry.K_STEP))
    n = int(round((k_max - k_min) / step))
    return k_min + step * np.arange(n + 1)


def inversion_config(cfg):
    return InversionConfig(**cfg.get("inversion", {}))


def _scene(cfg, key="scene"):
    return SceneSpec(**cfg[key])


def stage_synth(cfg, run_dir):
    """Forward-model the scene over the sweep; write the measured archive."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    scene = _scene(cfg)
    synth_cfg = cfg.get("synth", {})
    fields = synth_plane_archive(
        scene,
        sweep_values(cfg),
        spacing=synth_cfg.get("spacing", 0.05),
        margin=synth_cfg.get("margin", 0.3),
        rtol=synth_cfg.get("rtol", 1e-6),
    )
    index = archive.save_plane_archive(fields, run_dir / "measured", prefix="phi")
    outputs = [index]
    if synth_cfg.get("traces"):
        spec = TraceSynthSpec(**synth_cfg["traces"])
        traces = synth_traces(fields, spec)
        save_traces(traces, run_dir / "traces.json", run_dir / "traces.bin")
        outputs += [run_dir / "traces.json", run_dir / "traces.bin"]
    manifest = archive.RunManifest(run_dir)
    manifest.record("synth", [], outputs, time.monotonic() - t0)
    return outputs


def stage_preprocess(cfg, run_dir):
    """Trace files -> gated frequency-domain archive on the lattice."""
    run_dir = Path(run_dir)
    t0 = time.monotonic()
    meta = run_dir / "traces.json"
    data = run_dir / "traces.bin"
    traces = load_traces(meta, data)
    gate = GateSpec(**cfg.get("gate", {"standoff": 8.0}))
    fields = preprocess_traces(traces, gate, sweep_values(cfg))
    index = archive.save_plane_archive(fields, run_dir / "measured", prefix="phi")
    manifest = archive.RunManifest(run_dir)
    manifest.record("preprocess", [meta, data], [index], time.monotonic() - t0)
    return [index]


def stage_propagate(cfg, run_dir):
    """Measured archive -> propagated/restricted data, s(k), selection,
    shifted working-lattice archive, and the derivative plane pair."""
    run_dir = Path(run_dir)
    t0 = time.monotonic()
    measured = archive.load_plane_archive(run_dir / "measured")
    a = float(cfg.get("scene", {}).get("propagated_plane_x3",
                                       geometry.PROPAGATED_PLANE_X3))
    b = measured[0].plane.x3
    job = PropagationJob(b=b, a=a)
    propagated = [restrict_to_sp(propagate(f, job)) for f in measured]
    ks, s, k_opt = spectrum_peak(propagated)
    ds = np.gradient(s, ks, edge_order=2)
    archive.save_curve(run_dir / "sk_curve.csv", ks, s)
    np.savetxt(run_dir / "sk_slope.csv",
               np.column_stack([ks, ds]), delimiter=",",
               header="k,ds_dk", comments="")

    selection = IntervalSelection.around(k_opt)
    shifted = select_and_shift(propagated, selection)
    shifted_index = archive.save_plane_archive(
        list(shifted.values()), run_dir / "shifted", prefix="usc")

    # Two nearby planes for the x3 derivative at the raw truncation node.
    eps = float(cfg.get("eps_derivative", 0.1))
    kbar_raw = selection.k_high_raw
    src = next(f for f in measured if abs(f.k - kbar_raw) < 1e-9)
    minus = restrict_to_sp(propagate(src, PropagationJob(b=b, a=a - eps / 2)))
    plus = restrict_to_sp(propagate(src, PropagationJob(b=b, a=a + eps / 2)))
    eps_index = archive.save_plane_archive([minus, plus], run_dir / "eps_pair",
                                           prefix="gtilde")

    sel_doc = {
        "k_opt": k_opt,
        "k_low_raw": selection.k_low_raw,
        "k_high_raw": selection.k_high_raw,
        "shift_offset": selection.shift_offset,
        "max_abs_slope_outside": float(np.max(np.abs(
            ds[(ks < selection.k_low_raw) | (ks > selection.k_high_raw)]
        ))) if np.any((ks < selection.k_low_raw) | (ks > selection.k_high_raw))
        else 0.0,
    }
    # Transverse-location check is automatic only when the scene is known.
    scene_cfg = cfg.get("scene", {})
    if scene_cfg.get("inclusions"):
        center = np.mean([inc["center"][:2]
                          for inc in scene_cfg["inclusions"]], axis=0)
        f_opt = propagated[int(np.argmin(np.abs(ks - k_opt)))]
        x1, x2 = f_opt.plane.meshgrid()
        mag = np.abs(f_opt.values)
        pk = np.unravel_index(int(np.argmax(mag)), mag.shape)
        peak_xy = (float(x1[pk]), float(x2[pk]))
        size_max = float(cfg.get("gate", {}).get("size_max", 1.5))
        dist = float(np.hypot(peak_xy[0] - center[0], peak_xy[1] - center[1]))
        sel_doc["transverse_check"] = {
            "peak": peak_xy, "expected": [float(center[0]), float(center[1])],
            "distance": dist, "within_size_max": dist <= size_max,
        }
    else:
        sel_doc["transverse_check"] = "no ground truth; review s(k) and the "\
                                      "propagated images manually"
    with open(run_dir / "selection.json", "w") as fh:
        json.dump(sel_doc, fh, indent=1, sort_keys=True)
        fh.write("\n")

    manifest = archive.RunManifest(run_dir)
    manifest.record(
        "propagate",
        [run_dir / "measured" / "index.json"],
        [shifted_index, eps_index, run_dir / "sk_curve.csv",
         run_dir / "sk_slope.csv", run_dir / "selection.json"],
        time.monotonic() - t0,
    )
    return shifted, selection


def stage_calibrate(cfg, run_dir):
    """Reference-target simulation at working wave numbers -> d(k)."""
    run_dir = Path(run_dir)
    t0 = time.monotonic()
    ref_key = "reference_scene" if "reference_scene" in cfg else "scene"
    ref = _scene(cfg, ref_key)
    synth_cfg = cfg.get("synth", {})
    ks = geometry.working_k_lattice()
    sim_measured = synth_plane_archive(
        ref, ks,
        spacing=synth_cfg.get("spacing", 0.05),
        margin=synth_cfg.get("margin", 0.3),
        rtol=synth_cfg.get("rtol", 1e-6),
        plane=measurement_grid(ref.measurement_plane_x3),
    )
    a = ref.propagated_plane_x3
    job = PropagationJob(b=ref.measurement_plane_x3, a=a)
    g_sim = {round(float(f.k), 6): restrict_to_sp(propagate(f, job))
             for f in sim_measured}
    sim_index = archive.save_plane_archive(
        list(g_sim.values()), run_dir / "reference_sim", prefix="gsim")

    shifted = {round(f.k, 6): f
               for f in archive.load_plane_archive(run_dir / "shifted")}
    calib = calibration_factor(g_sim, shifted)
    with open(run_dir / "calibration.json", "w") as fh:
        json.dump({"ks": calib.ks.tolist(), "d": calib.d.tolist()},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest = archive.RunManifest(run_dir)
    manifest.record(
        "calibrate",
        [run_dir / "shifted" / "index.json"],
        [sim_index, run_dir / "calibration.json"],
        time.monotonic() - t0,
    )
    return calib


def load_calibration(run_dir):
    with open(Path(run_dir) / "calibration.json") as fh:
        doc = json.load(fh)
    return CalibrationFactor(np.asarray(doc["ks"]), np.asarray(doc["d"]))


def _reconstruct(shifted, calib, grid, eps_pair, eps, inv_cfg):
    kbar = round(geometry.K_WORK_HIGH, 6)
    boundary = assemble_boundary(shifted, calib, grid, eps_pair, eps)
    mask = truncation_mask(shifted[kbar], grid,
                           level=inv_cfg.truncation_level,
                           window=inv_cfg.x3_window)
    return run_gcm(boundary, inv_cfg, mask)


def stage_invert(cfg, run_dir):
    """Assemble boundary data and run the inversion; write volume+metrics."""
    run_dir = Path(run_dir)
    t0 = time.monotonic()
    inv_cfg = inversion_config(cfg)
    grid = domain_grid(int(cfg.get("grid_n", 64)))
    shifted = {round(f.k, 6): f
               for f in archive.load_plane_archive(run_dir / "shifted")}
    eps_fields = archive.load_plane_archive(run_dir / "eps_pair")
    eps_pair = (eps_fields[0], eps_fields[1])
    if eps_pair[0].plane.x3 > eps_pair[1].plane.x3:
        eps_pair = (eps_pair[1], eps_pair[0])
    eps = float(cfg.get("eps_derivative", 0.1))
    calib = load_calibration(run_dir)
    kbar = round(geometry.K_WORK_HIGH, 6)

    split_used = False
    if cfg.get("split_two_targets"):
        try:
            _, _, side = split_two_targets(shifted[kbar],
                                           level=inv_cfg.truncation_level)
            split_used = True
        except ValidationError as err:
            log.info("two-target split rejected (%s); single path", err)
    if split_used:
        part_a, part_b = apply_split(shifted, side)
        res_a = _reconstruct(part_a, calib, grid, eps_pair, eps, inv_cfg)
        res_b = _reconstruct(part_b, calib, grid, eps_pair, eps, inv_cfg)
        result = merge_reconstructions(res_a, res_b)
    else:
        result = _reconstruct(shifted, calib, grid, eps_pair, eps, inv_cfg)

    archive.write_structured_points(grid, result.c_comp.c,
                                    run_dir / "c_comp.vtk", name="c")
    metrics = {
        "n_comp": result.n_comp,
        "max_c": result.max_c,
        "n0": result.n0,
        "i0": result.i0,
        "peak_location": list(result.peak_location),
        "epsilon_ledger": result.epsilons,
        "split_two_targets": split_used,
    }
    archive.save_metrics(metrics, run_dir / "metrics.json")
    manifest = archive.RunManifest(run_dir)
    manifest.record(
        "invert",
        [run_dir / "shifted" / "index.json", run_dir / "calibration.json",
         run_dir / "eps_pair" / "index.json"],
        [run_dir / "c_comp.vtk", run_dir / "metrics.json"],
        time.monotonic() - t0,
    )
    return result


def stage_report(cfg, run_dir):
    """Metrics plus plot-ready exports; relative error when truth is known."""
    run_dir = Path(run_dir)
    t0 = time.monotonic()
    metrics = archive.load_metrics(run_dir / "metrics.json")
    report = dict(metrics)
    truth = cfg.get("truth", {})
    if "n_true" in truth:
        n_true = float(truth["n_true"])
        report["n_true"] = n_true
        report["eps_comp_percent"] = (
            abs(n_true - metrics["n_comp"]) / n_true * 100.0
        )
    grid, volume = archive.read_structured_points(run_dir / "c_comp.vtk")
    pk = np.unravel_index(int(np.argmax(volume)), volume.shape)
    xs, zs = grid.axis(0), grid.axis(2)
    rows = []
    for ix in range(volume.shape[0]):
        for iz in range(volume.shape[2]):
            rows.append((xs[ix], zs[iz], volume[ix, pk[1], iz]))
    np.savetxt(run_dir / "slice_x2.csv", np.asarray(rows), delimiter=",",
               header="x1,x3,c", comments="")
    report["files"] = {
        "volume": "c_comp.vtk",
        "mid_slice": "slice_x2.csv",
        "sk_curve": "sk_curve.csv",
    }
    archive.save_metrics(report, run_dir / "report.json")
    manifest = archive.RunManifest(run_dir)
    manifest.record(
        "report",
        [run_dir / "metrics.json", run_dir / "c_comp.vtk"],
        [run_dir / "report.json", run_dir / "slice_x2.csv"],
        time.monotonic() - t0,
    )
    return report


def selftest(reduced=True):
    """Built-in checks: air fixed point, dense forward oracle, propagation
    round trip, and a manufactured elliptic solution.

    Reduced mode shrinks grids so the whole battery runs in seconds; the
    air and elliptic tolerances are then documented per check.
    """
    from . import selfchecks

    return selfchecks.run_all(reduced=reduced)
