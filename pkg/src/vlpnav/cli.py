"""Command-line entry points: simulate, detect, estimate, evaluate.

Every command is reproducible from its output manifest (seed, resolved
configuration and input hashes).  Exit codes: 0 success, 2 usage or
input error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attitude import euler_from_quat
from .baselines import initial_state, run_loosely_coupled, vlp_only_trajectory
from .blockage import DrdConfig, DrdDetector, annotate_epochs
from .channel import SampleFlag
from .dataio import Dataset, load_dataset, load_estimator_config, write_dataset
from .estimator import TightlyCoupledEstimator, estimate_unknown_leds
from .metrics import (
    DisjointTimeRangesError,
    RunReport,
    detection_scores,
    evaluate_run,
    save_cdf_csv,
)
from .preint import preintegrate
from .simulator import (
    Scenario,
    generate_trajectory,
    reference_scenarios,
    synthesize_imu,
    synthesize_rss,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTERNAL = 3

TRAJ_HEADER = ("timestamp_s,px,py,pz,vx,vy,vz,qw,qx,qy,qz,roll,pitch,yaw,"
               "bax,bay,baz,bgx,bgy,bgz")


class InputError(RuntimeError):
    """User-facing input problem: bad path, schema or option."""


# ---------------------------------------------------------------------------
# simulate


def _resolve_scenario(spec: str, seed: int | None) -> Scenario:
    fixtures = reference_scenarios(seed=seed)
    if spec in fixtures:
        return fixtures[spec]
    path = Path(spec)
    if not path.exists():
        raise InputError(
            f"scenario '{spec}' is neither a fixture ({', '.join(sorted(fixtures))}) "
            "nor a file")
    try:
        scenario = Scenario.from_json(path)
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise InputError(f"invalid scenario file {path}: {e}") from e
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return scenario


def cmd_simulate(args) -> int:
    scenario = _resolve_scenario(args.scenario, args.seed)
    truth = generate_trajectory(scenario)
    imu = synthesize_imu(truth, scenario)
    raw, epoch = synthesize_rss(truth, scenario)
    manifest = write_dataset(args.out, scenario, truth, imu, raw, epoch)
    n_epochs = len({s.timestamp for s in epoch.samples})
    print(f"dataset '{scenario.name}' seed {scenario.seed}: "
          f"{truth.duration:.1f} s, {n_epochs} epochs -> {args.out}")
    del manifest
    return EXIT_OK


# ---------------------------------------------------------------------------
# detection pipeline


def build_detector(dataset: Dataset) -> DrdDetector:
    man = dataset.manifest
    det = man["detection"]
    cfg = DrdConfig(
        v_max=float(det["v_max"]),
        omega_max=float(det["omega_max"]),
        sample_rate=float(man["raw_rate_hz"]),
        value_floor=float(det["value_floor"]),
        max_tilt=float(np.deg2rad(det["max_tilt_deg"])),
    )
    z_lo, z_hi = man["vehicle_z_range"]
    room_min = (man["room_min"][0], man["room_min"][1],
                max(z_lo - 0.1, man["room_min"][2]))
    room_max = (man["room_max"][0], man["room_max"][1],
                min(z_hi + 0.1, man["room_max"][2]))
    return DrdDetector.for_scene(cfg, dataset.leds, dataset.receiver, room_min, room_max)


def run_detection(dataset: Dataset):
    """DRD over the raw streams; returns epoch flags and tag CSV rows.

    Epoch flags map (timestamp, led_id) -> SampleFlag, derived causally
    from the raw tags (ground-truth labels are never consulted).
    """
    detector = build_detector(dataset)
    window = float(dataset.manifest["epoch_window_s"])
    flags = {}
    tag_rows = []
    by_led = {}
    for s in dataset.epoch_samples:
        by_led.setdefault(s.led_id, []).append(s)
    for led_id in sorted(dataset.raw_times):
        t = dataset.raw_times[led_id]
        v = dataset.raw_values[led_id]
        out = detector.run(t, np.full(t.shape, led_id), v)
        tt, tags, counters = out[led_id]
        for a, b, c in zip(tt, tags, counters):
            tag_rows.append((a, led_id, int(b), int(c)))
        annotated = annotate_epochs(by_led.get(led_id, []), tt, tags, window)
        for s in annotated:
            flags[(s.timestamp, s.led_id)] = s.flag
    tag_rows.sort(key=lambda r: (r[0], r[1]))
    return flags, tag_rows


def cmd_detect(args) -> int:
    dataset = load_dataset(args.dataset)
    flags, tag_rows = run_detection(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "drd_tags.csv", np.asarray(tag_rows, dtype=float), fmt="%.12g",
               delimiter=",", header="timestamp_s,led_id,tag,counter", comments="")
    n_blocked = sum(1 for f in flags.values() if f is not SampleFlag.LOS)
    print(f"detector: {n_blocked} flagged epochs of {len(flags)} -> {out / 'drd_tags.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate


def _truth_flags(dataset: Dataset) -> dict:
    return {(s.timestamp, s.led_id): s.flag for s in dataset.epoch_samples}


def _write_trajectory(path, times, positions, velocities, quats, biases_a, biases_g):
    rows = []
    for i, t in enumerate(times):
        q = quats[i]
        roll, pitch, yaw = euler_from_quat(q)
        rows.append(np.concatenate([[t], positions[i], velocities[i], q,
                                    [roll, pitch, yaw], biases_a[i], biases_g[i]]))
    np.savetxt(path, np.asarray(rows), fmt="%.12g", delimiter=",",
               header=TRAJ_HEADER, comments="")


def _states_to_arrays(states):
    t = np.array([s.timestamp for s in states])
    p = np.array([s.position for s in states])
    v = np.array([s.velocity for s in states])
    q = np.array([s.attitude for s in states])
    ba = np.array([s.bias_acc for s in states])
    bg = np.array([s.bias_gyro for s in states])
    return t, p, v, q, ba, bg


def run_tc(dataset: Dataset, config, flags, unknown_init=None):
    """Tightly-coupled run over a dataset; returns states and diagnostics."""
    epochs = dataset.epochs_by_time()
    x0 = initial_state(dataset)
    est = TightlyCoupledEstimator(config, dataset.leds, dataset.receiver)

    def flagged(samples):
        return [replace(
            s, flag=flags.get((s.timestamp, s.led_id), SampleFlag.LOS),
            variance=s.variance) for s in samples]

    est.start(x0, flagged(epochs[0][1]), unknown_init=unknown_init)
    t_prev = epochs[0][0]
    for t_k, samples in epochs[1:]:
        stream = dataset.imu.slice(t_prev, t_k)
        state_k = est.window.states[-1]
        pre = preintegrate(stream, state_k.bias_acc, state_k.bias_gyro,
                           dataset.receiver.dcm_body_to_vlp, config.imu_noise,
                           t_end=t_k)
        est.step(pre, flagged(samples), t_k)
        t_prev = t_k
    report = None
    led_results = {}
    if config.unknown_led_ids:
        led_results = estimate_unknown_leds(est.window)
    est.finalize()
    return est, led_results, report


def cmd_estimate(args) -> int:
    dataset = load_dataset(args.dataset)
    config = load_estimator_config(args.config, dataset)
    if args.window is not None:
        config = replace(config, window_size=int(args.window))
    unknown_ids = ()
    if args.unknown_leds:
        unknown_ids = tuple(int(x) for x in args.unknown_leds.split(","))
        config = replace(config, unknown_led_ids=unknown_ids,
                         window_size=(int(args.window) if args.window is not None
                                      else max(config.window_size, 50)))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t_start = time.perf_counter()
    tag_rows = None
    if args.no_drd:
        flags = {}
    else:
        flags, tag_rows = run_detection(dataset)
        np.savetxt(out / "drd_tags.csv", np.asarray(tag_rows, dtype=float),
                   fmt="%.12g", delimiter=",",
                   header="timestamp_s,led_id,tag,counter", comments="")

    mode = args.mode
    n_fix_failures = 0
    led_results = {}
    if mode == "tc":
        unknown_init = None
        if unknown_ids:
            # Unknown LEDs start from the room center unless told otherwise.
            center = 0.5 * (np.asarray(dataset.manifest["room_min"][:2])
                            + np.asarray(dataset.manifest["room_max"][:2]))
            unknown_init = {i: center.copy() for i in unknown_ids}
            for part in (args.led_init or "").split(";"):
                if not part:
                    continue
                key, _, val = part.partition("=")
                x, _, y = val.partition(",")
                unknown_init[int(key)] = np.array([float(x), float(y)])
        est, led_results, _ = run_tc(dataset, config, flags, unknown_init=unknown_init)
        t_c, p_c, v_c, q_c, ba_c, bg_c = _states_to_arrays(est.causal)
        _write_trajectory(out / "trajectory.csv", t_c, p_c, v_c, q_c, ba_c, bg_c)
        t_s, p_s, v_s, q_s, ba_s, bg_s = _states_to_arrays(est.smoothed)
        _write_trajectory(out / "trajectory_smoothed.csv", t_s, p_s, v_s, q_s,
                          ba_s, bg_s)
        diag_rows = []
        led_cols = sorted(config.unknown_led_ids)
        for d in est.diagnostics:
            row = [d.epoch_id, d.timestamp, d.cost, d.iterations, int(d.converged),
                   d.los_count, d.flagged_count]
            row.extend(d.led_dop.get(i, float("nan")) for i in led_cols)
            diag_rows.append(row)
        header = "epoch,timestamp_s,cost,iterations,converged,los_count,flagged_count"
        header += "".join(f",dop_led{i}" for i in led_cols)
        np.savetxt(out / "diagnostics.csv", np.asarray(diag_rows), fmt="%.12g",
                   delimiter=",", header=header, comments="")
        est_t, est_p, est_q = t_c, p_c, q_c
    elif mode == "lc":
        lc = run_loosely_coupled(dataset, flags)
        zeros = np.zeros_like(lc.position)
        _write_trajectory(out / "trajectory.csv", lc.timestamps, lc.position,
                          lc.velocity, lc.attitude, zeros, zeros)
        est_t, est_p, est_q = lc.timestamps, lc.position, lc.attitude
    elif mode == "vlp_only":
        variant = args.vlp_variant or ("tilt" if dataset.manifest.get("planar")
                                       else "level")
        fixes = vlp_only_trajectory(dataset, flags, variant=variant)
        rows_t, rows_p, rows_q = [], [], []
        from .attitude import quat_to_dcm

        for fx in fixes:
            if not fx.ok:
                n_fix_failures += 1
                continue
            if fx.held:
                n_fix_failures += 1
            q = fx.attitude if fx.attitude is not None else np.array([1.0, 0, 0, 0])
            # Report the navigation (IMU) center like the other modes.
            p_imu = fx.position - quat_to_dcm(q) @ dataset.receiver.lever_arm_vlp
            rows_t.append(fx.timestamp)
            rows_p.append(p_imu)
            rows_q.append(q)
        if not rows_t:
            raise InputError("VLP-only produced no fixes; dataset unusable")
        est_t = np.asarray(rows_t)
        est_p = np.asarray(rows_p)
        est_q = np.asarray(rows_q)
        zeros = np.zeros_like(est_p)
        _write_trajectory(out / "trajectory.csv", est_t, est_p, zeros, est_q,
                          zeros, zeros)
    else:
        raise InputError(f"unknown mode '{mode}'")
    runtime = time.perf_counter() - t_start

    report = None
    if dataset.truth is not None:
        report = evaluate_run(mode, est_t, est_p, dataset.truth, est_attitudes=est_q,
                              runtime_s=runtime, n_fix_failures=n_fix_failures)
        if not args.no_drd:
            prec, rec = detection_scores(flags, _truth_flags(dataset))
            report.detection_precision = prec
            report.detection_recall = rec
        for led_id, res in led_results.items():
            true_led = next(led for led in dataset.leds if led.led_id == led_id)
            err = float("inf") if res.diverged else float(
                np.linalg.norm(res.xy - true_led.position[:2]))
            report.led_errors[led_id] = err
        report.save(out / "report.json")
        save_cdf_csv(out / "cdf.csv", report)
        print(f"{mode}: mean2d={report.mean_2d:.3f} m mean3d={report.mean_3d:.3f} m "
              f"incl={report.mean_inclination_deg:.3f} deg "
              f"heading={report.mean_heading_deg:.3f} deg ({runtime:.1f} s)")
    else:
        print(f"{mode}: no truth available; wrote trajectory only ({runtime:.1f} s)")

    run_manifest = {
        "command": "estimate",
        "mode": mode,
        "dataset": str(Path(args.dataset).resolve()),
        "dataset_sha256": _dataset_hash(dataset),
        "config": _config_dict(config),
        "no_drd": bool(args.no_drd),
        "unknown_led_ids": list(unknown_ids),
        "runtime_s": runtime,
    }
    (out / "manifest.json").write_text(json.dumps(run_manifest, indent=2))
    return EXIT_OK


def _dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for name in sorted(dataset.manifest.get("file_sha256", {})):
        h.update(dataset.manifest["file_sha256"][name].encode())
    return h.hexdigest()


def _config_dict(config) -> dict:
    return {
        "window_size": config.window_size,
        "blocked_variance": config.blocked_variance,
        "gravity": list(config.gravity),
        "constraints": {
            "use_nhc": config.constraints.use_nhc,
            "nhc_sigma": config.constraints.nhc_sigma,
            "use_height": config.constraints.use_height,
            "height_sigma": config.constraints.height_sigma,
            "pd_height": config.constraints.pd_height,
        },
        "imu_noise": {
            "accel_density": config.imu_noise.accel_density,
            "gyro_density": config.imu_noise.gyro_density,
            "accel_bias_walk": config.imu_noise.accel_bias_walk,
            "gyro_bias_walk": config.imu_noise.gyro_bias_walk,
        },
        "lm": {
            "max_iterations": config.lm.max_iterations,
            "cost_reduction_tol": config.lm.cost_reduction_tol,
            "step_norm_tol": config.lm.step_norm_tol,
        },
        "unknown_led_ids": list(config.unknown_led_ids),
    }


# ---------------------------------------------------------------------------
# evaluate


def _load_trajectory_csv(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1)
    arr = np.atleast_2d(arr)
    return arr[:, 0], arr[:, 1:4], arr[:, 7:11]


def cmd_evaluate(args) -> int:
    from .dataio import TruthArrays

    traj_path = Path(args.trajectory)
    truth_path = Path(args.truth)
    if not traj_path.exists():
        raise InputError(f"trajectory file not found: {traj_path}")
    if not truth_path.exists():
        raise InputError(f"truth file not found: {truth_path}")
    t, p, q = _load_trajectory_csv(traj_path)
    t_arr = np.atleast_2d(np.loadtxt(truth_path, delimiter=",", skiprows=1))
    truth = TruthArrays(timestamps=t_arr[:, 0], position=t_arr[:, 1:4],
                        velocity=t_arr[:, 4:7], attitude=t_arr[:, 7:11],
                        euler=t_arr[:, 11:14])
    report = evaluate_run(args.mode, t, p, truth, est_attitudes=q)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    save_cdf_csv(out / "cdf.csv", report)
    print(f"evaluated {len(t)} epochs: mean2d={report.mean_2d:.4f} m "
          f"mean3d={report.mean_3d:.4f} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlpnav",
        description="Tightly-coupled VLP/INS navigation: simulate, detect, "
                    "estimate, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a dataset from a scenario")
    p_sim.add_argument("--scenario", required=True,
                       help="fixture name (sim3d, expA, ...) or scenario JSON path")
    p_sim.add_argument("--out", required=True, help="output dataset directory")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_det = sub.add_parser("detect", help="run blockage detection over a dataset")
    p_det.add_argument("--dataset", required=True)
    p_det.add_argument("--out", required=True)
    p_det.set_defaults(func=cmd_detect)

    p_est = sub.add_parser("estimate", help="estimate a trajectory from a dataset")
    p_est.add_argument("--dataset", required=True)
    p_est.add_argument("--config", default=None, help="estimator config JSON")
    p_est.add_argument("--mode", choices=("tc", "lc", "vlp_only"), default="tc")
    p_est.add_argument("--no-drd", action="store_true",
                       help="skip blockage detection (treat all samples as LOS)")
    p_est.add_argument("--window", type=int, default=None)
    p_est.add_argument("--unknown-leds", default=None,
                       help="comma-separated LED ids to estimate")
    p_est.add_argument("--led-init", default=None,
                       help="initial planar guesses, e.g. '3=1.0,2.5;5=2.0,2.0'")
    p_est.add_argument("--vlp-variant", choices=("level", "tilt"), default=None)
    p_est.add_argument("--seed", type=int, default=None, help="unused; for manifests")
    p_est.add_argument("--out", required=True)
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("evaluate", help="score a trajectory against truth")
    p_eval.add_argument("--trajectory", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--mode", default="unknown", help="label recorded in the report")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, DisjointTimeRangesError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
