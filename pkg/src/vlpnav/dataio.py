"""Dataset directory formats and configuration files.

A simulated dataset directory contains:

* ``imu.csv``        timestamp_s, ax, ay, az, gx, gy, gz (body frame, SI)
* ``rss_raw.csv``    timestamp_s, led_id, value (high-rate demodulated)
* ``rss_epoch.csv``  timestamp_s, led_id, value, variance, flag_truth
* ``truth.csv``      timestamp_s, px..pz, vx..vz, qw..qz, roll, pitch, yaw
* ``leds.json``      array of LED beacon records (SI units)
* ``scenario.json``  the resolved scenario that produced the data
* ``manifest.json``  seed, package version, conventions, file hashes

All angles in CSV files are radians; the manifest records the frame and
gravity conventions so estimators never guess them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import metadata as _metadata
from pathlib import Path

import numpy as np

from .attitude import euler_from_quat
from .channel import LedBeacon, ReceiverConfig, RssSample, SampleFlag
from .estimator import ConstraintConfig, EstimatorConfig, LmOptions, PriorConfig
from .preint import ImuNoise, ImuStream
from .simulator import EpochRss, RawRss, Scenario, TruthStream

try:
    _VERSION = _metadata.version("vlpnav")
except _metadata.PackageNotFoundError:  # running from a source tree
    _VERSION = "0.0.0+src"

MANIFEST_FORMAT = 1


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def led_map_to_records(leds) -> list[dict]:
    return [
        {
            "id": led.led_id,
            "position": led.position.tolist(),
            "normal": led.normal.tolist(),
            "order": led.order,
            "power": led.power,
            "modulation_hz": led.modulation_hz,
        }
        for led in leds
    ]


def led_map_from_records(records) -> list[LedBeacon]:
    return [
        LedBeacon(
            led_id=int(r["id"]),
            position=np.asarray(r["position"], dtype=float),
            normal=np.asarray(r.get("normal", [0, 0, 1]), dtype=float),
            order=float(r.get("order", 1.0)),
            power=float(r["power"]),
            modulation_hz=float(r.get("modulation_hz", 0.0)),
        )
        for r in records
    ]


def save_led_map(path, leds) -> None:
    Path(path).write_text(json.dumps(led_map_to_records(leds), indent=2))


def load_led_map(path) -> list[LedBeacon]:
    return led_map_from_records(json.loads(Path(path).read_text()))


def write_dataset(out_dir, scenario: Scenario, truth: TruthStream, imu: ImuStream,
                  raw: RawRss, epoch: EpochRss) -> dict:
    """Write a complete dataset directory; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    imu_arr = np.column_stack([imu.timestamps, imu.accel, imu.gyro])
    np.savetxt(out / "imu.csv", imu_arr, fmt="%.12g", delimiter=",",
               header="timestamp_s,ax,ay,az,gx,gy,gz", comments="")

    rows = []
    for led_id in sorted(raw.times):
        t = raw.times[led_id]
        v = raw.values[led_id]
        rows.append(np.column_stack([t, np.full(t.shape, led_id), v]))
    raw_arr = np.vstack(rows)
    order = np.lexsort((raw_arr[:, 1], raw_arr[:, 0]))
    np.savetxt(out / "rss_raw.csv", raw_arr[order], fmt="%.12g", delimiter=",",
               header="timestamp_s,led_id,value", comments="")

    ep_rows = np.array(
        [
            [s.timestamp, s.led_id, s.value, s.variance,
             {"los": 0, "blocked": 1, "out_of_fov": 2}[s.flag.value]]
            for s in epoch.samples
        ]
    )
    np.savetxt(out / "rss_epoch.csv", ep_rows, fmt="%.12g", delimiter=",",
               header="timestamp_s,led_id,value,variance,flag_truth", comments="")

    euler = np.array([euler_from_quat(q) for q in truth.attitude])
    truth_arr = np.column_stack(
        [truth.timestamps, truth.position, truth.velocity, truth.attitude, euler])
    np.savetxt(out / "truth.csv", truth_arr, fmt="%.12g", delimiter=",",
               header="timestamp_s,px,py,pz,vx,vy,vz,qw,qx,qy,qz,roll,pitch,yaw",
               comments="")

    save_led_map(out / "leds.json", scenario.leds)
    scenario.to_json(out / "scenario.json")

    z = truth.position[:, 2]
    roll0, pitch0, yaw0 = euler_from_quat(truth.attitude[0])
    manifest = {
        "format": MANIFEST_FORMAT,
        "package_version": _VERSION,
        "scenario_name": scenario.name,
        "seed": scenario.seed,
        "gravity": list(scenario.gravity),
        "frame_convention": "room frame z-up; VLP frame x-forward z-up; Hamilton q",
        "epoch_window_s": epoch.window,
        "epoch_rate_hz": scenario.rss.epoch_rate_hz,
        "raw_rate_hz": scenario.rss.raw_rate_hz,
        "rss_epoch_sigma": scenario.rss.epoch_sigma,
        "rss_raw_sigma": scenario.rss.raw_sigma,
        "initial_heading_rad": yaw0,
        "room_min": list(scenario.room_min),
        "room_max": list(scenario.room_max),
        "vehicle_z_range": [float(z.min()), float(z.max())],
        "planar": bool(z.max() - z.min() < 0.05),
        "receiver": {
            "area": scenario.receiver.area,
            "fov_half_angle_deg": float(np.rad2deg(scenario.receiver.fov_half_angle)),
            "filter_gain": scenario.receiver.filter_gain,
            "concentrator_gain": scenario.receiver.concentrator_gain,
            "lever_arm": scenario.receiver.lever_arm.tolist(),
            "dcm_body_to_vlp": scenario.receiver.dcm_body_to_vlp.tolist(),
            "pd_height": scenario.receiver.pd_height,
        },
        "imu": {
            "rate_hz": scenario.imu.rate_hz,
            "accel_noise_density": scenario.imu.accel_noise_density,
            "gyro_noise_density": scenario.imu.gyro_noise_density,
            "accel_bias_instability": scenario.imu.accel_bias_instability,
            "gyro_bias_instability": scenario.imu.gyro_bias_instability,
            "bias_corr_time": scenario.imu.bias_corr_time,
        },
        "detection": {
            "v_max": scenario.detection.v_max,
            "omega_max": scenario.detection.omega_max,
            "value_floor": scenario.detection.value_floor,
            "max_tilt_deg": scenario.detection.max_tilt_deg,
        },
        "blockages": [list(b) for b in scenario.blockages],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    hashes = {
        name: _sha256(out / name)
        for name in ("imu.csv", "rss_raw.csv", "rss_epoch.csv", "truth.csv",
                     "leds.json", "scenario.json")
    }
    manifest["file_sha256"] = hashes
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


_FLAGS = {0: SampleFlag.LOS, 1: SampleFlag.BLOCKED, 2: SampleFlag.OUT_OF_FOV}


@dataclass
class TruthArrays:
    timestamps: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    euler: np.ndarray


@dataclass
class Dataset:
    """In-memory view of a dataset directory."""

    path: Path
    manifest: dict
    leds: list
    receiver: ReceiverConfig
    imu: ImuStream
    raw_times: dict
    raw_values: dict
    epoch_samples: list  # RssSample with ground-truth flags
    truth: TruthArrays | None

    @property
    def epoch_times(self) -> np.ndarray:
        return np.unique([s.timestamp for s in self.epoch_samples])

    def epochs_by_time(self) -> list[tuple[float, list]]:
        by_t: dict[float, list] = {}
        for s in self.epoch_samples:
            by_t.setdefault(s.timestamp, []).append(s)
        return sorted(by_t.items())

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.manifest["gravity"], dtype=float)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json in {path}")
    manifest = json.loads((path / "manifest.json").read_text())
    leds = load_led_map(path / "leds.json")
    rx_d = manifest["receiver"]
    receiver = ReceiverConfig(
        area=float(rx_d["area"]),
        fov_half_angle=float(np.deg2rad(rx_d["fov_half_angle_deg"])),
        filter_gain=float(rx_d.get("filter_gain", 1.0)),
        concentrator_gain=float(rx_d.get("concentrator_gain", 1.0)),
        lever_arm=np.asarray(rx_d.get("lever_arm", [0, 0, 0]), dtype=float),
        dcm_body_to_vlp=np.asarray(rx_d.get("dcm_body_to_vlp", np.eye(3).tolist()),
                                   dtype=float),
        pd_height=float(rx_d.get("pd_height", 0.0)),
    )

    imu_arr = np.loadtxt(path / "imu.csv", delimiter=",", skiprows=1)
    imu = ImuStream(imu_arr[:, 0], imu_arr[:, 1:4], imu_arr[:, 4:7])

    raw_arr = np.loadtxt(path / "rss_raw.csv", delimiter=",", skiprows=1)
    raw_times: dict[int, np.ndarray] = {}
    raw_values: dict[int, np.ndarray] = {}
    for led_id in np.unique(raw_arr[:, 1]).astype(int):
        mask = raw_arr[:, 1].astype(int) == led_id
        raw_times[int(led_id)] = raw_arr[mask, 0]
        raw_values[int(led_id)] = raw_arr[mask, 2]

    ep_arr = np.loadtxt(path / "rss_epoch.csv", delimiter=",", skiprows=1)
    epoch_samples = [
        RssSample(timestamp=float(r[0]), led_id=int(r[1]), value=float(r[2]),
                  variance=float(r[3]), flag=_FLAGS[int(r[4])])
        for r in np.atleast_2d(ep_arr)
    ]

    truth = None
    if (path / "truth.csv").exists():
        t_arr = np.loadtxt(path / "truth.csv", delimiter=",", skiprows=1)
        truth = TruthArrays(
            timestamps=t_arr[:, 0],
            position=t_arr[:, 1:4],
            velocity=t_arr[:, 4:7],
            attitude=t_arr[:, 7:11],
            euler=t_arr[:, 11:14],
        )

    return Dataset(path=path, manifest=manifest, leds=leds, receiver=receiver, imu=imu,
                   raw_times=raw_times, raw_values=raw_values,
                   epoch_samples=epoch_samples, truth=truth)


# ---------------------------------------------------------------------------
# Estimator configuration files


def estimator_config_from_dict(d: dict, dataset: Dataset) -> EstimatorConfig:
    """Build an estimator configuration, defaulting from dataset metadata.

    File keys (all optional): window_size, blocked_variance, use_nhc,
    nhc_sigma, use_height, height_sigma, pd_height, lm {...},
    prior {...}, unknown_led_ids, noise overrides.
    """
    man = dataset.manifest
    imu_man = man["imu"]
    tau = float(imu_man.get("bias_corr_time", 100.0))
    noise = ImuNoise(
        accel_density=float(d.get("accel_noise_density",
                                  imu_man["accel_noise_density"])),
        gyro_density=float(d.get("gyro_noise_density", imu_man["gyro_noise_density"])),
        accel_bias_walk=float(d.get(
            "accel_bias_walk",
            imu_man["accel_bias_instability"] * np.sqrt(2.0 / tau))),
        gyro_bias_walk=float(d.get(
            "gyro_bias_walk",
            imu_man["gyro_bias_instability"] * np.sqrt(2.0 / tau))),
    )
    planar = bool(man.get("planar", False))
    constraints = ConstraintConfig(
        use_nhc=bool(d.get("use_nhc", True)),
        nhc_sigma=float(d.get("nhc_sigma", 0.05)),
        use_height=bool(d.get("use_height", planar)),
        height_sigma=float(d.get("height_sigma", 0.01)),
        pd_height=float(d.get("pd_height", man["receiver"].get("pd_height", 0.0))),
    )
    lm_d = d.get("lm", {})
    lm = LmOptions(
        max_iterations=int(lm_d.get("max_iterations", 50)),
        cost_reduction_tol=float(lm_d.get("cost_reduction_tol", 1e-8)),
        step_norm_tol=float(lm_d.get("step_norm_tol", 1e-10)),
    )
    prior_d = d.get("prior", {})
    prior = PriorConfig(
        position=float(prior_d.get("position", 0.2)),
        velocity=float(prior_d.get("velocity", 0.2)),
        rollpitch=float(prior_d.get("rollpitch", np.deg2rad(2.0))),
        heading=float(prior_d.get("heading", np.deg2rad(0.5))),
        bias_acc=float(prior_d.get("bias_acc", 0.02)),
        bias_gyro=float(prior_d.get("bias_gyro", 2e-3)),
    )
    unknown = tuple(int(i) for i in d.get("unknown_led_ids", ()))
    window = int(d.get("window_size", 50 if unknown else 20))
    return EstimatorConfig(
        imu_noise=noise,
        window_size=window,
        blocked_variance=float(d.get("blocked_variance", 99.0)),
        gravity=tuple(man["gravity"]),
        constraints=constraints,
        lm=lm,
        prior=prior,
        unknown_led_ids=unknown,
    )


def load_estimator_config(path, dataset: Dataset) -> EstimatorConfig:
    d = {} if path is None else json.loads(Path(path).read_text())
    return estimator_config_from_dict(d, dataset)
