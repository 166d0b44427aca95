"""Deterministic scenario generator: trajectories, IMU and RSS synthesis.

A scenario describes a room with ceiling LEDs, a vehicle trajectory as
waypoints with per-segment speeds (plus a commanded gimbal pitch
profile), IMU noise characteristics and a per-LED blockage schedule.

Trajectory model: straight travel segments with quintic speed ramps,
stop-and-turn transitions that blend yaw and slope pitch with quintic
profiles, and dwell phases.  The resulting analytic profile is C2 in
position and attitude, so synthesized IMU streams contain no rate
spikes.  The *emitted truth* is the first-order strapdown integration of
the ideal IMU stream from the true initial state: truth, IMU and RSS are
then mutually consistent to round-off rather than to discretization
error.

Blockage shaping: raw high-rate RSS drops to zero (plus noise) inside a
scheduled interval; the low-rate epoch value is the average of the raw
demodulation window, so a blockage covering half a window halves the
epoch value instead of zeroing it.  Epoch records carry ground-truth
labels for detector scoring.

Determinism: all randomness flows from the scenario seed through named
``SeedSequence`` children, one per stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attitude import quat_from_euler, quat_multiply, quat_normalize, quat_to_dcm
from .channel import LedBeacon, ReceiverConfig, RssSample, SampleFlag
from .preint import ImuStream

D2R = np.pi / 180.0


# ---------------------------------------------------------------------------
# Scenario description


@dataclass(frozen=True)
class TrajectorySpec:
    waypoints: tuple  # ((x, y, z), ...)
    speeds: tuple  # per-segment average speed, m/s
    ramp_time: float = 0.8
    turn_rate: float = 0.4  # rad/s commanded during in-place turns
    min_turn_time: float = 1.0
    initial_dwell: float = 2.0
    dwell_time: float = 2.0  # used for zero-length segments
    gimbal_pitch_deg: tuple = ()  # ((time s, pitch-up deg), ...)


@dataclass(frozen=True)
class ImuSpec:
    rate_hz: float
    accel_noise_density: float  # m/s^2/sqrt(Hz)
    gyro_noise_density: float  # rad/s/sqrt(Hz)
    accel_bias_instability: float  # m/s^2
    gyro_bias_instability: float  # rad/s
    bias_corr_time: float = 100.0  # s, Gauss-Markov approximation of flicker
    initial_accel_bias: tuple = (0.0, 0.0, 0.0)
    initial_gyro_bias: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RssSpec:
    raw_rate_hz: float = 120.0
    epoch_rate_hz: float = 1.0
    raw_sigma: float = 5e-4  # on the high-rate demodulated amplitude
    epoch_sigma: float = 0.1  # on the epoch (positioning) amplitude


@dataclass(frozen=True)
class DetectionSpec:
    v_max: float = 0.6
    omega_max: float = 0.6
    value_floor: float = 0.05
    max_tilt_deg: float = 25.0


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    room_min: tuple
    room_max: tuple
    leds: tuple  # LedBeacon
    receiver: ReceiverConfig
    trajectory: TrajectorySpec
    imu: ImuSpec
    rss: RssSpec = field(default_factory=RssSpec)
    blockages: tuple = ()  # ((led_id, start_s, end_s), ...)
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    gravity: tuple = (0.0, 0.0, -9.80665)

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "room_min": list(self.room_min),
            "room_max": list(self.room_max),
            "gravity": list(self.gravity),
            "leds": [
                {
                    "id": led.led_id,
                    "position": led.position.tolist(),
                    "normal": led.normal.tolist(),
                    "order": led.order,
                    "power": led.power,
                    "modulation_hz": led.modulation_hz,
                }
                for led in self.leds
            ],
            "receiver": {
                "area": self.receiver.area,
                "fov_half_angle_deg": float(np.rad2deg(self.receiver.fov_half_angle)),
                "filter_gain": self.receiver.filter_gain,
                "concentrator_gain": self.receiver.concentrator_gain,
                "lever_arm": self.receiver.lever_arm.tolist(),
                "dcm_body_to_vlp": self.receiver.dcm_body_to_vlp.tolist(),
                "pd_height": self.receiver.pd_height,
            },
            "trajectory": {
                "waypoints": [list(w) for w in self.trajectory.waypoints],
                "speeds": list(self.trajectory.speeds),
                "ramp_time": self.trajectory.ramp_time,
                "turn_rate": self.trajectory.turn_rate,
                "min_turn_time": self.trajectory.min_turn_time,
                "initial_dwell": self.trajectory.initial_dwell,
                "dwell_time": self.trajectory.dwell_time,
                "gimbal_pitch_deg": [list(k) for k in self.trajectory.gimbal_pitch_deg],
            },
            "imu": {
                "rate_hz": self.imu.rate_hz,
                "accel_noise_density": self.imu.accel_noise_density,
                "gyro_noise_density": self.imu.gyro_noise_density,
                "accel_bias_instability": self.imu.accel_bias_instability,
                "gyro_bias_instability": self.imu.gyro_bias_instability,
                "bias_corr_time": self.imu.bias_corr_time,
                "initial_accel_bias": list(self.imu.initial_accel_bias),
                "initial_gyro_bias": list(self.imu.initial_gyro_bias),
            },
            "rss": {
                "raw_rate_hz": self.rss.raw_rate_hz,
                "epoch_rate_hz": self.rss.epoch_rate_hz,
                "raw_sigma": self.rss.raw_sigma,
                "epoch_sigma": self.rss.epoch_sigma,
            },
            "blockages": [list(b) for b in self.blockages],
            "detection": {
                "v_max": self.detection.v_max,
                "omega_max": self.detection.omega_max,
                "value_floor": self.detection.value_floor,
                "max_tilt_deg": self.detection.max_tilt_deg,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        leds = tuple(
            LedBeacon(
                led_id=int(entry["id"]),
                position=np.asarray(entry["position"], dtype=float),
                normal=np.asarray(entry.get("normal", [0, 0, 1]), dtype=float),
                order=float(entry.get("order", 1.0)),
                power=float(entry["power"]),
                modulation_hz=float(entry.get("modulation_hz", 0.0)),
            )
            for entry in d["leds"]
        )
        rx = d["receiver"]
        receiver = ReceiverConfig(
            area=float(rx["area"]),
            fov_half_angle=float(rx["fov_half_angle_deg"]) * D2R,
            filter_gain=float(rx.get("filter_gain", 1.0)),
            concentrator_gain=float(rx.get("concentrator_gain", 1.0)),
            lever_arm=np.asarray(rx.get("lever_arm", [0, 0, 0]), dtype=float),
            dcm_body_to_vlp=np.asarray(rx.get("dcm_body_to_vlp", np.eye(3).tolist()),
                                       dtype=float),
            pd_height=float(rx.get("pd_height", 0.0)),
        )
        tr = d["trajectory"]
        trajectory = TrajectorySpec(
            waypoints=tuple(tuple(w) for w in tr["waypoints"]),
            speeds=tuple(tr["speeds"]),
            ramp_time=float(tr.get("ramp_time", 0.8)),
            turn_rate=float(tr.get("turn_rate", 0.4)),
            min_turn_time=float(tr.get("min_turn_time", 1.0)),
            initial_dwell=float(tr.get("initial_dwell", 2.0)),
            dwell_time=float(tr.get("dwell_time", 2.0)),
            gimbal_pitch_deg=tuple(tuple(k) for k in tr.get("gimbal_pitch_deg", [])),
        )
        im = d["imu"]
        imu = ImuSpec(
            rate_hz=float(im["rate_hz"]),
            accel_noise_density=float(im["accel_noise_density"]),
            gyro_noise_density=float(im["gyro_noise_density"]),
            accel_bias_instability=float(im["accel_bias_instability"]),
            gyro_bias_instability=float(im["gyro_bias_instability"]),
            bias_corr_time=float(im.get("bias_corr_time", 100.0)),
            initial_accel_bias=tuple(im.get("initial_accel_bias", (0, 0, 0))),
            initial_gyro_bias=tuple(im.get("initial_gyro_bias", (0, 0, 0))),
        )
        rs = d.get("rss", {})
        det = d.get("detection", {})
        return cls(
            name=d["name"],
            seed=int(d["seed"]),
            room_min=tuple(d["room_min"]),
            room_max=tuple(d["room_max"]),
            leds=leds,
            receiver=receiver,
            trajectory=trajectory,
            imu=imu,
            rss=RssSpec(**rs) if rs else RssSpec(),
            blockages=tuple(tuple(b) for b in d.get("blockages", [])),
            detection=DetectionSpec(**det) if det else DetectionSpec(),
            gravity=tuple(d.get("gravity", (0.0, 0.0, -9.80665))),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Quintic building blocks


def _smoothstep(tau):
    """Quintic smoothstep and its first two derivatives on [0, 1]."""
    tau = np.clip(tau, 0.0, 1.0)
    p = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
    dp = 30.0 * tau**2 * (1.0 - tau) ** 2
    ddp = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * tau**2)
    return p, dp, ddp


def _smoothstep_integral(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return 2.5 * tau**4 - 3.0 * tau**5 + tau**6


class _KnotProfile:
    """C2 scalar profile through (time, value) knots via quintic blends.

    The value holds each knot level and glides to the next with zero
    end-rate and end-acceleration, so adding it to an attitude angle
    never spikes the gyro.
    """

    def __init__(self, knots):
        knots = sorted((float(t), float(v)) for t, v in knots)
        self.times = np.array([k[0] for k in knots]) if knots else np.zeros(0)
        self.values = np.array([k[1] for k in knots]) if knots else np.zeros(0)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t), np.zeros_like(t)
        val = np.full(t.shape, self.values[0])
        rate = np.zeros_like(t)
        for i in range(self.times.size - 1):
            t0, t1 = self.times[i], self.times[i + 1]
            v0, v1 = self.values[i], self.values[i + 1]
            span = max(t1 - t0, 1e-9)
            tau = (t - t0) / span
            p, dp, _ = _smoothstep(tau)
            seg = (t >= t0) & (t < t1)
            val = np.where(seg, v0 + (v1 - v0) * p, val)
            rate = np.where(seg, (v1 - v0) * dp / span, rate)
        val = np.where(t >= self.times[-1], self.values[-1], val)
        rate = np.where(t >= self.times[-1], 0.0, rate)
        return val, rate


# ---------------------------------------------------------------------------
# Trajectory phases


@dataclass
class _Phase:
    kind: str  # dwell | turn | travel
    t0: float
    duration: float
    pos0: np.ndarray
    direction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    length: float = 0.0
    cruise: float = 0.0
    ramp: float = 0.0
    yaw0: float = 0.0
    yaw1: float = 0.0
    pitch0: float = 0.0
    pitch1: float = 0.0

    @property
    def t1(self):
        return self.t0 + self.duration


def _segment_yaw_pitch(direction):
    yaw = float(np.arctan2(direction[1], direction[0]))
    pitch = float(-np.arcsin(np.clip(direction[2], -1.0, 1.0)))
    return yaw, pitch


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _build_phases(spec: TrajectorySpec, v_max: float, omega_max: float) -> list[_Phase]:
    wps = [np.asarray(w, dtype=float) for w in spec.waypoints]
    if len(wps) < 2:
        raise ValueError("trajectory needs at least two waypoints")
    if len(spec.speeds) != len(wps) - 1:
        raise ValueError("need one speed per segment")

    segments = []
    for a, b, v in zip(wps[:-1], wps[1:], spec.speeds):
        d = b - a
        length = float(np.linalg.norm(d))
        segments.append((a, b, length, d / length if length > 1e-9 else None, float(v)))

    # Initial attitude faces the first real segment.
    first_dir = next((s[3] for s in segments if s[3] is not None), np.array([1.0, 0.0, 0.0]))
    yaw, pitch = _segment_yaw_pitch(first_dir)

    phases: list[_Phase] = []
    t = 0.0
    if spec.initial_dwell > 0.0:
        phases.append(_Phase("dwell", t, spec.initial_dwell, wps[0], yaw0=yaw, yaw1=yaw,
                             pitch0=pitch, pitch1=pitch))
        t += spec.initial_dwell

    for a, b, length, direction, v in segments:
        if direction is None:
            phases.append(_Phase("dwell", t, spec.dwell_time, a, yaw0=yaw, yaw1=yaw,
                                 pitch0=pitch, pitch1=pitch))
            t += spec.dwell_time
            continue
        new_yaw, new_pitch = _segment_yaw_pitch(direction)
        dyaw = _wrap_angle(new_yaw - yaw)
        dpitch = new_pitch - pitch
        if abs(dyaw) > 1e-9 or abs(dpitch) > 1e-9:
            angle = max(abs(dyaw), abs(dpitch))
            duration = max(spec.min_turn_time, 1.875 * angle / spec.turn_rate)
            peak = 1.875 * angle / duration
            if peak > omega_max + 1e-9:
                raise ValueError(
                    f"turn rate {peak:.3f} rad/s exceeds omega_max {omega_max}")
            phases.append(_Phase("turn", t, duration, a, yaw0=yaw, yaw1=yaw + dyaw,
                                 pitch0=pitch, pitch1=new_pitch))
            t += duration
            yaw, pitch = yaw + dyaw, new_pitch
        if v <= 0.0:
            raise ValueError("segment speed must be positive")
        duration = length / v
        ramp = min(spec.ramp_time, duration / 3.0)
        cruise = length / (duration - ramp)
        if cruise > v_max + 1e-9:
            raise ValueError(
                f"cruise speed {cruise:.3f} m/s exceeds v_max {v_max}; "
                "lower the segment speed or lengthen the segment")
        phases.append(_Phase("travel", t, duration, a, direction=direction, length=length,
                             cruise=cruise, ramp=ramp, yaw0=yaw, yaw1=yaw,
                             pitch0=pitch, pitch1=pitch))
        t += duration
    return phases


def _travel_state(ph: _Phase, t_rel):
    """Arc length, speed and acceleration along a travel phase."""
    vc, tr, T = ph.cruise, ph.ramp, ph.duration
    if t_rel < tr:
        tau = t_rel / tr
        p, dp, _ = _smoothstep(tau)
        s = vc * tr * _smoothstep_integral(tau)
        v = vc * p
        a = vc * dp / tr
    elif t_rel < T - tr:
        s = vc * tr / 2.0 + vc * (t_rel - tr)
        v, a = vc, 0.0
    else:
        tau = (t_rel - (T - tr)) / tr
        p, dp, _ = _smoothstep(tau)
        s = vc * tr / 2.0 + vc * (T - 2.0 * tr) + vc * tr * (tau - _smoothstep_integral(tau))
        v = vc * (1.0 - p)
        a = -vc * dp / tr
    return s, v, a


# ---------------------------------------------------------------------------
# Truth stream


@dataclass
class TruthStream:
    """Dense ground truth sampled at the IMU rate, with ideal IMU attached."""

    timestamps: np.ndarray  # (N,)
    position: np.ndarray  # (N, 3)
    velocity: np.ndarray  # (N, 3)
    attitude: np.ndarray  # (N, 4) VLP-frame-to-room quaternions
    accel_u: np.ndarray  # (N, 3) kinematic acceleration, room frame
    gyro_v: np.ndarray  # (N, 3) VLP-frame angular rate
    specific_force_b: np.ndarray  # (N, 3) ideal accelerometer, body frame
    gyro_b: np.ndarray  # (N, 3) ideal gyroscope, body frame
    gravity: np.ndarray  # (3,)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    def index_at(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.timestamps, t), 0, self.timestamps.size - 1))

    def pose_at(self, t):
        """Linear position / normalized-lerp attitude interpolation."""
        ts = self.timestamps
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, ts.size - 2))
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        w = float(np.clip(w, 0.0, 1.0))
        p = (1 - w) * self.position[i] + w * self.position[i + 1]
        qa, qb = self.attitude[i], self.attitude[i + 1]
        if qa @ qb < 0:
            qb = -qb
        q = quat_normalize((1 - w) * qa + w * qb)
        return p, q


def _rotate_vec(q_arr, v_arr):
    """Rotate (N,3) vectors by (N,4) unit quaternions."""
    w = q_arr[:, :1]
    u = q_arr[:, 1:]
    t = 2.0 * np.cross(u, v_arr)
    return v_arr + w * t + np.cross(u, t)


def ideal_imu_from_kinematics(quats, accel_u, gyro_v, gravity, dcm_body_to_vlp):
    """Noise-free body-frame IMU for a kinematic profile.

    ``specific_force_b = R_b_u (a_u - g)``; the gyro is the VLP-frame
    rate mapped through the mounting DCM.
    """
    quats = np.asarray(quats, dtype=float)
    accel_u = np.asarray(accel_u, dtype=float)
    gyro_v = np.asarray(gyro_v, dtype=float)
    gravity = np.asarray(gravity, dtype=float)
    R_vb = np.asarray(dcm_body_to_vlp, dtype=float)
    f_v = _rotate_vec(quats * np.array([1.0, -1.0, -1.0, -1.0]), accel_u - gravity[None, :])
    return f_v @ R_vb, gyro_v @ R_vb


def generate_trajectory(scenario: Scenario) -> TruthStream:
    """Ground-truth pose/velocity/acceleration stream at the IMU rate.

    The analytic phase profile supplies ideal body-frame IMU samples;
    the emitted truth re-integrates them with the first-order strapdown
    recursion so downstream consistency checks close exactly.
    """
    spec = scenario.trajectory
    det = scenario.detection
    phases = _build_phases(spec, det.v_max, det.omega_max)
    total = phases[-1].t1
    dt = 1.0 / scenario.imu.rate_hz
    n = int(np.floor(total / dt))
    t_grid = np.arange(n) * dt

    gimbal = _KnotProfile(spec.gimbal_pitch_deg)
    g_deg, g_rate_deg = gimbal.eval(t_grid)
    # Commanded pitch-up maps to a negative z-y-x pitch angle increment.
    g_pitch = -g_deg * D2R
    g_pitch_rate = -g_rate_deg * D2R

    pos = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    yaw = np.zeros(n)
    yaw_rate = np.zeros(n)
    pitch = np.zeros(n)
    pitch_rate = np.zeros(n)

    pi = 0
    for k, t in enumerate(t_grid):
        while pi + 1 < len(phases) and t >= phases[pi].t1:
            pi += 1
        ph = phases[pi]
        t_rel = t - ph.t0
        if ph.kind == "travel":
            s, v, a = _travel_state(ph, t_rel)
            pos[k] = ph.pos0 + s * ph.direction
            vel[k] = v * ph.direction
            acc[k] = a * ph.direction
            yaw[k], pitch[k] = ph.yaw0, ph.pitch0
        else:
            pos[k] = ph.pos0
            if ph.kind == "turn":
                tau = t_rel / ph.duration
                p, dp, _ = _smoothstep(tau)
                yaw[k] = ph.yaw0 + (ph.yaw1 - ph.yaw0) * p
                yaw_rate[k] = (ph.yaw1 - ph.yaw0) * dp / ph.duration
                pitch[k] = ph.pitch0 + (ph.pitch1 - ph.pitch0) * p
                pitch_rate[k] = (ph.pitch1 - ph.pitch0) * dp / ph.duration
            else:
                yaw[k], pitch[k] = ph.yaw0, ph.pitch0

    pitch_total = pitch + g_pitch
    pitch_rate_total = pitch_rate + g_pitch_rate

    quats = np.array([quat_from_euler(0.0, th, ps) for th, ps in zip(pitch_total, yaw)])
    # Body rates for roll-free z-y-x attitude: w = yawrate * Ry(pitch)^T ez
    # + pitchrate * ey.
    gyro_v = np.stack(
        [
            -yaw_rate * np.sin(pitch_total),
            pitch_rate_total,
            yaw_rate * np.cos(pitch_total),
        ],
        axis=1,
    )

    gravity = scenario.gravity_vec
    R_vb = scenario.receiver.dcm_body_to_vlp
    specific_force_b, gyro_b = ideal_imu_from_kinematics(quats, acc, gyro_v, gravity, R_vb)

    # Reconcile: emitted truth is the strapdown integration of the ideal IMU.
    p_m = np.zeros_like(pos)
    v_m = np.zeros_like(vel)
    q_m = np.zeros_like(quats)
    a_m = np.zeros_like(acc)
    p_m[0], v_m[0], q_m[0] = pos[0], vel[0], quats[0]
    for i in range(n):
        R = quat_to_dcm(q_m[i])
        a_u = R @ (R_vb @ specific_force_b[i]) + gravity
        a_m[i] = a_u
        if i + 1 < n:
            p_m[i + 1] = p_m[i] + v_m[i] * dt + 0.5 * a_u * dt**2
            v_m[i + 1] = v_m[i] + a_u * dt
            q_m[i + 1] = quat_multiply(q_m[i], np.concatenate(([1.0], 0.5 * gyro_v[i] * dt)))

    room_min = np.asarray(scenario.room_min, dtype=float)
    room_max = np.asarray(scenario.room_max, dtype=float)
    if np.any(p_m < room_min - 0.05) or np.any(p_m > room_max + 0.05):
        raise ValueError("trajectory leaves the room bounds")

    return TruthStream(
        timestamps=t_grid,
        position=p_m,
        velocity=v_m,
        attitude=q_m,
        accel_u=a_m,
        gyro_v=gyro_v,
        specific_force_b=specific_force_b,
        gyro_b=gyro_b,
        gravity=gravity,
    )


# ---------------------------------------------------------------------------
# IMU synthesis


def _gauss_markov(rng, n, dt, sigma, tau):
    """First-order Gauss-Markov series with stationary std ``sigma``."""
    phi = np.exp(-dt / tau)
    drive = sigma * np.sqrt(1.0 - phi**2)
    w = rng.normal(size=(n, 3)) * drive
    out = np.empty((n, 3))
    acc = np.zeros(3)
    for i in range(n):
        acc = phi * acc + w[i]
        out[i] = acc
    return out


def synthesize_imu(truth: TruthStream, scenario: Scenario,
                   seed_seq: np.random.SeedSequence | None = None) -> ImuStream:
    """Ideal IMU plus white noise, constant initial bias and flicker-like
    Gauss-Markov bias wander; deterministic for a given seed."""
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(scenario.seed).spawn(1)[0]
    rng = np.random.default_rng(seed_seq)
    spec = scenario.imu
    n = truth.timestamps.size
    dt = 1.0 / spec.rate_hz

    wn_a = rng.normal(size=(n, 3)) * spec.accel_noise_density / np.sqrt(dt)
    wn_g = rng.normal(size=(n, 3)) * spec.gyro_noise_density / np.sqrt(dt)
    gm_a = _gauss_markov(rng, n, dt, spec.accel_bias_instability, spec.bias_corr_time)
    gm_g = _gauss_markov(rng, n, dt, spec.gyro_bias_instability, spec.bias_corr_time)

    accel = truth.specific_force_b + np.asarray(spec.initial_accel_bias) + gm_a + wn_a
    gyro = truth.gyro_b + np.asarray(spec.initial_gyro_bias) + gm_g + wn_g
    return ImuStream(truth.timestamps.copy(), accel, gyro)


# ---------------------------------------------------------------------------
# RSS synthesis


@dataclass
class RawRss:
    """High-rate per-LED demodulated amplitudes (already noise-injected)."""

    times: dict  # led_id -> (M,)
    values: dict  # led_id -> (M,)


@dataclass
class EpochRss:
    """Low-rate positioning samples with ground-truth labels."""

    samples: list  # RssSample, flag = ground-truth label
    window: float  # demodulation window length, s


def _blocked_mask(times, intervals):
    mask = np.zeros(times.shape, dtype=bool)
    for start, end in intervals:
        mask |= (times >= start) & (times < end)
    return mask


def _interpolate_poses(truth: TruthStream, times):
    ts = truth.timestamps
    idx = np.clip(np.searchsorted(ts, times) - 1, 0, ts.size - 2)
    w = np.clip((times - ts[idx]) / (ts[idx + 1] - ts[idx]), 0.0, 1.0)[:, None]
    pos = (1.0 - w) * truth.position[idx] + w * truth.position[idx + 1]
    qa = truth.attitude[idx]
    qb = truth.attitude[idx + 1]
    qb = np.where((np.einsum("ij,ij->i", qa, qb) < 0)[:, None], -qb, qb)
    q = (1.0 - w) * qa + w * qb
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return pos, q


def _signal_series(truth: TruthStream, scenario: Scenario, times) -> dict:
    """Noise-free LOS amplitude per LED at the query times (0 out of FOV)."""
    rx = scenario.receiver
    poses, quats = _interpolate_poses(truth, np.asarray(times, dtype=float))
    lever = rx.lever_arm_vlp
    pd_pos = poses + _rotate_vec(quats, np.broadcast_to(lever, poses.shape).copy())
    w, x, y, z = quats.T
    n_u = np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w**2 - x**2 - y**2 + z**2], axis=1)
    fov_cos = rx.fov_cos()
    out = {}
    for led in scenario.leds:
        d = led.position[None, :] - pd_pos
        dist = np.linalg.norm(d, axis=1)
        cos_psi = np.einsum("ij,ij->i", n_u, d) / dist
        cos_theta = (d @ led.normal) / dist
        k = (led.order + 1.0) * rx.area * rx.filter_gain * rx.concentrator_gain * led.power / (
            2.0 * np.pi)
        with np.errstate(invalid="ignore"):
            p = k * (cos_psi * dist) * np.maximum(cos_theta * dist, 0.0) ** led.order / (
                dist ** (3.0 + led.order))
        valid = (cos_psi >= fov_cos) & (cos_theta >= 0.0)
        p = np.where(valid, np.maximum(p, 0.0), 0.0)
        out[led.led_id] = (p, valid)
    return out


def synthesize_rss(truth: TruthStream, scenario: Scenario,
                   seed_seq: np.random.SeedSequence | None = None) -> tuple[RawRss, EpochRss]:
    """Raw high-rate streams and windowed epoch samples.

    Raw: LOS amplitude at the instantaneous pose, zeroed inside blockage
    intervals, plus white noise (clipped at zero).  Epoch: the
    window-center amplitude scaled by the window's unblocked fraction,
    plus epoch noise; a blockage covering half the demodulation window
    halves the epoch value while clean epochs carry exactly the
    instantaneous channel value.
    """
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(scenario.seed).spawn(2)[1]
    rss = scenario.rss
    duration = truth.timestamps[-1]

    raw_dt = 1.0 / rss.raw_rate_hz
    raw_times = np.arange(0.0, duration, raw_dt)
    signals = _signal_series(truth, scenario, raw_times)

    schedule = {}
    for led_id, start, end in scenario.blockages:
        schedule.setdefault(int(led_id), []).append((float(start), float(end)))

    led_ids = sorted(signals)
    children = seed_seq.spawn(2 * len(led_ids))
    raw_times_map = {}
    raw_values_map = {}
    epoch_samples = []

    window = 1.0 / rss.epoch_rate_hz
    centers = np.arange(window / 2.0, duration - window / 2.0 + 1e-9, window)
    center_signals = _signal_series(truth, scenario, centers)
    variance = max(rss.epoch_sigma**2, 1e-12)

    for idx, led_id in enumerate(led_ids):
        p, _ = signals[led_id]
        p_center, valid_center = center_signals[led_id]
        blocked = _blocked_mask(raw_times, schedule.get(led_id, []))
        clean = np.where(blocked, 0.0, p)
        rng_raw = np.random.default_rng(children[2 * idx])
        raw = np.clip(clean + rng_raw.normal(size=clean.shape) * rss.raw_sigma, 0.0, None)
        raw_times_map[led_id] = raw_times.copy()
        raw_values_map[led_id] = raw

        rng_epoch = np.random.default_rng(children[2 * idx + 1])
        for j, t_c in enumerate(centers):
            lo = np.searchsorted(raw_times, t_c - window / 2.0, side="left")
            hi = np.searchsorted(raw_times, t_c + window / 2.0, side="left")
            frac_clear = 1.0 - float(np.mean(blocked[lo:hi]))
            value = max(frac_clear * p_center[j]
                        + float(rng_epoch.normal()) * rss.epoch_sigma, 0.0)
            overlap = any(t_c - window / 2.0 < end and t_c + window / 2.0 > start
                          for start, end in schedule.get(led_id, []))
            if overlap:
                flag = SampleFlag.BLOCKED
            elif not valid_center[j]:
                flag = SampleFlag.OUT_OF_FOV
            else:
                flag = SampleFlag.LOS
            epoch_samples.append(RssSample(timestamp=float(t_c), led_id=led_id,
                                           value=value, variance=variance, flag=flag))

    epoch_samples.sort(key=lambda s: (s.timestamp, s.led_id))
    return (RawRss(times=raw_times_map, values=raw_values_map),
            EpochRss(samples=epoch_samples, window=window))


# ---------------------------------------------------------------------------
# Reference fixtures


def _i300_densities(multiplier: float = 1.0) -> dict:
    """Tabulated HGUIDE i300 characteristics converted to SI densities."""
    vrw = 0.03 / 60.0  # m/s/sqrt(hr) -> m/s^2/sqrt(Hz)
    arw = 0.25 * D2R / 60.0  # deg/sqrt(hr) -> rad/s/sqrt(Hz)
    bi_acc = 0.03e-3 * 9.80665  # mg -> m/s^2
    bi_gyro = 5.0 * D2R / 3600.0  # deg/hr -> rad/s
    return {
        "accel_noise_density": vrw * multiplier,
        "gyro_noise_density": arw * multiplier,
        "accel_bias_instability": bi_acc * multiplier,
        "gyro_bias_instability": bi_gyro * multiplier,
    }


def _sim3d_scenario(seed=7, blockages=True) -> Scenario:
    leds = tuple(
        LedBeacon(led_id=i + 1, position=np.array(p), power=6.0e6,
                  modulation_hz=1800.0 + 700.0 * i)
        for i, p in enumerate([
            (1.0, 1.0, 5.0), (4.0, 1.0, 5.0), (4.0, 4.0, 5.0),
            (1.0, 4.0, 5.0), (2.5, 2.5, 5.0),
        ])
    )
    receiver = ReceiverConfig(
        area=1e-4, fov_half_angle=np.deg2rad(75.0),
        lever_arm=np.array([0.05, 0.0, 0.08]),
    )
    trajectory = TrajectorySpec(
        waypoints=(
            (5.0, 0.0, 0.0), (4.2, 0.8, 0.0), (4.2, 4.2, 0.0), (2.6, 4.2, 0.0),
            (1.2, 4.2, 0.35), (0.8, 2.4, 0.35), (0.8, 1.2, 0.35), (2.4, 1.0, 0.35),
            (3.6, 2.0, 0.35),
        ),
        speeds=(0.35,) * 8,
        turn_rate=0.35,
        gimbal_pitch_deg=((0.0, 0.0), (22.0, 0.0), (26.0, 10.0), (38.0, 10.0), (42.0, 0.0)),
    )
    imu = ImuSpec(rate_hz=200.0, bias_corr_time=100.0,
                  initial_accel_bias=(0.004, -0.003, 0.005),
                  initial_gyro_bias=(1.5e-4, -1.0e-4, 2.0e-4),
                  **_i300_densities(5.0))
    blocks = (
        (1, 12.0, 14.5),
        (3, 25.0, 27.0),
        (5, 33.0, 35.5),
        (2, 45.0, 47.0),
    ) if blockages else ()
    return Scenario(
        name="sim3d",
        seed=seed,
        room_min=(0.0, 0.0, 0.0),
        room_max=(5.0, 5.0, 5.0),
        leds=leds,
        receiver=receiver,
        trajectory=trajectory,
        imu=imu,
        rss=RssSpec(raw_rate_hz=120.0, epoch_rate_hz=1.0, raw_sigma=5e-4, epoch_sigma=0.1),
        blockages=blocks,
        detection=DetectionSpec(v_max=0.6, omega_max=0.6, value_floor=0.05,
                                max_tilt_deg=25.0),
    )


def _expa_scenario(seed=11, blockages=True) -> Scenario:
    led_xy = [(0.35, 1.34), (3.56, 1.15), (1.71, 3.31), (3.50, 6.25), (0.35, 5.97)]
    mods = [1800.0, 2500.0, 3200.0, 3750.0, 5000.0]
    leds = tuple(
        LedBeacon(led_id=i + 1, position=np.array([x, y, 2.8]), power=5.6e6,
                  modulation_hz=m)
        for i, ((x, y), m) in enumerate(zip(led_xy, mods))
    )
    receiver = ReceiverConfig(
        area=1e-4, fov_half_angle=np.deg2rad(85.0),
        lever_arm=np.array([0.06, 0.0, 0.05]),
        pd_height=0.3,
    )
    trajectory = TrajectorySpec(
        waypoints=(
            (0.9, 1.2, 0.3), (2.9, 1.2, 0.3), (2.9, 5.2, 0.3), (0.9, 5.2, 0.3),
            (0.9, 1.4, 0.3),
        ),
        speeds=(0.35,) * 4,
        turn_rate=0.35,
        gimbal_pitch_deg=((0.0, 0.0), (13.0, 0.0), (17.0, 10.0), (32.0, 10.0), (36.0, 0.0)),
    )
    imu = ImuSpec(rate_hz=200.0, bias_corr_time=100.0,
                  initial_accel_bias=(0.002, -0.0015, 0.0025),
                  initial_gyro_bias=(8.0e-5, -6.0e-5, 1.0e-4),
                  **_i300_densities(1.0))
    blocks = (
        (3, 16.0, 24.0),
        (1, 20.0, 26.0),
        (2, 28.0, 32.0),
        (4, 33.0, 37.0),
        (5, 40.0, 45.0),
        (3, 46.0, 50.0),
    ) if blockages else ()
    return Scenario(
        name="expA" if blockages else "expA_clean",
        seed=seed,
        room_min=(0.0, 0.0, 0.0),
        room_max=(3.8, 6.3, 2.8),
        leds=leds,
        receiver=receiver,
        trajectory=trajectory,
        imu=imu,
        rss=RssSpec(raw_rate_hz=120.0, epoch_rate_hz=1.0, raw_sigma=5e-4, epoch_sigma=0.1),
        blockages=blocks,
        detection=DetectionSpec(v_max=0.55, omega_max=0.55, value_floor=0.05,
                                max_tilt_deg=20.0),
    )


def _mini_scenario(seed=3) -> Scenario:
    """Short clean scenario for fast end-to-end tests."""
    base = _sim3d_scenario(seed=seed, blockages=False)
    trajectory = TrajectorySpec(
        waypoints=((5.0, 0.0, 0.0), (4.0, 1.0, 0.0), (4.0, 3.0, 0.0), (2.5, 3.0, 0.2)),
        speeds=(0.35, 0.35, 0.35),
        turn_rate=0.35,
    )
    return Scenario(
        name="mini", seed=seed, room_min=base.room_min, room_max=base.room_max,
        leds=base.leds, receiver=base.receiver, trajectory=trajectory, imu=base.imu,
        rss=base.rss, blockages=(), detection=base.detection, gravity=base.gravity,
    )


def reference_scenarios(seed: int | None = None) -> dict[str, Scenario]:
    """Named scenario fixtures.

    ``sim3d``: 5 x 5 x 5 m room, start at (5, 0, 0), an uphill stretch, a
    mid-run gimbal pitch command, four blockages, IMU noise at 5x the
    tabulated i300 characteristics and 0.1-unit epoch RSS noise.
    ``expA``/``expA_clean``: the five-LED 3.8 x 6.3 x 2.8 m room with a
    rounded-rectangle style planar loop, with and without blockages.
    ``mini``: a short clean run for quick checks.
    """
    kw = {} if seed is None else {"seed": seed}
    return {
        "sim3d": _sim3d_scenario(**kw),
        "sim3d_clean": _sim3d_scenario(blockages=False, **kw),
        "expA": _expa_scenario(**kw),
        "expA_clean": _expa_scenario(blockages=False, **kw),
        "mini": _mini_scenario(**kw),
    }
