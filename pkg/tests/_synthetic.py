"""Hand-rolled consistent mini-scenarios for estimator tests.

States are propagated with the same first-order strapdown recursion the
pre-integration assumes, so noiseless residuals vanish to round-off and
solver tests have an exact ground truth independent of the simulator
module.
"""

import numpy as np

from vlpnav.attitude import quat_multiply, quat_to_dcm
from vlpnav.channel import LedBeacon, ReceiverConfig, RssSample, predict_rss
from vlpnav.preint import ImuNoise, ImuStream, preintegrate
from vlpnav.state import NavState

GRAVITY = np.array([0.0, 0.0, -9.80665])
NOISE = ImuNoise(accel_density=2.5e-3, gyro_density=3.6e-4,
                 accel_bias_walk=2e-4, gyro_bias_walk=2e-5)


def make_rx(lever_arm=(0.0, 0.0, 0.0), fov_deg=90.0):
    return ReceiverConfig(area=1e-4, fov_half_angle=np.deg2rad(fov_deg),
                          lever_arm=np.asarray(lever_arm, dtype=float))


def make_leds(height=3.0, power=2e5):
    """Four well-spread ceiling LEDs; power scaled to O(1) sensor units."""
    spots = [(0.5, 0.5), (2.5, 0.5), (0.5, 2.5), (2.5, 2.5)]
    return [LedBeacon(led_id=i + 1, position=np.array([x, y, height]), power=power)
            for i, (x, y) in enumerate(spots)]


def motion_profile(t):
    """Smooth specific-force/angular-rate test profile (room frame accel)."""
    a = np.array([0.25 * np.sin(0.9 * t), 0.2 * np.cos(0.7 * t), 0.1 * np.sin(0.5 * t)])
    w = np.array([0.05 * np.sin(0.6 * t), 0.08 * np.cos(0.8 * t), 0.3 * np.sin(0.4 * t)])
    return a, w


def build_chain(n_epochs, epoch_dt=1.0, imu_rate=200.0, x0=None, bias_acc=None,
                bias_gyro=None):
    """Propagate a state chain and per-interval IMU streams, exactly consistent.

    Returns (states, streams) with len(states) == n_epochs and
    len(streams) == n_epochs - 1.
    """
    ba = np.zeros(3) if bias_acc is None else np.asarray(bias_acc, dtype=float)
    bg = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=float)
    if x0 is None:
        x0 = NavState(timestamp=0.0, position=np.array([1.5, 1.5, 0.0]),
                      velocity=np.array([0.1, 0.0, 0.0]), bias_acc=ba, bias_gyro=bg)
    dt = 1.0 / imu_rate
    states = [x0.copy()]
    streams = []
    p, v, q = x0.position.copy(), x0.velocity.copy(), x0.attitude.copy()
    t = x0.timestamp
    for k in range(n_epochs - 1):
        n = int(round(epoch_dt * imu_rate))
        ts = np.empty(n)
        acc = np.empty((n, 3))
        gyr = np.empty((n, 3))
        for i in range(n):
            ts[i] = t
            a_u, w_v = motion_profile(t)
            R = quat_to_dcm(q)
            f_v = R.T @ (a_u - GRAVITY)
            acc[i] = f_v + ba
            gyr[i] = w_v + bg
            p = p + v * dt + 0.5 * a_u * dt**2
            v = v + a_u * dt
            q = quat_multiply(q, np.concatenate(([1.0], 0.5 * w_v * dt)))
            t += dt
        streams.append(ImuStream(ts, acc, gyr))
        states.append(NavState(timestamp=t, position=p.copy(), velocity=v.copy(),
                               attitude=q.copy(), bias_acc=ba.copy(), bias_gyro=bg.copy()))
    return states, streams


def preintegrate_chain(streams, states, rx):
    return [
        preintegrate(stream, states[k].bias_acc, states[k].bias_gyro,
                     rx.dcm_body_to_vlp, NOISE, t_end=states[k + 1].timestamp)
        for k, stream in enumerate(streams)
    ]


def exact_rss(state, leds, rx, variance=0.01):
    """Noise-free RSS samples at a state (lever-arm corrected)."""
    R = quat_to_dcm(state.attitude)
    pd = state.position + R @ rx.lever_arm_vlp
    out = []
    for led in leds:
        p = predict_rss(pd, state.attitude, led, rx)
        if p is None:
            continue
        out.append(RssSample(timestamp=state.timestamp, led_id=led.led_id,
                             value=p, variance=variance))
    return out
