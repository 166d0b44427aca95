"""IMU pre-integration between VLP epochs, in the VLP frame.

Raw accelerometer/gyroscope samples between two epochs are compressed
into a relative-motion pseudo-measurement (alpha, beta, gamma): the
frame-relative position, velocity and rotation increments obtained by
integrating bias-corrected samples from the epoch-start frame, gravity
excluded.  Samples are rotated from the IMU body frame into the VLP
frame by the fixed mounting DCM before integration, so biases are also
expressed (and estimated) in the VLP frame.

The 15x15 covariance of the pseudo-measurement error
``[d_alpha, d_beta, d_theta, d_ba, d_bg]`` is propagated step by step
with the first-order discrete transition, driven by white
accelerometer/gyroscope noise and random-walk bias noise.  First-order
bias Jacobians are accumulated alongside so the optimizer can correct
(alpha, beta, gamma) for small bias updates without re-integrating.

Gravity convention: every function takes the free-fall acceleration
vector (e.g. ``[0, 0, -9.80665]`` in a z-up room frame).  A stationary,
level IMU measures the reaction ``-gravity``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attitude import (
    quat_conjugate,
    quat_exp,
    quat_identity,
    quat_left,
    quat_multiply,
    quat_right,
    quat_to_dcm,
    skew,
    so3_right_jacobian,
)
from .state import NavState

#: Bias-correction magnitudes above which the first-order update is suspect.
BIAS_CORRECTION_WARN_ACC = 0.1  # m/s^2
BIAS_CORRECTION_WARN_GYRO = 0.05  # rad/s


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time IMU noise densities (SI, per sqrt(Hz))."""

    accel_density: float  # m/s^2/sqrt(Hz)
    gyro_density: float  # rad/s/sqrt(Hz)
    accel_bias_walk: float  # m/s^3/sqrt(Hz)
    gyro_bias_walk: float  # rad/s^2/sqrt(Hz)

    def __post_init__(self):
        for name in ("accel_density", "gyro_density", "accel_bias_walk", "gyro_bias_walk"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ImuStream:
    """Time-ordered IMU samples: body-frame specific force and angular rate."""

    timestamps: np.ndarray  # (N,) seconds
    accel: np.ndarray  # (N, 3) m/s^2
    gyro: np.ndarray  # (N, 3) rad/s

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        a = np.asarray(self.accel, dtype=float)
        g = np.asarray(self.gyro, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("IMU stream must contain at least one sample")
        if a.shape != (t.size, 3) or g.shape != (t.size, 3):
            raise ValueError("accel and gyro must be (N, 3) arrays matching timestamps")
        if t.size > 1 and np.any(np.diff(t) <= 0.0):
            raise ValueError("IMU timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "accel", a)
        object.__setattr__(self, "gyro", g)

    def slice(self, t_start: float, t_end: float) -> "ImuStream":
        mask = (self.timestamps >= t_start) & (self.timestamps < t_end)
        if not mask.any():
            raise ValueError(f"no IMU samples in [{t_start}, {t_end})")
        return ImuStream(self.timestamps[mask], self.accel[mask], self.gyro[mask])


@dataclass
class PreintegratedImu:
    """Relative-motion pseudo-measurement between two epochs.

    ``alpha`` (m), ``beta`` (m/s) and ``gamma`` (quaternion) are the
    gravity-free increments in the epoch-start VLP frame; ``cov`` is the
    15x15 error covariance; the ``d_*`` blocks are first-order
    sensitivities to the bias linearization point.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    cov: np.ndarray
    dt: float
    bias_acc: np.ndarray  # linearization point, VLP frame
    bias_gyro: np.ndarray
    d_alpha_d_ba: np.ndarray
    d_alpha_d_bg: np.ndarray
    d_beta_d_ba: np.ndarray
    d_beta_d_bg: np.ndarray
    d_gamma_d_bg: np.ndarray


def preintegrate(stream: ImuStream, bias_acc, bias_gyro, dcm_body_to_vlp,
                 noise: ImuNoise, t_end: float | None = None) -> PreintegratedImu:
    """Integrate one epoch interval of IMU samples.

    Each sample integrates over the gap to the next timestamp; the last
    sample integrates to ``t_end`` (default: the mean sample spacing past
    the final timestamp).  Biases are VLP-frame.
    """
    bias_acc = np.asarray(bias_acc, dtype=float)
    bias_gyro = np.asarray(bias_gyro, dtype=float)
    R_bv = np.asarray(dcm_body_to_vlp, dtype=float)

    t = stream.timestamps
    n = t.size
    if t_end is None:
        spacing = np.mean(np.diff(t)) if n > 1 else 1e-2
        t_end = float(t[-1] + spacing)
    if t_end <= t[-1]:
        raise ValueError("t_end must lie past the final sample")
    dts = np.empty(n)
    dts[:-1] = np.diff(t)
    dts[-1] = t_end - t[-1]

    accel_v = stream.accel @ R_bv.T
    gyro_v = stream.gyro @ R_bv.T

    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = quat_identity()
    cov = np.zeros((15, 15))
    J = np.eye(15)

    sig = np.repeat(
        [noise.accel_density**2, noise.gyro_density**2,
         noise.accel_bias_walk**2, noise.gyro_bias_walk**2], 3)

    for i in range(n):
        dt = float(dts[i])
        a = accel_v[i] - bias_acc
        w = gyro_v[i] - bias_gyro
        R_i = quat_to_dcm(gamma)
        Ra = R_i @ skew(a)

        F = np.eye(15)
        F[0:3, 3:6] = np.eye(3) * dt
        F[0:3, 6:9] = -0.5 * Ra * dt**2
        F[0:3, 9:12] = 0.5 * R_i * dt**2
        F[3:6, 6:9] = -Ra * dt
        F[3:6, 9:12] = R_i * dt
        F[6:9, 6:9] = np.eye(3) - skew(w) * dt
        F[6:9, 12:15] = np.eye(3) * dt

        G = np.zeros((15, 12))
        G[0:3, 0:3] = 0.5 * R_i * dt**2
        G[3:6, 0:3] = R_i * dt
        G[6:9, 3:6] = np.eye(3) * dt
        G[9:12, 6:9] = np.eye(3) * dt
        G[12:15, 9:12] = np.eye(3) * dt

        cov = F @ cov @ F.T + G @ (np.diag(sig) / dt) @ G.T
        J = F @ J

        alpha = alpha + beta * dt + 0.5 * (R_i @ a) * dt**2
        beta = beta + (R_i @ a) * dt
        gamma = quat_multiply(gamma, np.concatenate(([1.0], 0.5 * w * dt)))

    # F propagates errors of the integrated quantities for a *true* bias
    # offset; corrections for a raised *assumed* bias carry the opposite sign.
    return PreintegratedImu(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        cov=0.5 * (cov + cov.T),
        dt=float(np.sum(dts)),
        bias_acc=bias_acc.copy(),
        bias_gyro=bias_gyro.copy(),
        d_alpha_d_ba=-J[0:3, 9:12],
        d_alpha_d_bg=-J[0:3, 12:15],
        d_beta_d_ba=-J[3:6, 9:12],
        d_beta_d_bg=-J[3:6, 12:15],
        d_gamma_d_bg=-J[6:9, 12:15],
    )


def _corrected_terms(pre: PreintegratedImu, bias_acc, bias_gyro):
    """First-order (alpha, beta, gamma) at a bias away from the linearization."""
    dba = np.asarray(bias_acc, dtype=float) - pre.bias_acc
    dbg = np.asarray(bias_gyro, dtype=float) - pre.bias_gyro
    alpha = pre.alpha + pre.d_alpha_d_ba @ dba + pre.d_alpha_d_bg @ dbg
    beta = pre.beta + pre.d_beta_d_ba @ dba + pre.d_beta_d_bg @ dbg
    gamma = quat_multiply(pre.gamma, quat_exp(pre.d_gamma_d_bg @ dbg))
    return alpha, beta, gamma, dba, dbg


def bias_corrected(pre: PreintegratedImu, bias_acc, bias_gyro) -> PreintegratedImu:
    """Re-linearize the pseudo-measurement at a new bias point.

    Valid for small bias moves; warns past 0.1 m/s^2 / 0.05 rad/s where
    the first-order correction degrades and re-integration is advised.
    """
    alpha, beta, gamma, dba, dbg = _corrected_terms(pre, bias_acc, bias_gyro)
    if np.linalg.norm(dba) > BIAS_CORRECTION_WARN_ACC:
        warnings.warn("accelerometer bias moved far from linearization; re-integrate",
                      stacklevel=2)
    if np.linalg.norm(dbg) > BIAS_CORRECTION_WARN_GYRO:
        warnings.warn("gyroscope bias moved far from linearization; re-integrate",
                      stacklevel=2)
    return PreintegratedImu(
        alpha=alpha, beta=beta, gamma=gamma, cov=pre.cov, dt=pre.dt,
        bias_acc=np.asarray(bias_acc, dtype=float).copy(),
        bias_gyro=np.asarray(bias_gyro, dtype=float).copy(),
        d_alpha_d_ba=pre.d_alpha_d_ba, d_alpha_d_bg=pre.d_alpha_d_bg,
        d_beta_d_ba=pre.d_beta_d_ba, d_beta_d_bg=pre.d_beta_d_bg,
        d_gamma_d_bg=pre.d_gamma_d_bg,
    )


def imu_residual(pre: PreintegratedImu, x_k: NavState, x_k1: NavState, gravity) -> np.ndarray:
    """15-dim pre-integration residual between two states.

    Blocks: relative-position, relative-velocity, attitude (twice the
    vector part of the quaternion mismatch), and the two bias
    random-walk differences.  Zero when the states were produced by
    integrating the same noiseless IMU stream at the linearization bias.
    """
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt
    alpha, beta, gamma, _, _ = _corrected_terms(pre, x_k.bias_acc, x_k.bias_gyro)
    R_ku = quat_to_dcm(x_k.attitude).T

    r = np.empty(15)
    r[0:3] = R_ku @ (x_k1.position - x_k.position - 0.5 * g * dt**2
                     - x_k.velocity * dt) - alpha
    r[3:6] = R_ku @ (x_k1.velocity - g * dt - x_k.velocity) - beta
    q_err = quat_multiply(
        quat_multiply(quat_conjugate(x_k.attitude), x_k1.attitude), quat_conjugate(gamma))
    if q_err[0] < 0.0:
        q_err = -q_err
    r[6:9] = 2.0 * q_err[1:]
    r[9:12] = x_k1.bias_acc - x_k.bias_acc
    r[12:15] = x_k1.bias_gyro - x_k.bias_gyro
    return r


def imu_residual_jacobians(pre: PreintegratedImu, x_k: NavState, x_k1: NavState,
                           gravity) -> tuple[np.ndarray, np.ndarray]:
    """Analytic residual Jacobians ``(d r / d x_k, d r / d x_k1)``, 15x15 each."""
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt
    _, _, gamma_c, _, dbg = _corrected_terms(pre, x_k.bias_acc, x_k.bias_gyro)
    R_k = quat_to_dcm(x_k.attitude)
    R_ku = R_k.T

    dp = x_k1.position - x_k.position - 0.5 * g * dt**2 - x_k.velocity * dt
    dv = x_k1.velocity - g * dt - x_k.velocity

    Jk = np.zeros((15, 15))
    Jk1 = np.zeros((15, 15))

    Jk[0:3, 0:3] = -R_ku
    Jk[0:3, 3:6] = -R_ku * dt
    Jk[0:3, 6:9] = skew(R_ku @ dp)
    Jk[0:3, 9:12] = -pre.d_alpha_d_ba
    Jk[0:3, 12:15] = -pre.d_alpha_d_bg
    Jk1[0:3, 0:3] = R_ku

    Jk[3:6, 3:6] = -R_ku
    Jk[3:6, 6:9] = skew(R_ku @ dv)
    Jk[3:6, 9:12] = -pre.d_beta_d_ba
    Jk[3:6, 12:15] = -pre.d_beta_d_bg
    Jk1[3:6, 3:6] = R_ku

    # Attitude block via exact quaternion product matrices.
    q_rel = quat_multiply(quat_conjugate(x_k.attitude), x_k1.attitude)
    q_err = quat_multiply(q_rel, quat_conjugate(gamma_c))
    sign = -1.0 if q_err[0] < 0.0 else 1.0
    L_rel = quat_left(q_rel)
    R_gc = quat_right(quat_conjugate(gamma_c))
    Jk[6:9, 6:9] = -sign * quat_right(q_err)[1:4, 1:4]
    Jk1[6:9, 6:9] = sign * (L_rel @ R_gc)[1:4, 1:4]
    # Bias-gyro sensitivity through the corrected gamma; the right
    # Jacobian accounts for a nonzero current correction angle.
    phi0 = pre.d_gamma_d_bg @ dbg
    Jk[6:9, 12:15] = -sign * (L_rel @ R_gc)[1:4, 1:4] @ (
        so3_right_jacobian(phi0) @ pre.d_gamma_d_bg)

    Jk[9:12, 9:12] = -np.eye(3)
    Jk1[9:12, 9:12] = np.eye(3)
    Jk[12:15, 12:15] = -np.eye(3)
    Jk1[12:15, 12:15] = np.eye(3)
    return Jk, Jk1


def mechanize(pre: PreintegratedImu, x_k: NavState, gravity, timestamp: float) -> NavState:
    """Dead-reckon the next state from a pre-integrated interval."""
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt
    alpha, beta, gamma, _, _ = _corrected_terms(pre, x_k.bias_acc, x_k.bias_gyro)
    R_k = quat_to_dcm(x_k.attitude)
    return NavState(
        timestamp=timestamp,
        position=x_k.position + x_k.velocity * dt + 0.5 * g * dt**2 + R_k @ alpha,
        velocity=x_k.velocity + g * dt + R_k @ beta,
        attitude=quat_multiply(x_k.attitude, gamma),
        bias_acc=x_k.bias_acc.copy(),
        bias_gyro=x_k.bias_gyro.copy(),
    )
