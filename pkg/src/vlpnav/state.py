"""Navigation state: 16 stored dimensions, 15 error dimensions.

The error vector ordering used everywhere is
``[dp (3), dv (3), dtheta (3), dba (3), dbg (3)]`` with ``dtheta`` a
local (right) attitude perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attitude import apply_small_angle, quat_log, quat_multiply, quat_conjugate, quat_normalize

#: Error-state dimension of one navigation state.
ERROR_DIM = 15


@dataclass
class NavState:
    """Vehicle state at one epoch.

    ``position``/``velocity`` are room-frame (meters, m/s);
    ``attitude`` is the VLP-frame-to-room quaternion; biases are the
    accelerometer and gyroscope biases expressed in the VLP frame.
    """

    timestamp: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.attitude = quat_normalize(np.asarray(self.attitude, dtype=float))
        self.bias_acc = np.asarray(self.bias_acc, dtype=float)
        self.bias_gyro = np.asarray(self.bias_gyro, dtype=float)

    def copy(self) -> "NavState":
        return NavState(
            timestamp=self.timestamp,
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            attitude=self.attitude.copy(),
            bias_acc=self.bias_acc.copy(),
            bias_gyro=self.bias_gyro.copy(),
        )

    def perturb(self, dx: np.ndarray) -> "NavState":
        """Retract a 15-dim error vector onto the state (box-plus)."""
        dx = np.asarray(dx, dtype=float)
        if dx.shape != (ERROR_DIM,):
            raise ValueError("error vector must have 15 components")
        return NavState(
            timestamp=self.timestamp,
            position=self.position + dx[0:3],
            velocity=self.velocity + dx[3:6],
            attitude=apply_small_angle(self.attitude, dx[6:9]),
            bias_acc=self.bias_acc + dx[9:12],
            bias_gyro=self.bias_gyro + dx[12:15],
        )

    def boxminus(self, other: "NavState") -> np.ndarray:
        """15-dim error ``self ⊟ other`` (exact log map for attitude)."""
        dq = quat_multiply(quat_conjugate(other.attitude), self.attitude)
        return np.concatenate(
            [
                self.position - other.position,
                self.velocity - other.velocity,
                quat_log(dq),
                self.bias_acc - other.bias_acc,
                self.bias_gyro - other.bias_gyro,
            ]
        )
