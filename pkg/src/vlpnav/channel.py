"""Lambertian line-of-sight RSS channel: forward model and derivatives.

An LED with Lambertian order ``m`` radiating optical power ``P_T`` is seen
by a photodiode of effective area ``A_R`` through the gain

    P = (m + 1) A_R T_s g P_T / (2 pi) * cos^m(theta) cos(psi) / D^2

where ``theta`` is the irradiance angle at the LED, ``psi`` the incidence
angle at the photodiode and ``D`` their separation.  Writing the cosines
as dot products against the LOS vector turns this into the polynomial
form used for all derivative work:

    P = K * (n . D_vec) (n_l . D_vec)^m / D^(3+m),   K = (m+1) A_R T_s g P_T / (2 pi)

``n`` is the photodiode surface normal in the room frame (a pure function
of the receiver attitude quaternion) and ``n_l`` the upward LED normal.

Positions are meters; power is watts or any linear sensor unit used
consistently scenario-wide.  All functions are pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .attitude import quat_to_dcm

#: Cosine floor below which Jacobian denominators are treated as singular.
GRAZING_COS_FLOOR = 1e-6


class DegenerateGeometryError(ValueError):
    """Photodiode and LED positions coincide."""


class GrazingIncidenceError(ValueError):
    """Incidence or irradiance angle too close to 90 deg for derivatives."""


class SampleFlag(enum.Enum):
    """Validity classification of one RSS sample."""

    LOS = "los"
    BLOCKED = "blocked"
    OUT_OF_FOV = "out_of_fov"


def _unit3(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit length (norm {n:.12f})")
    return v


@dataclass(frozen=True)
class LedBeacon:
    """One ceiling transmitter.

    Parameters
    ----------
    led_id : int
        Identifier used to match samples to beacons.
    position : (3,) array
        Room-frame position in meters.
    power : float
        Transmit power times any scenario-wide sensor scale (> 0).
    order : float
        Lambertian order, >= 1 (1 is ideal cosine emission).
    normal : (3,) array
        Unit vector opposite the radiating direction; ceiling LEDs
        facing down carry the default ``[0, 0, 1]``.
    modulation_hz : float
        Carrier tag, metadata only.
    """

    led_id: int
    position: np.ndarray
    power: float
    order: float = 1.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    modulation_hz: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "normal", _unit3(self.normal, "normal"))
        if self.order < 1.0:
            raise ValueError("Lambertian order must be >= 1")
        if self.power <= 0.0:
            raise ValueError("transmit power must be positive")


@dataclass(frozen=True)
class ReceiverConfig:
    """Photodiode and mounting description.

    ``lever_arm`` is the IMU-center to PD-center offset in the body frame;
    ``dcm_body_to_vlp`` is the fixed mounting rotation from the IMU body
    frame into the VLP (photodiode) frame.  ``pd_height`` is the measured
    PD height used by the planar height constraint.
    """

    area: float
    fov_half_angle: float
    filter_gain: float = 1.0
    concentrator_gain: float = 1.0
    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dcm_body_to_vlp: np.ndarray = field(default_factory=lambda: np.eye(3))
    pd_height: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lever_arm", np.asarray(self.lever_arm, dtype=float))
        object.__setattr__(self, "dcm_body_to_vlp", np.asarray(self.dcm_body_to_vlp, dtype=float))
        if self.area <= 0.0:
            raise ValueError("receiver area must be positive")
        if not 0.0 < self.fov_half_angle <= np.pi / 2:
            raise ValueError("fov_half_angle must lie in (0, pi/2]")
        if self.filter_gain <= 0.0 or self.concentrator_gain <= 0.0:
            raise ValueError("optical gains must be positive")
        R = self.dcm_body_to_vlp
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise ValueError("dcm_body_to_vlp must be orthonormal")

    @property
    def lever_arm_vlp(self) -> np.ndarray:
        """Lever arm expressed in the VLP frame (constant)."""
        return self.dcm_body_to_vlp @ self.lever_arm

    def fov_cos(self) -> float:
        c = np.cos(self.fov_half_angle)
        # cos(pi/2) rounds to ~6e-17; snap so grazing rays sit on the boundary
        return 0.0 if abs(c) < 1e-12 else float(c)


@dataclass
class RssSample:
    """One demodulated LED amplitude at one epoch."""

    timestamp: float
    led_id: int
    value: float
    variance: float
    flag: SampleFlag = SampleFlag.LOS

    def __post_init__(self):
        if self.value < 0.0:
            raise ValueError("RSS value must be non-negative")
        if self.variance <= 0.0:
            raise ValueError("RSS variance must be positive")


@dataclass(frozen=True)
class LosGeometry:
    """LOS vector and angle cosines between a photodiode pose and an LED."""

    los_vector: np.ndarray  # PD -> LED, meters
    distance: float
    cos_incidence: float  # cos(psi), at the receiver
    cos_irradiance: float  # cos(theta), at the LED


def receiver_normal(q) -> np.ndarray:
    """Room-frame photodiode normal for attitude ``q`` (third DCM column).

    Componentwise for q = [q0, q1, q2, q3]:
    ``[2(q1 q3 + q0 q2), 2(q2 q3 - q0 q1), q0^2 - q1^2 - q2^2 + q3^2]``.
    """
    return quat_to_dcm(q)[:, 2]


def los_geometry(pd_pos, q, led: LedBeacon) -> LosGeometry:
    pd_pos = np.asarray(pd_pos, dtype=float)
    d_vec = led.position - pd_pos
    dist = float(np.linalg.norm(d_vec))
    if dist < 1e-9:
        raise DegenerateGeometryError("photodiode coincides with LED position")
    n_u = receiver_normal(q)
    return LosGeometry(
        los_vector=d_vec,
        distance=dist,
        cos_incidence=float(n_u @ d_vec / dist),
        cos_irradiance=float(led.normal @ d_vec / dist),
    )


def gain_constant(led: LedBeacon, rx: ReceiverConfig) -> float:
    """(m+1) A_R T_s g P_T / (2 pi)."""
    return (
        (led.order + 1.0)
        * rx.area
        * rx.filter_gain
        * rx.concentrator_gain
        * led.power
        / (2.0 * np.pi)
    )


def predict_rss(pd_pos, q, led: LedBeacon, rx: ReceiverConfig) -> float | None:
    """Forward-model RSS at a photodiode pose, or ``None`` when out of FOV.

    ``None`` (rather than 0) marks geometry outside the receiver FOV or
    behind the LED: a zero prediction would make a zero measurement look
    informative.  Boundary rays (grazing incidence at fov = 90 deg)
    return 0.
    """
    geo = los_geometry(pd_pos, q, led)
    if geo.cos_incidence < rx.fov_cos() or geo.cos_irradiance < 0.0:
        return None
    k = gain_constant(led, rx)
    num = (geo.cos_incidence * geo.distance) * (geo.cos_irradiance * geo.distance) ** led.order
    return k * num / geo.distance ** (3.0 + led.order)


def predict_rss_angular(pd_pos, q, led: LedBeacon, rx: ReceiverConfig) -> float | None:
    """RSS via the cos^m(theta) cos(psi) / D^2 form; oracle for the vector form."""
    geo = los_geometry(pd_pos, q, led)
    if geo.cos_incidence < rx.fov_cos() or geo.cos_irradiance < 0.0:
        return None
    k = gain_constant(led, rx)
    return k * geo.cos_irradiance**led.order * geo.cos_incidence / geo.distance**2


def _jacobian_terms(pd_pos, q, led, rx):
    geo = los_geometry(pd_pos, q, led)
    if geo.cos_incidence <= GRAZING_COS_FLOOR or geo.cos_irradiance <= GRAZING_COS_FLOOR:
        raise GrazingIncidenceError(
            "derivative denominators vanish near grazing incidence "
            f"(cos_psi={geo.cos_incidence:.2e}, cos_theta={geo.cos_irradiance:.2e})"
        )
    n_u = receiver_normal(q)
    d = geo.los_vector
    p = predict_rss(pd_pos, q, led, rx)
    if p is None:
        raise GrazingIncidenceError("pose out of FOV")
    return geo, n_u, d, p


def rss_jacobian(pd_pos, q, led: LedBeacon, rx: ReceiverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Analytic RSS derivatives ``(dP_dr, dP_dphi_u)``.

    ``dP_dr`` is the gradient with respect to the photodiode position
    (per meter); ``dP_dphi_u`` with respect to a room-frame attitude
    disturbance angle (per radian):

        dP_dphi_u = P (D_vec x n) / (D_vec . n)
        dP_dr     = P [ -n/(n.D) - m n_l/(n_l.D) + (3+m) D_vec/D^2 ]
    """
    geo, n_u, d, p = _jacobian_terms(pd_pos, q, led, rx)
    dp_dphi = p * np.cross(d, n_u) / (d @ n_u)
    dp_dr = p * (
        -n_u / (n_u @ d)
        - led.order * led.normal / (led.normal @ d)
        + (3.0 + led.order) * d / geo.distance**2
    )
    return dp_dr, dp_dphi


def rss_jacobian_2d(pd_pos, q, led: LedBeacon, rx: ReceiverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Planar-position reduction ``(dP_ds, dP_dphi_u)`` for ceiling LEDs.

    Valid when the LED normal is ``[0, 0, 1]`` so its position term has no
    planar component:

        dP_ds = P [ -(n)_xy/(n.D) + (3+m) (s_l - s)/D^2 ]
    """
    if abs(led.normal[2] - 1.0) > 1e-9:
        raise ValueError("planar reduction requires an upward LED normal [0, 0, 1]")
    geo, n_u, d, p = _jacobian_terms(pd_pos, q, led, rx)
    dp_ds = p * (-n_u[:2] / (n_u @ d) + (3.0 + led.order) * d[:2] / geo.distance**2)
    dp_dphi = p * np.cross(d, n_u) / (d @ n_u)
    return dp_ds, dp_dphi


def unknown_led_jacobian(pd_pos, q, led: LedBeacon, rx: ReceiverConfig) -> np.ndarray:
    """1x2 derivative of RSS with respect to the LED planar position.

        dP_ds_l = P [ (n)_xy/(n.D) - (3+m) (s_l - s)/D^2 ]

    The PD and LED planar positions enter antisymmetrically, so this is
    the negative of the position part of :func:`rss_jacobian_2d`.
    """
    dp_ds, _ = rss_jacobian_2d(pd_pos, q, led, rx)
    return -dp_ds


def heading_information(pd_pos, q, leds, rx: ReceiverConfig) -> float:
    """Sum over LEDs of the squared heading component of dP/dphi.

    The attitude derivative is proportional to ``D_vec x n``, which is
    orthogonal to the receiver normal ``n``; rotating the photodiode about
    its own normal leaves every RSS unchanged, so this diagnostic is zero
    to machine precision for any geometry.
    """
    n_u = receiver_normal(q)
    total = 0.0
    for led in leds:
        try:
            _, dp_dphi = rss_jacobian(pd_pos, q, led, rx)
        except (GrazingIncidenceError, DegenerateGeometryError):
            continue
        total += float(dp_dphi @ n_u) ** 2
    return total
