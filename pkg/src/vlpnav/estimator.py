"""Sliding-window tightly-coupled VLP/INS graph optimizer.

A window of navigation states (one per VLP epoch) is connected by IMU
pre-integration factors and observed by per-LED RSS factors, optional
kinematic constraints (non-holonomic, height) and a Gaussian prior that
carries the information of states marginalized out of the window.  The
stacked nonlinear least-squares cost

    sum ||r_imu||^2_Sigma + sum ||r_rss||^2_sigma + sum ||r_c||^2 + prior

is minimized over the 15-dim error space of every state (plus 2-dim
planar blocks for LEDs with unknown positions) with Levenberg-Marquardt;
quaternions update through their minimal space.  Sliding folds the
oldest state into the prior by Schur complement at the current
linearization.

Blocked or out-of-FOV RSS samples are not deleted: they enter with a
large down-weight variance so the factor graph keeps a fixed structure
while the corrupted measurements carry negligible weight.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attitude import quat_to_dcm, skew
from .channel import (
    DegenerateGeometryError,
    GrazingIncidenceError,
    LedBeacon,
    ReceiverConfig,
    RssSample,
    SampleFlag,
    predict_rss,
    rss_jacobian,
)
from .preint import ImuNoise, PreintegratedImu, imu_residual, imu_residual_jacobians, mechanize
from .state import ERROR_DIM, NavState

logger = logging.getLogger(__name__)

__all__ = [
    "ConstraintConfig",
    "EstimatorConfig",
    "LmOptions",
    "LmReport",
    "MarginalPrior",
    "PriorConfig",
    "SlidingWindow",
    "TightlyCoupledEstimator",
    "assemble_cost",
    "constraint_residuals",
    "dop",
    "estimate_unknown_leds",
    "slide_and_marginalize",
    "solve_lm",
    "vlp_jacobian_row",
    "vlp_residual",
    "NavState",
]


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class LmOptions:
    """Levenberg-Marquardt controls."""

    max_iterations: int = 50
    cost_reduction_tol: float = 1e-8
    step_norm_tol: float = 1e-10
    lambda_init: float = 0.0
    lambda_growth: float = 10.0
    lambda_shrink: float = 10.0
    lambda_max: float = 1e8


@dataclass(frozen=True)
class ConstraintConfig:
    """Kinematic constraint selection and 1-sigma strengths."""

    use_nhc: bool = True
    nhc_sigma: float = 0.05  # m/s, lateral and vertical vehicle-frame velocity
    use_height: bool = False
    height_sigma: float = 0.01  # m
    pd_height: float = 0.0  # m, measured photodiode height for planar runs


@dataclass(frozen=True)
class PriorConfig:
    """1-sigma widths of the initial-state prior.

    Heading must be anchored externally (a single RSS cannot observe it);
    roll/pitch come from accelerometer leveling, position from the
    first-epoch RSS fix.
    """

    position: float = 0.2
    velocity: float = 0.2
    rollpitch: float = np.deg2rad(2.0)
    heading: float = np.deg2rad(0.5)
    bias_acc: float = 0.02
    bias_gyro: float = 2e-3

    def sqrt_info_diag(self) -> np.ndarray:
        sig = np.array(
            [self.position] * 3 + [self.velocity] * 3
            + [self.rollpitch, self.rollpitch, self.heading]
            + [self.bias_acc] * 3 + [self.bias_gyro] * 3
        )
        return 1.0 / sig**2


@dataclass(frozen=True)
class EstimatorConfig:
    imu_noise: ImuNoise
    window_size: int = 20
    blocked_variance: float = 99.0
    gravity: tuple = (0.0, 0.0, -9.80665)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    lm: LmOptions = field(default_factory=LmOptions)
    prior: PriorConfig = field(default_factory=PriorConfig)
    unknown_led_ids: tuple = ()
    unknown_led_prior_sigma: float = 10.0  # m, keeps unobserved LED blocks solvable

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)


# ---------------------------------------------------------------------------
# Factors


def vlp_residual(state: NavState, sample: RssSample, led: LedBeacon, rx: ReceiverConfig,
                 led_xy=None) -> float | None:
    """Predicted-minus-measured RSS at the lever-arm-corrected PD position.

    Returns ``None`` when the predicted geometry falls outside the FOV;
    the caller skips the factor for that iterate.
    """
    if led_xy is not None:
        led = replace(led, position=np.array([led_xy[0], led_xy[1], led.position[2]]))
    R = quat_to_dcm(state.attitude)
    pd_pos = state.position + R @ rx.lever_arm_vlp
    pred = predict_rss(pd_pos, state.attitude, led, rx)
    if pred is None:
        return None
    return pred - sample.value


def vlp_jacobian_row(state: NavState, led: LedBeacon, rx: ReceiverConfig,
                     led_xy=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Jacobian of one RSS residual over the 15-dim state error (+ LED block).

    Position block is the channel position gradient; the attitude block
    combines the direct normal-rotation term with the lever-arm swing,
    both mapped into the local attitude error; velocity and bias blocks
    are zero.  The optional 2-vector is the unknown-LED planar block.
    """
    if led_xy is not None:
        led = replace(led, position=np.array([led_xy[0], led_xy[1], led.position[2]]))
    R = quat_to_dcm(state.attitude)
    lever_u = R @ rx.lever_arm_vlp
    pd_pos = state.position + lever_u
    dp_dr, dp_dphi = rss_jacobian(pd_pos, state.attitude, led, rx)

    row = np.zeros(ERROR_DIM)
    row[0:3] = dp_dr
    # d r / d theta = -(A^T + B^T [lever_u x]) R, A = dp_dphi, B = dp_dr
    row[6:9] = -R.T @ (dp_dphi - skew(lever_u) @ dp_dr)
    led_block = -dp_dr[:2] if led_xy is not None else None
    return row, led_block


def constraint_residuals(state: NavState, cfg: ConstraintConfig) -> np.ndarray:
    """Stacked kinematic constraint residuals for one state.

    Height: ``p_z - pd_height``.  NHC: lateral and vertical components
    of the vehicle-frame velocity.
    """
    vals = []
    if cfg.use_height:
        vals.append(state.position[2] - cfg.pd_height)
    if cfg.use_nhc:
        v_v = quat_to_dcm(state.attitude).T @ state.velocity
        vals.extend([v_v[1], v_v[2]])
    return np.asarray(vals, dtype=float)


def _constraint_terms(state: NavState, cfg: ConstraintConfig):
    """(residual, variance, 15-dim jacobian row) triples for one state."""
    out = []
    if cfg.use_height:
        row = np.zeros(ERROR_DIM)
        row[2] = 1.0
        out.append((state.position[2] - cfg.pd_height, cfg.height_sigma**2, row))
    if cfg.use_nhc:
        R = quat_to_dcm(state.attitude)
        v_v = R.T @ state.velocity
        S = skew(v_v)
        for axis in (1, 2):
            row = np.zeros(ERROR_DIM)
            row[3:6] = R.T[axis]
            row[6:9] = S[axis]
            out.append((v_v[axis], cfg.nhc_sigma**2, row))
    return out


# ---------------------------------------------------------------------------
# Window and prior


@dataclass
class MarginalPrior:
    """Quadratic information carried over from marginalized variables.

    The cost contribution at current values x is
    ``0.5 d^T H d + g^T d`` with ``d = x [-] lin`` stacked over ``keys``.
    """

    keys: list
    hessian: np.ndarray
    gradient: np.ndarray
    lin: dict

    def dim_of(self, key) -> int:
        return ERROR_DIM if key[0] == "x" else 2

    def delta(self, key, current) -> np.ndarray:
        if key[0] == "x":
            return current.boxminus(self.lin[key])
        return np.asarray(current, dtype=float) - self.lin[key]


class SlidingWindow:
    """Ordered states plus their attached factors and the rolling prior."""

    def __init__(self, config: EstimatorConfig, leds: list[LedBeacon], rx: ReceiverConfig):
        self.config = config
        self.rx = rx
        self.led_map = {led.led_id: led for led in leds}
        self.epoch_ids: list[int] = []
        self.states: list[NavState] = []
        self.imu_factors: list[PreintegratedImu] = []
        self.rss_factors: list[list[RssSample]] = []
        self.prior: MarginalPrior | None = None
        # Unknown-LED planar blocks: current estimate and the weak-prior center.
        self.unknown_xy: dict[int, np.ndarray] = {}
        self.unknown_init: dict[int, np.ndarray] = {}

    # -- layout -----------------------------------------------------------
    @property
    def n_states(self) -> int:
        return len(self.states)

    def led_keys(self) -> list[int]:
        return sorted(self.unknown_xy)

    def total_dim(self) -> int:
        return ERROR_DIM * self.n_states + 2 * len(self.unknown_xy)

    def index_of(self, key) -> int:
        if key[0] == "x":
            return ERROR_DIM * self.epoch_ids.index(key[1])
        return ERROR_DIM * self.n_states + 2 * self.led_keys().index(key[1])

    def value_of(self, key):
        if key[0] == "x":
            return self.states[self.epoch_ids.index(key[1])]
        return self.unknown_xy[key[1]]

    def set_unknown_led(self, led_id: int, initial_xy) -> None:
        if led_id not in self.led_map:
            raise KeyError(f"unknown LED id {led_id} not in the map")
        xy = np.asarray(initial_xy, dtype=float).copy()
        self.unknown_xy[led_id] = xy
        self.unknown_init[led_id] = xy.copy()

    def append(self, epoch_id: int, state: NavState, pre: PreintegratedImu | None,
               rss: list[RssSample]) -> None:
        if self.states and pre is None:
            raise ValueError("non-initial states need an IMU factor")
        self.epoch_ids.append(epoch_id)
        self.states.append(state)
        if pre is not None:
            self.imu_factors.append(pre)
        self.rss_factors.append(list(rss))

    def sample_variance(self, sample: RssSample) -> float:
        if sample.flag is not SampleFlag.LOS:
            return self.config.blocked_variance
        return sample.variance

    def led_xy_for(self, led_id: int):
        return self.unknown_xy.get(led_id)


# ---------------------------------------------------------------------------
# Assembly


def _sym_inv(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    jitter = 1e-14 * max(np.trace(M) / M.shape[0], 1e-30)
    return np.linalg.inv(M + jitter * np.eye(M.shape[0]))


def assemble_cost(window: SlidingWindow, with_hessian: bool = True):
    """Linearize every factor at the current window values.

    Returns ``(H, g, cost)``: Gauss-Newton Hessian, gradient and total
    cost ``sum 0.5 r^T W r`` (plus the prior quadratic).  ``H``/``g``
    are ``None`` when ``with_hessian`` is False.
    """
    dim = window.total_dim()
    H = np.zeros((dim, dim)) if with_hessian else None
    g = np.zeros(dim) if with_hessian else None
    cost = 0.0
    cfg = window.config
    gravity = cfg.gravity_vec

    def scatter(rows: list[tuple[int, np.ndarray]], r, W):
        nonlocal cost
        r = np.atleast_1d(r)
        W = np.atleast_2d(W)
        cost += 0.5 * float(r @ W @ r)
        if not with_hessian:
            return
        for i0, Ji in rows:
            gi = Ji.T @ W @ r
            g[i0:i0 + gi.size] += gi
            for j0, Jj in rows:
                H[i0:i0 + Ji.shape[1], j0:j0 + Jj.shape[1]] += Ji.T @ W @ Jj

    # Prior
    if window.prior is not None:
        p = window.prior
        deltas = [p.delta(k, window.value_of(k)) for k in p.keys]
        d = np.concatenate(deltas) if deltas else np.zeros(0)
        cost += 0.5 * float(d @ p.hessian @ d) + float(p.gradient @ d)
        if with_hessian:
            idx = []
            for k in p.keys:
                i0 = window.index_of(k)
                idx.extend(range(i0, i0 + p.dim_of(k)))
            idx = np.asarray(idx, dtype=int)
            H[np.ix_(idx, idx)] += p.hessian
            g[idx] += p.hessian @ d + p.gradient

    # Weak prior keeping unobserved unknown-LED blocks solvable.
    w_led = 1.0 / cfg.unknown_led_prior_sigma**2
    for led_id in window.led_keys():
        d = window.unknown_xy[led_id] - window.unknown_init[led_id]
        cost += 0.5 * w_led * float(d @ d)
        if with_hessian:
            i0 = window.index_of(("led", led_id))
            H[i0:i0 + 2, i0:i0 + 2] += w_led * np.eye(2)
            g[i0:i0 + 2] += w_led * d

    # IMU factors
    for k, pre in enumerate(window.imu_factors):
        xk, xk1 = window.states[k], window.states[k + 1]
        r = imu_residual(pre, xk, xk1, gravity)
        W = _sym_inv(pre.cov)
        i0 = ERROR_DIM * k
        if with_hessian:
            Jk, Jk1 = imu_residual_jacobians(pre, xk, xk1, gravity)
            scatter([(i0, Jk), (i0 + ERROR_DIM, Jk1)], r, W)
        else:
            scatter([], r, W)

    # VLP factors
    for k, samples in enumerate(window.rss_factors):
        state = window.states[k]
        i0 = ERROR_DIM * k
        for sample in samples:
            led = window.led_map.get(sample.led_id)
            if led is None:
                continue
            led_xy = window.led_xy_for(sample.led_id)
            try:
                r = vlp_residual(state, sample, led, window.rx, led_xy)
            except DegenerateGeometryError:
                continue
            if r is None:
                continue
            var = window.sample_variance(sample)
            if with_hessian:
                try:
                    row, led_block = vlp_jacobian_row(state, led, window.rx, led_xy)
                except (GrazingIncidenceError, DegenerateGeometryError):
                    continue
                rows = [(i0, row[None, :])]
                if led_block is not None:
                    rows.append((window.index_of(("led", sample.led_id)), led_block[None, :]))
                scatter(rows, r, 1.0 / var)
            else:
                scatter([], r, 1.0 / var)

    # Kinematic constraints
    for k, state in enumerate(window.states):
        i0 = ERROR_DIM * k
        for r, var, row in _constraint_terms(state, cfg.constraints):
            scatter([(i0, row[None, :])] if with_hessian else [], r, 1.0 / var)

    return H, g, cost


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class LmIteration:
    cost: float
    lam: float
    step_norm: float
    accepted: bool
    led_step: float = 0.0


@dataclass
class LmReport:
    converged: bool
    iterations: list[LmIteration] = field(default_factory=list)
    final_cost: float = math.nan

    @property
    def n_accepted(self) -> int:
        return sum(1 for it in self.iterations if it.accepted)


def _apply_step(window: SlidingWindow, dx: np.ndarray):
    states = [s.perturb(dx[ERROR_DIM * i:ERROR_DIM * (i + 1)]) for i, s in
              enumerate(window.states)]
    leds = {}
    for led_id in window.led_keys():
        i0 = window.index_of(("led", led_id))
        leds[led_id] = window.unknown_xy[led_id] + dx[i0:i0 + 2]
    return states, leds


def solve_lm(window: SlidingWindow, opts: LmOptions | None = None) -> LmReport:
    """Damped Gauss-Newton on the window; mutates it toward the optimum.

    Starts undamped (a pure GN step solves quadratic costs exactly);
    damping engages only after a rejected step.  Convergence: relative
    cost decrease below ``cost_reduction_tol`` or step norm below
    ``step_norm_tol``.  If the damping parameter exhausts ``lambda_max``
    the best iterate is kept and the report flags no convergence.
    """
    opts = opts or window.config.lm
    report = LmReport(converged=False)
    H, g, cost = assemble_cost(window)
    lam = opts.lambda_init

    for _ in range(opts.max_iterations):
        D = np.clip(np.diag(H), 1e-12, None)
        try:
            dx = np.linalg.solve(H + lam * np.diag(D), -g)
        except np.linalg.LinAlgError:
            dx = None
        if dx is not None and np.all(np.isfinite(dx)):
            states, leds = _apply_step(window, dx)
            saved = (window.states, dict(window.unknown_xy))
            window.states = states
            window.unknown_xy = leds
            _, _, new_cost = assemble_cost(window, with_hessian=False)
        else:
            new_cost = math.inf

        if math.isfinite(new_cost) and new_cost <= cost:
            step = float(np.linalg.norm(dx))
            led_step = 0.0
            if window.unknown_xy:
                led_step = max(
                    float(np.linalg.norm(leds[i] - saved[1][i])) for i in leds)
            report.iterations.append(LmIteration(new_cost, lam, step, True, led_step))
            decrease = cost - new_cost
            cost = new_cost
            if decrease <= opts.cost_reduction_tol * max(cost, 1e-30) or (
                    step < opts.step_norm_tol):
                report.converged = True
                break
            H, g, _ = assemble_cost(window)
            lam = 0.0 if lam < 1e-12 else lam / opts.lambda_shrink
        else:
            if dx is not None:
                window.states, window.unknown_xy = saved
                if float(np.linalg.norm(dx)) < opts.step_norm_tol:
                    # No usable step left: the iterate is at the numeric floor.
                    report.converged = True
                    break
            report.iterations.append(LmIteration(cost, lam, 0.0, False))
            lam = max(lam * opts.lambda_growth, 1e-6)
            if lam > opts.lambda_max:
                logger.warning("LM damping exhausted; returning best iterate")
                break

    report.final_cost = cost
    return report


# ---------------------------------------------------------------------------
# Marginalization


def schur_marginalize(H: np.ndarray, g: np.ndarray, n_marg: int):
    """Eliminate the leading ``n_marg`` dims of a quadratic (H, g).

    Returns the reduced ``(H', g')`` over the remaining dims, or ``None``
    when the marginal block is indefinite (negative eigenvalue beyond
    round-off), in which case the caller should drop the factors instead.
    """
    Hmm = 0.5 * (H[:n_marg, :n_marg] + H[:n_marg, :n_marg].T)
    Hmr = H[:n_marg, n_marg:]
    Hrr = H[n_marg:, n_marg:]
    gm = g[:n_marg]
    gr = g[n_marg:]
    w, V = np.linalg.eigh(Hmm)
    scale = max(np.max(np.abs(w)), 1e-30)
    if np.min(w) < -1e-9 * scale:
        return None
    inv_w = np.where(w > 1e-12 * scale, 1.0 / np.maximum(w, 1e-300), 0.0)
    Hmm_inv = (V * inv_w) @ V.T
    H_new = Hrr - Hmr.T @ Hmm_inv @ Hmr
    g_new = gr - Hmr.T @ Hmm_inv @ gm
    return 0.5 * (H_new + H_new.T), g_new


def _marginalize_oldest(window: SlidingWindow) -> MarginalPrior | None:
    """Fold every factor touching the oldest state into a new prior."""
    cfg = window.config
    gravity = cfg.gravity_vec
    e0 = window.epoch_ids[0]
    key0 = ("x", e0)

    keys = [key0]
    if window.n_states > 1:
        keys.append(("x", window.epoch_ids[1]))
    for s in window.rss_factors[0]:
        k = ("led", s.led_id)
        if s.led_id in window.unknown_xy and k not in keys:
            keys.append(k)
    prior = window.prior
    touched_by_prior = prior is not None and key0 in prior.keys
    has_imu = len(window.imu_factors) > 0
    has_rss = len(window.rss_factors[0]) > 0
    has_constraints = len(_constraint_terms(window.states[0], cfg.constraints)) > 0
    if not (has_imu or has_rss or has_constraints or touched_by_prior):
        return prior
    # The old prior is folded in wholesale (re-centering a quadratic on new
    # linearization points is exact), so replacing it below loses nothing.
    if prior is not None:
        for k in prior.keys:
            if k not in keys:
                keys.append(k)

    dims = [ERROR_DIM if k[0] == "x" else 2 for k in keys]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    dim = int(offsets[-1])
    H = np.zeros((dim, dim))
    g = np.zeros(dim)

    def off(key) -> int:
        return int(offsets[keys.index(key)])

    def add(rows, r, W):
        r = np.atleast_1d(r)
        W = np.atleast_2d(W)
        for i0, Ji in rows:
            g[i0:i0 + Ji.shape[1]] += Ji.T @ W @ r
            for j0, Jj in rows:
                H[i0:i0 + Ji.shape[1], j0:j0 + Jj.shape[1]] += Ji.T @ W @ Jj

    if prior is not None:
        d = np.concatenate([prior.delta(k, window.value_of(k)) for k in prior.keys])
        idx = np.concatenate([np.arange(off(k), off(k) + prior.dim_of(k)) for k in prior.keys])
        H[np.ix_(idx, idx)] += prior.hessian
        g[idx] += prior.hessian @ d + prior.gradient

    if has_imu:
        pre = window.imu_factors[0]
        x0, x1 = window.states[0], window.states[1]
        r = imu_residual(pre, x0, x1, gravity)
        W = _sym_inv(pre.cov)
        Jk, Jk1 = imu_residual_jacobians(pre, x0, x1, gravity)
        add([(0, Jk), (off(("x", window.epoch_ids[1])), Jk1)], r, W)

    state0 = window.states[0]
    for sample in window.rss_factors[0]:
        led = window.led_map.get(sample.led_id)
        if led is None:
            continue
        led_xy = window.led_xy_for(sample.led_id)
        try:
            r = vlp_residual(state0, sample, led, window.rx, led_xy)
            if r is None:
                continue
            row, led_block = vlp_jacobian_row(state0, led, window.rx, led_xy)
        except (GrazingIncidenceError, DegenerateGeometryError):
            continue
        rows = [(0, row[None, :])]
        if led_block is not None:
            rows.append((off(("led", sample.led_id)), led_block[None, :]))
        add(rows, r, np.atleast_2d(1.0 / window.sample_variance(sample)))

    for r, var, row in _constraint_terms(state0, cfg.constraints):
        add([(0, row[None, :])], r, np.atleast_2d(1.0 / var))

    reduced = schur_marginalize(H, g, ERROR_DIM)
    if reduced is None:
        logger.warning("indefinite marginal block; dropping factors of epoch %d", e0)
        if prior is not None and touched_by_prior:
            return _prior_without_key(window, prior, key0)
        return prior
    H_new, g_new = reduced
    new_keys = keys[1:]
    lin = {}
    for k in new_keys:
        val = window.value_of(k)
        lin[k] = val.copy() if k[0] == "x" else np.asarray(val, dtype=float).copy()
    return MarginalPrior(keys=new_keys, hessian=H_new, gradient=g_new, lin=lin)


def _prior_without_key(window: SlidingWindow, prior: MarginalPrior, key) -> MarginalPrior | None:
    """Fallback: delete a key from the prior by dropping its rows/cols."""
    if key not in prior.keys:
        return prior
    keep = [k for k in prior.keys if k != key]
    if not keep:
        return None
    idx = []
    o = 0
    for k in prior.keys:
        d = prior.dim_of(k)
        if k != key:
            idx.extend(range(o, o + d))
        o += d
    idx = np.asarray(idx, dtype=int)
    return MarginalPrior(
        keys=keep,
        hessian=prior.hessian[np.ix_(idx, idx)],
        gradient=prior.gradient[idx],
        lin={k: prior.lin[k] for k in keep},
    )


def slide_and_marginalize(window: SlidingWindow, epoch_id: int, new_state: NavState,
                          pre: PreintegratedImu, rss: list[RssSample]) -> None:
    """Append a new epoch; if the window is full, marginalize the oldest."""
    if window.n_states >= window.config.window_size:
        window.prior = _marginalize_oldest(window)
        window.epoch_ids.pop(0)
        window.states.pop(0)
        window.imu_factors.pop(0)
        window.rss_factors.pop(0)
    window.append(epoch_id, new_state, pre, rss)


# ---------------------------------------------------------------------------
# Unknown LEDs and DOP


def dop(points_2d, led_xy) -> float:
    """Geometric dilution of precision of a planar point set toward a LED.

    Rows of the design matrix are unit directions from each point to the
    LED; collinear or otherwise rank-deficient geometry returns ``inf``.
    """
    pts = np.atleast_2d(np.asarray(points_2d, dtype=float))
    led_xy = np.asarray(led_xy, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("DOP needs at least 3 points")
    d = led_xy[None, :] - pts
    norms = np.linalg.norm(d, axis=1)
    ok = norms > 1e-9
    if np.count_nonzero(ok) < 3:
        return math.inf
    A = d[ok] / norms[ok, None]
    G = A.T @ A
    w = np.linalg.eigvalsh(G)
    if w[0] < 1e-9 * max(w[-1], 1e-30):
        return math.inf
    return float(np.sqrt(np.trace(np.linalg.inv(G))))


@dataclass
class LedEstimate:
    led_id: int
    xy: np.ndarray
    cov: np.ndarray
    diverged: bool

    @property
    def cov_trace(self) -> float:
        return float(np.trace(self.cov))


def estimate_unknown_leds(window: SlidingWindow, report: LmReport | None = None,
                          cov_threshold: float = 1.0) -> dict[int, LedEstimate]:
    """Read back unknown-LED estimates and marginal covariances.

    A LED is flagged diverged when the optimizer failed to converge with
    its planar step still growing, or when its marginal covariance trace
    exceeds ``cov_threshold`` (weak geometry; compare a DOP map).
    """
    out = {}
    if not window.unknown_xy:
        return out
    H, _, _ = assemble_cost(window)
    cov_full = np.linalg.inv(H + 1e-12 * np.eye(H.shape[0]))
    steps = [it.led_step for it in (report.iterations if report else []) if it.accepted]
    growing = len(steps) >= 3 and steps[-1] > steps[-2] > steps[-3] and steps[-1] > 1e-3
    non_conv = report is not None and not report.converged
    for led_id in window.led_keys():
        i0 = window.index_of(("led", led_id))
        cov = cov_full[i0:i0 + 2, i0:i0 + 2]
        diverged = (non_conv and growing) or float(np.trace(cov)) > cov_threshold
        out[led_id] = LedEstimate(led_id=led_id, xy=window.unknown_xy[led_id].copy(),
                                  cov=cov, diverged=diverged)
    return out


# ---------------------------------------------------------------------------
# Driver


@dataclass
class EpochDiagnostics:
    epoch_id: int
    timestamp: float
    cost: float
    iterations: int
    converged: bool
    los_count: int
    flagged_count: int
    led_dop: dict = field(default_factory=dict)


class TightlyCoupledEstimator:
    """Feeds epochs through the sliding window and records trajectories.

    ``causal`` holds the real-time stream (the newest state right after
    each solve); ``smoothed`` holds each state's final value when it
    leaves the window (or at shutdown), i.e. the fixed-lag smoother
    output.
    """

    def __init__(self, config: EstimatorConfig, leds: list[LedBeacon], rx: ReceiverConfig):
        self.config = config
        self.window = SlidingWindow(config, leds, rx)
        self.causal: list[NavState] = []
        self.smoothed: list[NavState] = []
        self.diagnostics: list[EpochDiagnostics] = []
        self._epoch_counter = 0

    def start(self, state0: NavState, rss0: list[RssSample],
              unknown_init: dict[int, np.ndarray] | None = None) -> LmReport:
        if self.window.n_states:
            raise RuntimeError("estimator already started")
        for led_id in self.config.unknown_led_ids:
            init = None if unknown_init is None else unknown_init.get(led_id)
            if init is None:
                init = self.window.led_map[led_id].position[:2]
            self.window.set_unknown_led(led_id, init)
        self.window.append(0, state0, None, rss0)
        self.window.prior = MarginalPrior(
            keys=[("x", 0)],
            hessian=np.diag(self.config.prior.sqrt_info_diag()),
            gradient=np.zeros(ERROR_DIM),
            lin={("x", 0): state0.copy()},
        )
        return self._solve_and_record()

    def step(self, pre: PreintegratedImu, rss: list[RssSample], timestamp: float) -> LmReport:
        if not self.window.n_states:
            raise RuntimeError("estimator not started")
        self._epoch_counter += 1
        seed = mechanize(pre, self.window.states[-1], self.config.gravity_vec, timestamp)
        n_before = self.window.n_states
        if n_before >= self.config.window_size:
            oldest = self.window.states[0]
            slide_and_marginalize(self.window, self._epoch_counter, seed, pre, rss)
            self.smoothed.append(oldest.copy())
        else:
            slide_and_marginalize(self.window, self._epoch_counter, seed, pre, rss)
        return self._solve_and_record()

    def finalize(self) -> list[NavState]:
        """Flush remaining window states into the smoothed trajectory."""
        self.smoothed.extend(s.copy() for s in self.window.states)
        return self.smoothed

    def _solve_and_record(self) -> LmReport:
        report = solve_lm(self.window)
        last = self.window.states[-1]
        self.causal.append(last.copy())
        rss = self.window.rss_factors[-1]
        los = sum(1 for s in rss if s.flag is SampleFlag.LOS)
        led_dop = {}
        if self.window.unknown_xy and self.window.n_states >= 3:
            pts = np.array([s.position[:2] for s in self.window.states])
            for led_id, xy in self.window.unknown_xy.items():
                led_dop[led_id] = dop(pts, xy)
        self.diagnostics.append(EpochDiagnostics(
            epoch_id=self.window.epoch_ids[-1],
            timestamp=last.timestamp,
            cost=report.final_cost,
            iterations=len(report.iterations),
            converged=report.converged,
            los_count=los,
            flagged_count=len(rss) - los,
            led_dop=led_dop,
        ))
        return report
