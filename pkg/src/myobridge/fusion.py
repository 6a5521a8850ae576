"""Motion features from IMU frames: Euler angles, magnitudes, quantity of
motion, and the stillness gate.

Euler convention is intrinsic Z-Y'-X'' (yaw, then pitch, then roll).  All
downstream mappings depend on this choice.

The gate implements the inverse motion-to-sound rule: motion above a
threshold mutes the master gain, which then ramps back up over a configured
stillness interval (default 30 s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .protocol import IMU_RATE_HZ, ImuFrame

RAMP_LINEAR = "linear"
RAMP_EQUAL_POWER = "equal_power"


class NonNormalizableError(ValueError):
    """Quaternion norm too small to define an orientation."""


@dataclass(frozen=True)
class EulerAngles:
    """roll in (-pi, pi], pitch in [-pi/2, pi/2], yaw in (-pi, pi], radians."""

    roll: float
    pitch: float
    yaw: float


@dataclass(frozen=True)
class QomConfig:
    """Quantity-of-motion definition.

    "raw" sums the accelerometer magnitude (gravity included) with the
    normalized gyro magnitude.  "compensated" (default) subtracts the 1 g
    rest reading first, so a motionless sensor scores ~0.  Gyro magnitude
    is divided by gyro_full_scale_dps to make the two addends commensurate.
    """

    mode: str = "compensated"
    gyro_full_scale_dps: float = 500.0


@dataclass(frozen=True)
class GateConfig:
    """Threshold and recovery ramp for the stillness gate.

    The threshold is in QoM units and is deliberately calibratable (use the
    CLI monitor command); 0.35 is a usable default for compensated mode,
    not a measured constant.
    """

    threshold: float = 0.35
    ramp_seconds: float = 30.0
    ramp_shape: str = RAMP_LINEAR


@dataclass(frozen=True)
class SmoothingConfig:
    """EMA applied to QoM before the gate comparison, so one noisy sample
    cannot mute a performer.  alpha=1 disables smoothing."""

    alpha: float = 0.2
    enabled: bool = True


@dataclass(frozen=True)
class MotionState:
    """Per-performer motion summary updated once per IMU frame."""

    euler: EulerAngles
    accel_mag: float = 0.0
    gyro_mag: float = 0.0
    gyro_norm: float = 0.0
    qom: float = 0.0
    stillness_s: float = 0.0
    master_gain: float = 0.0


def initial_state() -> MotionState:
    return MotionState(euler=EulerAngles(0.0, 0.0, 0.0))


def quat_to_euler(quat: Sequence[float]) -> EulerAngles:
    """Convert a (w, x, y, z) quaternion to intrinsic Z-Y'-X'' Euler angles.

    The quaternion is renormalized internally; raises NonNormalizableError
    for a norm too close to zero.
    """
    w, x, y, z = quat
    norm = math.sqrt(w * w + x * x + y * y + z * z)
    if norm < 1e-9:
        raise NonNormalizableError(f"quaternion norm {norm} is not invertible")
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sinp = 2.0 * (w * y - x * z)
    pitch = math.asin(max(-1.0, min(1.0, sinp)))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return EulerAngles(roll, pitch, yaw)


def euler_to_quat(euler: EulerAngles) -> tuple[float, float, float, float]:
    """Inverse of quat_to_euler (up to quaternion sign)."""
    cr = math.cos(euler.roll / 2.0)
    sr = math.sin(euler.roll / 2.0)
    cp = math.cos(euler.pitch / 2.0)
    sp = math.sin(euler.pitch / 2.0)
    cy = math.cos(euler.yaw / 2.0)
    sy = math.sin(euler.yaw / 2.0)
    return (
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )


def vector_magnitude(v: Sequence[float]) -> float:
    """Euclidean norm of a 3-vector."""
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def compute_qom(accel_mag: float, gyro_mag: float,
                cfg: QomConfig = QomConfig()) -> float:
    """Scalar quantity of motion from acceleration and rotation magnitudes."""
    gyro_norm = gyro_mag / cfg.gyro_full_scale_dps
    if cfg.mode == "raw":
        return accel_mag + gyro_norm
    if cfg.mode == "compensated":
        return abs(accel_mag - 1.0) + gyro_norm
    raise ValueError(f"unknown QoM mode {cfg.mode!r}")


def _ramp_gain(stillness_s: float, cfg: GateConfig) -> float:
    x = min(1.0, stillness_s / cfg.ramp_seconds)
    if cfg.ramp_shape == RAMP_LINEAR:
        return x
    if cfg.ramp_shape == RAMP_EQUAL_POWER:
        return math.sin(math.pi / 2.0 * x)
    raise ValueError(f"unknown ramp shape {cfg.ramp_shape!r}")


def update_gate(state: MotionState, qom: float, dt: float,
                cfg: GateConfig = GateConfig()) -> MotionState:
    """Advance the stillness gate by one control period.

    QoM above the threshold zeroes the master gain immediately; otherwise
    the stillness timer accumulates and the gain ramps toward 1 over
    cfg.ramp_seconds.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if qom > cfg.threshold:
        stillness_s = 0.0
        master_gain = 0.0
    else:
        stillness_s = state.stillness_s + dt
        master_gain = _ramp_gain(stillness_s, cfg)
    return replace(state, qom=qom, stillness_s=stillness_s,
                   master_gain=master_gain)


def smooth_ema(prev: float, x: float, alpha: float) -> float:
    """One step of exponential smoothing; alpha=1 passes x through."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * x + (1.0 - alpha) * prev


class MotionTracker:
    """Folds a single performer's IMU stream into MotionStates.

    Not safe for concurrent update; one tracker per performer stream.
    Time advances from frame timestamps only, never the wall clock.
    """

    def __init__(self,
                 qom_cfg: Optional[QomConfig] = None,
                 gate_cfg: Optional[GateConfig] = None,
                 smoothing: Optional[SmoothingConfig] = None,
                 imu_rate_hz: float = IMU_RATE_HZ):
        self.qom_cfg = qom_cfg or QomConfig()
        self.gate_cfg = gate_cfg or GateConfig()
        self.smoothing = smoothing or SmoothingConfig()
        self._nominal_dt = 1.0 / imu_rate_hz
        self._state = initial_state()
        self._last_t_us: Optional[int] = None
        self._qom_smoothed: Optional[float] = None

    @property
    def state(self) -> MotionState:
        return self._state

    def update(self, frame: ImuFrame) -> MotionState:
        euler = quat_to_euler(frame.quat)
        accel_mag = vector_magnitude(frame.accel)
        gyro_mag = vector_magnitude(frame.gyro)
        gyro_norm = gyro_mag / self.qom_cfg.gyro_full_scale_dps
        qom = compute_qom(accel_mag, gyro_mag, self.qom_cfg)
        if self.smoothing.enabled:
            if self._qom_smoothed is None:
                self._qom_smoothed = qom
            else:
                self._qom_smoothed = smooth_ema(self._qom_smoothed, qom,
                                                self.smoothing.alpha)
            qom = self._qom_smoothed
        if self._last_t_us is None:
            dt = self._nominal_dt
        else:
            dt = (frame.t_us - self._last_t_us) / 1e6
            if dt <= 0.0:
                dt = self._nominal_dt
        self._last_t_us = frame.t_us
        state = update_gate(self._state, qom, dt, self.gate_cfg)
        self._state = replace(state, euler=euler, accel_mag=accel_mag,
                              gyro_mag=gyro_mag, gyro_norm=gyro_norm)
        return self._state
