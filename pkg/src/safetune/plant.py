"""Rotational axis drive under a P / PI cascade controller.

The linear part of the plant is a damped single mass,

    m dv/dt = T - b v,    dp/dt = v,

discretised exactly with a zero-order hold on the applied torque.  A
position-periodic cogging torque acts against the drive and the controller
adds its own estimate of it to the torque command.  White torque noise and a
sinusoidal torque ripple are injected before the torque limiter.

All plant state is SI (rad, rad/s, Nm).  Controller gains are expressed in
"tuning units" and mapped onto SI by the constants ``kv_scale`` and
``ti_scale`` of :class:`PlantConfig`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

__all__ = [
    "ControllerParams",
    "PlantConfig",
    "ReferenceProfile",
    "TrajectoryRecord",
    "SCENARIOS",
    "apply_scenario",
    "cogging_torque",
    "make_reference",
    "simulate",
    "zoh_matrices",
    "PlantError",
]

RPM = 2.0 * math.pi / 60.0

NOMINAL_INERTIA = 0.0191
NOMINAL_DAMPING = 30.08
NOMINAL_COGGING = (1.78e-3, 0.0295, 0.372, 8.99e-3, 0.11)


class PlantError(ValueError):
    """Invalid plant, reference or scenario configuration."""


class ControllerParams(NamedTuple):
    """One candidate cascade controller in tuning units."""

    kp: float
    kv: float
    ti: float

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.kv, self.ti], dtype=float)


@dataclass(frozen=True)
class PlantConfig:
    """Physical and controller-interface parameters of one episode.

    ``cogging`` holds ``(c1, c2, c3, c4, c5)`` for a single harmonic.
    ``compensation`` is the controller's estimate of the same tuple; ``None``
    means the estimate equals the true cogging.  ``kff`` is the velocity
    feed-forward gain, which scenarios may perturb.  ``ripple_amplitude``
    (Nm) and ``ripple_frequency`` (Hz) describe a deterministic sinusoidal
    torque disturbance; it excites the loop at a fixed frequency so that the
    vibration constraint reflects the closed-loop sensitivity rather than
    the spread of a noise spectrum.
    """

    m: float = NOMINAL_INERTIA
    b: float = NOMINAL_DAMPING
    cogging: tuple[float, float, float, float, float] = NOMINAL_COGGING
    compensation: tuple[float, float, float, float, float] | None = None
    torque_noise_variance: float = 6.09e-3
    torque_limit: float = 3.48
    velocity_limit_rpm: float = 50.0
    dt: float = 2.5e-4
    kff: float = 1.0
    kp_scale: float = 0.1
    kv_scale: float = 750.0
    ti_scale: float = 0.01
    delay_steps: int = 1
    ripple_amplitude: float = 0.3
    ripple_frequency: float = 800.0

    def __post_init__(self):
        if not (self.m > 0 and self.b > 0 and self.dt > 0):
            raise PlantError("m, b and dt must be positive")
        if not (self.torque_limit > 0 and self.velocity_limit_rpm > 0):
            raise PlantError("torque and velocity limits must be positive")
        if self.torque_noise_variance < 0:
            raise PlantError("noise variance must be nonnegative")
        if self.delay_steps < 0:
            raise PlantError("delay_steps must be >= 0")
        if self.ripple_amplitude < 0 or self.ripple_frequency < 0:
            raise PlantError("ripple amplitude and frequency must be nonnegative")

    @property
    def compensation_params(self) -> tuple[float, float, float, float, float]:
        return self.cogging if self.compensation is None else self.compensation


@dataclass(frozen=True)
class ReferenceProfile:
    """Point-to-point move with a trapezoidal velocity profile.

    The move starts at ``start`` seconds, accelerates for ``ramp`` seconds,
    cruises, decelerates symmetrically and then rests until ``duration``.
    Angles are in degrees, velocities in RPM.
    """

    amplitude_deg: float = 2.0
    cruise_rpm: float = 0.3
    ramp: float = 0.2
    start: float = 0.1
    duration: float = 2.0


@dataclass
class TrajectoryRecord:
    """Sampled time series of one episode (SI units)."""

    dt: float
    p_ref: np.ndarray
    v_ref: np.ndarray
    p: np.ndarray
    v: np.ndarray
    torque_cmd: np.ndarray
    torque_applied: np.ndarray
    v_ff: np.ndarray
    aborted: bool = False

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def to_csv(self, path: str | Path) -> None:
        cols = ("t", "p_ref", "v_ref", "p", "v", "torque_cmd", "torque_applied")
        data = np.column_stack(
            [self.time, self.p_ref, self.v_ref, self.p, self.v,
             self.torque_cmd, self.torque_applied]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in data:
                w.writerow([repr(float(x)) for x in row])


def cogging_torque(p, c) -> np.ndarray:
    """Single-harmonic truncated Fourier cogging model."""
    c1, c2, c3, c4, c5 = c
    p = np.asarray(p, dtype=float)
    return c1 + c2 * p + c4 * np.sin(2.0 * np.pi / c3 * p + c5)


def zoh_matrices(m: float, b: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact discrete-time map for state ``(p, v)`` and held torque input.

    Returns ``(Ad, Bd)`` with ``x[k+1] = Ad @ x[k] + Bd * T[k]``.
    """
    one_minus_a = -math.expm1(-b * dt / m)  # 1 - exp(.) without cancellation
    a = 1.0 - one_minus_a
    tau = m / b
    ad = np.array([[1.0, tau * one_minus_a], [0.0, a]])
    bd = np.array([(dt - tau * one_minus_a) / b, one_minus_a / b])
    return ad, bd


def make_reference(profile: ReferenceProfile, dt: float,
                   velocity_limit_rpm: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample the trapezoidal move on ``[0, duration)`` with step ``dt``.

    ``v_ref`` is piecewise linear in time and ``p_ref`` is its exact
    integral, so both start and end at rest and ``p_ref[-1]`` equals the
    amplitude whenever the move finishes before ``duration``.
    """
    if abs(profile.cruise_rpm) > velocity_limit_rpm:
        raise PlantError(
            f"cruise velocity {profile.cruise_rpm} RPM exceeds the "
            f"{velocity_limit_rpm} RPM limit"
        )
    n = int(round(profile.duration / dt))
    t = np.arange(n) * dt
    amp = math.radians(profile.amplitude_deg)
    if amp == 0.0:
        return np.zeros(n), np.zeros(n)
    vc = profile.cruise_rpm * RPM
    if vc <= 0:
        raise PlantError("cruise velocity must be positive for a nonzero move")
    ramp = profile.ramp
    move = abs(amp) / vc + ramp  # total move time incl. both ramps
    if move < 2 * ramp:
        raise PlantError("amplitude too small for the requested ramps")
    if profile.start + move > profile.duration:
        raise PlantError("move does not fit into the episode duration")
    sign = math.copysign(1.0, amp)

    def pos(s):
        # closed-form integral of the trapezoid, s = time since move start
        s = np.clip(s, 0.0, move)
        out = np.where(s < ramp, 0.5 * vc / ramp * s**2, 0.0)
        cruise = 0.5 * vc * ramp + vc * (s - ramp)
        out = np.where((s >= ramp) & (s <= move - ramp), cruise, out)
        r = move - s
        tail = abs(amp) - 0.5 * vc / ramp * r**2
        out = np.where(s > move - ramp, tail, out)
        return sign * out

    def vel(s):
        inside = (s >= 0) & (s <= move)
        v = np.minimum.reduce([vc * s / ramp, np.full_like(s, vc), vc * (move - s) / ramp])
        return sign * np.where(inside, v, 0.0)

    s = t - profile.start
    return pos(s), vel(s)


@njit(cache=True)
def _episode(p_ref, v_ref, noise, dt, kp, kv_si, ti_s, kff, m, b, tlim,
             c, chat, delay):
    n = p_ref.shape[0]
    p_out = np.empty(n)
    v_out = np.empty(n)
    tc_out = np.empty(n)
    ta_out = np.empty(n)
    tau = m / b
    one_minus_a = -math.expm1(-b * dt / m)
    a = 1.0 - one_minus_a
    g_v = one_minus_a / b
    g_p = (dt - tau * one_minus_a) / b
    h_p = tau * one_minus_a
    pipe = np.zeros(delay + 1)
    p = 0.0
    v = 0.0
    integ = 0.0
    w = 2.0 * math.pi / c[2]
    what = 2.0 * math.pi / chat[2]
    for k in range(n):
        p_out[k] = p
        v_out[k] = v
        e_p = p_ref[k] - p
        v_cmd = kp * e_p + kff * v_ref[k]
        e_v = v_cmd - v
        trial = integ + e_v * dt
        comp = chat[0] + chat[1] * p + chat[3] * math.sin(what * p + chat[4])
        t_ctrl = kv_si * (e_v + trial / ti_s) + comp
        if abs(t_ctrl) > tlim:
            # conditional integration: hold the integrator while saturated
            t_ctrl = kv_si * (e_v + integ / ti_s) + comp
        else:
            integ = trial
        tc_out[k] = t_ctrl
        for j in range(delay):
            pipe[j] = pipe[j + 1]
        pipe[delay] = t_ctrl
        t_act = pipe[0] + noise[k]
        if t_act > tlim:
            t_act = tlim
        elif t_act < -tlim:
            t_act = -tlim
        t_app = t_act - (c[0] + c[1] * p + c[3] * math.sin(w * p + c[4]))
        ta_out[k] = t_app
        p, v = p + h_p * v + g_p * t_app, a * v + g_v * t_app
        if not (math.isfinite(p) and math.isfinite(v)):
            return p_out, v_out, tc_out, ta_out, False
    return p_out, v_out, tc_out, ta_out, True


def _run_kernel(p_ref, v_ref, noise, x, cfg):
    return _episode(
        p_ref, v_ref, noise, cfg.dt,
        float(x[0]) * cfg.kp_scale, float(x[1]) * cfg.kv_scale, float(x[2]) * cfg.ti_scale,
        cfg.kff, cfg.m, cfg.b, cfg.torque_limit,
        np.asarray(cfg.cogging, dtype=float),
        np.asarray(cfg.compensation_params, dtype=float),
        int(cfg.delay_steps),
    )


def simulate(x, cfg: PlantConfig, ref: tuple[np.ndarray, np.ndarray],
             seed: int | np.random.Generator | None) -> TrajectoryRecord:
    """Run one closed-loop episode.

    Parameters
    ----------
    x : ControllerParams or sequence of (Kp, Kv, Ti)
    cfg : PlantConfig
    ref : (p_ref, v_ref) as returned by :func:`make_reference`
    seed : int, Generator or None
        Seeds the torque noise stream.  ``None`` disables the noise (the
        deterministic ripple stays).
    """
    x = np.asarray(tuple(x), dtype=float)
    if x.shape != (3,):
        raise PlantError("controller must have three parameters (Kp, Kv, Ti)")
    if x[2] <= 0:
        raise PlantError("integral time must be positive")
    p_ref, v_ref = (np.ascontiguousarray(r, dtype=float) for r in ref)
    n = len(p_ref)
    if seed is None or cfg.torque_noise_variance == 0.0:
        noise = np.zeros(n)
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        noise = rng.normal(0.0, math.sqrt(cfg.torque_noise_variance), n)
    if cfg.ripple_amplitude > 0:
        t = np.arange(n) * cfg.dt
        noise = noise + cfg.ripple_amplitude * np.sin(2.0 * np.pi * cfg.ripple_frequency * t)
    p, v, tc, ta, ok = _run_kernel(p_ref, v_ref, noise, x, cfg)
    return TrajectoryRecord(
        dt=cfg.dt, p_ref=p_ref, v_ref=v_ref, p=p, v=v, torque_cmd=tc,
        torque_applied=ta, v_ff=cfg.kff * v_ref, aborted=not ok,
    )


SCENARIOS = ("stationary", "inertia-switch", "damping-drift", "kff-switch",
             "friction-switch")

KFF_SEQUENCE = (1.0, 0.95, 1.05, 0.9, 1.1)


@dataclass(frozen=True)
class ScenarioSpec:
    """Schedule knobs; defaults follow the numerical experiments."""

    inertia_period: int = 100
    inertia_factor: float = 2.0
    drift_horizon: float = 1000.0
    kff_period: int = 50
    kff_values: tuple[float, ...] = KFF_SEQUENCE
    friction_factor: float = 1.6
    friction_window: tuple[int, int] = (100, 200)
    extras: dict = field(default_factory=dict)


def apply_scenario(cfg: PlantConfig, scenario: str, iteration: int,
                   spec: ScenarioSpec | None = None) -> PlantConfig:
    """Plant configuration in force at ``iteration`` of a scenario.

    ``cfg`` supplies the nominal values (m0, b0, Kff = 1).
    """
    spec = spec or ScenarioSpec()
    if scenario == "stationary":
        return cfg
    if scenario == "inertia-switch":
        phase = iteration // spec.inertia_period
        return replace(cfg, m=cfg.m * (spec.inertia_factor if phase % 2 else 1.0))
    if scenario == "damping-drift":
        return replace(cfg, b=cfg.b * (1.0 + iteration / spec.drift_horizon))
    if scenario == "kff-switch":
        idx = min(iteration // spec.kff_period, len(spec.kff_values) - 1)
        return replace(cfg, kff=spec.kff_values[idx])
    if scenario == "friction-switch":
        lo, hi = spec.friction_window
        scale = spec.friction_factor if lo <= iteration < hi else 1.0
        return replace(cfg, b=cfg.b * scale)
    raise PlantError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
