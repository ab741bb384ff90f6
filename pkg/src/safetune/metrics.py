"""Cost, constraints and task parameters computed from one episode.

Transform convention (used by both ``q1`` and ``tau_m``): the un-normalised
forward DFT ``X[k] = sum_n x[n] exp(-2j pi k n / N)`` with no taper.  Its
magnitude for a sinusoid of amplitude ``A`` centred on bin ``k`` is
``N * A / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import TrajectoryRecord

__all__ = [
    "EpisodeMetrics",
    "MetricsError",
    "position_error_mdeg",
    "cost_f",
    "constraint_q1",
    "constraint_q2",
    "tau_inertia",
    "tau_friction",
    "episode_metrics",
    "TAU_FLOOR",
    "DEFAULT_Q1_WINDOW",
]

MDEG_PER_RAD = 180.0 / math.pi * 1e3
TAU_FLOOR = math.log10(1e-12)
DEFAULT_Q1_WINDOW = (100.0, 2000.0)


class MetricsError(ValueError):
    """Invalid metric configuration (e.g. an empty frequency window)."""


@dataclass(frozen=True)
class EpisodeMetrics:
    f: float
    q1: float
    q2: float
    tau_m: float
    tau_b: float

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.f, self.q1, self.q2))


def position_error_mdeg(traj: TrajectoryRecord) -> np.ndarray:
    return (traj.p_ref - traj.p) * MDEG_PER_RAD


def cost_f(traj: TrajectoryRecord) -> float:
    """Mean absolute position error in millidegrees."""
    if traj.aborted:
        return math.inf
    return float(np.mean(np.abs(position_error_mdeg(traj))))


def constraint_q2(traj: TrajectoryRecord) -> float:
    """Peak absolute position error in millidegrees."""
    if traj.aborted:
        return math.inf
    return float(np.max(np.abs(position_error_mdeg(traj))))


def _window_bins(n: int, dt: float, window) -> np.ndarray:
    lo, hi = window
    nyquist = 0.5 / dt
    if not (0 < lo < hi) or hi > nyquist:
        raise MetricsError(f"window {window} must lie inside (0, {nyquist}] Hz")
    freqs = np.fft.rfftfreq(n, dt)
    sel = (freqs >= lo) & (freqs <= hi)
    if not sel.any():
        raise MetricsError(f"window {window} contains no frequency bins for N={n}")
    return sel


def constraint_q1(traj: TrajectoryRecord, window=DEFAULT_Q1_WINDOW) -> float:
    """Largest torque spectrum magnitude inside ``window`` (Hz)."""
    if traj.aborted:
        return math.inf
    torque = traj.torque_applied
    if len(torque) < 2:
        raise MetricsError("need at least two samples")
    sel = _window_bins(len(torque), traj.dt, window)
    spectrum = np.abs(np.fft.rfft(torque - torque.mean()))
    return float(spectrum[sel].max())


def tau_inertia(traj: TrajectoryRecord) -> float:
    """log10 of the mean DFT magnitude of the velocity residual ``v - v_ff``.

    An identically zero residual maps to ``TAU_FLOOR``.
    """
    resid = traj.v - traj.v_ff
    mean_mag = float(np.mean(np.abs(np.fft.fft(resid))))
    if mean_mag <= 1e-12:
        return TAU_FLOOR
    return math.log10(mean_mag)


def tau_friction(traj: TrajectoryRecord) -> float:
    """Mean applied torque over the episode (Nm)."""
    return float(np.mean(traj.torque_applied))


def episode_metrics(traj: TrajectoryRecord, window=DEFAULT_Q1_WINDOW) -> EpisodeMetrics:
    if traj.aborted:
        return EpisodeMetrics(math.inf, math.inf, math.inf, math.nan, math.nan)
    return EpisodeMetrics(
        f=cost_f(traj),
        q1=constraint_q1(traj, window),
        q2=constraint_q2(traj),
        tau_m=tau_inertia(traj),
        tau_b=tau_friction(traj),
    )
