"""Subjects, rig geometry and mirror aiming.

World frame: the mirror's rotation centre is the origin, z points up.  The
camera hangs above the mirror looking straight down, with its lens principal
plane ``lens_height_mm`` above the origin, so the folded optical path length
to a subject is the eye-to-mirror distance plus that height.

Mirror orientation is the pan/tilt of its surface normal: pan is the azimuth
of the normal's horizontal projection (measured from +y), tilt its elevation.
A subject eye level with the mirror at azimuth 0 therefore needs pan 0,
tilt 45.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

EYE_DROP_MM = 120.0  # eye line sits this far below the top of the head

_JITTER_COMPONENTS = 8


@dataclass(frozen=True)
class RigGeometry:
    lens_height_mm: float = 200.0
    mirror_height_mm: float = 1000.0  # mirror centre above the floor


@dataclass(frozen=True)
class TrajectorySegment:
    t_start_ms: float
    t_end_ms: float  # may be inf
    velocity_mmps: tuple[float, float, float]

    def __post_init__(self):
        if self.t_end_ms <= self.t_start_ms:
            raise ValueError("segment must have positive duration")


@dataclass(frozen=True)
class Subject:
    subject_id: str
    identity_seed: int
    position_mm: tuple[float, float, float]  # eye centre at t = 0
    trajectory: tuple[TrajectorySegment, ...] = ()
    jitter_sigma_mm: float = 3.0
    jitter_bandwidth_hz: float = 2.0
    motion_seed: int = 0


def subject_at(subject_id: str, identity_seed: int, distance_mm: float,
               azimuth_deg: float, height_mm: float, rig: RigGeometry,
               **kwargs) -> Subject:
    """Place a standing subject by horizontal distance, azimuth and body height."""
    az = math.radians(azimuth_deg)
    z = height_mm - EYE_DROP_MM - rig.mirror_height_mm
    pos = (distance_mm * math.sin(az), distance_mm * math.cos(az), z)
    return Subject(subject_id, identity_seed, pos, **kwargs)


@functools.lru_cache(maxsize=256)
def _jitter_bank(seed: int, sigma: float, bandwidth_hz: float):
    """Per-axis sinusoid parameters for band-limited stationary head jitter."""
    freqs = np.empty((3, _JITTER_COMPONENTS))
    phases = np.empty((3, _JITTER_COMPONENTS))
    for axis in range(3):
        rng = np.random.default_rng((int(seed), 0x4A495454, axis))
        freqs[axis] = rng.uniform(0.2 * bandwidth_hz, bandwidth_hz, _JITTER_COMPONENTS)
        phases[axis] = rng.uniform(0.0, 2.0 * math.pi, _JITTER_COMPONENTS)
    amp = sigma * math.sqrt(2.0 / _JITTER_COMPONENTS)
    return freqs, phases, amp


def _jitter(subject: Subject, t_ms: float) -> np.ndarray:
    if subject.jitter_sigma_mm == 0.0:
        return np.zeros(3)
    freqs, phases, amp = _jitter_bank(
        subject.motion_seed, subject.jitter_sigma_mm, subject.jitter_bandwidth_hz
    )
    phase = 2.0 * math.pi * freqs * (t_ms / 1000.0) + phases
    return amp * np.sin(phase).sum(axis=1)


def _jitter_velocity(subject: Subject, t_ms: float) -> np.ndarray:
    if subject.jitter_sigma_mm == 0.0:
        return np.zeros(3)
    freqs, phases, amp = _jitter_bank(
        subject.motion_seed, subject.jitter_sigma_mm, subject.jitter_bandwidth_hz
    )
    phase = 2.0 * math.pi * freqs * (t_ms / 1000.0) + phases
    # derivative in mm per second
    return amp * (2.0 * math.pi * freqs * np.cos(phase)).sum(axis=1)


def eye_position(subject: Subject, t_ms: float) -> np.ndarray:
    """Eye centre at time t: base trajectory plus head jitter.

    Piecewise constant-velocity segments integrate exactly; the jitter term
    is a seeded sum of sinusoids below the configured bandwidth, so the
    motion is continuous and reproducible sample for sample.
    """
    pos = np.asarray(subject.position_mm, dtype=float).copy()
    for seg in subject.trajectory:
        if t_ms <= seg.t_start_ms:
            continue
        dt_s = (min(t_ms, seg.t_end_ms) - seg.t_start_ms) / 1000.0
        pos += np.asarray(seg.velocity_mmps) * dt_s
    return pos + _jitter(subject, t_ms)


def eye_velocity(subject: Subject, t_ms: float) -> np.ndarray:
    """Instantaneous eye velocity in mm/s (trajectory plus jitter derivative)."""
    vel = np.zeros(3)
    for seg in subject.trajectory:
        if seg.t_start_ms < t_ms <= seg.t_end_ms:
            vel += np.asarray(seg.velocity_mmps)
    return vel + _jitter_velocity(subject, t_ms)


def line_of_sight_mm(eye_pos, rig: RigGeometry) -> float:
    """Folded optical path: eye to mirror centre plus mirror to lens."""
    return float(np.linalg.norm(eye_pos)) + rig.lens_height_mm


def mirror_normal(pan_deg: float, tilt_deg: float) -> np.ndarray:
    p = math.radians(pan_deg)
    t = math.radians(tilt_deg)
    return np.array([math.cos(t) * math.sin(p), math.cos(t) * math.cos(p), math.sin(t)])


def reflect(v: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return v - 2.0 * np.dot(v, normal) * normal


def aim_angles(eye_pos) -> tuple[float, float]:
    """Mirror pan/tilt that folds the downward camera axis onto the eye.

    The normal must bisect the eye direction and the vertical, so tilt is
    45 degrees plus half the eye's elevation.  Raises for a degenerate
    target straight underneath the mirror.
    """
    e = np.asarray(eye_pos, dtype=float)
    r = np.linalg.norm(e)
    if r == 0.0:
        raise ValueError("eye position coincides with the mirror centre")
    e_hat = e / r
    bis = e_hat + np.array([0.0, 0.0, 1.0])
    norm = np.linalg.norm(bis)
    if norm < 1e-12:
        raise ValueError("target directly underneath the mirror is unreachable")
    n = bis / norm
    pan = math.degrees(math.atan2(n[0], n[1]))
    tilt = math.degrees(math.asin(np.clip(n[2], -1.0, 1.0)))
    return pan, tilt


def reflected_view_dir(pan_deg: float, tilt_deg: float) -> np.ndarray:
    """Direction the camera looks after the fold, for a given mirror pose."""
    n = mirror_normal(pan_deg, tilt_deg)
    return reflect(np.array([0.0, 0.0, -1.0]), n)


def aim_error_rad(pan_deg: float, tilt_deg: float, eye_pos) -> float:
    """Angle between the folded view axis and the eye direction."""
    e = np.asarray(eye_pos, dtype=float)
    e_hat = e / np.linalg.norm(e)
    v = reflected_view_dir(pan_deg, tilt_deg)
    return float(math.acos(np.clip(np.dot(v, e_hat), -1.0, 1.0)))
