"""Frame-clocked capture scheduling.

Everything here runs on the sensor's frame grid: device commands go out at
frame starts, exposures begin at frame starts, and a frame is qualified
only when both devices finished settling before its exposure opened and
the image clears the quality gates.  One mirror + lens command is issued
per target; if the frame fails, later frames are tried against the same
setpoint until the dwell budget runs out.

The tracking loop works on detections one frame old, the way an actual
vision pipeline would: the command for frame k+1 is computed at frame k
from positions observed up to frame k-1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import optics
from .devices import (
    LensParams,
    MirrorParams,
    SensorParams,
    SteeringMirror,
    TunableLens,
    next_frame_start,
)
from .iriscode import IrisCode, MATCH_THRESHOLD, encode_frame, hamming_distance
from .optics import FocusRangeError, OpticalTrain
from .quality import QualityThresholds, evaluate
from .renderer import DEFAULT_K_AST, TargetMissed, render_eye
from .scene import RigGeometry, Subject, aim_angles, eye_position, eye_velocity, line_of_sight_mm

CSV_COLUMNS = ("t_ms", "event_type", "target_id", "pan_deg", "tilt_deg",
               "power_dpt", "blur_px", "px_across_iris", "quality_pass",
               "hd", "matched")

DEFAULT_DWELL_BUDGET = 5


@dataclass(frozen=True)
class CaptureTarget:
    target_id: str
    subject: Subject


@dataclass(frozen=True)
class Event:
    t_ms: float
    event_type: str  # "command" or "frame"
    target_id: str
    pan_deg: float | None = None
    tilt_deg: float | None = None
    power_dpt: float | None = None
    blur_px: float | None = None
    px_across_iris: float | None = None
    quality_pass: bool | None = None
    hd: float | None = None
    matched: bool | None = None


class EventLog:
    def __init__(self, keep_frames: bool = False):
        self.events: list[Event] = []
        self.keep_frames = keep_frames
        # (target_id, t_frame_ms, Frame) for every qualified exposure
        self.kept: list[tuple[str, float, object]] = []

    def add(self, event: Event) -> None:
        self.events.append(event)

    def frames(self) -> list[Event]:
        return [e for e in self.events if e.event_type == "frame"]

    def qualified(self) -> list[Event]:
        return [e for e in self.frames() if e.quality_pass]

    @staticmethod
    def _cell(value) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, float):
            return f"{value:.6g}"
        return str(value)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for e in self.events:
                writer.writerow([self._cell(getattr(e, c)) for c in CSV_COLUMNS])


@dataclass
class CaptureRig:
    """One camera head: optics, devices and gates, wired together."""
    train: OpticalTrain
    geometry: RigGeometry
    lens: TunableLens
    mirror: SteeringMirror
    sensor: SensorParams
    thresholds: QualityThresholds
    k_ast: float = DEFAULT_K_AST
    lens_mode: str = "raw"


def build_rig(train: OpticalTrain | None = None, *, seed: int = 0,
              geometry: RigGeometry | None = None,
              sensor: SensorParams | None = None,
              thresholds: QualityThresholds | None = None,
              lens_params: LensParams | None = None,
              mirror_params: MirrorParams | None = None,
              k_ast: float = DEFAULT_K_AST, lens_mode: str = "raw") -> CaptureRig:
    return CaptureRig(
        train=train or optics.reference_train(),
        geometry=geometry or RigGeometry(),
        lens=TunableLens(lens_params or LensParams(), seed=seed),
        mirror=SteeringMirror(mirror_params or MirrorParams()),
        sensor=sensor or SensorParams(),
        thresholds=thresholds or QualityThresholds(),
        k_ast=k_ast,
        lens_mode=lens_mode,
    )


def setpoints_for(rig: CaptureRig, subject: Subject, t_ms: float,
                  eye_override=None) -> tuple[float, float, float, float]:
    """Mirror angles, lens power and path length for a subject at time t.

    Out-of-reach distances clamp to the nearest achievable focus; the frame
    then simply fails its quality gates, which is the honest outcome for a
    subject outside the focus range.
    """
    eye = eye_override if eye_override is not None else eye_position(subject, t_ms)
    pan, tilt = aim_angles(eye)
    d = line_of_sight_mm(eye, rig.geometry)
    try:
        power = optics.tunable_power_for_focus(rig.train, d)
    except FocusRangeError:
        lo, hi = rig.lens.params.power_range
        p_lo_d = optics.focus_distance_for_power(rig.train, hi)
        power = hi if d <= p_lo_d else lo
    return pan, tilt, power, d


def plan_order(rig: CaptureRig, targets: list[CaptureTarget], t_ms: float = 0.0,
               order: str = "given_order") -> list[CaptureTarget]:
    """Visit order for a set of targets.

    ``nearest_transition`` greedily picks whichever remaining target the
    devices can reach soonest from the pose they would then be in; ties
    break on target id so the plan is stable.
    """
    if order == "given_order":
        return list(targets)
    if order != "nearest_transition":
        raise ValueError(f"unknown ordering {order!r}")

    pose = rig.mirror.pose_at(t_ms)
    power = rig.lens.power_at(t_ms)
    remaining = list(targets)
    out: list[CaptureTarget] = []
    while remaining:
        costed = []
        for tgt in remaining:
            pan, tilt, p, _ = setpoints_for(rig, tgt.subject, t_ms)
            slew = rig.mirror.slew_time_ms(pan, tilt, from_pose=pose)
            refocus = (0.0 if rig.lens.quantize(p) == rig.lens.quantize(power)
                       else rig.lens.params.settle_time(rig.lens_mode))
            costed.append((max(slew, refocus), tgt.target_id, tgt, (pan, tilt), p))
        costed.sort(key=lambda item: (item[0], item[1]))
        _, _, best, best_pose, best_power = costed[0]
        out.append(best)
        remaining.remove(best)
        pose, power = best_pose, best_power
    return out


def _frame_noise_seed(base: int, frame_index: int) -> int:
    return int(base) * 1_000_003 + frame_index


def _attempt_frame(rig: CaptureRig, subject: Subject, target_id: str,
                   t_frame: float, noise_seed: int, log: EventLog,
                   gallery: dict[str, IrisCode] | None,
                   circles: str) -> bool:
    """Render and gate one frame; returns True when it qualified."""
    t_mid = t_frame + rig.sensor.exposure_ms / 2.0
    settled = rig.lens.is_settled(t_frame) and rig.mirror.is_settled(t_frame)
    pan, tilt = rig.mirror.pose_at(t_mid)
    power = rig.lens.power_at(t_mid)
    eye = eye_position(subject, t_mid)
    vel = eye_velocity(subject, t_mid)
    try:
        frame = render_eye(
            rig.train, power_dpt=power, pan_deg=pan, tilt_deg=tilt,
            eye_pos_mm=eye, identity_seed=subject.identity_seed,
            noise_seed=noise_seed, eye_velocity_mmps=vel,
            exposure_ms=rig.sensor.exposure_ms, rig=rig.geometry,
            k_ast=rig.k_ast,
        )
    except TargetMissed:
        log.add(Event(t_frame, "frame", target_id, pan_deg=pan, tilt_deg=tilt,
                      power_dpt=power, quality_pass=False))
        return False
    report = evaluate(frame, rig.thresholds)
    ok = settled and report.passed
    hd = matched = None
    if ok and gallery is not None and target_id in gallery:
        code = encode_frame(frame, circles=circles)
        hd = hamming_distance(code, gallery[target_id])
        matched = hd < MATCH_THRESHOLD
    if ok and log.keep_frames:
        log.kept.append((target_id, t_frame, frame))
    log.add(Event(t_frame, "frame", target_id, pan_deg=pan, tilt_deg=tilt,
                  power_dpt=power, blur_px=frame.blur_px,
                  px_across_iris=frame.px_across_iris, quality_pass=ok,
                  hd=hd, matched=matched))
    return ok


def capture_sequence(rig: CaptureRig, targets: list[CaptureTarget], *,
                     t_start_ms: float = 0.0, order: str = "given_order",
                     dwell_budget: int = DEFAULT_DWELL_BUDGET,
                     gallery: dict[str, IrisCode] | None = None,
                     circles: str = "detect", noise_seed: int = 0,
                     keep_frames: bool = False) -> EventLog:
    """Visit each target once: aim, refocus, expose until qualified or budget out."""
    log = EventLog(keep_frames)
    frame_index = 0
    t_now = t_start_ms
    for tgt in plan_order(rig, targets, t_start_ms, order):
        t_cmd = next_frame_start(rig.sensor, t_now)
        pan, tilt, power, _ = setpoints_for(rig, tgt.subject, t_cmd)
        rig.mirror.command(pan, tilt, t_cmd)
        rig.lens.command(power, t_cmd, mode=rig.lens_mode)
        log.add(Event(t_cmd, "command", tgt.target_id, pan_deg=pan,
                      tilt_deg=tilt, power_dpt=power))
        ready = max(rig.mirror.settled_at, rig.lens.settled_at, t_cmd)
        t_frame = next_frame_start(rig.sensor, ready)
        for _ in range(dwell_budget):
            ok = _attempt_frame(rig, tgt.subject, tgt.target_id, t_frame,
                                _frame_noise_seed(noise_seed, frame_index),
                                log, gallery, circles)
            frame_index += 1
            t_frame += rig.sensor.frame_period_ms
            if ok:
                break
        t_now = t_frame
    return log


def focal_sweep_schedule(params: LensParams, powers, mode: str = "raw"):
    """Step times for sweeping the lens through a power ladder.

    Each step must wait out one settling time before its exposure, so the
    sweep takes len(powers) * settle_time; a filtered drive halves it.
    """
    dwell = params.settle_time(mode)
    times = [k * dwell for k in range(len(powers))]
    return list(zip(times, list(powers))), len(powers) * dwell


class ConstantVelocityTracker:
    """Predicts eye positions from detections one frame behind real time."""

    def __init__(self):
        self._obs: list[tuple[float, np.ndarray]] = []

    def observe(self, t_ms: float, position) -> None:
        self._obs.append((t_ms, np.asarray(position, dtype=float)))
        del self._obs[:-2]

    def predict(self, t_ms: float) -> np.ndarray:
        if not self._obs:
            raise ValueError("no detections yet")
        if len(self._obs) == 1:
            return self._obs[0][1].copy()
        (t0, p0), (t1, p1) = self._obs
        v = (p1 - p0) / (t1 - t0)
        return p1 + v * (t_ms - t1)


def track_and_capture(rig: CaptureRig, subject: Subject, *,
                      n_frames: int, start_frame: int = 16,
                      sweep_offsets=None, gallery: dict[str, IrisCode] | None = None,
                      circles: str = "detect", noise_seed: int = 0,
                      keep_frames: bool = False) -> EventLog:
    """Follow a moving subject and expose every frame for a fixed window.

    Detections lag one frame; commands go out at the frame start before
    each exposure, predicted two frames ahead of the newest detection.
    ``sweep_offsets`` adds a per-frame power offset on top of the predicted
    focus, cycling through the list.
    """
    log = EventLog(keep_frames)
    period = rig.sensor.frame_period_ms
    tracker = ConstantVelocityTracker()
    offsets = list(sweep_offsets) if sweep_offsets else [0.0]

    for k in range(start_frame - 2, start_frame):
        t = k * period
        tracker.observe(t, eye_position(subject, t))

    for i in range(n_frames):
        t_frame = (start_frame + i) * period
        t_cmd = t_frame - period
        eye_pred = tracker.predict(t_frame + rig.sensor.exposure_ms / 2.0)
        pan, tilt, power, _ = setpoints_for(rig, subject, t_cmd, eye_override=eye_pred)
        power = rig.lens.quantize(power + offsets[i % len(offsets)])
        rig.mirror.command(pan, tilt, t_cmd)
        rig.lens.command(power, t_cmd, mode=rig.lens_mode)
        log.add(Event(t_cmd, "command", subject.subject_id, pan_deg=pan,
                      tilt_deg=tilt, power_dpt=power))
        _attempt_frame(rig, subject, subject.subject_id, t_frame,
                       _frame_noise_seed(noise_seed, i), log, gallery, circles)
        # the detection from this frame becomes available one frame later
        tracker.observe(t_frame, eye_position(subject, t_frame))
    return log


@dataclass(frozen=True)
class ThroughputMetrics:
    n_targets: int
    n_frames: int
    n_qualified: int
    n_matched: int
    total_ms: float
    ms_per_identification: float


def throughput_metrics(log: EventLog, n_targets: int) -> ThroughputMetrics:
    frames = log.frames()
    qualified = log.qualified()
    matched = [e for e in qualified if e.matched]
    if log.events:
        total = max(e.t_ms for e in log.events) - min(e.t_ms for e in log.events)
    else:
        total = 0.0
    per_id = total / len(matched) if matched else math.inf
    return ThroughputMetrics(
        n_targets=n_targets, n_frames=len(frames), n_qualified=len(qualified),
        n_matched=len(matched), total_ms=total, ms_per_identification=per_id,
    )
