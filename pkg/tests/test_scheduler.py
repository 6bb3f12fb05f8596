import math

import numpy as np
import pytest

from irissim.devices import LensParams
from irissim.iriscode import encode_frame
from irissim.optics import (
    reference_train,
    train_for_base_focus,
    tunable_power_for_focus,
)
from irissim.quality import QualityThresholds
from irissim.renderer import render_eye
from irissim.scene import RigGeometry, Subject, TrajectorySegment, aim_angles
from irissim.scheduler import (
    CaptureTarget,
    ConstantVelocityTracker,
    EventLog,
    build_rig,
    capture_sequence,
    focal_sweep_schedule,
    plan_order,
    setpoints_for,
    throughput_metrics,
    track_and_capture,
)

TRAIN = reference_train()
PERIOD = 1000.0 / 30.5


def still_subject(sid, iseed, distance, azimuth_deg=0.0):
    az = math.radians(azimuth_deg)
    pos = (distance * math.sin(az), distance * math.cos(az), 0.0)
    return Subject(sid, iseed, pos, jitter_sigma_mm=0.0)


def enroll_code(train, identity_seed):
    d = train.d_ref_mm
    eye = (0.0, d - 200.0, 0.0)
    pan, tilt = aim_angles(eye)
    p = tunable_power_for_focus(train, d)
    f = render_eye(train, power_dpt=p, pan_deg=pan, tilt_deg=tilt, eye_pos_mm=eye,
                   identity_seed=identity_seed, noise_seed=0, k_ast=0.0)
    return encode_frame(f)


# --- planning ----------------------------------------------------------------


def test_given_order_is_preserved():
    rig = build_rig(TRAIN)
    targets = [CaptureTarget(s, still_subject(s, 1, 4800.0)) for s in ("b", "a", "c")]
    assert [t.target_id for t in plan_order(rig, targets)] == ["b", "a", "c"]


def test_nearest_transition_minimizes_slew():
    rig = build_rig(TRAIN)  # mirror starts at pan 0
    targets = [
        CaptureTarget("left", still_subject("left", 1, 4800.0, azimuth_deg=-45.0)),
        CaptureTarget("mid", still_subject("mid", 2, 4800.0, azimuth_deg=5.0)),
        CaptureTarget("right", still_subject("right", 3, 4800.0, azimuth_deg=30.0)),
    ]
    ordered = plan_order(rig, targets, order="nearest_transition")
    assert [t.target_id for t in ordered] == ["mid", "right", "left"]


def test_unknown_order_rejected():
    rig = build_rig(TRAIN)
    with pytest.raises(ValueError):
        plan_order(rig, [], order="fastest")


def test_setpoints_clamp_outside_reach():
    rig = build_rig(TRAIN)
    far = still_subject("far", 1, 12000.0)
    near = still_subject("near", 2, 2000.0)
    *_, p_far, _ = setpoints_for(rig, far, 0.0)
    *_, p_near, _ = setpoints_for(rig, near, 0.0)
    assert p_far == rig.lens.params.power_range[0]
    assert p_near == rig.lens.params.power_range[1]


# --- one-shot sequences ------------------------------------------------------


def test_two_target_sequence_matches_both():
    rig = build_rig(TRAIN, seed=0)
    subjects = [still_subject("s1", 5001, 4380.0), still_subject("s2", 5002, 6340.0)]
    gallery = {"s1": enroll_code(TRAIN, 5001), "s2": enroll_code(TRAIN, 5002)}
    log = capture_sequence(rig, [CaptureTarget(s.subject_id, s) for s in subjects],
                           gallery=gallery, noise_seed=42)
    q = log.qualified()
    assert len(q) == 2
    assert all(e.matched for e in q)
    assert all(e.hd < 0.32 for e in q)


def test_events_are_time_ordered_on_frame_grid():
    rig = build_rig(TRAIN, seed=0)
    subjects = [still_subject("s1", 5001, 4380.0), still_subject("s2", 5002, 6340.0)]
    log = capture_sequence(rig, [CaptureTarget(s.subject_id, s) for s in subjects])
    times = [e.t_ms for e in log.events]
    assert times == sorted(times)
    for t in times:
        assert t / PERIOD == pytest.approx(round(t / PERIOD), abs=1e-9)


def test_one_command_per_target():
    rig = build_rig(TRAIN, seed=0)
    subjects = [still_subject("s1", 5001, 4380.0), still_subject("s2", 5002, 6340.0)]
    log = capture_sequence(rig, [CaptureTarget(s.subject_id, s) for s in subjects])
    commands = [e for e in log.events if e.event_type == "command"]
    assert len(commands) == 2
    assert [e.target_id for e in commands] == ["s1", "s2"]


def test_first_frame_waits_for_settling():
    rig = build_rig(TRAIN, seed=0)
    # off-boresight and off-reference-focus, so both devices must move
    log = capture_sequence(rig, [CaptureTarget("s", still_subject("s", 1, 4380.0,
                                                                  azimuth_deg=10.0))])
    cmd = next(e for e in log.events if e.event_type == "command")
    frame = next(e for e in log.events if e.event_type == "frame")
    assert frame.t_ms - cmd.t_ms >= rig.lens.params.settle_ms
    assert frame.quality_pass


def test_already_settled_target_captures_immediately():
    # boresight subject at the reference focus: nothing has to move
    rig = build_rig(TRAIN, seed=0)
    log = capture_sequence(rig, [CaptureTarget("s", still_subject("s", 1, 4800.0))])
    frame = next(e for e in log.events if e.event_type == "frame")
    assert frame.t_ms == 0.0
    assert frame.quality_pass


def test_dwell_budget_limits_attempts():
    hopeless = QualityThresholds(min_px_across_iris=10000.0)
    rig = build_rig(TRAIN, seed=0, thresholds=hopeless)
    log = capture_sequence(rig, [CaptureTarget("s", still_subject("s", 1, 4800.0))],
                           dwell_budget=5)
    frames = log.frames()
    assert len(frames) == 5
    assert not any(e.quality_pass for e in frames)


def test_impostor_gallery_does_not_match():
    rig = build_rig(TRAIN, seed=0)
    gallery = {"s": enroll_code(TRAIN, 9999)}
    log = capture_sequence(rig, [CaptureTarget("s", still_subject("s", 5001, 4800.0))],
                           gallery=gallery, noise_seed=7)
    q = log.qualified()
    assert len(q) == 1
    assert q[0].hd > 0.32
    assert q[0].matched is False


# --- event log ---------------------------------------------------------------


def test_csv_export_is_deterministic(tmp_path):
    rig = build_rig(TRAIN, seed=0)
    targets = [CaptureTarget("s", still_subject("s", 5001, 4800.0))]
    log = capture_sequence(rig, targets, gallery={"s": enroll_code(TRAIN, 5001)})
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    log.to_csv(p1)
    log.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().strip().splitlines()
    assert lines[0] == ("t_ms,event_type,target_id,pan_deg,tilt_deg,power_dpt,"
                        "blur_px,px_across_iris,quality_pass,hd,matched")
    assert len(lines) == 1 + len(log.events)
    # command rows leave capture-only cells empty
    cmd_row = lines[1].split(",")
    assert cmd_row[1] == "command"
    assert cmd_row[6] == ""


def test_throughput_metrics_counts():
    rig = build_rig(TRAIN, seed=0)
    subjects = [still_subject("s1", 5001, 4380.0), still_subject("s2", 5002, 6340.0)]
    gallery = {"s1": enroll_code(TRAIN, 5001), "s2": enroll_code(TRAIN, 5002)}
    log = capture_sequence(rig, [CaptureTarget(s.subject_id, s) for s in subjects],
                           gallery=gallery)
    m = throughput_metrics(log, 2)
    assert m.n_targets == 2
    assert m.n_qualified == 2
    assert m.n_matched == 2
    assert m.total_ms > 0
    assert m.ms_per_identification == pytest.approx(m.total_ms / 2)


# --- focal sweep -------------------------------------------------------------


def test_focal_sweep_duration_raw_vs_filtered():
    params = LensParams()
    powers = [-1.0, 0.0, 1.0]
    sched_raw, dur_raw = focal_sweep_schedule(params, powers, mode="raw")
    sched_f, dur_f = focal_sweep_schedule(params, powers, mode="filtered")
    assert dur_raw == pytest.approx(75.0)
    assert dur_f == pytest.approx(37.5)
    assert [t for t, _ in sched_raw] == [0.0, 25.0, 50.0]
    assert [p for _, p in sched_raw] == powers
    assert dur_f == pytest.approx(dur_raw / 2)


# --- tracking ----------------------------------------------------------------


def test_tracker_predicts_linear_motion_exactly():
    tr = ConstantVelocityTracker()
    tr.observe(0.0, (0.0, 1000.0, 0.0))
    tr.observe(10.0, (0.0, 990.0, 0.0))
    pred = tr.predict(30.0)
    assert np.allclose(pred, [0.0, 970.0, 0.0])


def test_tracker_degenerate_cases():
    tr = ConstantVelocityTracker()
    with pytest.raises(ValueError):
        tr.predict(0.0)
    tr.observe(0.0, (1.0, 2.0, 3.0))
    assert np.allclose(tr.predict(50.0), [1.0, 2.0, 3.0])


def test_walking_subject_qualifies_frames():
    train = train_for_base_focus(210.0, 3200.0)
    geo = RigGeometry(mirror_height_mm=1580.0)
    walk = Subject("w", 6001, (0.0, 3800.0, 0.0),
                   trajectory=(TrajectorySegment(0.0, math.inf, (0.0, -1000.0, 0.0)),),
                   jitter_sigma_mm=0.0)
    rig = build_rig(train, seed=3, geometry=geo)
    gallery = {"w": enroll_code(train, 6001)}
    log = track_and_capture(rig, walk, n_frames=6, start_frame=16,
                            gallery=gallery, noise_seed=11)
    q = log.qualified()
    assert len(log.frames()) == 6
    assert len(q) == 6
    assert all(e.matched for e in q)


def test_sweep_offsets_detune_the_focus():
    train = train_for_base_focus(210.0, 3200.0)
    geo = RigGeometry(mirror_height_mm=1580.0)
    walk = Subject("w", 6001, (0.0, 3800.0, 0.0),
                   trajectory=(TrajectorySegment(0.0, math.inf, (0.0, -1000.0, 0.0)),),
                   jitter_sigma_mm=0.0)
    rig = build_rig(train, seed=3, geometry=geo)
    log = track_and_capture(rig, walk, n_frames=4, start_frame=16,
                            sweep_offsets=[0.0, 2.0], noise_seed=11)
    blurs = [e.blur_px for e in log.frames()]
    assert blurs[1] > 10 * max(blurs[0], 0.1)
    assert blurs[3] > 10 * max(blurs[2], 0.1)
