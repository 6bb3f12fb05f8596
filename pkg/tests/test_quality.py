import numpy as np
import pytest

from irissim.optics import reference_train, tunable_power_for_focus
from irissim.quality import (
    QualityThresholds,
    brightness_score,
    evaluate,
    sharpness_score,
)
from irissim.renderer import Frame, render_eye
from irissim.scene import aim_angles

TRAIN = reference_train()


def frame_at(d_los, power=None, seed=9000, nseed=9, k_ast=0.0):
    eye = (0.0, d_los - 200.0, 0.0)
    pan, tilt = aim_angles(eye)
    if power is None:
        power = tunable_power_for_focus(TRAIN, d_los)
    return render_eye(TRAIN, power_dpt=power, pan_deg=pan, tilt_deg=tilt,
                      eye_pos_mm=eye, identity_seed=seed, noise_seed=nseed,
                      k_ast=k_ast)


def test_in_focus_frame_passes():
    r = evaluate(frame_at(5000.0))
    assert r.passed
    assert r.fail_reasons == ()


def test_resolution_gate_beyond_range():
    # just past the 200 px anchor distance
    r = evaluate(frame_at(7710.0))
    assert not r.passed
    assert "resolution" in r.fail_reasons
    assert r.px_across_iris < 200.0


def test_resolution_gate_holds_at_anchor():
    r = evaluate(frame_at(7700.0))
    assert "resolution" not in r.fail_reasons


def test_sharpness_gate_on_heavy_defocus():
    r = evaluate(frame_at(5000.0, power=0.5))
    assert not r.passed
    assert "sharpness" in r.fail_reasons


def test_brightness_gate_on_dim_frame():
    f = frame_at(5000.0)
    f.image = (f.image.astype(float) * 0.25).astype(np.uint8)
    r = evaluate(f)
    assert "brightness" in r.fail_reasons


def test_brightness_gate_on_blown_frame():
    f = frame_at(5000.0)
    f.image = np.clip(f.image.astype(float) * 2.0, 0, 255).astype(np.uint8)
    r = evaluate(f)
    assert "brightness" in r.fail_reasons


def test_evaluate_never_raises_on_garbage():
    f = frame_at(5000.0)
    f.image = np.zeros_like(f.image)
    r = evaluate(f)
    assert not r.passed
    assert r.fail_reasons


def test_sharpness_is_scale_invariant_in_focus():
    scores = [sharpness_score(f.image, f.cx, f.cy, f.r_pupil_px, f.r_iris_px)
              for f in (frame_at(3800.0), frame_at(5000.0), frame_at(7700.0))]
    ref = scores[1]
    for s in scores:
        assert s == pytest.approx(ref, rel=0.08)


def test_brightness_score_in_window():
    f = frame_at(5000.0)
    b = brightness_score(f.image, f.cx, f.cy, f.r_pupil_px, f.r_iris_px)
    t = QualityThresholds()
    assert t.brightness_lo < b < t.brightness_hi


def test_custom_thresholds_respected():
    f = frame_at(5000.0)
    strict = QualityThresholds(min_px_across_iris=1000.0)
    assert "resolution" in evaluate(f, strict).fail_reasons
