"""Frame quality gates.

A frame is usable when the iris subtends enough pixels, the iris band is
sharp, and the exposure is sane.  Sharpness is the variance ratio of a
band-passed copy of the iris annulus to the raw annulus; the band-pass
sigmas scale with the imaged iris diameter so the score compares texture
contrast, not magnification.  Evaluation never raises: a hopeless frame
comes back as a report with reasons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .renderer import Frame, TRANSMISSION

REF_IRIS_PX = 239.0  # iris diameter at which the band sigmas are quoted
_BAND_SIGMA_FINE = 1.0
_BAND_SIGMA_COARSE = 3.5

# calibrated: the score of the calibration eye defocused by exactly one
# blur-circle limit; frames below this are outside usable depth of field
DEFAULT_SHARPNESS_MIN = 0.0301655

MIN_PX_ACROSS_IRIS = 200.0

# exposure window around the nominal iris grey level
_NOMINAL_REFLECTANCE = 0.45
BRIGHTNESS_LO = 0.4 * TRANSMISSION * _NOMINAL_REFLECTANCE * 255.0
BRIGHTNESS_HI = 1.15 * _NOMINAL_REFLECTANCE * 255.0


@dataclass(frozen=True)
class QualityThresholds:
    min_px_across_iris: float = MIN_PX_ACROSS_IRIS
    sharpness_min: float = DEFAULT_SHARPNESS_MIN
    brightness_lo: float = BRIGHTNESS_LO
    brightness_hi: float = BRIGHTNESS_HI


@dataclass(frozen=True)
class QualityReport:
    passed: bool
    sharpness: float
    brightness: float
    px_across_iris: float
    fail_reasons: tuple[str, ...]


def _annulus_mask(shape, cx, cy, r_p, r_i):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    rr = np.hypot(yy - cy, xx - cx)
    # keep clear of the pupil edge and the lid band
    return (rr > r_p * 1.15) & (rr < r_i * 0.95) & (yy > cy - 0.55 * r_i)


def sharpness_score(image: np.ndarray, cx: float, cy: float,
                    r_p: float, r_i: float) -> float:
    scale = (2.0 * r_i) / REF_IRIS_PX
    im = image.astype(float)
    band = (gaussian_filter(im, _BAND_SIGMA_FINE * scale, mode="nearest")
            - gaussian_filter(im, _BAND_SIGMA_COARSE * scale, mode="nearest"))
    ann = _annulus_mask(image.shape, cx, cy, r_p, r_i)
    if not ann.any():
        return 0.0
    return float(np.var(band[ann]) / (np.var(im[ann]) + 1e-12))


def brightness_score(image: np.ndarray, cx: float, cy: float,
                     r_p: float, r_i: float) -> float:
    ann = _annulus_mask(image.shape, cx, cy, r_p, r_i)
    if not ann.any():
        return 0.0
    return float(image[ann].mean())


def evaluate(frame: Frame,
             thresholds: QualityThresholds = QualityThresholds()) -> QualityReport:
    sharp = sharpness_score(frame.image, frame.cx, frame.cy,
                            frame.r_pupil_px, frame.r_iris_px)
    bright = brightness_score(frame.image, frame.cx, frame.cy,
                              frame.r_pupil_px, frame.r_iris_px)
    reasons = []
    if frame.px_across_iris < thresholds.min_px_across_iris:
        reasons.append("resolution")
    if sharp < thresholds.sharpness_min:
        reasons.append("sharpness")
    if not (thresholds.brightness_lo <= bright <= thresholds.brightness_hi):
        reasons.append("brightness")
    return QualityReport(
        passed=not reasons, sharpness=sharp, brightness=bright,
        px_across_iris=frame.px_across_iris, fail_reasons=tuple(reasons),
    )
