"""Paraxial model of the capture rig's optical train.

A telephoto zoom lens (the stop) forms an intermediate image which a
focus-tunable liquid lens relays onto a fixed sensor plane.  All distances
are millimetres, powers are diopters (1000 / f_mm), angles are degrees.

Sign conventions: object distances are positive in front of a lens, image
distances positive behind it.  ``math.inf`` marks "focused beyond any
finite distance"; it is a value, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Sensor geometry is fixed by the 70 mm / 18 deg field-of-view anchor:
# half-width = 70 * tan(9 deg).  4080 x 3072 active pixels.
SENSOR_WIDTH_MM = 2.0 * 70.0 * math.tan(math.radians(9.0))
SENSOR_PX_H = 4080
SENSOR_PX_V = 3072

IRIS_DIAMETER_MM = 10.0

DEFAULT_F_NUMBER = 4.8
DEFAULT_COC_MM = 0.0499  # solved from the 91 mm depth-of-field anchor at 5 m / 350 mm

# Fraction of the zoom lens' image distance at which the tunable lens sits.
# 0.895 keeps the full -10..+10 dpt range useful (focus reach roughly
# 2.7 m .. 8.4 m at the 5 m / 350 mm operating point) while holding the
# +-0.1 dpt repeatability error below one blur-circle of defocus.
SEPARATION_FRACTION = 0.895

# Pixels-across-iris calibration: chosen so an iris imaged at 7.7 m with the
# reference train spans exactly 200 px.  Frozen by calibration.solve_pixel_scale,
# rounded up in the last digit so the anchor point itself clears the >= 200 gate.
DEFAULT_PIXEL_SCALE_CAL = 1.7235954


class AfocalSystemError(ValueError):
    """Combined lens system has zero net power."""


class FocusRangeError(ValueError):
    """Requested focus distance is outside the tunable lens' reach.

    ``nearest_mm`` carries the closest achievable focus distance.
    """

    def __init__(self, d_target: float, nearest_mm: float):
        super().__init__(
            f"cannot focus at {d_target:.1f} mm; nearest achievable is {nearest_mm:.1f} mm"
        )
        self.d_target = d_target
        self.nearest_mm = nearest_mm


def thin_lens_image_distance(f: float, d: float) -> float:
    """Image distance for an object at d in front of a thin lens of focal length f.

    d == inf is allowed and returns f.  Objects at or inside the focal
    length have no real image and raise ValueError.
    """
    if f <= 0.0:
        raise ValueError(f"focal length must be positive, got {f}")
    if math.isinf(d):
        return f
    if d <= f:
        raise ValueError(f"object at {d} mm is inside the focal length {f} mm; no real image")
    return 1.0 / (1.0 / f - 1.0 / d)


def blur_circle_diameter(f: float, n_stop: float, d_focus: float, d_subject: float) -> float:
    """Geometric blur-circle diameter on the sensor for a single lens.

    The lens is focused at d_focus; the subject sits at d_subject.  With
    aperture diameter A = f / n_stop the similar-triangle result is

        b = f^2 * |d_focus - d_subject| / (n_stop * d_subject * (d_focus - f))

    which is zero exactly at d_subject == d_focus and strictly increasing
    in |1/d_subject - 1/d_focus|.
    """
    if d_focus <= f:
        raise ValueError(f"focus distance {d_focus} mm must exceed focal length {f} mm")
    if d_subject <= 0.0:
        raise ValueError(f"subject distance must be positive, got {d_subject}")
    if math.isinf(d_subject):
        return f * f / (n_stop * (d_focus - f))
    return f * f * abs(d_focus - d_subject) / (n_stop * d_subject * (d_focus - f))


def hyperfocal_distance(f: float, n_stop: float, coc: float) -> float:
    """Focus distance beyond which the far limit runs to infinity."""
    if coc <= 0.0:
        return math.inf
    return f * f / (n_stop * coc) + f


@dataclass(frozen=True)
class DofResult:
    near_mm: float
    far_mm: float
    total_mm: float  # inf when focused at or beyond the hyperfocal distance


def depth_of_field(f: float, n_stop: float, d: float, coc: float) -> DofResult:
    """Depth of field of a bare lens focused at d, for blur tolerance coc.

    Total depth uses the pupil-diameter form (P = f / n_stop):

        total = 2*C*d / ( f*P/(d-f) - C^2*(d-f)/(f*P) )

    Near and far limits are the exact conjugate distances where
    blur_circle_diameter equals coc; their difference reproduces the
    formula above identically.  Focusing at or past the hyperfocal
    distance makes far and total inf rather than a negative depth.
    """
    if d <= f:
        raise ValueError(f"focus distance {d} mm must exceed focal length {f} mm")
    if coc < 0.0:
        raise ValueError(f"circle of confusion must be non-negative, got {coc}")
    if coc == 0.0:
        return DofResult(d, d, 0.0)

    h = f * f / (n_stop * coc)  # hyperfocal distance minus f
    near = h * d / (h + (d - f))
    if d - f >= h:
        return DofResult(near, math.inf, math.inf)
    far = h * d / (h - (d - f))

    p = f / n_stop
    total = 2.0 * coc * d / (f * p / (d - f) - coc * coc * (d - f) / (f * p))
    return DofResult(near, far, total)


def combined_focal_length(f_a: float, f_b: float, separation: float) -> float:
    """Focal length of two thin lenses separated by ``separation``.

        1/f = 1/f_a + 1/f_b - separation / (f_a * f_b)

    Either focal length may be inf (a flat element).  A zero right-hand
    side means the pair is afocal, which has no focal length to return.
    """
    inv_a = 0.0 if math.isinf(f_a) else 1.0 / f_a
    inv_b = 0.0 if math.isinf(f_b) else 1.0 / f_b
    cross = 0.0 if (math.isinf(f_a) or math.isinf(f_b)) else separation / (f_a * f_b)
    rhs = inv_a + inv_b - cross
    if rhs == 0.0:
        raise AfocalSystemError(f"lens pair ({f_a}, {f_b}, sep {separation}) is afocal")
    return 1.0 / rhs


def diopter_to_focal_mm(power: float) -> float:
    """0 dpt is a flat lens: focal length inf, not an error."""
    if power == 0.0:
        return math.inf
    return 1000.0 / power


def focal_mm_to_diopter(f: float) -> float:
    if f == 0.0:
        raise ValueError("zero focal length has no finite power")
    if math.isinf(f):
        return 0.0
    return 1000.0 / f


@dataclass(frozen=True)
class OpticalTrain:
    """Zoom lens + tunable lens + sensor, with the calibration constants.

    The sensor plane sits where an object at ``d_ref_mm`` focuses with the
    tunable lens at zero power, so ``sensor_back_mm`` is derived, not set.
    ``d_ot_mm`` must stay below the zoom focal length; that guarantees the
    intermediate image always forms behind the tunable lens.
    """

    f_zoom_mm: float = 350.0
    n_stop: float = DEFAULT_F_NUMBER
    d_ot_mm: float = SEPARATION_FRACTION * 1750000.0 / 4650.0  # 0.895 * v1(350, 5000)
    d_ref_mm: float = 5000.0
    sensor_width_mm: float = SENSOR_WIDTH_MM
    sensor_px: int = SENSOR_PX_H
    coc_mm: float = DEFAULT_COC_MM
    pixel_scale_cal: float = DEFAULT_PIXEL_SCALE_CAL
    iris_mm: float = IRIS_DIAMETER_MM

    def __post_init__(self):
        if self.f_zoom_mm <= 0.0 or self.n_stop <= 0.0:
            raise ValueError("focal length and f-number must be positive")
        if self.d_ref_mm <= self.f_zoom_mm:
            raise ValueError(
                f"reference focus {self.d_ref_mm} mm must exceed the zoom focal "
                f"length {self.f_zoom_mm} mm"
            )
        if not 0.0 < self.d_ot_mm < self.f_zoom_mm:
            raise ValueError(
                f"lens separation {self.d_ot_mm} mm must lie in (0, {self.f_zoom_mm})"
            )

    @property
    def image_distance_ref_mm(self) -> float:
        return thin_lens_image_distance(self.f_zoom_mm, self.d_ref_mm)

    @property
    def sensor_back_mm(self) -> float:
        """Distance from the tunable lens to the sensor."""
        return self.image_distance_ref_mm - self.d_ot_mm

    @property
    def pixel_pitch_mm(self) -> float:
        return self.sensor_width_mm / self.sensor_px

    @property
    def aperture_mm(self) -> float:
        return self.f_zoom_mm / self.n_stop


def reference_train(**overrides) -> OpticalTrain:
    """The 350 mm / f4.8 train focused at 5 m, the calibration operating point."""
    return OpticalTrain(**overrides)


def train_for_base_focus(f_zoom_mm: float, d_ref_mm: float, **overrides) -> OpticalTrain:
    """Build a train re-zoomed and re-shimmed for a different base focus.

    The tunable lens keeps its fractional position behind the zoom lens,
    mirroring how the physical spacer would be re-fitted when the zoom
    ring moves.
    """
    v1 = thin_lens_image_distance(f_zoom_mm, d_ref_mm)
    overrides.setdefault("d_ot_mm", SEPARATION_FRACTION * v1)
    return OpticalTrain(f_zoom_mm=f_zoom_mm, d_ref_mm=d_ref_mm, **overrides)


def zoom_focal_for_distance(d_mm: float) -> float:
    """Zoom setting that keeps iris magnification constant: f = 0.07 * d.

    Maps the working range 1..5 m onto the 70..350 mm zoom range.
    """
    return 0.07 * d_mm


def _intermediate_w(train: OpticalTrain, d_subject: float) -> float:
    """Distance from the tunable lens to the zoom lens' image of the subject."""
    return thin_lens_image_distance(train.f_zoom_mm, d_subject) - train.d_ot_mm


def blur_on_sensor_mm(train: OpticalTrain, power_dpt: float, d_subject: float) -> float:
    """Defocus blur diameter on the sensor through the full train.

    The zoom lens' cone is A = f/N wide at the stop and w/v1 of that at
    the tunable lens; the tunable lens adds curvature power/1000, so the
    spot on the sensor is A1 * |1 - s_e * (power/1000 + 1/w)|.  The form
    avoids the intermediate image distance blowing up at collimation.
    """
    v1 = thin_lens_image_distance(train.f_zoom_mm, d_subject)
    w = v1 - train.d_ot_mm
    a1 = train.aperture_mm * w / v1
    curvature = power_dpt / 1000.0 + 1.0 / w
    return abs(a1 * (1.0 - train.sensor_back_mm * curvature))


def tunable_power_for_focus(train: OpticalTrain, d_target: float,
                            power_range: tuple[float, float] = (-10.0, 10.0)) -> float:
    """Tunable-lens power that focuses the train at d_target.

    Solves blur_on_sensor_mm == 0 for the power; by construction the result
    is 0 exactly at the train's reference distance, positive nearer, and
    strictly decreasing in d_target.  Distances whose solution falls
    outside power_range raise FocusRangeError carrying the reachable limit.
    """
    if d_target <= train.f_zoom_mm:
        raise ValueError(
            f"target {d_target} mm is inside the zoom focal length {train.f_zoom_mm} mm"
        )
    w = _intermediate_w(train, d_target)
    power = 1000.0 * (1.0 / train.sensor_back_mm - 1.0 / w)
    lo, hi = power_range
    if power < lo:
        raise FocusRangeError(d_target, focus_distance_for_power(train, lo))
    if power > hi:
        raise FocusRangeError(d_target, focus_distance_for_power(train, hi))
    return power


def focus_distance_for_power(train: OpticalTrain, power_dpt: float) -> float:
    """Subject distance in focus at the given tunable power (inf if past infinity)."""
    inv_w = 1.0 / train.sensor_back_mm - power_dpt / 1000.0
    if inv_w <= 0.0:
        return math.inf
    v1 = 1.0 / inv_w + train.d_ot_mm
    if v1 <= train.f_zoom_mm:
        return math.inf
    return v1 * train.f_zoom_mm / (v1 - train.f_zoom_mm)


def magnification(train: OpticalTrain, d_subject: float) -> float:
    """Lateral magnification of the subject plane onto the sensor.

    First-stage magnification v1/d times the projection through the
    tunable lens' centre, s_e/w.  The projection term is a chief-ray
    construction, so the result does not depend on the tunable power.
    """
    v1 = thin_lens_image_distance(train.f_zoom_mm, d_subject)
    w = v1 - train.d_ot_mm
    return (v1 / d_subject) * (train.sensor_back_mm / w)


def pixels_across_iris(train: OpticalTrain, d_subject: float, power_dpt: float = 0.0) -> float:
    """Ground-truth pixel count across a 10 mm iris at d_subject.

    ``power_dpt`` is accepted for interface symmetry with the render path;
    the chief-ray magnification model makes it a no-op.
    """
    del power_dpt
    m = magnification(train, d_subject)
    return train.iris_mm * m * train.pixel_scale_cal / train.pixel_pitch_mm


def effective_focal_length(train: OpticalTrain, power_dpt: float = 0.0) -> float:
    return combined_focal_length(
        train.f_zoom_mm, diopter_to_focal_mm(power_dpt), train.d_ot_mm
    )


def field_of_view_deg(train: OpticalTrain, power_dpt: float = 0.0) -> float:
    """Full horizontal field of view in degrees."""
    f_eff = effective_focal_length(train, power_dpt)
    return 2.0 * math.degrees(math.atan(train.sensor_width_mm / (2.0 * f_eff)))


def capture_volume_m3(train: OpticalTrain, d: float) -> float:
    """Single-pose capture volume: bare-lens DoF times the transverse FoV square."""
    dof = depth_of_field(train.f_zoom_mm, train.n_stop, d, train.coc_mm)
    if math.isinf(dof.total_mm):
        return math.inf
    half = math.radians(field_of_view_deg(train) / 2.0)
    width = 2.0 * d * math.tan(half)
    return dof.total_mm * width * width * 1e-9


def bisect_root(fn, lo: float, hi: float, rel_tol: float = 1e-9, max_iter: int = 200) -> float:
    """Deterministic bracketed bisection; fn(lo) and fn(hi) must differ in sign."""
    f_lo = fn(lo)
    f_hi = fn(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0.0) == (f_hi > 0.0):
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0.0 or abs(hi - lo) <= rel_tol * max(1.0, abs(mid)):
            return mid
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
