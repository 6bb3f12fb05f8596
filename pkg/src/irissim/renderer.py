"""Eye-region image formation.

Produces the sensor crop around one eye for a given optical train state,
mirror pose and subject.  Radiometry is deliberately simple (matte
reflectances, constant illumination); what matters for the pipeline is
that geometry, defocus, astigmatism, motion smear and sensor noise are
faithful to the configured state and reproducible from the seeds.

Degradations applied in order: defocus disk (diameter from the blur-circle
model), anisotropic blur growing with the square of positive tunable-lens
power (membrane sag under drive), motion smear over the exposure, optical
transmission, then Gaussian read noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from . import optics
from .optics import OpticalTrain
from .scene import RigGeometry, line_of_sight_mm, reflected_view_dir
from .texture import iris_texture

REFLECTANCE_SCLERA = 0.80
REFLECTANCE_PUPIL = 0.05
REFLECTANCE_LID = 0.55
PUPIL_FRACTION = 0.40  # pupil diameter as a fraction of iris diameter
LID_FRACTION = 0.15    # of the iris vertical extent covered from the top
TRANSMISSION = 0.8     # mirror and lens train throughput
READ_NOISE_GREY = 2.0

# anisotropic blur sigma in px per (positive diopter)^2; set by calibration
DEFAULT_K_AST = 0.1908002

BASE_WIDTH = 640
BASE_HEIGHT = 480
_MARGIN = 1.3  # canvas half-extent per iris radius


class TargetMissed(Exception):
    """The eye is not on the folded optical axis closely enough to image."""


@dataclass(eq=False)
class Frame:
    image: np.ndarray  # uint8 grey
    cx: float
    cy: float
    r_pupil_px: float
    r_iris_px: float
    px_across_iris: float
    blur_px: float
    astig_sigma_px: float
    motion_px: float
    power_dpt: float
    distance_mm: float
    offset_px: tuple[float, float]


def disk_kernel(diameter_px: float) -> np.ndarray:
    """Defocus disk with an antialiased rim, normalized to unit sum."""
    r = diameter_px / 2.0
    n = 2 * int(math.ceil(r + 0.5)) + 1
    c = n // 2
    yy, xx = np.mgrid[0:n, 0:n]
    rr = np.hypot(yy - c, xx - c)
    k = np.clip(r - rr + 0.5, 0.0, 1.0)
    return k / k.sum()


def line_kernel(length_px: float, direction: tuple[float, float]) -> np.ndarray:
    """Uniform smear along a direction, splatted bilinearly."""
    half = length_px / 2.0
    n = 2 * (int(math.ceil(half)) + 1) + 1  # one spare cell for the bilinear splat
    c = n // 2
    dx, dy = direction
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        dx, dy = 1.0, 0.0
    else:
        dx, dy = dx / norm, dy / norm
    k = np.zeros((n, n))
    steps = max(8, int(8 * length_px))
    for s in np.linspace(-half, half, steps):
        x = c + s * dx
        y = c + s * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        k[y0, x0] += (1 - fx) * (1 - fy)
        k[y0, x0 + 1] += fx * (1 - fy)
        k[y0 + 1, x0] += (1 - fx) * fy
        k[y0 + 1, x0 + 1] += fx * fy
    return k / k.sum()


def _convolve_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # edge-pad so the smear does not drag in black from outside the crop
    pad = kernel.shape[0] // 2
    padded = np.pad(img, pad, mode="edge")
    out = fftconvolve(padded, kernel, mode="same")
    return out[pad:-pad, pad:-pad]


def _image_offset_px(train: OpticalTrain, power_dpt: float,
                     pan_deg: float, tilt_deg: float, eye_pos) -> tuple[float, float]:
    """Where the eye lands relative to the crop centre, from the aim residual."""
    e = np.asarray(eye_pos, dtype=float)
    e_hat = e / np.linalg.norm(e)
    v = reflected_view_dir(pan_deg, tilt_deg)
    delta = e_hat - np.dot(e_hat, v) * v  # transverse angular error, radians
    up = np.array([0.0, 0.0, 1.0])
    u = np.cross(v, up)
    nu = np.linalg.norm(u)
    if nu < 1e-9:
        u = np.array([1.0, 0.0, 0.0])
    else:
        u /= nu
    w = np.cross(v, u)
    f_eff = optics.effective_focal_length(train, power_dpt)
    scale = f_eff / train.pixel_pitch_mm
    return float(np.dot(delta, u) * scale), float(np.dot(delta, w) * scale)


def render_eye(train: OpticalTrain, *, power_dpt: float, pan_deg: float,
               tilt_deg: float, eye_pos_mm, identity_seed: int, noise_seed: int,
               eye_velocity_mmps=(0.0, 0.0, 0.0), exposure_ms: float = 3.0,
               rig: RigGeometry = RigGeometry(), k_ast: float = DEFAULT_K_AST,
               base_canvas: tuple[int, int] | None = None) -> Frame:
    """Render the eye crop for one exposure.

    Raises TargetMissed when the folded axis is so far off the eye that the
    iris would not fit on the crop (typically a mirror still in flight).
    ``base_canvas`` sets the minimum crop size; pass (0, 0) for the tight
    crop used in bulk sweeps.
    """
    d = line_of_sight_mm(eye_pos_mm, rig)
    px = optics.pixels_across_iris(train, d)
    r_i = px / 2.0
    r_p = PUPIL_FRACTION * r_i

    off_x, off_y = _image_offset_px(train, power_dpt, pan_deg, tilt_deg, eye_pos_mm)

    min_h, min_w = base_canvas if base_canvas is not None else (BASE_HEIGHT, BASE_WIDTH)
    width = max(min_w, 2 * int(math.ceil(_MARGIN * r_i)))
    height = max(min_h, 2 * int(math.ceil(_MARGIN * r_i)))
    cx = width / 2.0 + off_x
    cy = height / 2.0 + off_y
    if (cx - 1.05 * r_i < 0 or cx + 1.05 * r_i >= width
            or cy - 1.05 * r_i < 0 or cy + 1.05 * r_i >= height):
        raise TargetMissed(
            f"iris centre offset ({off_x:.0f},{off_y:.0f}) px leaves the crop"
        )

    blur_mm = optics.blur_on_sensor_mm(train, power_dpt, d)
    blur_px = blur_mm / train.pixel_pitch_mm
    astig_sigma = k_ast * max(0.0, power_dpt) ** 2

    e = np.asarray(eye_pos_mm, dtype=float)
    e_hat = e / np.linalg.norm(e)
    v = np.asarray(eye_velocity_mmps, dtype=float)
    v_perp = v - np.dot(v, e_hat) * e_hat
    motion_px = float(np.linalg.norm(v_perp)) * (exposure_ms / 1000.0) * (px / train.iris_mm)

    img = _draw_eye(identity_seed, width, height, cx, cy, r_p, r_i)

    if blur_px > 0.05:
        img = _convolve_same(img, disk_kernel(blur_px))
    if astig_sigma > 0.05:
        img = gaussian_filter(img, sigma=(astig_sigma, 0.3 * astig_sigma), mode="nearest")
    if motion_px > 0.5:
        mdir = (1.0, 0.0)
        if np.linalg.norm(v_perp) > 0:
            # project transverse velocity on the image basis used for offsets
            up = np.array([0.0, 0.0, 1.0])
            u = np.cross(e_hat, up)
            nu = np.linalg.norm(u)
            u = u / nu if nu > 1e-9 else np.array([1.0, 0.0, 0.0])
            w = np.cross(e_hat, u)
            mdir = (float(np.dot(v_perp, u)), float(np.dot(v_perp, w)))
        img = _convolve_same(img, line_kernel(motion_px, mdir))

    img = img * TRANSMISSION * 255.0
    rng = np.random.default_rng((int(noise_seed), 0x4652414D))
    img = img + rng.normal(0.0, READ_NOISE_GREY, img.shape)
    img = np.clip(img, 0, 255).astype(np.uint8)

    return Frame(
        image=img, cx=cx, cy=cy, r_pupil_px=r_p, r_iris_px=r_i,
        px_across_iris=px, blur_px=float(blur_px), astig_sigma_px=float(astig_sigma),
        motion_px=motion_px, power_dpt=power_dpt, distance_mm=d,
        offset_px=(off_x, off_y),
    )


def _draw_eye(identity_seed: int, width: int, height: int,
              cx: float, cy: float, r_p: float, r_i: float) -> np.ndarray:
    tex = iris_texture(identity_seed)
    yy, xx = np.mgrid[0:height, 0:width]
    rr = np.hypot(yy - cy, xx - cx)
    img = np.full((height, width), REFLECTANCE_SCLERA)

    ann = (rr >= r_p) & (rr < r_i)
    theta = np.arctan2(yy - cy, xx - cx)[ann] % (2 * np.pi)
    radial = (rr[ann] - r_p) / (r_i - r_p)
    nr, na = tex.shape
    ri_idx = np.clip((radial * nr).astype(int), 0, nr - 1)
    ai_idx = (theta / (2 * np.pi) * na).astype(int) % na
    img[ann] = tex[ri_idx, ai_idx]

    img[rr < r_p] = REFLECTANCE_PUPIL
    lid = yy < (cy - r_i * (1 - 2 * LID_FRACTION))
    img[lid & (rr < r_i)] = REFLECTANCE_LID
    return img


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM, the plainest thing every viewer still opens."""
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.astype(np.uint8).tobytes())
