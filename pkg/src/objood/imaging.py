"""Raster primitives used by the visual prompts.

Images are ``float64`` arrays of shape ``(height, width, 3)`` holding RGB
intensities in ``[0, 1]``. Every function here is pure: inputs are never
modified and the same arguments always give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

__all__ = [
    "MalformedRegionError",
    "BoundingBox",
    "as_image",
    "round_half_away",
    "crop",
    "crop_with_margin",
    "expand_box",
    "gaussian_kernel",
    "gaussian_blur",
    "blur_region",
    "draw_box",
    "draw_multicolor_box",
    "default_stroke",
    "to_grayscale",
    "LUMA_WEIGHTS",
]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class MalformedRegionError(ValueError):
    """A bounding box is degenerate or does not fit the image."""


def round_half_away(value: float) -> int:
    """Round to the nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned integer pixel region, min inclusive and max exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @classmethod
    def from_floats(cls, x_min, y_min, x_max, y_max) -> "BoundingBox":
        return cls(*(round_half_away(float(v)) for v in (x_min, y_min, x_max, y_max)))

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BoundingBox":
        return cls.from_floats(x, y, float(x) + float(w), float(y) + float(h))

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return max(self.width, 0) * max(self.height, 0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clamp(self, width: int, height: int) -> "BoundingBox":
        """Intersect with the image rectangle ``[0, width) x [0, height)``.

        The result may be degenerate; callers decide whether to drop it.
        """
        return BoundingBox(
            min(max(self.x_min, 0), width),
            min(max(self.y_min, 0), height),
            min(max(self.x_max, 0), width),
            min(max(self.y_max, 0), height),
        )

    def validate(self, width: int, height: int) -> "BoundingBox":
        if not (0 <= self.x_min < self.x_max <= width and 0 <= self.y_min < self.y_max <= height):
            raise MalformedRegionError(
                f"box {self.as_tuple()} is empty or outside a {width}x{height} image"
            )
        return self

    def mirror(self, width: int) -> "BoundingBox":
        """The same region after flipping an image of ``width`` left to right."""
        return BoundingBox(width - self.x_max, self.y_min, width - self.x_min, self.y_max)


def as_image(pixels) -> np.ndarray:
    """Validate and convert to a ``(H, W, 3)`` float64 image."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must be finite and within [0, 1]")
    return img


def _checked(image: np.ndarray, box: BoundingBox) -> BoundingBox:
    h, w = image.shape[:2]
    return box.validate(w, h)


def crop(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    box = _checked(image, box)
    return image[box.y_min:box.y_max, box.x_min:box.x_max].copy()


def expand_box(box: BoundingBox, margin: float, width: int, height: int) -> BoundingBox:
    """Scale ``box`` about its center by ``margin`` and clip to the image.

    Fractional edges grow outward (floor on the min side, ceil on the max
    side) so the result is symmetric under horizontal mirroring.
    """
    if not math.isfinite(margin) or margin < 1.0:
        raise ValueError(f"margin must be finite and >= 1, got {margin}")
    if margin == 1.0:
        return box
    cx = (box.x_min + box.x_max) / 2.0
    cy = (box.y_min + box.y_max) / 2.0
    half_w = box.width * margin / 2.0
    half_h = box.height * margin / 2.0
    grown = BoundingBox(
        math.floor(cx - half_w),
        math.floor(cy - half_h),
        math.ceil(cx + half_w),
        math.ceil(cy + half_h),
    )
    return grown.clamp(width, height)


def crop_with_margin(image: np.ndarray, box: BoundingBox, margin: float = 1.0) -> np.ndarray:
    """Crop the box enlarged by ``margin`` around its center.

    ``margin=1.0`` is the tight crop. The enlarged region is intersected
    with the image bounds.
    """
    box = _checked(image, box)
    h, w = image.shape[:2]
    return crop(image, expand_box(box, margin, w, h))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete 1-D Gaussian with radius ``ceil(3 * sigma)``, normalized to sum 1."""
    if not math.isfinite(sigma) or sigma <= 0:
        raise ValueError(f"sigma must be finite and positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel with edge replication at the border."""
    kernel = gaussian_kernel(sigma)
    # mode="nearest" is edge replication
    out = correlate1d(correlate1d(image, kernel, axis=0, mode="nearest"), kernel, axis=1, mode="nearest")
    # weights sum to 1 only up to rounding; keep results inside the valid range
    return np.clip(out, 0.0, 1.0)


def blur_region(image: np.ndarray, box: BoundingBox, mode: str, sigma: float) -> np.ndarray:
    """Blur only inside or only outside ``box``.

    The full image is blurred once. ``mode="outside"`` pastes the original
    box contents back onto the blurred image; ``mode="inside"`` pastes the
    blurred box contents onto the original.
    """
    box = _checked(image, box)
    if mode not in ("inside", "outside"):
        raise ValueError(f"mode must be 'inside' or 'outside', got {mode!r}")
    blurred = gaussian_blur(image, sigma)
    ys, xs = slice(box.y_min, box.y_max), slice(box.x_min, box.x_max)
    if mode == "outside":
        blurred[ys, xs] = image[ys, xs]
        return blurred
    out = image.copy()
    out[ys, xs] = blurred[ys, xs]
    return out


def default_stroke(width: int, height: int) -> int:
    return max(2, round_half_away(0.01 * min(width, height)))


def draw_box(image: np.ndarray, box: BoundingBox, color=(1.0, 0.0, 0.0), width: int = 2) -> np.ndarray:
    """Draw a rectangular frame of stroke ``width`` just inside the box edges."""
    box = _checked(image, box)
    if width < 1 or 2 * width > min(box.width, box.height):
        raise MalformedRegionError(
            f"stroke {width} does not fit inside a {box.width}x{box.height} box"
        )
    color = np.asarray(color, dtype=np.float64)
    if color.shape != (3,) or color.min() < 0.0 or color.max() > 1.0:
        raise ValueError(f"color must be an RGB triple in [0, 1], got {color}")
    out = image.copy()
    x0, y0, x1, y1 = box.as_tuple()
    out[y0:y0 + width, x0:x1] = color
    out[y1 - width:y1, x0:x1] = color
    out[y0:y1, x0:x0 + width] = color
    out[y0:y1, x1 - width:x1] = color
    return out


def draw_multicolor_box(image: np.ndarray, box: BoundingBox, colors, width: int = 2) -> np.ndarray:
    """Like :func:`draw_box` but each side gets its own color.

    ``colors`` is ``(top, right, bottom, left)``; later sides overwrite the
    shared corners.
    """
    box = _checked(image, box)
    if width < 1 or 2 * width > min(box.width, box.height):
        raise MalformedRegionError(
            f"stroke {width} does not fit inside a {box.width}x{box.height} box"
        )
    top, right, bottom, left = (np.asarray(c, dtype=np.float64) for c in colors)
    out = image.copy()
    x0, y0, x1, y1 = box.as_tuple()
    out[y0:y0 + width, x0:x1] = top
    out[y0:y1, x1 - width:x1] = right
    out[y1 - width:y1, x0:x1] = bottom
    out[y0:y1, x0:x0 + width] = left
    return out


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma (0.299 R + 0.587 G + 0.114 B) replicated over three channels."""
    luma = image @ np.asarray(LUMA_WEIGHTS)
    return np.clip(np.repeat(luma[..., None], 3, axis=2), 0.0, 1.0)
