"""Visual prompts and their paired text templates.

A :class:`PromptSpec` couples one image transform around a bounding box
with the text template describing what that transform looks like. A
:class:`PromptSet` is the ordered, immutable collection used both to build
the ID embedding space and to encode detected objects.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import imaging
from .imaging import BoundingBox

__all__ = [
    "PromptKind",
    "PromptSpec",
    "PromptSet",
    "PromptConfigError",
    "DEFAULT_TEMPLATES",
    "PLAIN_TEMPLATE",
    "COLORFUL_PALETTE",
    "apply_visual_prompt",
    "render_text_prompt",
    "default_prompt_set",
]

PLACEHOLDER = "{label}"
PLAIN_TEMPLATE = "a photo of {label}"


class PromptConfigError(ValueError):
    """Invalid prompt specification or prompt set."""


class PromptKind(enum.Enum):
    # definition order is the canonical accumulation order for embedding sums
    CROP = "crop"
    BLUR_INSIDE = "blur_inside"
    BLUR_OUTSIDE = "blur_outside"
    BOX = "box"
    GRAYSCALE = "grayscale"
    COLORFUL_BOX = "colorful_box"

    @property
    def rank(self) -> int:
        return list(PromptKind).index(self)


DEFAULT_TEMPLATES = {
    PromptKind.CROP: PLAIN_TEMPLATE,
    PromptKind.BLUR_OUTSIDE: "A photo of {label} with a blurred background",
    PromptKind.BLUR_INSIDE: "A photo of {label} with blurred details",
    PromptKind.BOX: "a photo of {label} in a red box",
    PromptKind.GRAYSCALE: "a grayscale photo of {label}",
    PromptKind.COLORFUL_BOX: "a photo of {label} in a colorful box",
}

# top, right, bottom, left
COLORFUL_PALETTE = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0, 0.0))

_CONTEXT_KINDS = {PromptKind.BLUR_INSIDE, PromptKind.BLUR_OUTSIDE, PromptKind.BOX, PromptKind.COLORFUL_BOX}


@dataclass(frozen=True)
class PromptSpec:
    """One visual prompt and its text template.

    Attributes:
        kind: which transform to apply.
        text_template: string with exactly one ``{label}`` placeholder.
        sigma: Gaussian std in pixels for the blur kinds.
        color: RGB frame color for ``BOX``.
        stroke: frame width in pixels; ``None`` scales with the image size.
        margin: context factor for the crop taken after the transform.
            ``None`` means 1.0 for ``CROP``/``GRAYSCALE`` and 1.5 otherwise.
    """

    kind: PromptKind
    text_template: str = ""
    sigma: float = 2.0
    color: tuple[float, float, float] = (1.0, 0.0, 0.0)
    stroke: int | None = None
    margin: float | None = None

    def __post_init__(self):
        kind = PromptKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.text_template:
            object.__setattr__(self, "text_template", DEFAULT_TEMPLATES[kind])
        if self.text_template.count(PLACEHOLDER) != 1:
            raise PromptConfigError(
                f"template {self.text_template!r} must contain {PLACEHOLDER} exactly once"
            )
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise PromptConfigError(f"sigma must be positive, got {self.sigma}")
        color = tuple(float(c) for c in self.color)
        if len(color) != 3 or min(color) < 0 or max(color) > 1:
            raise PromptConfigError(f"color must be an RGB triple in [0, 1], got {self.color}")
        object.__setattr__(self, "color", color)
        if self.stroke is not None and int(self.stroke) < 1:
            raise PromptConfigError(f"stroke must be >= 1, got {self.stroke}")
        if self.margin is None:
            object.__setattr__(self, "margin", 1.5 if kind in _CONTEXT_KINDS else 1.0)
        elif not (np.isfinite(self.margin) and self.margin >= 1.0):
            raise PromptConfigError(f"margin must be >= 1, got {self.margin}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "text_template": self.text_template,
            "sigma": self.sigma,
            "color": list(self.color),
            "stroke": self.stroke,
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PromptSpec":
        d = dict(d)
        if "color" in d:
            d["color"] = tuple(d["color"])
        return cls(**d)


@dataclass(frozen=True)
class PromptSet:
    """Ordered prompt specs with unique kinds."""

    specs: tuple[PromptSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        specs = tuple(self.specs)
        object.__setattr__(self, "specs", specs)
        if not specs:
            raise PromptConfigError("a prompt set needs at least one prompt")
        kinds = [s.kind for s in specs]
        if len(set(kinds)) != len(kinds):
            raise PromptConfigError(f"duplicate prompt kinds in {[k.value for k in kinds]}")

    def __iter__(self):
        return iter(self.specs)

    def __len__(self):
        return len(self.specs)

    @property
    def kinds(self) -> tuple[PromptKind, ...]:
        return tuple(s.kind for s in self.specs)

    def canonical(self) -> tuple[PromptSpec, ...]:
        """Specs sorted by kind; the order used when summing embeddings."""
        return tuple(sorted(self.specs, key=lambda s: s.kind.rank))

    def fingerprint(self) -> str:
        """Order-independent hash of the prompt configuration."""
        blob = json.dumps([s.to_dict() for s in self.canonical()], sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def crop_only(self) -> "PromptSet":
        """Collapse to the single tight-crop prompt (visual prompts off)."""
        for s in self.specs:
            if s.kind is PromptKind.CROP:
                return PromptSet((s,))
        return PromptSet((PromptSpec(PromptKind.CROP),))

    def plain_text(self) -> "PromptSet":
        """Every template replaced by ``"a photo of {label}"`` (text augmentation off)."""
        return PromptSet(tuple(replace(s, text_template=PLAIN_TEMPLATE) for s in self.specs))

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.specs]

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "PromptSet":
        return cls(tuple(PromptSpec.from_dict(d) for d in items))


def apply_visual_prompt(spec: PromptSpec, image: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Produce the prompted view of ``box`` that is fed to the image encoder.

    Context prompts (blurs, boxes) transform the full image and then crop
    with ``spec.margin`` so surrounding context survives.
    """
    h, w = image.shape[:2]
    box = box.validate(w, h)
    kind = spec.kind
    if kind is PromptKind.CROP:
        return imaging.crop_with_margin(image, box, spec.margin)
    if kind is PromptKind.GRAYSCALE:
        return imaging.to_grayscale(imaging.crop_with_margin(image, box, spec.margin))
    if kind is PromptKind.BLUR_INSIDE:
        full = imaging.blur_region(image, box, "inside", spec.sigma)
    elif kind is PromptKind.BLUR_OUTSIDE:
        full = imaging.blur_region(image, box, "outside", spec.sigma)
    else:
        full = _frame(spec, image, box)
    return imaging.crop_with_margin(full, box, spec.margin)


def _frame(spec: PromptSpec, image: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = image.shape[:2]
    stroke = spec.stroke if spec.stroke is not None else imaging.default_stroke(w, h)
    stroke = min(stroke, min(box.width, box.height) // 2)
    if stroke < 1:
        # box too thin for a frame: the whole region becomes the frame
        out = image.copy()
        fill = COLORFUL_PALETTE[0] if spec.kind is PromptKind.COLORFUL_BOX else spec.color
        out[box.y_min:box.y_max, box.x_min:box.x_max] = fill
        return out
    if spec.kind is PromptKind.COLORFUL_BOX:
        return imaging.draw_multicolor_box(image, box, COLORFUL_PALETTE, stroke)
    return imaging.draw_box(image, box, spec.color, stroke)


def render_text_prompt(spec: PromptSpec, label: str) -> str:
    if not label or "{" in label or "}" in label:
        raise ValueError(f"invalid class label {label!r}")
    return spec.text_template.replace(PLACEHOLDER, label)


def default_prompt_set(
    sigma: float = 2.0,
    margin: float = 1.5,
    color: Sequence[float] = (1.0, 0.0, 0.0),
    stroke: int | None = None,
    ablations: Iterable[str | PromptKind] = (),
    templates: Mapping[str | PromptKind, str] | None = None,
) -> PromptSet:
    """Crop, blur outside, blur inside and red box, plus any requested ablation kinds.

    ``ablations`` may name ``"grayscale"`` and/or ``"colorful_box"``;
    ``templates`` overrides the text template per kind.
    """
    overrides = {PromptKind(k): v for k, v in (templates or {}).items()}
    kinds = [PromptKind.CROP, PromptKind.BLUR_OUTSIDE, PromptKind.BLUR_INSIDE, PromptKind.BOX]
    for extra in ablations:
        extra = PromptKind(extra)
        if extra not in (PromptKind.GRAYSCALE, PromptKind.COLORFUL_BOX):
            raise PromptConfigError(f"{extra.value} is not an ablation prompt")
        if extra not in kinds:
            kinds.append(extra)
    specs = []
    for kind in kinds:
        template = overrides.get(kind, DEFAULT_TEMPLATES[kind])
        if kind is PromptKind.CROP or kind is PromptKind.GRAYSCALE:
            specs.append(PromptSpec(kind, template))
        else:
            specs.append(PromptSpec(kind, template, sigma=sigma, color=tuple(color), stroke=stroke, margin=margin))
    return PromptSet(tuple(specs))
