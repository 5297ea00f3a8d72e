"""Images, COCO-style annotations/detections and ID/OOD split definitions."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .idspace import normalize_label
from .imaging import BoundingBox

__all__ = [
    "DataError",
    "InstanceRecord",
    "SplitConfig",
    "load_image",
    "save_image",
    "load_coco_annotations",
    "load_split_config",
    "builtin_split",
    "apply_split",
]

log = logging.getLogger(__name__)

IMAGE_FORMATS = {"PNG", "JPEG"}


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass(frozen=True)
class InstanceRecord:
    image_path: Path
    image_id: str
    box: BoundingBox
    category: str | None = None
    origin: str = ""
    score: float | None = None


@dataclass(frozen=True)
class SplitConfig:
    id_class_names: tuple[str, ...]
    ood_source: str = ""
    exclude_id_classes: bool = True
    name: str = ""

    def __post_init__(self):
        names = tuple(self.id_class_names)
        if not names:
            raise DataError("split needs at least one ID class")
        if len(set(names)) != len(names):
            raise DataError("ID class names must be unique")
        object.__setattr__(self, "id_class_names", names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "id_classes": list(self.id_class_names),
            "ood_source": self.ood_source,
            "exclude_id_classes": self.exclude_id_classes,
        }


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG or JPEG into an ``(H, W, 3)`` float64 RGB array in ``[0, 1]``."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.format not in IMAGE_FORMATS:
                raise DataError(f"{path}: unsupported image format {im.format}")
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return rgb / 255.0


@lru_cache(maxsize=16)
def _cached_image(path: str) -> np.ndarray:
    img = load_image(path)
    img.setflags(write=False)
    return img


def save_image(path: str | Path, image: np.ndarray) -> Path:
    from PIL import Image

    path = Path(path)
    if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
        raise DataError(f"only PNG and JPEG output is supported, got {path.suffix}")
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)
    return path


def load_coco_annotations(
    annotation_path: str | Path,
    images_root: str | Path,
    origin: str = "",
    min_confidence: float = 0.5,
    check_files: bool = True,
) -> list[InstanceRecord]:
    """One record per annotation, in file order.

    ``bbox`` is ``[x, y, w, h]`` in pixels; corners are rounded half away
    from zero and clamped to the image. Zero-area boxes are dropped (and
    counted in the log). Annotations carrying a ``score`` below
    ``min_confidence`` are treated as rejected detections and skipped.
    """
    annotation_path = Path(annotation_path)
    images_root = Path(images_root)
    try:
        doc = json.loads(annotation_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse {annotation_path}: {exc}") from exc
    if not isinstance(doc, dict) or not all(k in doc for k in ("images", "annotations", "categories")):
        raise DataError(f"{annotation_path}: expected top-level images, annotations and categories")

    images = {}
    for im in doc["images"]:
        try:
            images[im["id"]] = (im["file_name"], int(im["width"]), int(im["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{annotation_path}: malformed image entry {im!r}") from exc
    categories = {c["id"]: c["name"] for c in doc["categories"]}

    records, dropped, low_conf = [], 0, 0
    for n, ann in enumerate(doc["annotations"]):
        where = f"{annotation_path} annotation #{n} (id={ann.get('id')})"
        if ann.get("image_id") not in images:
            raise DataError(f"{where}: unknown image_id {ann.get('image_id')!r}")
        cat = ann.get("category_id")
        if cat is not None and cat not in categories:
            raise DataError(f"{where}: unknown category_id {cat!r}")
        bbox = ann.get("bbox")
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise DataError(f"{where}: bbox must be [x, y, w, h]")
        score = ann.get("score")
        if score is not None and float(score) < min_confidence:
            low_conf += 1
            continue
        file_name, width, height = images[ann["image_id"]]
        try:
            box = BoundingBox.from_xywh(*bbox).clamp(width, height)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: non-numeric bbox {bbox!r}") from exc
        if box.width < 1 or box.height < 1:
            dropped += 1
            continue
        path = images_root / file_name
        if check_files and not path.is_file():
            raise DataError(f"{where}: image file {path} not found")
        records.append(
            InstanceRecord(
                image_path=path,
                image_id=str(ann["image_id"]),
                box=box,
                category=categories.get(cat),
                origin=origin,
                score=None if score is None else float(score),
            )
        )
    if dropped:
        log.info("%s: dropped %d degenerate boxes", annotation_path, dropped)
    if low_conf:
        log.info("%s: skipped %d detections below confidence %.2f", annotation_path, low_conf, min_confidence)
    return records


def builtin_split(name: str) -> SplitConfig:
    """The shipped ``voc`` or ``bdd`` ID class lists."""
    try:
        text = resources.files("objood.splits").joinpath(f"{name}.json").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no built-in split named {name!r}") from None
    return _split_from_dict(json.loads(text), name)


def _split_from_dict(doc: dict, where) -> SplitConfig:
    names = doc.get("id_classes")
    if not isinstance(names, list):
        raise DataError(f"{where}: id_classes must be a list")
    return SplitConfig(
        id_class_names=tuple(names),
        ood_source=doc.get("ood_source", ""),
        exclude_id_classes=bool(doc.get("exclude_id_classes", True)),
        name=doc.get("name", ""),
    )


def load_split_config(path: str | Path) -> SplitConfig:
    """Read a JSON split file.

    Keys: ``id_classes`` (list of names, required unless ``base`` is given),
    ``base`` (``"voc"``/``"bdd"`` to start from a shipped list), ``name``,
    ``ood_source`` and ``exclude_id_classes`` (default true).
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split config {path}: {exc}") from exc
    if "base" in doc:
        base = builtin_split(doc["base"]).to_dict()
        base.update({k: v for k, v in doc.items() if k != "base"})
        doc = base
    return _split_from_dict(doc, path)


def apply_split(records: Iterable[InstanceRecord], split: SplitConfig, origin: str) -> list[InstanceRecord]:
    """Tag records with ``origin`` and enforce the ID-class exclusion rule.

    OOD records whose category is an ID class are dropped when the split
    excludes ID classes, and kept with a logged warning otherwise.
    """
    id_names = {normalize_label(n) for n in split.id_class_names}
    out, clashes = [], 0
    for rec in records:
        rec = replace(rec, origin=origin)
        if origin == "ood" and rec.category is not None and normalize_label(rec.category) in id_names:
            clashes += 1
            if split.exclude_id_classes:
                continue
        out.append(rec)
    if clashes:
        verb = "dropped" if split.exclude_id_classes else "kept"
        log.warning("%s %d OOD instances labeled with ID classes", verb, clashes)
    return out


def read_image_cached(path: str | Path) -> np.ndarray:
    """Shared read-only decode of an image file (small LRU cache)."""
    return _cached_image(str(path))

