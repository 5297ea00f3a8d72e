"""Synthetic scenes paired with a :class:`SemanticStubBackend`.

Each scene is a flat background with one square object. Both colors are
pixel codes the stub understands: the object color selects an object
vector, the background color (visible only when a view keeps context)
selects a context vector. Two scenarios are provided:

* ``"separable"``: ID objects embed at their label vector, OOD objects
  orthogonal to every label; backgrounds carry no signal.
* ``"context"``: ID and OOD objects look alike (half label, half
  nuisance direction), and only the background tells them apart. A
  tight crop cannot separate them; context-keeping prompts can.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import SemanticStubBackend, code_color, pixel_code
from .imaging import BoundingBox
from .prompts import COLORFUL_PALETTE
from .scoring import Instance

__all__ = ["SyntheticScene", "SyntheticFixture", "make_fixture", "write_fixture"]

IMAGE_SIZE = 128
OBJECT_SIZE = 40
_RESERVED = {pixel_code(c) for c in COLORFUL_PALETTE} | {pixel_code((1.0, 1.0, 1.0)), 0}


@dataclass(frozen=True)
class SyntheticScene:
    """Recipe for one image; calling it renders the pixels."""

    background: int
    foreground: int
    box: BoundingBox
    size: int = IMAGE_SIZE

    def __call__(self) -> np.ndarray:
        img = np.empty((self.size, self.size, 3))
        img[:] = code_color(self.background)
        b = self.box
        img[b.y_min:b.y_max, b.x_min:b.x_max] = code_color(self.foreground)
        return img


@dataclass
class SyntheticFixture:
    labels: list[str]
    backend: SemanticStubBackend
    id_instances: list[Instance]
    ood_instances: list[Instance]
    id_categories: list[str]
    ood_categories: list[str]


def _unique_codes(rng: np.random.Generator, n: int) -> list[int]:
    codes: list[int] = []
    seen = set(_RESERVED)
    while len(codes) < n:
        c = pixel_code(rng.integers(20, 236, size=3) / 255.0)
        if c not in seen:
            seen.add(c)
            codes.append(c)
    return codes


def make_fixture(
    scenario: str = "separable",
    k: int = 10,
    n_id: int = 500,
    n_ood: int = 500,
    dim: int = 64,
    noise: float = 0.3,
    template_jitter: float = 0.05,
    seed: int = 0,
) -> SyntheticFixture:
    if scenario not in ("separable", "context"):
        raise ValueError(f"unknown scenario {scenario!r}")
    if dim < 4 * k + 2:
        raise ValueError(f"dim must be at least {4 * k + 2} for k={k}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    basis = basis.T
    label_vecs = basis[:k]
    nuisance_id = basis[k:2 * k]
    nuisance_ood = basis[2 * k:3 * k]
    ood_dirs = basis[3 * k:4 * k]
    ood_context_dir = basis[4 * k]

    labels = [f"class {i}" for i in range(k)]
    codes = iter(_unique_codes(rng, 5 * k))
    id_obj = [next(codes) for _ in range(k)]
    ood_obj = [next(codes) for _ in range(k)]
    id_bg = [next(codes) for _ in range(k)]
    ood_bg = [next(codes) for _ in range(k)]
    neutral_bg = [next(codes) for _ in range(k)]

    objects: dict[int, np.ndarray] = {}
    contexts: dict[int, np.ndarray] = {}
    if scenario == "separable":
        for c in range(k):
            objects[id_obj[c]] = label_vecs[c]
            objects[ood_obj[c]] = ood_dirs[c]
    else:
        a, b = 0.5, np.sqrt(0.75)
        for c in range(k):
            objects[id_obj[c]] = a * label_vecs[c] + b * nuisance_id[c]
            objects[ood_obj[c]] = a * label_vecs[c] + b * nuisance_ood[c]
            # ID scenes show class-consistent surroundings
            contexts[id_bg[c]] = label_vecs[c]
            contexts[ood_bg[c]] = ood_context_dir
    backend = SemanticStubBackend(
        {l: v for l, v in zip(labels, label_vecs)},
        objects,
        contexts,
        noise=noise,
        template_jitter=template_jitter,
        seed=seed,
    )

    def scenes(n, obj_codes, bg_codes, tag):
        out, cats = [], []
        for i in range(n):
            c = int(rng.integers(k))
            x, y = (int(v) for v in rng.integers(12, IMAGE_SIZE - OBJECT_SIZE - 12 + 1, size=2))
            background = bg_codes[c] if bg_codes is not None else neutral_bg[int(rng.integers(k))]
            box = BoundingBox(x, y, x + OBJECT_SIZE, y + OBJECT_SIZE)
            out.append(Instance(f"{tag}{i:05d}", SyntheticScene(background, obj_codes[c], box), box, tag))
            cats.append(labels[c] if tag == "id" else f"unknown {c}")
        return out, cats

    context = scenario == "context"
    id_inst, id_cats = scenes(n_id, id_obj, id_bg if context else None, "id")
    ood_inst, ood_cats = scenes(n_ood, ood_obj, ood_bg if context else None, "ood")
    return SyntheticFixture(labels, backend, id_inst, ood_inst, id_cats, ood_cats)


def write_fixture(fixture: SyntheticFixture, root: str | Path) -> dict[str, Path]:
    """Write images, COCO JSON files, the stub table and a split file under ``root``."""
    from .data import save_image

    root = Path(root)
    paths = {}
    for origin, insts, cats in (
        ("id", fixture.id_instances, fixture.id_categories),
        ("ood", fixture.ood_instances, fixture.ood_categories),
    ):
        img_dir = root / f"{origin}_images"
        img_dir.mkdir(parents=True, exist_ok=True)
        names = sorted(set(cats))
        cat_ids = {n: i + 1 for i, n in enumerate(names)}
        doc = {"images": [], "annotations": [], "categories": [{"id": i, "name": n} for n, i in cat_ids.items()]}
        for n, (inst, cat) in enumerate(zip(insts, cats)):
            fname = f"{inst.image_id}.png"
            save_image(img_dir / fname, inst.image())
            doc["images"].append({"id": n + 1, "file_name": fname, "width": IMAGE_SIZE, "height": IMAGE_SIZE})
            b = inst.box
            doc["annotations"].append(
                {"id": n + 1, "image_id": n + 1, "category_id": cat_ids[cat], "bbox": [b.x_min, b.y_min, b.width, b.height]}
            )
        ann = root / f"{origin}_annotations.json"
        ann.write_text(json.dumps(doc), encoding="utf-8")
        paths[f"{origin}_annotations"] = ann
        paths[f"{origin}_images"] = img_dir
    table = root / "stub_table.json"
    table.write_text(json.dumps(fixture.backend.to_table()), encoding="utf-8")
    split = root / "split.json"
    split.write_text(json.dumps({"name": "synthetic", "id_classes": fixture.labels, "exclude_id_classes": True}), encoding="utf-8")
    paths["stub_table"] = table
    paths["split"] = split
    return paths
