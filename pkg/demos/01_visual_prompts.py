"""
Visual prompts around a bounding box
====================================

Every object is shown to the image encoder several times, each view a
different transform of the same box. This script renders all of them for
one synthetic scene and writes the views as PNG files.
"""

import sys
from pathlib import Path

import numpy as np

from objood.data import save_image
from objood.imaging import BoundingBox
from objood.prompts import apply_visual_prompt, default_prompt_set, render_text_prompt

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/prompts")
out.mkdir(parents=True, exist_ok=True)

# a textured scene: smooth gradient background, checkerboard object
yy, xx = np.mgrid[0:96, 0:128] / 128.0
scene = np.stack([xx, yy, 0.5 * np.ones_like(xx)], axis=-1)
box = BoundingBox(40, 30, 88, 70)
checker = ((np.indices((box.height, box.width)) // 6).sum(axis=0) % 2).astype(float)
scene[box.y_min:box.y_max, box.x_min:box.x_max] = checker[..., None] * [1.0, 0.9, 0.2]
save_image(out / "scene.png", scene)

# the default set: crop, blurred background, blurred details, red box,
# plus the two optional kinds used in ablations
prompts = default_prompt_set(ablations=["grayscale", "colorful_box"])

for spec in prompts:
    view = apply_visual_prompt(spec, scene, box)
    save_image(out / f"{spec.kind.value}.png", view)
    # each visual prompt is paired with a text template describing it
    print(f"{spec.kind.value:>13}  view {view.shape[1]:>3}x{view.shape[0]:<3}  "
          f"text: {render_text_prompt(spec, 'giraffe')!r}")

# context-keeping views are cropped with a 1.5x margin, so they are larger
# than the tight crop; the crop view is exactly the box
crop = apply_visual_prompt(prompts.specs[0], scene, box)
assert crop.shape[:2] == (box.height, box.width)
print(f"wrote {len(prompts) + 1} images to {out}")
