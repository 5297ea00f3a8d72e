"""
ID space, object embeddings and the uncertainty score
=====================================================

Class labels become text embeddings (one per prompt template, summed and
normalized). Each object becomes the normalized sum of its prompted view
embeddings. The uncertainty is a negative log-sum-exp of the cosine
similarities, and a threshold calibrated on ID scores turns it into a
decision.

The mock backend used here hashes its input into a random unit vector, so
the numbers are meaningless but fully reproducible.
"""

import numpy as np

from objood import MockBackend, build_id_space, default_prompt_set
from objood.imaging import BoundingBox
from objood.scoring import Instance, ScoringConfig, calibrate_gamma, score_batch, uncertainty

backend = MockBackend(dim=512, seed=0)
prompts = default_prompt_set()

# the ID space: one unit row per class
space = build_id_space(["person", "car", "traffic light"], prompts, backend)
print("ID space", space.embeddings.shape, "row norms", np.linalg.norm(space.embeddings, axis=1))

# a handful of objects in random images
rng = np.random.default_rng(0)
objects = [Instance(f"img{i}", rng.random((64, 64, 3)), BoundingBox(8, 8, 40 + i, 48)) for i in range(8)]
scored, errors = score_batch(objects, prompts, backend, space, ScoringConfig(tau=10.0))
for s in scored:
    print(f"{s.image_id}: similarities {np.round(s.similarities, 3)}  uncertainty {s.uncertainty:.4f}")

# the score behaves like a soft minimum of -tau * similarity
sims = np.array([0.31, 0.28, 0.05])
print("uncertainty", uncertainty(sims, 10.0), "vs -tau*max", -10 * sims.max())

# calibrate a threshold that keeps 75% of these scores as "in"
gamma = calibrate_gamma([s.uncertainty for s in scored], q=0.75)
decisions = ["in" if s.uncertainty <= gamma else "out" for s in scored]
print(f"gamma {gamma:.4f}: {decisions}")
