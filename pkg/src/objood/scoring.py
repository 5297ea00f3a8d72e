"""Object embedding fusion, class similarities, uncertainty and ID/OOD decisions."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence, Union

import numpy as np

from .encoder import EncoderBackend
from .idspace import DegenerateEmbeddingError, IdSpace, fuse
from .imaging import BoundingBox
from .prompts import PromptSet, apply_visual_prompt

__all__ = [
    "ScoringConfig",
    "ScoredInstance",
    "Instance",
    "InstanceError",
    "encode_object",
    "similarities",
    "uncertainty",
    "uncertainties",
    "calibrate_gamma",
    "classify",
    "score_batch",
    "apply_threshold",
    "write_scores",
    "read_scores",
]

IN, OUT, UNDECIDED = "in", "out", "undecided"


@dataclass(frozen=True)
class ScoringConfig:
    """``tau`` is the logsumexp temperature, ``q`` the ID retention level used
    to calibrate ``gamma``; ``gamma=None`` leaves decisions undecided."""

    tau: float = 10.0
    q: float = 0.95
    gamma: float | None = None
    normalize_members: bool = False
    workers: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.q < 1:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.gamma is not None and not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")


@dataclass(frozen=True)
class ScoredInstance:
    image_id: str
    box: BoundingBox
    similarities: np.ndarray
    uncertainty: float
    decision: str = UNDECIDED
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)
    origin: str = ""
    index: int = -1


ImageSource = Union[np.ndarray, Callable[[], np.ndarray]]


class Instance(NamedTuple):
    image_id: str
    image: ImageSource
    box: BoundingBox
    origin: str = ""


@dataclass(frozen=True)
class InstanceError:
    index: int
    image_id: str
    error: Exception


def encode_object(
    image: np.ndarray,
    box: BoundingBox,
    prompts: PromptSet,
    backend: EncoderBackend,
    normalize_members: bool = False,
) -> np.ndarray:
    """Unit-norm sum of the image embeddings of every prompted view of ``box``."""
    views = [backend.encode_image(apply_visual_prompt(spec, image, box)) for spec in prompts.canonical()]
    return fuse(views, what=f"object {box.as_tuple()}", normalize_members=normalize_members)


def similarities(z: np.ndarray, space: IdSpace) -> np.ndarray:
    """Cosine similarity of ``z`` with every class embedding, in label order."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (space.dim,):
        raise ValueError(f"embedding dimension {z.shape} does not match ID space ({space.dim},)")
    zn = np.linalg.norm(z)
    if zn == 0 or not np.isfinite(zn):
        raise DegenerateEmbeddingError("cannot compare a zero-norm embedding")
    ln = np.linalg.norm(space.embeddings, axis=1)
    s = space.embeddings @ z / (ln * zn)
    return np.clip(s, -1.0, 1.0)


def uncertainty(sims, tau: float) -> float:
    """Negative temperature-scaled log-sum-exp of the similarities.

    Evaluated as ``-(tau*m + log(sum(exp(tau*(s - m)))))`` with ``m = max(s)``.
    Lower means more in-distribution.
    """
    s = np.asarray(sims, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty similarity vector")
    m = s.max()
    return float(-(tau * m + np.log(np.sum(np.exp(tau * (s - m))))))


def uncertainties(sim_matrix, tau: float) -> np.ndarray:
    """Row-wise :func:`uncertainty` for an ``(N, K)`` similarity matrix."""
    s = np.asarray(sim_matrix, dtype=np.float64)
    m = s.max(axis=1, keepdims=True)
    return -(tau * m[:, 0] + np.log(np.sum(np.exp(tau * (s - m)), axis=1)))


def calibrate_gamma(id_uncertainties: Sequence[float], q: float = 0.95) -> float:
    """Lower empirical ``q``-quantile of the ID scores.

    Returns the smallest score ``g`` in the list with at least ``ceil(q*N)``
    scores ``<= g``, so at least a fraction ``q`` of the calibration set is
    classified in-distribution.
    """
    scores = np.sort(np.asarray(id_uncertainties, dtype=np.float64))
    if scores.size == 0:
        raise ValueError("cannot calibrate on an empty score list")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    # round away float noise such as 0.07 * 100 = 7.000000000000001
    k = max(1, math.ceil(round(q * scores.size, 9)))
    return float(scores[k - 1])


def classify(u: float, gamma: float) -> str:
    if not (math.isfinite(u) and math.isfinite(gamma)):
        raise ValueError("uncertainty and gamma must be finite")
    return IN if u <= gamma else OUT


def _as_instance(item, i: int) -> Instance:
    if isinstance(item, Instance):
        return item
    if len(item) == 2:
        return Instance(str(i), item[0], item[1])
    return Instance(*item)


def score_batch(
    instances: Iterable,
    prompts: PromptSet,
    backend: EncoderBackend,
    space: IdSpace,
    config: ScoringConfig = ScoringConfig(),
) -> tuple[list[ScoredInstance], list[InstanceError]]:
    """Score every ``(image, box)`` (or :class:`Instance`) against ``space``.

    Failing instances do not abort the batch; they are returned in the
    second list with their input index. Results keep input order.
    """
    items = [_as_instance(it, i) for i, it in enumerate(instances)]

    def one(i: int):
        inst = items[i]
        try:
            image = inst.image() if callable(inst.image) else inst.image
            z = encode_object(image, inst.box, prompts, backend, config.normalize_members)
            s = similarities(z, space)
            u = uncertainty(s, config.tau)
            decision = classify(u, config.gamma) if config.gamma is not None else UNDECIDED
            return ScoredInstance(inst.image_id, inst.box, s, u, decision, z, inst.origin, i)
        except Exception as exc:
            return InstanceError(i, inst.image_id, exc)

    workers = max(1, int(config.workers or 1))
    if workers > 1 and getattr(backend, "concurrent", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(items))))
    else:
        results = [one(i) for i in range(len(items))]
    scored = [r for r in results if isinstance(r, ScoredInstance)]
    errors = [r for r in results if isinstance(r, InstanceError)]
    return scored, errors


def apply_threshold(scored: Iterable[ScoredInstance], gamma: float) -> list[ScoredInstance]:
    return [replace(s, decision=classify(s.uncertainty, gamma)) for s in scored]


_FIXED = ["image_id", "origin", "x_min", "y_min", "x_max", "y_max", "uncertainty", "decision"]


def write_scores(path: str | Path, scored: Iterable[ScoredInstance], labels: Sequence[str]) -> Path:
    """Tab-separated scores, one detection per line.

    Columns: image_id, origin, x_min, y_min, x_max, y_max, uncertainty,
    decision, then one ``sim:<label>`` column per ID class. Floats are
    written with ``repr`` so they read back exactly.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(_FIXED + [f"sim:{l}" for l in labels])
        for s in scored:
            w.writerow(
                [s.image_id, s.origin, *s.box.as_tuple(), repr(float(s.uncertainty)), s.decision]
                + [repr(float(v)) for v in s.similarities]
            )
    return path


def read_scores(path: str | Path) -> tuple[list[str], list[ScoredInstance]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0][: len(_FIXED)] != _FIXED:
        raise ValueError(f"{path} is not a score file")
    labels = [c[len("sim:"):] for c in rows[0][len(_FIXED):]]
    out = []
    for i, r in enumerate(rows[1:]):
        box = BoundingBox(*(int(v) for v in r[2:6]))
        sims = np.array([float(v) for v in r[len(_FIXED):]])
        out.append(ScoredInstance(r[0], box, sims, float(r[6]), r[7], None, r[1], i))
    return labels, out
