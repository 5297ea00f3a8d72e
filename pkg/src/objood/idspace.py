"""Text-augmented in-distribution embedding space.

Each ID class is represented by the normalized sum of the text embeddings
of its label rendered through every prompt template.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import BackendError, EncoderBackend, payload_key, read_embedding_records, text_payload, write_embedding_records
from .prompts import PromptSet, render_text_prompt

__all__ = [
    "DegenerateEmbeddingError",
    "IdSpace",
    "normalize_label",
    "fuse",
    "build_id_space",
    "save_id_space",
    "load_id_space",
    "IDSPACE_MAGIC",
]

IDSPACE_MAGIC = b"OODS"


class DegenerateEmbeddingError(ValueError):
    """A summed embedding has zero (or non-finite) norm and cannot be normalized."""


def normalize_label(name: str) -> str:
    """Lowercase and turn underscores into spaces: ``"Traffic_Light"`` -> ``"traffic light"``."""
    return name.replace("_", " ").strip().lower()


def fuse(vectors: Sequence[np.ndarray], what: str = "embedding", normalize_members: bool = False) -> np.ndarray:
    """L2-normalized element-wise sum, accumulated in the given order.

    With ``normalize_members`` each vector is scaled to unit norm before the
    sum (stock CLIP practice); by default raw encoder outputs are summed.
    """
    total = None
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        if normalize_members:
            n = np.linalg.norm(v)
            if not np.isfinite(n) or n == 0:
                raise DegenerateEmbeddingError(f"zero-norm member while fusing {what}")
            v = v / n
        total = v.copy() if total is None else total + v
    if total is None:
        raise DegenerateEmbeddingError(f"nothing to fuse for {what}")
    norm = np.linalg.norm(total)
    if not np.isfinite(norm) or norm == 0:
        raise DegenerateEmbeddingError(f"summed embedding for {what} has zero norm")
    return total / norm


@dataclass(frozen=True)
class IdSpace:
    """K class labels with their unit-norm augmented text embeddings (rows)."""

    labels: tuple[str, ...]
    embeddings: np.ndarray
    prompt_fingerprint: str = ""

    def __post_init__(self):
        labels = tuple(self.labels)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if not labels:
            raise ValueError("an ID space needs at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError("ID labels must be unique")
        if emb.ndim != 2 or emb.shape[0] != len(labels):
            raise ValueError(f"expected {len(labels)} embedding rows, got shape {emb.shape}")
        emb.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "embeddings", emb)

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def build_id_space(
    labels: Sequence[str],
    prompts: PromptSet,
    backend: EncoderBackend,
    normalize_labels: bool = True,
    normalize_members: bool = False,
) -> IdSpace:
    """Encode every label through every text template and fuse per label.

    Templates are summed in canonical kind order, so permuting the prompt
    set gives bit-identical embeddings.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("labels must be non-empty")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    specs = prompts.canonical()
    rows = []
    for label in labels:
        name = normalize_label(label) if normalize_labels else label
        vectors = []
        for spec in specs:
            text = render_text_prompt(spec, name)
            try:
                vectors.append(backend.encode_text(text))
            except Exception as exc:
                raise BackendError(f"text encoder failed on {text!r}: {exc}") from exc
        rows.append(fuse(vectors, what=f"label {label!r}", normalize_members=normalize_members))
    return IdSpace(tuple(labels), np.vstack(rows), prompts.fingerprint())


_STR = struct.Struct("<H")


def _write_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(_STR.pack(len(raw)))
    buf.write(raw)


def _read_str(buf) -> str:
    (n,) = _STR.unpack(buf.read(_STR.size))
    return buf.read(n).decode("utf-8")


def save_id_space(space: IdSpace, path: str | Path) -> Path:
    """Persist as embedding records, then the prompt fingerprint and the label table.

    Rows are stored as float32, matching the embedding cache layout.
    """
    buf = io.BytesIO()
    keys = [payload_key(b"label", text_payload(l)) for l in space.labels]
    write_embedding_records(buf, keys, space.embeddings, magic=IDSPACE_MAGIC)
    _write_str(buf, space.prompt_fingerprint)
    for label in space.labels:
        _write_str(buf, label)
    path = Path(path)
    path.write_bytes(buf.getvalue())
    return path


def load_id_space(path: str | Path) -> IdSpace:
    with open(path, "rb") as f:
        keys, rows = read_embedding_records(f, magic=IDSPACE_MAGIC)
        fingerprint = _read_str(f)
        labels = tuple(_read_str(f) for _ in keys)
    for key, label in zip(keys, labels):
        if key != payload_key(b"label", text_payload(label)):
            raise ValueError(f"label table does not match record key for {label!r}")
    emb = rows.astype(np.float64)
    # float32 storage loses a little norm; restore exact unit rows
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return IdSpace(labels, emb, fingerprint)
