"""Image/text encoder backends.

Every backend maps an image (``(H, W, 3)`` float array) and a string into
the same ``dim``-dimensional space. Outputs are returned raw; normalization
is left to the fusion and similarity code.

Backends shipped here:

* :class:`MockBackend`: hash-seeded pseudorandom unit vectors, for plumbing
  tests and cache round-trips.
* :class:`SemanticStubBackend`: a table-driven fake whose image embeddings
  follow class codes painted into the pixels; drives separation tests.
* :class:`ExportedModelBackend`: adapter for exported CLIP-style graphs
  (TorchScript, or ONNX when ``onnxruntime`` is installed).
* :class:`CachedBackend`: wraps any backend with a binary embedding cache.
"""

from __future__ import annotations

import hashlib
import io
import struct
import threading
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

__all__ = [
    "BackendError",
    "EncoderBackend",
    "image_payload",
    "text_payload",
    "payload_key",
    "mock_encode",
    "MockBackend",
    "SemanticStubBackend",
    "pixel_code",
    "code_color",
    "ExportedModelBackend",
    "preprocess_image",
    "CLIP_MEAN",
    "CLIP_STD",
    "CachedBackend",
    "write_embedding_records",
    "read_embedding_records",
    "CACHE_MAGIC",
]

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class BackendError(RuntimeError):
    """An encoder failed or produced an unusable embedding."""


@runtime_checkable
class EncoderBackend(Protocol):
    """What the pipeline needs from an encoder.

    ``concurrent`` tells the scorer whether calls may overlap; backends that
    set it to False are called from one thread at a time.
    """

    concurrent: bool

    @property
    def dim(self) -> int: ...

    def encode_image(self, image: np.ndarray) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...


def image_payload(image: np.ndarray) -> bytes:
    """Canonical bytes of an image: shape header then little-endian float64 pixels."""
    arr = np.ascontiguousarray(image, dtype="<f8")
    return struct.pack("<3I", *arr.shape) + arr.tobytes()


def text_payload(text: str) -> bytes:
    return text.encode("utf-8")


def payload_key(namespace: bytes, payload: bytes) -> bytes:
    """8-byte record key used by the embedding cache."""
    return hashlib.blake2b(namespace + b"\x00" + payload, digest_size=8).digest()


def _generator(payload: bytes, seed: int) -> np.random.Generator:
    digest = hashlib.blake2b(struct.pack("<q", seed) + payload, digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def mock_encode(payload: bytes, dim: int, seed: int = 0) -> np.ndarray:
    """Pseudorandom unit vector determined by ``(seed, payload)``.

    A counter-based generator keyed with a hash of the inputs draws ``dim``
    standard normals, which are then scaled to unit L2 norm.
    """
    if not payload:
        raise ValueError("payload must be non-empty")
    v = _generator(payload, seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class MockBackend:
    """Deterministic random-projection stand-in for a real dual encoder."""

    concurrent = True

    def __init__(self, dim: int = 512, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self._dim = int(dim)
        self.seed = int(seed)

    @property
    def dim(self) -> int:
        return self._dim

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        return mock_encode(b"image\x00" + image_payload(image), self._dim, self.seed)

    def encode_text(self, text: str) -> np.ndarray:
        return mock_encode(b"text\x00" + text_payload(text), self._dim, self.seed)


def pixel_code(rgb) -> int:
    """Integer code of an RGB pixel quantized to 8 bits per channel."""
    r, g, b = (int(np.rint(float(c) * 255.0)) for c in rgb)
    return (r << 16) | (g << 8) | b


def code_color(code: int) -> tuple[float, float, float]:
    """Inverse of :func:`pixel_code`."""
    return ((code >> 16 & 255) / 255.0, (code >> 8 & 255) / 255.0, (code & 255) / 255.0)


class SemanticStubBackend:
    """Table-driven encoder for end-to-end tests.

    Text: the prompt must mention one of the table labels; the label's
    vector is returned, plus ``template_jitter`` times a pseudorandom unit
    direction derived from the rest of the prompt.

    Images: the color of the view's center pixel is read as an object code
    and looked up in ``object_vectors``. When the top-left pixel carries a
    different code found in ``context_vectors`` (only possible when the view
    includes surroundings), that vector is added. Finally a pseudorandom
    noise vector of norm at most ``noise`` is added, seeded by the view bytes.
    """

    concurrent = True

    def __init__(
        self,
        label_vectors: Mapping[str, Sequence[float]],
        object_vectors: Mapping[int, Sequence[float]],
        context_vectors: Mapping[int, Sequence[float]] | None = None,
        noise: float = 0.0,
        template_jitter: float = 0.0,
        seed: int = 0,
    ):
        self.label_vectors = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in label_vectors.items()}
        self.object_vectors = {int(k): np.asarray(v, dtype=np.float64) for k, v in object_vectors.items()}
        self.context_vectors = {int(k): np.asarray(v, dtype=np.float64) for k, v in (context_vectors or {}).items()}
        dims = {v.shape for v in (*self.label_vectors.values(), *self.object_vectors.values(), *self.context_vectors.values())}
        if len(dims) != 1:
            raise ValueError(f"all table vectors must share one shape, got {dims}")
        (shape,) = dims
        self._dim = shape[0]
        self.noise = float(noise)
        self.template_jitter = float(template_jitter)
        self.seed = int(seed)
        # longest first so "traffic light" wins over "light"
        self._labels = sorted(self.label_vectors, key=len, reverse=True)

    @property
    def dim(self) -> int:
        return self._dim

    @classmethod
    def from_table(cls, table: Mapping) -> "SemanticStubBackend":
        """Build from the JSON table layout used in run configs."""
        return cls(
            label_vectors=table["labels"],
            object_vectors={int(k): v for k, v in table["objects"].items()},
            context_vectors={int(k): v for k, v in table.get("contexts", {}).items()},
            noise=table.get("noise", 0.0),
            template_jitter=table.get("template_jitter", 0.0),
            seed=table.get("seed", 0),
        )

    def to_table(self) -> dict:
        return {
            "labels": {k: v.tolist() for k, v in self.label_vectors.items()},
            "objects": {str(k): v.tolist() for k, v in self.object_vectors.items()},
            "contexts": {str(k): v.tolist() for k, v in self.context_vectors.items()},
            "noise": self.noise,
            "template_jitter": self.template_jitter,
            "seed": self.seed,
        }

    def encode_text(self, text: str) -> np.ndarray:
        lowered = text.lower()
        for label in self._labels:
            if label in lowered:
                vec = self.label_vectors[label].copy()
                if self.template_jitter:
                    rest = lowered.replace(label, "{label}", 1)
                    vec += self.template_jitter * mock_encode(b"template\x00" + text_payload(rest), self._dim, self.seed)
                return vec
        raise BackendError(f"stub has no label for prompt {text!r}")

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        code = pixel_code(image[h // 2, w // 2])
        try:
            vec = self.object_vectors[code].copy()
        except KeyError:
            raise BackendError(f"stub has no object vector for pixel code {code:#08x}") from None
        ctx = pixel_code(image[0, 0])
        if ctx != code and ctx in self.context_vectors:
            vec += self.context_vectors[ctx]
        if self.noise:
            rng = _generator(b"noise\x00" + image_payload(image), self.seed)
            direction = rng.standard_normal(self._dim)
            vec += self.noise * rng.uniform() * direction / np.linalg.norm(direction)
        return vec


def preprocess_image(
    image: np.ndarray,
    size: int = 224,
    mean: Sequence[float] = CLIP_MEAN,
    std: Sequence[float] = CLIP_STD,
) -> np.ndarray:
    """Resize shortest side to ``size`` (bicubic), center-crop square, normalize.

    Returns a ``(1, 3, size, size)`` float32 array.
    """
    from PIL import Image

    h, w = image.shape[:2]
    scale = size / min(h, w)
    new_w, new_h = max(size, round(w * scale)), max(size, round(h * scale))
    pil = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    pil = pil.resize((new_w, new_h), Image.BICUBIC)
    left, top = (new_w - size) // 2, (new_h - size) // 2
    arr = np.asarray(pil.crop((left, top, left + size, top + size)), dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return arr.transpose(2, 0, 1)[None]


class ExportedModelBackend:
    """Adapter for exported image and text encoder graphs.

    ``image_model`` takes a ``(1, 3, S, S)`` float32 tensor, ``text_model`` a
    ``(1, context_length)`` int64 token tensor; both return ``(1, D)``.
    Files ending in ``.onnx`` run under onnxruntime, anything else is loaded
    with ``torch.jit.load``.

    ``tokenizer`` is a callable returning token ids, or a path to a local
    Hugging Face CLIP tokenizer directory.
    """

    concurrent = False

    def __init__(
        self,
        image_model: str | Path,
        text_model: str | Path,
        tokenizer: Callable[[str], Sequence[int]] | str | Path,
        input_size: int = 224,
        mean: Sequence[float] = CLIP_MEAN,
        std: Sequence[float] = CLIP_STD,
        context_length: int = 77,
    ):
        self.input_size = int(input_size)
        self.mean = tuple(mean)
        self.std = tuple(std)
        self.context_length = int(context_length)
        self._image = _load_graph(Path(image_model))
        self._text = _load_graph(Path(text_model))
        if callable(tokenizer):
            self._tokenize = tokenizer
        else:
            from transformers import CLIPTokenizer

            tok = CLIPTokenizer.from_pretrained(str(tokenizer))
            self._tokenize = lambda s: tok(s, truncation=True, max_length=self.context_length)["input_ids"]
        self._lock = threading.Lock()
        probe = self.encode_text("a photo")
        self._dim = probe.shape[0]

    @property
    def dim(self) -> int:
        return self._dim

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        x = preprocess_image(image, self.input_size, self.mean, self.std)
        with self._lock:
            return self._image(x)

    def encode_text(self, text: str) -> np.ndarray:
        ids = list(self._tokenize(text))[: self.context_length]
        tokens = np.zeros((1, self.context_length), dtype=np.int64)
        tokens[0, : len(ids)] = ids
        with self._lock:
            return self._text(tokens)


def _load_graph(path: Path) -> Callable[[np.ndarray], np.ndarray]:
    if not path.is_file():
        raise BackendError(f"exported model not found: {path}")
    if path.suffix == ".onnx":
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise BackendError("onnxruntime is required for .onnx models") from exc
        session = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
        name = session.get_inputs()[0].name
        return lambda x: np.asarray(session.run(None, {name: x})[0], dtype=np.float64).reshape(-1)

    import torch

    module = torch.jit.load(str(path), map_location="cpu").eval()

    def run(x: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = module(torch.from_numpy(x))
        return out.detach().double().numpy().reshape(-1)

    return run


CACHE_MAGIC = b"OODE"
_HEADER = struct.Struct("<4sIQ")


def write_embedding_records(stream, keys: Sequence[bytes], vectors: np.ndarray, magic: bytes = CACHE_MAGIC) -> None:
    """Write ``header{magic, D, count}`` then ``count`` records of (8-byte key, D float32 LE)."""
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError("vectors must be a (count, D) array")
    count, dim = vectors.shape
    if len(keys) != count:
        raise ValueError("one key per vector required")
    stream.write(_HEADER.pack(magic, dim, count))
    for key, vec in zip(keys, vectors):
        if len(key) != 8:
            raise ValueError("record keys are 8 bytes")
        stream.write(key)
        stream.write(vec.tobytes())


def read_embedding_records(stream, magic: bytes = CACHE_MAGIC) -> tuple[list[bytes], np.ndarray]:
    header = stream.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise ValueError("truncated embedding file header")
    found, dim, count = _HEADER.unpack(header)
    if found != magic:
        raise ValueError(f"bad magic {found!r}, expected {magic!r}")
    keys, rows = [], np.empty((count, dim), dtype=np.float32)
    width = 8 + 4 * dim
    for i in range(count):
        rec = stream.read(width)
        if len(rec) != width:
            raise ValueError(f"truncated embedding record {i}")
        keys.append(rec[:8])
        rows[i] = np.frombuffer(rec[8:], dtype="<f4")
    return keys, rows


class CachedBackend:
    """Memoize another backend's outputs, persisted to a binary cache file.

    Vectors are stored as float32. Every call, hit or miss, returns the
    single-precision value, so cold and warm runs agree bit for bit.
    """

    def __init__(self, inner: EncoderBackend, path: str | Path | None = None):
        self.inner = inner
        self.concurrent = getattr(inner, "concurrent", False)
        self.path = Path(path) if path else None
        self._store: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, "rb") as f:
                keys, rows = read_embedding_records(f)
            if rows.shape[1] != inner.dim:
                raise BackendError(f"cache dimension {rows.shape[1]} != backend dimension {inner.dim}")
            self._store = {k: r.astype(np.float64) for k, r in zip(keys, rows)}

    @property
    def dim(self) -> int:
        return self.inner.dim

    def __len__(self):
        return len(self._store)

    def _get(self, key: bytes, compute):
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit.copy()
        vec = np.asarray(compute(), dtype=np.float64).astype(np.float32).astype(np.float64)
        with self._lock:
            self._store[key] = vec
        return vec.copy()

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        return self._get(payload_key(b"image", image_payload(image)), lambda: self.inner.encode_image(image))

    def encode_text(self, text: str) -> np.ndarray:
        return self._get(payload_key(b"text", text_payload(text)), lambda: self.inner.encode_text(text))

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.path
        if path is None:
            raise ValueError("no cache path given")
        with self._lock:
            keys = sorted(self._store)
            rows = np.array([self._store[k] for k in keys]).reshape(len(keys), self.dim)
        buf = io.BytesIO()
        write_embedding_records(buf, keys, rows)
        path.write_bytes(buf.getvalue())
        return path
