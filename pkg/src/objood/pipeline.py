"""End-to-end runs: configuration, evaluation and the VP/TA ablation grid."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as D
from .encoder import BackendError, CachedBackend, ExportedModelBackend, MockBackend, SemanticStubBackend
from .idspace import IdSpace, build_id_space, load_id_space
from .metrics import EvalReport, format_table, summarize
from .prompts import PromptConfigError, PromptSet, default_prompt_set
from .scoring import (
    Instance,
    ScoredInstance,
    ScoringConfig,
    apply_threshold,
    calibrate_gamma,
    score_batch,
    similarities,
    uncertainty,
    write_scores,
)

__all__ = [
    "ConfigError",
    "StageError",
    "RunConfig",
    "make_backend",
    "prompt_sets",
    "load_instances",
    "build_space",
    "run_evaluation",
    "run_ablation",
    "rescore",
    "ABLATION_ROWS",
    "EXIT_CONFIG",
    "EXIT_DATA",
    "EXIT_BACKEND",
]

log = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 1, 2, 3

# (label, text augmentation, visual prompts) in the usual ablation-table order
ABLATION_ROWS = (("-/-", False, False), ("TA/-", True, False), ("-/VP", False, True), ("TA/VP", True, True))


class ConfigError(ValueError):
    """Inconsistent or invalid run configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``exit_code`` follows the CLI convention."""

    def __init__(self, stage: str, exit_code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    ``backend`` is a mapping with ``kind`` one of ``mock`` (``dim``,
    ``seed``), ``stub`` (``table``: JSON table path) or ``exported``
    (``image_model``, ``text_model``, ``tokenizer``, optional
    ``input_size``/``mean``/``std``/``context_length``). Any backend accepts
    ``cache``: a binary embedding cache path.
    """

    backend: dict = field(default_factory=lambda: {"kind": "mock", "dim": 512})
    prompts: list | None = None
    sigma: float = 2.0
    margin: float = 1.5
    ablations: list = field(default_factory=list)
    tau: float = 10.0
    q: float = 0.95
    split: str = ""
    id_annotations: str = ""
    id_images: str = ""
    ood_annotations: str = ""
    ood_images: str = ""
    calibration_annotations: str = ""
    calibration_images: str = ""
    min_confidence: float = 0.5
    id_space: str = ""
    output_dir: str = "runs/latest"
    enable_vp: bool = True
    enable_ta: bool = True
    normalize_labels: bool = True
    normalize_members: bool = False
    seed: int = 0
    workers: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        kind = self.backend.get("kind")
        if kind not in ("mock", "stub", "exported"):
            raise ConfigError(f"unknown backend kind {kind!r}")
        if kind == "stub" and not self.backend.get("table"):
            raise ConfigError("stub backend requires a table path")
        if kind == "exported" and not all(self.backend.get(k) for k in ("image_model", "text_model", "tokenizer")):
            raise ConfigError("exported backend requires image_model, text_model and tokenizer")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0 (0 means all cores)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = Path(path).resolve().parent
        cfg = cls.from_dict(doc)
        return cfg.resolve_paths(base)

    def resolve_paths(self, base: Path) -> "RunConfig":
        """Make relative input paths absolute with respect to ``base``."""

        def fix(p: str) -> str:
            if not p or Path(p).is_absolute():
                return p
            return str((base / p).resolve())

        for name in ("id_annotations", "id_images", "ood_annotations", "ood_images",
                     "calibration_annotations", "calibration_images", "id_space"):
            setattr(self, name, fix(getattr(self, name)))
        if self.split and self.split not in ("voc", "bdd"):
            self.split = fix(self.split)
        backend = dict(self.backend)
        for key in ("table", "image_model", "text_model", "tokenizer", "cache"):
            if isinstance(backend.get(key), str):
                backend[key] = fix(backend[key])
        self.backend = backend
        return self

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1


def make_backend(config: RunConfig):
    b = config.backend
    try:
        if b["kind"] == "mock":
            backend = MockBackend(int(b.get("dim", 512)), int(b.get("seed", config.seed)))
        elif b["kind"] == "stub":
            table = json.loads(Path(b["table"]).read_text(encoding="utf-8"))
            backend = SemanticStubBackend.from_table(table)
        else:
            extra = {k: b[k] for k in ("input_size", "mean", "std", "context_length") if k in b}
            backend = ExportedModelBackend(b["image_model"], b["text_model"], b["tokenizer"], **extra)
        if b.get("cache"):
            backend = CachedBackend(backend, b["cache"])
    except (OSError, ValueError, KeyError, BackendError) as exc:
        raise StageError("backend", EXIT_BACKEND, str(exc)) from exc
    return backend


def base_prompt_set(config: RunConfig) -> PromptSet:
    try:
        if config.prompts:
            return PromptSet.from_list(config.prompts)
        return default_prompt_set(sigma=config.sigma, margin=config.margin, ablations=config.ablations)
    except (PromptConfigError, ValueError, TypeError) as exc:
        raise StageError("prompts", EXIT_CONFIG, str(exc)) from exc


def prompt_sets(config: RunConfig, enable_ta: bool | None = None, enable_vp: bool | None = None) -> tuple[PromptSet, PromptSet]:
    """(text prompts, image prompts) after applying the ablation switches.

    Without text augmentation every template becomes the plain one; without
    visual prompts only the tight crop is encoded.
    """
    ta = config.enable_ta if enable_ta is None else enable_ta
    vp = config.enable_vp if enable_vp is None else enable_vp
    full = base_prompt_set(config)
    return (full if ta else full.plain_text()), (full if vp else full.crop_only())


def load_split(config: RunConfig) -> D.SplitConfig | None:
    if not config.split:
        return None
    try:
        if config.split in ("voc", "bdd"):
            return D.builtin_split(config.split)
        return D.load_split_config(config.split)
    except D.DataError as exc:
        raise StageError("data", EXIT_DATA, str(exc)) from exc


def load_instances(config: RunConfig, which: str, split: D.SplitConfig | None = None) -> list[Instance]:
    """Instances for ``which`` in ``{"id", "ood", "calibration"}``, images loaded lazily."""
    if which == "calibration" and not config.calibration_annotations:
        which_ann, which_img, origin = config.id_annotations, config.id_images, "id"
    else:
        which_ann = getattr(config, f"{which}_annotations")
        which_img = getattr(config, f"{which}_images")
        origin = "id" if which == "calibration" else which
    if not which_ann:
        raise StageError("data", EXIT_CONFIG, f"no {which} annotation file configured")
    try:
        records = D.load_coco_annotations(which_ann, which_img, origin=origin, min_confidence=config.min_confidence)
        if split is not None:
            records = D.apply_split(records, split, origin)
    except D.DataError as exc:
        raise StageError("data", EXIT_DATA, str(exc)) from exc
    return [
        Instance(r.image_id, _Loader(r.image_path), r.box, r.origin)
        for r in records
    ]


@dataclass(frozen=True)
class _Loader:
    path: Path

    def __call__(self) -> np.ndarray:
        return D.read_image_cached(self.path)


def class_labels(config: RunConfig, split: D.SplitConfig | None, space: IdSpace | None = None) -> list[str]:
    if split is not None:
        return list(split.id_class_names)
    if space is not None:
        return list(space.labels)
    raise StageError("config", EXIT_CONFIG, "a split (ID class list) or a saved ID space is required")


def build_space(config: RunConfig, backend, text_prompts: PromptSet, split=None) -> IdSpace:
    if config.id_space and Path(config.id_space).is_file():
        space = load_id_space(config.id_space)
        if space.prompt_fingerprint != text_prompts.fingerprint():
            log.warning("saved ID space was built with different prompts (%s != %s)",
                        space.prompt_fingerprint, text_prompts.fingerprint())
        return space
    labels = class_labels(config, split)
    try:
        return build_id_space(labels, text_prompts, backend, config.normalize_labels, config.normalize_members)
    except BackendError as exc:
        raise StageError("idspace", EXIT_BACKEND, str(exc)) from exc


def _score(instances, image_prompts, backend, space, config: RunConfig, what: str) -> list[ScoredInstance]:
    scoring = ScoringConfig(config.tau, config.q, None, config.normalize_members, config.n_workers)
    scored, errors = score_batch(instances, image_prompts, backend, space, scoring)
    for err in errors:
        log.error("%s instance %d (image %s) failed: %s", what, err.index, err.image_id, err.error)
    if not scored:
        first = errors[0].error if errors else "no instances"
        code = EXIT_BACKEND if isinstance(first, BackendError) else EXIT_DATA
        raise StageError("score", code, f"no {what} instance could be scored: {first}")
    return scored


def rescore(scored: Sequence[ScoredInstance], space: IdSpace, tau: float) -> list[ScoredInstance]:
    """Re-evaluate stored fused embeddings against another ID space."""
    out = []
    for s in scored:
        sims = similarities(s.embedding, space)
        out.append(dataclasses.replace(s, similarities=sims, uncertainty=uncertainty(sims, tau)))
    return out


def _report(id_scored, ood_scored, q: float, name: str) -> EvalReport:
    return summarize([s.uncertainty for s in id_scored], [s.uncertainty for s in ood_scored], q, name)


def run_evaluation(config: RunConfig, backend=None) -> EvalReport:
    """Build the ID space, calibrate on ID, score ID and OOD, write artifacts.

    Writes ``config.json``, ``scores.tsv``, ``eval_report.json`` and
    ``eval_report.txt`` into ``config.output_dir``. The FPR metric always
    uses the threshold that keeps ``q`` of the evaluated ID scores, while
    the decisions in ``scores.tsv`` and the report's ``gamma_used`` come
    from the calibration set (the ID set unless one is configured).
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    backend = backend or make_backend(config)
    split = load_split(config)
    text_prompts, image_prompts = prompt_sets(config)
    space = build_space(config, backend, text_prompts, split)

    id_inst = load_instances(config, "id", split)
    ood_inst = load_instances(config, "ood", split)
    id_scored = _score(id_inst, image_prompts, backend, space, config, "ID")
    scores_path = out / "scores.tsv"
    write_scores(scores_path, id_scored, space.labels)  # flushed early for debugging
    ood_scored = _score(ood_inst, image_prompts, backend, space, config, "OOD")

    if config.calibration_annotations:
        cal_scored = _score(load_instances(config, "calibration", split), image_prompts, backend, space, config, "calibration")
    else:
        cal_scored = id_scored
    gamma = calibrate_gamma([s.uncertainty for s in cal_scored], config.q)
    id_scored, ood_scored = apply_threshold(id_scored, gamma), apply_threshold(ood_scored, gamma)
    write_scores(scores_path, [*id_scored, *ood_scored], space.labels)

    report = _report(id_scored, ood_scored, config.q, _row_name(config.enable_ta, config.enable_vp))
    report = dataclasses.replace(report, gamma_used=gamma)
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "eval_report.txt").write_text(format_table([report]) + "\n", encoding="utf-8")
    if isinstance(backend, CachedBackend) and backend.path:
        backend.save()
    return report


def _row_name(ta: bool, vp: bool) -> str:
    return f"{'TA' if ta else '-'}/{'VP' if vp else '-'}"


def run_ablation(config: RunConfig, backend=None) -> list[EvalReport]:
    """Evaluate the {TA, VP} x {off, on} grid.

    Fused image embeddings are computed once per visual setting and reused
    across both text settings. Rows come back in :data:`ABLATION_ROWS` order.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    backend = backend or make_backend(config)
    split = load_split(config)
    id_inst = load_instances(config, "id", split)
    ood_inst = load_instances(config, "ood", split)

    spaces = {}
    for ta in (False, True):
        text_prompts, _ = prompt_sets(config, enable_ta=ta)
        labels = class_labels(config, split)
        try:
            spaces[ta] = build_id_space(labels, text_prompts, backend, config.normalize_labels, config.normalize_members)
        except BackendError as exc:
            raise StageError("idspace", EXIT_BACKEND, str(exc)) from exc

    encoded = {}
    for vp in (False, True):
        _, image_prompts = prompt_sets(config, enable_vp=vp)
        encoded[vp] = (
            _score(id_inst, image_prompts, backend, spaces[False], config, "ID"),
            _score(ood_inst, image_prompts, backend, spaces[False], config, "OOD"),
        )

    reports = []
    for name, ta, vp in ABLATION_ROWS:
        id_s, ood_s = (rescore(s, spaces[ta], config.tau) for s in encoded[vp])
        reports.append(_report(id_s, ood_s, config.q, name))
    (out / "ablation.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True), encoding="utf-8")
    (out / "ablation.txt").write_text(format_table(reports, row_header="TA/VP") + "\n", encoding="utf-8")
    return reports

