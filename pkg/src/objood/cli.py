"""Command-line interface.

Subcommands: ``build-space``, ``score``, ``calibrate``, ``eval``,
``ablate`` and ``render-prompts``. Every :class:`RunConfig` field has a
matching ``--flag`` that overrides the ``--config`` file.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data as D
from .encoder import BackendError
from .idspace import save_id_space
from .metrics import format_table, summarize
from .pipeline import (
    EXIT_BACKEND,
    EXIT_CONFIG,
    EXIT_DATA,
    ConfigError,
    RunConfig,
    StageError,
    _score,
    build_space,
    load_instances,
    load_split,
    make_backend,
    prompt_sets,
    run_ablation,
    run_evaluation,
)
from .prompts import PromptConfigError, apply_visual_prompt
from .scoring import apply_threshold, calibrate_gamma, read_scores, write_scores

log = logging.getLogger("objood")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override its fields")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name in ("backend", "prompts", "ablations"):
            p.add_argument(flag, dest=f.name, type=json.loads, default=None, metavar="JSON")
        else:
            kind = type(default) if default is not None else str
            p.add_argument(flag, dest=f.name, type=kind, default=None)


def _config(args) -> RunConfig:
    base = RunConfig.from_file(args.config).to_dict() if args.config else RunConfig().to_dict()
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    cfg = RunConfig.from_dict(base)
    return cfg.resolve_paths(Path.cwd())


def cmd_build_space(args) -> int:
    cfg = _config(args)
    backend = make_backend(cfg)
    text_prompts, _ = prompt_sets(cfg)
    cfg.id_space = ""  # always rebuild here
    space = build_space(cfg, backend, text_prompts, load_split(cfg))
    out = Path(args.out or Path(cfg.output_dir) / "id_space.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_id_space(space, out)
    print(f"wrote {space.k}-class ID space ({space.dim}-d) to {out}")
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    backend = make_backend(cfg)
    split = load_split(cfg)
    text_prompts, image_prompts = prompt_sets(cfg)
    space = build_space(cfg, backend, text_prompts, split)
    scored = _score(load_instances(cfg, args.which, split), image_prompts, backend, space, cfg, args.which)
    if args.gamma is not None:
        scored = apply_threshold(scored, args.gamma)
    out = Path(args.out or Path(cfg.output_dir) / f"scores_{args.which}.tsv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out, scored, space.labels)
    print(f"wrote {len(scored)} scores to {out}")
    return 0


def _uncertainties(path, origin: str | None = None) -> list[float]:
    try:
        _, scored = read_scores(path)
    except (OSError, ValueError) as exc:
        raise StageError("data", EXIT_DATA, str(exc)) from exc
    values = [s.uncertainty for s in scored if origin is None or s.origin in ("", origin)]
    if not values:
        raise StageError("data", EXIT_DATA, f"no {origin or ''} scores in {path}")
    return values


def cmd_calibrate(args) -> int:
    gamma = calibrate_gamma(_uncertainties(args.scores, "id"), args.q)
    doc = {"gamma": gamma, "q": args.q, "source": str(args.scores)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(json.dumps(doc))
    return 0


def cmd_eval(args) -> int:
    if args.id_scores or args.ood_scores:
        if not (args.id_scores and args.ood_scores):
            raise StageError("config", EXIT_CONFIG, "--id-scores and --ood-scores go together")
        q = args.q if args.q is not None else 0.95
        report = summarize(_uncertainties(args.id_scores, "id"), _uncertainties(args.ood_scores, "ood"), q, "scores")
    else:
        report = run_evaluation(_config(args))
    print(format_table([report]))
    return 0


def cmd_ablate(args) -> int:
    print(format_table(run_ablation(_config(args)), row_header="TA/VP"))
    return 0


def cmd_render_prompts(args) -> int:
    cfg = _config(args)
    _, image_prompts = prompt_sets(cfg)
    instances = load_instances(cfg, args.which, load_split(cfg))[: args.n]
    out = Path(args.out or Path(cfg.output_dir) / "prompts")
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for i, inst in enumerate(instances):
        image = inst.image()
        for spec in image_prompts:
            view = apply_visual_prompt(spec, image, inst.box)
            D.save_image(out / f"{i:04d}_{inst.image_id}_{spec.kind.value}.png", view)
            count += 1
    print(f"wrote {count} prompted views to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objood", description="Zero-shot object-level OOD scoring")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-space", help="encode the ID class labels and save the ID space")
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_space)

    p = sub.add_parser("score", help="score the ID or OOD instances into a score file")
    _add_config_flags(p)
    p.add_argument("--which", choices=("id", "ood", "calibration"), default="ood")
    p.add_argument("--gamma", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate", help="threshold from an ID score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--q", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="full evaluation, or metrics from two score files")
    _add_config_flags(p)
    p.add_argument("--id-scores")
    p.add_argument("--ood-scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="TA/VP ablation grid")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render-prompts", help="write prompted views as images")
    _add_config_flags(p)
    p.add_argument("--which", choices=("id", "ood"), default="id")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_render_prompts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, PromptConfigError) as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except D.DataError as exc:
        print(f"error: [data] {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"error: [backend] {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
