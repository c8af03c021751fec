"""Command line entry point: ``stdnet <command> ...``.

Every command exits 0 on success. Failures print one JSON object
``{"error": <kind>, "message": <text>}`` on a single stderr line and exit 1
(2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import analyze_clip
from .config import Config, load_config, save_config
from .data import SceneSpec, load_clip, make_synthetic_clip, random_scene, save_clip, synthesize_lr
from .model import param_count
from .training import evaluate, infer, load_clips, load_model, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> Config:
    raw = load_config(args.config).to_dict() if args.config else Config().to_dict()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in raw:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        raw[section][name] = _coerce(value)
    train_keys = {"steps": "steps", "lr": "lr", "out_dir": "out_dir", "resume": "resume"}
    for attr, key in train_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            raw["train"][key] = value
    if getattr(args, "seed", None) is not None:
        raw["train"]["seed"] = args.seed
        raw["model"]["seed"] = args.seed
    return Config.from_dict(raw)


def cmd_train(args):
    cfg = _config(args)
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    state = train(cfg)
    last = state.history[-1] if state.history else {}
    print(json.dumps({"steps": state.step, "out_dir": str(out), "checkpoint": str(out / "last.pt"),
                      "final": last}))


def cmd_eval(args):
    model = load_model(args.ckpt)
    table = evaluate(model, load_clips([args.data]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "metrics.csv")
        (out / "summary.txt").write_text(table.summary() + "\n")
    else:
        sys.stdout.write(table.to_csv())
    print(table.summary())


def cmd_infer(args):
    model = load_model(args.ckpt)
    pred = infer(model, args.clip, args.out, xt_row=args.xt_row)
    print(json.dumps({"frames": pred.frames, "size": list(pred.size), "out": str(args.out)}))


def cmd_analyze(args):
    _, lr, gt = load_clip(args.clip)
    s = json.loads((Path(args.clip) / "manifest.json").read_text())["scale"]
    summary = analyze_clip(lr, gt, s, args.out, threshold=args.threshold, bins=args.bins,
                           scale=args.scale, row=args.row)
    print(json.dumps(summary))


def cmd_synth(args):
    """Render clips from a scene spec.

    The spec is either a single scene (``SceneSpec`` fields) or
    ``{"random": {"n_clips": N, ...random_scene kwargs}}``; both accept
    top-level ``scale``, ``seed`` and ``depth_unit_cm``.
    """
    raw = json.loads(Path(args.spec).read_text())
    scale = int(raw.pop("scale", 4))
    seed = int(raw.pop("seed", 0))
    unit = float(raw.pop("depth_unit_cm", 0.1))
    rng = np.random.default_rng(seed)
    out = Path(args.out)
    many = "random" in raw
    if many:
        opts = dict(raw.pop("random"))
        if raw:
            raise UsageError(f"unexpected keys next to 'random': {sorted(raw)}")
        n = int(opts.pop("n_clips", 1))
        specs = [(f"clip_{i:03d}", random_scene(rng, **opts)) for i in range(n)]
    else:
        specs = [(out.name, SceneSpec.from_dict(raw))]
    written = []
    for name, spec in specs:
        rgb, gt = make_synthetic_clip(spec, rng)
        path = out / name if many else out
        save_clip(path, rgb, synthesize_lr(gt, scale), gt, clip_id=name, depth_unit_cm=unit)
        written.append(str(path))
    print(json.dumps({"clips": written}))


def cmd_params(args):
    cfg = _config(args)
    print(param_count(cfg.model))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stdnet", description="RGB-guided video depth super-resolution.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(p):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key; VALUE is parsed as JSON when possible")

    p = sub.add_parser("train", help="train a model")
    config_args(p)
    p.add_argument("--seed", type=int, help="sets train.seed and model.seed")
    p.add_argument("--resume", help="checkpoint to continue from (train.resume)")
    p.add_argument("--steps", type=int, help="train.steps")
    p.add_argument("--lr", type=float, help="train.lr")
    p.add_argument("--out", dest="out_dir", help="train.out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint and the bicubic baseline")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="clip directory or a directory of clips")
    p.add_argument("--out", help="write metrics.csv and summary.txt here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--xt-row", type=int, help="also write an x-t slice of this HR row")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("analyze", help="long-tail histograms and x-t slice of a clip")
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--scale", type=float, help="normalization in cm (default: max valid depth)")
    p.add_argument("--row", type=int, help="x-t slice row (default: middle)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="render synthetic clips")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("params", help="print the learnable parameter count")
    config_args(p)
    p.set_defaults(func=cmd_params)
    return parser


def _fail(kind: str, message, code: int) -> int:
    line = json.dumps({"error": kind, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
