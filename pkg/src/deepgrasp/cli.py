"""Command-line entry point: ``deepgrasp <command> [options]``.

Configuration is a flat ``key = value`` text file with dotted keys (see
``deepgrasp config`` for every key and its default).  Values from
``--config`` are overridden by ``--set key=value`` and by the dedicated
flags.  Each run writes into a fresh ``<out.dir>/<command>-<timestamp>``
directory that starts with ``config.txt``, the fully resolved configuration,
which can be passed back with ``--config`` to reproduce the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import render
from .analysis import mode_sparsity
from .detection import (Gripper, NoCandidates, SearchSpace, detect_exhaustive, detect_two_stage,
                        score_heatmap)
from .errors import DataError, NumericalError
from .evaluation import MetricConfig, cross_validate, evaluate, format_table
from .network import CascadeParams, load_model, save_model
from .regularization import KINDS, RegConfig
from .rgbd import CHANNELS, load_cornell, load_scene, save_cornell
from .synth import SynthSpec, synth_scene
from .training import TrainConfig, build_dataset, train_cascade

log = logging.getLogger("deepgrasp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _opt(parse):
    def f(text):
        return None if text == "" else parse(text)
    return f


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _seeds(text):
    """``a:b`` (half-open range) or a comma list."""
    if ":" in text:
        a, b = text.split(":")
        return tuple(range(int(a), int(b)))
    return _ints(text)


# key -> (default text, parser, help)
KEYS = {
    "seed": ("0", int, "master seed for initialization"),
    "out.dir": ("runs", str, "parent of the per-run output directories"),
    "data.path": ("", str, "Cornell-layout dataset directory; empty means synthetic scenes"),
    "data.window": ("7", int, "normal-estimation window (odd)"),
    "synth.train_seeds": ("100:130", _seeds, "seeds of the synthetic training scenes (a:b or list)"),
    "synth.test_seeds": ("500:510", _seeds, "seeds of the synthetic held-out scenes"),
    "synth.n_bars": ("1", int, "graspable bars per scene"),
    "synth.n_distractors": ("1", int, "non-graspable shapes per scene"),
    "synth.noise": ("0.02", float, "per-channel noise sigma"),
    "synth.modes": (",".join(CHANNELS), _names, "channels that carry the scene"),
    "synth.size": ("96", int, "image side in pixels"),
    "synth.images_per_object": ("1", int, "consecutive seeds sharing one object id"),
    "patch.side": ("24", int, "patch side in cells"),
    "patch.cap": ("2.0", float, "upper bound on the mask scaling factor"),
    "net.small": ("50,50", _ints, "hidden sizes of the first-pass network"),
    "net.large": ("200,200", _ints, "hidden sizes of the re-ranking network"),
    "train.lambda": ("3.0", float, "hidden-activation sparsity weight during pretraining"),
    "train.optimizer": ("lbfgs", str, "lbfgs or gd"),
    "train.max_iters": ("400", int, "iteration cap per optimization stage"),
    "train.finetune_iters": ("", _opt(int), "iteration cap for fine-tuning (default: max_iters)"),
    "train.tol": ("1e-6", float, "relative objective change that stops a stage"),
    "train.minibatch": ("", _opt(int), "pretraining subsample size (default: all examples)"),
    "reg.kind": ("l1", str, "layer-1 weight regularizer: " + ", ".join(KINDS)),
    "reg.beta": ("", _opt(float), "layer-1 regularizer weight (default depends on kind)"),
    "reg.p": ("2", float, "group p-norm exponent"),
    "reg.alpha": ("20", float, "smooth-max sharpness"),
    "reg2.kind": ("l1", str, "layer-2 weight regularizer"),
    "reg2.beta": ("", _opt(float), "layer-2 regularizer weight"),
    "search.preset": ("auto", str, "default | synthetic | auto (synthetic when data.path is empty)"),
    "search.angle_step_deg": ("", _opt(float), "orientation step in degrees"),
    "search.stride": ("", _opt(float), "candidate center spacing in pixels"),
    "search.len": ("", _opt(_floats), "candidate plate lengths"),
    "search.wid": ("", _opt(_floats), "candidate plate separations"),
    "gripper.min_wid": ("", _opt(float), "smallest admissible plate separation"),
    "gripper.max_wid": ("", _opt(float), "largest admissible plate separation"),
    "gripper.min_len": ("", _opt(float), "smallest admissible plate length"),
    "gripper.max_len": ("", _opt(float), "largest admissible plate length"),
    "detect.T": ("100", int, "candidates re-scored by the large network"),
    "detect.mode": ("two_stage", str, "two_stage or exhaustive"),
    "metric.max_angle_deg": ("30", float, "rectangle metric orientation tolerance"),
    "metric.min_jaccard": ("0.25", float, "rectangle metric overlap threshold"),
    "metric.point_dist": ("", _opt(float), "point metric radius in pixels (default: quarter diagonal)"),
    "eval.regs": ("", _opt(_names), "layer-1 regularizers to compare (default: reg.kind)"),
    "eval.splits": ("", _opt(_names), "holdout, image_wise, object_wise (default: holdout if synthetic)"),
    "eval.k": ("5", int, "cross-validation folds"),
}


def read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key] = value
    return values


def resolve(overrides):
    """Merge text overrides onto the defaults and parse every value."""
    unknown = sorted(set(overrides) - set(KEYS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    text = {k: overrides.get(k, d) for k, (d, _, _) in KEYS.items()}
    parsed = {}
    for k, (_, parse, _) in KEYS.items():
        try:
            parsed[k] = parse(text[k])
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {text[k]!r} ({exc})") from None
    for key in ("reg.kind", "reg2.kind"):
        if parsed[key] not in KINDS:
            raise UsageError(f"{key} must be one of {', '.join(KINDS)}")
    for kind in parsed["eval.regs"] or ():
        if kind not in KINDS:
            raise UsageError(f"eval.regs: unknown regularizer {kind!r}")
    if parsed["detect.mode"] not in ("two_stage", "exhaustive"):
        raise UsageError("detect.mode must be two_stage or exhaustive")
    if parsed["search.preset"] not in ("auto", "default", "synthetic"):
        raise UsageError("search.preset must be auto, default or synthetic")
    if parsed["data.path"] and not Path(parsed["data.path"]).is_dir():
        raise DataError(f"dataset directory not found: {parsed['data.path']}")
    return text, parsed


def dump_config(text, command_line=None):
    lines = [f"# deepgrasp {command_line}"] if command_line else []
    lines += [f"{k} = {text[k]}" for k in sorted(text)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Config -> library objects
# ---------------------------------------------------------------------------

def _reg(kind, beta, cfg):
    extra = {"p": cfg["reg.p"], "alpha": cfg["reg.alpha"]}
    return RegConfig.default_for(kind, **extra) if beta is None else RegConfig(kind, beta, **extra)


def train_config(cfg, reg_kind=None):
    """TrainConfig from the resolved keys; ``reg_kind`` swaps the layer-1 regularizer.

    reg.beta only applies to reg.kind; another kind gets its own default weight.
    """
    kind = reg_kind or cfg["reg.kind"]
    beta = cfg["reg.beta"] if kind == cfg["reg.kind"] else None
    return TrainConfig(
        reg1=_reg(kind, beta, cfg),
        reg2=_reg(cfg["reg2.kind"], cfg["reg2.beta"], cfg),
        lam=cfg["train.lambda"], optimizer=cfg["train.optimizer"], max_iters=cfg["train.max_iters"],
        finetune_iters=cfg["train.finetune_iters"], tol=cfg["train.tol"], seed=cfg["seed"],
        minibatch=cfg["train.minibatch"], cap=cfg["patch.cap"])


def search_space(cfg):
    preset = cfg["search.preset"]
    if preset == "auto":
        preset = "default" if cfg["data.path"] else "synthetic"
    base = SearchSpace.for_synthetic() if preset == "synthetic" else SearchSpace()
    g = Gripper(*(cfg[f"gripper.{k}"] if cfg[f"gripper.{k}"] is not None else getattr(Gripper(), k)
                  for k in ("min_wid", "max_wid", "min_len", "max_len")))
    step = cfg["search.angle_step_deg"]
    return SearchSpace(math.radians(step) if step is not None else base.angle_step,
                       cfg["search.stride"] or base.position_stride,
                       cfg["search.len"] or base.len_set, cfg["search.wid"] or base.wid_set, g)


def metric_config(cfg):
    return MetricConfig(cfg["detect.T"], cfg["metric.max_angle_deg"], cfg["metric.min_jaccard"],
                        cfg["metric.point_dist"])


def synth_spec(cfg):
    n = cfg["synth.size"]
    return SynthSpec(n_bars=cfg["synth.n_bars"], n_distractors=cfg["synth.n_distractors"],
                     noise_sigma=cfg["synth.noise"], relevant_modes=cfg["synth.modes"], height=n, width=n)


def synth_scenes(cfg, seeds):
    spec, per = synth_spec(cfg), cfg["synth.images_per_object"]
    return [synth_scene(s, spec, image_id=s, object_id=s // per) for s in seeds]


def load_scenes(cfg, which="train"):
    """Training (or held-out) scenes; a Cornell dataset has no separate held-out set."""
    if cfg["data.path"]:
        scenes = load_cornell(cfg["data.path"], cfg["data.window"])
        if not scenes:
            raise DataError(f"no annotated images found under {cfg['data.path']}")
        return scenes
    return synth_scenes(cfg, cfg[f"synth.{which}_seeds"])


def find_image(cfg, image):
    """Scene for ``--image``: a path to a ``pcd*r.png`` file or an image id."""
    if not image.isdigit():
        return load_scene(image, cfg["data.window"], require_labels=False)
    image_id = int(image)
    if cfg["data.path"]:
        for sc in load_cornell(cfg["data.path"], cfg["data.window"]):
            if sc.image_id == image_id:
                return sc
        raise DataError(f"image id {image_id} not found under {cfg['data.path']}")
    return synth_scenes(cfg, [image_id])[0]


def load_cascade(model_dir):
    model_dir = Path(model_dir)
    paths = [model_dir / "small.model", model_dir / "large.model"]
    for p in paths:
        if not p.exists():
            raise DataError(f"model file not found: {p}")
    return CascadeParams(load_model(paths[0]), load_model(paths[1]))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")


def _train_outputs(run, cascade, reports, norm, suffix=""):
    save_model(cascade.small, run / f"small{suffix}.model")
    save_model(cascade.large, run / f"large{suffix}.model")
    (run / "norm.json").write_text(json.dumps({"mean": list(norm.mean), "std": list(norm.std)}) + "\n")
    rows = []
    for net, rep in reports.items():
        for stage, recs in rep.records.items():
            rows += [{"net": net, "stage": stage, **r} for r in recs]
    _write_jsonl(run / "traces.jsonl", rows)
    report = {net: mode_sparsity(getattr(cascade, net).W1, getattr(cascade, net).modality).as_dict()
              for net in ("small", "large")}
    for net, ms in report.items():
        ms["modes"] = list(CHANNELS)
    (run / "mode_sparsity.json").write_text(json.dumps(report, indent=1) + "\n")
    summary = {net: {"sizes": rep.sizes, "train_accuracy": rep.train_accuracy, "examples": rep.n_examples,
                     "flops_per_iter": rep.flops_per_iter,
                     "iterations": {k: max(len(v) - 1, 0) for k, v in rep.traces.items()}}
               for net, rep in reports.items()}
    (run / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def _fit(cfg, scenes, reg_kind=None, finetune_net=True):
    config = train_config(cfg, reg_kind)
    data, norm = build_dataset(scenes, cfg["patch.side"], config.cap)
    cascade, reports = train_cascade(scenes, cfg["net.small"], cfg["net.large"], config, cfg["patch.side"],
                                     data=data, norm=norm, finetune_net=finetune_net)
    return cascade, reports, norm


def cmd_synth(cfg, args, run):
    dest = Path(args.dest) if args.dest else run / "data"
    train = synth_scenes(cfg, cfg["synth.train_seeds"])
    test = synth_scenes(cfg, cfg["synth.test_seeds"])
    save_cornell(train, dest / "train")
    save_cornell(test, dest / "test")
    log.info("wrote %d training and %d held-out scenes under %s", len(train), len(test), dest)
    return {"train": str(dest / "train"), "test": str(dest / "test")}


def cmd_pretrain(cfg, args, run):
    cascade, reports, norm = _fit(cfg, load_scenes(cfg), finetune_net=False)
    return _train_outputs(run, cascade, reports, norm, suffix=".pretrain")


def cmd_train(cfg, args, run):
    cascade, reports, norm = _fit(cfg, load_scenes(cfg))
    return _train_outputs(run, cascade, reports, norm)


def _detect(cfg, cascade, scene, exhaustive):
    if exhaustive:
        return detect_exhaustive(cascade.large, scene.image, search_space(cfg))
    return detect_two_stage(cascade, scene.image, search_space(cfg), cfg["detect.T"])


def cmd_detect(cfg, args, run):
    cascade = load_cascade(args.models)
    scene = find_image(cfg, args.image)
    exhaustive = cfg["detect.mode"] == "exhaustive"
    result = _detect(cfg, cascade, scene, exhaustive)
    if isinstance(result, NoCandidates):
        _write_jsonl(run / "records.jsonl", [{"type": "none", "reason": result.reason}])
        log.warning("no candidates: %s", result.reason)
        return {"best": None}
    _write_jsonl(run / "records.jsonl", result.records())
    render.save_png(run / "overlay.png", render.overlay(scene.image.rgb(), result.best))
    return {"best": list(result.best.as_tuple()), "score": result.best_score}


def cmd_heatmap(cfg, args, run):
    cascade = load_cascade(args.models)
    scene = find_image(cfg, args.image)
    net = getattr(cascade, args.net)
    left, right = score_heatmap(net, scene.image, search_space(cfg))
    render.save_png(run / "heatmap_left.png", render.heatmap_gray(left))
    render.save_png(run / "heatmap_right.png", render.heatmap_gray(right))
    np.savez(run / "heatmap.npz", left=left, right=right)
    finite = np.concatenate([left[np.isfinite(left)], right[np.isfinite(right)]])
    return {"max_score": float(finite.max()) if finite.size else None}


def _cache_key(cfg_text, reg_kind, scenes):
    relevant = {k: v for k, v in cfg_text.items() if k.split(".")[0] in ("seed", "data", "synth", "patch", "net",
                                                                         "train", "reg", "reg2")}
    relevant["reg.kind"] = reg_kind
    relevant["train_ids"] = [sc.image_id for sc in scenes]
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]


def cmd_eval(cfg, args, run, cfg_text):
    regs = cfg["eval.regs"] or (cfg["reg.kind"],)
    splits = cfg["eval.splits"] or (("holdout",) if not cfg["data.path"] else ("image_wise", "object_wise"))
    if "holdout" in splits and cfg["data.path"]:
        raise UsageError("eval.splits=holdout needs synthetic data; use image_wise or object_wise")
    space, metrics = search_space(cfg), metric_config(cfg)
    cache = Path(args.cache) if args.cache else None

    def trainer(kind):
        def fit(scenes):
            slot = cache / _cache_key(cfg_text, kind, scenes) if cache else None
            if slot is not None and (slot / "large.model").exists():
                log.info("using cached models from %s", slot)
                return load_cascade(slot)
            cascade, _, _ = _fit(cfg, scenes, kind)
            if slot is not None:
                slot.mkdir(parents=True, exist_ok=True)
                save_model(cascade.small, slot / "small.model")
                save_model(cascade.large, slot / "large.model")
            return cascade
        return fit

    reports = []
    for kind in regs:
        for split in splits:
            fit = trainer(kind)
            if split == "holdout":
                rep = evaluate(fit(load_scenes(cfg, "train")), load_scenes(cfg, "test"), space, metrics, label=kind)
                rep.split_mode = "holdout"
            else:
                scenes = load_scenes(cfg, "train")
                if not cfg["data.path"]:
                    scenes = scenes + load_scenes(cfg, "test")
                rep = cross_validate(scenes, fit, space, split, cfg["eval.k"], cfg["seed"], metrics, label=kind)
            reports.append(rep)
            log.info("%s", rep.row())
    _write_jsonl(run / "report.jsonl", [r.to_record() for r in reports])
    table = format_table(reports)
    (run / "table.txt").write_text(table + "\n")
    print(table)
    return {"rows": len(reports)}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


HEATMAP_HELP = (f"Writes heatmap_left.png and heatmap_right.png (8-bit grayscale, image size).  A pixel holds "
                f"the best score of any candidate whose left (right) plate center rounds to it, mapped to "
                f"1 + round(254 * score); pixels no candidate reaches have shade {render.ABSENT_SHADE} (black).  "
                f"Raw float planes (NaN for absent) go to heatmap.npz.")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--data", help="dataset directory (data.path)")
    common.add_argument("--out", help="parent output directory (out.dir)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--reg", choices=KINDS, help="layer-1 regularizer (reg.kind)")
    common.add_argument("--beta", type=float, help="layer-1 regularizer weight (reg.beta)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = _Parser(prog="deepgrasp", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write synthetic scenes in the Cornell layout")
    s.add_argument("--dest", help="target directory (default: <run>/data)")
    sub.add_parser("pretrain", parents=[common], help="autoencoder pretraining only; writes *.pretrain.model")
    sub.add_parser("train", parents=[common], help="train the small and large networks")

    def needs_models(q):
        q.add_argument("--models", required=True, help="directory with small.model and large.model")
        q.add_argument("--image", required=True, help="image id in the dataset, or path to a pcdNNNNr.png file")

    d = sub.add_parser("detect", parents=[common], help="find the best grasp in one image",
                       description="Writes records.jsonl (one summary line, then the top-T candidates) and "
                                   "overlay.png with the best rectangle: plate edges green, other edges red.")
    needs_models(d)
    mode = d.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true", help="score every candidate with the large network")
    mode.add_argument("--two-stage", action="store_true", help="small network ranks, large re-scores top T")
    d.add_argument("--T", type=int, help="candidates re-scored in the second stage (detect.T)")

    h = sub.add_parser("heatmap", parents=[common], help="per-pixel plate score maps", description=HEATMAP_HELP)
    needs_models(h)
    h.add_argument("--net", choices=("small", "large"), default="large", help="network to score with")
    for k in ("min_wid", "max_wid", "min_len", "max_len"):
        h.add_argument(f"--{k.replace('_', '-')}", type=float, dest=k, help=f"gripper.{k}")

    e = sub.add_parser("eval", parents=[common], help="recognition and detection tables",
                       description="One table row per (regularizer, split).")
    e.add_argument("--regs", help="comma list of layer-1 regularizers (eval.regs)")
    e.add_argument("--splits", help="comma list of holdout, image_wise, object_wise (eval.splits)")
    e.add_argument("--T", type=int, help="detect.T")
    e.add_argument("--cache", help="reuse models trained with an identical config from this directory")

    sub.add_parser("config", parents=[common], help="print every config key with its resolved value")
    return p


def _overrides(args):
    values = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    flags = {"data.path": args.data, "out.dir": args.out, "seed": args.seed, "reg.kind": args.reg,
             "reg.beta": args.beta, "detect.T": getattr(args, "T", None),
             "eval.regs": getattr(args, "regs", None), "eval.splits": getattr(args, "splits", None)}
    if getattr(args, "exhaustive", False):
        flags["detect.mode"] = "exhaustive"
    if getattr(args, "two_stage", False):
        flags["detect.mode"] = "two_stage"
    if args.command == "heatmap":
        flags.update({f"gripper.{k}": getattr(args, k) for k in ("min_wid", "max_wid", "min_len", "max_len")})
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return values


def _run_dir(parent, command):
    parent = Path(parent)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run = parent / f"{command}-{stamp}"
    n = 1
    while run.exists():
        n += 1
        run = parent / f"{command}-{stamp}-{n}"
    run.mkdir(parents=True)
    return run


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)  # basicConfig is a no-op if handlers exist
    try:
        text, cfg = resolve(_overrides(args))
        if args.command == "config":
            sys.stdout.write(dump_config(text))
            return EXIT_OK
        run = _run_dir(cfg["out.dir"], args.command)
        (run / "config.txt").write_text(dump_config(text, " ".join(argv)))
        handler = logging.FileHandler(run / "log.txt")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
        try:
            commands = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train, "detect": cmd_detect,
                        "heatmap": cmd_heatmap}
            if args.command == "eval":
                result = cmd_eval(cfg, args, run, text)
            else:
                result = commands[args.command](cfg, args, run)
        finally:
            logging.getLogger().removeHandler(handler)
            handler.close()
        print(json.dumps({"run_dir": str(run), **(result or {})}))
        return EXIT_OK
    except (UsageError, ValueError) as exc:
        print(f"deepgrasp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"deepgrasp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"deepgrasp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
