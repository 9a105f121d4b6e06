"""Command-line surface.

Subcommands: ``synth`` (dataset generation), ``train`` (optimization and
the ablation sweep), ``infer`` (alpha + adapted trimap for one image),
``eval`` (metric reports over directories), and ``trimap`` (derive and
degrade tools). Every run echoes its resolved configuration, settings come
from an optional JSON file mirrored by ``--set key=value`` overrides, and
exit codes are 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .matting import (
    ExtentError,
    degrade_trimap,
    derive_optimal_trimap,
    random_degrade_radii,
    trimap_to_value_plane,
    DEFAULT_EPS,
    UNKNOWN,
)
from .metrics import evaluate
from .model import ModelConfig
from .netpbm import PNMError, read_alpha, read_image, read_trimap, write_alpha, write_trimap
from .synth import read_dataset, write_dataset
from .tensor import NonFiniteError, Tensor
from .trainer import (
    CheckpointError,
    TrainConfig,
    evaluate_model,
    format_ablation_table,
    load_model_for_eval,
    run_ablations,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags or malformed configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through UsageError
    # so unknown flags and missing arguments land on exit code 1 instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _ensure_parent(path):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def resolve_config(path, assignments):
    """JSON config document plus dotted-path overrides."""
    if path:
        with open(path) as fp:
            doc = json.load(fp)
        if not isinstance(doc, dict):
            raise UsageError(f"config root must be a JSON object: {path}")
    else:
        doc = {}
    for item in assignments or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise UsageError(f"--set path {key!r} crosses non-object {part!r}")
            node = nxt
        node[parts[-1]] = _coerce(val)
    return doc


def echo_config(command, settings):
    print(f"[{command}] config: {json.dumps(settings, sort_keys=True)}")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args):
    settings = {"out": args.out, "count": args.count, "seed": args.seed,
                "size": args.size, "kind": args.kind, "hard_frac": args.hard_frac,
                "degrade": [args.degrade_min, args.degrade_max]}
    echo_config("synth", settings)
    manifest = write_dataset(args.out, args.count, args.seed, size=args.size,
                             kind=args.kind, hard_frac=args.hard_frac,
                             degrade_range=(args.degrade_min, args.degrade_max))
    print(f"wrote {manifest['count']} samples to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _build_configs(doc):
    try:
        train_cfg = TrainConfig(**doc.get("train", {}))
    except TypeError as e:
        raise UsageError(f"train config: {e}") from None
    try:
        model_cfg = ModelConfig(**doc.get("model", {}))
    except TypeError as e:
        raise UsageError(f"model config: {e}") from None
    return train_cfg, model_cfg


def cmd_train(args):
    doc = resolve_config(args.config, args.set)
    train_cfg, model_cfg = _build_configs(doc)
    echo_config("train", {"dataset": args.dataset, "out": args.out,
                          "ablate": args.ablate, "eval": args.eval_dir,
                          "resume": args.resume,
                          "train": train_cfg.as_dict(),
                          "model": model_cfg.as_dict()})
    if args.ablate:
        if args.eval_dir is None:
            raise UsageError("--ablate requires --eval-dir")
        rows = run_ablations(args.dataset, args.eval_dir, model_cfg, train_cfg,
                             args.out)
        sys.stdout.write(format_ablation_table(rows))
        print(f"ablation artifacts in {args.out}")
        return EXIT_OK
    final = train(args.dataset, train_cfg, model_cfg, args.out,
                  resume_from=args.resume, checkpoint_every=args.checkpoint_every)
    print(f"final checkpoint: {final}")
    if args.eval_dir is not None:
        samples, _ = read_dataset(args.eval_dir)
        net, _ = load_model_for_eval(final)
        stats = evaluate_model(net, samples)
        path = os.path.join(args.out, "metrics.json")
        with open(path, "w") as fp:
            json.dump(stats, fp, indent=2, sort_keys=True)
            fp.write("\n")
        print(f"held-out: acc={stats['trimap_acc']:.4f} "
              f"miou={stats['trimap_miou']:.4f} mse={stats['mse']:.5f} "
              f"sad={stats['sad']:.2f} grad={stats['grad']:.4f}")
        print(f"metrics written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args):
    settings = {"ckpt": args.ckpt, "image": args.image, "trimap": args.trimap,
                "out_alpha": args.out_alpha, "out_trimap": args.out_trimap,
                "snap": args.snap}
    echo_config("infer", settings)
    net, model_cfg = load_model_for_eval(args.ckpt)
    image = read_image(args.image)
    trimap = read_trimap(args.trimap, snap=args.snap)
    if image.shape[:2] != trimap.shape:
        raise ExtentError(f"image {image.shape[:2]} and trimap {trimap.shape} "
                          f"extents differ")
    x = np.concatenate([np.moveaxis(image, -1, 0),
                        trimap_to_value_plane(trimap)[None]], axis=0)
    h, w = trimap.shape
    d = model_cfg.downsample
    pad_h, pad_w = (-h) % d, (-w) % d
    if pad_h or pad_w:
        # mirror the border out to the next stride multiple, crop after
        mode = "reflect" if pad_h < h and pad_w < w else "edge"
        x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode=mode)
        print(f"padded {h}x{w} to {h + pad_h}x{w + pad_w} ({mode})")
    out = net(Tensor(x[None].astype(np.float32)))
    _ensure_parent(args.out_alpha)
    _ensure_parent(args.out_trimap)
    write_alpha(args.out_alpha, out.alpha_final[0, :h, :w])
    write_trimap(args.out_trimap, out.trimap_labels[0, :h, :w])
    print(f"wrote {args.out_alpha} and {args.out_trimap}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


EVAL_COLUMNS = ["stem", "grad", "sad", "mse", "trimap_acc", "trimap_miou"]
_EVAL_HEADERS = {"stem": "Stem", "grad": "Grad", "sad": "SAD", "mse": "MSE",
                 "trimap_acc": "Acc", "trimap_miou": "mIoU"}


def format_eval_table(rows):
    table = [[_EVAL_HEADERS[c] for c in EVAL_COLUMNS]]
    for row in rows:
        cells = [str(row["stem"])]
        for c in EVAL_COLUMNS[1:]:
            v = row.get(c)
            cells.append("-" if v is None else f"{v:.4f}")
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(EVAL_COLUMNS))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _eval_stems(gt_dir):
    suffix = "_alpha.pgm"
    stems = sorted(f[:-len(suffix)] for f in os.listdir(gt_dir)
                   if f.endswith(suffix))
    if not stems:
        raise FileNotFoundError(f"no *_alpha.pgm files in {gt_dir}")
    return stems


def cmd_eval(args):
    settings = {"pred": args.pred_dir, "gt": args.gt_dir,
                "trimaps": args.trimap_dir, "region": args.region,
                "out": args.out}
    echo_config("eval", settings)
    trimap_dir = args.trimap_dir or args.gt_dir
    stems = _eval_stems(args.gt_dir)
    rows, missing = [], []
    for stem in stems:
        pred_path = os.path.join(args.pred_dir, stem + "_alpha.pgm")
        if not os.path.exists(pred_path):
            missing.append(stem)
            continue
        alpha_gt = read_alpha(os.path.join(args.gt_dir, stem + "_alpha.pgm"))
        alpha_pred = read_alpha(pred_path)
        tri_path = os.path.join(trimap_dir, stem + "_trimap.pgm")
        tri = read_trimap(tri_path, snap=args.snap) if os.path.exists(tri_path) else None
        if args.region == "unknown" and tri is None:
            raise FileNotFoundError(f"region 'unknown' needs {tri_path}")
        pred_tri_path = os.path.join(args.pred_dir, stem + "_trimap.pgm")
        tri_pred = None
        if os.path.exists(pred_tri_path) and tri is not None:
            tri_pred = read_trimap(pred_tri_path, snap=args.snap)
        rep = evaluate(alpha_pred, alpha_gt, eval_trimap=tri,
                       trimap_pred=tri_pred,
                       trimap_gt=tri if tri_pred is not None else None,
                       region=args.region)
        d = rep.as_dict()
        rows.append({"stem": stem, **{k: d.get(k) for k in EVAL_COLUMNS[1:]}})
    aggregate = {}
    for key in EVAL_COLUMNS[1:]:
        vals = [r[key] for r in rows if r.get(key) is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None
    report = {"region": args.region, "count": len(rows), "missing": missing,
              "per_image": rows, "aggregate": aggregate}
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    table = format_eval_table(rows + [{"stem": "mean", **aggregate}])
    with open(os.path.join(args.out, "report.txt"), "w") as fp:
        fp.write(table)
    sys.stdout.write(table)
    if missing:
        print(f"missing predictions for {len(missing)} stem(s): "
              f"{', '.join(missing)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------
# trimap tools


def cmd_trimap(args):
    if args.tool == "derive":
        settings = {"alpha": args.alpha, "out": args.out, "eps": args.eps}
        echo_config("trimap derive", settings)
        alpha = read_alpha(args.alpha)
        _ensure_parent(args.out)
        write_trimap(args.out, derive_optimal_trimap(alpha, eps=args.eps))
        print(f"wrote {args.out}")
        return EXIT_OK
    # degrade
    if (args.alpha is None) == (args.trimap is None):
        raise UsageError("degrade needs exactly one of --alpha or --trimap")
    settings = {"alpha": args.alpha, "trimap": args.trimap, "out": args.out,
                "dmin": args.dmin, "dmax": args.dmax, "seed": args.seed,
                "eps": args.eps}
    echo_config("trimap degrade", settings)
    if args.alpha is not None:
        base = derive_optimal_trimap(read_alpha(args.alpha), eps=args.eps)
    else:
        base = read_trimap(args.trimap, snap=args.snap)
    rng = np.random.default_rng(args.seed)
    r_fg, r_bg = random_degrade_radii(rng, args.dmin, args.dmax)
    out = degrade_trimap(base, r_fg, r_bg)
    print(f"degrade radii: fg={r_fg} bg={r_bg}")
    print(f"unknown pixels: {int((base == UNKNOWN).sum())} -> "
          f"{int((out == UNKNOWN).sum())}")
    _ensure_parent(args.out)
    write_trimap(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def build_parser():
    parser = _Parser(prog="mattekit",
                     description="Trimap-adapting deep image matting toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset",
                       description="Write a seeded synthetic matting dataset.")
    p.add_argument("out", help="output dataset directory")
    p.add_argument("--count", type=int, default=64, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--size", type=int, default=64, help="square canvas size")
    p.add_argument("--kind", choices=("disc", "strands", "mixed"),
                   default="disc", help="foreground family")
    p.add_argument("--hard-frac", type=float, default=0.25,
                   help="fraction of camouflage backgrounds")
    p.add_argument("--degrade-min", type=int, default=3,
                   help="smallest trimap erosion radius")
    p.add_argument("--degrade-max", type=int, default=8,
                   help="largest trimap erosion radius")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the optimization loop",
                       description="Train on a dataset directory; config comes "
                                   "from --config JSON plus --set overrides.")
    p.add_argument("dataset", help="training dataset directory")
    p.add_argument("out", help="run output directory")
    p.add_argument("--config", help="JSON file with 'train' and 'model' objects")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.epochs=10")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--checkpoint-every", type=int, default=1,
                   help="epochs between checkpoints")
    p.add_argument("--eval-dir", help="held-out dataset to score after training")
    p.add_argument("--ablate", action="store_true",
                   help="run the full ablation grid instead of one model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict alpha for one image/trimap pair",
                       description="Run a checkpoint on an image and its coarse "
                                   "trimap; writes the fused alpha and the "
                                   "adapted trimap.")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--image", required=True, help="P6 input image")
    p.add_argument("--trimap", required=True, help="P5 input trimap")
    p.add_argument("--out-alpha", required=True, help="output alpha path")
    p.add_argument("--out-trimap", required=True, help="output trimap path")
    p.add_argument("--snap", action="store_true",
                   help="snap off-grid trimap grays to the nearest label")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth",
                       description="Compare *_alpha.pgm files between two "
                                   "directories; writes JSON and text reports.")
    p.add_argument("--pred-dir", required=True, help="predictions directory")
    p.add_argument("--gt-dir", required=True, help="ground-truth directory")
    p.add_argument("--trimap-dir",
                   help="directory of region/reference trimaps (default: gt dir)")
    p.add_argument("--region", choices=("unknown", "whole"), default="unknown",
                   help="pixels the alpha metrics average over")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--snap", action="store_true",
                   help="snap off-grid trimap grays to the nearest label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trimap", help="derive or degrade trimaps",
                       description="Standalone trimap tooling.")
    tool = p.add_subparsers(dest="tool", required=True)
    d = tool.add_parser("derive", help="optimal trimap from an alpha matte")
    d.add_argument("--alpha", required=True, help="P5 alpha matte")
    d.add_argument("--out", required=True, help="output trimap path")
    d.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help="definite-region tolerance")
    d.set_defaults(func=cmd_trimap)
    g = tool.add_parser("degrade", help="randomized erosion of definite regions")
    g.add_argument("--alpha", help="derive the optimal trimap from this matte")
    g.add_argument("--trimap", help="or start from this trimap file")
    g.add_argument("--out", required=True, help="output trimap path")
    g.add_argument("--dmin", type=int, default=3, help="smallest radius")
    g.add_argument("--dmax", type=int, default=15, help="largest radius")
    g.add_argument("--seed", type=int, default=0, help="radius seed")
    g.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help="tolerance for --alpha derivation")
    g.add_argument("--snap", action="store_true",
                   help="snap off-grid trimap grays to the nearest label")
    g.set_defaults(func=cmd_trimap)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PNMError, ExtentError, CheckpointError, OSError, ValueError,
            json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
