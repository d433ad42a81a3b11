"""Command-line surface.

Subcommands: ``train``, ``eval``, ``predict``, ``gradcheck``, ``synth``,
and ``bench``.  Training is driven by a flat ``key = value`` config file;
logs and metric reports are tab-separated text.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import data as data_mod
from . import trainer as trainer_mod
from .engine import no_grad
from .errors import ConfigError, FormatError, NumericError, ShapeError, UsageError
from .gradcheck import run_gradcheck
from .model import m2unet_forward


def _cmd_train(args):
    with open(args.config, encoding="utf-8") as fh:
        flat = config_mod.parse_flat(fh.read())
    cfg = trainer_mod.train_config_from_flat(flat)
    if args.out:
        cfg.out_dir = args.out
    result = trainer_mod.train(cfg)
    print(f"# final checkpoint: {result.ckpt_path}")
    return 0


def _cmd_eval(args):
    report = trainer_mod.evaluate_checkpoint(args.ckpt, args.data)
    text = report.to_tsv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _cmd_predict(args):
    params, _, _ = ckpt_mod.load(args.ckpt)
    w, _ = params.cfg.image_size
    raw = data_mod.decode_image(args.image)
    if raw.shape[2] != 3:
        raise UsageError(f"predict expects a color PPM image, got {raw.shape[2]} channel(s)")
    src_h, src_w = raw.shape[0], raw.shape[1]
    blank = np.zeros((src_h, src_w), dtype=np.uint8)
    sample = data_mod.preprocess(raw, blank, w, sample_id=args.image)
    with no_grad():
        probs = m2unet_forward(trainer_mod._unsqueeze(sample.image), params)
    plane = probs.data[0, :, :, 0]
    plane = data_mod.resize_bilinear(plane[:, :, None], src_h, src_w)[:, :, 0]
    if args.probs:
        out_u8 = np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)
    else:
        out_u8 = ((plane >= 0.5).astype(np.uint8)) * 255
    data_mod.encode_image(args.out, out_u8)
    print(f"# wrote {args.out} ({src_w}x{src_h}, "
          f"{'probabilities' if args.probs else 'mask'})")
    return 0


def _cmd_gradcheck(args):
    failures = run_gradcheck(module=args.module, seeds=args.seeds)
    return 1 if failures else 0


def _cmd_synth(args):
    samples = data_mod.synth_polyp_dataset(args.n, args.size, args.seed)
    data_mod.write_dataset(samples, args.out)
    print(f"# wrote {len(samples)} samples under {args.out}")
    return 0


def _cmd_bench(args):
    from .bench import run_bench
    run_bench(repeats=args.repeats)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="m2unet",
                                description="segmentation model trainer and tools")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a flat key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default="", help="override train.out_dir")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset folder")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="", help="also write the report here")
    e.set_defaults(fn=_cmd_eval)

    pr = sub.add_parser("predict", help="segment one PPM image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="output PGM path")
    pr.add_argument("--probs", action="store_true",
                    help="write the probability map instead of the 0/255 mask")
    pr.set_defaults(fn=_cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--module", default="all",
                   choices=["all", "ops", "blocks", "loss", "model"])
    g.add_argument("--seeds", type=int, default=5)
    g.set_defaults(fn=_cmd_gradcheck)

    s = sub.add_parser("synth", help="generate a synthetic dataset folder")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_synth)

    b = sub.add_parser("bench", help="compare kernel backends on model shapes")
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(fn=_cmd_bench)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, NumericError, ShapeError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
