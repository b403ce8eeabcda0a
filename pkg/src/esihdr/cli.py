"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import io, metrics
from .config import ABLATIONS, RunConfig
from .imaging import GAMMA, ESI_CLAMP, enhancement_stop, gamma_correct, mu_law
from .mhdr import mhdr_forward

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_esi(args):
    ldr = io.read_png(args.input)
    if ldr.ndim != 3:
        raise io.DataError(f"{args.input}: ESI needs an RGB image")
    io.write_png(args.output, enhancement_stop(ldr, args.c).values)


def cmd_preprocess(args):
    stack = io.read_stack(args.stack)
    os.makedirs(args.out, exist_ok=True)
    for k, im in enumerate(stack.images):
        hdr = gamma_correct(im, args.gamma).pixels
        packed = np.concatenate([im.pixels, hdr], axis=2).transpose(2, 0, 1)
        np.save(os.path.join(args.out, f"x{k + 1}.npy"), packed)
    esi = enhancement_stop(stack.reference, args.c).values
    np.save(os.path.join(args.out, "esi.npy"), esi)


def cmd_synth(args):
    from .synth import synth_scene

    scene = synth_scene(args.seed, args.size, args.motion, args.ev_step, args.gamma)
    io.write_scene(args.out, scene)


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "steps", None) is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _train(cfg, out_dir, quiet):
    from .train import train_toy

    log = None if quiet else (lambda msg: print(msg, file=sys.stderr))
    report = train_toy(cfg, log=log)
    report.write(out_dir)
    io.save_checkpoint(os.path.join(out_dir, "checkpoint"), report.model)
    s = report.summary()
    print(f"steps={s['steps']} initial_loss={s['initial_loss']:.6f} "
          f"final_loss={s['final_loss']:.6f} ratio={s['ratio']:.4f}")


def cmd_train(args):
    _train(_load_config(args), args.out, args.quiet)


def cmd_ablate(args):
    from .mhdr import ablate

    cfg = _load_config(args)
    cfg = dataclasses.replace(cfg, network=ablate(cfg.network, args.switch))
    _train(cfg, args.out, args.quiet)


def cmd_infer(args):
    model = io.load_checkpoint(args.checkpoint).eval()
    stack = io.read_stack(args.stack)
    h_m, h_s = mhdr_forward(stack, model)
    os.makedirs(args.out, exist_ok=True)
    for name, img in (("hm", h_m), ("hs", h_s)):
        if img is None:
            continue
        io.write_pfm(os.path.join(args.out, f"{name}.pfm"), img.pixels)
        io.write_png(os.path.join(args.out, f"{name}_preview.png"), mu_law(img.pixels))


def cmd_eval(args):
    pred, gt = io.read_hdr(args.prediction), io.read_hdr(args.reference)
    if pred.pixels.shape != gt.pixels.shape:
        raise io.DataError(f"shape mismatch: {pred.pixels.shape} vs {gt.pixels.shape}")
    from .train import jsonable

    _dump_json(args.out, jsonable(metrics.evaluate(pred, gt)))


def cmd_gradcheck(args):
    from .verify import TOLERANCE, run_suite

    log = None if args.quiet else print
    results = run_suite(seeds=range(args.seeds), channels=args.channels, samples=args.samples, log=log)
    worst = max(results, key=lambda r: r.max_error)
    failed = [r for r in results if not r.passed]
    print(f"checks={len(results)} failed={len(failed)} max_rel_err={worst.max_error:.3e} "
          f"({worst.name}, seed {worst.seed}) tolerance={TOLERANCE:.0e}")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser():
    p = _Parser(prog="esihdr", description="Ghost-free HDR fusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("esi", help="enhancement stop image of an LDR PNG")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--c", type=float, default=ESI_CLAMP, help="clamp threshold")
    s.set_defaults(func=cmd_esi)

    s = sub.add_parser("preprocess", help="dump the 6-channel network inputs of a stack")
    s.add_argument("stack", help="directory with 3 PNGs and exposure.json")
    s.add_argument("out")
    s.add_argument("--gamma", type=float, default=GAMMA)
    s.add_argument("--c", type=float, default=ESI_CLAMP)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="render a synthetic scene directory")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--motion", type=int, default=4)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--ev-step", type=float, default=2.0)
    s.add_argument("--gamma", type=float, default=GAMMA)
    s.set_defaults(func=cmd_synth)

    for name, func, help_text in (("train", cmd_train, "train on synthetic scenes"),
                                  ("ablate", cmd_ablate, "train one ablated variant")):
        s = sub.add_parser(name, help=help_text)
        if name == "ablate":
            s.add_argument("switch", choices=ABLATIONS)
        s.add_argument("--config", help="RunConfig JSON document")
        s.add_argument("--out", required=True)
        s.add_argument("--steps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--quiet", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("infer", help="run a checkpoint on a stack")
    s.add_argument("checkpoint")
    s.add_argument("stack")
    s.add_argument("out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="fidelity metrics between two PFM images")
    s.add_argument("prediction")
    s.add_argument("reference")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the gradient verification suite")
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--channels", type=int, default=4)
    s.add_argument("--samples", type=int, default=60)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_gradcheck)
    return p


def run_cli(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        code = args.func(args)
    except (io.DataError, FileNotFoundError, IsADirectoryError, ValueError, KeyError) as exc:
        print(f"esihdr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        # training diverged or produced a non-finite gradient
        print(f"esihdr {args.command}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK if code is None else code


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
