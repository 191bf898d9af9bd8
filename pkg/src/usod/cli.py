"""Command-line entry point: ``usod {refine,spr,optimize,eval,demo}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Map arguments ending in ``.txt`` use the lossless raw-decimal format instead
of PGM.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .core import NumericalError, load_image, load_map, load_map_raw, save_map, save_map_raw
from .metrics import evaluate_pair_set, write_csv
from .pipeline import PipelineConfig, load_config, run_demo, stage1_optimize
from .refiner import RefinerConfig, prior_rectify
from .spr import SprWeights, posterior_rectify, spr_update

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("usod")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scene_count(text: str) -> int:
    n = int(text)
    if n < 2:
        raise argparse.ArgumentTypeError("demo needs at least 2 scenes")
    return n


def _read_map(path):
    return load_map_raw(path) if str(path).endswith(".txt") else load_map(path)


def _write_map(saliency, path):
    (save_map_raw if str(path).endswith(".txt") else save_map)(saliency, path)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_refine(args) -> None:
    base = RefinerConfig()
    cfg = RefinerConfig(
        omega1=base.omega1 if args.omega1 is None else args.omega1,
        omega2=base.omega2 if args.omega2 is None else args.omega2,
        omega3=base.omega3 if args.omega3 is None else args.omega3,
        iterations=base.iterations if args.iters is None else args.iters,
    )
    _write_map(prior_rectify(_read_map(args.map), load_image(args.image), cfg), args.out)


def cmd_spr(args) -> None:
    weights = SprWeights.parse(args.weights) if args.weights else SprWeights()
    out = spr_update(
        _read_map(args.pri), posterior_rectify(_read_map(args.post)), _read_map(args.prev), weights
    )
    _write_map(out, args.out)


def cmd_optimize(args) -> None:
    cfg = _config(args)
    result = stage1_optimize(load_image(args.image), cfg, curriculum=not args.no_curriculum)
    _write_map(result.saliency, args.out)
    log.info("final loss %.6f", result.loss_trace[-1])


def cmd_eval(args) -> None:
    result = evaluate_pair_set(args.pred, args.gt)
    write_csv(result, args.out)
    m = result.mean
    print(f"{len(result.per_image)} images  mae {m.mae:.6f}  f_beta {m.f_beta:.6f}  e_xi {m.e_xi:.6f}")


def cmd_demo(args) -> None:
    cfg = _config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return
    report = run_demo(cfg, args.scenes, args.out)
    sys.stdout.write(report.summary_text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="usod", description="Desk-scale unsupervised salient object detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("refine", help="prior rectification of a map guided by an image")
    p.add_argument("--image", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--omega1", type=float)
    p.add_argument("--omega2", type=float)
    p.add_argument("--omega3", type=float)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("spr", help="fuse prior, posterior and previous labels")
    p.add_argument("--pri", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--prev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="comma-separated lambda1,lambda2,lambda3")
    p.set_defaults(func=cmd_spr)

    p = sub.add_parser("optimize", help="stage-1 cue extraction on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-curriculum", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="score prediction maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="curriculum / SPR comparison on synthetic scenes")
    p.add_argument("--config")
    p.add_argument("--scenes", type=_scene_count, default=4)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"usod: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"usod: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
