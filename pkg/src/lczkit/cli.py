"""Single orchestration binary: one subcommand per pipeline stage plus
`pipeline` (full chain) and `check` (numeric self-test).

Exit codes: 0 success, 1 usage error, 2 data/numeric error. Any RunConfig
key can be overridden on the command line with --<key>=<value> dotted
flags, e.g. --vae.latent_dim=64.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline as pl
from . import rasterizer
from .config import DEFAULTS, RunConfig
from .errors import DataError, LczError, UsageError
from .io import parse_point_cloud

SUBCOMMANDS = ("synth", "rasterize", "train-vae", "train-reg", "perturb",
               "label", "analyze", "pipeline", "check")

_FLAG_ALIASES = {"dt-sweep": "perturb.dt_sweep"}


def _split_overrides(extra):
    overrides = {}
    for token in extra:
        if not token.startswith("--") or "=" not in token:
            raise UsageError(f"unknown flag {token!r}")
        key, _, value = token[2:].partition("=")
        key = _FLAG_ALIASES.get(key, key)
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r} (from flag {token!r})")
        overrides[key] = value
    return overrides


def _build_parser():
    parser = argparse.ArgumentParser(prog="lcz", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", default="run", help="run directory")
    parser.add_argument("--input", default=None, help="input file (rasterize)")
    parser.add_argument("--output", default=None, help="output file (rasterize)")
    return parser


def run(argv) -> int:
    args, extra = _build_parser().parse_known_args(argv)
    overrides = _split_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = RunConfig.from_file(args.config, overrides)
    out = args.out

    if args.subcommand == "check":
        errors = pl.run_check(cfg["seed"])
        for name, value in errors.items():
            print(f"{name} = {value:.3e}")
        ok = errors["grad_max_rel_err"] <= 1e-5 and errors["eq_dot_rel_err"] <= 1e-9
        print("check:", "OK" if ok else "FAILED")
        if not ok:
            raise DataError("numeric self-check failed")
        return 0

    if args.subcommand == "rasterize":
        if not args.input or not args.output:
            raise UsageError("rasterize needs --input and --output")
        with open(args.input) as fh:
            cloud = parse_point_cloud(fh)
        stack = rasterizer.rasterize(cloud, cfg.grid_spec())
        rasterizer.save_stack(stack, args.output)
        print(f"rasterized {len(cloud)} points -> {args.output} "
              f"({stack.n_outside} outside extent)")
        return 0

    pl.write_run_manifest(cfg, out)
    if args.subcommand == "synth":
        corpus = pl.run_synth(cfg, out)
        print(f"wrote {len(corpus.entries)} scenes "
              f"({len(corpus.train_ids)} train / {len(corpus.test_ids)} test) under {out}")
    elif args.subcommand == "train-vae":
        _, _, history = pl.run_train_vae(cfg, out)
        print(f"vae trained, {len(history)} epochs, "
              f"loss {history[0]:.4f} -> {history[-1]:.4f}")
    elif args.subcommand == "train-reg":
        _, rep = pl.run_train_reg(cfg, out)
        print(f"regressor trained: holdout MAE {rep.mae:.3f} K, "
              f"signed error ({rep.err_min:+.3f} K, {rep.err_max:+.3f} K) "
              f"on {rep.n_holdout} scenes")
    elif args.subcommand == "perturb":
        batch = pl.run_perturb(cfg, out)
        print(f"{len(batch.scenes)} counterfactuals written "
              f"({len(batch.failures)} degenerate-gradient failures)")
    elif args.subcommand == "label":
        records = pl.run_label(cfg, out)
        print(f"labeled {len(records)} counterfactuals -> fractions.csv")
    elif args.subcommand == "analyze":
        bundle = pl.run_analyze(cfg, out)
        print(bundle.summary)
    elif args.subcommand == "pipeline":
        result = pl.run_pipeline(cfg, out)
        print(result.bundle.summary)
    return 0


def main(argv=None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except LczError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
