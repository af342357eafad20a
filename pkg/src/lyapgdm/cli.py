"""Command-line entry point: train / eval / sweep / plot.

Any flag of the form --section.key VALUE overrides the corresponding config
file entry, e.g. `lyapgdm train --config run.cfg --env.bandwidth 2e6`.
The seed is resolved from --seed, then the LYAPGDM_SEED environment
variable, then the config file.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import parse_config
from .env import ConfigError
from .harness import run_eval, run_sweep, run_train
from .plots import PLOT_KINDS, emit_plot
from .trainer import POLICY_KINDS

__all__ = ["main"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="config file (key=value sections)")
    p.add_argument("--seed", type=int, default=None,
                   help="trainer seed (falls back to $LYAPGDM_SEED, then the config)")
    p.add_argument("--agent", choices=POLICY_KINDS, default=None,
                   help="policy kind; overrides experiment.agent")
    p.add_argument("--out", default=None, help="output directory; overrides experiment.out_dir")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyapgdm",
        description="UAV drift-plus-penalty optimization: diffusion-policy "
                    "DDPG training, baselines, and case-study figures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent, writing metrics.csv and checkpoints")
    _add_common(p)

    p = sub.add_parser("eval", help="roll evaluation episodes, writing trace.csv")
    _add_common(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint directory (required for learned agents)")

    p = sub.add_parser("sweep", help="train or evaluate across parameter values")
    _add_common(p)
    p.add_argument("--param", default=None, help="dotted config key, e.g. env.bandwidth")
    p.add_argument("--values", default=None,
                   help="comma-separated numeric values, e.g. 0.5e6,1e6,2e6")
    p.add_argument("--mode", choices=("eval", "train"), default=None)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint directory for eval-mode learned agents")

    p = sub.add_parser("plot", help="render a figure from CSV outputs")
    p.add_argument("csvs", nargs="+", help="input CSV paths (one series each)")
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--budget", type=float, default=140.0,
                   help="energy reference line for energy-vs-time plots")
    return parser


def _split_overrides(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    """Pull --section.key VALUE pairs out of argv before argparse sees them."""
    kept: list[str] = []
    overrides: dict[str, str] = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            if "=" in tok:
                key, value = tok[2:].split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise ConfigError(f"override {tok} is missing a value")
                key, value = tok[2:], argv[i + 1]
                i += 1
            overrides[key] = value
        else:
            kept.append(tok)
        i += 1
    return kept, overrides


def _resolve_config(args, overrides: dict[str, str]):
    if args.seed is not None:
        overrides.setdefault("trainer.seed", str(args.seed))
    elif os.environ.get("LYAPGDM_SEED"):
        overrides.setdefault("trainer.seed", os.environ["LYAPGDM_SEED"])
    if args.agent is not None:
        overrides["experiment.agent"] = args.agent
    if args.out is not None:
        overrides["experiment.out_dir"] = args.out
    return parse_config(args.config, overrides=overrides)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv, overrides = _split_overrides(argv)
        args = _build_parser().parse_args(argv)

        if args.command == "plot":
            out = emit_plot(args.csvs, args.kind, args.out, energy_budget=args.budget)
            print(f"wrote {out}")
            return 0

        cfg = _resolve_config(args, overrides)
        if args.command == "train":
            result = run_train(cfg)
            print(f"wrote {result['metrics']}")
            print(f"checkpoint {result['checkpoint']}")
        elif args.command == "eval":
            result = run_eval(cfg, checkpoint=args.checkpoint)
            print(f"wrote {result['trace']}")
            for key, value in result["summary"].items():
                print(f"{key} = {value:.6g}")
        elif args.command == "sweep":
            values = None
            if args.values is not None:
                values = tuple(float(v) for v in args.values.split(",") if v.strip())
            result = run_sweep(cfg, param=args.param, values=values, mode=args.mode,
                               checkpoint=args.checkpoint)
            print(f"wrote {result['sweep']}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
