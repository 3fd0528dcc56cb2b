"""Command line: ``imcmc run``, ``imcmc verify`` and ``imcmc list-models``.

Exit codes: 0 success, 1 failed certificate (verify), 2 invalid config or
usage, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import build_model, load_config
from .errors import ConfigError, IMCMCError, InvalidKernelError

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="replicate worker processes (default: available cores)")
    p.add_argument("--out", help="output directory (default: the config's output.dir)")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imcmc", description="Self-interacting MCMC experiments for Feynman-Kac flows")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate, score against the exact flow and write artifacts")
    run.add_argument("config", help="TOML/JSON config path or bundled config name")
    _common(run)
    ver = sub.add_parser("verify", help="run the certification suites and print a pass/fail table")
    ver.add_argument("config", help="TOML/JSON config path or bundled config name")
    _common(ver)
    lm = sub.add_parser("list-models", help="list bundled models")
    lm.add_argument("--json", action="store_true", help="print a JSON list")
    return parser


def cmd_list_models(args) -> int:
    from .config import bundled_configs
    from .models import BUNDLED

    if args.json:
        print(json.dumps([{"name": k, "description": v[1]} for k, v in BUNDLED.items()], indent=2))
    else:
        for name, (_, desc) in BUNDLED.items():
            print(f"{name:22s} {desc}")
        print(f"\nbundled configs: {', '.join(sorted(bundled_configs()))}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiments import run_experiment, write_atomically

    cfg = load_config(args.config, seed=args.seed, out=args.out, workers=args.workers)
    outcome = run_experiment(cfg)
    write_atomically(Path(cfg.out), outcome.files)
    if args.json:
        print(json.dumps({"out": str(cfg.out), "files": sorted(outcome.files)}))
    else:
        print(f"wrote {', '.join(sorted(outcome.files))} to {cfg.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .experiments import Certificate, format_table, verify_model

    cfg = load_config(args.config, seed=args.seed, out=args.out, workers=args.workers)
    try:
        model = build_model(cfg.model)
    except InvalidKernelError as exc:
        certs = [Certificate("kernel validity", "fail", str(exc), {"error": str(exc)})]
    else:
        certs = verify_model(model, seed=cfg.seed, kernels=cfg.kernels)
    if args.json:
        print(json.dumps([c.to_dict() for c in certs], indent=2))
    else:
        print(format_table(certs))
    return EXIT_FAIL if any(c.status == "fail" for c in certs) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    handler = {"run": cmd_run, "verify": cmd_verify, "list-models": cmd_list_models}[args.command]
    try:
        return handler(args)
    except (ConfigError, InvalidKernelError) as exc:
        print(f"imcmc: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IMCMCError, ValueError, ArithmeticError, OSError) as exc:
        print(f"imcmc: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
