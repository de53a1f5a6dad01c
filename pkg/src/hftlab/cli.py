"""``hft-lab`` command line.

Exit status: 0 if every check passes, 1 if any check fails, 2 for usage,
configuration or model-file errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .dsl import ModelError
from .models import BUILTIN_NAMES
from .suite import CHECK_NAMES, RunConfig, SuiteResult, load_model, run_checks
from .scan import scan_degeneracies

# options whose values may start with "-" (negative lambdas)
_SIGNED_OPTIONS = ("--grid", "--lambda")


def _grid(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like START:STOP:COUNT")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if count < 1 or start > stop:
        raise argparse.ArgumentTypeError("grid needs COUNT >= 1 and START <= STOP")
    return start, stop, count


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _check_list(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    unknown = [s for s in names if s not in CHECK_NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown checks {', '.join(unknown)}; known: {', '.join(CHECK_NAMES)}"
        )
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hft-lab",
        description="Verify Hellmann-Feynman identities for parametric Hermitian matrices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("verify", "run the check suite over a lambda grid"),
        ("scan", "locate degeneracy points on a lambda grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--model", metavar="PATH", help="model file")
        src.add_argument("--builtin", metavar="NAME", choices=BUILTIN_NAMES, help="built-in model")
        where = p.add_mutually_exclusive_group()
        where.add_argument("--lambda", dest="lam", type=float, metavar="X", help="single lambda")
        where.add_argument("--grid", type=_grid, metavar="A:B:N", help="lambda grid (default -1:1:21)")
        p.add_argument("--beta", type=_positive, nargs="+", default=[1.0], metavar="B",
                       help="inverse temperatures for the ensemble checks")
        p.add_argument("--tol-deg", type=_positive, metavar="T", help="degeneracy threshold")
        p.add_argument("--fd-step", type=_positive, metavar="H", help="finite-difference step")
        p.add_argument("--checks", type=_check_list, default=CHECK_NAMES, metavar="LIST",
                       help="comma-separated subset of: " + ", ".join(CHECK_NAMES))
        p.add_argument("--json", action="store_true", help="emit a JSON report")
    return parser


def _join_signed(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        arg = argv[i]
        if arg in _SIGNED_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{arg}={argv[i + 1]}")
            i += 2
        else:
            out.append(arg)
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_signed(argv))
    try:
        cfg = RunConfig(
            model_path=args.model,
            builtin=args.builtin,
            grid=args.grid,
            lam=args.lam,
            betas=tuple(args.beta),
            tol_deg=args.tol_deg,
            fd_step=args.fd_step,
            json=args.json,
            checks=tuple(args.checks),
        )
        model = load_model(cfg)
    except ModelError as exc:
        where = f"{cfg.model_label}: " if "cfg" in locals() else ""
        print(f"hft-lab: error: {where}{exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"hft-lab: error: {exc}", file=sys.stderr)
        return 2

    if args.command == "scan":
        grid = cfg.lambdas()
        if len(grid) < 3:
            print("hft-lab: error: scan needs a grid with at least 3 points", file=sys.stderr)
            return 2
        result = SuiteResult(cfg.model_label, list(grid), scan_degeneracies(model, grid, cfg.tol_deg))
        if cfg.json:
            print(result.to_json())
        else:
            lines = [f"model: {result.model}"]
            if not result.scan.points:
                lines.append("no degeneracy points found")
            for p in result.scan.points:
                lines.append(
                    f"lambda0 = {p.lambda0:+.12g}  g = {p.g}  gap = {p.min_gap:.3e}  "
                    f"bracket = [{p.bracket[0]:+.6g}, {p.bracket[1]:+.6g}]"
                )
            print("\n".join(lines))
        return 0

    result = run_checks(model, cfg)
    print(result.to_json() if cfg.json else result.to_text())
    return result.exit_status


if __name__ == "__main__":
    sys.exit(main())
