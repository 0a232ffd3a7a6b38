"""Command-line entry point: ``threatsva --design top.sv --threats "..."``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .gateway import DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL
from .pipeline import RunConfig, console_table, run


def parse_threats(text: str) -> list[str]:
    """Split a comma-separated threat list; double quotes protect commas."""
    rows = list(csv.reader([text], skipinitialspace=True))
    return [t.strip() for t in (rows[0] if rows else []) if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="threatsva",
        description="Generate grounded security SystemVerilog assertions for an RTL design.",
    )
    p.add_argument("--design", required=True, type=Path, help="single-file RTL design (.v/.sv)")
    p.add_argument("--threats", required=True, type=parse_threats,
                   help='comma-separated threat names, e.g. "Improper Access control, Side Channel Attack"')
    p.add_argument("--iterations", type=int, default=3, help="generation calls per weakness (default 3)")
    p.add_argument("--out", type=Path, default=Path("threatsva_out"), help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base seed for all model calls")
    p.add_argument("--classify-model", default="gpt-4o")
    p.add_argument("--gen-model", default="gpt-5")
    p.add_argument("--refine-model", default="gpt-4o")
    p.add_argument("--base-url", default=DEFAULT_BASE_URL)
    p.add_argument("--api-key-env", default=DEFAULT_API_KEY_ENV,
                   help=f"environment variable holding the API key (default {DEFAULT_API_KEY_ENV})")
    p.add_argument("--timeout", type=float, default=120.0, help="per-request timeout in seconds")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--mock", type=Path, metavar="DIR", help="replay model replies from a fixture directory")
    p.add_argument("--polish", action="store_true", help="ask the refinement model to polish the .sva file")
    p.add_argument("--intricate-suite", action="store_true",
                   help="request the intricate property suite from the refinement model (implies --polish)")
    p.add_argument("--lint-advisory-only", action="store_true",
                   help="report mandatory lint failures without rejecting candidates")
    p.add_argument("--keep-workspace", action="store_true", help="keep the temporary JSONL workspace")
    p.add_argument("--deterministic", action="store_true",
                   help="fixed timestamps and relative output paths for byte-stable outputs")
    p.add_argument("--clock", help="clock signal expected in assertions")
    p.add_argument("--reset", help="reset signal expected in disable iff clauses")
    p.add_argument("--top", help="top-level module name (never inferred silently)")
    p.add_argument("--workers", type=int, default=1, help="concurrent model calls during generation")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        design_path=args.design,
        threat_names=args.threats,
        out_dir=args.out,
        iterations=args.iterations,
        seed_base=args.seed,
        classify_model=args.classify_model,
        generate_model=args.gen_model,
        refine_model=args.refine_model,
        base_url=args.base_url,
        api_key_env=args.api_key_env,
        timeout=args.timeout,
        max_retries=args.max_retries,
        mock_dir=args.mock,
        intricate_suite=args.intricate_suite,
        polish=args.polish,
        lint_advisory_only=args.lint_advisory_only,
        keep_workspace=args.keep_workspace,
        deterministic=args.deterministic,
        clock_hint=args.clock,
        reset_hint=args.reset,
        top_module=args.top,
        workers=args.workers,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    summary = run(config_from_args(args))
    print(console_table(summary))
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
