"""Command-line entry point: intercode-lab run | sweep | compare | analyze-trace | codec-test."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from .amd_uf import bit_miss_rates, export_vectors, miss_rates, spot_check_field
from .config import ExperimentConfig, apply_cli_overrides, load_config, parse_int_list
from .errors import ConfigError, TraceParseError
from .harness import (
    assertion_failures,
    compare_compiled,
    comparison_failures,
    fit_communication,
    paired_verdict,
    robust_from_descriptor,
    run_experiment,
    summarize,
    write_outputs,
)
from .scheme_cr import load_trace
from .scheme_iter import rand5_erasure_table
from .trace_lab import analyze

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

CODEC_KS = (2, 3, 4, 5, 8, 16)
VECTOR_COUNT = 16


def _output(message: str) -> None:
    print(message, end="")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON experiment configuration.")
    parser.add_argument("--seed", type=int, default=None, help="Master seed.")
    parser.add_argument("--trials", type=int, default=None, help="Trials per (N, T) cell.")
    parser.add_argument("--out", default=None, help="Output directory.")
    parser.add_argument("--verbose", action="store_true", help="Debug logging.")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="intercode-lab",
        description="Interactive coding over oblivious noise: simulations and trace checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("run", "Run the configured trials."),
                            ("sweep", "Run a T sweep and fit communication against T.")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--scheme", default=None, help="cr, iter, iter_uf or uf_compiled.")
        p.add_argument("--n", type=int, default=None, help="Length N of the simulated protocol.")
        p.add_argument("--t-values", dest="t_values", default="", help="Comma-separated corruption budgets.")
        p.add_argument("--adversary", default=None, help="Noise pattern generator.")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--repetition", type=int, default=None)
        p.add_argument("--xlsx", action="store_true", help="Also write summary.xlsx.")
        p.add_argument("--relaxed-termination", dest="relaxed_termination", action="store_true",
                       help="Zero-run termination on 90%% zeros instead of all zeros.")

    p = sub.add_parser("compare", help="Paired bare UPEF vs UF-compiled challenge-response runs.")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="Length N of the simulated protocol.")
    p.add_argument("--t-values", dest="t_values", default="", help="Comma-separated corruption budgets.")
    p.add_argument("--adversary", default=None, help="Noise pattern generator for the inner rounds.")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--repetition", type=int, default=None)
    p.add_argument("--relaxed-termination", dest="relaxed_termination", action="store_true")

    p = sub.add_parser("analyze-trace", help="Re-run the structural checks on a saved trace.")
    p.add_argument("trace", help="Trace JSONL written by a challenge-response run.")
    _add_common(p)

    p = sub.add_parser("codec-test", help="AMD soundness sweeps, rand5 enumeration, test vectors.")
    _add_common(p)
    p.add_argument("--k", default="", help="Comma-separated field sizes (default 2,3,4,5,8,16).")

    return parser.parse_args(argv)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return apply_cli_overrides(cfg, args)


def _report(failures: List[str]) -> int:
    if failures:
        for line in failures:
            _output(f"FAIL {line}\n")
        return EXIT_FAILED
    _output("All checks passed.\n")
    return EXIT_OK


# =======================================================
# Subcommands
# =======================================================

def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    df = run_experiment(cfg, _output)
    summary = summarize(df)
    _output(summary.to_string(index=False) + "\n")
    write_outputs(cfg, df, summary, _output)
    return _report(assertion_failures(summary))


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if len(cfg.T_values) < 2:
        raise ConfigError("T_values", "a sweep needs at least two budgets")
    df = run_experiment(cfg, _output)
    summary = summarize(df)
    fit = fit_communication(df, cfg.slope_bound)
    _output(summary.to_string(index=False) + "\n")
    if fit["b"] is not None:
        _output(f"comm ~ {fit['a']:.2f}·N + {fit['b']:.2f}·T (slope bound {fit['slope_bound']:.0f}): "
                f"{fit['verdict']}\n")
    write_outputs(cfg, df, summary, _output, fit)
    return _report(assertion_failures(summary, fit))


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    failures = []
    frames = []
    for T in cfg.T_values:
        df = compare_compiled(cfg, cfg.N, T, _output)
        verdict = paired_verdict(df)
        if verdict["diff"] is not None:
            _output(f"N={cfg.N} T={T}: bare {verdict['bare_rate']:.3f}, compiled {verdict['compiled_rate']:.3f}, "
                    f"diff {verdict['diff']:+.3f} (3σ = {3 * verdict['sigma']:.3f}): {verdict['verdict']}\n")
        failures.extend(f"N={cfg.N} T={T}: {line}" for line in comparison_failures(verdict, cfg.N))
        frames.append(df)

    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "compare.csv")
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    _output(f"Data saved to {path}\n")
    return _report(failures)


def cmd_analyze_trace(args) -> int:
    try:
        trace = load_trace(args.trace)
    except TraceParseError as e:
        _output(f"{args.trace}: {e}\n")
        return EXIT_USAGE
    except OSError as e:
        _output(f"{args.trace}: {e}\n")
        return EXIT_USAGE

    robust = robust_from_descriptor(trace.protocol) if trace.protocol else None
    analysis = analyze(trace, robust)
    doc = {"trace": trace.summary(), **analysis.to_json()}
    _output(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "analysis.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True, default=str)
        _output(f"Data saved to {path}\n")

    failures = [f"{name}: {analysis.report[name].detail}" for name in analysis.report.failed]
    if analysis.reduction_violations:
        failures.append("matching execution does not reproduce the simulated transcripts")
    return _report(failures)


def cmd_codec_test(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    failures = []
    reports = {}

    ks = parse_int_list(args.k, "k") if args.k else list(CODEC_KS)
    if not ks:
        raise ConfigError("k", "need at least one field size")
    for k in ks:
        if not spot_check_field(k, rng):
            failures.append(f"GF(2^{k}) arithmetic spot check")
        report = miss_rates(k, rng)
        reports[k] = report.to_json()
        scope = "all Δ" if report.exhaustive else "sampled Δ"
        _output(f"k={k}: miss <= {report.bound * 2 ** k}/{2 ** k} for {scope}: {report.verdict} "
                f"(worst {report.worst_rate:.4f})\n")
        if report.verdict == "FAIL":
            failures.append(f"AMD k={k} worst miss rate {report.worst_rate:.4f} above {report.bound}")

    bit_report = bit_miss_rates(4)
    _output(f"k=4 bit codec: flip <= 2/16 for all Δ: {bit_report.verdict}\n")
    if bit_report.verdict == "FAIL":
        failures.append("AMD bit codec flip rate above bound at k=4")

    table = rand5_erasure_table()
    floor = min(row["erasure_probability"] for row in table)
    rand5_ok = floor * 3 >= 1
    _output(f"rand5: ⊥-prob >= 1/3 for all 31 Δ: {'PASS' if rand5_ok else 'FAIL'}\n")
    if not rand5_ok:
        failures.append(f"rand5 erasure probability floor {floor} below 1/3")

    out = args.out or "results"
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "codec_vectors.json")
    doc = {
        "amd": [v for k in ks for v in export_vectors(k, VECTOR_COUNT, rng)],
        "miss_rates": reports,
        "rand5": [{**row, "erasure_probability": str(row["erasure_probability"])} for row in table],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    _output(f"Data saved to {path}\n")
    return _report(failures)


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "analyze-trace": cmd_analyze_trace,
    "codec-test": cmd_codec_test,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
