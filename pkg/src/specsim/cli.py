"""Operator surface: closed-form model tables, simulation runs, and the
acceptance verifier, behind one argparse entry point.

Config precedence everywhere: built-in defaults < config file (or preset
base) < SPECSIM_* environment variables < command-line flags.
"""

from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

from . import acceptance, analytics
from .core import (
    ConfigError,
    SimConfig,
    env_overrides,
    load_config,
    validate_config,
)
from .figures import render_sweep_figures
from .metrics import export_report, report_filename, write_report
from .oracle import TokenStreamOracle
from .presets import get_preset, preset_names
from .sim import PolicyVariant, SimLivelock, run, run_sweep

_VARIANT_ORDER = ("ar", "ordinary", "parallel", "hybrid")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specsim",
        description="Discrete-event harness for hybrid speculative-decoding coordination.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_model = sub.add_parser(
        "model", help="print the closed-form throughput table over a fallback-ratio grid"
    )
    p_model.add_argument("--batch-size", type=int, default=32, help="batch size B")
    p_model.add_argument("--gamma", type=int, default=4, help="draft window gamma")
    p_model.add_argument("--t-target", type=float, default=0.050, help="target verify latency (s)")
    p_model.add_argument("--t-draft", type=float, default=0.005, help="draft step latency (s)")
    p_model.add_argument(
        "--alpha", type=float, default=0.8,
        help="acceptance rate used to derive L when --accepted-len is omitted",
    )
    p_model.add_argument(
        "--accepted-len", type=float, default=None,
        help="mean accepted length L (default: closed-form mean at --alpha)",
    )
    p_model.add_argument(
        "--r-grid", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
        help="comma-separated fallback ratios to tabulate",
    )
    p_model.add_argument("--csv", type=Path, default=None, help="also write the table to this CSV file")
    p_model.set_defaults(func=cmd_model)

    p_run = sub.add_parser("run", help="run a preset sweep or a single config")
    src = p_run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=preset_names(), help="named experiment preset")
    src.add_argument("--config", type=Path, help="key = value config file")
    p_run.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_run.add_argument("--out", type=Path, default=Path("reports"), help="output directory")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv", help="report file format")
    p_run.add_argument("--replicates", type=int, default=None, help="override replicate count")
    p_run.add_argument(
        "--variant", action="append", choices=[v.value for v in PolicyVariant],
        help="restrict to these policy variants (repeatable)",
    )
    p_run.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run the acceptance criteria and golden checks")
    p_verify.add_argument(
        "--criteria", default=None,
        help="comma-separated criterion ids to run (default: all)",
    )
    p_verify.add_argument(
        "--golden", type=Path, default=None,
        help="directory of golden reports to compare against",
    )
    p_verify.add_argument(
        "--write-golden", type=Path, default=None,
        help="regenerate the golden reports into this directory and exit",
    )
    p_verify.set_defaults(func=cmd_verify)

    p_oracle = sub.add_parser("oracle", help="dump a reference token stream")
    p_oracle.add_argument("--seed", type=int, default=0, help="oracle seed")
    p_oracle.add_argument("--request", type=int, default=0, help="request id")
    p_oracle.add_argument("--len", dest="length", type=int, default=16, help="tokens to dump")
    p_oracle.add_argument(
        "--prompt", action="store_true", help="dump the prompt stream instead of the output stream"
    )
    p_oracle.set_defaults(func=cmd_oracle)

    p_presets = sub.add_parser("presets", help="list the shipped experiment presets")
    p_presets.set_defaults(func=cmd_presets)

    return parser


# -- model ---------------------------------------------------------------------


def cmd_model(args: argparse.Namespace) -> int:
    accepted = args.accepted_len
    if accepted is None:
        accepted = analytics.expected_committed_per_round(args.alpha, args.gamma)
    try:
        grid = [float(r) for r in args.r_grid.split(",") if r.strip()]
        params = analytics.ThroughputParams(
            batch_size=args.batch_size,
            accepted_len=accepted,
            gamma=args.gamma,
            t_target=args.t_target,
            t_draft=args.t_draft,
        )
        r_star = analytics.critical_fallback_ratio(params)
    except ValueError as exc:
        if "accepted_len" in str(exc):
            print("error: the throughput model requires L>1", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2

    thr_ord = analytics.ordinary_throughput(params)
    rows = []
    for r in sorted(set(grid)):
        thr_par = analytics.parallel_throughput(
            analytics.ThroughputParams(
                batch_size=args.batch_size,
                accepted_len=accepted,
                gamma=args.gamma,
                t_target=args.t_target,
                t_draft=args.t_draft,
                fallback_ratio=r,
            )
        )
        mode = analytics.preferred_mode(r, r_star).value
        rows.append((r, thr_ord, thr_par, mode))

    print(
        f"B={args.batch_size} L={accepted:.4f} gamma={args.gamma} "
        f"T_T={args.t_target * 1000:g}ms T_D={args.t_draft * 1000:g}ms"
    )
    print(f"r* = {r_star:.5f}")
    print(f"{'r':>6} {'thr_ordinary':>14} {'thr_parallel':>14} {'preferred':>10}")
    for r, t_o, t_p, mode in rows:
        print(f"{r:6.3f} {t_o:14.2f} {t_p:14.2f} {mode:>10}")

    if args.csv is not None:
        lines = ["r,thr_ordinary,thr_parallel,preferred"]
        lines += [f"{r!r},{t_o!r},{t_p!r},{mode}" for r, t_o, t_p, mode in rows]
        args.csv.write_text("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")
    return 0


# -- run -----------------------------------------------------------------------


def _resolve_run_inputs(args: argparse.Namespace):
    if args.preset is not None:
        preset = get_preset(args.preset)
        cfg = SimConfig().with_overrides(preset.base)
        axis, points = preset.axis, list(preset.points)
        variants = list(preset.variants)
        replicates = preset.replicates
        prefix = preset.name
    else:
        cfg = SimConfig.from_file(args.config)
        axis, points = "", [("run", {})]
        variants = list(_VARIANT_ORDER)
        replicates = 1
        prefix = args.config.stem
    cfg = cfg.with_overrides(env_overrides())
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": args.seed})
    if args.variant:
        variants = list(dict.fromkeys(args.variant))
    if args.replicates is not None:
        replicates = args.replicates
    return cfg, axis, points, [PolicyVariant.parse(v) for v in variants], replicates, prefix


def _mean(values) -> float:
    return statistics.fmean(values)


def _print_summary(entries) -> None:
    order: list[str] = []
    groups: dict[str, dict[str, list]] = {}
    for e in entries:
        if e.axis_value not in groups:
            order.append(e.axis_value)
        groups.setdefault(e.axis_value, {}).setdefault(e.variant, []).append(e.report)
    print(f"{'point':>14} {'variant':>9} {'tok/s':>10} {'L':>7} {'r_hat':>7} {'vs-AR':>8}")
    for label in order:
        per = groups[label]
        ar_thr = _mean([r.target_throughput for r in per["ar"]]) if "ar" in per else None
        for variant in _VARIANT_ORDER:
            if variant not in per:
                continue
            reps = per[variant]
            thr = _mean([r.target_throughput for r in reps])
            acc = _mean([r.mean_accepted_length for r in reps])
            roll = _mean([r.mean_rollback_ratio for r in reps])
            speedup = f"{thr / ar_thr:7.2f}x" if ar_thr else f"{'-':>8}"
            print(f"{label:>14} {variant:>9} {thr:10.1f} {acc:7.3f} {roll:7.3f} {speedup}")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg, axis, points, variants, replicates, prefix = _resolve_run_inputs(args)
        _, warnings = validate_config(cfg)
    except (ConfigError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)

    try:
        entries = run_sweep(cfg, variants, axis, points, replicates=replicates)
    except SimLivelock as exc:
        print(f"error: simulation livelocked: {exc}", file=sys.stderr)
        return 3

    written = [write_report(e.report, args.out, args.format) for e in entries]
    print(f"wrote {len(written)} report(s) to {args.out}/")

    if not args.no_plots:
        figures = render_sweep_figures(entries, args.out, prefix=prefix)
        for fig in figures:
            print(f"wrote {fig}")

    _print_summary(entries)
    return 0


# -- verify --------------------------------------------------------------------

# Small deterministic reference runs whose serialized reports are frozen as
# goldens; any behavioral drift in the engine shows up as a byte diff.
_GOLDEN_CONFIG = dict(
    batch_size=4,
    n_requests=4,
    output_len=32,
    alpha=0.8,
    qps=1e6,
    seed=7,
)


def _golden_reports():
    cfg = SimConfig(**_GOLDEN_CONFIG)
    for variant in _VARIANT_ORDER:
        result = run(cfg, PolicyVariant.parse(variant))
        yield report_filename(result.report, "csv"), result.report


def _check_goldens(golden_dir: Path) -> list[tuple[str, str]]:
    statuses = []
    for name, report in _golden_reports():
        path = golden_dir / name
        if not path.exists():
            statuses.append(("MISSING", name))
        elif export_report(report, "csv") != path.read_text():
            statuses.append(("FAIL", name))
        else:
            statuses.append(("PASS", name))
    return statuses


def cmd_verify(args: argparse.Namespace) -> int:
    if args.write_golden is not None:
        count = 0
        for _, report in _golden_reports():
            write_report(report, args.write_golden, "csv")
            count += 1
        print(f"wrote {count} golden report(s) to {args.write_golden}/")
        return 0

    selected = acceptance.ALL_CRITERIA
    if args.criteria:
        try:
            wanted = {int(x) for x in args.criteria.split(",") if x.strip()}
        except ValueError:
            print(f"error: --criteria expects comma-separated ids, got {args.criteria!r}",
                  file=sys.stderr)
            return 2
        selected = [
            c for i, c in enumerate(acceptance.ALL_CRITERIA, start=1) if i in wanted
        ]

    failed = False
    for check in selected:
        result = check()
        status = "PASS" if result.passed else "FAIL"
        failed = failed or not result.passed
        print(f"{status} {result.cid:2d} {result.name}: {result.detail}")

    if args.golden is not None:
        for status, name in _check_goldens(args.golden):
            print(f"{status} golden {name}")
            failed = failed or status != "PASS"

    return 1 if failed else 0


# -- oracle --------------------------------------------------------------------


def cmd_oracle(args: argparse.Namespace) -> int:
    oracle = TokenStreamOracle(seed=args.seed)
    if args.prompt:
        tokens = oracle.prompt_tokens(args.request, args.length)
    else:
        tokens = oracle.reference_prefix(args.request, args.length)
    print(" ".join(str(t) for t in tokens))
    return 0


# -- presets -------------------------------------------------------------------


def cmd_presets(args: argparse.Namespace) -> int:
    for name in preset_names():
        preset = get_preset(name)
        points = ", ".join(label for label, _ in preset.points)
        print(f"{name}: {preset.description}")
        print(f"    axis={preset.axis or '-'} points=[{points}] "
              f"variants={','.join(preset.variants)} replicates={preset.replicates}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
