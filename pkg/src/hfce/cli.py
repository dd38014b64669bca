"""Command line entry point: ``hfce run | verify | probe-scaling``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import harness
from .analysis import verify_all


def _cmd_run(args) -> int:
    raw = harness.load_raw_config(args.config)
    raw.setdefault("campaign", args.campaign)
    if raw["campaign"] != args.campaign:
        print(f"error: config describes campaign {raw['campaign']!r}, not {args.campaign!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = harness.ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    threads = harness.resolve_threads(args.threads)
    t0 = time.perf_counter()
    table = harness.run_campaign(cfg, threads)
    extra = {"row_wall_time_s": [r.wall_time for r in table.rows]}
    if cfg.campaign == "nmse_vs_gamma":
        extra["gamma_summary"] = harness.run_gamma_study(cfg, table=table)
    wall = time.perf_counter() - t0
    csv_path, man_path = harness.write_outputs(cfg, table, args.out, threads, wall, extra)
    sys.stdout.write(table.to_csv())
    print(f"wrote {csv_path} and {man_path} ({wall:.1f} s, {threads} thread(s))", file=sys.stderr)
    return 0


def _cmd_verify(args) -> int:
    rep = verify_all(args.seed)
    print(json.dumps(rep, indent=2))
    return 0 if all(rep["checks"].values()) else 1


def _cmd_probe(args) -> int:
    cfg = harness.ProbeConfig(repeats=args.repeats, seed=args.seed)
    probe = harness.runtime_scaling_probe(args.n, cfg)
    ratios = harness.doubling_ratios(probe)
    out = {"probe": [{"N": n, "median_s": t} for n, t in probe], "ratios": ratios, "config": vars(cfg)}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "probe_scaling.json").write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hfce", description="Hybrid near/far-field channel estimation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a Monte-Carlo campaign")
    r.add_argument("campaign", choices=harness.CAMPAIGNS)
    r.add_argument("--config", required=True, help="TOML or JSON experiment config")
    r.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the config)")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--threads", type=int, default=None, help="worker threads (HFCE_THREADS overrides)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="numerical checks of the analytical results")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_verify)

    s = sub.add_parser("probe-scaling", help="PD-OMP wall time versus array size")
    s.add_argument("--n", type=int, nargs="+", default=[64, 128, 256])
    s.add_argument("--repeats", type=int, default=51)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_probe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
