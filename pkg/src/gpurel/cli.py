"""``gpurel`` command line.

Every command prints a reproducibility header (tool version, resolved
config, config hash, seed) to stderr, human-readable results to stdout, and
a final JSON line on stdout mirroring the numbers. Exit codes: 0 success,
1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .config import config_hash, load_cluster_config, load_flat
from .core import DAY, MINUTE, FailureRate

FORMATS = ("csv", "json", "svg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        flags = sorted({s for a in self._actions for s in a.option_strings})
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        if flags:
            sys.stderr.write("valid flags: " + " ".join(flags) + "\n")
        raise SystemExit(2)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=1000)
    g.add_argument("--config", default=None, help="flat TOML config file")
    g.add_argument("--out", default=None, help="output file (or directory for multi-file outputs)")
    g.add_argument("--format", choices=FORMATS, default="csv")
    g.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads for trials")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="gpurel", description="GPU cluster reliability toolkit")
    ap.add_argument("--version", action="version", version=f"gpurel {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run the cluster simulator")
    s.add_argument("--workload", required=True, help="workload JSONL (from genload)")
    s.add_argument("--nodes", type=int, default=None, help="override node_count")
    s.add_argument("--horizon-days", type=float, default=None)
    s.add_argument("--no-events", action="store_true", help="omit the raw event stream from the trace")

    e = sub.add_parser("ettr", parents=[common], help="expected ETTR of one job")
    e.add_argument("--nodes", type=int, required=True)
    e.add_argument("--rate", type=float, required=True, help="failures per node-day")
    e.add_argument("--u0", type=float, default=5 * MINUTE)
    e.add_argument("--wcp", type=float, default=5 * MINUTE)
    e.add_argument("--policy", default="daly-young", help="'daly-young', 'numeric', or an interval in seconds")
    e.add_argument("--R-days", dest="R_days", type=float, default=30.0, help="productive time (days)")
    e.add_argument("--q", type=float, default=0.0, help="mean queue time per attempt (s)")
    e.add_argument("--monte-carlo", action="store_true", help="also run --trials Monte Carlo trials")

    m = sub.add_parser("mttf", parents=[common], help="projected MTTF for a job size")
    m.add_argument("--gpus", type=int, required=True)
    m.add_argument("--rate", type=float, required=True, help="failures per node-day")
    m.add_argument("--gpus-per-node", type=int, default=8)

    w = sub.add_parser("sweep", parents=[common], help="ETTR over failure rate x checkpoint cost")
    w.add_argument("--nodes", type=int, default=1500)
    w.add_argument("--u0", type=float, default=5 * MINUTE)
    w.add_argument("--R-days", dest="R_days", type=float, default=30.0)
    w.add_argument("--rf-min", type=float, default=0.5e-3)
    w.add_argument("--rf-max", type=float, default=10e-3)
    w.add_argument("--rf-steps", type=int, default=20)
    w.add_argument("--wcp-min", type=float, default=1.0)
    w.add_argument("--wcp-max", type=float, default=600.0)
    w.add_argument("--wcp-steps", type=int, default=20)
    w.add_argument("--policy", default="daly-young")

    le = sub.add_parser("lemons", parents=[common], help="node signals and lemon verdicts for a trace")
    le.add_argument("--trace", required=True)
    le.add_argument("--window-days", type=float, default=28.0)
    le.add_argument("--tune", action="store_true", help="tune thresholds on the trace's ground truth")

    at = sub.add_parser("attribute", parents=[common], help="failure attribution and rate estimates")
    at.add_argument("--trace", required=True)
    at.add_argument("--min-gpus", type=int, default=128)
    at.add_argument("--pre-window", type=float, default=10 * MINUTE)
    at.add_argument("--post-window", type=float, default=5 * MINUTE)

    g = sub.add_parser("genload", parents=[common], help="generate a synthetic workload")
    g.add_argument("--count", type=int, default=10_000)
    g.add_argument("--nodes", type=int, default=None, help="size arrivals for this many nodes")
    g.add_argument("--utilization", type=float, default=0.8)
    g.add_argument("--max-gpus", type=int, default=None, help="drop size choices above this")

    r = sub.add_parser("report", parents=[common], help="render tables and plots")
    r.add_argument("--input", required=True, help="trace JSONL or sweep CSV")
    r.add_argument("--kind", choices=("mttf", "rolling", "goodput", "contour", "status"), required=True)
    r.add_argument("--buckets", default="8,16,32,64,128,256,512,1024,2048,4096")
    return ap


# -- helpers ----------------------------------------------------------------


def _header(args, resolved: dict) -> dict:
    h = {"tool_version": __version__, "command": args.command, "seed": args.seed, "config_hash": config_hash(resolved)}
    sys.stderr.write(f"# gpurel {__version__} {args.command} seed={args.seed} config_hash={h['config_hash']}\n")
    sys.stderr.write("# config " + json.dumps(resolved, sort_keys=True, default=str) + "\n")
    return h


def _write(path: Optional[str], text: str):
    if path is None:
        sys.stdout.write(text)
        return
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _emit_json(d: dict):
    print(json.dumps(d, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    return str(o)


def _finite(v):
    return v if v is None or math.isfinite(v) else str(v)


# -- commands ---------------------------------------------------------------


def cmd_mttf(args):
    from .failure_stats import project_mttf
    from .core import nodes_required

    resolved = {"gpus": args.gpus, "rate": args.rate, "gpus_per_node": args.gpus_per_node}
    prov = _header(args, resolved)
    h = project_mttf(args.gpus, FailureRate(args.rate), args.gpus_per_node)
    n = nodes_required(args.gpus, args.gpus_per_node)
    print(f"MTTF {h:.2f} h ({h / 24:.2f} days) for {args.gpus} GPUs on {n} nodes at r_f={args.rate * 1000:g}/1000 node-days")
    _emit_json({"mttf_hours": h, "mttf_days": h / 24, "nodes": n, "provenance": prov})


def _interval(policy, wcp, nodes, rate, params=None):
    from .ettr import numeric_optimal_interval, optimal_checkpoint_interval

    if policy == "daly-young":
        return optimal_checkpoint_interval(wcp, nodes, FailureRate(rate))
    if policy == "numeric":
        return numeric_optimal_interval(params)
    try:
        return float(policy)
    except ValueError:
        raise UsageError(f"unknown policy {policy!r}: use daly-young, numeric, or seconds") from None


def cmd_ettr(args):
    from .ettr import EttrParams, expected_ettr_full, expected_ettr_simplified

    resolved = {k: getattr(args, k) for k in ("nodes", "rate", "u0", "wcp", "policy", "R_days", "q")}
    prov = _header(args, resolved)
    R = args.R_days * DAY
    base = EttrParams(args.nodes, FailureRate(args.rate), args.u0, args.wcp, 3600.0, R, args.q)
    dt = _interval(args.policy, args.wcp, args.nodes, args.rate, base)
    p = base.replace(dt_cp=dt)
    full = expected_ettr_full(p)
    simple = expected_ettr_simplified(p)
    print(f"checkpoint interval {dt:.1f} s ({dt / 60:.1f} min)")
    print(f"expected ETTR {full.value:.4f} (simplified {simple:.4f}); expected failures {full.expected_failures:.1f}")
    out = {
        "dt_cp": dt,
        "ettr": full.value,
        "ettr_simplified": simple,
        "expected_failures": full.expected_failures,
        "provenance": prov,
    }
    if args.monte_carlo:
        from .montecarlo import monte_carlo_expected_ettr

        mc = monte_carlo_expected_ettr(p, args.trials, args.seed, jobs=args.jobs)
        print(f"Monte Carlo ETTR {mc.mean:.4f} +/- {mc.stderr:.4f} over {mc.trials} trials")
        out.update({"mc_mean": mc.mean, "mc_stderr": mc.stderr, "trials": mc.trials})
    _emit_json(out)


def cmd_sweep(args):
    from .ettr import SweepResult, ettr_sweep
    from .report import contour_svg, csv_text

    resolved = {k: getattr(args, k) for k in ("nodes", "u0", "R_days", "rf_min", "rf_max", "rf_steps", "wcp_min", "wcp_max", "wcp_steps", "policy")}
    prov = _header(args, resolved)
    rf = np.geomspace(args.rf_min, args.rf_max, args.rf_steps) if args.rf_steps > 0 else []
    wcp = np.geomspace(args.wcp_min, args.wcp_max, args.wcp_steps) if args.wcp_steps > 0 else []
    policy = args.policy if args.policy == "daly-young" else float(args.policy)
    res = ettr_sweep(args.nodes, args.u0, args.R_days * DAY, rf, wcp, policy)
    if args.format == "svg":
        _write(args.out, contour_svg(res, meta=prov))
    elif args.format == "json":
        _write(args.out, json.dumps({"provenance": prov, "rows": list(res.rows())}, sort_keys=True) + "\n")
    else:
        _write(args.out, csv_text(SweepResult.CSV_COLUMNS, res.rows(), prov))
    valid = res.ettr[res.valid]
    _emit_json({"cells": int(res.ettr.size), "valid_cells": int(res.valid.sum()), "ettr_min": float(np.nanmin(valid)) if valid.size else None, "ettr_max": float(np.nanmax(valid)) if valid.size else None, "provenance": prov})


def cmd_genload(args):
    from .trace_io import write_workload
    from .workload import SizeBucket, WorkloadConfig, arrival_rate_for_utilization, generate_workload, gpu_time_shares

    flat = load_flat(args.config) if args.config else {}
    wkeys = {"duration_median", "duration_sigma", "duration_cap", "arrival_rate", "checkpoint_interval", "checkpoint_write_overhead", "restart_overhead"}
    kw = {k: v for k, v in flat.items() if k in wkeys}
    cfg = WorkloadConfig(job_count=args.count, seed=args.seed, **kw)
    if args.max_gpus is not None:
        buckets = []
        for b in cfg.size_buckets:
            sizes = tuple(s for s in b.sizes if s <= args.max_gpus)
            if sizes:
                buckets.append(SizeBucket(sizes, b.probability, b.priority))
        tot = sum(b.probability for b in buckets)
        cfg = replace(cfg, size_buckets=tuple(SizeBucket(b.sizes, b.probability / tot, b.priority) for b in buckets))
    nodes = args.nodes or flat.get("node_count")
    if nodes and "arrival_rate" not in kw:
        cfg = replace(cfg, arrival_rate=arrival_rate_for_utilization(cfg, nodes * flat.get("gpus_per_node", 8), args.utilization))
    resolved = {"job_count": cfg.job_count, "seed": cfg.seed, "arrival_rate": cfg.arrival_rate, "max_gpus": args.max_gpus, **kw}
    prov = _header(args, resolved)
    jobs = generate_workload(cfg)
    shares = gpu_time_shares(jobs)
    if args.out is None:
        raise UsageError("genload needs --out")
    digest = write_workload(args.out, jobs, meta={**prov, "workload": resolved})
    print(f"{len(jobs)} jobs -> {args.out}")
    _emit_json({"jobs": len(jobs), "digest": digest, **shares, "provenance": prov})


def cmd_simulate(args):
    from .goodput import goodput_loss_attribution
    from .trace_io import from_sim, read_workload, write_trace
    from .core import ettr_of
    from .simulator import run_simulation

    over = {}
    if args.nodes is not None:
        over["node_count"] = args.nodes
    if args.horizon_days is not None:
        over["horizon"] = args.horizon_days * DAY
    cfg = load_cluster_config(args.config, **over)
    resolved = cfg.as_flat_dict()
    prov = _header(args, resolved)
    workload = read_workload(args.workload)
    if not workload:
        raise ValueError(f"{args.workload}: no jobs")
    trace = run_simulation(cfg, workload, args.seed)
    tf = from_sim(trace, meta={"config_hash": prov["config_hash"]}, include_events=not args.no_events)
    out = args.out or "trace.jsonl"
    digest = write_trace(out, tf)
    gp = goodput_loss_attribution(trace)
    ettrs = [ettr_of(r) for r in trace.runs if r.Q + r.R + r.U > 0 and not r.censored]
    states = {}
    for a in trace.attempts:
        states[a.end_state.value] = states.get(a.end_state.value, 0) + 1
    print(f"{len(trace.runs)} runs, {len(trace.attempts)} attempts, end {trace.end_time / DAY:.2f} days -> {out}")
    print(f"lost goodput: first order {gp.first_order:.1f} GPU-h, second order {gp.second_order:.1f} GPU-h")
    _emit_json(
        {
            "trace": out,
            "trace_digest": digest,
            "runs": len(trace.runs),
            "attempts": len(trace.attempts),
            "attempt_states": states,
            "mean_ettr": float(np.mean(ettrs)) if ettrs else None,
            "goodput_first_order_gpu_hours": gp.first_order,
            "goodput_second_order_gpu_hours": gp.second_order,
            "provenance": prov,
        }
    )


def cmd_lemons(args):
    from .lemon import DEFAULT_THRESHOLDS, SIGNALS, Thresholds, classify_lemons, compute_node_signals, evaluate_detection, tune_thresholds
    from .report import csv_text
    from .trace_io import read_trace

    tf = read_trace(args.trace)
    thresholds = DEFAULT_THRESHOLDS
    if args.config:
        flat = load_flat(args.config)
        cut = {k[len("lemon_threshold_") :]: float(v) for k, v in flat.items() if k.startswith("lemon_threshold_")}
        if cut:
            thresholds = Thresholds(cut, flat.get("lemon_rule", "any-of"), int(flat.get("lemon_k", 1)), "config")
    sigs = compute_node_signals(tf, args.window_days * DAY)
    truth = tf.ground_truth
    if args.tune:
        thresholds = tune_thresholds(sigs, truth)
    resolved = {"trace": args.trace, "window_days": args.window_days, "thresholds": thresholds.cutoffs, "rule": thresholds.rule}
    prov = _header(args, resolved)
    verdicts = classify_lemons(sigs, thresholds)
    flagged = {v.node_id: v for v in verdicts}
    rows = []
    for s in sigs:
        r = s.as_row()
        v = flagged[s.node_id]
        r.update({"flagged": v.flagged, "triggering_signals": ";".join(v.triggering_signals)})
        rows.append(r)
    cols = ("node_id",) + SIGNALS + ("window", "flagged", "triggering_signals")
    if args.format == "json":
        _write(args.out, json.dumps({"provenance": prov, "rows": rows}, sort_keys=True) + "\n")
    else:
        _write(args.out, csv_text(cols, rows, prov))
    out = {"nodes": len(sigs), "flagged": sum(v.flagged for v in verdicts), "thresholds": thresholds.cutoffs, "provenance": prov}
    if any(truth.values()):
        m = evaluate_detection(verdicts, truth)
        out.update({"precision": _finite(m.precision), "recall": _finite(m.recall), "false_positive_rate": m.false_positive_rate})
    if args.out:
        print(f"{out['flagged']} of {out['nodes']} nodes flagged -> {args.out}")
    _emit_json(out)


def _failure_records(tf, pre=10 * MINUTE, post=5 * MINUTE):
    from .failure_stats import attribute_failures

    return attribute_failures(tf.attempts, sorted(tf.health_events, key=lambda e: e.time), pre, post, known_nodes=[n.node_id for n in tf.nodes] or None)


def cmd_attribute(args):
    from .failure_stats import estimate_failure_rate
    from .report import csv_text
    from .trace_io import read_trace

    tf = read_trace(args.trace)
    resolved = {"trace": args.trace, "min_gpus": args.min_gpus, "pre_window": args.pre_window, "post_window": args.post_window}
    prov = _header(args, resolved)
    recs = _failure_records(tf, args.pre_window, args.post_window)
    cols = ("job_id", "attempt_index", "end_time", "end_state", "gpus", "attributed_cause", "co_occurring_causes")
    rows = [
        {
            "job_id": r.job_id,
            "attempt_index": r.attempt_index,
            "end_time": r.end_time,
            "end_state": r.end_state.value,
            "gpus": r.gpus,
            "attributed_cause": r.attributed_cause.value,
            "co_occurring_causes": ";".join(c.value for c in r.co_occurring_causes),
        }
        for r in recs
    ]
    _write(args.out, csv_text(cols, rows, prov))
    causes = {}
    for r in recs:
        causes[r.attributed_cause.value] = causes.get(r.attributed_cause.value, 0) + 1
    out = {"failures": len(recs), "by_cause": causes, "provenance": prov}
    try:
        est = estimate_failure_rate(recs, tf.attempts, args.min_gpus)
        out.update({"r_f_per_1000_node_days": est.rate.per_thousand, "ci90": [est.ci90[0].per_thousand, est.ci90[1].per_thousand], "exposure_node_days": est.exposure, "rate_failures": est.failures})
    except ValueError as exc:
        out["r_f_error"] = str(exc)
    _emit_json(out)


def cmd_report(args):
    from . import report as rp
    from .trace_io import read_trace

    resolved = {"input": args.input, "kind": args.kind, "format": args.format}
    prov = _header(args, resolved)
    if args.kind == "contour":
        from .ettr import SweepResult

        with open(args.input, encoding="utf-8") as fh:
            cols, rows = rp.read_csv_rows(fh.read())
        if tuple(cols) != SweepResult.CSV_COLUMNS:
            raise ValueError(f"{args.input}: not a sweep CSV (columns {cols})")
        if not rows:
            raise ValueError("no cells")
        rf = sorted({float(r["r_f"]) for r in rows})
        wc = sorted({float(r["w_cp"]) for r in rows})
        Z = np.full((len(rf), len(wc)), np.nan)
        D = np.full_like(Z, np.nan)
        V = np.zeros_like(Z, dtype=bool)
        for r in rows:
            i, j = rf.index(float(r["r_f"])), wc.index(float(r["w_cp"]))
            Z[i, j] = float(r["ettr"]) if r["ettr"] else np.nan
            D[i, j] = float(r["dt_cp"])
            V[i, j] = r["valid"] == "True"
        res = SweepResult(0, 0, 0, np.array(rf), np.array(wc), D, Z, V, np.zeros_like(V))
        if args.format == "svg":
            _write(args.out, rp.contour_svg(res, meta=prov))
        else:
            _write(args.out, rp.csv_text(SweepResult.CSV_COLUMNS, res.rows(), prov))
        _emit_json({"cells": int(Z.size), "provenance": prov})
        return
    tf = read_trace(args.input)
    r_f = tf.meta.get("config", {}).get("base_failure_rate")
    if args.kind == "mttf":
        from .failure_stats import MttfRow, mttf_by_job_size

        buckets = [int(b) for b in args.buckets.split(",")]
        rows = mttf_by_job_size(tf.attempts, _failure_records(tf), buckets, r_f=r_f)
        if args.format == "svg":
            _write(args.out, rp.mttf_svg(rows, meta=prov))
        else:
            _write(args.out, rp.csv_text(MttfRow.CSV_COLUMNS, [r.as_row() for r in rows], prov))
        _emit_json({"rows": [r.as_row() for r in rows], "provenance": prov})
    elif args.kind == "rolling":
        from .failure_stats import rolling_failure_rate

        recs = sorted(_failure_records(tf), key=lambda r: r.end_time)
        rr = rolling_failure_rate(recs, tf.attempts, by_cause=True)
        if args.format == "svg":
            series = {"all": rr.rate, **{c.value: v for c, v in rr.by_cause.items()}}
            _write(args.out, rp.line_svg(rr.days, series, "30-day rolling failure rate", "day", "failures per 1000 node-days", prov))
        else:
            _write(args.out, rp.csv_text(rr.CSV_COLUMNS + tuple(c.value for c in rr.by_cause), rr.rows(), prov))
        _emit_json({"days": int(len(rr.days)), "final_rate": float(rr.rate[-1]) if len(rr.rate) else None, "provenance": prov})
    elif args.kind == "goodput":
        from .goodput import GoodputBreakdown, goodput_loss_attribution

        gp = goodput_loss_attribution(tf)
        rows = list(gp.rows())
        if args.format == "svg":
            labels = [r["size_bucket"] for r in rows]
            groups = {"first order": [r["first_order_gpu_hours"] for r in rows], "second order": [r["second_order_gpu_hours"] for r in rows]}
            _write(args.out, rp.bar_svg(labels, groups, "Lost goodput by job size", "GPU-hours", prov))
        else:
            _write(args.out, rp.csv_text(GoodputBreakdown.CSV_COLUMNS, rows, prov))
        _emit_json({"first_order_gpu_hours": gp.first_order, "second_order_gpu_hours": gp.second_order, "second_order_share": gp.second_order_share, "provenance": prov})
    elif args.kind == "status":
        from .workload import StatusRow, status_breakdown

        rows = status_breakdown(tf.attempts)
        if args.format == "svg":
            raise UsageError("status report supports csv or json only")
        d = [{"state": r.state, "job_pct": r.job_pct, "gpu_time_pct": r.gpu_time_pct} for r in rows]
        _write(args.out, rp.csv_text(StatusRow.CSV_COLUMNS, d, prov))
        _emit_json({"rows": d, "provenance": prov})


COMMANDS = {
    "simulate": cmd_simulate,
    "ettr": cmd_ettr,
    "mttf": cmd_mttf,
    "sweep": cmd_sweep,
    "lemons": cmd_lemons,
    "attribute": cmd_attribute,
    "genload": cmd_genload,
    "report": cmd_report,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
        if extra:
            # report against the subcommand so the listed flags are the useful ones
            ap._subparsers._group_actions[0].choices[args.command].error(
                "unrecognized arguments: " + " ".join(extra)
            )
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"gpurel {args.command}: usage error: {exc}\n")
        return 2
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"gpurel {args.command}: error: {exc}\n")
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
