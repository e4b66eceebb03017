"""Tune lemon thresholds on one seed, score them on others, and run the removal A/B."""
from gpurel.core import DAY
from gpurel.lemon import (
    Thresholds,
    ab_compare_removal,
    benchmark_scenario,
    classify_lemons,
    compute_node_signals,
    evaluate_detection,
    tune_thresholds,
)
from gpurel.report import csv_text
from gpurel.simulator import run_simulation

from _common import parser, save

COLUMNS = ("seed", "precision", "recall", "tp", "fp", "ab_without", "ab_with",
           "relative_reduction", "flagged_nodes")


def main():
    ap = parser(__doc__, "results/lemons")
    ap.add_argument("--eval-seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--window-days", type=float, default=90.0)
    ap.add_argument("--lemon-multiplier", type=float, default=20.0)
    ap.add_argument("--lemon-fraction", type=float, default=0.01)
    ap.add_argument("--skip-ab", action="store_true")
    args = ap.parse_args()
    scen = dict(lemon_fraction=args.lemon_fraction, lemon_multiplier=args.lemon_multiplier)
    cfg, wl = benchmark_scenario(seed=args.seed, **scen)
    tr = run_simulation(cfg, wl, seed=args.seed)
    thresholds = tune_thresholds(compute_node_signals(tr, window=args.window_days * DAY), tr.ground_truth)
    print(f"tuned on seed {args.seed}: {dict(thresholds.cutoffs)}")
    early = Thresholds({"multi_node_node_fails": 2, "single_node_node_fails": 2}, set_id="early")
    rows = []
    for s in args.eval_seeds:
        cfg, wl = benchmark_scenario(seed=s, **scen)
        tr = run_simulation(cfg, wl, seed=s)
        m = evaluate_detection(classify_lemons(compute_node_signals(tr, window=args.window_days * DAY), thresholds),
                               tr.ground_truth)
        row = dict(seed=s, precision=m.precision, recall=m.recall, tp=m.tp,
                   fp=m.fp)
        if not args.skip_ab:
            r = ab_compare_removal(cfg, wl, early, seed=s)
            row.update(ab_without=r.large_job_failure_fraction_without, ab_with=r.large_job_failure_fraction_with,
                       relative_reduction=r.relative_reduction, flagged_nodes=len(r.flagged_nodes))
        rows.append(row)
        print(", ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    meta = {"tuned_on": args.seed, "thresholds": dict(thresholds.cutoffs), **scen}
    save(args.out, "lemon_benchmark.csv", csv_text(COLUMNS, rows, meta=meta))


if __name__ == "__main__":
    main()
