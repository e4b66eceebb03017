"""Projected job MTTF versus job size, with simulated points at small sizes."""
import numpy as np

from gpurel.core import DAY, HOUR, JobSpec, JobState
from gpurel.failure_stats import project_mttf, rate_confidence_interval
from gpurel.report import csv_text, line_svg
from gpurel.simulator import ClusterConfig, run_simulation

from _common import parser, save


def simulated_mttf(nodes, rate, seed, failures=300):
    days = failures / (nodes * rate)
    cfg = ClusterConfig(node_count=nodes + 16, base_failure_rate=rate, horizon=days * DAY, max_job_lifetime=1e12,
                        false_positive_rate=0.0, user_exclusion_prob=0.0, record_events=False)
    tr = run_simulation(cfg, [JobSpec("probe", nodes * 8, 1e12, max_lifetime=1e12)], seed=seed)
    n = sum(a.end_state == JobState.NODE_FAIL for a in tr.attempts)
    hours = sum(a.runtime for a in tr.attempts) / HOUR
    lo, hi = rate_confidence_interval(n, hours)
    return hours / n, 1 / hi, 1 / lo


def main():
    ap = parser(__doc__, "results/mttf")
    ap.add_argument("--rates", type=float, nargs="+", default=[1e-3, 6.5e-3, 1e-2])
    args = ap.parse_args()
    sizes = [int(g) for g in 2 ** np.arange(3, 18)]
    rows = []
    for g in sizes:
        row = {"gpus": g}
        for r in args.rates:
            row[f"projected_h_rf_{r:g}"] = project_mttf(g, r)
        if g <= 4096:
            m, lo, hi = simulated_mttf(g // 8, args.rates[1 % len(args.rates)], args.seed)
            row.update(simulated_h=m, simulated_ci_lo=lo, simulated_ci_hi=hi)
        rows.append(row)
    cols = ["gpus"] + [f"projected_h_rf_{r:g}" for r in args.rates] + ["simulated_h", "simulated_ci_lo", "simulated_ci_hi"]
    save(args.out, "mttf_scaling.csv", csv_text(cols, rows, meta={"seed": args.seed}))
    series = {f"r_f={r:g}": [row[f"projected_h_rf_{r:g}"] for row in rows] for r in args.rates}
    save(args.out, "mttf_scaling.svg", line_svg(np.log2(sizes), series, "Projected MTTF", "log2(GPUs)",
                                                "MTTF (hours)", meta={"seed": args.seed}, logy=True))
    for g in (16384, 131072):
        print(f"{g} GPUs at r_f=6.5e-3: {project_mttf(g, 6.5e-3):.3f} h")


if __name__ == "__main__":
    main()
