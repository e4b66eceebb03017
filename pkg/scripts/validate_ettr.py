"""Closed-form expected ETTR against Monte Carlo across job sizes and checkpoint costs."""
import time

from gpurel.core import DAY
from gpurel.ettr import EttrParams, expected_ettr_full, numeric_optimal_interval, optimal_checkpoint_interval
from gpurel.montecarlo import monte_carlo_expected_ettr
from gpurel.report import csv_text

from _common import parser, save

COLUMNS = ("nodes", "rate", "w_cp", "dt_cp", "dt_numeric", "analytic", "mc_mean", "mc_stderr", "rel_gap", "seconds")


def main():
    ap = parser(__doc__, "results/validate")
    ap.add_argument("--trials", type=int, default=1000)
    args = ap.parse_args()
    rows = []
    for nodes in (128, 512, 1024, 2048):
        for rate in (1e-3, 5e-3):
            for w in (10.0, 30.0, 300.0):
                dt = optimal_checkpoint_interval(w, nodes, rate)
                p = EttrParams(nodes, rate, 300.0, w, dt, 30 * DAY, 0.0)
                t0 = time.perf_counter()
                mc = monte_carlo_expected_ettr(p, trials=args.trials, seed=args.seed)
                an = expected_ettr_full(p).value
                rows.append(dict(nodes=nodes, rate=rate, w_cp=w, dt_cp=dt, dt_numeric=numeric_optimal_interval(p),
                                 analytic=an, mc_mean=mc.mean, mc_stderr=mc.stderr,
                                 rel_gap=abs(mc.mean - an) / an, seconds=time.perf_counter() - t0))
                r = rows[-1]
                print(f"N={nodes:5d} r={rate:g} w={w:5.0f}: analytic {an:.4f} MC {mc.mean:.4f} gap {r['rel_gap']:.2%}")
    save(args.out, "ettr_validation.csv", csv_text(COLUMNS, rows, meta={"seed": args.seed, "trials": args.trials}))


if __name__ == "__main__":
    main()
