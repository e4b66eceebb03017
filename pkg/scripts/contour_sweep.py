"""ETTR contour over failure rate and checkpoint write cost for a fixed job size."""
import numpy as np

from gpurel.core import DAY
from gpurel.ettr import ettr_sweep
from gpurel.report import contour_svg, csv_text

from _common import parser, save


def main():
    ap = parser(__doc__, "results/contour")
    ap.add_argument("--nodes", type=int, default=1500)
    args = ap.parse_args()
    sw = ettr_sweep(args.nodes, 300.0, 30 * DAY, np.geomspace(1e-4, 1e-1, 60), np.geomspace(1.0, 3600.0, 60))
    meta = {"nodes": args.nodes}
    save(args.out, "ettr_sweep.csv", csv_text(sw.CSV_COLUMNS, sw.rows(), meta=meta))
    save(args.out, "ettr_contour.svg", contour_svg(sw, meta=meta))


if __name__ == "__main__":
    main()
