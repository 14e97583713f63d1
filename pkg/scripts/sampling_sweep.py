"""Sampled law against the continuous baseline for a range of periods T0.

The certified bound sits orders of magnitude below the periods that work in
practice; this sweep shows how the gap to the continuous trajectory shrinks
with T0 (roughly linearly for a zero-order hold).

    python scripts/sampling_sweep.py --values 0.08 0.04 0.02 0.01
"""

import argparse
from pathlib import Path

import numpy as np

from cooptrack.cli import format_sweep, sweep
from cooptrack.config import load_config
from cooptrack.simulation import certify_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="paper_sec4")
    ap.add_argument("--values", type=float, nargs="+", default=[0.08, 0.04, 0.02, 0.01])
    ap.add_argument("--horizon", type=float, default=30.0)
    ap.add_argument("--out", default="out/sweep")
    args = ap.parse_args(argv)

    cfg = load_config(args.config).with_updates(horizon=args.horizon)
    _, consts, _ = certify_scenario(cfg)
    print(f"certified T* = {consts.T_star:.4g}  (T1* = {consts.T1_star:.4g}, T2* = {consts.T2_star:.4g})")

    rows = sweep(cfg, "T0", args.values, law="sampled")
    print(format_sweep("T0", rows))

    T0 = np.array([r["T0"] for r in rows])
    gap = np.array([r["gap"] for r in rows])
    ok = np.isfinite(gap) & (gap > 0)
    if ok.sum() >= 2:
        slope = np.polyfit(np.log(T0[ok]), np.log(gap[ok]), 1)[0]
        print(f"gap ~ T0^{slope:.2f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}_T0_sweep.csv"
    np.savetxt(path, np.column_stack([T0, gap, [r["terminal_error"] for r in rows]]),
               delimiter=",", header="T0,gap,terminal_error", comments="")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
