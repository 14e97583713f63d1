"""Four-follower benchmark: certify, simulate both laws, print the error decay.

    python scripts/reference_run.py --out out/reference
"""

import argparse
from pathlib import Path

import numpy as np

from cooptrack.cli import certificate_report
from cooptrack.config import load_config
from cooptrack.simulation import certify_scenario, run_scenario
from cooptrack.verification import flat_dumps, verify_run


def decay_table(log, marks):
    fe = log.formation_errors().max(axis=1)
    rows = []
    for t in marks:
        j = int(np.argmin(np.abs(log.time - t)))
        rows.append((log.time[j], fe[j], log.theta_norm()[j]))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="paper_sec4")
    ap.add_argument("--out", default="out/reference")
    ap.add_argument("--horizon", type=float)
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    if args.horizon:
        cfg = cfg.with_updates(horizon=args.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    _, consts, assessment = certify_scenario(cfg)
    rep = certificate_report(cfg, consts, assessment)
    (out / f"{cfg.name}_certificate.toml").write_text(flat_dumps(rep))
    print(rep["statement"])

    marks = [0, 1, 2, 5, 10, 20, 30, 50, 75, cfg.horizon]
    for law in ("sampled", "continuous"):
        run = run_scenario(cfg, law=law)
        run.log.to_csv(out / f"{cfg.name}_{law}.csv")
        report = verify_run(run)
        (out / f"{cfg.name}_{law}_report.toml").write_text(report.dumps())
        print(f"\n{law} law")
        print(f"{'t':>8} {'max formation error':>20} {'|theta error|':>14}")
        for t, e, th in decay_table(run.log, marks):
            print(f"{t:8.2f} {e:20.3e} {th:14.3e}")
        print(report.summary_table())
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
