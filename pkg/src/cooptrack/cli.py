"""Command line: ``certify``, ``run`` and ``sweep`` over TOML scenarios."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .config import load_config
from .controllers import ControllerGains
from .simulation import certify_scenario, run_scenario, simulate, initial_fleet
from .verification import flat_dumps, verify_run

SWEEP_PARAMS = ("T0", "k_v", "k_omega", "h")
SWEEP_LOG_EVERY = 0.2


def certificate_report(cfg, consts, assessment) -> dict:
    flat = consts.to_flat()
    flat.update(
        scenario=cfg.name,
        M_hat=assessment.M_hat,
        mu_hat=assessment.mu_hat,
        mu_hat_history=assessment.mu_hat_history,
        T0_configured=cfg.T0,
        T0_certified=consts.t0_certified,
        T0_T1_region=cfg.T0 < consts.T1_star,
        T0_T2_region=cfg.T0 < consts.T2_star,
        max_nonvacuous_r0=consts.max_nonvacuous_r0(),
    )
    flat["statement"] = (
        f"T0 = {cfg.T0:g} is inside the certified region (0, {consts.T_star:.4g})"
        if consts.t0_certified else
        f"T0 = {cfg.T0:g} is outside the certified region (0, {consts.T_star:.4g}); "
        f"the certified bound is {cfg.T0 / consts.T_star:.3g}x smaller"
    )
    return flat


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    _, consts, assessment = certify_scenario(cfg)
    rep = certificate_report(cfg, consts, assessment)
    out = cfg.out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}_certificate.toml"
    path.write_text(flat_dumps(rep), encoding="utf-8")
    for key in ("gamma", "sigma", "C0", "C0_bar", "C3", "T1_star", "T2_star", "T_star", "varrho", "chi"):
        print(f"{key:>10} = {rep[key]:.6g}")
    print(rep["statement"])
    print(f"wrote {path}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.log_every is not None:
        cfg = cfg.with_updates(log_every=args.log_every)
    law = args.law or cfg.law
    if law != cfg.law:
        cfg = cfg.with_updates(law=law)
    run = run_scenario(cfg)
    report = verify_run(run)
    out = cfg.out_dir(args.out)
    stem = f"{cfg.name}_{law}"
    csv = run.log.to_csv(out / f"{stem}.csv")
    (out / f"{stem}_report.toml").write_text(report.dumps(), encoding="utf-8")
    print(report.summary_table())
    print(f"wrote {csv}")
    return 0 if report.ok else 1


def _fit_rate(t, y, lo=1e-11):
    keep = np.isfinite(y) & (y > lo) & (y < 1e-2 * max(y[0], lo))
    if keep.sum() < 3:
        keep = np.isfinite(y) & (y > lo)
    if keep.sum() < 3:
        return math.nan
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def _apply(cfg, param, value):
    if param == "T0":
        return cfg.with_updates(T0=value, step=None if cfg.step is None else min(cfg.step, value / 8))
    if param == "h":
        return cfg.with_updates(step=value)
    gains = cfg.gains
    if param == "k_v":
        return cfg.with_updates(gains=ControllerGains(gains.k_omega, value))
    return cfg.with_updates(gains=ControllerGains(value, gains.k_v))


def sweep(cfg, param: str, values, law: str | None = None, log_every: float | None = None):
    """One row per value: terminal error, fitted decay rates, monitor statuses
    and (for T0) the sup-norm gap to a continuous-law baseline."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    law = law or cfg.law
    cfg = cfg.with_updates(law=law, log_every=log_every or cfg.log_every or SWEEP_LOG_EVERY)
    rows = []
    baseline = None
    if param == "T0" and values and law == "sampled":
        base_cfg = cfg.with_updates(law="continuous", step=None)
        baseline = simulate(base_cfg.network, base_cfg.signal, base_cfg.gains, initial_fleet(base_cfg),
                            "continuous", base_cfg.integrator(), offsets=base_cfg.offsets)
    for value in values:
        c = _apply(cfg, param, float(value))
        run = run_scenario(c)
        rep = verify_run(run)
        log = run.log
        fe = log.formation_errors().max(axis=1)
        row = {
            param: float(value),
            "terminal_error": float(fe[-1]),
            "theta_rate": _fit_rate(log.time, log.theta_norm()),
            "error_rate": _fit_rate(log.time, fe),
            "gap": math.nan,
            "status": "ok" if rep.ok else "FAIL",
            "monitors": " ".join(f"{e.name}={e.status}" for e in rep.entries),
        }
        if baseline is not None:
            common, ia, ib = np.intersect1d(np.round(log.time, 9), np.round(baseline.time, 9),
                                            return_indices=True)
            if len(common):
                row["gap"] = float(np.abs(log.states[ia] - baseline.states[ib]).max())
        rows.append(row)
    return rows


def format_sweep(param, rows) -> str:
    head = [param, "terminal_error", "theta_rate", "error_rate", "gap", "status"]
    lines = ["  ".join(f"{h:>14}" for h in head)]
    for r in rows:
        lines.append("  ".join(f"{r[h]:>14.6g}" if isinstance(r[h], float) else f"{r[h]:>14}" for h in head))
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    values = [float(v) for tok in (args.values or []) for v in tok.split(",") if v.strip()]
    rows = sweep(cfg, args.param, values, law=args.law, log_every=args.log_every)
    print(format_sweep(args.param, rows))
    out = cfg.out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}_sweep_{args.param}.csv"
    cols = [args.param, "terminal_error", "theta_rate", "error_rate", "gap", "status", "monitors"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(f"{r[c]:.17g}" if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
    print(f"wrote {path}")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cooptrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="scenario TOML file or bundled scenario name")
        sp.add_argument("--out", help="output directory (default: $COOPTRACK_OUT or ./out)")

    c = sub.add_parser("certify", help="compute the certificate set")
    common(c)
    c.set_defaults(func=cmd_certify)

    r = sub.add_parser("run", help="simulate and run every enabled monitor")
    common(r)
    r.add_argument("--log-every", type=float, help="seconds between logged records")
    r.add_argument("--law", choices=("continuous", "sampled"))
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    common(s)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", nargs="*", default=[], help="values, space or comma separated")
    s.add_argument("--log-every", type=float)
    s.add_argument("--law", choices=("continuous", "sampled"))
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # config, network, certificate and validation errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
