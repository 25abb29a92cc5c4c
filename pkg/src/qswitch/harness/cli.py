"""Command-line interface: ``qswitch {preset,check,certify,run,exponent}``."""

import argparse
import json
import os
import sys

import numpy as np

from .._validation import ValidationError
from ..certificate import (
    build_certificate,
    check_A2_sampled,
    compute_l_bounds,
    compute_modulation_bound,
    certificate_residual,
)
from ..lindblad import check_invariance, spectral_abscissa
from ..policies import POLICY_KINDS
from .config import ExperimentConfig
from .presets import PRESETS, get_preset
from .runner import PrerequisiteError, estimate_lyapunov_exponent, read_summary_csv, run_experiment


def _load(path):
    if path in PRESETS:
        return get_preset(path)
    return ExperimentConfig.load(path)


def cmd_preset(args):
    text = get_preset(args.name).to_json() + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _gamma(cfg, bank):
    return cfg.gamma if cfg.gamma is not None else np.full(len(bank), 1.0 / len(bank))


def cmd_check(args):
    cfg = _load(args.config)
    bank, d = cfg.bank(), cfg.subspace()
    ok = True
    for j, g in enumerate(bank):
        r = check_invariance(g, d)
        spec = spectral_abscissa(g, d)
        worst = max(r.residuals.values())
        print(f"generator {j + 1}: invariant={r.invariant} (max residual {worst:.3e}) alpha={spec.alpha:.6g}")
    gamma = _gamma(cfg, bank)
    spec = spectral_abscissa((bank, gamma), d)
    print(f"combination gamma={list(np.round(gamma, 6))}: invariant={spec.invariant} alpha={spec.alpha:.6g} GAS={spec.gas}")
    if cfg.policy == "sigma5" or cfg.K is not None:
        K = np.asarray(cfg.K)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(0, 1))))
        a2 = check_A2_sampled(bank, K, d, n_samples=cfg.a2_samples, rng=rng)
        print(f"A2 sampled: {a2.violations} violations in {a2.n_samples} states (min margin {a2.min_margin:.3e})")
        ok = ok and a2.ok
    if cfg.policy != "sigma5":
        ok = ok and spec.gas
        if spec.gas:
            cert = build_certificate(bank, d, gamma=gamma)
            print(f"certificate: c={cert.c:.6g} residual={certificate_residual(bank, cert, d):.3e}")
    return 0 if ok else 1


def cmd_certify(args):
    cfg = _load(args.config)
    bank, d = cfg.bank(), cfg.subspace()
    try:
        cert = build_certificate(bank, d, gamma=None if cfg.gamma_search else _gamma(cfg, bank), gamma_search=cfg.gamma_search)
    except Exception as exc:
        print(f"certificate construction failed: {exc}", file=sys.stderr)
        return 1
    bounds = compute_l_bounds(bank, cert, d, cfg.epsilon)
    M_bar = compute_modulation_bound(bank, cert.K).M_bar
    out = {"certificate": cert.to_dict(), "bounds": bounds.to_dict(), "M_bar": M_bar}
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    print(f"c = {cert.c:.6g}  alpha_gamma = {cert.alpha_gamma:.6g}  t_D = {bounds.t_D:.6g}  M_bar = {M_bar:.6g}")
    return 0


def cmd_run(args):
    cfg = _load(args.config)
    cfg = cfg.replace(
        seed=args.seed, n_trajectories=args.trajectories, policy=args.policy,
        open_loop_compare=True if args.open_loop_compare else None,
    )
    out = args.out or cfg.out or f"run_{cfg.name}_{cfg.policy}_seed{cfg.seed}"
    try:
        summary = run_experiment(cfg, out)
    except PrerequisiteError as exc:
        print(f"prerequisite failed: {exc}", file=sys.stderr)
        return 2
    print(f"{summary.n_trajectories} trajectories, T = {cfg.T:g}: final mean d_S = {summary.mean_dS[-1]:.4g}")
    if summary.exponent is not None:
        e = summary.exponent
        print(f"lambda_hat = {e.slope:.5g} +/- {e.stderr:.2g} (reference {summary.reference_rate:.5g})")
    for name, passed in summary.checks.items():
        print(f"{'PASS' if passed else 'FAIL'} {name}")
    print(f"outputs in {out}")
    return 0 if summary.passed else 1


def cmd_exponent(args):
    data = read_summary_csv(os.path.join(args.run_dir, "summary.csv"))
    window = (0.2, 0.9)
    ref = None
    mpath = os.path.join(args.run_dir, "manifest.json")
    if os.path.exists(mpath):
        with open(mpath) as fh:
            m = json.load(fh)
        window = tuple(m["config"].get("fit_window", window))
        ref = m["summary"].get("reference_rate")
    e = estimate_lyapunov_exponent(data["t"], data["mean_trK"], window)
    print(f"lambda_hat = {e.slope:.6g} +/- {e.stderr:.2g} over {e.n_points} points")
    if ref is not None:
        passed = e.slope <= ref + 3 * e.stderr
        print(f"reference -eps*c = {ref:.6g}: {'PASS' if passed else 'FAIL'}")
        return 0 if passed else 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qswitch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preset", help="write a preset configuration as JSON")
    s.add_argument("name", choices=sorted(PRESETS))
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_preset)

    s = sub.add_parser("check", help="invariance, GAS, A2 and certificate report")
    s.add_argument("config", help="JSON config or preset name")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("certify", help="build K, c, t_D and M_bar")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("run", help="Monte Carlo run")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--trajectories", type=int)
    s.add_argument("--out")
    s.add_argument("--policy", choices=POLICY_KINDS)
    s.add_argument("--open-loop-compare", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("exponent", help="Lyapunov exponent of a finished run")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_exponent)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
