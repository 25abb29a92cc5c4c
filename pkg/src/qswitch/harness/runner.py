"""Monte Carlo orchestration, aggregation, diagnostics and run outputs."""

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from .._validation import ValidationError
from ..certificate import (
    NotInvariant,
    build_certificate,
    check_A2_sampled,
    compute_l_bounds,
    compute_modulation_bound,
)
from ..lindblad import GeneratorBank, check_invariance, spectral_abscissa
from ..policies import (
    DwellArgmin,
    FixedIndex,
    Hysteresis,
    Modulated,
    ScheduleReplay,
    run_sigma1,
    run_sigma2,
    write_events_csv,
)
from ..sme import NoiseStream, simulate_ensemble

N_BOOTSTRAP = 200
MIN_FIT_POINTS = 10


class PrerequisiteError(RuntimeError):
    """A policy was asked to run on a model that violates its assumptions."""


@dataclass
class ExponentEstimate:
    slope: float
    stderr: float
    n_points: int
    window: tuple


def _fit_mask(t, window):
    T = t[-1]
    return (t >= window[0] * T - 1e-12) & (t <= window[1] * T + 1e-12)


def _slope(t, y):
    tc = t - t.mean()
    return float(tc @ (y - y.mean()) / (tc @ tc))


def estimate_lyapunov_exponent(t, mean_trK, window=(0.2, 0.9), samples=None, rng=None):
    """Least-squares slope of ``log mean Tr(K rho)`` over the fraction ``window`` of ``[0, T]``.

    With ``samples`` (per-trajectory ``Tr(K rho)``, shape ``(n_traj, n_t)``)
    the standard error is a bootstrap over trajectories; otherwise it is the
    ordinary least-squares standard error of the slope.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(mean_trK, dtype=float)
    mask = _fit_mask(t, window)
    if mask.sum() < MIN_FIT_POINTS:
        raise ValidationError(f"fit window holds {mask.sum()} points; at least {MIN_FIT_POINTS} are needed")
    tw, yw = t[mask], y[mask]
    if np.any(yw <= 0):
        raise ValidationError("mean Tr(K rho) must be positive on the fit window")
    ly = np.log(yw)
    slope = _slope(tw, ly)
    if samples is not None and np.shape(samples)[0] > 1:
        S = np.asarray(samples)[:, mask]
        rng = np.random.default_rng(rng)
        n = S.shape[0]
        boot = []
        for _ in range(N_BOOTSTRAP):
            m = S[rng.integers(0, n, n)].mean(axis=0)
            if np.all(m > 0):
                boot.append(_slope(tw, np.log(m)))
        stderr = float(np.std(boot, ddof=1))
    else:
        resid = ly - ly.mean() - slope * (tw - tw.mean())
        dof = max(tw.size - 2, 1)
        stderr = float(np.sqrt(resid @ resid / dof / np.sum((tw - tw.mean()) ** 2)))
    return ExponentEstimate(slope, stderr, int(mask.sum()), tuple(window))


def aggregate(values):
    """Mean, standard deviation (sample, ddof=1 when possible) and standard error per column."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    mean = v.mean(axis=0)
    std = v.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    return mean, std, std / np.sqrt(n)


@dataclass
class RunSummary:
    t: np.ndarray
    mean_dS: np.ndarray
    std_dS: np.ndarray
    mean_trK: np.ndarray
    std_trK: np.ndarray
    n_trajectories: int
    exponent: ExponentEstimate = None
    reference_rate: float = None
    switch_counts: np.ndarray = None
    repair_total: np.ndarray = None
    repair_max: np.ndarray = None
    wall_clock: float = None
    checks: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)
    prerequisites: dict = field(default_factory=dict)
    certificate: object = None
    bounds: object = None
    M_bar: float = None
    open_loop: "RunSummary" = None
    average_path: object = None
    schedule: object = None
    trK_samples: np.ndarray = field(default=None, repr=False)
    dS_samples: np.ndarray = field(default=None, repr=False)

    @property
    def stderr_trK(self):
        return self.std_trK / np.sqrt(self.n_trajectories)

    @property
    def stderr_dS(self):
        return self.std_dS / np.sqrt(self.n_trajectories)

    @property
    def passed(self):
        return all(self.checks.values())


def check_prerequisites(cfg, bank, d):
    """Verify the assumptions of the configured policy; returns the model quantities it needs."""
    out = {"invariance": {}, "assumptions": {}}
    reports = [check_invariance(g, d) for g in bank]
    out["invariance"] = {f"L{j + 1}": r.residuals for j, r in enumerate(reports)}
    invariant = all(r.invariant for r in reports)
    out["assumptions"]["invariance"] = invariant
    if cfg.policy == "sigma5":
        K = np.asarray(cfg.K)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(0, 1))))
        a2 = check_A2_sampled(bank, K, d, n_samples=cfg.a2_samples, rng=rng)
        out["assumptions"]["A2"] = a2.ok
        out["A2"] = {"samples": int(a2.n_samples), "violations": int(a2.violations), "min_margin": float(a2.min_margin)}
        if not a2.ok:
            raise PrerequisiteError(
                f"A2 (sampled drift condition) fails for K: {a2.violations} of {a2.n_samples} samples violate it"
            )
        M_bar = compute_modulation_bound(bank, K).M_bar
        return out, None, None, K, M_bar
    if not invariant:
        bad = [f"L{j + 1}" for j, r in enumerate(reports) if not r.invariant]
        raise PrerequisiteError(f"A1.1 (invariance of the target subspace) fails for {', '.join(bad)}")
    gamma = cfg.gamma if cfg.gamma is not None else np.full(len(bank), 1.0 / len(bank))
    spec = spectral_abscissa((bank, gamma), d)
    out["assumptions"]["GAS"] = spec.gas
    out["alpha_gamma"] = spec.alpha
    if not spec.gas and not cfg.gamma_search:
        raise PrerequisiteError(f"A1.2 (GAS of the convex combination) fails: alpha = {spec.alpha:.3e}")
    try:
        cert = build_certificate(bank, d, gamma=None if cfg.gamma_search else gamma, gamma_search=cfg.gamma_search)
    except NotInvariant as exc:
        raise PrerequisiteError(f"A1.1: {exc}") from exc
    except Exception as exc:
        raise PrerequisiteError(f"A1.2: {exc}") from exc
    bounds = compute_l_bounds(bank, cert, d, cfg.epsilon)
    M_bar = compute_modulation_bound(bank, cert.K).M_bar
    if cfg.policy in ("sigma2", "sigma3") and cfg.dwell_dt > bounds.t_D * (1 + 1e-12):
        raise PrerequisiteError(f"dwell time {cfg.dwell_dt:.6g} exceeds the certified bound t_D = {bounds.t_D:.6g}")
    return out, cert, bounds, cert.K, M_bar


def _policy(cfg, bank, cert, K, M_bar, schedule):
    kind = cfg.policy
    if kind in ("sigma1", "sigma2"):
        return ScheduleReplay(schedule)
    if kind == "sigma3":
        return DwellArgmin(bank, K, cfg.dwell_steps)
    if kind == "sigma4":
        return Hysteresis(bank, K, cert.c, cfg.epsilon)
    return Modulated(bank, K, M_bar, cfg.dwell_dt, cfg.dwell_steps, cfg.V_max)


def run_ensemble(cfg, bank, policy_factory, d, K, state_stride=None):
    """All trajectories in batches of ``cfg.batch_size``; trajectory ``i`` uses noise stream ``i``."""
    parts = []
    for start in range(0, cfg.n_trajectories, cfg.batch_size):
        ids = range(start, min(start + cfg.batch_size, cfg.n_trajectories))
        streams = [NoiseStream(cfg.seed, i) for i in ids]
        parts.append(
            simulate_ensemble(
                bank, policy_factory(), cfg.rho0, cfg.n_steps, cfg.integrator(), streams, d, K,
                record_stride=cfg.record_stride, state_stride=state_stride, index_offset=start,
            )
        )
    return parts


def _cat(parts, key):
    return np.concatenate([getattr(p, key) for p in parts], axis=0)


def _summarize(cfg, parts):
    t = parts[0].t
    dS, trK = _cat(parts, "d_S"), _cat(parts, "trK")
    mdS, sdS, _ = aggregate(dS)
    mK, sK, _ = aggregate(trK)
    return RunSummary(
        t=t, mean_dS=mdS, std_dS=sdS, mean_trK=mK, std_trK=sK, n_trajectories=dS.shape[0],
        switch_counts=_cat(parts, "switch_counts"), repair_total=_cat(parts, "repair_total"),
        repair_max=_cat(parts, "repair_max"),
        trK_samples=trK, dS_samples=dS,
    )


def dwell_decrease_fraction(t, trK_samples, dwell, z=3.0):
    """Fraction of dwell boundaries where the paired mean change of ``Tr(K rho)`` is below ``z`` standard errors."""
    t = np.asarray(t)
    marks = []
    n = 0
    while n * dwell <= t[-1] + 1e-9:
        i = np.flatnonzero(np.abs(t - n * dwell) < 1e-9)
        if i.size:
            marks.append(int(i[0]))
        n += 1
    if len(marks) < 2:
        return float("nan"), 0
    ok = []
    for a, b in zip(marks[:-1], marks[1:]):
        diff = trK_samples[:, b] - trK_samples[:, a]
        se = diff.std(ddof=1) / np.sqrt(diff.size) if diff.size > 1 else 0.0
        ok.append(diff.mean() < z * se)
    return float(np.mean(ok)), len(ok)


def run_experiment(cfg, out_dir=None):
    """Run the configured experiment and write its outputs to ``out_dir`` (if given)."""
    t0 = time.perf_counter()
    bank, d = cfg.bank(), cfg.subspace()
    rho0 = cfg.initial_state()
    prereq, cert, bounds, K, M_bar = check_prerequisites(cfg, bank, d)

    schedule = path = None
    if cfg.policy == "sigma1":
        schedule, path = run_sigma1(bank, cert, cfg.epsilon, rho0, cfg.T, cfg.dt, d=d)
    elif cfg.policy == "sigma2":
        schedule, path = run_sigma2(bank, cert, cfg.epsilon, cfg.dwell_dt, rho0, cfg.T, cfg.dt, bounds.t_D, d=d)

    holder = {}

    def factory():
        p = _policy(cfg, bank, cert, K, M_bar, schedule)
        holder.setdefault("policies", []).append(p)
        return p

    state_stride = cfg.state_stride if cfg.write_states else None
    if cfg.write_states and state_stride is None:
        state_stride = 1 if cfg.dim <= 8 else cfg.record_stride
    parts = run_ensemble(cfg, bank, factory, d, K, state_stride=state_stride)
    summary = _summarize(cfg, parts)
    summary.prerequisites = prereq
    summary.certificate, summary.bounds, summary.M_bar = cert, bounds, M_bar
    summary.schedule, summary.average_path = schedule, path

    checks = {}
    if cert is not None:
        rate = cfg.epsilon * cert.c
        summary.reference_rate = -rate
        trK0 = float(np.real(np.trace(K @ rho0)))
        envelope = trK0 * np.exp(-rate * summary.t) + 3 * summary.stderr_trK
        checks["exponential_bound"] = bool(np.all(summary.mean_trK <= envelope + 1e-12))
        seed_boot = np.random.SeedSequence(cfg.seed, spawn_key=(0, 2))
        summary.exponent = estimate_lyapunov_exponent(
            summary.t, summary.mean_trK, cfg.fit_window, summary.trK_samples, np.random.default_rng(seed_boot)
        )
        checks["exponent_bound"] = bool(summary.exponent.slope <= -rate + 3 * summary.exponent.stderr)
        if path is not None:
            bound = trK0 * np.exp(-rate * path.t)
            checks["average_path_bound"] = bool(np.all(path.trK <= bound * (1 + 1e-9) + 1e-12))
            checks["average_path_nonincreasing"] = bool(np.all(np.diff(path.trK) <= 1e-12))
            if cfg.policy == "sigma1" and len(schedule.gaps()):
                checks["sigma1_dwell_gap"] = bool(schedule.gaps().min() >= bounds.t_D - cfg.dt - 1e-12)
        if cfg.open_loop_compare:
            ol_bank = GeneratorBank([bank.combine(cert.gamma.gamma)])
            ol = run_ensemble(cfg, ol_bank, lambda: FixedIndex(0), d, K)
            summary.open_loop = _summarize(cfg, ol)
            checks["faster_than_open_loop"] = bool(summary.mean_dS[-1] < summary.open_loop.mean_dS[-1])
    else:
        dS0 = summary.mean_dS[0]
        checks["distance_halved"] = bool(summary.mean_dS[-1] < 0.5 * dS0)
        frac, n_marks = dwell_decrease_fraction(summary.t, summary.trK_samples, cfg.dwell_dt)
        summary.detail = {"dwell_decrease_fraction": frac, "dwell_boundaries": n_marks}
        checks["dwell_decrease"] = bool(frac >= 0.95)
        pols = holder.get("policies", [])
        summary.detail["gain_cap_binding"] = int(sum(getattr(p, "n_capped", 0) for p in pols))
    if cfg.scheme == "euler-projected":
        ic = cfg.integrator()
        summary.detail["repair_over_budget"] = int(
            np.sum((summary.repair_total > ic.repair_budget_total) | (summary.repair_max > ic.repair_budget))
        )
        checks["repair_budget"] = summary.detail["repair_over_budget"] == 0
    summary.checks = checks
    summary.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        write_outputs(cfg, summary, parts, out_dir)
    return summary


def _fmt(x):
    return repr(float(x))


def write_summary_csv(path, t, mean_dS, std_dS, mean_trK, std_trK):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_dS", "std_dS", "mean_trK", "std_trK"])
        for row in zip(t, mean_dS, std_dS, mean_trK, std_trK):
            w.writerow([_fmt(x) for x in row])


def read_summary_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def _summary_dict(summary):
    out = {
        "n_trajectories": summary.n_trajectories,
        "final_mean_dS": float(summary.mean_dS[-1]),
        "final_mean_trK": float(summary.mean_trK[-1]),
        "switch_counts": {
            "mean": float(summary.switch_counts.mean()),
            "min": int(summary.switch_counts.min()),
            "max": int(summary.switch_counts.max()),
            "histogram": {str(k): int(v) for k, v in zip(*np.unique(summary.switch_counts, return_counts=True))},
        },
        "repair_total": {"max": float(summary.repair_total.max()), "sum": float(summary.repair_total.sum())},
        "repair_step_max": float(summary.repair_max.max()),
    }
    if summary.exponent is not None:
        out["lambda_hat"] = summary.exponent.slope
        out["lambda_hat_stderr"] = summary.exponent.stderr
        out["fit_points"] = summary.exponent.n_points
        out["reference_rate"] = summary.reference_rate
    return out


def write_outputs(cfg, summary, parts, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_summary_csv(
        os.path.join(out_dir, "summary.csv"),
        summary.t, summary.mean_dS, summary.std_dS, summary.mean_trK, summary.std_trK,
    )
    traj = 0
    for p in parts:
        for b in range(p.n_trajectories):
            write_events_csv(os.path.join(out_dir, f"events_{traj}.csv"), p.events[b])
            if cfg.write_trajectories:
                _write_trajectory(os.path.join(out_dir, f"trajectory_{traj}.csv"), p, b)
            if p.states is not None:
                np.ascontiguousarray(p.states[b], dtype="<c16").tofile(os.path.join(out_dir, f"states_{traj}.bin"))
            traj += 1
    if summary.open_loop is not None:
        ol = summary.open_loop
        write_summary_csv(os.path.join(out_dir, "summary_open_loop.csv"), ol.t, ol.mean_dS, ol.std_dS, ol.mean_trK, ol.std_trK)
    if summary.schedule is not None:
        summary.schedule.to_csv(os.path.join(out_dir, "schedule.csv"))
        path = summary.average_path
        with open(os.path.join(out_dir, "average_path.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "d_S", "trK"])
            for row in zip(path.t, path.d_S, path.trK):
                w.writerow([_fmt(x) for x in row])
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"base": cfg.seed, "streams": [0, cfg.n_trajectories - 1]},
        "integrator": {"dt": cfg.dt, "scheme": cfg.scheme, "n_steps": cfg.n_steps, "T": cfg.T},
        "prerequisites": summary.prerequisites,
        "certificate": None if summary.certificate is None else summary.certificate.to_dict(),
        "c": None if summary.certificate is None else summary.certificate.c,
        "bounds": None if summary.bounds is None else summary.bounds.to_dict(),
        "t_D": None if summary.bounds is None else summary.bounds.t_D,
        "M_bar": summary.M_bar,
        "summary": _summary_dict(summary),
        "detail": summary.detail,
        "checks": {k: "PASS" if v else "FAIL" for k, v in summary.checks.items()},
    }
    if summary.open_loop is not None:
        manifest["open_loop"] = _summary_dict(summary.open_loop)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    # wall-clock is kept out of the manifest so reruns are byte-identical
    with open(os.path.join(out_dir, "timing.json"), "w") as fh:
        json.dump({"wall_clock_s": summary.wall_clock}, fh)
        fh.write("\n")


def _write_trajectory(path, part, b):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "d_S", "trK", "active_k", "gain", "dY"])
        for i in range(part.t.size):
            w.writerow([
                _fmt(part.t[i]), _fmt(part.d_S[b, i]), _fmt(part.trK[b, i]),
                int(part.active_k[b, i]) + 1, _fmt(part.gain[b, i]), _fmt(part.dY[b, i]),
            ])
