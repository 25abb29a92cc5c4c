"""Switching laws for the generator bank.

Five laws are provided:

* ``sigma1``: hysteresis switching on the averaged state, computed offline;
* ``sigma2``: fixed dwell time on the averaged state, computed offline;
* ``sigma3``: fixed dwell time on the filtered (trajectory) state;
* ``sigma4``: hysteresis switching on the filtered state;
* ``sigma5``: fixed dwell time with a modulated gain, for banks that do not
  leave the target invariant.

Selection is always the greedy ``argmin_k Tr(K L_k(rho))`` with ties broken
towards the lowest index.  Offline schedules are computed once and replayed
on every trajectory through :class:`ScheduleReplay`.

Generator indices are 0-based in memory and 1-based in exported files.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError
from .certificate import argmin_index
from .lindblad import AveragePropagator
from .operators import HermitianBasis, subspace_distance, vectorize
from .sme import TRIGGER_DWELL, TRIGGER_NAMES, TRIGGER_REGION, SwitchEvent

TOL_REGION = 1e-12
TOL_ZERO = 1e-12
DEFAULT_V_MAX = 1e3
POLICY_KINDS = ("sigma1", "sigma2", "sigma3", "sigma4", "sigma5")


def dwell_steps(dwell, dt):
    n = int(round(dwell / dt))
    if n < 1 or abs(n * dt - dwell) > 1e-9 * dwell:
        raise ValidationError(f"dwell time {dwell} is not a positive multiple of the step {dt}")
    return n


@dataclass
class PolicyConfig:
    kind: str
    epsilon: float = 0.3
    dwell_dt: float = None
    V_max: float = DEFAULT_V_MAX
    t_D: float = None
    M_bar: float = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValidationError(f"unknown policy {self.kind!r}")
        if self.kind != "sigma5" and not 0 < self.epsilon < 1:
            raise ValidationError("epsilon must lie in (0, 1)")
        if self.kind in ("sigma2", "sigma3", "sigma5"):
            if self.dwell_dt is None or self.dwell_dt <= 0:
                raise ValidationError(f"{self.kind} needs a positive dwell time")
        if self.kind in ("sigma2", "sigma3") and self.t_D is not None:
            if self.dwell_dt > self.t_D * (1 + 1e-12):
                raise ValidationError(f"dwell time {self.dwell_dt} exceeds the certified bound t_D = {self.t_D:.6g}")
        if self.kind == "sigma5":
            if self.M_bar is not None and not self.M_bar > 0:
                raise ValidationError("sigma5 needs a positive modulation bound")
            if not np.isfinite(self.V_max) or self.V_max <= 0:
                raise ValidationError("sigma5 needs a finite positive gain cap")


@dataclass
class ControlLog:
    events: list
    indices: np.ndarray
    gains: np.ndarray
    dt: float

    def switch_times(self):
        return np.array([e.time for e in self.events])

    def gaps(self):
        """Gaps between consecutive events at which the index actually changed."""
        times, last = [], None
        for e in self.events:
            if e.new_index != last:
                times.append(e.time)
                last = e.new_index
        return np.diff(times)

    def to_csv(self, path):
        write_events_csv(path, self.events)

    @classmethod
    def from_csv(cls, path, dt, n_steps):
        events = read_events_csv(path)
        idx = np.zeros(n_steps, dtype=int)
        gains = np.zeros(n_steps)
        for e in events:
            n0 = int(round(e.time / dt))
            idx[n0:] = e.new_index
            gains[n0:] = e.gain
        return cls(events, idx, gains, dt)


def write_events_csv(path, events):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "index", "gain", "trigger"])
        for e in events:
            w.writerow([repr(float(e.time)), e.new_index + 1, repr(float(e.gain)), e.trigger])


def read_events_csv(path):
    with open(path, newline="") as fh:
        return [
            SwitchEvent(float(r["time"]), int(r["index"]) - 1, float(r["gain"]), r["trigger"])
            for r in csv.DictReader(fh)
        ]


def in_region(rho, j, bank, cert, epsilon):
    """Closed region test ``Tr(K L_j(rho)) <= -epsilon c Tr(K rho)``."""
    drift = float(np.real(np.trace(bank[j].adjoint(cert.K) @ rho)))
    return drift <= -epsilon * cert.c * cert.value(rho)


def in_region_interior(drift_j, trK, c, epsilon, tol=TOL_REGION):
    return drift_j < -epsilon * c * trK - tol


@dataclass
class AveragePath:
    t: np.ndarray
    vec: np.ndarray = field(repr=False)
    basis: HermitianBasis = field(repr=False)
    trK: np.ndarray = None
    d_S: np.ndarray = None

    def states(self):
        return np.einsum("ta,aij->tij", self.vec, self.basis.elements)


def _offline(bank, cert, rho0, n_steps, dt, choose, d=None):
    props = [AveragePropagator(g) for g in bank]
    Es = [p.matrix(dt) for p in props]
    B = props[0].basis
    a = np.array([vectorize(A, B, tol=1e-8) for A in bank.drift_operators(cert.K)])
    kv = vectorize(cert.K, B, tol=1e-8)
    vec = np.zeros((n_steps + 1, len(B)))
    vec[0] = vectorize(rho0, B, tol=1e-8)
    idx = np.zeros(n_steps, dtype=int)
    events = []
    p = None
    for n in range(n_steps):
        v = vec[n]
        p, trig = choose(n, a @ v, float(kv @ v), p)
        if trig:
            events.append(SwitchEvent(n * dt, int(p), 1.0, TRIGGER_NAMES[trig]))
        idx[n] = p
        vec[n + 1] = Es[p] @ v
    path = AveragePath(np.arange(n_steps + 1) * dt, vec, B, trK=vec @ kv)
    if d is not None:
        path.d_S = subspace_distance(path.states(), d)
    log = ControlLog(events, idx, np.ones(n_steps), dt)
    return log, path


def run_sigma1(bank, cert, epsilon, rho0, T, dt_check, d=None):
    """Hysteresis schedule on the averaged state, checked on a grid of step ``dt_check``."""
    n_steps = dwell_steps(T, dt_check)

    def choose(n, drifts, trK, p):
        if p is None:
            return int(argmin_index(drifts)), 3
        if in_region_interior(drifts[p], trK, cert.c, epsilon):
            return p, 0
        return int(argmin_index(drifts)), TRIGGER_REGION

    return _offline(bank, cert, rho0, n_steps, dt_check, choose, d)


def run_sigma2(bank, cert, epsilon, dwell, rho0, T, dt_check=None, t_D=None, d=None):
    """Fixed-dwell schedule on the averaged state; ``dwell`` must not exceed ``t_D``."""
    if t_D is not None and dwell > t_D * (1 + 1e-12):
        raise ValidationError(f"dwell time {dwell} exceeds the certified bound t_D = {t_D:.6g}")
    dt_check = dwell if dt_check is None else dt_check
    n_steps = dwell_steps(T, dt_check)
    per = dwell_steps(dwell, dt_check)

    def choose(n, drifts, trK, p):
        if n % per:
            return p, 0
        return int(argmin_index(drifts)), 3 if p is None else TRIGGER_DWELL

    return _offline(bank, cert, rho0, n_steps, dt_check, choose, d)


def policy_step_sigma3(rho, bank, cert):
    """Greedy index at a dwell boundary; the gain is always one."""
    v = np.real(np.einsum("kij,ji->k", bank.drift_operators(cert.K), rho))
    return int(argmin_index(v)), 1.0


def policy_step_sigma4(rho, current, bank, cert, epsilon):
    """Keep ``current`` while inside its open region, otherwise re-select."""
    v = np.real(np.einsum("kij,ji->k", bank.drift_operators(cert.K), rho))
    if in_region_interior(v[current], cert.value(rho), cert.c, epsilon):
        return current, False
    return int(argmin_index(v)), True


def sigma5_gain(drift, trK, M_bar, dwell, V_max=DEFAULT_V_MAX, tol_zero=TOL_ZERO):
    drift = np.asarray(drift, dtype=float)
    trK = np.asarray(trK, dtype=float)
    q = np.clip(-drift / (M_bar * dwell), 0.0, V_max)
    return np.where(trK > tol_zero, q, 0.0)


def policy_step_sigma5(rho, bank, K, M_bar, dwell, V_max=DEFAULT_V_MAX):
    """Greedy index and gain ``-Tr(K L_k rho)/(M_bar * dwell)`` (zero on target)."""
    K = np.asarray(K)
    v = np.real(np.einsum("kij,ji->k", bank.drift_operators(K), rho))
    k = int(argmin_index(v))
    trK = float(np.real(np.trace(K @ rho)))
    return k, float(sigma5_gain(v[k], trK, M_bar, dwell, V_max))


class SwitchingPolicy:
    """Batched policy driver used by :func:`qswitch.sme.simulate_ensemble`.

    ``start`` returns the initial ``(index, gain)`` arrays; ``update`` is
    called before step ``n >= 1`` and returns ``(index, gain, trigger)``.
    """

    def start(self, rho):
        raise NotImplementedError

    def update(self, n, rho, k, gain):
        raise NotImplementedError


class _DriftPolicy(SwitchingPolicy):
    def __init__(self, bank, K):
        self.K = np.asarray(K, dtype=np.complex128)
        self.A = bank.drift_operators(self.K)

    def drifts(self, rho):
        return np.einsum("kij,bji->bk", self.A, rho).real

    def trK(self, rho):
        return np.einsum("ij,bji->b", self.K, rho).real


class FixedIndex(SwitchingPolicy):
    def __init__(self, index=0):
        self.index = index

    def start(self, rho):
        B = rho.shape[0]
        return np.full(B, self.index), np.ones(B)

    def update(self, n, rho, k, gain):
        return k, gain, np.zeros(k.shape, dtype=int)


class ScheduleReplay(SwitchingPolicy):
    """Replays an offline schedule identically on every trajectory."""

    def __init__(self, log):
        self.log = log
        self.trig = np.zeros(len(log.indices), dtype=int)
        names = {v: key for key, v in TRIGGER_NAMES.items()}
        for e in log.events:
            n = int(round(e.time / log.dt))
            if 0 < n < len(self.trig):
                self.trig[n] = names[e.trigger]

    def start(self, rho):
        B = rho.shape[0]
        return np.full(B, self.log.indices[0]), np.ones(B)

    def update(self, n, rho, k, gain):
        B = rho.shape[0]
        return np.full(B, self.log.indices[n]), gain, np.full(B, self.trig[n])


class DwellArgmin(_DriftPolicy):
    """Greedy selection on the trajectory state at multiples of the dwell time."""

    def __init__(self, bank, K, n_dwell):
        super().__init__(bank, K)
        self.n_dwell = n_dwell

    def start(self, rho):
        return argmin_index(self.drifts(rho)), np.ones(rho.shape[0])

    def update(self, n, rho, k, gain):
        if n % self.n_dwell:
            return k, gain, np.zeros(k.shape, dtype=int)
        return argmin_index(self.drifts(rho)), gain, np.full(k.shape, TRIGGER_DWELL)


class Hysteresis(_DriftPolicy):
    """Keeps the active generator until the state leaves its open region."""

    def __init__(self, bank, K, c, epsilon):
        super().__init__(bank, K)
        self.c = c
        self.epsilon = epsilon

    def start(self, rho):
        return argmin_index(self.drifts(rho)), np.ones(rho.shape[0])

    def update(self, n, rho, k, gain):
        v = self.drifts(rho)
        cur = np.take_along_axis(v, k[:, None], axis=1)[:, 0]
        out = ~in_region_interior(cur, self.trK(rho), self.c, self.epsilon)
        trig = np.where(out, TRIGGER_REGION, 0)
        if np.any(out):
            k = np.where(out, argmin_index(v), k)
        return k, gain, trig


class Modulated(_DriftPolicy):
    """Fixed dwell with gain ``-drift / (M_bar * dwell)``, capped at ``V_max``."""

    def __init__(self, bank, K, M_bar, dwell, n_dwell, V_max=DEFAULT_V_MAX):
        super().__init__(bank, K)
        self.M_bar = M_bar
        self.dwell = dwell
        self.n_dwell = n_dwell
        self.V_max = V_max
        self.n_capped = 0

    def _select(self, rho):
        v = self.drifts(rho)
        k = argmin_index(v)
        dk = np.take_along_axis(v, k[:, None], axis=1)[:, 0]
        raw = -dk / (self.M_bar * self.dwell)
        self.n_capped += int(np.sum(raw > self.V_max))
        return k, sigma5_gain(dk, self.trK(rho), self.M_bar, self.dwell, self.V_max)

    def start(self, rho):
        return self._select(rho)

    def update(self, n, rho, k, gain):
        if n % self.n_dwell:
            return k, gain, np.zeros(k.shape, dtype=int)
        k, gain = self._select(rho)
        return k, gain, np.full(k.shape, TRIGGER_DWELL)
