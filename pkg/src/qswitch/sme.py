"""Integration of the switched diffusive stochastic master equation.

Two explicit schemes are provided.  The Kraus-form scheme keeps the state
positive by construction and is used for unit gain.  The projected
Euler-Maruyama scheme handles a gain ``q`` that scales both drift and
diffusion; it restores positivity by clipping negative eigenvalues and keeps
a ledger of the clipped mass.

States are carried as stacks of shape ``(batch, N, N)`` so a whole ensemble
advances with a handful of batched matrix products per step.  Each trajectory
owns an independent counter-based noise stream, so results do not depend on
how trajectories are grouped into batches.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import TOL_PSD, TOL_TR, ValidationError, check_density_matrix
from .lindblad import check_invariance
from .operators import dag, population_R, subspace_distance

TRIGGER_NONE = 0
TRIGGER_DWELL = 1
TRIGGER_REGION = 2
TRIGGER_INIT = 3
TRIGGER_NAMES = {TRIGGER_DWELL: "dwell_expiry", TRIGGER_REGION: "region_exit", TRIGGER_INIT: "initialization"}


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseStream:
    """Gaussian increments from Philox keyed by ``(seed, stream_index)``."""

    seed: int
    stream_index: int

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(ss))

    def increments(self, n_steps, dt):
        return np.sqrt(dt) * self.generator().standard_normal(n_steps)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: str = "rouchon"
    tol_psd: float = TOL_PSD
    tol_tr: float = TOL_TR
    repair_budget: float = 1e-3
    repair_budget_total: float = 1e-3
    repair_action: str = "raise"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if self.repair_action not in ("raise", "record"):
            raise ValidationError("repair_action must be 'raise' or 'record'")
        if self.scheme not in ("rouchon", "euler-projected"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")


@dataclass
class StepInput:
    k: int
    rho: np.ndarray
    dW: float
    gain: float = 1.0

    def __post_init__(self):
        if self.gain < 0:
            raise ValidationError("gain must be non-negative")


class BatchModel:
    """Per-generator operators stacked for gathering by active index."""

    def __init__(self, bank, dt):
        gens = list(bank)
        n = gens[0].dim
        nL = max(1, max(len(g.L_ops) for g in gens))
        self.n = n
        self.dt = dt
        self.C = gens[0].C
        self.eta = gens[0].eta
        self.H = np.array([g.H for g in gens])
        self.Ls = np.zeros((len(gens), nL, n, n), dtype=np.complex128)
        for k, g in enumerate(gens):
            for j, L in enumerate(g.L_ops):
                self.Ls[k, j] = L
        self.LdL = np.einsum("kjai,kjab->kib", self.Ls.conj(), self.Ls)
        self.CdC = dag(self.C) @ self.C
        eye = np.eye(n)
        self.A0 = eye + dt * (-1j * self.H - 0.5 * self.LdL - 0.5 * self.CdC)
        self.sqrt_eta = np.sqrt(self.eta)

    def innovation_mean(self, rho):
        """``sqrt(eta) Tr((C + C*) rho)`` per state."""
        CC = self.C + dag(self.C)
        return self.sqrt_eta * np.einsum("ij,bji->b", CC, rho).real

    def jump_term(self, rho, k):
        Ls = self.Ls[k]
        return (Ls @ rho[:, None] @ dag(Ls)).sum(axis=1)

    def generator(self, rho, k):
        H = self.H[k]
        G = self.LdL[k] + self.CdC
        out = -1j * (H @ rho - rho @ H) - 0.5 * (G @ rho + rho @ G)
        return out + self.jump_term(rho, k) + self.C @ rho @ dag(self.C)

    def diffusion(self, rho):
        m = self.innovation_mean(rho)
        return self.sqrt_eta * (self.C @ rho + rho @ dag(self.C)) - m[:, None, None] * rho


def rouchon_step(model, rho, k, dW):
    """Kraus-form step for a batch; returns ``(rho_next, dY)``."""
    dt = model.dt
    dY = model.innovation_mean(rho) * dt + dW
    M = model.A0[k] + model.sqrt_eta * model.C[None] * dY[:, None, None]
    out = M @ rho @ dag(M) + dt * model.jump_term(rho, k)
    if model.eta < 1:
        out = out + dt * (1 - model.eta) * (model.C @ rho @ dag(model.C))
    tr = np.trace(out, axis1=1, axis2=2).real
    if np.any(tr <= 0):
        raise IntegrationError("normalization denominator is not positive; step too large")
    out = out / tr[:, None, None]
    return 0.5 * (out + dag(out)), dY


def euler_projected_step(model, rho, k, gain, dW):
    """Euler-Maruyama step with gain, then projection onto the state space.

    Returns ``(rho_next, dY, repair)`` where ``repair`` is the clipped
    negative spectral mass per state.
    """
    dt = model.dt
    dY = model.innovation_mean(rho) * dt + dW
    q = gain[:, None, None]
    raw = rho + q * dt * model.generator(rho, k) + q * model.diffusion(rho) * dW[:, None, None]
    raw = 0.5 * (raw + dag(raw))
    w, U = np.linalg.eigh(raw)
    repair = -np.clip(w, None, 0.0).sum(axis=1)
    need = repair > 0
    if np.any(need):
        wc = np.clip(w[need], 0.0, None)
        raw[need] = (U[need] * wc[:, None, :]) @ dag(U[need])
    tr = np.trace(raw, axis1=1, axis2=2).real
    if np.any(tr <= 0):
        raise IntegrationError("projected state has non-positive trace")
    out = raw / tr[:, None, None]
    return 0.5 * (out + dag(out)), dY, repair


def step_rouchon(inp, g, cfg):
    """Single-state form of :func:`rouchon_step` for generator ``g``."""
    if inp.gain != 1.0:
        raise ValidationError("the Kraus-form scheme only supports unit gain")
    model = BatchModel([g], cfg.dt)
    rho, dY = rouchon_step(model, np.asarray(inp.rho, dtype=np.complex128)[None], np.zeros(1, int), np.array([inp.dW]))
    return rho[0], float(dY[0])


def step_euler_projected(inp, g, cfg):
    model = BatchModel([g], cfg.dt)
    rho, dY, repair = euler_projected_step(
        model, np.asarray(inp.rho, dtype=np.complex128)[None], np.zeros(1, int),
        np.array([float(inp.gain)]), np.array([inp.dW]),
    )
    if repair[0] > cfg.repair_budget:
        raise IntegrationError(f"positivity repair {repair[0]:.3e} exceeds per-step budget")
    return rho[0], float(dY[0])


@dataclass
class SwitchEvent:
    time: float
    new_index: int
    gain: float
    trigger: str


@dataclass
class EnsembleRecord:
    """Recorded summaries of a batch of trajectories on a common time grid.

    ``active_k`` and ``gain`` in row ``i`` are those used on the step that
    ended at ``t[i]`` (row 0 holds the initial selection); ``dY`` and ``dW``
    are the increments of that step.
    """

    t: np.ndarray
    d_S: np.ndarray
    trK: np.ndarray
    active_k: np.ndarray
    gain: np.ndarray
    dY: np.ndarray
    dW: np.ndarray
    events: list
    switch_counts: np.ndarray
    repair_total: np.ndarray
    repair_max: np.ndarray
    min_eig: np.ndarray
    min_pop_R: np.ndarray
    states: np.ndarray = field(default=None, repr=False)
    state_times: np.ndarray = field(default=None, repr=False)

    @property
    def n_trajectories(self):
        return self.d_S.shape[0]


def simulate_ensemble(
    bank,
    policy,
    rho0,
    n_steps,
    cfg,
    streams,
    d,
    K,
    record_stride=1,
    state_stride=None,
    assert_positive_R=False,
    index_offset=0,
):
    """Advance one trajectory per noise stream for ``n_steps`` steps.

    ``policy`` chooses the active generator (and gain) before every step.
    Errors are re-raised with the trajectory index and time attached.
    """
    rho0 = check_density_matrix(rho0, dim=bank.dim)
    B = len(streams)
    dt = cfg.dt
    model = BatchModel(bank, dt)
    dW_all = np.array([s.increments(n_steps, dt) for s in streams]).reshape(B, n_steps)
    rho = np.repeat(rho0[None], B, axis=0)
    n_rec = n_steps // record_stride + 1
    rec = {key: np.zeros((B, n_rec)) for key in ("d_S", "trK", "gain", "dY", "dW")}
    rec["active_k"] = np.zeros((B, n_rec), dtype=int)
    t_rec = np.arange(n_rec) * record_stride * dt
    states, state_times = None, None
    if state_stride:
        n_states = n_steps // state_stride + 1
        states = np.zeros((B, n_states, bank.dim, bank.dim), dtype=np.complex128)
        state_times = np.arange(n_states) * state_stride * dt
        states[:, 0] = rho
    events = [[] for _ in range(B)]
    switch_counts = np.zeros(B, dtype=int)
    repair_total = np.zeros(B)
    repair_max = np.zeros(B)
    min_eig = np.full(B, np.inf)
    min_pop = population_R(rho, d).copy()

    k, gain = policy.start(rho)
    for b in range(B):
        events[b].append(SwitchEvent(0.0, int(k[b]), float(gain[b]), TRIGGER_NAMES[TRIGGER_INIT]))
    rec["d_S"][:, 0] = subspace_distance(rho, d)
    rec["trK"][:, 0] = np.einsum("ij,bji->b", K, rho).real
    rec["active_k"][:, 0] = k
    rec["gain"][:, 0] = gain

    for n in range(n_steps):
        if n > 0:
            k_new, gain, trig = policy.update(n, rho, k, gain)
            switch_counts += k_new != k
            k = k_new
            for b in np.flatnonzero(trig):
                events[b].append(SwitchEvent(n * dt, int(k[b]), float(gain[b]), TRIGGER_NAMES[int(trig[b])]))
        dW = dW_all[:, n]
        try:
            if cfg.scheme == "rouchon":
                if np.any(gain != 1.0):
                    raise IntegrationError("the Kraus-form scheme requires unit gain; use euler-projected")
                rho, dY = rouchon_step(model, rho, k, dW)
            else:
                rho, dY, repair = euler_projected_step(model, rho, k, gain, dW)
                repair_total += repair
                repair_max = np.maximum(repair_max, repair)
                if cfg.repair_action == "raise" and np.any(repair > cfg.repair_budget):
                    b = int(np.argmax(repair))
                    raise IntegrationError(f"positivity repair {repair[b]:.3e} exceeds per-step budget")
        except IntegrationError as exc:
            raise IntegrationError(f"trajectory {index_offset}+: t = {(n + 1) * dt:.6g}: {exc}") from exc
        pop = population_R(rho, d)
        min_pop = np.minimum(min_pop, pop)
        if assert_positive_R and np.any(pop <= 0):
            b = int(np.argmin(pop))
            raise IntegrationError(
                f"trajectory {index_offset + b}: t = {(n + 1) * dt:.6g}: population outside target vanished"
            )
        if (n + 1) % record_stride == 0:
            i = (n + 1) // record_stride
            w = np.linalg.eigvalsh(rho)[:, 0]
            min_eig = np.minimum(min_eig, w)
            if np.any(w < -cfg.tol_psd):
                b = int(np.argmin(w))
                raise IntegrationError(f"trajectory {index_offset + b}: t = {(n + 1) * dt:.6g}: negative eigenvalue {w[b]:.3e}")
            rec["d_S"][:, i] = subspace_distance(rho, d)
            rec["trK"][:, i] = np.einsum("ij,bji->b", K, rho).real
            rec["active_k"][:, i] = k
            rec["gain"][:, i] = gain
            rec["dY"][:, i] = dY
            rec["dW"][:, i] = dW
        if state_stride and (n + 1) % state_stride == 0:
            states[:, (n + 1) // state_stride] = rho
    if cfg.repair_action == "raise" and np.any(repair_total > cfg.repair_budget_total):
        b = int(np.argmax(repair_total))
        raise IntegrationError(
            f"trajectory {index_offset + b}: cumulative positivity repair {repair_total[b]:.3e} exceeds budget"
        )
    return EnsembleRecord(
        t=t_rec,
        events=events,
        switch_counts=switch_counts,
        repair_total=repair_total,
        repair_max=repair_max,
        min_eig=min_eig,
        min_pop_R=min_pop,
        states=states,
        state_times=state_times,
        **rec,
    )


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    d_S: np.ndarray
    trK: np.ndarray
    active_k: np.ndarray
    gain: np.ndarray
    dY: np.ndarray
    dW: np.ndarray
    events: list
    repair_total: float
    states: np.ndarray = field(default=None, repr=False)
    state_times: np.ndarray = field(default=None, repr=False)


def simulate_trajectory(bank, policy, rho0, T, cfg, stream, d, K, record_stride=1, state_stride=None):
    """One trajectory over ``[0, T]``; full states every step when ``N <= 8``."""
    n_steps = int(round(T / cfg.dt))
    if abs(n_steps * cfg.dt - T) > 1e-9 * max(1.0, T):
        raise ValidationError("T must be an integer number of steps")
    if state_stride is None and bank.dim <= 8:
        state_stride = 1
    off_target = population_R(np.asarray(rho0), d) > 1e-12
    invariant = all(check_invariance(g, d).invariant for g in bank)
    r = simulate_ensemble(
        bank, policy, rho0, n_steps, cfg, [stream], d, K, record_stride, state_stride,
        assert_positive_R=bool(off_target and invariant), index_offset=stream.stream_index,
    )
    return TrajectoryRecord(
        t=r.t, d_S=r.d_S[0], trK=r.trK[0], active_k=r.active_k[0], gain=r.gain[0], dY=r.dY[0], dW=r.dW[0],
        events=r.events[0], repair_total=float(r.repair_total[0]),
        states=None if r.states is None else r.states[0], state_times=r.state_times,
    )
