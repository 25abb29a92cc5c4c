"""Experiment configuration as a single JSON document.

Complex matrices are written as nested lists whose leaves are ``[re, im]``
pairs; plain real nested lists are accepted on input.
"""

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .._validation import DimensionMismatch, ValidationError, check_density_matrix
from ..lindblad import GeneratorBank, LindbladGenerator, MeasurementChannel
from ..operators import SubspaceDecomposition
from ..policies import POLICY_KINDS, PolicyConfig
from ..sme import IntegratorConfig


def encode_matrix(X):
    X = np.asarray(X, dtype=np.complex128)
    return np.stack([X.real, X.imag], axis=-1).tolist()


def decode_matrix(obj, ndim=2):
    a = np.asarray(obj, dtype=float)
    if a.ndim == ndim + 1 and a.shape[-1] == 2:
        out = np.empty(a.shape[:-1], dtype=np.complex128)
        out.real, out.imag = a[..., 0], a[..., 1]
        return out
    if a.ndim == ndim:
        return a.astype(np.complex128)
    raise ValidationError(f"cannot read a {ndim}-d complex array from shape {a.shape}")


@dataclass
class GeneratorSpec:
    H: np.ndarray
    L: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str
    dim: int
    generators: list
    C: np.ndarray
    rho0: np.ndarray
    dt: float
    n_steps: int
    subspace_basis: np.ndarray = None
    subspace_projector: np.ndarray = None
    eta: float = 1.0
    policy: str = "sigma3"
    epsilon: float = 0.3
    dwell_steps: int = None
    V_max: float = 1e3
    gamma: list = None
    gamma_search: bool = False
    K: np.ndarray = None
    scheme: str = "rouchon"
    repair_action: str = "record"
    n_trajectories: int = 1
    seed: int = 0
    record_stride: int = 1
    state_stride: int = None
    write_trajectories: bool = False
    write_states: bool = False
    open_loop_compare: bool = False
    a2_samples: int = 10_000
    fit_window: tuple = (0.2, 0.9)
    batch_size: int = 100
    out: str = None

    def __post_init__(self):
        self.validate()

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def dwell_dt(self):
        return None if self.dwell_steps is None else self.dwell_steps * self.dt

    def validate(self):
        n = self.dim
        if n < 2:
            raise ValidationError("dim must be >= 2")
        if not self.generators:
            raise ValidationError("at least one generator is required")
        for j, g in enumerate(self.generators):
            if np.shape(g.H) != (n, n) or any(np.shape(L) != (n, n) for L in g.L):
                raise DimensionMismatch(f"generator {j + 1} does not act on dimension {n}")
        for key in ("C", "rho0", "subspace_projector", "K"):
            X = getattr(self, key)
            if X is not None and np.shape(X) != (n, n):
                raise DimensionMismatch(f"{key} has shape {np.shape(X)}, expected ({n}, {n})")
        if (self.subspace_basis is None) == (self.subspace_projector is None):
            raise ValidationError("give exactly one of subspace basis or projector")
        if self.policy not in POLICY_KINDS:
            raise ValidationError(f"unknown policy {self.policy!r}")
        if self.n_trajectories < 1:
            raise ValidationError("n_trajectories must be >= 1")
        if self.n_steps < 1 or self.record_stride < 1:
            raise ValidationError("n_steps and record_stride must be positive")
        if self.policy in ("sigma2", "sigma3", "sigma5"):
            if not self.dwell_steps or self.dwell_steps < 1:
                raise ValidationError(f"{self.policy} needs dwell_steps >= 1")
        if self.policy == "sigma5":
            if self.K is None:
                raise ValidationError("sigma5 needs an explicit K")
            if self.scheme != "euler-projected":
                raise ValidationError("sigma5 modulates the gain and needs scheme 'euler-projected'")
        lo, hi = self.fit_window
        if not 0 <= lo < hi <= 1:
            raise ValidationError("fit_window must satisfy 0 <= lo < hi <= 1")
        self.integrator()

    # model objects

    def bank(self):
        ch = MeasurementChannel(self.C, self.eta)
        return GeneratorBank([LindbladGenerator(g.H, tuple(g.L), ch) for g in self.generators])

    def subspace(self):
        if self.subspace_basis is not None:
            return SubspaceDecomposition.from_basis(self.subspace_basis, dim=self.dim)
        return SubspaceDecomposition.from_projector(self.subspace_projector)

    def initial_state(self):
        return check_density_matrix(self.rho0, dim=self.dim)

    def integrator(self):
        return IntegratorConfig(self.dt, self.scheme, repair_action=self.repair_action)

    def policy_config(self, t_D=None, M_bar=None):
        return PolicyConfig(self.policy, self.epsilon, self.dwell_dt, self.V_max, t_D, M_bar)

    # serialization

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "generators":
                v = [{"H": encode_matrix(g.H), "L": [encode_matrix(L) for L in g.L]} for g in v]
            elif f.name == "subspace_basis" and v is not None:
                v = encode_matrix(np.atleast_2d(v))
            elif isinstance(v, np.ndarray):
                v = encode_matrix(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data["generators"] = [
            GeneratorSpec(decode_matrix(g["H"]), [decode_matrix(L) for L in g.get("L", [])])
            for g in data["generators"]
        ]
        for key in ("C", "rho0", "subspace_projector", "K"):
            if data.get(key) is not None:
                data[key] = decode_matrix(data[key])
        if data.get("subspace_basis") is not None:
            data["subspace_basis"] = decode_matrix(data["subspace_basis"])
        if "fit_window" in data:
            data["fit_window"] = tuple(data["fit_window"])
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update({k: v for k, v in changes.items() if v is not None})
        return type(self)(**d)


__all__ = ["ExperimentConfig", "GeneratorSpec", "decode_matrix", "encode_matrix"]
