"""The two worked examples: three-qubit GHZ stabilization and a spin-3/2 subspace."""

import numpy as np

from .config import ExperimentConfig, GeneratorSpec

_I2 = np.eye(2, dtype=np.complex128)
_SX = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_SZ = np.diag([1.0, -1.0]).astype(np.complex128)


def kron(*ops):
    out = np.ones((1, 1), dtype=np.complex128)
    for a in ops:
        out = np.kron(out, a)
    return out


def ket(bits):
    v = np.zeros(2 ** len(bits), dtype=np.complex128)
    v[int(bits, 2)] = 1.0
    return v


def outer(a, b):
    return np.outer(ket(a), ket(b).conj())


def preset_ghz3():
    H = kron(_SX, _I2, _I2) - kron(_I2, _SX, _SX)
    L1 = np.kron(outer("00", "01") + outer("11", "10"), _I2)
    L2 = np.kron(_I2, outer("00", "01") + 1j * outer("11", "10"))
    C = kron(_SZ, _I2, _SZ)
    psi = ket("001") + ket("010") + ket("101") + ket("110")
    ghz = (ket("000") + ket("111")) / np.sqrt(2)
    dt = 0.002
    return ExperimentConfig(
        name="ghz3",
        dim=8,
        generators=[GeneratorSpec(H, [L1]), GeneratorSpec(H, [L2])],
        C=C,
        eta=1.0,
        rho0=np.outer(psi, psi.conj()) / 4,
        subspace_basis=ghz[None],
        dt=dt,
        n_steps=25_000,
        n_trajectories=200,
        policy="sigma3",
        epsilon=0.3,
        dwell_steps=5,
        gamma=[0.5, 0.5],
        scheme="rouchon",
        record_stride=5,
        open_loop_compare=True,
    )


def preset_spin32():
    H = np.array([[0, 0, -1j, 0], [0, 0, 0, 0], [1j, 0, 0, 0], [0, 0, 0, 0]])
    L = np.array([[1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0]], dtype=np.complex128)
    phi = (ket("00") + ket("11")) / np.sqrt(2)
    return ExperimentConfig(
        name="spin32",
        dim=4,
        generators=[GeneratorSpec(H), GeneratorSpec(-H), GeneratorSpec(np.zeros((4, 4)), [L])],
        C=np.diag([2.0, 1.0, -1.0, -2.0]),
        eta=1.0,
        rho0=np.outer(phi, phi.conj()),
        subspace_projector=np.diag([1.0, 1.0, 0.0, 0.0]),
        K=np.diag([0.0, 0.0, 1.0, 2.0]),
        dt=0.005,
        n_steps=5000,
        n_trajectories=500,
        policy="sigma5",
        dwell_steps=100,
        scheme="euler-projected",
        record_stride=10,
    )


PRESETS = {"ghz3": preset_ghz3, "spin32": preset_spin32}


def get_preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
