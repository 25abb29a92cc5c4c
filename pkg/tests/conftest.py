import sys

import numpy as np
import pytest

from qswitch.harness.presets import preset_ghz3, preset_spin32
from qswitch.lindblad import GeneratorBank, LindbladGenerator, MeasurementChannel
from qswitch.operators import SubspaceDecomposition, dag

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def decay_model():
    """Two levels, target |0>, measured channel C = |0><1| and nothing else."""
    C = np.array([[0, 1], [0, 0]], dtype=complex)
    bank = GeneratorBank([LindbladGenerator(np.zeros((2, 2)), (), MeasurementChannel(C, 1.0))])
    d = SubspaceDecomposition.from_projector(np.diag([1.0, 0.0]))
    return bank, d


def random_generator(n, rng, n_L=1, channel=None):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = 0.5 * (G + dag(G))
    Ls = tuple(0.5 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) for _ in range(n_L))
    if channel is None:
        C = 0.5 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        channel = MeasurementChannel(C, float(rng.uniform(0.3, 1.0)))
    return LindbladGenerator(H, Ls, channel)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def decay():
    return decay_model()


@pytest.fixture(scope="session")
def ghz():
    cfg = preset_ghz3()
    return cfg, cfg.bank(), cfg.subspace()


@pytest.fixture(scope="session")
def spin():
    cfg = preset_spin32()
    return cfg, cfg.bank(), cfg.subspace()


@pytest.fixture(scope="session")
def ghz_cert(ghz):
    from qswitch.certificate import build_certificate, compute_l_bounds

    cfg, bank, d = ghz
    cert = build_certificate(bank, d, gamma=[0.5, 0.5])
    return cert, compute_l_bounds(bank, cert, d, 0.3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
