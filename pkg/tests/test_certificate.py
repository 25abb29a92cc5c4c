import numpy as np
import pytest
from sklearn.base import clone

from conftest import random_generator
from qswitch._validation import ValidationError
from qswitch.certificate import (
    CertificateEstimator,
    ConvexWeights,
    NotGAS,
    NotInvariant,
    argmin_index,
    build_certificate,
    certificate_residual,
    certified_rate,
    check_A2_sampled,
    compute_l_bounds,
    compute_modulation_bound,
    distance_constants,
    drifts,
    min_drift,
    sample_states,
)
from qswitch.lindblad import GeneratorBank, LindbladGenerator, MeasurementChannel, spectral_abscissa
from qswitch.operators import SubspaceDecomposition, extend_R, random_density_matrix, subspace_distance


def test_convex_weights_validation():
    ConvexWeights([0.5, 0.5])
    ConvexWeights([1.0])
    for bad in ([0.0, 1.0], [0.6, 0.6], [1.2, -0.2]):
        with pytest.raises(ValidationError):
            ConvexWeights(bad)


def test_decay_certificate(decay):
    bank, d = decay
    cert = build_certificate(bank, d)
    assert np.allclose(cert.K_R, [[1.0]])
    assert cert.alpha_gamma == pytest.approx(1.0, abs=1e-12)
    assert cert.c == pytest.approx(1.0, abs=1e-12)
    assert certified_rate(bank, np.array([[1.0]]), d) == pytest.approx(1.0, abs=1e-12)


def test_decay_bounds(decay):
    bank, d = decay
    cert = build_certificate(bank, d)
    b = compute_l_bounds(bank, cert, d, 0.3)
    assert b.l_upper[0] == pytest.approx(-1.0) and b.l_lower[0] == pytest.approx(-1.0)
    assert b.l2_upper[0] == pytest.approx(1.0) and b.l2_lower[0] == pytest.approx(1.0)
    assert b.t_D == pytest.approx(0.7 / 1.3, abs=1e-12)
    assert compute_modulation_bound(bank, np.diag([0.0, 1.0])).M_bar == pytest.approx(1.0)


def test_certified_rate_zero_map():
    C = np.zeros((2, 2))
    bank = GeneratorBank([LindbladGenerator(np.zeros((2, 2)), (), MeasurementChannel(C))])
    d = SubspaceDecomposition.from_projector(np.diag([1.0, 0.0]))
    assert certified_rate(bank, np.array([[1.0]]), d) == 0.0


def test_certified_rate_rejects_indefinite(decay):
    bank, d = decay
    with pytest.raises(ValidationError):
        certified_rate(bank, np.array([[-1.0]]), d)


def test_ghz_certificate(ghz, ghz_cert):
    _, bank, d = ghz
    cert, bounds = ghz_cert
    spec = spectral_abscissa((bank, [0.5, 0.5]), d)
    assert cert.alpha_gamma == pytest.approx(spec.alpha, rel=1e-9)
    assert cert.c > 0
    # simple dominant eigenvalue: the Perron eigenvector attains c = alpha exactly
    assert cert.multiplicity == 1
    assert cert.c == pytest.approx(cert.alpha_gamma, abs=1e-9)
    assert certificate_residual(bank, cert, d) <= 1e-9
    assert np.linalg.eigvalsh(cert.K_R)[0] > 1e-9
    assert np.linalg.eigvalsh(cert.K_R)[-1] == pytest.approx(1.0)
    assert bounds.t_D > 0


def test_certificate_invariants_recomputed(ghz, ghz_cert):
    _, bank, d = ghz
    cert, _ = ghz_cert
    # independent pencil check with scipy's generalized Hermitian eigensolver
    from scipy.linalg import eigh

    from qswitch.certificate import combined_restricted

    Y = combined_restricted(bank, d, [0.5, 0.5]).adjoint(cert.K_R)
    lam = eigh(0.5 * (Y + Y.conj().T), cert.K_R, eigvals_only=True)
    assert -lam.max() == pytest.approx(cert.c, abs=1e-10)


def test_identical_generators_give_single_generator_certificate(ghz):
    _, bank, d = ghz
    dbl = GeneratorBank([bank.combine([0.5, 0.5])] * 2)
    one = GeneratorBank([bank.combine([0.5, 0.5])])
    a = build_certificate(dbl, d, gamma=[0.3, 0.7])
    b = build_certificate(one, d)
    assert a.c == pytest.approx(b.c, abs=1e-10)
    assert np.allclose(a.K_R, b.K_R, atol=1e-8)


def test_build_certificate_errors(ghz, spin):
    _, bank, d = ghz
    with pytest.raises(NotGAS):
        build_certificate(GeneratorBank([bank[0]]), d)
    _, sbank, sd = spin
    with pytest.raises(NotInvariant):
        build_certificate(sbank, sd)


def test_gamma_search_prefers_balanced_mix(ghz):
    _, bank, d = ghz
    cert = build_certificate(bank, d, gamma_search=True)
    assert np.allclose(cert.gamma.gamma, [0.5, 0.5])


def test_scale_covariance(ghz, ghz_cert, rng):
    _, bank, d = ghz
    cert, bounds = ghz_cert
    s = 3.7
    big = cert.scaled(s)
    b2 = compute_l_bounds(bank, big, d, 0.3)
    assert certified_rate(bank, big.K, d, [0.5, 0.5]) == pytest.approx(cert.c, rel=1e-10)
    assert b2.t_D == pytest.approx(bounds.t_D, rel=1e-10)
    assert np.allclose(b2.l, bounds.l) and np.allclose(b2.l2, bounds.l2)
    m1 = compute_modulation_bound(bank, cert.K).M_bar
    assert compute_modulation_bound(bank, big.K).M_bar == pytest.approx(s * m1, rel=1e-12)
    rho = random_density_matrix(8, rng, size=100)
    assert np.array_equal(min_drift(bank, cert.K, rho)[1], min_drift(bank, big.K, rho)[1])


def test_t_D_decreasing_in_epsilon(ghz, ghz_cert):
    _, bank, d = ghz
    cert, _ = ghz_cert
    ts = [compute_l_bounds(bank, cert, d, e).t_D for e in np.linspace(0.05, 0.95, 19)]
    assert np.all(np.diff(ts) < 0)
    with pytest.raises(ValidationError):
        compute_l_bounds(bank, cert, d, 1.0)


def test_l_bound_definitions(ghz, ghz_cert, rng):
    _, bank, d = ghz
    cert, b = ghz_cert
    from qswitch.lindblad import RestrictedGenerator

    for j, g in enumerate(bank):
        Y = RestrictedGenerator(g, d).adjoint(cert.K_R)
        assert np.linalg.eigvalsh(b.l_upper[j] * cert.K_R - Y)[0] >= -1e-10
        assert np.linalg.eigvalsh(Y - b.l_lower[j] * cert.K_R)[0] >= -1e-10
    assert np.allclose(b.l, np.maximum(np.abs(b.l_upper), np.abs(b.l_lower)))


def test_min_drift_examples(ghz, ghz_cert):
    cfg, bank, d = ghz
    cert, _ = ghz_cert
    v = cfg.subspace_basis[0]
    val, _ = min_drift(bank, cert.K, np.outer(v, v.conj()))
    assert abs(val) <= 1e-12
    single = GeneratorBank([bank[0]])
    assert min_drift(single, cert.K, cfg.rho0)[1] == 0
    val, idx = min_drift(bank, cert.K, cfg.rho0)
    assert val <= -cert.c * cert.value(cfg.rho0) < 0
    # independent re-evaluation of both traces
    direct = [np.trace(cert.K @ g.apply(cfg.rho0)).real for g in bank]
    assert val == pytest.approx(min(direct), abs=1e-12)
    assert idx == int(np.argmin(direct))


def test_argmin_ties_go_to_lowest_index():
    assert argmin_index(np.array([1.0, 1.0])) == 0
    assert argmin_index(np.array([2.0, -1.0, -1.0 + 5e-13])) == 1
    assert argmin_index(np.array([0.0, -1e-11])) == 1
    assert np.array_equal(argmin_index(np.array([[1.0, 1.0], [2.0, 1.0]])), [0, 1])


def test_A1_2_on_samples(ghz, ghz_cert, rng):
    _, bank, d = ghz
    cert, _ = ghz_cert
    rho = sample_states(8, rng, 10_000)
    val, _ = min_drift(bank, cert.K, rho)
    assert np.all(val <= -cert.c * cert.value(rho) + 1e-8)


def test_A2_spin_examples(spin):
    _, bank, d = spin
    good = check_A2_sampled(bank, np.diag([0.0, 0.0, 1.0, 2.0]), d, 10_000, rng=1)
    assert good.ok and good.n_samples >= 10_000
    bad = check_A2_sampled(bank, np.diag([0.0, 0.0, 2.0, 1.0]), d, 10_000, rng=1)
    assert bad.violations > 0


def test_A2_holds_for_certified_bank(ghz, ghz_cert):
    _, bank, d = ghz
    cert, _ = ghz_cert
    assert check_A2_sampled(bank, cert.K, d, 3000, rng=2).ok


def test_A2_accepts_K_R(spin):
    _, bank, d = spin
    assert check_A2_sampled(bank, np.diag([1.0, 2.0]), d, 2000, rng=3).ok


def test_sample_states_are_states(rng):
    rho = sample_states(4, rng, 300)
    assert np.allclose(np.trace(rho, axis1=1, axis2=2), 1)
    assert np.linalg.eigvalsh(rho)[:, 0].min() >= -1e-12


def test_modulation_bound_examples(spin, rng):
    g0 = LindbladGenerator(np.zeros((2, 2)), (), MeasurementChannel(np.zeros((2, 2))))
    assert compute_modulation_bound(GeneratorBank([g0]), np.eye(2)).M_bar == 0.0
    _, bank, d = spin
    K = np.diag([0.0, 0.0, 1.0, 2.0])
    M = compute_modulation_bound(bank, K).M_bar
    rho = random_density_matrix(4, rng, size=10_000)
    brute = max(np.abs(np.trace(K @ g.apply(g.apply(rho)), axis1=1, axis2=2).real).max() for g in bank)
    assert brute <= M


def test_distance_constants_examples(rng):
    d = SubspaceDecomposition.from_projector(np.diag([1.0, 1.0, 0.0, 0.0]))
    assert distance_constants(np.eye(2), d) == pytest.approx((1.0, 12.0))
    c1, c2 = distance_constants(np.diag([1.0, 2.0]), d)
    assert c1 == pytest.approx(0.5) and c2 == pytest.approx(12.0)
    with pytest.raises(ValidationError):
        distance_constants(np.diag([1.0, 0.0]), d)


def test_distance_relation_on_samples(ghz, ghz_cert, rng):
    _, bank, d = ghz
    cert, _ = ghz_cert
    c1, c2 = distance_constants(cert.K_R, d)
    rho = sample_states(8, rng, 10_000)
    V = cert.value(rho)
    dist = subspace_distance(rho, d)
    assert np.all(c1 * V <= dist + 1e-12)
    assert np.all(dist <= c2 * np.sqrt(np.clip(V, 0, None)) + 1e-12)


def test_drifts_shape(ghz, ghz_cert, rng):
    _, bank, d = ghz
    cert, _ = ghz_cert
    assert drifts(bank, cert.K, random_density_matrix(8, rng, size=5)).shape == (5, 2)


def test_certificate_to_dict_is_json(ghz_cert):
    import json

    cert, bounds = ghz_cert
    text = json.dumps({"c": cert.to_dict(), "b": bounds.to_dict()})
    back = json.loads(text)
    K_R = np.array(back["c"]["K_R"])
    assert np.allclose(K_R[..., 0] + 1j * K_R[..., 1], cert.K_R)


def test_estimator_api(ghz, rng):
    _, bank, d = ghz
    est = CertificateEstimator(gamma=[0.5, 0.5], epsilon=0.3)
    assert est.get_params() == {"gamma": [0.5, 0.5], "gamma_search": False, "epsilon": 0.3}
    assert clone(est).get_params()["epsilon"] == 0.3
    est.fit(bank, d)
    rho = random_density_matrix(8, rng, size=10)
    assert np.allclose(est.transform(rho), est.certificate_.value(rho))
    assert np.array_equal(est.predict(rho), min_drift(bank, est.K_, rho)[1])
    assert est.t_D_ == est.bounds_.t_D


def test_estimator_requires_fit(rng):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        CertificateEstimator().transform(np.eye(2))


def test_extend_matches_K(ghz_cert, ghz):
    _, _, d = ghz
    cert, _ = ghz_cert
    assert np.allclose(extend_R(cert.K_R, d), cert.K)


def test_random_invariant_free_bank_has_no_certificate(rng):
    ch = MeasurementChannel(rng.standard_normal((3, 3)) + 0j)
    bank = GeneratorBank([random_generator(3, rng, channel=ch)])
    d = SubspaceDecomposition.from_projector(np.diag([1.0, 0.0, 0.0]))
    with pytest.raises(NotInvariant):
        build_certificate(bank, d)
