import math

import numpy as np
import pytest
from scipy.linalg import expm

import oracles
from conftest import random_model
from superbranch.errors import NotSubcriticalError
from superbranch.model import (BranchingMechanism, ImmigrationMechanism,
                               JumpChannel, JumpSizeLaw, LatticeModel,
                               MotionGenerator, preset_cbi, preset_kp18)
from superbranch.moments import (DecayCertificate, Refusal, apply_R,
                                 check_subcritical, envelope_violation,
                                 integrate_R, invariant_mean,
                                 require_certificate, transition_mean,
                                 weighted_operator_norm)


def _two_site_sym(b=3.0, beta=(0.0, 0.0)):
    return LatticeModel(
        sites=(0, 1), h=[1.0, 1.0],
        motion=MotionGenerator(q=[[0.0, 1.0], [1.0, 0.0]]),
        branching=BranchingMechanism(b=[b, b], c=[0.0, 0.0], eta=np.zeros((2, 2))),
        immigration=ImmigrationMechanism(beta=list(beta)))


# ---------------------------------------------------------------------------
# apply_R
# ---------------------------------------------------------------------------

def test_apply_R_identity_at_zero(twosite):
    f = np.array([0.3, 1.4])
    assert apply_R(twosite, f, 0.0) == pytest.approx(f)


def test_apply_R_scalar_exponential(cbi):
    assert apply_R(cbi, [1.0], 1.0) == pytest.approx([math.exp(-1.0)], abs=1e-12)


def test_apply_R_two_site_hand_diagonalization():
    model = _two_site_sym()
    got = apply_R(model, [1.0, 0.0], 1.0)
    # hand eigendecomposition: 0.5 (e^{-3t} + e^{-5t}, e^{-3t} - e^{-5t})
    want = 0.5 * np.array([math.exp(-3.0) + math.exp(-5.0),
                           math.exp(-3.0) - math.exp(-5.0)])
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx([0.0282625, 0.0215246], abs=1e-6)
    B = np.array([[-4.0, 1.0], [1.0, -4.0]])
    assert got == pytest.approx(oracles.expm_symmetric_2x2(B, 1.0) @ [1.0, 0.0])


def test_semigroup_property_and_positivity():
    rng = np.random.default_rng(9)
    for _ in range(5):
        model = random_model(rng, d=int(rng.integers(1, 6)))
        f = rng.uniform(0.0, 1.5, size=model.d)
        s, t = float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 2.0))
        once = apply_R(model, f, s + t)
        twice = apply_R(model, apply_R(model, f, t), s)
        assert np.max(np.abs(once - twice)) < 1e-9
        assert np.all(apply_R(model, f, t) >= -1e-12)


def test_duality_with_adjoint():
    rng = np.random.default_rng(10)
    for _ in range(4):
        model = random_model(rng)
        from superbranch.mechanisms import assemble_moment_operator

        B = assemble_moment_operator(model).matrix
        f = rng.uniform(0.0, 1.0, size=model.d)
        mu = rng.uniform(0.0, 2.0, size=model.d)
        t = float(rng.uniform(0.2, 2.0))
        lhs = float(apply_R(model, f, t) @ mu)
        rhs = float(f @ (expm(t * B.T) @ mu))
        assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))


def test_integrate_R_scalar(cbi):
    # int_0^t e^{-s} ds = 1 - e^{-t}
    got = integrate_R(cbi, [1.0], 1.5)
    assert got == pytest.approx([1.0 - math.exp(-1.5)], abs=1e-12)


# ---------------------------------------------------------------------------
# transition mean
# ---------------------------------------------------------------------------

def test_transition_mean_no_immigration_is_semigroup():
    model = _two_site_sym()
    mu0 = np.array([0.7, 0.2])
    got = transition_mean(model, mu0, 0.8)
    B = np.array([[-4.0, 1.0], [1.0, -4.0]])
    assert got == pytest.approx(expm(0.8 * B.T) @ mu0, abs=1e-12)


def test_transition_mean_identity_at_zero(twosite):
    mu0 = np.array([1.0, 2.0])
    assert transition_mean(twosite, mu0, 0.0) == pytest.approx(mu0)


def test_transition_mean_cbi_value(cbi):
    got = transition_mean(cbi, [1.0], 1.0)
    assert got == pytest.approx([oracles.cbi_mean(1.0, 1.0, 1.0, 0.3)], abs=1e-12)
    assert got == pytest.approx([0.5575156], abs=1e-6)


def test_transition_mean_singular_generator_quadrature():
    # b = 0 and symmetric motion make B^T singular; the integral still exists
    model = _two_site_sym(b=0.0, beta=(0.5, 0.0))
    got = transition_mean(model, np.zeros(2), 2.0)
    # independent quadrature of int_0^t e^{sB^T} a ds
    B = np.array([[-1.0, 1.0], [1.0, -1.0]])
    a = np.array([0.5, 0.0])
    ss = np.linspace(0.0, 2.0, 4001)
    vals = np.stack([expm(s * B.T) @ a for s in ss])
    ref = np.trapezoid(vals, ss, axis=0)
    assert got == pytest.approx(ref, abs=1e-6)


def test_transition_mean_nonnegative_random():
    rng = np.random.default_rng(14)
    for _ in range(4):
        model = random_model(rng)
        mu0 = rng.uniform(0.0, 2.0, size=model.d)
        assert np.all(transition_mean(model, mu0, float(rng.uniform(0.1, 3.0))) >= 0.0)


# ---------------------------------------------------------------------------
# invariant mean
# ---------------------------------------------------------------------------

def test_invariant_mean_cbi(cbi):
    assert invariant_mean(cbi) == pytest.approx([0.3], abs=1e-12)


def test_invariant_mean_zero_without_immigration():
    model = _two_site_sym()
    assert invariant_mean(model) == pytest.approx([0.0, 0.0], abs=1e-14)


def test_invariant_mean_two_site_hand_solve():
    model = _two_site_sym(beta=(1.0, 0.0))
    assert invariant_mean(model) == pytest.approx([4.0 / 15.0, 1.0 / 15.0], abs=1e-12)


def test_invariant_mean_refuses_non_hurwitz(critical_chain):
    with pytest.raises(NotSubcriticalError) as err:
        invariant_mean(critical_chain)
    assert abs(err.value.spectral_abscissa) < 1e-9


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

def test_certify_cbi_lyapunov(cbi):
    cert = check_subcritical(cbi)
    assert isinstance(cert, DecayCertificate)
    assert cert.method == "lyapunov"
    assert cert.delta == pytest.approx(1.0)
    assert cert.C == 1.0


def test_certify_kp18_corollary_condition():
    """Nonlocal load g(x)(d(x) + mean of the nonlocal jumps) <= b(x) - 0.5
    certifies at least delta = 0.5 with C = 1."""
    model = preset_kp18(
        b=[1.0, 1.1], c=[0.1, 0.1], g=[0.5, 0.25], d=[0.6, 0.8],
        profiles=[[0, 1], [1, 0]],
        nonlocal_jumps=[(1.0, JumpSizeLaw.exponential(2.5)),
                        (1.0, JumpSizeLaw.exponential(2.5))])
    load = np.array([0.5 * (0.6 + 0.4), 0.25 * (0.8 + 0.4)])
    assert np.all(load <= np.array([1.0, 1.1]) - 0.5)
    cert = check_subcritical(model)
    assert isinstance(cert, DecayCertificate)
    assert cert.method == "lyapunov"
    assert cert.C == 1.0
    assert cert.delta >= 0.5
    assert cert.delta == pytest.approx(float((np.array([1.0, 1.1]) - load).min()))


def test_certify_refuses_conservative_chain(critical_chain):
    result = check_subcritical(critical_chain)
    assert isinstance(result, Refusal)
    assert abs(result.spectral_abscissa) < 1e-9
    with pytest.raises(NotSubcriticalError):
        require_certificate(critical_chain)


def test_certify_spectral_fallback():
    # site 0 grows in the drift test (b0 < motion inflow) yet B is Hurwitz
    model = LatticeModel(
        sites=(0, 1), h=[1.0, 1.0],
        motion=MotionGenerator(q=[[0.0, 1.0], [0.0, 0.0]]),
        branching=BranchingMechanism(b=[-0.5, 3.0], c=[0.0, 0.0],
                                     eta=np.zeros((2, 2))),
        immigration=ImmigrationMechanism(beta=[0.0, 0.0]))
    cert = check_subcritical(model)
    assert isinstance(cert, DecayCertificate)
    assert cert.method == "spectral"
    assert cert.delta == pytest.approx(0.95 * 0.5)
    assert cert.C >= 1.0
    assert cert.witness["estimated_constant"]
    assert envelope_violation(model, cert) <= 1e-9


def test_certificate_envelope_soundness(cbi, twosite, kp18):
    grid = np.logspace(-2, math.log10(50.0), 50)
    for model in (cbi, twosite, kp18):
        cert = check_subcritical(model)
        assert isinstance(cert, DecayCertificate)
        assert envelope_violation(model, cert, grid) <= 1e-9


def test_certificate_envelope_random_models():
    rng = np.random.default_rng(15)
    for _ in range(4):
        model = random_model(rng)
        cert = check_subcritical(model)
        assert isinstance(cert, DecayCertificate)
        assert envelope_violation(model, cert) <= 1e-9


def test_weighted_norm_definition():
    m = np.array([[0.5, -0.25], [1.0, 0.0]])
    h = np.array([1.0, 2.0])
    # row 0: (0.5*1 + 0.25*2)/1 = 1.0 ; row 1: (1*1)/2 = 0.5
    assert weighted_operator_norm(m, h) == pytest.approx(1.0)
