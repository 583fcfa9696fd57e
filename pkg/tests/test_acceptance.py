"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and runtimes.  The Monte Carlo ensembles (100k paths on three models)
are generated once and shared between the moment- and Laplace-agreement
criteria; their generation time is charged to the first of the two.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats

import oracles
from conftest import CBI_B, CBI_BETA, CBI_C
from superbranch.cumulant import invariant_laplace, semigroup_defect, solve_cumulant, transition_laplace
from superbranch.ergodicity import (empirical_w1, fit_decay_rate,
                                    laplace_distance_profile, make_dictionary,
                                    mean_gap, theorem41_bound, theorem42_bound)
from superbranch.model import LatticeModel, BranchingMechanism, ImmigrationMechanism, MotionGenerator
from superbranch.moments import (DecayCertificate, Refusal, apply_R,
                                 check_subcritical, envelope_violation,
                                 require_certificate, transition_mean)
from superbranch.simulate import (SimConfig, empirical_laplace, empirical_mean,
                                  sample_invariant, simulate_paths, write_ensemble)


@contextmanager
def criterion(name: str, runtime_limit: float | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"[FAIL] {name} ({time.perf_counter() - t0:.1f}s)", flush=True)
        raise
    elapsed = time.perf_counter() - t0
    print(f"[PASS] {name} ({elapsed:.1f}s)", flush=True)
    if runtime_limit is not None:
        assert elapsed < runtime_limit, f"{name} exceeded {runtime_limit}s"


N_AGREEMENT = 100_000
AGREEMENT_TIMES = (0.5, 1.0, 2.0)


def _test_functions(model):
    """Three nonnegative test vectors per model."""
    d = model.d
    f1 = model.h.copy()
    f2 = np.zeros(d)
    f2[0] = 1.0
    f3 = np.linspace(0.4, 1.2, d)
    return (f1, f2, f3)


@pytest.fixture(scope="module")
def agreement_ensembles(cbi, twosite, kp18):
    """Shared 100k-path ensembles; returns {name: (model, mu0, ensemble)}
    plus the wall time spent generating them."""
    cases = {
        "cbi": (cbi, np.array([1.0])),
        "twosite": (twosite, np.array([1.0, 0.5])),
        "kp18": (kp18, np.array([0.5, 0.3, 0.4])),
    }
    t0 = time.perf_counter()
    out = {}
    for name, (model, mu0) in cases.items():
        sim = SimConfig(n_paths=N_AGREEMENT, t_end=2.0, dt=2e-3, seed=1234,
                        record_grid=AGREEMENT_TIMES)
        out[name] = (model, mu0, simulate_paths(model, mu0, sim, threads=4))
    return out, time.perf_counter() - t0


def test_criterion_1_riccati_oracle(cbi):
    with criterion("1 Riccati oracle", runtime_limit=1.0):
        sol = solve_cumulant(cbi, [1.0], 1.0, grid=2)
        assert abs(sol.final[0] - 0.279531) <= 1e-6
        assert abs(sol.final[0] - oracles.cbi_v(1.0, 1.0, CBI_B, CBI_C)) <= 1e-8
        assert semigroup_defect(cbi, [1.0], 0.5, 0.5) <= 1e-7


def test_criterion_2_invariant_gamma_law(cbi):
    with criterion("2 invariant Laplace + Gamma law (KS)", runtime_limit=120.0):
        got = invariant_laplace(cbi, [1.0])
        assert abs(got - 1.5 ** -0.6) <= 1e-6
        cert = require_certificate(cbi)
        burn_in = math.log(1e3 * cert.C) / cert.delta
        samples = sample_invariant(
            cbi, SimConfig(n_paths=20_000, t_end=burn_in, dt=2e-3, seed=2024))
        assert samples.shape[0] == 20_000
        # invariant law of the scalar model is Gamma(beta/c, rate b/c)
        dist = stats.gamma(a=CBI_BETA / CBI_C, scale=CBI_C / CBI_B)
        _stat, pvalue = stats.kstest(samples[:, 0], dist.cdf)
        assert pvalue > 0.01


def test_criterion_3_monotone_ladder(cbi, twosite, kp18):
    with criterion("3 monotone linearization ladder", runtime_limit=30.0):
        eps_ladder = (1e-1, 1e-2, 1e-3, 1e-4)
        t = 1.0
        for model in (cbi, twosite, kp18):
            assert model.d <= 4
            for f in _test_functions(model):
                ratios = [solve_cumulant(model, e * f, t, grid=2).final / e
                          for e in eps_ladder]
                for lo, hi in zip(ratios, ratios[1:]):
                    assert np.all(hi >= lo - 1e-9)
                target = apply_R(model, f, t)
                rel = np.max(np.abs(ratios[-1] - target)) / np.max(np.abs(target))
                assert rel <= 1e-4


def test_criterion_4_moment_agreement(agreement_ensembles):
    ensembles, gen_time = agreement_ensembles
    with criterion(f"4 moment agreement (incl. {gen_time:.0f}s ensemble gen)"):
        for name, (model, mu0, ens) in ensembles.items():
            for t in AGREEMENT_TIMES:
                mean, se = empirical_mean(ens, t)
                expect = transition_mean(model, mu0, t)
                dev = np.abs(mean - expect)
                assert np.all(dev <= 3 * se), \
                    f"{name} t={t}: dev/se={dev / se}"
        assert gen_time + 10 < 300.0


def test_criterion_5_laplace_agreement(agreement_ensembles):
    ensembles, _gen = agreement_ensembles
    with criterion("5 Laplace agreement", runtime_limit=300.0):
        for name, (model, mu0, ens) in ensembles.items():
            for f in _test_functions(model):
                for t in AGREEMENT_TIMES:
                    est, se = empirical_laplace(ens, f, t)
                    exact = transition_laplace(model, mu0, f, t)
                    assert abs(est - exact) <= 3 * se, \
                        f"{name} t={t}: dev={abs(est - exact) / se:.2f} se"


def test_criterion_6_certification_soundness(cbi, twosite, kp18, critical_chain):
    with criterion("6 certification soundness"):
        spectral_model = LatticeModel(
            sites=(0, 1), h=[1.0, 1.0],
            motion=MotionGenerator(q=[[0.0, 1.0], [0.0, 0.0]]),
            branching=BranchingMechanism(b=[-0.5, 3.0], c=[0.0, 0.0],
                                         eta=np.zeros((2, 2))),
            immigration=ImmigrationMechanism(beta=[0.0, 0.0]))
        grid = np.logspace(-2, math.log10(50.0), 50)
        for model in (cbi, twosite, kp18, spectral_model):
            cert = check_subcritical(model)
            assert isinstance(cert, DecayCertificate)
            assert envelope_violation(model, cert, grid) <= 1e-9
        refusal = check_subcritical(critical_chain)
        assert isinstance(refusal, Refusal)
        assert abs(refusal.spectral_abscissa) < 1e-9


def test_criterion_7_ergodic_rates(cbi, twosite, kp18):
    with criterion("7 ergodic rates and envelopes", runtime_limit=120.0):
        # CBI rate recovery: both profiles decay like e^{-t} (delta = 1)
        t_grid = np.linspace(0.25, 8.0, 32)
        dictionary = make_dictionary(cbi, size=5, seed=7)
        dl = laplace_distance_profile(cbi, [1.0], dictionary, t_grid)
        rate, r2 = fit_decay_rate(t_grid, dl)
        assert abs(rate - (-1.0)) <= 0.1 and r2 > 0.99
        gaps = mean_gap(cbi, [1.0], t_grid)
        rate_g, r2_g = fit_decay_rate(t_grid, gaps)
        assert abs(rate_g - (-1.0)) <= 0.1 and r2_g > 0.99
        # envelope contracts on every certified test model
        for model, mu0 in ((cbi, [1.0]), (twosite, [1.0, 0.5]),
                           (kp18, [0.4, 0.2, 0.6])):
            cert = require_certificate(model)
            grid = np.linspace(0.0, 6.0, 13)
            d = make_dictionary(model, size=6, seed=8)
            profile = laplace_distance_profile(model, mu0, d, grid)
            bound = theorem41_bound(model, mu0, d, cert, grid)
            assert np.all(profile <= bound + 1e-12)
            gap = mean_gap(model, mu0, grid)
            w1b = theorem42_bound(model, float(model.h @ np.asarray(mu0)), cert, grid)
            assert np.all(gap <= w1b + 1e-12)


def test_criterion_8_coupling_lemmas(twosite, cbi):
    with criterion("8 coupling lemmas (W1 contraction, d_L convexity)"):
        # convolution contraction on paired empirical samples, n = 128
        from scipy.optimize import linear_sum_assignment

        n = 128
        rng = np.random.default_rng(88)
        a = simulate_paths(twosite, [1.0, 0.5],
                           SimConfig(n_paths=n, t_end=1.0, dt=5e-3,
                                     seed=31)).states[:, -1, :]
        b = simulate_paths(twosite, [0.2, 0.1],
                           SimConfig(n_paths=n, t_end=1.0, dt=5e-3,
                                     seed=32)).states[:, -1, :]
        g = rng.gamma(2.0, 0.5, size=(n, 2))
        h = twosite.h
        cost = np.abs(a[:, None, :] - b[None, :, :]) @ h
        rows, cols = linear_sum_assignment(cost)
        assert empirical_w1(a[rows] + g, b[cols] + g, h=h) <= \
            empirical_w1(a, b, h=h) + 1e-9

        # coupling convexity of the dictionary distance via exact transforms
        dictionary = make_dictionary(cbi, size=5, seed=9)
        t = 1.0
        mu = ([1.0], [0.2])
        nu = ([0.6], [2.0])
        for alpha in (0.3, 0.7):
            mixture_gap, pair0, pair1 = 0.0, 0.0, 0.0
            for f in dictionary.functions:
                l_mu = [transition_laplace(cbi, m, f, t) for m in mu]
                l_nu = [transition_laplace(cbi, m, f, t) for m in nu]
                mixture_gap = max(mixture_gap,
                                  abs(alpha * (l_mu[0] - l_nu[0])
                                      + (1 - alpha) * (l_mu[1] - l_nu[1])))
                pair0 = max(pair0, abs(l_mu[0] - l_nu[0]))
                pair1 = max(pair1, abs(l_mu[1] - l_nu[1]))
            assert mixture_gap <= alpha * pair0 + (1 - alpha) * pair1 + 1e-12


def test_criterion_9_bit_identical_across_threads(twosite, tmp_path):
    with criterion("9 bit-identical ensembles, 1 vs 8 threads"):
        sim = SimConfig(n_paths=12_288, t_end=0.5, dt=5e-3, seed=99,
                        block_size=1024, record_grid=(0.25, 0.5))
        files = []
        for threads in (1, 8):
            ens = simulate_paths(twosite, [1.0, 0.5], sim, threads=threads)
            path = tmp_path / f"ens_{threads}.sbr"
            write_ensemble(path, ens)
            files.append(path.read_bytes())
        assert files[0] == files[1]
