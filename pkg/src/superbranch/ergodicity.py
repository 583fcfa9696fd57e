"""Convergence-to-equilibrium diagnostics.

Two families of quantities are produced on a time grid: Laplace-transform
gaps maximized over a finite dictionary of normalized test functions (a
certified lower bound on the Laplace distance, since the dictionary sits
inside the unit ball) together with a calibrated exponential upper envelope,
and weighted mean gaps (a Kantorovich lower-bound surrogate for the
Wasserstein-1 distance) together with the certified moment envelope.
Empirical Wasserstein-1 distances between equal-size sample sets are solved
as exact optimal assignments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cumulant import invariant_laplace, solve_cumulant
from .model import LatticeModel
from .moments import DecayCertificate, invariant_mean, require_certificate, transition_mean

__all__ = [
    "TestDictionary",
    "make_dictionary",
    "ErgodicityReport",
    "laplace_distance_profile",
    "theorem41_bound",
    "empirical_w1",
    "mean_gap",
    "theorem42_bound",
    "fit_decay_rate",
    "compute_ergodicity_report",
]

MAX_ASSIGNMENT_SIZE = 512


@dataclass(frozen=True)
class TestDictionary:
    """Finite family of nonnegative test functions with unit weighted norm.

    ``norm`` selects the normalization: "h" divides by max f/h (the weighted
    sup norm used by every estimate here), "sup" by max f (the plain sup
    norm); the flag exists because the two conventions differ only in the
    bookkeeping of the distance definition.
    """

    functions: tuple[np.ndarray, ...]
    norm: str = "h"
    generation: dict = field(default_factory=dict)

    def __post_init__(self):
        funcs = []
        for f in self.functions:
            arr = np.array(f, dtype=float)
            arr.setflags(write=False)
            funcs.append(arr)
        object.__setattr__(self, "functions", tuple(funcs))

    def __len__(self) -> int:
        return len(self.functions)


def _normalize(f: np.ndarray, h: np.ndarray, norm: str) -> np.ndarray:
    scale = float(np.max(f / h)) if norm == "h" else float(np.max(f))
    if scale <= 0:
        raise ValueError("dictionary functions must be nonzero")
    return f / scale


def make_dictionary(model: LatticeModel, size: int = 8, seed: int = 0,
                    norm: str = "h") -> TestDictionary:
    """Coordinate indicators scaled by the site weights, the weight vector
    itself, and random mixtures of varying sharpness, all normalized."""
    if norm not in ("h", "sup"):
        raise ValueError("norm must be 'h' or 'sup'")
    h = model.h
    d = model.d
    funcs: list[np.ndarray] = []
    for x in range(d):
        f = np.zeros(d)
        f[x] = h[x]
        funcs.append(_normalize(f, h, norm))
    funcs.append(_normalize(h.copy(), h, norm))
    rng = np.random.default_rng(seed)
    sharpness = [0.5, 1.0, 2.0]
    k = 0
    while len(funcs) < max(size, len(funcs)):
        raw = rng.random(d) ** sharpness[k % len(sharpness)]
        k += 1
        if not np.any(raw > 0):
            continue
        funcs.append(_normalize(raw * h, h, norm))
    return TestDictionary(
        functions=tuple(funcs), norm=norm,
        generation={"size": len(funcs), "seed": seed,
                    "mixture_sharpness": sharpness, "scales": [0.1, 1.0, 10.0]})


@dataclass(frozen=True)
class ErgodicityReport:
    """Grid profiles of the convergence diagnostics plus fitted rates."""

    t_grid: np.ndarray
    dl_lower: np.ndarray
    dl_bound: np.ndarray
    mean_gap: np.ndarray
    w1_bound: np.ndarray
    rates: dict
    certificate: DecayCertificate
    w1_empirical: np.ndarray | None = None

    def as_dict(self) -> dict:
        out = {
            "t": self.t_grid.tolist(),
            "dl_lower": self.dl_lower.tolist(),
            "dl_bound": self.dl_bound.tolist(),
            "mean_gap": self.mean_gap.tolist(),
            "w1_bound": self.w1_bound.tolist(),
            "rates": self.rates,
            "certificate": self.certificate.as_dict(),
        }
        if self.w1_empirical is not None:
            out["w1_empirical"] = self.w1_empirical.tolist()
        return out


def laplace_distance_profile(model: LatticeModel, mu0, dictionary: TestDictionary,
                             t_grid) -> np.ndarray:
    """max over the dictionary of |transition transform - invariant transform|
    for every grid time; a lower bound of the Laplace distance."""
    mu0 = np.asarray(mu0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    require_certificate(model)
    solve_grid = t_grid if t_grid[0] == 0.0 else np.concatenate([[0.0], t_grid])
    offset = 0 if t_grid[0] == 0.0 else 1
    profile = np.zeros(t_grid.size)
    for f in dictionary.functions:
        inv = invariant_laplace(model, f)
        sol = solve_cumulant(model, f, float(solve_grid[-1]), grid=solve_grid)
        trans = np.exp(-(sol.values @ mu0) - sol.psi_integral)
        np.maximum(profile, np.abs(trans[offset:] - inv), out=profile)
    return profile


def theorem41_bound(model: LatticeModel, mu0, dictionary: TestDictionary,
                    certificate: DecayCertificate, t_grid) -> np.ndarray:
    """Calibrated exponential envelope C' e^{-delta t} (1 + log(1 + <h, mu0>)).

    The constant is fixed from the dictionary gap at t = 0, doubled; the
    envelope is a falsifiable upper bound for the dictionary profile.
    """
    mu0 = np.asarray(mu0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    log_term = 1.0 + math.log1p(float(model.h @ mu0))
    gap0 = 0.0
    for f in dictionary.functions:
        inv = invariant_laplace(model, f)
        gap0 = max(gap0, abs(math.exp(-float(f @ mu0)) - inv))
    c_prime = 2.0 * gap0 / log_term
    return c_prime * np.exp(-certificate.delta * t_grid) * log_term


def empirical_w1(samples_a, samples_b, h=None) -> float:
    """Exact Wasserstein-1 distance between two equal-size empirical laws.

    Ground cost between states is the weighted total variation
    sum_x h(x) |mu(x) - nu(x)|; the optimal pairing is solved exactly, so
    sample counts are capped at 512 to keep the cubic assignment cheap.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("sample sets must have equal size and dimension")
    n, d = a.shape
    if n > MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"at most {MAX_ASSIGNMENT_SIZE} samples per set")
    w = np.ones(d) if h is None else np.asarray(h, dtype=float)
    cost = np.abs(a[:, None, :] - b[None, :, :]) @ w
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def mean_gap(model: LatticeModel, mu0, t_grid) -> np.ndarray:
    """Weighted total variation between the transition mean and the invariant
    mean on the grid; a Kantorovich lower-bound surrogate for W1."""
    mu0 = np.asarray(mu0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    target = invariant_mean(model)
    h = model.h
    return np.array([
        float(h @ np.abs(transition_mean(model, mu0, float(t)) - target))
        for t in t_grid])


def theorem42_bound(model: LatticeModel, rho_mean_h: float,
                    certificate: DecayCertificate, t_grid) -> np.ndarray:
    """Certified W1 envelope (<h,mu>-moment of the start law + invariant
    h-moment) * C e^{-delta t}."""
    t_grid = np.asarray(t_grid, dtype=float)
    m_inf = float(model.h @ invariant_mean(model))
    return (float(rho_mean_h) + m_inf) * certificate.C * np.exp(-certificate.delta * t_grid)


def fit_decay_rate(t, values) -> tuple[float, float]:
    """Least-squares slope of log(values) over the tail window [t_end/2, t_end].

    Nonpositive values shrink the window; returns (rate, r_squared).
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    window = (t >= t[-1] / 2.0) & (values > 0)
    if window.sum() < 2:
        raise ValueError("not enough positive tail points to fit a rate")
    x = t[window]
    y = np.log(values[window])
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def compute_ergodicity_report(model: LatticeModel, mu0, t_grid, dict_size: int = 8,
                              seed: int = 0, w1_samples: int = 0,
                              norm: str = "h") -> ErgodicityReport:
    """Assemble the full report: profiles, envelopes and fitted rates.

    ``w1_samples > 0`` adds an empirical W1 column computed from simulated
    transition samples against invariant samples (at most 512 each).
    """
    mu0 = np.asarray(mu0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    cert = require_certificate(model)
    dictionary = make_dictionary(model, size=dict_size, seed=seed, norm=norm)
    dl_lower = laplace_distance_profile(model, mu0, dictionary, t_grid)
    dl_bound = theorem41_bound(model, mu0, dictionary, cert, t_grid)
    gaps = mean_gap(model, mu0, t_grid)
    w1b = theorem42_bound(model, float(model.h @ mu0), cert, t_grid)

    rates = {}
    for name, series in (("dl_lower", dl_lower), ("mean_gap", gaps)):
        try:
            rate, r2 = fit_decay_rate(t_grid, series)
            rates[name] = {"rate": rate, "r2": r2}
        except ValueError:
            rates[name] = None

    w1_emp = None
    if w1_samples > 0:
        from .simulate import SimConfig, sample_invariant, simulate_paths

        n = min(w1_samples, MAX_ASSIGNMENT_SIZE)
        burn = math.log(1e3 * cert.C) / cert.delta
        inv_samples = sample_invariant(
            model, SimConfig(n_paths=n, t_end=burn, seed=seed + 1))[:n]
        ens = simulate_paths(model, mu0, SimConfig(
            n_paths=n, t_end=float(t_grid[-1]),
            record_grid=tuple(float(t) for t in t_grid if t > 0), seed=seed + 2))
        w1_emp = np.empty(t_grid.size)
        for i, t in enumerate(t_grid):
            if t == 0:
                w1_emp[i] = empirical_w1(np.tile(mu0, (n, 1)), inv_samples, h=model.h)
            else:
                k = ens.record_index(float(t))
                w1_emp[i] = empirical_w1(ens.states[:, k, :], inv_samples, h=model.h)

    return ErgodicityReport(t_grid=t_grid, dl_lower=dl_lower, dl_bound=dl_bound,
                            mean_gap=gaps, w1_bound=w1b, rates=rates,
                            certificate=cert, w1_empirical=w1_emp)
