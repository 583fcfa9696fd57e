"""Branching and immigration functionals and the first-moment generator.

The branching functional acts per site on a nonnegative test vector f as

    phi(x, f) = c(x) f(x)^2 + b(x) f(x) - sum_y f(y) eta(x, y)
                + sum_{channels at x} intensity * E[e^{-z <f, profile>} - 1
                                                   (+ f(x) z profile(x) if compensated)]

and the immigration functional as <f, beta> plus the matching non-compensated
channel integrals.  Linearizing the flow at f = 0 yields the matrix that
drives all first-moment computations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .model import LatticeModel

if TYPE_CHECKING:
    from .moments import DecayCertificate

__all__ = [
    "MomentOperator",
    "eval_phi",
    "eval_phi_all",
    "eval_psi",
    "make_phi",
    "make_psi",
    "assemble_moment_operator",
    "effective_immigration_mean",
]


@dataclass(frozen=True)
class MomentOperator:
    """First-moment generator B together with its assembly ingredients.

    B f = A f + Gamma f - b f where A is the motion generator and Gamma
    collects deterministic transfer plus the mean placement of every
    non-compensated jump channel (including its on-site component; only the
    compensated local atom is excluded).  Means of the process evolve by the
    adjoint, exp(t B^T).
    """

    matrix: np.ndarray
    b_tilde: np.ndarray
    gamma_tilde: np.ndarray
    spectral_abscissa: float
    decay: "DecayCertificate | None" = None

    @property
    def d(self) -> int:
        return self.matrix.shape[0]


def _check_nonnegative(f: np.ndarray, what: str = "f") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError(f"{what} must be nonnegative and finite")
    return f


def make_phi(model: LatticeModel) -> Callable[[np.ndarray], np.ndarray]:
    """Compile the per-site branching functional into a vector evaluator.

    The returned callable does no input checking; it is the single
    implementation backing both the public evaluators and the ODE right-hand
    side, so the solver and the API cannot drift apart.
    """
    br = model.branching
    b, c, eta = br.b, br.c, br.eta
    channels = [(ch.site, ch.intensity, ch.profile, ch.size,
                 ch.compensated, float(ch.profile[ch.site]), ch.size.mean)
                for ch in br.h1_channels]

    def phi(f: np.ndarray) -> np.ndarray:
        out = c * f * f + b * f - eta @ f
        for site, lam, profile, law, comp, pi_x, m1 in channels:
            u = float(profile @ f)
            val = -law.one_minus_exp(u)
            if comp:
                val += f[site] * pi_x * m1
            out[site] += lam * val
        return out

    return phi


def make_psi(model: LatticeModel) -> Callable[[np.ndarray], float]:
    im = model.immigration
    beta = im.beta
    channels = [(ch.intensity, ch.profile, ch.size) for ch in im.h2_channels]

    def psi(f: np.ndarray) -> float:
        total = float(beta @ f)
        for lam, profile, law in channels:
            total += lam * law.one_minus_exp(float(profile @ f))
        return total

    return psi


def eval_phi_all(model: LatticeModel, f) -> np.ndarray:
    """Branching functional at every site for a nonnegative test vector."""
    return make_phi(model)(_check_nonnegative(f))


def eval_phi(model: LatticeModel, x: int, f) -> float:
    """Branching functional at site x."""
    return float(eval_phi_all(model, f)[x])


def eval_psi(model: LatticeModel, f) -> float:
    """Immigration functional; zero at f = 0 and monotone in f."""
    return make_psi(model)(_check_nonnegative(f))


def assemble_moment_operator(model: LatticeModel) -> MomentOperator:
    """Build B = Q + Gamma - diag(b) and its spectral abscissa."""
    br = model.branching
    q = model.motion.q
    gamma = br.eta.copy()
    for ch in br.h1_channels:
        if not ch.compensated:
            gamma[ch.site] += ch.mean_vector
    matrix = model.motion.generator_matrix() + gamma - np.diag(br.b)
    b_tilde = br.b + model.motion.total_rates
    gamma_tilde = q + gamma
    abscissa = float(np.max(np.linalg.eigvals(matrix).real))
    return MomentOperator(matrix=matrix, b_tilde=b_tilde,
                          gamma_tilde=gamma_tilde, spectral_abscissa=abscissa)


def effective_immigration_mean(model: LatticeModel) -> np.ndarray:
    """Mean immigration flow a = beta + sum_channels intensity * m1 * profile."""
    im = model.immigration
    a = im.beta.copy()
    for k, ch in enumerate(im.h2_channels):
        if not ch.size.has_first_moment:
            raise ValueError(f"h2 channel {k} has no finite first moment")
        a += ch.mean_vector
    return a
