"""Nonlinear cumulant flow: solving v' = A v - phi(., v) and the Laplace
transforms built from it.

The flow is integrated together with the accumulated immigration functional
w(t) = int_0^t psi(v_s) ds as one augmented system, so a single adaptive
integration controls the error of both the state and the quadrature.  The
exact solution is nonnegative; accepted steps are clamped at zero and a run
is rejected when any clamp exceeds a tolerance, because large clamps signal
that the step control failed rather than harmless round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from .errors import NotSubcriticalError, RefusalError, SolverError
from .mechanisms import effective_immigration_mean, make_phi, make_psi
from .model import LatticeModel

__all__ = [
    "CumulantSolution",
    "solve_cumulant",
    "semigroup_defect",
    "transition_laplace",
    "invariant_laplace",
    "invariant_psi_integral",
]

DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-8
CLAMP_LIMIT = 1e-8
NORM_GUARD = 1e12


@dataclass(frozen=True)
class CumulantSolution:
    """Trajectory of the cumulant flow on a time grid.

    ``values[k]`` is the state vector at ``grid[k]`` (``values[0] == f0``)
    and ``psi_integral[k]`` the accumulated immigration functional, starting
    at zero and nondecreasing.
    """

    f0: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    psi_integral: np.ndarray
    atol: float
    rtol: float
    max_clamp: float
    n_steps: int

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def at(self, t: float) -> tuple[np.ndarray, float]:
        """Value and psi-integral at a grid time."""
        k = int(np.argmin(np.abs(self.grid - t)))
        if not math.isclose(self.grid[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"t={t} is not on the solution grid")
        return self.values[k], float(self.psi_integral[k])


def _resolve_grid(t_end: float, grid) -> np.ndarray:
    if np.isscalar(grid):
        n = int(grid)
        if n < 1:
            raise ValueError("grid must request at least one interval")
        return np.linspace(0.0, t_end, n + 1)
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 1 or g[0] != 0.0:
        raise ValueError("explicit grid must be 1-d and start at 0")
    if np.any(np.diff(g) <= 0):
        raise ValueError("explicit grid must be strictly increasing")
    if not math.isclose(g[-1], t_end, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("explicit grid must end at t_end")
    return g


def solve_cumulant(model: LatticeModel, f, t_end: float, grid=64,
                   atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> CumulantSolution:
    """Integrate the augmented cumulant system up to t_end.

    ``grid`` is either a point count (uniform grid with that many intervals)
    or an explicit strictly increasing array starting at 0 and ending at
    t_end.  Dense output of the embedded 4(5) pair supplies the values at
    grid points; negative round-off in the state is clamped to zero after
    every accepted step.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("initial test function must be nonnegative and finite")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    out_grid = _resolve_grid(t_end, grid)
    d = model.d

    phi = make_phi(model)
    psi = make_psi(model)
    a_gen = model.motion.generator_matrix()

    def rhs(_t, y):
        v = np.maximum(y[:d], 0.0)  # stage values may undershoot zero
        dv = a_gen @ v - phi(v)
        return np.concatenate([dv, [psi(v)]])

    y0 = np.concatenate([f, [0.0]])
    solver = RK45(rhs, 0.0, y0, t_end, rtol=rtol, atol=atol)

    values = np.empty((out_grid.size, d))
    psi_int = np.empty(out_grid.size)
    values[0] = f
    psi_int[0] = 0.0
    next_out = 1

    max_clamp = 0.0
    n_steps = 0
    while solver.status == "running":
        msg = solver.step()
        n_steps += 1
        if solver.status == "failed":
            raise SolverError("cumulant integration failed: " + str(msg),
                              {"t": solver.t, "step": n_steps})
        clamp = -float(min(solver.y[:d].min(), 0.0))
        if clamp > 0.0:
            if clamp > CLAMP_LIMIT:
                raise SolverError(
                    f"negative excursion {clamp:.3e} exceeds the clamp limit",
                    {"t": solver.t, "clamp": clamp})
            max_clamp = max(max_clamp, clamp)
            solver.y[:d] = np.maximum(solver.y[:d], 0.0)
        vmax = float(np.abs(solver.y[:d]).max()) if d else 0.0
        if vmax > NORM_GUARD:
            raise SolverError("state norm guard tripped",
                              {"t": solver.t, "norm": vmax})
        if next_out < out_grid.size and out_grid[next_out] <= solver.t:
            dense = solver.dense_output()
            while next_out < out_grid.size and out_grid[next_out] <= solver.t:
                y = dense(out_grid[next_out])
                values[next_out] = np.maximum(y[:d], 0.0)
                psi_int[next_out] = y[d]
                next_out += 1
    if next_out < out_grid.size:  # t_end reached exactly by the last step
        values[next_out:] = np.maximum(solver.y[:d], 0.0)
        psi_int[next_out:] = solver.y[d]

    psi_int = np.maximum.accumulate(np.maximum(psi_int, 0.0))
    return CumulantSolution(f0=f, grid=out_grid, values=values,
                            psi_integral=psi_int, atol=atol, rtol=rtol,
                            max_clamp=max_clamp, n_steps=n_steps)


def semigroup_defect(model: LatticeModel, f, s: float, t: float,
                     atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> float:
    """Sup-norm gap between the one-shot flow to s+t and the composed flow."""
    if not (s > 0 and t > 0):
        raise ValueError("s and t must be positive")
    direct = solve_cumulant(model, f, s + t, grid=np.array([0.0, s + t]),
                            atol=atol, rtol=rtol).final
    inner = solve_cumulant(model, f, t, grid=np.array([0.0, t]),
                           atol=atol, rtol=rtol).final
    outer = solve_cumulant(model, inner, s, grid=np.array([0.0, s]),
                           atol=atol, rtol=rtol).final
    return float(np.max(np.abs(direct - outer)))


def transition_laplace(model: LatticeModel, mu0, f, t: float,
                       atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> float:
    """Laplace transform of the time-t transition kernel started at mu0."""
    mu0 = np.asarray(mu0, dtype=float)
    if np.any(mu0 < 0) or not np.all(np.isfinite(mu0)):
        raise ValueError("mu0 must be nonnegative and finite")
    f = np.asarray(f, dtype=float)
    if t == 0:
        if np.any(f < 0):
            raise ValueError("f must be nonnegative")
        return float(np.exp(-f @ mu0))
    sol = solve_cumulant(model, f, t, grid=np.array([0.0, t]), atol=atol, rtol=rtol)
    return float(np.exp(-sol.final @ mu0 - sol.psi_integral[-1]))


def _decay_certificate(model: LatticeModel):
    from .moments import Refusal, check_subcritical  # deferred: moments builds on this module

    cert = check_subcritical(model)
    if isinstance(cert, Refusal):
        raise NotSubcriticalError(
            "invariant quantities need a subcriticality certificate: " + cert.reason,
            spectral_abscissa=cert.spectral_abscissa)
    return cert


def invariant_psi_integral(model: LatticeModel, f, tail_tol: float = 1e-10,
                           atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL
                           ) -> tuple[float, float, float]:
    """Integral of the immigration functional along the flow, with tail budget.

    Returns ``(integral, tail_bound, horizon)``: the quadrature over [0, T]
    where T is chosen so that the certified envelope
    psi(v_s) <= C ||f||_h <h, a> e^{-delta s} puts the remaining tail below
    ``tail_tol``; the analytic tail estimate is reported, not added.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("f must be nonnegative and finite")
    if not model.immigration.has_log_moment:
        raise RefusalError("immigration jump measure lacks the log moment")
    cert = _decay_certificate(model)

    f_h = float(np.max(f / model.h))
    a = effective_immigration_mean(model)
    weight = float(model.h @ a)
    if f_h == 0.0 or weight == 0.0:
        return 0.0, 0.0, 0.0
    horizon = max(1.0, math.log(cert.C * f_h * weight / (tail_tol * cert.delta))
                  / cert.delta)
    sol = solve_cumulant(model, f, horizon, grid=np.array([0.0, horizon]),
                         atol=atol, rtol=rtol)
    tail = cert.C * f_h * weight * math.exp(-cert.delta * horizon) / cert.delta
    return float(sol.psi_integral[-1]), tail, horizon


def invariant_laplace(model: LatticeModel, f, tail_tol: float = 1e-10,
                      atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> float:
    """Laplace transform of the invariant law, exp(-int_0^inf psi(v_s) ds).

    Refuses when the model is not certified subcritical or the immigration
    jump measure lacks the log moment required for the invariant law.
    """
    total, _tail, _horizon = invariant_psi_integral(model, f, tail_tol=tail_tol,
                                                    atol=atol, rtol=rtol)
    return float(np.exp(-total))
