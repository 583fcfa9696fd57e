"""Monte Carlo simulation of the measure-valued process.

Two schemes are provided.  The default "splitting" scheme advances every
path of a block simultaneously through symmetric substeps

    flow(h/2) -> diffusion(h/2) -> jumps(h) -> diffusion(h/2) -> flow(h/2)

where each factor is exact in law for its own generator: the affine flow
uses precomputed matrix exponentials, and the jump subsystem is run by a
rate-refreshing event loop inside the substep.  A site carrying diffusion
absorbs its own linear rate and deterministic immigration into the
square-root-diffusion factor, whose exact transition is sampled through the
Poisson-gamma mixture form of the noncentral chi-square; only the
cross-site coupling is left to the flow factor, so a single-site diffusive
model is simulated exactly for any step size.  The "event_driven" scheme
(diffusion-free models only) needs no time grid at all: jump times are
drawn by thinning against a flow-growth majorant, which is exact in law.

Paths are grouped into fixed-size blocks; block k draws from its own
counter-based stream keyed by (seed, stream_offset + k), so ensembles are
bit-identical no matter how blocks are distributed over worker threads.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelError, SolverError, ValidationError
from .mechanisms import assemble_moment_operator
from .model import LatticeModel, validate_model
from .moments import require_certificate

__all__ = [
    "SimConfig",
    "PathEnsemble",
    "simulate_paths",
    "empirical_laplace",
    "empirical_mean",
    "sample_invariant",
    "write_ensemble",
    "read_ensemble",
]

ENSEMBLE_MAGIC = b"SBR1"
DEFAULT_BLOCK = 4096
CLAMP_FRACTION_LIMIT = 1e-3


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: scheme, step size, path count, horizon, RNG keys."""

    n_paths: int
    t_end: float
    dt: float | None = None
    scheme: str = "splitting"
    seed: int = 0
    stream_offset: int = 0
    record_grid: tuple[float, ...] | None = None
    block_size: int = DEFAULT_BLOCK

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive when given")
        if self.scheme not in ("splitting", "event_driven"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.seed < 0 or self.stream_offset < 0:
            raise ValueError("seed and stream_offset must be nonnegative")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")


@dataclass(frozen=True)
class PathEnsemble:
    """Recorded states of all paths plus the RNG metadata that produced them."""

    states: np.ndarray             # (n_paths, n_records, d), all >= 0
    record_grid: np.ndarray
    seed: int
    stream_offset: int
    scheme: str
    block_size: int
    clamp_count: int
    jump_counts: np.ndarray        # events per channel (branching then immigration)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def record_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.record_grid, t, rtol=1e-9, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"t={t} is not on the record grid")
        return int(hits[0])


# ---------------------------------------------------------------------------
# shared precomputation
# ---------------------------------------------------------------------------

class _Context:
    """Arrays shared by every block: flow, diffusion and channel tables."""

    def __init__(self, model: LatticeModel):
        from scipy.linalg import expm

        self._expm = expm
        br = model.branching
        self.d = model.d

        comp_drift = np.zeros(self.d)
        br_sites, br_rates, br_profiles, br_laws = [], [], [], []
        for ch in br.h1_channels:
            if ch.event_rate > 0:
                br_sites.append(ch.site)
                br_rates.append(ch.event_rate)
                br_profiles.append(ch.profile)
                br_laws.append(ch.size)
            if ch.compensated:
                comp_drift[ch.site] += ch.intensity * ch.size.mean * ch.profile[ch.site]

        imm_rates, imm_profiles, imm_laws = [], [], []
        for ch in model.immigration.h2_channels:
            if ch.event_rate > 0:
                imm_rates.append(ch.event_rate)
                imm_profiles.append(ch.profile)
                imm_laws.append(ch.size)

        self.flow = (model.motion.generator_matrix().T + br.eta.T
                     - np.diag(br.b + comp_drift))
        self.beta = model.immigration.beta.copy()

        self.cir_sites = np.flatnonzero(br.c > 0)
        self.sigma2 = 2.0 * br.c[self.cir_sites]
        # diffusive sites handle their own decay/immigration exactly; the
        # flow factor keeps only the cross-site coupling for them
        self.cir_kappa = -self.flow[self.cir_sites, self.cir_sites].copy()
        self.cir_df_half = 2.0 * self.beta[self.cir_sites] / self.sigma2
        self.flow_eff = self.flow.copy()
        self.flow_eff[self.cir_sites, self.cir_sites] = 0.0
        self.beta_eff = self.beta.copy()
        self.beta_eff[self.cir_sites] = 0.0

        self.br_sites = np.array(br_sites, dtype=np.intp)
        self.br_rates = np.array(br_rates)
        self.imm_rates = np.array(imm_rates)
        self.imm_total = float(self.imm_rates.sum())
        self.n_br = len(br_sites)
        self.n_ch = self.n_br + len(imm_rates)
        self.profiles = np.array(br_profiles + imm_profiles).reshape(self.n_ch, self.d)
        self.laws = br_laws + imm_laws
        self.site_weight = np.zeros(self.d)
        np.add.at(self.site_weight, self.br_sites, self.br_rates)

        # logarithmic sup-norm of the (Metzler) flow matrix, for flow majorants
        self.nu_plus = max(0.0, float(self.flow.sum(axis=1).max()))
        self.beta_max = float(self.beta.max()) if self.d else 0.0
        self._prop_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def propagator(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Affine flow over tau: state -> state @ F.T + g, entries clipped >= 0."""
        cached = self._prop_cache.get(tau)
        if cached is not None:
            return cached
        d = self.d
        blk = np.zeros((d + 1, d + 1))
        blk[:d, :d] = self.flow_eff
        blk[:d, d] = self.beta_eff
        e = self._expm(tau * blk)
        F = np.maximum(e[:d, :d], 0.0)
        g = np.maximum(e[:d, d], 0.0)
        self._prop_cache[tau] = (F, g)
        return F, g


def _default_dt(model: LatticeModel) -> float:
    norm = float(np.abs(assemble_moment_operator(model).matrix).sum(axis=1).max())
    return 1e-3 * min(1.0, 1.0 / norm) if norm > 0 else 1e-3


def _resolve_records(sim: SimConfig) -> np.ndarray:
    grid = sim.record_grid if sim.record_grid is not None else (sim.t_end,)
    recs = np.unique(np.asarray(grid, dtype=float))
    if recs.size == 0:
        raise ValueError("record grid is empty")
    if recs[0] < 0 or recs[-1] > sim.t_end * (1 + 1e-12):
        raise ValueError("record times must lie in [0, t_end]")
    return recs


def _substep_plan(recs: np.ndarray, t_end: float, dt: float):
    """Substeps of length <= dt whose boundaries hit every record time."""
    checkpoints = [float(t) for t in recs if t > 0.0]
    if not checkpoints or not math.isclose(checkpoints[-1], t_end, rel_tol=1e-12):
        checkpoints.append(t_end)
    rec_pos = {float(t): k for k, t in enumerate(recs)}
    plan: list[tuple[float, int]] = []
    prev = 0.0
    for cp in checkpoints:
        seg = cp - prev
        n = max(1, math.ceil(seg / dt - 1e-9))
        tau = seg / n
        for _ in range(n - 1):
            plan.append((tau, -1))
        plan.append((tau, rec_pos.get(cp, -1)))
        prev = cp
    return plan


def _block_rng(sim: SimConfig, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=(int(sim.seed), int(sim.stream_offset) + block))
    return np.random.Generator(np.random.Philox(seed=ss))


# ---------------------------------------------------------------------------
# splitting scheme
# ---------------------------------------------------------------------------

def _cir_step(states, rng, ctx: _Context, tau: float):
    """Exact square-root-diffusion transition per diffusive site.

    Site dynamics dX = (a - kappa X) dt + sigma sqrt(X) dW over tau:
    X' = Gamma(df/2 + N, 2 g) with N ~ Poisson(X e^{-kappa tau} / (2 g)),
    df = 4 a / sigma^2 and g = sigma^2 (1 - e^{-kappa tau}) / (4 kappa).
    """
    for j, x in enumerate(ctx.cir_sites):
        s2 = ctx.sigma2[j]
        kt = ctx.cir_kappa[j] * tau
        if abs(kt) > 1e-12:
            g = s2 * -math.expm1(-kt) / (4.0 * ctx.cir_kappa[j])
            fac = math.exp(-kt)
        else:
            g = s2 * tau / 4.0
            fac = 1.0
        n_mix = rng.poisson(states[:, x] * (fac / (2.0 * g)))
        states[:, x] = rng.gamma(ctx.cir_df_half[j] + n_mix, 2.0 * g)


def _jump_step(states, rng, ctx: _Context, h: float, counts):
    idx = np.arange(states.shape[0])
    rem = np.full(idx.size, h)
    while idx.size:
        lam = states[idx] @ ctx.site_weight + ctx.imm_total
        draws = rng.standard_exponential(idx.size)
        tau = np.full(idx.size, np.inf)
        np.divide(draws, lam, out=tau, where=lam > 0)
        fire = tau < rem[idx]
        rem[idx[fire]] -= tau[fire]
        idx = idx[fire]
        if idx.size == 0:
            break
        rates = np.empty((idx.size, ctx.n_ch))
        for k in range(ctx.n_br):
            rates[:, k] = ctx.br_rates[k] * states[idx, ctx.br_sites[k]]
        rates[:, ctx.n_br:] = ctx.imm_rates[None, :]
        u = rng.random(idx.size) * rates.sum(axis=1)
        choice = np.minimum((np.cumsum(rates, axis=1) < u[:, None]).sum(axis=1),
                            ctx.n_ch - 1)
        for k in np.unique(choice):
            rows = idx[choice == k]
            z = ctx.laws[k].sample(rng, rows.size)
            states[rows] += z[:, None] * ctx.profiles[k][None, :]
            counts[k] += rows.size


def _run_block_splitting(out, sl, mu0, sim: SimConfig, ctx: _Context, plan, block: int):
    rng = _block_rng(sim, block)
    nb = sl.stop - sl.start
    states = np.tile(mu0, (nb, 1))
    counts = np.zeros(ctx.n_ch, dtype=np.int64)
    clamps = 0
    for tau, rec in plan:
        F, g = ctx.propagator(tau / 2.0)
        states = states @ F.T + g[None, :]
        if ctx.cir_sites.size:
            _cir_step(states, rng, ctx, tau / 2.0)
        if ctx.n_ch:
            _jump_step(states, rng, ctx, tau, counts)
        if ctx.cir_sites.size:
            _cir_step(states, rng, ctx, tau / 2.0)
        states = states @ F.T + g[None, :]
        low = float(states.min())
        if low < 0.0:
            clamps += int((states < 0).sum())
            np.maximum(states, 0.0, out=states)
        if rec >= 0:
            out[sl, rec] = states
    return counts, clamps


# ---------------------------------------------------------------------------
# event-driven scheme (diffusion-free, exact)
# ---------------------------------------------------------------------------

def _run_block_event(out, sl, mu0, sim: SimConfig, ctx: _Context, recs, t_end, block: int):
    rng = _block_rng(sim, block)
    counts = np.zeros(ctx.n_ch, dtype=np.int64)
    window_cap = 0.5 / ctx.nu_plus if ctx.nu_plus > 0 else math.inf
    for _path in range(sl.stop - sl.start):
        state = mu0.copy()
        t = 0.0
        ri = 0
        while ri < recs.size and math.isclose(recs[ri], 0.0, abs_tol=1e-15):
            out[sl.start + _path, ri] = state
            ri += 1
        while t < t_end * (1 - 1e-15):
            next_stop = recs[ri] if ri < recs.size else t_end
            window = min(window_cap, next_stop - t)
            mbar = (float(state.max()) + window * ctx.beta_max) * math.exp(ctx.nu_plus * window)
            lam_bar = float(ctx.br_rates.sum()) * mbar + ctx.imm_total
            tau = rng.standard_exponential() / lam_bar if lam_bar > 0 else math.inf
            if tau >= window:
                F, g = ctx.propagator(window)
                state = F @ state + g
                t += window
                if ri < recs.size and math.isclose(t, recs[ri], rel_tol=1e-12, abs_tol=1e-15):
                    out[sl.start + _path, ri] = state
                    ri += 1
                continue
            F, g = ctx.propagator(tau)
            state = F @ state + g
            t += tau
            rates = np.concatenate([
                ctx.br_rates * state[ctx.br_sites] if ctx.n_br else np.empty(0),
                ctx.imm_rates,
            ])
            lam_true = float(rates.sum())
            if lam_true > 0 and rng.random() * lam_bar < lam_true:
                u = rng.random() * lam_true
                k = min(int((np.cumsum(rates) < u).sum()), ctx.n_ch - 1)
                z = ctx.laws[k].sample(rng, 1)[0]
                state = state + z * ctx.profiles[k]
                counts[k] += 1
    return counts, 0


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def simulate_paths(model: LatticeModel, mu0, sim: SimConfig, threads: int = 1) -> PathEnsemble:
    """Simulate an ensemble of paths started at mu0.

    ``threads`` only distributes whole blocks over workers; the result is
    bit-identical for any thread count.
    """
    report = validate_model(model)
    if not report.ok:
        raise ValidationError(report)
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (model.d,) or np.any(mu0 < 0) or not np.all(np.isfinite(mu0)):
        raise ValueError("mu0 must be a nonnegative vector over the sites")

    ctx = _Context(model)
    if sim.scheme == "event_driven" and ctx.cir_sites.size:
        raise ModelError("event_driven scheme requires zero diffusion coefficients")

    recs = _resolve_records(sim)
    out = np.zeros((sim.n_paths, recs.size, model.d))
    if math.isclose(recs[0], 0.0, abs_tol=1e-15):
        out[:, 0] = mu0

    blocks = [(k, slice(s, min(s + sim.block_size, sim.n_paths)))
              for k, s in enumerate(range(0, sim.n_paths, sim.block_size))]

    if sim.scheme == "splitting":
        dt = sim.dt if sim.dt is not None else _default_dt(model)
        plan = _substep_plan(recs, sim.t_end, dt)

        def work(kb):
            k, sl = kb
            return _run_block_splitting(out, sl, mu0, sim, ctx, plan, k)
    else:
        def work(kb):
            k, sl = kb
            return _run_block_event(out, sl, mu0, sim, ctx, recs, sim.t_end, k)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(kb) for kb in blocks]

    counts = np.zeros(ctx.n_ch, dtype=np.int64)
    clamps = 0
    for c, cl in results:
        counts += c
        clamps += cl
    n_steps_total = (len(plan) if sim.scheme == "splitting" else 1) * sim.n_paths
    if clamps > CLAMP_FRACTION_LIMIT * max(1, n_steps_total) * model.d:
        raise SolverError("splitting produced too many negative-state clamps",
                          {"clamps": clamps, "steps": n_steps_total})

    return PathEnsemble(states=out, record_grid=recs, seed=sim.seed,
                        stream_offset=sim.stream_offset, scheme=sim.scheme,
                        block_size=sim.block_size, clamp_count=clamps,
                        jump_counts=counts)


def empirical_laplace(ensemble: PathEnsemble, f, t: float) -> tuple[float, float]:
    """Sample mean and standard error of exp(-<f, mu_t>) over the ensemble."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("f must be nonnegative")
    k = ensemble.record_index(t)
    vals = np.exp(-(ensemble.states[:, k, :] @ f))
    n = vals.size
    err = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), err


def empirical_mean(ensemble: PathEnsemble, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-site sample mean and standard error at a recorded time."""
    k = ensemble.record_index(t)
    block = ensemble.states[:, k, :]
    n = block.shape[0]
    err = block.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(block.shape[1])
    return block.mean(axis=0), err


def sample_invariant(model: LatticeModel, sim: SimConfig) -> np.ndarray:
    """Approximate draws from the invariant law.

    Paths start from the zero state, burn in until the certified envelope
    C e^{-delta t} drops below 1e-3 and are then recorded at spacings of at
    least 3/delta; all records are pooled into one sample array.
    """
    cert = require_certificate(model)
    burn_in = math.log(1e3 * cert.C) / cert.delta
    spacing = 3.0 / cert.delta
    if sim.t_end < burn_in:
        raise ValueError(f"t_end={sim.t_end} is below the required burn-in {burn_in:.3f}")
    records = np.arange(burn_in, sim.t_end * (1 + 1e-12), spacing)
    ens = simulate_paths(model, np.zeros(model.d),
                         replace(sim, record_grid=tuple(float(t) for t in records)))
    return ens.states.reshape(-1, model.d)


# ---------------------------------------------------------------------------
# raw ensemble files
# ---------------------------------------------------------------------------

def write_ensemble(path, ensemble: PathEnsemble) -> None:
    """Write magic "SBR1", header (n_paths, n_records, d as little-endian u64),
    the record grid and the state array as little-endian f64."""
    n, r, d = ensemble.states.shape
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<QQQ", n, r, d))
        fh.write(np.ascontiguousarray(ensemble.record_grid, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.states, dtype="<f8").tobytes())


def read_ensemble(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a raw ensemble file; returns (record_grid, states)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENSEMBLE_MAGIC:
            raise ValueError("not a superbranch ensemble file")
        n, r, d = struct.unpack("<QQQ", fh.read(24))
        grid = np.frombuffer(fh.read(8 * r), dtype="<f8").copy()
        states = np.frombuffer(fh.read(8 * n * r * d), dtype="<f8").copy()
    return grid, states.reshape(n, r, d)
