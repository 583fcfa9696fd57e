"""Command-line surface: check, solve, laplace, mean, simulate, ergodicity, report.

Structured results are printed as JSON (sorted keys), time series as CSV.
With --out DIR the same artifacts are written into DIR next to a run
manifest recording the command line, the canonical config hash, the seed and
the produced files.  Exit codes: 0 success, 2 validation/certification
refusal, 3 solver failure, 4 I/O error, 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cumulant import (invariant_laplace, invariant_psi_integral, solve_cumulant,
                       transition_laplace)
from .ergodicity import compute_ergodicity_report
from .errors import (ConfigError, RefusalError, SolverError, SuperbranchError,
                     ValidationError)
from .model import LatticeModel, canonical_json, load_config, validate_model
from .moments import Refusal, check_subcritical, transition_mean
from .simulate import SimConfig, empirical_laplace, empirical_mean, simulate_paths, write_ensemble

__all__ = ["run", "main", "RunManifest"]

EXIT_OK = 0
EXIT_REFUSED = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_USAGE = 64


@dataclass(frozen=True)
class RunManifest:
    """Record of one artifact-producing run."""

    command: list
    config_hash: str
    seed: int
    version: str
    wall_time_s: float
    outputs: list

    def as_dict(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash,
                "seed": self.seed, "version": self.version,
                "wall_time_s": self.wall_time_s, "outputs": self.outputs}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 64 instead of argparse's default 2
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _vector(text: str) -> np.ndarray:
    try:
        v = np.asarray(json.loads(text), dtype=float)
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise argparse.ArgumentTypeError(f"expected a JSON array, got {text!r}: {e}")
    return np.atleast_1d(v)


def _scalar_or_vector(text: str) -> np.ndarray:
    try:
        return np.atleast_1d(np.asarray(json.loads(text), dtype=float))
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise argparse.ArgumentTypeError(f"expected a number or JSON array: {e}")


def _time_list(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _print_json(payload: dict):
    print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _config_hash(model: LatticeModel) -> str:
    return hashlib.sha256(canonical_json(model).encode()).hexdigest()


def _load(path: str) -> LatticeModel:
    if not Path(path).exists():
        raise OSError(f"config file not found: {path}")
    return load_config(path)


def _write_outputs(args, argv, files: dict, seed: int, config_hash: str, t0: float) -> None:
    """Write artifact files plus the run manifest into --out."""
    if not getattr(args, "out", None):
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, content in files.items():
        p = out / name
        if isinstance(content, bytes):
            p.write_bytes(content)
        else:
            p.write_text(content)
        written.append(str(p))
    manifest = RunManifest(command=list(argv), config_hash=config_hash, seed=seed,
                           version=__version__, wall_time_s=time.time() - t0,
                           outputs=written)
    (out / "manifest.json").write_text(
        json.dumps(_jsonable(manifest.as_dict()), indent=2, sort_keys=True) + "\n")


def _csv(header: list, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_check(args, argv, t0) -> int:
    try:
        model = _load(args.config)
        report = validate_model(model)
    except ValidationError as e:
        payload = {"kind": "check", "config_hash": None, **e.report.as_dict()}
        _print_json(payload)
        return EXIT_REFUSED
    except ConfigError as e:
        _print_json({"kind": "check", "valid": False, "error": str(e),
                     "pointer": getattr(e, "pointer", "")})
        return EXIT_REFUSED
    payload = {"kind": "check", "config_hash": _config_hash(model), **report.as_dict()}
    code = EXIT_OK if report.ok else EXIT_REFUSED
    if args.certify:
        cert = check_subcritical(model)
        if isinstance(cert, Refusal):
            payload["certificate"] = None
            payload["refusal"] = cert.as_dict()
            code = EXIT_REFUSED
        else:
            payload["certificate"] = cert.as_dict()
    _print_json(payload)
    _write_outputs(args, argv, {"check.json": json.dumps(_jsonable(payload), indent=2,
                                                         sort_keys=True) + "\n"},
                   args.seed, payload.get("config_hash") or "", t0)
    return code


def _cmd_solve(args, argv, t0) -> int:
    model = _load(args.config)
    sol = solve_cumulant(model, args.f, args.t, grid=args.grid)
    header = ["t"] + [f"v_{s}" for s in model.sites] + ["psi_integral"]
    rows = [np.concatenate([[sol.grid[k]], sol.values[k], [sol.psi_integral[k]]])
            for k in range(sol.grid.size)]
    text = _csv(header, rows)
    sys.stdout.write(text)
    _write_outputs(args, argv, {"solve.csv": text}, args.seed, _config_hash(model), t0)
    return EXIT_OK


def _cmd_laplace(args, argv, t0) -> int:
    model = _load(args.config)
    if args.invariant:
        integral, tail, horizon = invariant_psi_integral(model, args.f)
        payload = {
            "kind": "laplace", "config_hash": _config_hash(model),
            "mode": "invariant", "f": args.f, "value": float(np.exp(-integral)),
            "error_budget": {"tail_bound": tail, "horizon": horizon,
                             "atol": 1e-10, "rtol": 1e-8},
        }
    else:
        if args.t is None:
            raise _UsageError("laplace: --t is required unless --invariant is given")
        mu0 = args.mu0 if args.mu0 is not None else np.zeros(model.d)
        sol = solve_cumulant(model, args.f, args.t, grid=np.array([0.0, args.t]))
        value = float(np.exp(-sol.final @ mu0 - sol.psi_integral[-1]))
        payload = {
            "kind": "laplace", "config_hash": _config_hash(model),
            "mode": "transition", "mu0": mu0, "f": args.f, "t": args.t,
            "value": value,
            "error_budget": {"atol": sol.atol, "rtol": sol.rtol,
                             "max_clamp": sol.max_clamp, "n_steps": sol.n_steps},
        }
    _print_json(payload)
    _write_outputs(args, argv, {"laplace.json": json.dumps(_jsonable(payload), indent=2,
                                                           sort_keys=True) + "\n"},
                   args.seed, payload["config_hash"], t0)
    return EXIT_OK


def _cmd_mean(args, argv, t0) -> int:
    model = _load(args.config)
    times = args.t
    header = ["t"] + [f"m_{s}" for s in model.sites]
    rows = []
    for t in times:
        m = transition_mean(model, args.mu0, float(t))
        rows.append(np.concatenate([[t], m]))
    text = _csv(header, rows)
    sys.stdout.write(text)
    _write_outputs(args, argv, {"mean.csv": text}, args.seed, _config_hash(model), t0)
    return EXIT_OK


def _cmd_simulate(args, argv, t0) -> int:
    model = _load(args.config)
    mu0 = args.mu0 if args.mu0 is not None else np.zeros(model.d)
    record = tuple(args.record) if args.record else (args.t,)
    sim = SimConfig(n_paths=args.paths, t_end=args.t, dt=args.dt, scheme=args.scheme,
                    seed=args.seed, record_grid=record)
    threads = args.threads if args.threads > 0 else None
    ens = simulate_paths(model, mu0, sim, threads=threads or 1)
    payload = {
        "kind": "simulate", "config_hash": _config_hash(model),
        "n_paths": ens.n_paths, "seed": ens.seed, "scheme": ens.scheme,
        "record": ens.record_grid, "jump_counts": ens.jump_counts,
        "clamp_count": ens.clamp_count, "moments": [], "laplace": [],
    }
    for t in ens.record_grid:
        m, se = empirical_mean(ens, float(t))
        payload["moments"].append({"t": float(t), "mean": m, "stderr": se})
    for f in args.f or []:
        for t in ens.record_grid:
            est, se = empirical_laplace(ens, f, float(t))
            payload["laplace"].append({"f": f, "t": float(t),
                                       "estimate": est, "stderr": se})
    _print_json(payload)
    files = {"simulate.json": json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"}
    if args.csv:
        header = ["path", "t"] + [f"mu_{s}" for s in model.sites]
        rows = []
        for i in range(ens.n_paths):
            for k, t in enumerate(ens.record_grid):
                rows.append(np.concatenate([[i], [t], ens.states[i, k]]))
        files["states.csv"] = _csv(header, rows)
    if args.ensemble_out:
        write_ensemble(args.ensemble_out, ens)
    _write_outputs(args, argv, files, args.seed, payload["config_hash"], t0)
    return EXIT_OK


def _cmd_ergodicity(args, argv, t0) -> int:
    model = _load(args.config)
    mu0 = args.mu0 if args.mu0 is not None else np.zeros(model.d)
    t_grid = np.linspace(0.0, args.tmax, args.grid)
    report = compute_ergodicity_report(model, mu0, t_grid, dict_size=args.dict_size,
                                       seed=args.seed, w1_samples=args.paths)
    payload = {"kind": "ergodicity", "config_hash": _config_hash(model),
               **report.as_dict()}
    _print_json(payload)
    header = ["t", "dl_lower", "dl_bound", "mean_gap", "w1_bound"]
    cols = [report.t_grid, report.dl_lower, report.dl_bound, report.mean_gap,
            report.w1_bound]
    if report.w1_empirical is not None:
        header.append("w1_empirical")
        cols.append(report.w1_empirical)
    rows = np.stack(cols, axis=1)
    files = {"ergodicity.json": json.dumps(_jsonable(payload), indent=2,
                                           sort_keys=True) + "\n",
             "ergodicity.csv": _csv(header, rows)}
    _write_outputs(args, argv, files, args.seed, payload["config_hash"], t0)
    return EXIT_OK


def _cmd_report(args, argv, t0) -> int:
    model = _load(args.config)
    chash = _config_hash(model)
    sections = {"check": None, "laplace": [], "simulate": [], "ergodicity": None}
    for path in args.inputs:
        p = Path(path)
        if not p.exists():
            raise OSError(f"report input not found: {path}")
        data = json.loads(p.read_text())
        got = data.get("config_hash")
        if got != chash:
            raise RefusalError(
                f"config hash mismatch in {path}: {got} != {chash}")
        kind = data.get("kind")
        if kind == "check":
            sections["check"] = data
        elif kind == "laplace":
            sections["laplace"].append(data)
        elif kind == "simulate":
            sections["simulate"].append(data)
        elif kind == "ergodicity":
            sections["ergodicity"] = data
    payload = {"kind": "report", "config_hash": chash, **sections}
    _print_json(payload)
    files = {"report.json": json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"}
    erg = sections["ergodicity"]
    if erg:
        header = ["t", "dl_lower", "dl_bound", "mean_gap", "w1_bound"]
        rows = np.stack([np.asarray(erg[k], dtype=float)
                         for k in ("t", "dl_lower", "dl_bound", "mean_gap", "w1_bound")],
                        axis=1)
        files["report.csv"] = _csv(header, rows)
    _write_outputs(args, argv, files, args.seed, chash, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="superbranch",
                     description="subcritical branching processes with immigration "
                                 "on finite lattices")
    parser.add_argument("--out", default=None, help="directory for artifact files")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for simulation (0 = auto)")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("check", help="validate a config, optionally certify decay")
    p.add_argument("config")
    p.add_argument("--certify", action="store_true")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("solve", help="integrate the cumulant flow, emit CSV")
    p.add_argument("config")
    p.add_argument("--f", type=_vector, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--grid", type=int, default=64)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("laplace", help="transition or invariant Laplace transform")
    p.add_argument("config")
    p.add_argument("--f", type=_vector, required=True)
    p.add_argument("--mu0", type=_vector, default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--invariant", action="store_true")
    p.set_defaults(func=_cmd_laplace)

    p = sub.add_parser("mean", help="transition mean, emit CSV")
    p.add_argument("config")
    p.add_argument("--mu0", type=_vector, required=True)
    p.add_argument("--t", type=_time_list, required=True,
                   help="comma-separated list of times")
    p.set_defaults(func=_cmd_mean)

    p = sub.add_parser("simulate", help="Monte Carlo ensemble summary")
    p.add_argument("config")
    p.add_argument("--mu0", type=_vector, default=None)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--record", type=_time_list, default=None)
    p.add_argument("--f", type=_vector, action="append",
                   help="test function for Laplace estimates (repeatable)")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--scheme", choices=["splitting", "event_driven"],
                   default="splitting")
    p.add_argument("--csv", action="store_true",
                   help="also write recorded states as CSV (needs --out)")
    p.add_argument("--ensemble-out", default=None,
                   help="write the raw ensemble to this binary file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ergodicity", help="convergence profiles and bounds")
    p.add_argument("config")
    p.add_argument("--mu0", type=_vector, default=None)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--dict-size", type=int, default=8)
    p.add_argument("--paths", type=int, default=0,
                   help="sample count for the empirical W1 column (0 = skip)")
    p.set_defaults(func=_cmd_ergodicity)

    p = sub.add_parser("report", help="merge other command outputs into one bundle")
    p.add_argument("config")
    p.add_argument("--inputs", nargs="+", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    t0 = time.time()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args, argv, t0)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ConfigError, RefusalError) as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_REFUSED
    except SolverError as e:
        print(f"solver failure: {e} {e.diagnostics}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except SuperbranchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_REFUSED


def main() -> None:
    sys.exit(run())
