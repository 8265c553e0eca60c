"""Command-line front end producing reproducible, machine-readable runs.

Commands: solve | verify | sweep | identity | report.  A run writes
report.json (all module reports), field dumps in the package's binary
format, and a manifest echoing the configuration with a content hash.
Identical configuration and seed reproduce identical artifacts; wall-clock
timestamps go to run.log only.
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

from . import identities as idl
from .errors import ConfigError, MaxrankError
from .grid import ScalarField, build_grid, dump_field, load_field
from .operators import OperatorKind, Problem
from .solver import (ContinuationSchedule, SolverConfig, continuation_s,
                     epsilon_sweep, initial_guess, newton_solve)
from .verifier import boundary_convexity_floor, check_theorems, key_estimate_probe

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IDENTITY = 4

_OPERATORS = {"ma": OperatorKind.MONGE_AMPERE, "donaldson": OperatorKind.DONALDSON}


@dataclass(frozen=True)
class BoundaryGen:
    """Named generator for admissible Dirichlet data.

    flat:c0,c1                 constant slices
    cosine:amp,k[,shift]       amp*cos(2 pi k x_i) summed over axes; the top
                               slice is shifted by a constant (default 1)
    mix:axis:amp:k;...         explicit per-axis cosine terms, top slice +1
    """

    name: str
    params: tuple[float, ...]
    terms: tuple[tuple[int, float, float], ...] = ()

    @staticmethod
    def parse(text: str) -> "BoundaryGen":
        if ":" not in text:
            raise ConfigError(f"boundary spec {text!r} needs NAME:ARGS")
        name, _, args = text.partition(":")
        if name == "flat":
            vals = tuple(float(v) for v in args.split(","))
            if len(vals) != 2:
                raise ConfigError("flat boundary needs two constants: flat:c0,c1")
            return BoundaryGen(name="flat", params=vals)
        if name == "cosine":
            vals = tuple(float(v) for v in args.split(","))
            if len(vals) == 2:
                vals = vals + (1.0,)
            if len(vals) != 3:
                raise ConfigError("cosine boundary needs cosine:amp,k[,shift]")
            return BoundaryGen(name="cosine", params=vals)
        if name == "mix":
            terms = []
            for part in args.split(";"):
                bits = part.split(":")
                if len(bits) != 3:
                    raise ConfigError("mix boundary needs mix:axis:amp:k;...")
                terms.append((int(bits[0]), float(bits[1]), float(bits[2])))
            return BoundaryGen(name="mix", params=(), terms=tuple(terms))
        raise ConfigError(f"unknown boundary generator {name!r}")

    def guarantee(self, n: int) -> float:
        """Analytic lower bound for the boundary convexity floor."""
        if self.name == "flat":
            return 1.0
        if self.name == "cosine":
            amp, k, _ = self.params
            return 1.0 - n * abs(amp) * (2 * np.pi * k) ** 2
        return 1.0 - sum(abs(a) * (2 * np.pi * k) ** 2 for _, a, k in self.terms)

    def build(self, spec) -> tuple[np.ndarray, np.ndarray]:
        shape = spec.space_shape
        xs = [np.arange(spec.Nx) * spec.hx for _ in range(spec.n)]
        if self.name == "flat":
            c0, c1 = self.params
            return np.full(shape, c0), np.full(shape, c1)
        base = np.zeros(shape)
        if self.name == "cosine":
            amp, k, shift = self.params
            for axis in range(spec.n):
                view = [None] * spec.n
                view[axis] = slice(None)
                base = base + amp * np.cos(2 * np.pi * k * xs[axis])[tuple(view)]
            return base, base + shift
        for axis, amp, k in self.terms:
            if not 0 <= axis < spec.n:
                raise ConfigError(f"mix term axis {axis} out of range for n={spec.n}")
            view = [None] * spec.n
            view[axis] = slice(None)
            base = base + amp * np.cos(2 * np.pi * k * xs[axis])[tuple(view)]
        return base, base + 1.0

    def describe(self) -> dict:
        return {"name": self.name, "params": list(self.params),
                "terms": [list(t) for t in self.terms]}


_DEFAULTS = {
    "operator": "donaldson",
    "n": 2,
    "Nx": 32,
    "Nt": 32,
    "epsilon": [1.0, 0.1, 0.01],
    "boundary": "flat:1,2",
    "tol": None,            # verification tolerance; None -> 5 h^2
    "solver_tol": 1e-10,
    "max_iter": 50,
    "seed": 0,
    "seeds": 100,
    "mode": "exact",
    "check": "all",
    "num_good": None,
    "homotopy_steps": 0,    # 0 -> plain Newton for solve
    "probe_order": None,    # None -> n
    "identity_tol": 1e-9,
    "out": "runs/latest",
    "field": None,
}


def load_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if isinstance(cfg["epsilon"], str):
        cfg["epsilon"] = [float(v) for v in cfg["epsilon"].split(",")]
    elif isinstance(cfg["epsilon"], (int, float)):
        cfg["epsilon"] = [float(cfg["epsilon"])]
    cfg["command"] = args.command
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _problem_from(cfg: dict) -> tuple[Problem, BoundaryGen, float]:
    if cfg["operator"] not in _OPERATORS:
        raise ConfigError(f"operator must be one of {sorted(_OPERATORS)}")
    spec = build_grid(int(cfg["n"]), int(cfg["Nx"]), int(cfg["Nt"]))
    gen = BoundaryGen.parse(cfg["boundary"])
    guarantee = gen.guarantee(spec.n)
    if guarantee <= 0:
        raise ConfigError(f"boundary generator guarantee {guarantee:.4f} is not positive")
    u0, u1 = gen.build(spec)
    floor = boundary_convexity_floor(spec, u0, u1)
    if floor <= 0:
        raise ConfigError(f"measured boundary convexity floor {floor:.4f} is not positive")
    eps0 = float(cfg["epsilon"][0])
    problem = Problem(kind=_OPERATORS[cfg["operator"]], spec=spec, eps=eps0,
                      u0=u0, u1=u1)
    return problem, gen, floor


def _solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(tol=float(cfg["solver_tol"]), max_iter=int(cfg["max_iter"]))


def _write_artifacts(out: Path, cfg: dict, report: dict,
                     fields: dict[str, ScalarField]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg_canon = {k: v for k, v in sorted(cfg.items())}
    manifest = {
        "config": cfg_canon,
        "content_hash": hashlib.sha256(canonical_json(cfg_canon).encode()).hexdigest(),
        "artifact_format": {"field_header": "u32le n,Nx,Nt,reserved", "field_data": "f64le row-major"},
    }
    if fields:
        # sidecar describing every binary dump
        report["fields"] = {
            name: {"file": f"{name}.fld", "n": f.spec.n, "Nx": f.spec.Nx,
                   "Nt": f.spec.Nt}
            for name, f in fields.items()
        }
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    (out / "report.json").write_text(canonical_json(report) + "\n", encoding="utf-8")
    for name, fieldobj in fields.items():
        dump_field(fieldobj, out / f"{name}.fld")
    with open(out / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {cfg['command']} done\n")


def _solve_reports(entries) -> list[dict]:
    return [{"parameter": par, **rep.to_json()} for par, rep in entries]


def cmd_solve(cfg: dict) -> tuple[int, dict, dict]:
    problem, gen, floor = _problem_from(cfg)
    sconf = _solver_config(cfg)
    steps = int(cfg["homotopy_steps"])
    if steps > 0:
        schedule = ContinuationSchedule.homotopy(steps)
        solution, step_reports = continuation_s(problem, schedule, sconf)
        entries = step_reports
        converged = all(r.converged for _, r in step_reports)
    else:
        solution, rep = newton_solve(problem, sconf, initial_guess(problem))
        entries = [(1.0, rep)]
        converged = rep.converged
    report = {
        "command": cfg["command"],
        "operator": cfg["operator"],
        "epsilon": problem.eps,
        "boundary": gen.describe(),
        "boundary_floor": floor,
        "boundary_guarantee": gen.guarantee(problem.spec.n),
        "solves": _solve_reports(entries),
    }
    if not converged:
        report["error"] = {"kind": "no_convergence", "detail": report["solves"][-1]}
        return EXIT_NO_CONVERGENCE, report, {}
    return EXIT_OK, report, {"solution": solution}


def cmd_verify(cfg: dict) -> tuple[int, dict, dict]:
    problem, gen, floor = _problem_from(cfg)
    if cfg["field"]:
        solution = load_field(cfg["field"])
        if solution.spec != problem.spec:
            raise ConfigError("loaded field grid does not match the configuration")
        solves = []
        converged = True
    else:
        code, report, fields = cmd_solve(cfg)
        if code != EXIT_OK:
            return code, report, fields
        solution = fields["solution"]
        solves = report["solves"]
        converged = True
    tol = cfg["tol"]
    rank = check_theorems(solution, problem, None if tol is None else float(tol))
    order = cfg["probe_order"] or problem.spec.n
    probe = key_estimate_probe(solution, problem, int(order))
    report = {
        "command": cfg["command"],
        "operator": cfg["operator"],
        "epsilon": problem.eps,
        "boundary": gen.describe(),
        "boundary_floor": floor,
        "solves": solves,
        "rank_report": rank.to_json(),
        "probe": probe.to_json(),
    }
    code = EXIT_OK if converged else EXIT_NO_CONVERGENCE
    return code, report, {"solution": solution}


def cmd_sweep(cfg: dict) -> tuple[int, dict, dict]:
    problem, gen, floor = _problem_from(cfg)
    sconf = _solver_config(cfg)
    schedule = ContinuationSchedule.levels(cfg["epsilon"])
    tol = None if cfg["tol"] is None else float(cfg["tol"])
    rows = epsilon_sweep(problem, schedule, sconf, verify_tol=tol)
    entries = []
    fields = {}
    all_ok = True
    for i, (eps, sol, rep, rank) in enumerate(rows):
        entry = {"epsilon": eps, "solve": rep.to_json() if rep else None,
                 "rank_report": rank.to_json() if rank else None}
        entries.append(entry)
        if sol is None:
            all_ok = False
        else:
            fields[f"solution_{i:03d}"] = sol
    report = {
        "command": cfg["command"],
        "operator": cfg["operator"],
        "boundary": gen.describe(),
        "boundary_floor": floor,
        "levels": entries,
    }
    if not all_ok:
        report["error"] = {"kind": "no_convergence",
                           "detail": "at least one level failed"}
        return EXIT_NO_CONVERGENCE, report, fields
    return EXIT_OK, report, fields


# ---------------------------------------------------------------------------
# identity suite

_CHECKS = ("cross_term", "contraction_split", "reduction", "full_degeneracy",
           "form_agreement", "form_nonneg", "floor_gap", "ratio_correction")


def _identity_rows(check: str, n: int, num_good: int, mode: str, delta: float,
                   seeds: range):
    """Yield (seed, check, n, num_good, mode, delta, discrepancy, flag_ok)."""
    for seed in seeds:
        if check in ("cross_term", "contraction_split", "reduction"):
            s = idl.sample_jet(n, num_good, OperatorKind.MONGE_AMPERE, mode,
                               seed=seed, delta=delta)
            if check == "cross_term":
                disc, ok = idl.check_cross_term(s), True
            elif check == "contraction_split":
                disc, ok = idl.check_contraction_split(s), True
            else:
                disc, ok = idl.check_reduction(s)
        elif check == "full_degeneracy":
            s = idl.sample_jet(n, 0, OperatorKind.MONGE_AMPERE, mode,
                               seed=seed, delta=delta)
            disc, ok = idl.check_full_degeneracy(s), True
        elif check == "form_agreement":
            s = idl.sample_jet(n, num_good, OperatorKind.DONALDSON, mode,
                               seed=seed, delta=delta)
            disc, ok = idl.degeneracy_forms(s).max_pairwise, True
        elif check == "form_nonneg":
            s = idl.sample_jet(n, num_good, OperatorKind.DONALDSON, mode,
                               seed=seed, delta=delta)
            val, ok = idl.check_form_nonneg(s)
            disc = max(0.0, -val)
        elif check == "floor_gap":
            s = idl.sample_jet(n, num_good, OperatorKind.DONALDSON, mode,
                               seed=seed, delta=delta, eig_floor="uniform")
            val, ok = idl.check_floor_gap_nonneg(s)
            disc = max(0.0, -val)
        elif check == "ratio_correction":
            use_delta = delta if mode == "scaled" else 1e-2
            s = idl.sample_jet(n, num_good, OperatorKind.DONALDSON, "scaled",
                               seed=seed, delta=use_delta)
            repc = idl.ratio_correction_report(s)
            ok = repc.correction >= -1e-12 and all(
                np.isfinite(v) for v in repc.brackets.values())
            disc = max(0.0, -repc.correction)
        else:
            raise ConfigError(f"unknown check {check!r}")
        yield (seed, check, n, num_good, mode, delta, disc, ok)


def _default_num_good(check: str, n: int) -> list[int]:
    if check in ("cross_term", "contraction_split", "reduction"):
        return [1]
    if check == "full_degeneracy":
        return [0]
    if check == "form_agreement":
        return [min(2, n - 1)]
    if check == "form_nonneg":
        return [g for g in (0, 1, 2) if g <= n - 1]
    return [n - 1]


def cmd_identity(cfg: dict) -> tuple[int, dict, dict]:
    n = int(cfg["n"])
    mode = cfg["mode"]
    delta = 0.0
    if mode.startswith("scaled"):
        mode, _, d = mode.partition(":")
        delta = float(d) if d else 1e-2
    checks = _CHECKS if cfg["check"] == "all" else tuple(cfg["check"].split(","))
    for c in checks:
        if c not in _CHECKS:
            raise ConfigError(f"unknown check {c!r}; choose from {_CHECKS}")
    seeds = range(int(cfg["seed"]), int(cfg["seed"]) + int(cfg["seeds"]))
    rows = []
    for check in checks:
        goods = ([int(cfg["num_good"])] if cfg["num_good"] is not None
                 else _default_num_good(check, n))
        for num_good in goods:
            if not 0 <= num_good <= n:
                raise ConfigError(f"num_good {num_good} out of range for n={n}")
            rows.extend(_identity_rows(check, n, num_good, mode, delta, seeds))
    tol = float(cfg["identity_tol"])
    summary = {}
    for check in checks:
        sub = [r for r in rows if r[1] == check]
        discs = np.array([r[6] for r in sub])
        summary[check] = {
            "count": len(sub),
            "max_discrepancy": float(discs.max()) if len(sub) else 0.0,
            "mean_discrepancy": float(discs.mean()) if len(sub) else 0.0,
            "flag_violations": int(sum(1 for r in sub if not r[7])),
        }
    violated = any(v["max_discrepancy"] > tol or v["flag_violations"] > 0
                   for v in summary.values())
    report = {
        "command": "identity",
        "mode": cfg["mode"],
        "n": n,
        "seeds": [int(cfg["seed"]), int(cfg["seed"]) + int(cfg["seeds"])],
        "tolerance": tol,
        "checks": summary,
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "identity.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seed,check,n,num_good,mode,delta,discrepancy,flag_ok\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]},{r[5]!r},{r[6]!r},{int(r[7])}\n")
    if violated:
        report["error"] = {"kind": "identity_violation", "detail": summary}
        return EXIT_IDENTITY, report, {}
    return EXIT_OK, report, {}


def cmd_report(cfg: dict) -> tuple[int, dict, dict]:
    path = Path(cfg["out"]) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    lines = [f"command: {data.get('command')}"]
    for key in ("operator", "epsilon", "boundary_floor"):
        if key in data:
            lines.append(f"{key}: {data[key]}")
    for entry in data.get("solves", []):
        lines.append(f"  solve parameter={entry.get('parameter')} "
                     f"converged={entry.get('converged')} iters={entry.get('iterations')}")
    if "rank_report" in data:
        rr = data["rank_report"]
        lines.append(f"  min_eig={rr['min_eig']:.6g} floor={rr['boundary_floor']:.6g} "
                     f"margin={rr['margin']:.3g} hist={rr['histogram']}")
    if "levels" in data:
        for entry in data["levels"]:
            rr = entry.get("rank_report")
            state = "ok" if rr else "failed"
            lines.append(f"  level eps={entry['epsilon']}: {state}"
                         + (f" min_eig={rr['min_eig']:.6g}" if rr else ""))
    if "checks" in data:
        for name, row in data["checks"].items():
            lines.append(f"  {name}: max={row['max_discrepancy']:.3e} "
                         f"violations={row['flag_violations']}")
    print("\n".join(lines))
    return EXIT_OK, data, {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxrank",
        description="solve, verify and stress the rank behaviour of two "
                    "degenerate elliptic operators on a periodic slab")
    parser.add_argument("command", choices=["solve", "verify", "sweep", "identity", "report"])
    parser.add_argument("--config", help="JSON config file; flags override")
    parser.add_argument("--operator", choices=sorted(_OPERATORS))
    parser.add_argument("--n", type=int)
    parser.add_argument("--Nx", type=int)
    parser.add_argument("--Nt", type=int)
    parser.add_argument("--epsilon", help="level, or comma list for sweep")
    parser.add_argument("--boundary", help="flat:c0,c1 | cosine:amp,k[,shift] | mix:axis:amp:k;...")
    parser.add_argument("--tol", type=float, help="verification tolerance (default 5 h^2)")
    parser.add_argument("--solver-tol", dest="solver_tol", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--homotopy-steps", dest="homotopy_steps", type=int)
    parser.add_argument("--probe-order", dest="probe_order", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", type=int, help="number of identity seeds")
    parser.add_argument("--mode", help="exact | scaled:DELTA")
    parser.add_argument("--check", help="identity check name or 'all'")
    parser.add_argument("--num-good", dest="num_good", type=int)
    parser.add_argument("--identity-tol", dest="identity_tol", type=float)
    parser.add_argument("--field", help="verify an existing .fld dump")
    parser.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handlers = {"solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep,
                "identity": cmd_identity, "report": cmd_report}
    try:
        code, report, fields = handlers[args.command](cfg)
    except ConfigError as exc:
        report = {"command": args.command,
                  "error": {"kind": "config", "detail": str(exc)}}
        _write_artifacts(Path(cfg["out"]), cfg, report, {})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MaxrankError as exc:
        report = {"command": args.command,
                  "error": {"kind": type(exc).__name__, "detail": str(exc)}}
        _write_artifacts(Path(cfg["out"]), cfg, report, {})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    if args.command != "report":
        _write_artifacts(Path(cfg["out"]), cfg, report, fields)
    if code == EXIT_OK:
        print(f"{args.command}: ok (artifacts in {cfg['out']})")
    else:
        print(f"{args.command}: exit {code}; see {cfg['out']}/report.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
