"""Command-line entry point: one subcommand per experiment, CSV/JSON outputs plus a manifest.

Every subcommand has a parameter dataclass.  Flags are generated from its
fields; ``--config file.json`` overrides flags; unknown keys are rejected.
Each run writes its artifacts and ``manifest.json`` (resolved parameters,
package version, sha256 of every artifact) into the output directory, and
``replay MANIFEST`` re-executes a run and compares the artifact payloads.

Exit codes: 0 success, 2 validation error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, landscape, mcmc, oracle
from . import estimators as est
from .model import generate, instance_to_dict, payload_bytes
from .parisi.pde import SolverConfig, TruncationLeak
from .parisi.solve import minimize

OUT_ENV = "SUBMATRIX_OGP_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
VOLATILE_COLUMNS = ("runtime_ms",)


class NonConvergence(RuntimeError):
    pass


def _flag(name: str, **kw):
    """Dataclass field with a custom command-line flag name."""
    return field(metadata={"flag": name}, **kw)


# ---------------------------------------------------------------------------
# parameter schemas


@dataclass
class SolverParams:
    K: int = 32
    gh_nodes: int = 41
    grid_dx: float = 0.25
    L_factor: float = 10.0
    tol: float = 1e-9
    max_iter: int = 500

    def solver(self) -> SolverConfig:
        return SolverConfig(K=self.K, gh_nodes=self.gh_nodes, grid_dx=self.grid_dx,
                            L_factor=self.L_factor, tol=self.tol, max_iter=self.max_iter)


@dataclass
class GenerateParams:
    n: int = 100
    rho: float = 0.2
    lam: float = _flag("lambda", default=1.0)
    seed: int = 0
    shuffle: bool = False


@dataclass
class OracleParams:
    n: int = 12
    rho: float = 0.5
    lam: float = _flag("lambda", default=0.0)
    seed: int = 0
    beta: float = 1.0
    epsilon: float = 0.0            # 0 means 1 / n
    budget: int = oracle.DEFAULT_BUDGET


@dataclass
class ParisiParams(SolverParams):
    rho: float = 0.25
    q: float = 0.0625
    lam: float = _flag("lambda", default=0.0)
    beta: float = 0.0               # 0 means zero temperature
    entropy_offset: bool = False


@dataclass
class LandscapeParams(SolverParams):
    rho: float = 0.2
    lam: float = _flag("lambda", default=0.0)
    q: list = field(default_factory=list)          # empty means the default grid
    epsilons: list = field(default_factory=lambda: list(landscape.EPSILONS))
    noise: bool = True
    workers: int = 1


@dataclass
class OgpScanParams(SolverParams):
    rho: list = field(default_factory=lambda: [0.05])
    c1: float = 3.0
    lam: list = _flag("lambda", default_factory=list)   # explicit lambdas override c1
    epsilons: list = field(default_factory=lambda: list(landscape.EPSILONS))
    noise: bool = True
    workers: int = 1


@dataclass
class McmcParams:
    n: int = 60
    rho: float = 0.1
    lam: float = _flag("lambda", default=0.0)
    seed: int = 0                   # instance seed
    chain_seed: int = 1
    beta: float = 1.0
    steps: int = 100_000
    burn_in: int = 0
    stride: int = 100
    init: str = "uniform"
    interval: list = field(default_factory=list)   # [a, b] or empty
    arm_exit: bool = False
    replicas: int = 1


@dataclass
class EstimateParams:
    n: int = 200
    rho: float = 0.1
    lam: float = _flag("lambda", default=20.0)
    seeds: int = 5
    seed: int = 0
    estimators: list = field(default_factory=lambda: ["spectral", "random"])
    delta: float = est.DEFAULT_DELTA
    cutoff: float = est.DEFAULT_CUTOFF
    shuffle: bool = True


@dataclass
class ThresholdParams:
    rho: list = field(default_factory=lambda: [0.01, 0.04, 0.1])
    lam: float = _flag("lambda", default=0.0)


def params_to_dict(p) -> dict:
    return {_key_of(f): getattr(p, f.name) for f in dataclasses.fields(p)}


def _key_of(f) -> str:
    return f.metadata.get("flag", f.name)


def params_from_dict(cls, d: dict):
    """Build a parameter block, rejecting unknown keys and coercing types."""
    fields = {_key_of(f): f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ValueError(f"unknown parameters: {sorted(unknown)}")
    kw = {}
    for key, value in d.items():
        f = fields[key]
        kw[f.name] = _coerce(f, value)
    return cls(**kw)


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _coerce(f, value):
    default = _default_of(f)
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(f"{_key_of(f)}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        items = list(value)
        if default and isinstance(default[0], str) or f.name == "estimators":
            return [str(v) for v in items]
        return [float(v) for v in items]
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{_key_of(f)}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


# ---------------------------------------------------------------------------
# seeds, hashing and outputs


def task_seed(seed: int, *coords) -> int:
    """seed XOR hash(task coordinates): independent of scheduling order."""
    h = hashlib.sha256(json.dumps([repr(c) for c in coords]).encode()).digest()
    return (int(seed) ^ int.from_bytes(h[:8], "little")) & (2**63 - 1)


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def csv_payload(text: str) -> bytes:
    """CSV contents with volatile timing columns removed."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return b""
    keep = [i for i, h in enumerate(rows[0]) if h not in VOLATILE_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([row[i] for i in keep])
    return buf.getvalue().encode()


def payload_of(path: Path) -> bytes:
    data = path.read_bytes()
    if path.suffix == ".csv":
        return csv_payload(data.decode())
    return data


class Run:
    """Collects artifacts written by one subcommand into an output directory."""

    def __init__(self, out: Path):
        self.out = out
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ValueError(f"output directory {out} is not writable: {exc}") from exc
        self.files: list[str] = []
        self.summary: dict = {}

    def write_text(self, name: str, text: str):
        (self.out / name).write_text(text)
        self.files.append(name)

    def write_bytes(self, name: str, data: bytes):
        (self.out / name).write_bytes(data)
        self.files.append(name)

    def write_json(self, name: str, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def manifest(self, command: str, params) -> dict:
        artifacts = {}
        for name in self.files:
            p = self.out / name
            artifacts[name] = {"sha256": sha256(p.read_bytes()), "payload_sha256": sha256(payload_of(p))}
        return {
            "tool": "submatrix-ogp",
            "version": __version__,
            "subcommand": command,
            "params": params_to_dict(params),
            "artifacts": artifacts,
            "summary": self.summary,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _csv(rows: list[dict]) -> str:
    return landscape.rows_to_csv(rows)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(p: GenerateParams, run: Run):
    inst = generate(p.n, p.rho, p.lam, p.seed, shuffle=p.shuffle)
    run.write_text("instance.json", json.dumps(instance_to_dict(inst), sort_keys=True) + "\n")
    run.summary = {"N": inst.N, "k": inst.k, "rho_N": inst.rho_N,
                   "payload_sha256": sha256(payload_bytes(inst))}


def cmd_oracle(p: OracleParams, run: Run):
    inst = generate(p.n, p.rho, p.lam, p.seed)
    en = oracle.enumerate_classes(inst, p.budget)
    prof = oracle.enumerate_profile(en)
    eps = p.epsilon if p.epsilon > 0 else 1.0 / p.n
    rate = oracle.rate_function(en, p.beta, eps)
    sandwich = oracle.sandwich_gap(en, p.beta)
    rows, ok = [], True
    for a, q, cnt, e in zip(en.feasible, prof.q_grid, prof.counts, prof.E_N):
        gap, bound = sandwich[a]
        passed = gap <= bound + 1e-12
        ok &= passed
        rows.append({"q": float(q), "count": int(cnt), "E_N": float(e),
                     "F_N_beta": oracle.exact_free_energy(en, p.beta, float(q)),
                     "I_m": float(rate.value(float(q))), "sandwich_gap": gap,
                     "sandwich_bound": bound, "sandwich_pass": bool(passed)})
    run.write_text("profile.csv", _csv(rows))
    wells = [w.as_dict() for w in rate.wells()]
    run.write_json("summary.json", {**prof.as_dict(), "beta": p.beta, "epsilon": eps,
                                    "F_N_beta": oracle.exact_free_energy(en, p.beta),
                                    "sandwich_pass": bool(ok), "wells": wells})
    run.summary = {"sandwich_pass": bool(ok), "mle_value": prof.mle_value, "wells": len(wells)}
    if not ok:
        raise NonConvergence("free-energy sandwich violated")


def cmd_parisi(p: ParisiParams, run: Run):
    beta = p.beta if p.beta > 0 else None
    sol = minimize(p.rho, p.q, p.lam, beta=beta, config=p.solver(), entropy_offset=p.entropy_offset)
    L1, L2 = sol.lambda_star
    d = sol.to_dict()
    d["lambda_equal"] = bool(abs(L1 - L2) <= 1e-4 * (1 + abs(L1)))
    run.write_json("solution.json", d)
    run.summary = {"energy": sol.energy, "converged": sol.converged, "lambda_equal": d["lambda_equal"]}
    if not sol.converged:
        raise NonConvergence(f"solver did not converge: {sol.message}")


def cmd_landscape(p: LandscapeParams, run: Run):
    cfg = p.solver()
    q = np.array(p.q) if p.q else None
    curve = landscape.energy_curve(p.rho, p.lam, q, cfg, p.workers)
    tol = 0.0
    if p.noise:
        tol = 3.0 * landscape.solver_noise(p.rho, landscape.noise_probe_points(p.rho, curve.q_grid), cfg)
    v = landscape.scan_epsilon(curve.q_grid, curve.E, p.rho, tol, p.epsilons, curve.dE_formula)
    run.write_text("curve.csv", curve.to_csv())
    agree = curve.derivative_agreement()
    run.write_json("verdict.json", {**v.as_dict(), "rho": p.rho, "lambda": p.lam,
                                    "derivative_agreement": float(agree.mean()),
                                    "converged": bool(curve.converged.all())})
    run.summary = {"ogp": v.holds, "epsilon": v.epsilon, "points": len(curve.q_grid)}
    if not curve.converged.all():
        raise NonConvergence("some curve points did not converge")


def cmd_ogp_scan(p: OgpScanParams, run: Run):
    rule = (lambda rho: list(p.lam)) if p.lam else landscape.lambda_from_c1(p.c1)
    rows = landscape.phase_scan(p.rho, rule, p.epsilons, p.solver(),
                                estimate_noise=p.noise, workers=p.workers)
    run.write_text("scan.csv", _csv([r.as_dict() for r in rows]))
    run.summary = {"rows": len(rows), "ogp": [r.ogp for r in rows]}


def cmd_mcmc(p: McmcParams, run: Run):
    inst = generate(p.n, p.rho, p.lam, p.seed)
    interval = tuple(p.interval) if p.interval else None
    if interval is not None and len(interval) != 2:
        raise ValueError("interval needs two endpoints")
    rows = []
    for r in range(p.replicas):
        cfg = mcmc.ChainConfig(beta=p.beta, steps=p.steps, burn_in=p.burn_in,
                               record_stride=p.stride, init=p.init, interval=interval,
                               arm_exit=p.arm_exit, seed=task_seed(p.chain_seed, "replica", r))
        traj = mcmc.run(inst, cfg)
        series = np.stack([traj.overlaps, traj.energies]).astype("<f8")
        run.write_bytes(f"series_{r:04d}.bin", series.tobytes())
        s = traj.summary()
        rows.append({"replica": r, "seed": cfg.seed, "exit_time": _fmt(s["exit_time"]),
                     "acceptance": s["acceptance"], "mean_overlap": s["mean_overlap"],
                     "final_energy": s["final_energy"], "recorded": len(traj.overlaps)})
    run.write_text("summary.csv", _csv(rows))
    run.summary = {"replicas": p.replicas, "series_layout": "2 x n little-endian float64 (overlap, energy)"}


def cmd_estimate(p: EstimateParams, run: Run):
    rows = []
    for i in range(p.seeds):
        inst_seed = task_seed(p.seed, "instance", i)
        inst = generate(p.n, p.rho, p.lam, inst_seed, shuffle=p.shuffle)
        for name in p.estimators:
            kw = {"cutoff": p.cutoff}
            if name == "spectral":
                kw["delta"] = p.delta
            if name == "exact":
                rep = est.run_estimator(name, inst, **kw)
            else:
                rep = est.run_estimator(name, inst, seed=task_seed(p.seed, name, i), **kw)
            row = rep.row(inst)
            row["seed"] = inst_seed
            rows.append(row)
    run.write_text("estimates.csv", _csv(rows))
    run.summary = {"runs": len(rows)}


def cmd_thresholds(p: ThresholdParams, run: Run):
    rows = []
    for rho in p.rho:
        t = est.verdict_thresholds(rho, p.lam).as_dict()
        t["slepian"] = landscape.slepian_line(rho)
        t["regime_ceiling"] = landscape.regime_ceiling(rho)
        rows.append(t)
    run.write_text("thresholds.csv", _csv(rows))
    run.summary = {"rows": len(rows)}


COMMANDS = {
    "generate": (GenerateParams, cmd_generate),
    "oracle": (OracleParams, cmd_oracle),
    "parisi": (ParisiParams, cmd_parisi),
    "landscape": (LandscapeParams, cmd_landscape),
    "ogp-scan": (OgpScanParams, cmd_ogp_scan),
    "mcmc": (McmcParams, cmd_mcmc),
    "estimate": (EstimateParams, cmd_estimate),
    "thresholds": (ThresholdParams, cmd_thresholds),
}


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="submatrix-ogp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (cls, _) in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file of parameters (overrides flags)")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs/<command>)")
        for f in dataclasses.fields(cls):
            key = _key_of(f)
            sp.add_argument(f"--{key.replace('_', '-')}", dest=f"p_{f.name}", default=None,
                            metavar=key.upper())
    rp = sub.add_parser("replay", help="re-run a manifest and compare artifact payloads")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    return parser


def resolve_params(command: str, flags: dict, config: dict | None):
    cls = COMMANDS[command][0]
    names = {f.name: _key_of(f) for f in dataclasses.fields(cls)}
    d = {names[k]: v for k, v in flags.items() if v is not None}
    if config:
        if "params" in config and "subcommand" in config:
            if config["subcommand"] != command:
                raise ValueError(f"config is for {config['subcommand']!r}, not {command!r}")
            config = config["params"]
        d.update(config)
    params = params_from_dict(cls, d)
    validate(command, params)
    return params


def validate(command: str, p):
    if hasattr(p, "rho"):
        rhos = p.rho if isinstance(p.rho, list) else [p.rho]
        for r in rhos:
            if not 0.0 < r < 1.0:
                raise ValueError(f"rho must lie in (0, 1), got {r}")
    if hasattr(p, "n") and p.n < 2:
        raise ValueError("n must be at least 2")
    if isinstance(p, SolverParams):
        p.solver()                  # the config constructor raises on invalid settings
    if isinstance(p, EstimateParams):
        bad = set(p.estimators) - set(est.ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators: {sorted(bad)}")
    if isinstance(p, McmcParams):
        mcmc.ChainConfig(beta=p.beta, steps=p.steps, burn_in=p.burn_in, record_stride=p.stride,
                         init=p.init, interval=tuple(p.interval) if p.interval else None,
                         arm_exit=p.arm_exit).validate(p.rho)


def execute(command: str, params, out: Path) -> dict:
    run = Run(out)
    _, fn = COMMANDS[command]
    fn(params, run)
    manifest = run.manifest(command, params)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def replay(manifest_path: str, out: str) -> tuple[bool, dict]:
    """Re-run a manifest into ``out``; returns (all payloads equal, per-file result)."""
    old = json.loads(Path(manifest_path).read_text())
    params = resolve_params(old["subcommand"], {}, old["params"])
    new = execute(old["subcommand"], params, Path(out))
    result = {}
    for name, rec in old["artifacts"].items():
        got = new["artifacts"].get(name)
        result[name] = bool(got and got["payload_sha256"] == rec["payload_sha256"])
    same = bool(result) and all(result.values()) and set(new["artifacts"]) == set(old["artifacts"])
    return same, result


def default_out(command: str) -> Path:
    base = os.environ.get(OUT_ENV)
    return Path(base) / command if base else Path("runs") / command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            same, result = replay(args.manifest, args.out)
            print(json.dumps({"identical": same, "artifacts": result}, indent=2))
            return EXIT_OK if same else 1
        flags = {k[2:]: v for k, v in vars(args).items() if k.startswith("p_")}
        config = json.loads(Path(args.config).read_text()) if args.config else None
        params = resolve_params(args.command, flags, config)
        out = Path(args.out) if args.out else default_out(args.command)
        manifest = execute(args.command, params, out)
        print(json.dumps({"out": str(out), "summary": manifest["summary"]}, default=_jsonable))
        return EXIT_OK
    except (NonConvergence, TruncationLeak) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
