"""Command-line front end: analyze, simulate, sweep and list-models.

Exit codes: 0 ok, 1 usage, model or config error, 2 structure warning,
3 runtime singularity, 4 certificate failure.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_override
from .feedback import FeedbackError, QuasiStaticFeedback
from .flatmodel import ChartError, FlatSystem, ParameterizationError, find_equilibrium, parameterize
from .models import MODELS, get_model
from .multijet import JetPoint
from .simulate import (
    SimulationError,
    Trace,
    certify_io,
    chain_inputs,
    chain_oracle,
    plan_rest_to_rest,
    simulate_closed_loop,
    stabilized_w,
    w_from_reference,
)
from .structure import (
    StructureError,
    StructureReport,
    _check_kappa,
    default_probes,
    enumerate_kappa,
    transform_map,
    verify_structure,
)

__all__ = [
    "EXIT_OK", "EXIT_USAGE", "EXIT_STRUCTURE", "EXIT_SINGULAR", "EXIT_CERTIFICATE",
    "CliError", "Analysis", "SimulationResult",
    "run_analysis", "choose_kappa", "run_simulation",
    "cmd_analyze", "cmd_simulate", "cmd_sweep", "cmd_list_models", "main",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STRUCTURE = 2
EXIT_SINGULAR = 3
EXIT_CERTIFICATE = 4


class CliError(Exception):
    """Carries an exit code and a message for the user."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Analysis:
    sys: FlatSystem
    pmap: object
    tmap: object
    probes: list
    report: StructureReport
    error: StructureError | None = None

    @property
    def status(self) -> int:
        if self.error is not None:
            return EXIT_STRUCTURE
        if any(c.equilibrium_regular for c in self.report.candidates):
            return EXIT_OK
        return EXIT_STRUCTURE

    def to_dict(self, cfg: RunConfig) -> dict:
        doc = {
            "model": cfg.model,
            "parameters": dict(self.sys.parameters),
            "seed": cfg.probes["seed"],
            "probe_mode": cfg.probes["mode"],
            "equilibrium_probes": sum(p.is_equilibrium() for p in self.probes),
            "generic_probes": sum(not p.is_equilibrium() for p in self.probes),
        }
        doc.update(self.report.to_dict())
        doc["structure_error"] = None if self.error is None else {
            "clause": self.error.clause, "message": str(self.error)}
        doc["equilibrium_regular"] = [list(c.kappa) for c in self.report.candidates
                                      if c.equilibrium_regular]
        doc["generic_regular"] = [list(c.kappa) for c in self.report.candidates
                                  if c.generic_regular]
        doc["exit_code"] = self.status
        return doc


def _build_model(cfg: RunConfig) -> FlatSystem:
    try:
        return get_model(cfg.model, **cfg.params)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"cannot build model {cfg.model!r}: {exc}") from None


def run_analysis(cfg: RunConfig) -> Analysis:
    """Parameterize the configured model and classify the candidate ``kappa``."""
    sys_ = _build_model(cfg)
    pr = cfg.probes
    try:
        pmap = parameterize(sys_, samples=pr["samples"], seed=pr["seed"])
    except (ParameterizationError, ArithmeticError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"cannot parameterize {cfg.model!r}: {exc}") from None
    tmap = transform_map(sys_, pmap)
    equilibria = pr["equilibria"]
    try:
        for y_s in ([sys_.nominal_output] if equilibria is None else equilibria):
            find_equilibrium(sys_, pmap, y_s)
    except (ChartError, ParameterizationError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"bad equilibrium probe: {exc}") from None
    if pr["box"] is not None and len(pr["box"]) < max(pmap.jet_shape) + 1:
        raise CliError(EXIT_USAGE, f"probes.box needs {max(pmap.jet_shape) + 1} entries")
    probes = default_probes(sys_, pmap, count=pr["count"], seed=pr["seed"],
                            equilibria=equilibria, box=pr["box"])
    try:
        report = verify_structure(sys_, pmap, tmap, probes)
        error = None
    except StructureError as exc:
        report = exc.report or StructureReport(tuple(pmap.R), False, [])
        error = exc
    if error is None and pr["mode"] == "exhaustive":
        report.candidates = enumerate_kappa(tmap, pmap.R, "exhaustive", probes)
    return Analysis(sys_, pmap, tmap, probes, report, error)


def choose_kappa(analysis: Analysis, requested) -> tuple:
    """Explicit ``kappa`` after validation, or the first equilibrium-regular one."""
    if analysis.error is not None:
        raise CliError(EXIT_STRUCTURE, f"structure check failed: {analysis.error}")
    if requested != "auto":
        try:
            return tuple(_check_kappa(analysis.tmap, requested))
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"kappa {requested}: {exc}") from None
    for c in sorted(analysis.report.candidates, key=lambda c: tuple(c.kappa)):
        if c.equilibrium_regular:
            return tuple(c.kappa)
    raise CliError(EXIT_STRUCTURE, "no equilibrium-regular kappa; pass --kappa explicitly")


@dataclass
class SimulationResult:
    kappa: tuple
    trace: Trace
    certificate: object
    oracle_y: np.ndarray
    order_check: dict | None = None
    files: list = field(default_factory=list)


def _initial_state(analysis: Analysis, cfg: RunConfig, ref):
    s = cfg.sim
    n = analysis.sys.n
    if s["x0"] is not None:
        q, v = s["x0"]["q"], s["x0"]["v"]
        if len(q) != n:
            raise CliError(EXIT_USAGE, f"simulate.x0.q must have {n} entries")
        return np.array(q, dtype=float), np.array(v, dtype=float)
    d = ref.derivatives(0.0)
    shape = analysis.pmap.jet_shape
    jets = JetPoint([d[j, :shape[j] + 1].tolist() for j in range(len(shape))])
    return analysis.pmap.state(jets)


def _simulate_once(analysis: Analysis, cfg: RunConfig, kappa, dt: float):
    s = cfg.sim
    sys_ = analysis.sys
    fb = QuasiStaticFeedback(sys_, analysis.pmap, analysis.tmap, kappa, cfg.solver())
    m = sys_.m
    start = tuple(s["start"]) if s["start"] is not None else tuple(sys_.nominal_output)
    end = tuple(s["end"]) if s["end"] is not None else start
    if len(start) != m or len(end) != m:
        raise CliError(EXIT_USAGE, f"simulate.start and simulate.end need {m} entries")
    T = s["T"]
    ref = plan_rest_to_rest(start, end, T)
    if s["gains"] is not None:
        try:
            w_signal = stabilized_w(ref, fb, s["gains"])
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"simulate.gains: {exc}") from None
    else:
        w_signal = w_from_reference(ref, fb)
    q0, v0 = _initial_state(analysis, cfg, ref)
    # chains are seeded with the flat-output jets of the actual initial state
    try:
        psi0 = fb.clone().solve_psi(q0, v0, w_signal(0.0))
    except FeedbackError as exc:
        raise SimulationError(0.0, exc) from exc
    trace = simulate_closed_loop(sys_, fb, w_signal, (q0, v0), T, dt)
    # with tracking gains the oracle still runs the open chains of the
    # reference, so the chain deviation then measures the tracking correction
    _, oracle_y = chain_oracle(kappa, psi0, chain_inputs(ref, kappa), T, dt,
                               substeps=s["oracle_substeps"])
    cert = certify_io(trace, kappa, oracle_y, derivative_tol=s["derivative_tol"],
                      chain_tol=s["chain_tol"], fd_step=s["fd_step"])
    return trace, cert, oracle_y


def run_simulation(analysis: Analysis, cfg: RunConfig, kappa, write: bool = True) -> SimulationResult:
    """Closed-loop run, chain oracle, certificate and optional ``dt / 2`` rerun."""
    s = cfg.sim
    dt = s["dt"]
    if s["order_check"] and cfg.raw["solver"]["polish_steps"] < 1:
        # truncation error must stay above the Newton tolerance to be measured
        cfg = cfg.with_override("solver.polish_steps", 1)
    try:
        trace, cert, oracle_y = _simulate_once(analysis, cfg, kappa, dt)
    except SimulationError as exc:
        if write and exc.trace is not None:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
            exc.trace.write(cfg.out_dir / f"{cfg.name}.partial.csv", None, cfg.to_dict())
        raise
    result = SimulationResult(tuple(kappa), trace, cert, oracle_y)
    if s["order_check"]:
        _, cert2, _ = _simulate_once(analysis, cfg, kappa, dt / 2)
        ratios = [a / b if b > 0 else float("inf")
                  for a, b in zip(cert.chain_deviation, cert2.chain_deviation)]
        result.order_check = {
            "dt": [dt, dt / 2],
            "chain_deviation": [cert.chain_deviation, cert2.chain_deviation],
            "ratio": ratios,
            "polish_steps": cfg.raw["solver"]["polish_steps"],
            "passed": all(r >= 8.0 for r in ratios),
        }
    trace.meta.update({"kappa": list(kappa), "seed": cfg.probes["seed"], "model": cfg.model})
    if result.order_check is not None:
        trace.meta["order_check"] = result.order_check
    if write:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        result.files = [str(p) for p in trace.write(cfg.out_dir / f"{cfg.name}.csv", cert, cfg.to_dict())]
        for stale in (f"{cfg.name}.partial.csv", f"{cfg.name}.partial.json"):
            (cfg.out_dir / stale).unlink(missing_ok=True)
    return result


# commands -----------------------------------------------------------------

def _emit(doc: dict, stream=None) -> None:
    print(json.dumps(doc, indent=2, default=_json_default), file=stream or sys.stdout)


def _json_default(x):
    if isinstance(x, (np.generic,)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=_json_default))


def cmd_analyze(cfg: RunConfig) -> int:
    analysis = run_analysis(cfg)
    doc = analysis.to_dict(cfg)
    _write_json(cfg.out_dir / f"{cfg.name}.analysis.json", doc)
    _emit(doc)
    if analysis.error is not None:
        print(f"structure warning: {analysis.error}", file=sys.stderr)
    elif analysis.status == EXIT_STRUCTURE:
        print("structure warning: no kappa is regular at the equilibrium probes", file=sys.stderr)
    return analysis.status


def _simulate_doc(cfg: RunConfig) -> tuple[int, dict]:
    analysis = run_analysis(cfg)
    kappa = choose_kappa(analysis, cfg.kappa)
    try:
        res = run_simulation(analysis, cfg, kappa)
    except SimulationError as exc:
        return EXIT_SINGULAR, {"model": cfg.model, "kappa": list(kappa), "failure_time": exc.t,
                               "error": str(exc), "exit_code": EXIT_SINGULAR}
    code = EXIT_OK if res.certificate.passed else EXIT_CERTIFICATE
    doc = {
        "model": cfg.model,
        "kappa": list(kappa),
        "seed": cfg.probes["seed"],
        "dt": cfg.sim["dt"],
        "certificate": res.certificate.to_dict(),
        "order_check": res.order_check,
        "final_output": res.trace.y[-1].tolist(),
        "max_iterations": int(res.trace.iterations.max()),
        "files": res.files,
        "exit_code": code,
    }
    return code, doc


def cmd_simulate(cfg: RunConfig) -> int:
    code, doc = _simulate_doc(cfg)
    _emit(doc)
    if code == EXIT_SINGULAR:
        print(f"feedback singularity at t = {doc['failure_time']:.6g}: {doc['error']}", file=sys.stderr)
    elif code == EXIT_CERTIFICATE:
        print("certificate failed", file=sys.stderr)
    return code


def _sweep_one(raw: dict, key: str, value, index: int) -> dict:
    cfg = RunConfig(raw).with_override(key, value)
    cfg = cfg.with_override("output.name", f"{cfg.name}_{index:03d}")
    try:
        code, doc = _simulate_doc(cfg)
    except CliError as exc:
        code, doc = exc.code, {"error": str(exc)}
    return {"index": index, "key": key, "value": value, "exit_code": code, **doc}


def _severity(code: int) -> int:
    return {EXIT_OK: 0, EXIT_CERTIFICATE: 1, EXIT_STRUCTURE: 2, EXIT_SINGULAR: 3, EXIT_USAGE: 4}[code]


def cmd_sweep(cfg: RunConfig) -> int:
    sw = cfg.sweep
    values = sw["values"]
    if not values:
        raise CliError(EXIT_USAGE, "sweep.values is empty")
    for v in values:  # validate every point before running any
        cfg.with_override(sw["key"], v)
    args = [(cfg.raw, sw["key"], v, i) for i, v in enumerate(values)]
    if sw["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=sw["jobs"]) as pool:
            rows = list(pool.map(_sweep_one, *zip(*args)))
    else:
        rows = [_sweep_one(*a) for a in args]
    summary = cfg.out_dir / f"{cfg.name}.sweep.csv"
    summary.parent.mkdir(parents=True, exist_ok=True)
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "key", "value", "exit_code", "kappa", "chain_deviation", "passed"])
        for r in rows:
            cert = r.get("certificate") or {}
            writer.writerow([r["index"], r["key"], r["value"], r["exit_code"], r.get("kappa"),
                             cert.get("chain_deviation"), cert.get("passed")])
    _write_json(cfg.out_dir / f"{cfg.name}.sweep.json", {"runs": rows})
    _emit({"runs": rows, "summary": str(summary)})
    return max((r["exit_code"] for r in rows), key=_severity)


def cmd_list_models(cfg: RunConfig | None = None) -> int:
    for name in sorted(MODELS):
        sig = inspect.signature(MODELS[name])
        params = ", ".join(f"{p.name}={p.default!r}" for p in sig.parameters.values())
        doc = (MODELS[name].__doc__ or "").strip().splitlines()[0]
        print(f"{name}: {doc}\n    parameters: {params}")
    return EXIT_OK


# argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def _kappa_arg(text: str) -> list[int]:
    try:
        return [int(a) for a in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"kappa must look like 4,2, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--model", metavar="NAME", help="model name (overrides model.name)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="dotted override, repeatable, e.g. model.params.eps=0.2")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="probe sampling seed")
    common.add_argument("--dt", type=float, help="integration step")
    common.add_argument("--kappa", type=_kappa_arg, help='chain lengths, e.g. "4,2"')

    parser = _Parser(prog="quasiflat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analyze", parents=[common], help="structure analysis and kappa classification")
    p = sub.add_parser("simulate", parents=[common], help="closed-loop run and certificate")
    p.add_argument("--order-check", action="store_true", help="rerun at dt/2 and report ratios")
    sub.add_parser("sweep", parents=[common], help="simulate over values of one config key")
    sub.add_parser("list-models", help="registered models and their parameters")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = [parse_override(s) for s in args.set]
    flags = {"model.name": args.model, "output.dir": args.out, "probes.seed": args.seed,
             "simulate.dt": args.dt, "kappa": args.kappa}
    if getattr(args, "order_check", False):
        flags["simulate.order_check"] = True
    overrides += [(k, v) for k, v in flags.items() if v is not None]
    return load_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "list-models":
            return cmd_list_models()
        cfg = config_from_args(args)
        return {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except SimulationError as exc:
        print(f"feedback singularity at t = {exc.t:.6g}: {exc.cause}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
