"""Run configuration: a nested YAML document with a fixed schema.

Every key has a default; unknown keys, wrong types and malformed values
raise :class:`ConfigError`. Overrides use dotted paths, for example
``simulate.dt=5e-4`` or ``model.params.eps=0.2``; the value is parsed as
YAML so numbers, lists and ``null`` work as expected.
"""

from __future__ import annotations

import copy
import inspect
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import yaml

from .feedback import SolverConfig
from .models import MODELS

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "parse_override", "schema_text"]


class ConfigError(ValueError):
    """The configuration is unreadable or violates the schema."""


# schema: default value and a short description per key
_SCHEMA: dict[str, Any] = {
    "model": {
        "name": ("vtol", "registered model name (see list-models)"),
        "params": ({}, "model parameter overrides, e.g. {eps: 0.1}"),
    },
    "probes": {
        "equilibria": (None, "list of rest values y_s; null means the model's nominal value"),
        "box": (None, "half widths per derivative order for random jets; null keeps the model box"),
        "count": (16, "number of random (generic) probe jets"),
        "seed": (0, "seed for probe and sample generation"),
        "samples": (200, "random jets used to determine the minimal multi-index R"),
        "mode": ("canonical", "candidate set: canonical or exhaustive"),
    },
    "kappa": ("auto", "auto (first equilibrium-regular candidate) or a list such as [4, 2]"),
    "simulate": {
        "start": (None, "rest value at t = 0; null means the nominal value"),
        "end": (None, "rest value at t = T; null means start"),
        "x0": (None, "explicit initial state {q: [...], v: [...]}; null starts on the reference"),
        "T": (10.0, "transition time and run length in seconds"),
        "dt": (1e-3, "RK4 step in seconds"),
        "chain_tol": (1e-5, "bound on |phi(q) - chain oracle| per channel"),
        "derivative_tol": (1e-3, "bound on |finite-difference y[kappa] - w| per channel"),
        "fd_step": (0.05, "finite-difference spacing in seconds for the derivative check"),
        "oracle_substeps": (10, "chain oracle substeps per dt"),
        "order_check": (False, "also run at dt / 2 and report deviation ratios"),
        "gains": (None, "optional tracking gains per channel, kappa_j values each"),
    },
    "solver": {
        "tol": (1e-10, "Newton tolerance on the residual infinity norm"),
        "max_iter": (50, "Newton iteration limit"),
        "branch_jump": (1.0, "largest allowed change of psi between calls; null disables"),
        "polish_steps": (0, "extra Newton steps after convergence"),
        "reuse_jacobian": (True, "reuse the previous Jacobian with secant updates"),
    },
    "sweep": {
        "key": ("model.params.eps", "dotted key varied by the sweep subcommand"),
        "values": ([], "values taken by the swept key"),
        "jobs": (1, "worker processes for independent runs"),
    },
    "output": {
        "dir": ("out", "output directory"),
        "name": ("run", "file stem for traces and reports"),
    },
}


def _defaults(schema):
    return {k: _defaults(v) if isinstance(v, dict) else copy.deepcopy(v[0]) for k, v in schema.items()}


DEFAULTS = _defaults(_SCHEMA)


def schema_text() -> str:
    """Human-readable listing of every key, its default and meaning."""
    lines = []

    def walk(schema, prefix):
        for k, v in schema.items():
            if isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            else:
                lines.append(f"{prefix}{k} = {v[0]!r}  # {v[1]}")

    walk(_SCHEMA, "")
    return "\n".join(lines)


def _merge(base: dict, update: dict, schema: dict, path: str = "") -> None:
    if not isinstance(update, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in schema:
            raise ConfigError(f"unknown key {where!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            _merge(base[key], val, sub, where + ".")
        else:
            base[key] = val


def parse_override(text: str) -> tuple[str, Any]:
    """Split ``key=value`` and parse the value as YAML."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        val = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return key.strip(), val


def _nest(key: str, val) -> dict:
    out: dict = {}
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = val
    return out


def _set_dotted(doc: dict, key: str, val) -> None:
    # model params are free-form, so they bypass the schema walk
    if key.startswith("model.params."):
        name = key[len("model.params."):]
        if not name or "." in name:
            raise ConfigError(f"bad parameter key {key!r}")
        doc["model"]["params"][name] = val
        return
    _merge(doc, _nest(key, val), _SCHEMA)


def _num(x, where, positive=False, integer=False):
    if isinstance(x, str):
        # YAML 1.1 reads exponents without a dot, such as 1e-5, as strings
        try:
            x = float(x)
        except ValueError:
            raise ConfigError(f"{where} must be a number, got {x!r}") from None
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{where} must be a number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(f"{where} must be an integer, got {x!r}")
    if positive and not x > 0:
        raise ConfigError(f"{where} must be positive, got {x!r}")
    return int(x) if integer else float(x)


def _vec(x, where, length=None):
    if not isinstance(x, (list, tuple)):
        raise ConfigError(f"{where} must be a list, got {x!r}")
    out = tuple(_num(a, f"{where}[{i}]") for i, a in enumerate(x))
    if length is not None and len(out) != length:
        raise ConfigError(f"{where} must have {length} entries")
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``raw`` is the merged document."""

    raw: dict

    # typed views ---------------------------------------------------------
    @property
    def model(self) -> str:
        return self.raw["model"]["name"]

    @property
    def params(self) -> dict:
        return dict(self.raw["model"]["params"])

    @property
    def probes(self) -> dict:
        return self.raw["probes"]

    @property
    def kappa(self):
        return self.raw["kappa"]

    @property
    def sim(self) -> dict:
        return self.raw["simulate"]

    @property
    def sweep(self) -> dict:
        return self.raw["sweep"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    @property
    def name(self) -> str:
        return self.raw["output"]["name"]

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.raw["solver"])

    def with_override(self, key: str, val) -> "RunConfig":
        doc = copy.deepcopy(self.raw)
        _set_dotted(doc, key, val)
        return RunConfig.validated(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    @classmethod
    def validated(cls, doc: dict) -> "RunConfig":
        doc = copy.deepcopy(doc)
        m = doc["model"]
        if m["name"] not in MODELS:
            raise ConfigError(f"unknown model {m['name']!r}; known: {', '.join(sorted(MODELS))}")
        if not isinstance(m["params"], dict):
            raise ConfigError("model.params must be a mapping")
        allowed = inspect.signature(MODELS[m["name"]]).parameters
        for k, v in m["params"].items():
            if k not in allowed:
                raise ConfigError(f"model {m['name']!r} has no parameter {k!r}; "
                                  f"known: {', '.join(allowed)}")
            m["params"][k] = _num(v, f"model.params.{k}")

        p = doc["probes"]
        if p["equilibria"] is not None:
            if not isinstance(p["equilibria"], list):
                raise ConfigError("probes.equilibria must be a list of rest values")
            p["equilibria"] = [list(_vec(e, f"probes.equilibria[{i}]")) for i, e in enumerate(p["equilibria"])]
        if p["box"] is not None:
            p["box"] = list(_vec(p["box"], "probes.box"))
            if any(b < 0 for b in p["box"]):
                raise ConfigError("probes.box entries must be non-negative")
        p["count"] = _num(p["count"], "probes.count", integer=True)
        if p["count"] < 0:
            raise ConfigError("probes.count must be non-negative")
        p["seed"] = _num(p["seed"], "probes.seed", integer=True)
        p["samples"] = _num(p["samples"], "probes.samples", positive=True, integer=True)
        if p["mode"] not in ("canonical", "exhaustive"):
            raise ConfigError("probes.mode must be 'canonical' or 'exhaustive'")

        k = doc["kappa"]
        if isinstance(k, str):
            if k != "auto":
                try:
                    k = [int(a) for a in k.split(",")]
                except ValueError:
                    raise ConfigError(f"kappa must be 'auto' or a list of integers, got {k!r}") from None
        if k != "auto":
            if not isinstance(k, (list, tuple)) or not k:
                raise ConfigError(f"kappa must be 'auto' or a list of integers, got {k!r}")
            doc["kappa"] = [_num(a, "kappa", integer=True) for a in k]

        s = doc["simulate"]
        for key in ("start", "end"):
            if s[key] is not None:
                s[key] = list(_vec(s[key], f"simulate.{key}"))
        if s["x0"] is not None:
            x0 = s["x0"]
            if not isinstance(x0, dict) or set(x0) - {"q", "v"} or "q" not in x0:
                raise ConfigError("simulate.x0 must be a mapping with keys q and optionally v")
            q = list(_vec(x0["q"], "simulate.x0.q"))
            v = list(_vec(x0.get("v", [0.0] * len(q)), "simulate.x0.v", len(q)))
            s["x0"] = {"q": q, "v": v}
        for key in ("T", "dt", "chain_tol", "derivative_tol", "fd_step"):
            s[key] = _num(s[key], f"simulate.{key}", positive=True)
        s["oracle_substeps"] = _num(s["oracle_substeps"], "simulate.oracle_substeps",
                                    positive=True, integer=True)
        if not isinstance(s["order_check"], bool):
            raise ConfigError("simulate.order_check must be true or false")
        if s["gains"] is not None:
            if not isinstance(s["gains"], list):
                raise ConfigError("simulate.gains must be a list of per-channel lists")
            s["gains"] = [list(_vec(g, f"simulate.gains[{i}]")) for i, g in enumerate(s["gains"])]

        v = doc["solver"]
        v["tol"] = _num(v["tol"], "solver.tol", positive=True)
        v["max_iter"] = _num(v["max_iter"], "solver.max_iter", positive=True, integer=True)
        if v["branch_jump"] is not None:
            v["branch_jump"] = _num(v["branch_jump"], "solver.branch_jump", positive=True)
        v["polish_steps"] = _num(v["polish_steps"], "solver.polish_steps", integer=True)
        if not isinstance(v["reuse_jacobian"], bool):
            raise ConfigError("solver.reuse_jacobian must be true or false")

        w = doc["sweep"]
        if not isinstance(w["key"], str):
            raise ConfigError("sweep.key must be a dotted key")
        if not isinstance(w["values"], list):
            raise ConfigError("sweep.values must be a list")
        w["jobs"] = _num(w["jobs"], "sweep.jobs", positive=True, integer=True)

        o = doc["output"]
        for key in ("dir", "name"):
            if not isinstance(o[key], str) or not o[key]:
                raise ConfigError(f"output.{key} must be a non-empty string")
        return cls(doc)


def load_config(path: str | Path | None = None, overrides: Sequence[tuple[str, Any]] = ()) -> RunConfig:
    """Merge defaults, the YAML file at ``path`` and dotted ``overrides``."""
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if data is not None:
            _merge(doc, data, _SCHEMA)
    for key, val in overrides:
        _set_dotted(doc, key, val)
    return RunConfig.validated(doc)
