"""Structure of the parameterization in adapted coordinates.

In the coordinates ``qbar = (phi(q), g(q))`` the first ``n - 1`` rows of the
parameterization are the flat output itself, so only ``Fqbar^n`` and
``Fvbar^n`` carry information. The Jacobian of ``(Fqbar, Fvbar)`` with
respect to ``y[0..3]`` decides which multi-indices ``kappa`` can serve as
integrator-chain lengths of a quasi-static linearizing feedback.

Column layout of every Jacobian in this module is order-major: column
``k * m + j`` holds the derivative with respect to ``y[j, k]``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .flatmodel import (
    ZERO_PARTIAL,
    FlatSystem,
    ParameterizingMap,
    find_equilibrium,
    parameterize,
    sample_jets,
)
from .multijet import (
    JetPoint,
    MultiIndex,
    compose,
    coordinate,
    jacobian,
    jet_series,
    prolong,
)

__all__ = [
    "StructureError",
    "TransformedMap",
    "KappaReport",
    "StructureReport",
    "RCOND_REGULAR",
    "transform_map",
    "full_jacobian",
    "kappa_jacobian",
    "kappa_columns",
    "condition",
    "enumerate_kappa",
    "canonical_kappas",
    "verify_structure",
    "default_probes",
    "analyze",
]

RCOND_REGULAR = 1e-10
MAX_ORDER = 3


class StructureError(ValueError):
    """A structural property failed; ``clause`` names the violated statement."""

    def __init__(self, clause: str, message: str, report: "StructureReport | None" = None):
        super().__init__(f"{clause}: {message}")
        self.clause = clause
        self.report = report


@dataclass(frozen=True)
class TransformedMap:
    """``(Fqbar, Fvbar)``: parameterization of the adapted coordinates."""

    Fqbar: tuple
    Fvbar: tuple
    R: MultiIndex

    @property
    def n(self) -> int:
        return len(self.Fqbar)

    @property
    def m(self) -> int:
        return self.n - 1


@dataclass(frozen=True)
class KappaReport:
    kappa: tuple
    weight_ok: bool
    generic_regular: bool
    equilibrium_regular: bool
    condition_number: float


@dataclass
class StructureReport:
    R: tuple
    order_bounds_ok: bool
    second_derivative_channels: list
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R"] = list(self.R)
        for c in d["candidates"]:
            c["kappa"] = list(c["kappa"])
            if not np.isfinite(c["condition_number"]):
                c["condition_number"] = None
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def transform_map(sys: FlatSystem, pmap: ParameterizingMap) -> TransformedMap:
    """Parameterization of ``qbar = (y, g(q))`` and of its velocities."""
    m = sys.m
    Fqbar = [coordinate(j, 0, m) for j in range(m)]
    Fqbar.append(compose(sys.completion, pmap.Fq, name="Fqbar_n"))
    Fvbar = tuple(prolong(F) for F in Fqbar)
    return TransformedMap(tuple(Fqbar), Fvbar, pmap.R)


def _columns(m: int) -> list[tuple[int, int]]:
    return [(j, k) for k in range(MAX_ORDER + 1) for j in range(m)]


def full_jacobian(tmap: TransformedMap, p: JetPoint) -> np.ndarray:
    """``2n x 4(n-1)`` Jacobian of ``(Fqbar, Fvbar)`` w.r.t. ``y[0..3]``."""
    m = tmap.m
    for F in tmap.Fvbar:
        p._require(F.total_arity)
    p = p.padded((MAX_ORDER,) * m)
    values, jac = jet_series(tmap.Fqbar, p, 1, _columns(m))
    return np.vstack([jac[0], jac[1]])


def kappa_columns(kappa: Sequence[int]) -> list[int]:
    """Indices of the columns ``y[j, k]`` with ``k < kappa[j]`` (order-major)."""
    m = len(kappa)
    return [k * m + j for k in range(MAX_ORDER + 1) for j in range(m) if k < kappa[j]]


def _check_kappa(tmap: TransformedMap, kappa) -> MultiIndex:
    kappa = MultiIndex(kappa)
    if len(kappa) != tmap.m:
        raise ValueError(f"kappa must have {tmap.m} entries")
    if kappa.weight != 2 * tmap.n:
        raise ValueError(f"#kappa = {kappa.weight}, expected 2n = {2 * tmap.n}")
    if not kappa.leq(tmap.R):
        raise ValueError(f"kappa {tuple(kappa)} exceeds R {tuple(tmap.R)}")
    return kappa


def kappa_jacobian(tmap: TransformedMap, kappa: Sequence[int], p: JetPoint) -> np.ndarray:
    """Square ``2n x 2n`` submatrix selecting ``y[j, 0..kappa[j]-1]``."""
    kappa = _check_kappa(tmap, kappa)
    return full_jacobian(tmap, p)[:, kappa_columns(kappa)]


def condition(J: np.ndarray) -> tuple[float, bool]:
    """2-norm condition number and the regularity verdict."""
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0.0:
        return float("inf"), False
    rcond = s[-1] / s[0]
    cond = float("inf") if rcond == 0.0 else 1.0 / rcond
    return cond, bool(rcond > RCOND_REGULAR)


def _split(probes):
    eq = [p for p in probes if p.is_equilibrium()]
    gen = [p for p in probes if not p.is_equilibrium()]
    return eq, gen


def canonical_kappas(R: Sequence[int]) -> list[MultiIndex]:
    """``kappa`` with 4 for one channel where ``r = 4`` and 2 elsewhere."""
    m = len(R)
    return [MultiIndex([4 if i == j else 2 for i in range(m)]) for j in range(m) if R[j] == 4]


def enumerate_kappa(tmap: TransformedMap, R: Sequence[int], mode: str,
                    probes: Sequence[JetPoint]) -> list[KappaReport]:
    """Classify candidate multi-indices at the given probes.

    ``mode='canonical'`` lists the multi-indices with one 4 (where r = 4) and
    2 elsewhere; ``mode='exhaustive'`` lists every ``kappa <= R`` with
    ``#kappa = 2n``. A candidate is generic-regular if its Jacobian is
    regular at one or more non-equilibrium probes, and equilibrium-regular if
    it is regular at every equilibrium probe (False when there are none).
    ``condition_number`` is the worst value over equilibrium probes, or the
    best over generic probes when no equilibrium probe is given.
    """
    R = MultiIndex(R)
    n = tmap.n
    if mode == "canonical":
        kappas = canonical_kappas(R)
        if not kappas:
            raise StructureError("derivative orders", f"no channel with r = 4 in R = {tuple(R)}")
    elif mode == "exhaustive":
        kappas = [MultiIndex(k) for k in itertools.product(*(range(r + 1) for r in R))
                  if sum(k) == 2 * n]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    eq, gen = _split(probes)
    full_eq = [full_jacobian(tmap, p) for p in eq]
    full_gen = [full_jacobian(tmap, p) for p in gen]
    reports = []
    for kappa in sorted(kappas):
        cols = kappa_columns(kappa)
        eq_res = [condition(J[:, cols]) for J in full_eq]
        gen_res = [condition(J[:, cols]) for J in full_gen]
        if eq_res:
            cond = max(c for c, _ in eq_res)
        elif gen_res:
            cond = min(c for c, _ in gen_res)
        else:
            cond = float("nan")
        reports.append(KappaReport(
            kappa=tuple(kappa),
            weight_ok=kappa.weight == 2 * n,
            generic_regular=any(ok for _, ok in gen_res),
            equilibrium_regular=bool(eq_res) and all(ok for _, ok in eq_res),
            condition_number=float(cond),
        ))
    return reports


def default_probes(sys: FlatSystem, pmap: ParameterizingMap, count: int = 16,
                   seed: int = 0, equilibria: Sequence[Sequence[float]] | None = None,
                   box: Sequence[float] | None = None) -> list[JetPoint]:
    """Equilibrium jets at ``equilibria`` (default: nominal) plus random jets."""
    if box is not None:
        from dataclasses import replace
        sys = replace(sys, probe_box=tuple(box))
    equilibria = [sys.nominal_output] if equilibria is None else equilibria
    shape = pmap.jet_shape
    probes = [JetPoint.constant(y, shape) for y in equilibria]
    probes += sample_jets(sys, count, shape, np.random.default_rng(seed))
    return probes


def verify_structure(sys: FlatSystem, pmap: ParameterizingMap, tmap: TransformedMap,
                     probes: Sequence[JetPoint], zero_tol: float = ZERO_PARTIAL) -> StructureReport:
    """Check the structural properties of the parameterization.

    Raises :class:`StructureError` naming the failed clause; the partial
    report is attached to the exception.
    """
    R = pmap.R
    m = sys.m
    bounds_ok = all(2 <= r <= 4 for r in R)
    report = StructureReport(tuple(R), bounds_ok, [])
    if not bounds_ok:
        raise StructureError("order bounds", f"R = {tuple(R)} violates 2 <= R <= 4", report)
    eq, gen = _split(probes)
    generic = gen or list(probes)

    # dependence of Fqbar^n on y[2]
    last = tmap.Fqbar[-1]
    peak2 = np.zeros(m)
    for p in generic:
        _, jac = jacobian([last], p, [(j, 2) for j in range(m)])
        peak2 = np.maximum(peak2, np.abs(jac[0]))
    channels = [j for j in range(m) if peak2[j] >= zero_tol]
    report.second_derivative_channels = channels
    if not channels:
        raise StructureError("second derivatives", "Fq does not depend on any second derivative", report)

    # third derivatives in Fv and fourth derivatives in Fu for those channels
    peak3 = np.zeros(len(channels))
    peak4 = np.zeros(len(channels))
    for p in generic:
        p = p.padded(pmap.jet_shape)
        _, jv = jacobian(pmap.Fv, p, [(j, 3) for j in channels])
        _, ju = jacobian(pmap.Fu, p, [(j, 4) for j in channels])
        peak3 = np.maximum(peak3, np.abs(jv).max(axis=0))
        peak4 = np.maximum(peak4, np.abs(ju).max(axis=0))
    for j, d3, d4 in zip(channels, peak3, peak4):
        if d3 < zero_tol:
            raise StructureError("higher derivatives", f"Fv independent of y[{j}, 3]", report)
        if d4 < zero_tol:
            raise StructureError("higher derivatives", f"Fu independent of y[{j}, 4]", report)

    # d Fvbar^n / d y[2] vanishes at rest
    for p in eq:
        _, jac = jacobian([tmap.Fvbar[-1]], p.padded((MAX_ORDER,) * m), [(j, 2) for j in range(m)])
        worst = float(np.abs(jac).max())
        if worst >= zero_tol:
            raise StructureError("equilibrium condition",
                                 f"|dFvbar_n/dy[2]| = {worst:.3e} at rest jet {p}", report)

    report.candidates = enumerate_kappa(tmap, R, "canonical", probes)
    return report


def analyze(sys: FlatSystem, probes: Sequence[JetPoint] | None = None, seed: int = 0,
            samples: int = 200):
    """Parameterize ``sys`` and verify its structure.

    Returns ``(pmap, tmap, report)``.
    """
    pmap = parameterize(sys, samples=samples, seed=seed)
    tmap = transform_map(sys, pmap)
    if probes is None:
        find_equilibrium(sys, pmap)
        probes = default_probes(sys, pmap, seed=seed)
    report = verify_structure(sys, pmap, tmap, probes)
    return pmap, tmap, report
