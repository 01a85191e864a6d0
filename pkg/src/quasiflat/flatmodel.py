"""Configuration flat Lagrangian control systems and their parameterizing map.

A :class:`FlatSystem` is given in classical state form ``q' = v``,
``M(q) v' = a(q, v) + b(q) u`` with ``n`` degrees of freedom and ``n - 1``
inputs, together with a configuration flat output ``y = phi(q)``, a
completion ``g(q)`` of ``phi`` to a chart of the configuration space, and a
closed-form configuration parameterization ``q = Fq(jet)``.

Everything else is derived: ``Fv`` by prolongation, ``Fu`` by solving the
equations of motion for the inputs in the least-squares sense, and the
minimal multi-index ``R`` by probing partial derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Taylor, new_level, value
from .multijet import (
    JetFunction,
    JetPoint,
    MultiIndex,
    jacobian,
    prolong,
    series_on,
)

__all__ = [
    "ModelError",
    "SingularConfigurationError",
    "ParameterizationError",
    "ChartError",
    "FlatSystem",
    "ParameterizingMap",
    "Equilibrium",
    "derive_Fv",
    "derive_Fu",
    "minimal_R",
    "parameterize",
    "find_equilibrium",
    "sample_jets",
    "inputs_from_motion",
    "solve_small",
]

# numerical stand-in for "partial derivative vanishes identically"
ZERO_PARTIAL = 1e-9
CONSISTENCY_TOL = 1e-8
EQUILIBRIUM_TOL = 1e-10


class ModelError(ValueError):
    """Invalid model definition."""


class SingularConfigurationError(ArithmeticError):
    """The input matrix lost full column rank."""


class ParameterizationError(ArithmeticError):
    """Fq does not reproduce the equations of motion."""


class ChartError(ValueError):
    """A point lies outside the chart of the model."""


@dataclass(frozen=True)
class FlatSystem:
    """Minimally underactuated system with a configuration flat output.

    Parameters
    ----------
    name : str
    n : int
        Degrees of freedom; the input count is ``n - 1``.
    flat_output : callable
        ``q -> [y^1, ..., y^m]``, written with :mod:`quasiflat.autodiff`
        functions so it can be evaluated on AD scalars.
    completion : callable
        ``q -> scalar`` completing ``flat_output`` to a local diffeomorphism.
    Fq : tuple of JetFunction
        Closed-form parameterization of the configuration by flat-output jets.
    drift, input_matrix, mass_matrix : callable
        ``a(q, v)``, ``b(q)`` (n x m) and optionally ``M(q)`` (n x n) of
        ``M(q) v' = a(q, v) + b(q) u``. ``mass_matrix=None`` means identity.
    parameters : mapping
        Named constants, recorded for reports.
    nominal_output : tuple
        Default equilibrium value ``y_s``.
    probe_box : tuple
        Half widths per derivative order of the box used for random jets.
    chart : callable, optional
        ``q -> bool``; False outside the declared chart.
    """

    name: str
    n: int
    flat_output: Callable
    completion: Callable
    Fq: tuple
    drift: Callable
    input_matrix: Callable
    mass_matrix: Callable | None = None
    parameters: Mapping[str, float] = field(default_factory=dict)
    nominal_output: tuple = ()
    probe_box: tuple = (0.5, 0.5, 0.5, 0.5, 0.5, 0.5)
    chart: Callable | None = None
    coordinate_names: tuple = ()

    def __post_init__(self):
        if self.n < 2:
            raise ModelError(f"n = {self.n}: need n >= 2 so that m = n - 1 >= 1 inputs")
        object.__setattr__(self, "Fq", tuple(self.Fq))
        if len(self.Fq) != self.n:
            raise ModelError(f"Fq has {len(self.Fq)} components, expected n = {self.n}")
        if any(F.m != self.m for F in self.Fq):
            raise ModelError("every Fq component must act on m = n - 1 channels")
        if self.nominal_output and len(self.nominal_output) != self.m:
            raise ModelError("nominal_output must have m entries")
        if not self.coordinate_names:
            object.__setattr__(self, "coordinate_names",
                               tuple(f"q{i + 1}" for i in range(self.n)))

    @property
    def m(self) -> int:
        return self.n - 1

    def dynamics(self, q, v, u) -> np.ndarray:
        """Acceleration ``v' = f(q, v, u)``."""
        rhs = np.asarray(self.drift(q, v), dtype=float) + \
            np.asarray(self.input_matrix(q), dtype=float) @ np.asarray(u, dtype=float)
        if self.mass_matrix is None:
            return rhs
        return np.linalg.solve(np.asarray(self.mass_matrix(q), dtype=float), rhs)

    def in_chart(self, q) -> bool:
        q = [value(x) for x in q]
        if not all(math.isfinite(x) for x in q):
            return False
        return True if self.chart is None else bool(self.chart(q))

    def transform(self, q) -> list:
        """Adapted coordinates ``(phi(q), g(q))``."""
        return list(self.flat_output(q)) + [self.completion(q)]

    def adapted_state(self, q, v) -> tuple[np.ndarray, np.ndarray]:
        """``(qbar, vbar)``: adapted coordinates and their velocities."""
        lvl = new_level()
        qt = [Taylor([float(qi), float(vi)], lvl) for qi, vi in zip(q, v)]
        qbar, vbar = [], []
        for x in self.transform(qt):
            if isinstance(x, Taylor) and x.lvl == lvl:
                qbar.append(x.c[0])
                vbar.append(x.c[1])
            else:
                qbar.append(float(x))
                vbar.append(0.0)
        return np.array(qbar, dtype=float), np.array(vbar, dtype=float)

    def transform_jacobian(self, q) -> np.ndarray:
        from .autodiff import Dual
        n = self.n
        qd = [Dual.variable(qi, i, n) for i, qi in enumerate(q)]
        return np.array([x.grad if isinstance(x, Dual) else np.zeros(n)
                         for x in self.transform(qd)])

    @property
    def Fq_arity(self) -> MultiIndex:
        arity = self.Fq[0].total_arity
        for F in self.Fq[1:]:
            arity = arity.maximum(F.total_arity)
        return arity


def solve_small(A, b, rel_pivot: float = 0.0):
    """Gaussian elimination with partial pivoting on (possibly AD) scalars.

    A pivot not exceeding ``rel_pivot`` times the largest entry of ``A``
    raises :class:`SingularConfigurationError`.
    """
    n = len(A)
    scale = 0.0
    for row in A:
        for x in row:
            ax = abs(value(x))
            if ax > scale:
                scale = ax
    limit = rel_pivot * scale
    if n == 2:
        (a, b01), (c, d) = A
        det = a * d - b01 * c
        # |det| / max|A| bounds the smaller pivot of the elimination
        if not (scale > 0.0 and abs(value(det)) > limit * scale):
            raise SingularConfigurationError("singular linear system")
        return [(d * b[0] - b01 * b[1]) / det, (a * b[1] - c * b[0]) / det]
    M = [list(row) + [bi] for row, bi in zip(A, b)]
    for col in range(n):
        piv, best = col, abs(value(M[col][col]))
        for r in range(col + 1, n):
            cand = abs(value(M[r][col]))
            if cand > best:
                piv, best = r, cand
        if not best > limit:
            raise SingularConfigurationError("singular linear system")
        M[col], M[piv] = M[piv], M[col]
        pivot_row = M[col]
        for r in range(col + 1, n):
            factor = M[r][col] / pivot_row[col]
            M[r] = [x - factor * y for x, y in zip(M[r], pivot_row)]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        acc = M[r][n]
        for c in range(r + 1, n):
            acc = acc - M[r][c] * x[c]
        x[r] = acc / M[r][r]
    return x


def _dot(a, b):
    acc = a[0] * b[0]
    for i in range(1, len(a)):
        acc = acc + a[i] * b[i]
    return acc


def inputs_from_motion(sys: FlatSystem, q, v, acc, check: bool = True) -> list:
    """Least-squares inputs realizing the acceleration ``acc`` at ``(q, v)``.

    Solves ``b(q) u = M(q) acc - a(q, v)`` over all ``n`` equations through
    the normal equations. With ``check`` a rank-deficient ``b`` and an
    inconsistent system raise.
    """
    n, m = sys.n, sys.m
    b = sys.input_matrix(q)
    a = sys.drift(q, v)
    if sys.mass_matrix is None:
        rhs = [acc[i] - a[i] for i in range(n)]
    else:
        M = sys.mass_matrix(q)
        rhs = [_dot(M[i], acc) - a[i] for i in range(n)]
    cols = [[b[i][c] for i in range(n)] for c in range(m)]
    normal = [[_dot(cols[r], cols[c]) for c in range(m)] for r in range(m)]
    proj = [_dot(cols[r], rhs) for r in range(m)]
    try:
        u = solve_small(normal, proj, rel_pivot=1e-20 if check else 0.0)
    except SingularConfigurationError:
        raise SingularConfigurationError(
            f"input matrix rank deficient at q = {[value(x) for x in q]}") from None
    if check:
        res = 0.0
        for i in range(n):
            r_i = abs(value(_dot(b[i], u) - rhs[i]))
            if not r_i <= res:
                res = r_i
        if not res <= CONSISTENCY_TOL:
            raise ParameterizationError(
                f"equations of motion not satisfied by Fq (consistency residual {res:.3e})")
    return u


@dataclass(frozen=True)
class ParameterizingMap:
    """``q = Fq``, ``v = Fv``, ``u = Fu`` with the minimal multi-index ``R``."""

    Fq: tuple
    Fv: tuple
    Fu: tuple
    R: MultiIndex

    @property
    def jet_shape(self) -> MultiIndex:
        """Orders needed to evaluate every component including ``Fu``."""
        shape = self.R
        for F in self.Fu:
            shape = shape.maximum(F.total_arity)
        return shape

    def state(self, p: JetPoint) -> tuple[np.ndarray, np.ndarray]:
        vals = p.padded(self.jet_shape).channels()
        out = series_on(self.Fq, vals, 1)
        return (np.array([value(s[0]) for s in out]), np.array([value(s[1]) for s in out]))

    def inputs(self, p: JetPoint) -> np.ndarray:
        return np.array([F(p.padded(self.jet_shape)) for F in self.Fu])


@dataclass(frozen=True)
class Equilibrium:
    y_s: tuple
    q_s: np.ndarray
    u_s: np.ndarray


def derive_Fv(sys: FlatSystem) -> tuple:
    """Velocity parameterization ``Fv = D Fq``."""
    return tuple(prolong(F) for F in sys.Fq)


def derive_Fu(sys: FlatSystem) -> tuple:
    """Input parameterization from the equations of motion along ``Fq``."""
    Fq = sys.Fq
    n = sys.n

    def fu(y):
        s = series_on(Fq, y.values, 2)
        q = [s[i][0] for i in range(n)]
        v = [s[i][1] for i in range(n)]
        acc = [s[i][2] for i in range(n)]
        return inputs_from_motion(sys, q, v, acc)

    return tuple(JetFunction.vector(fu, sys.Fq_arity + 2, sys.m,
                                    [f"Fu{j + 1}" for j in range(sys.m)]))


def sample_jets(sys: FlatSystem, count: int, shape: Sequence[int],
                rng: np.random.Generator, center: Sequence[float] | None = None) -> list[JetPoint]:
    """Random jets uniform in the probe box around ``center`` (default nominal)."""
    center = sys.nominal_output if center is None else center
    center = center or (0.0,) * sys.m
    box = sys.probe_box
    jets = []
    for _ in range(count):
        chans = []
        for j, b in enumerate(shape):
            ch = [center[j] + rng.uniform(-box[0], box[0])]
            ch += [rng.uniform(-box[min(k, len(box) - 1)], box[min(k, len(box) - 1)])
                   for k in range(1, b + 1)]
            chans.append(ch)
        jets.append(JetPoint(chans))
    return jets


def minimal_R(Fq: Sequence[JetFunction], samples: Sequence[JetPoint],
              zero_tol: float = ZERO_PARTIAL) -> MultiIndex:
    """Minimal multi-index from the sampled dependence of ``Fq``.

    ``r^j = 2 + (highest k with dF/dy[j, k] not identically zero)``, where
    "identically zero" means ``max |partial| < zero_tol`` over the samples.
    This is a probabilistic test: a dependence that vanishes on every sample
    goes undetected.
    """
    arity = Fq[0].total_arity
    for F in Fq[1:]:
        arity = arity.maximum(F.total_arity)
    wrt = [(j, k) for j, a in enumerate(arity) for k in range(a + 1)]
    peak = np.zeros(len(wrt))
    for p in samples:
        _, jac = jacobian(Fq, p.padded(arity), wrt)
        peak = np.maximum(peak, np.abs(jac).max(axis=0))
    R = []
    for j in range(len(arity)):
        orders = [k for (jj, k), mag in zip(wrt, peak) if jj == j and mag >= zero_tol]
        if not orders:
            raise ParameterizationError(f"Fq does not depend on flat output channel {j}")
        R.append(2 + max(orders))
    return MultiIndex(R)


def parameterize(sys: FlatSystem, samples: int = 200, seed: int = 0) -> ParameterizingMap:
    """Derive ``Fv``, ``Fu`` and the minimal ``R`` for ``sys``."""
    rng = np.random.default_rng(seed)
    jets = sample_jets(sys, samples, sys.Fq_arity, rng)
    R = minimal_R(sys.Fq, jets)
    return ParameterizingMap(sys.Fq, derive_Fv(sys), derive_Fu(sys), R)


def find_equilibrium(sys: FlatSystem, pmap: ParameterizingMap,
                     y_s: Sequence[float] | None = None) -> Equilibrium:
    """Rest configuration and inputs for the constant jet ``(y_s, 0, ..., 0)``."""
    y_s = tuple(float(y) for y in (sys.nominal_output if y_s is None else y_s))
    if len(y_s) != sys.m:
        raise ValueError(f"y_s must have {sys.m} entries")
    jet = JetPoint.constant(y_s, pmap.jet_shape)
    try:
        q_s, _ = pmap.state(jet)
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        raise ChartError(f"constant jet {y_s} outside the chart: {exc}") from exc
    if not sys.in_chart(q_s):
        raise ChartError(f"constant jet {y_s} maps to q = {q_s}, outside the chart")
    u_s = pmap.inputs(jet)
    res = np.max(np.abs(sys.dynamics(q_s, np.zeros(sys.n), u_s)))
    if not res <= EQUILIBRIUM_TOL:
        raise ParameterizationError(f"equilibrium residual {res:.3e} at y_s = {y_s}")
    return Equilibrium(y_s, q_s, u_s)
