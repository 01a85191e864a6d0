"""Multi-indices, flat-output jets and functions on jets.

Channels are indexed from 0. ``y[j, k]`` is the k-th time derivative of the
j-th flat output component.

A :class:`JetFunction` wraps a plain Python function ``fn(y)`` that reads jet
coordinates through ``y[j, k]`` and uses the elementary functions of
:mod:`quasiflat.autodiff`. The same code is therefore evaluated on floats,
on dual numbers (exact partials) and on truncated Taylor series (total time
derivatives). Prolongation is lazy: it only increments ``order`` and the
total derivative is computed in Taylor mode at evaluation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Dual, Taylor, new_level, value

__all__ = [
    "JetOrderError",
    "MultiIndex",
    "JetPoint",
    "JetFunction",
    "mi_leq",
    "mi_weight",
    "coordinate",
    "compose",
    "prolong",
    "jet_partials",
    "jet_series",
    "series_on",
    "taylor_outputs",
    "jacobian",
]


class JetOrderError(LookupError):
    """A jet coordinate above the stored or declared order was requested."""


class MultiIndex(tuple):
    """Tuple of per-channel derivative orders.

    ``+`` and ``-`` act component-wise (an int is broadcast). Plain tuple
    comparison (``<``) stays lexicographic, which is the ordering used for
    candidate lists; the partial order is :meth:`leq`.
    """

    def __new__(cls, orders: Iterable[int]):
        orders = tuple(int(a) for a in orders)
        if any(a < 0 for a in orders):
            raise ValueError(f"multi-index entries must be nonnegative, got {orders}")
        return super().__new__(cls, orders)

    def _pair(self, other):
        if isinstance(other, int):
            return (other,) * len(self)
        if len(other) != len(self):
            raise ValueError(f"multi-index length mismatch: {len(self)} vs {len(other)}")
        return other

    def __add__(self, other):
        return MultiIndex(a + b for a, b in zip(self, self._pair(other)))

    def __sub__(self, other):
        return MultiIndex(a - b for a, b in zip(self, self._pair(other)))

    def leq(self, other) -> bool:
        return all(a <= b for a, b in zip(self, self._pair(other)))

    def maximum(self, other) -> "MultiIndex":
        return MultiIndex(max(a, b) for a, b in zip(self, self._pair(other)))

    @property
    def weight(self) -> int:
        return sum(self)

    def __repr__(self):
        return f"MultiIndex({tuple(self)})"


def mi_leq(a: Sequence[int], b: Sequence[int]) -> bool:
    """Component-wise ``a <= b``; raises on a length mismatch."""
    return MultiIndex(a).leq(MultiIndex(b))


def mi_weight(a: Sequence[int]) -> int:
    return MultiIndex(a).weight


class JetPoint:
    """Values ``y[j, 0..b_j]`` of the flat output and its time derivatives.

    Immutable. ``shape`` is the multi-index of highest stored orders.
    """

    __slots__ = ("_data", "shape")

    def __init__(self, channels: Sequence[Sequence[float]]):
        data = tuple(tuple(float(v) for v in ch) for ch in channels)
        if any(len(ch) == 0 for ch in data):
            raise ValueError("every channel must store at least order 0")
        object.__setattr__(self, "_data", data)
        object.__setattr__(self, "shape", MultiIndex(len(ch) - 1 for ch in data))

    def __setattr__(self, name, val):
        raise AttributeError("JetPoint is immutable")

    @classmethod
    def constant(cls, y_s: Sequence[float], shape: Sequence[int]) -> "JetPoint":
        """Equilibrium jet ``(y_s, 0, ..., 0)``."""
        return cls([[y] + [0.0] * b for y, b in zip(y_s, shape)])

    @classmethod
    def from_vector(cls, shape: Sequence[int], vec: Sequence[float]) -> "JetPoint":
        vec = list(vec)
        if len(vec) != sum(b + 1 for b in shape):
            raise ValueError("vector length does not match shape")
        chans, i = [], 0
        for b in shape:
            chans.append(vec[i:i + b + 1])
            i += b + 1
        return cls(chans)

    @property
    def m(self) -> int:
        return len(self._data)

    def channel(self, j: int) -> tuple:
        return self._data[j]

    def channels(self) -> tuple:
        return self._data

    def to_vector(self) -> np.ndarray:
        return np.array([v for ch in self._data for v in ch])

    def __getitem__(self, idx):
        j, k = idx
        ch = self._data[j]
        if k < 0 or k >= len(ch):
            raise JetOrderError(f"y[{j}, {k}] not stored (channel order {len(ch) - 1})")
        return ch[k]

    def covers(self, shape: Sequence[int]) -> bool:
        return len(shape) == self.m and MultiIndex(shape).leq(self.shape)

    def truncated(self, shape: Sequence[int]) -> "JetPoint":
        self._require(shape)
        return JetPoint([ch[: b + 1] for ch, b in zip(self._data, shape)])

    def padded(self, shape: Sequence[int], fill: float = 0.0) -> "JetPoint":
        """Extend channels with ``fill`` up to ``shape`` (never truncates)."""
        return JetPoint([list(ch) + [fill] * max(0, b + 1 - len(ch))
                         for ch, b in zip(self._data, shape)])

    def is_equilibrium(self, atol: float = 0.0) -> bool:
        return all(abs(v) <= atol for ch in self._data for v in ch[1:])

    def _require(self, shape):
        if len(shape) != self.m:
            raise ValueError(f"jet has {self.m} channels, expected {len(shape)}")
        if not MultiIndex(shape).leq(self.shape):
            raise JetOrderError(f"jet of shape {tuple(self.shape)} does not cover {tuple(shape)}")

    def __eq__(self, other):
        return isinstance(other, JetPoint) and self._data == other._data

    def __hash__(self):
        return hash(self._data)

    def __repr__(self):
        return f"JetPoint({[list(ch) for ch in self._data]})"


class _JetView:
    """Read access to jet coordinates with arity enforcement."""

    __slots__ = ("values", "limit")

    def __init__(self, values, limit):
        self.values = values
        self.limit = limit

    def __getitem__(self, idx):
        j, k = idx
        if k < 0 or k > self.limit[j]:
            raise JetOrderError(f"y[{j}, {k}] read above declared arity {tuple(self.limit)}")
        return self.values[j][k]

    @property
    def m(self):
        return len(self.limit)


@dataclass(frozen=True)
class JetFunction:
    """Smooth scalar function of finitely many jet coordinates.

    Parameters
    ----------
    fn : callable
        ``fn(y) -> scalar`` reading ``y[j, k]`` with ``k <= arity[j]``.
        If ``index`` is given, ``fn`` returns a sequence and this function
        is its ``index``-th component; components built by :meth:`vector`
        share a single evaluation inside :func:`jet_series`.
    arity : MultiIndex
        Highest order read per channel by ``fn``.
    order : int
        Number of total time derivatives applied to ``fn``.
    """

    fn: Callable
    arity: MultiIndex
    order: int = 0
    name: str = field(default="", compare=False)
    index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "arity", MultiIndex(self.arity))

    @property
    def m(self) -> int:
        return len(self.arity)

    @property
    def total_arity(self) -> MultiIndex:
        """Highest order read once prolongations are accounted for."""
        return self.arity + self.order

    @classmethod
    def vector(cls, fn: Callable, arity: Sequence[int], size: int,
               names: Sequence[str] | None = None) -> list["JetFunction"]:
        """Components of a vector-valued ``fn`` as separate jet functions."""
        names = names or [f"{getattr(fn, '__name__', 'F')}[{i}]" for i in range(size)]
        return [cls(fn, MultiIndex(arity), 0, names[i], i) for i in range(size)]

    def evaluate_on(self, vals):
        """Evaluate on nested per-channel lists of (AD) scalars."""
        return _series(self, vals, 0)[0]

    def __call__(self, p: JetPoint) -> float:
        p._require(self.total_arity)
        return value(self.evaluate_on(p.channels()))

    def __add__(self, other):
        return _combine(self, other, lambda a, b: a + b, "+")

    __radd__ = __add__

    def __sub__(self, other):
        return _combine(self, other, lambda a, b: a - b, "-")

    def __rsub__(self, other):
        return _combine(self, other, lambda a, b: b - a, "r-")

    def __mul__(self, other):
        return _combine(self, other, lambda a, b: a * b, "*")

    __rmul__ = __mul__

    def __neg__(self):
        return _combine(self, -1.0, lambda a, b: a * b, "*")


def _combine(f: JetFunction, g, op, sym) -> JetFunction:
    if isinstance(g, JetFunction):
        arity = f.total_arity.maximum(g.total_arity)
        return JetFunction(lambda y: op(f.evaluate_on(y.values), g.evaluate_on(y.values)),
                           arity, name=f"({f.name}{sym}{g.name})")
    return JetFunction(lambda y: op(f.evaluate_on(y.values), g),
                       f.total_arity, name=f"({f.name}{sym}{g})")


def coordinate(j: int, k: int, m: int) -> JetFunction:
    """The projection ``y -> y[j, k]``."""
    arity = [0] * m
    arity[j] = k
    return JetFunction(lambda y: y[j, k], MultiIndex(arity), name=f"y[{j},{k}]")


def compose(outer: Callable[[list], object], inner: Sequence[JetFunction],
            name: str = "") -> JetFunction:
    """Jet function ``outer([F(jet) for F in inner])``."""
    inner = tuple(inner)
    arity = inner[0].total_arity
    for f in inner[1:]:
        arity = arity.maximum(f.total_arity)
    return JetFunction(lambda y: outer([s[0] for s in series_on(inner, y.values, 0)]),
                       arity, name=name)


def prolong(F: JetFunction) -> JetFunction:
    """Total time derivative ``sum_j sum_b dF/dy[j,b] * y[j,b+1]``."""
    return JetFunction(F.fn, F.arity, F.order + 1, f"D{F.name}", F.index)


_INV_FACT = [1.0 / math.factorial(i) for i in range(12)]


def _raw(fn, arity, K, vals):
    # fn evaluated on Taylor series of degree K; returns (result, level)
    if K == 0:
        return fn(_JetView(vals, arity)), None
    lvl = new_level()
    expanded = []
    for j, a in enumerate(arity):
        ch = vals[j]
        if len(ch) < a + K + 1:
            raise JetOrderError(f"channel {j} needs order {a + K}, has {len(ch) - 1}")
        expanded.append([Taylor([ch[b], ch[b + 1]] + [ch[b + i] * _INV_FACT[i] for i in range(2, K + 1)], lvl)
                         for b in range(a + 1)])
    return fn(_JetView(expanded, arity)), lvl


def _extract(r, lvl, order, degree):
    # [D^order r, ..., D^(order+degree) r] from a Taylor result
    if lvl is not None and isinstance(r, Taylor) and r.lvl == lvl:
        c = r.c
        return [c[order + i] * math.factorial(order + i) for i in range(degree + 1)]
    if order == 0:
        return [r] + [0.0] * degree
    return [0.0] * (degree + 1)


def _series(F: JetFunction, vals, degree: int, cache=None) -> list:
    # [D^0 F, ..., D^degree F] (relative to F's own order) in one Taylor pass
    K = F.order + degree
    if cache is None:
        r, lvl = _raw(F.fn, F.arity, K, vals)
    else:
        key = (F.fn, F.arity, K)
        if key not in cache:
            cache[key] = _raw(F.fn, F.arity, K, vals)
        r, lvl = cache[key]
    if F.index is not None:
        r = r[F.index]
    return _extract(r, lvl, F.order, degree)


def _seeded(p: JetPoint, variables: Sequence[tuple[int, int]]):
    index = {var: i for i, var in enumerate(variables)}
    size = len(variables)
    vals = []
    for j, ch in enumerate(p.channels()):
        vals.append([Dual.variable(v, index[(j, k)], size) if (j, k) in index else v
                     for k, v in enumerate(ch)])
    return vals


def _grad(x, size):
    while isinstance(x, Taylor):
        x = x.c[0]
    if isinstance(x, Dual):
        return x.grad
    return np.zeros(size)


def taylor_outputs(Fs: Sequence[JetFunction], vals, degree: int) -> list:
    """Raw Taylor series ``F(y(t))`` of unprolonged functions, sharing work.

    The result keeps the series structure so callers can compose further
    functions (e.g. a change of coordinates) before extracting derivatives.
    Constant results are wrapped into series of the same level.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    cache = {}
    out = []
    lvl = None
    for F in Fs:
        if F.order != 0:
            raise ValueError("taylor_outputs expects unprolonged functions")
        key = (F.fn, F.arity)
        if key not in cache:
            cache[key] = _raw(F.fn, F.arity, degree, vals)
        r, lvl = cache[key]
        if F.index is not None:
            r = r[F.index]
        if not (isinstance(r, Taylor) and r.lvl == lvl):
            r = Taylor([r] + [0.0] * degree, lvl)
        out.append(r)
    return out


def series_on(Fs: Sequence[JetFunction], vals, degree: int) -> list[list]:
    """``[[D^0 F, ..., D^degree F] for F in Fs]`` on raw per-channel values.

    ``vals`` may hold AD scalars. Components of one vector function share a
    single evaluation.
    """
    cache = {}
    return [_series(F, vals, degree, cache) for F in Fs]


def jet_series(Fs: Sequence[JetFunction], p: JetPoint, degree: int,
               wrt: Sequence[tuple[int, int]] | None = None):
    """Values of ``D^i F`` for ``i = 0..degree`` and each ``F`` in ``Fs``.

    Returns an array ``(degree + 1, len(Fs))``. With ``wrt`` a list of
    ``(channel, order)`` pairs, also returns the exact Jacobian array
    ``(degree + 1, len(Fs), len(wrt))``.
    """
    vals = p.channels() if wrt is None else _seeded(p, wrt)
    out = series_on(Fs, vals, degree)
    values = np.array([[value(x) for x in col] for col in out]).T
    if wrt is None:
        return values
    size = len(wrt)
    jac = np.array([[_grad(x, size) for x in col] for col in out]).transpose(1, 0, 2)
    return values, jac


def jacobian(Fs: Sequence[JetFunction], p: JetPoint, wrt: Sequence[tuple[int, int]]):
    """Values and Jacobian of the functions ``Fs`` w.r.t. jet variables ``wrt``."""
    for F in Fs:
        p._require(F.total_arity)
    values, jac = jet_series(Fs, p, 0, wrt)
    return values[0], jac[0]


def jet_partials(F: JetFunction, p: JetPoint) -> dict[tuple[int, int], float]:
    """All partials ``dF/dy[j, k]`` for ``k <= total_arity[j]``, exact."""
    p._require(F.total_arity)
    wrt = [(j, k) for j, a in enumerate(F.total_arity) for k in range(a + 1)]
    _, jac = jacobian([F], p, wrt)
    return {var: float(d) for var, d in zip(wrt, jac[0])}
