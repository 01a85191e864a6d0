"""Forward-mode automatic differentiation scalars.

Two number types are provided and may be nested:

``Dual``
    value plus a gradient vector (numpy array) with respect to a fixed set of
    seeded variables. Used for exact partial derivatives.
``Taylor``
    truncated univariate power series in time. Coefficient ``c[k]`` is the
    k-th Taylor coefficient, i.e. the k-th time derivative divided by ``k!``.
    Coefficients may be floats, ``Dual`` numbers or lower-level ``Taylor``
    series, which is how total time derivatives of gradients (and repeated
    prolongations) are evaluated in a single pass.

Every ``Taylor`` carries an integer level. A series created inside the
evaluation of another one gets a higher level, and operations between
series of different levels treat the lower one as a constant of the higher
one. This prevents perturbation confusion when prolongations are nested.

The module level functions (``sin``, ``cos``, ``atan2``, ...) dispatch on the
argument type and fall back to :mod:`math` for plain floats, so model code
written against them runs unchanged on floats, duals and series.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "Dual",
    "Taylor",
    "new_level",
    "value",
    "sin",
    "cos",
    "sincos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "atan",
    "atan2",
    "hypot",
]

_levels = itertools.count(1)


def new_level() -> int:
    """Return a fresh series level, higher than every level issued before."""
    return next(_levels)


class Dual:
    """Number ``val + grad . eps`` with a vector of infinitesimal parts."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    @classmethod
    def variable(cls, val, index, size):
        grad = np.zeros(size)
        grad[index] = 1.0
        return cls(float(val), grad)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.grad!r})"

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.grad + other.grad)
        if isinstance(other, Taylor):
            return NotImplemented
        return Dual(self.val + other, self.grad)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.grad - other.grad)
        if isinstance(other, Taylor):
            return NotImplemented
        return Dual(self.val - other, self.grad)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.grad)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.grad * other.val + other.grad * self.val)
        if isinstance(other, Taylor):
            return NotImplemented
        return Dual(self.val * other, self.grad * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, (self.grad - other.grad * q) / other.val)
        if isinstance(other, Taylor):
            return NotImplemented
        return Dual(self.val / other, self.grad / other)

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, self.grad * (-q / self.val))

    def __pow__(self, p):
        if isinstance(p, (Dual, Taylor)):
            return exp(p * log(self))
        if p == 0:
            return Dual(1.0, self.grad * 0.0)
        base = self.val ** p
        return Dual(base, self.grad * (p * self.val ** (p - 1)))

    def __rpow__(self, base):
        return exp(self * math.log(base))

    # elementary functions, called through the module level dispatchers
    def _sin(self):
        return Dual(math.sin(self.val), self.grad * math.cos(self.val))

    def _cos(self):
        return Dual(math.cos(self.val), self.grad * -math.sin(self.val))

    def _exp(self):
        e = math.exp(self.val)
        return Dual(e, self.grad * e)

    def _log(self):
        return Dual(math.log(self.val), self.grad / self.val)

    def _sqrt(self):
        r = math.sqrt(self.val)
        return Dual(r, self.grad / (2.0 * r))


def _dual_atan2(y, x):
    yv = y.val if isinstance(y, Dual) else y
    xv = x.val if isinstance(x, Dual) else x
    d = xv * xv + yv * yv
    if isinstance(y, Dual) and isinstance(x, Dual):
        grad = (y.grad * xv - x.grad * yv) / d
    elif isinstance(y, Dual):
        grad = y.grad * (xv / d)
    else:
        grad = x.grad * (-yv / d)
    return Dual(math.atan2(yv, xv), grad)


class Taylor:
    """Truncated power series ``sum_k c[k] t**k`` at a given nesting level.

    A series of lower level is a constant for one of higher level. Python
    never tries the reflected method for operands of the same type, so the
    binary operators hand such mixed cases to the higher-level operand.
    """

    __slots__ = ("c", "lvl")

    def __init__(self, c, lvl):
        self.c = c
        self.lvl = lvl

    def __repr__(self):
        return f"Taylor({self.c!r}, lvl={self.lvl})"

    @property
    def degree(self):
        return len(self.c) - 1

    def derivatives(self):
        """Time derivatives ``[x, x', x'', ...]`` encoded by the coefficients."""
        return [ck * math.factorial(k) for k, ck in enumerate(self.c)]

    def _const(self, a):
        return [a] + [0.0] * (len(self.c) - 1)

    def __neg__(self):
        return Taylor([-a for a in self.c], self.lvl)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Taylor):
            if other.lvl == self.lvl:
                return Taylor([a + b for a, b in zip(self.c, other.c)], self.lvl)
            if other.lvl > self.lvl:
                return other.__radd__(self)
        c = list(self.c)
        c[0] = c[0] + other
        return Taylor(c, self.lvl)

    def __radd__(self, other):
        c = list(self.c)
        c[0] = other + c[0]
        return Taylor(c, self.lvl)

    def __sub__(self, other):
        if isinstance(other, Taylor):
            if other.lvl == self.lvl:
                return Taylor([a - b for a, b in zip(self.c, other.c)], self.lvl)
            if other.lvl > self.lvl:
                return other.__rsub__(self)
        c = list(self.c)
        c[0] = c[0] - other
        return Taylor(c, self.lvl)

    def __rsub__(self, other):
        c = [-a for a in self.c]
        c[0] = other + c[0]
        return Taylor(c, self.lvl)

    def __mul__(self, other):
        if isinstance(other, Taylor):
            if other.lvl == self.lvl:
                a, b = self.c, other.c
                if len(a) == 2:
                    return Taylor([a[0] * b[0], a[0] * b[1] + a[1] * b[0]], self.lvl)
                if len(a) == 3:
                    return Taylor([a[0] * b[0], a[0] * b[1] + a[1] * b[0],
                                   a[0] * b[2] + a[1] * b[1] + a[2] * b[0]], self.lvl)
                return Taylor(_cauchy(a, b), self.lvl)
            if other.lvl > self.lvl:
                return other.__rmul__(self)
        return Taylor([a * other for a in self.c], self.lvl)

    def __rmul__(self, other):
        return Taylor([other * a for a in self.c], self.lvl)

    def __truediv__(self, other):
        if isinstance(other, Taylor):
            if other.lvl == self.lvl:
                return Taylor(_divide(self.c, other.c), self.lvl)
            if other.lvl > self.lvl:
                return other.__rtruediv__(self)
        return Taylor([a / other for a in self.c], self.lvl)

    def __rtruediv__(self, other):
        return Taylor(_divide(self._const(other), self.c), self.lvl)

    def __pow__(self, p):
        if isinstance(p, (Dual, Taylor)):
            return exp(p * log(self))
        if isinstance(p, int) or float(p).is_integer():
            p = int(p)
            if p < 0:
                return 1.0 / self.__pow__(-p)
            result = Taylor(self._const(1.0), self.lvl)
            base = self
            while p:
                if p & 1:
                    result = result * base
                base = base * base if p > 1 else base
                p >>= 1
            return result
        return Taylor(_power(self.c, float(p)), self.lvl)

    def __rpow__(self, base):
        return exp(self * math.log(base))

    def _sincos(self):
        a = self.c
        s0, c0 = sincos(a[0])
        if len(a) == 2:
            return Taylor([s0, a[1] * c0], self.lvl), Taylor([c0, -(a[1] * s0)], self.lvl)
        if len(a) == 3:
            s1 = a[1] * c0
            c1 = -(a[1] * s0)
            s2 = 0.5 * (a[1] * c1) + a[2] * c0
            c2 = -(0.5 * (a[1] * s1) + a[2] * s0)
            return Taylor([s0, s1, s2], self.lvl), Taylor([c0, c1, c2], self.lvl)
        s = [s0]
        co = [c0]
        for k in range(1, len(a)):
            sk = 0.0
            ck = 0.0
            for j in range(1, k + 1):
                ja = j * a[j]
                sk = sk + ja * co[k - j]
                ck = ck - ja * s[k - j]
            s.append(sk / k)
            co.append(ck / k)
        return Taylor(s, self.lvl), Taylor(co, self.lvl)

    def _sin(self):
        return self._sincos()[0]

    def _cos(self):
        return self._sincos()[1]

    def _exp(self):
        a = self.c
        e = [exp(a[0])]
        for k in range(1, len(a)):
            acc = 0.0
            for j in range(1, k + 1):
                acc = acc + j * a[j] * e[k - j]
            e.append(acc / k)
        return Taylor(e, self.lvl)

    def _log(self):
        a = self.c
        out = [log(a[0])]
        for k in range(1, len(a)):
            acc = a[k]
            for j in range(1, k):
                acc = acc - (j / k) * out[j] * a[k - j]
            out.append(acc / a[0])
        return Taylor(out, self.lvl)

    def _sqrt(self):
        a = self.c
        r = [sqrt(a[0])]
        for k in range(1, len(a)):
            acc = a[k]
            for j in range(1, k):
                acc = acc - r[j] * r[k - j]
            r.append(acc / (2.0 * r[0]))
        return Taylor(r, self.lvl)


def _cauchy(a, b):
    n = len(a)
    out = []
    for k in range(n):
        acc = a[0] * b[k]
        for i in range(1, k + 1):
            acc = acc + a[i] * b[k - i]
        out.append(acc)
    return out


def _divide(a, b):
    q = []
    for k in range(len(a)):
        acc = a[k]
        for j in range(1, k + 1):
            acc = acc - b[j] * q[k - j]
        q.append(acc / b[0])
    return q


def _power(a, p):
    # f = a**p satisfies a f' = p a' f
    f = [a[0] ** p]
    for k in range(1, len(a)):
        acc = 0.0
        for j in range(1, k + 1):
            acc = acc + (p * j - (k - j)) * a[j] * f[k - j]
        f.append(acc / (k * a[0]))
    return f


def _derivative(c):
    return [(k + 1) * c[k + 1] for k in range(len(c) - 1)]


def _taylor_atan2(y, x):
    lvl = max(v.lvl for v in (y, x) if isinstance(v, Taylor))
    size = len((y if isinstance(y, Taylor) and y.lvl == lvl else x).c)

    def coeffs(v):
        if isinstance(v, Taylor) and v.lvl == lvl:
            return v.c
        return [v] + [0.0] * (size - 1)

    yc, xc = coeffs(y), coeffs(x)
    out = [atan2(yc[0], xc[0])]
    if size == 1:
        return Taylor(out, lvl)
    if size == 2:
        x0, y0 = xc[0], yc[0]
        out.append((x0 * yc[1] - y0 * xc[1]) / (x0 * x0 + y0 * y0))
        return Taylor(out, lvl)
    if size == 3:
        x0, x1, x2 = xc
        y0, y1, y2 = yc
        d0 = x0 * x0 + y0 * y0
        d1 = 2.0 * (x0 * x1 + y0 * y1)
        r0 = (x0 * y1 - y0 * x1) / d0
        r1 = (2.0 * (x0 * y2 - y0 * x2) - d1 * r0) / d0
        out.extend((r0, 0.5 * r1))
        return Taylor(out, lvl)
    d = _cauchy(xc, xc)
    d = [p + q for p, q in zip(d, _cauchy(yc, yc))]
    xs, ys = xc[:-1], yc[:-1]
    num = [p - q for p, q in zip(_cauchy(xs, _derivative(yc)), _cauchy(ys, _derivative(xc)))]
    # d * t' = num, solved coefficient by coefficient
    dt = _divide(num, d[:-1])
    out.extend(dtk / (k + 1) for k, dtk in enumerate(dt))
    return Taylor(out, lvl)


def value(x) -> float:
    """Plain float part of a (possibly nested) AD number."""
    while True:
        if isinstance(x, Taylor):
            x = x.c[0]
        elif isinstance(x, Dual):
            return x.val
        else:
            return float(x)


def sin(x):
    if isinstance(x, (Taylor, Dual)):
        return x._sin()
    return math.sin(x)


def cos(x):
    if isinstance(x, (Taylor, Dual)):
        return x._cos()
    return math.cos(x)


def sincos(x):
    """``(sin(x), cos(x))`` sharing the work for series arguments."""
    if isinstance(x, Taylor):
        return x._sincos()
    if isinstance(x, Dual):
        s, c = math.sin(x.val), math.cos(x.val)
        return Dual(s, x.grad * c), Dual(c, x.grad * -s)
    return math.sin(x), math.cos(x)


def tan(x):
    if isinstance(x, Taylor):
        s, c = x._sincos()
        return s / c
    if isinstance(x, Dual):
        return x._sin() / x._cos()
    return math.tan(x)


def exp(x):
    if isinstance(x, (Taylor, Dual)):
        return x._exp()
    return math.exp(x)


def log(x):
    if isinstance(x, (Taylor, Dual)):
        return x._log()
    return math.log(x)


def sqrt(x):
    if isinstance(x, (Taylor, Dual)):
        return x._sqrt()
    return math.sqrt(x)


def atan2(y, x):
    if type(y) is Taylor and type(x) is Taylor and y.lvl == x.lvl and len(y.c) == 3:
        (y0, y1, y2), (x0, x1, x2) = y.c, x.c
        d0 = x0 * x0 + y0 * y0
        r0 = (x0 * y1 - y0 * x1) / d0
        r1 = (2.0 * (x0 * y2 - y0 * x2) - 2.0 * (x0 * x1 + y0 * y1) * r0) / d0
        return Taylor([atan2(y0, x0), r0, 0.5 * r1], y.lvl)
    if isinstance(y, Taylor) or isinstance(x, Taylor):
        return _taylor_atan2(y, x)
    if isinstance(y, Dual) or isinstance(x, Dual):
        return _dual_atan2(y, x)
    return math.atan2(y, x)


def atan(x):
    return atan2(x, 1.0)


def hypot(a, b):
    if isinstance(a, (Taylor, Dual)) or isinstance(b, (Taylor, Dual)):
        return sqrt(a * a + b * b)
    return math.hypot(a, b)
