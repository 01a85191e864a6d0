"""Reference planning, closed-loop simulation and input-output certification."""

from __future__ import annotations

import csv
import json
import math
import time
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .feedback import FeedbackError, QuasiStaticFeedback
from .flatmodel import FlatSystem
from .multijet import JetPoint

__all__ = [
    "ReferenceSignal",
    "Trace",
    "IOCertificate",
    "SimulationError",
    "plan_rest_to_rest",
    "rest_to_rest_polynomial",
    "w_from_reference",
    "chain_inputs",
    "stabilized_w",
    "simulate_closed_loop",
    "simulate_open_loop",
    "chain_oracle",
    "fd_weights",
    "certify_io",
]


class SimulationError(RuntimeError):
    """The closed loop could not be continued; ``t`` is the failure time."""

    def __init__(self, t: float, cause: Exception, trace: "Trace | None" = None):
        super().__init__(f"simulation stopped at t = {t:.6g}: {cause}")
        self.t = t
        self.cause = cause
        self.trace = trace


def rest_to_rest_polynomial(order: int = 4) -> np.ndarray:
    """Coefficients (ascending) of the degree ``2 * order + 1`` polynomial on
    ``[0, 1]`` rising from 0 to 1 with derivatives ``1..order`` zero at both ends.

    The boundary-value system is solved in exact rational arithmetic.
    """
    deg = 2 * order + 1
    rows = []
    for s, target in ((0, 0), (1, 1)):
        for k in range(order + 1):
            row = [Fraction(0)] * (deg + 1)
            for i in range(k, deg + 1):
                row[i] = Fraction(math.factorial(i), math.factorial(i - k)) * Fraction(s) ** (i - k)
            rows.append(row + [Fraction(target if k == 0 else 0)])
    size = deg + 1
    for col in range(size):
        piv = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                f = rows[r][col] / rows[col][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    return np.array([float(rows[i][-1] / rows[i][i]) for i in range(size)])


@dataclass(frozen=True)
class ReferenceSignal:
    """Polynomial reference ``y_d(t) = offset + scale * P(t / T)`` per channel.

    ``P`` is stored by its Bernstein coefficients on ``[0, 1]``, which keeps
    the evaluation of high derivatives free of cancellation. Outside
    ``[0, T]`` the signal holds its boundary value with zero derivatives,
    which is exact for rest-to-rest plans.
    """

    offsets: tuple
    scales: tuple
    bernstein: tuple
    T: float
    max_order: int = 4

    def __post_init__(self):
        n = len(self.bernstein) - 1
        b = np.asarray(self.bernstein, dtype=float)
        tables = []
        for k in range(self.max_order + 1):
            d = n - k
            # k-th derivative: n!/(n-k)! times the k-th forward difference
            coef = np.diff(b, k) * (math.factorial(n) / math.factorial(d)) / self.T ** k if d >= 0 \
                else np.zeros(1)
            comb = np.array([math.comb(max(d, 0), i) for i in range(max(d, 0) + 1)], dtype=float)
            tables.append((max(d, 0), coef * comb))
        object.__setattr__(self, "_tables", tables)
        object.__setattr__(self, "_lists", [(d, c.tolist()) for d, c in tables])
        object.__setattr__(self, "_off", np.array(self.offsets, dtype=float))
        object.__setattr__(self, "_sc", np.array(self.scales, dtype=float))

    @property
    def m(self) -> int:
        return len(self.offsets)

    def _normalized(self, s, order, lowest=0):
        # P^(k)(s) for k = lowest..order (zeros below), s scalar in [0, 1]
        n = len(self.bernstein) - 1
        sp = [1.0]
        cp = [1.0]
        for _ in range(n):
            sp.append(sp[-1] * s)
            cp.append(cp[-1] * (1.0 - s))
        out = np.zeros(order + 1)
        for k in range(lowest, order + 1):
            d, coef = self._lists[k]
            acc = 0.0
            for i, c in enumerate(coef):
                acc += c * sp[i] * cp[d - i]
            out[k] = acc
        return out

    def derivatives(self, t: float, order: int | None = None, lowest: int = 0) -> np.ndarray:
        """Array ``(m, order + 1)`` of ``y_d^(k)(t)``; orders below ``lowest`` are left zero."""
        order = self.max_order if order is None else order
        if order > self.max_order:
            raise ValueError(f"reference provides derivatives up to order {self.max_order}")
        s = min(max(t / self.T, 0.0), 1.0)
        base = self._normalized(s, order, lowest)
        if t < 0.0 or t > self.T:
            base[1:] = 0.0
        out = np.outer(self._sc, base)
        if lowest == 0:
            out[:, 0] += self._off
        return out

    def __call__(self, t: float) -> np.ndarray:
        return self.derivatives(t, 0)[:, 0]

    def evaluate(self, ts, order: int) -> np.ndarray:
        """Vectorized ``y_d^(order)`` at the times ``ts``, shape ``(len(ts), m)``."""
        ts = np.asarray(ts, dtype=float)
        s = np.clip(ts / self.T, 0.0, 1.0)
        d, coef = self._tables[order]
        i = np.arange(d + 1)
        basis = s[:, None] ** i * (1.0 - s[:, None]) ** (d - i)
        base = basis @ coef
        if order > 0:
            base = np.where((ts < 0.0) | (ts > self.T), 0.0, base)
        out = np.outer(base, self._sc)
        if order == 0:
            out += self._off
        return out


def plan_rest_to_rest(y_start: Sequence[float], y_end: Sequence[float], T: float,
                      order: int = 4) -> ReferenceSignal:
    """Degree-9 rest-to-rest transition (derivatives 1..4 vanish at both ends).

    The derivatives of orders ``1..order`` at ``s = 0`` depend only on the
    first ``order + 1`` Bernstein coefficients and vanish when those are
    equal; likewise at ``s = 1``. Hence the coefficients are ``order + 1``
    zeros followed by ``order + 1`` ones.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    y_start = tuple(float(a) for a in y_start)
    y_end = tuple(float(b) for b in y_end)
    if len(y_start) != len(y_end):
        raise ValueError("endpoints must have the same length")
    scales = tuple(b - a for a, b in zip(y_start, y_end))
    bern = (0.0,) * (order + 1) + (1.0,) * (order + 1)
    return ReferenceSignal(y_start, scales, bern, float(T), order)


def chain_inputs(ref: ReferenceSignal, kappa: Sequence[int]) -> Callable:
    """``t -> (y_d[j, kappa_j](t))_j``, also accepting an array of times."""
    kappa = [int(k) for k in kappa]

    def w(t):
        if np.ndim(t) == 0:
            d = ref.derivatives(float(t), max(kappa))
            return np.array([d[j, k] for j, k in enumerate(kappa)])
        return np.column_stack([ref.evaluate(t, k)[:, j] for j, k in enumerate(kappa)])

    w.vectorized = True
    return w


def w_from_reference(ref: ReferenceSignal, fb: QuasiStaticFeedback) -> Callable[[float], list]:
    """``t -> w``: the reference derivatives of orders ``kappa .. R`` per channel."""
    kappa, R = list(fb.kappa), list(fb.R)
    if ref.max_order < max(R):
        raise ValueError(f"reference must provide derivatives up to order {max(R)}")

    top, low = max(R), min(kappa)

    def w(t):
        d = ref.derivatives(t, top, low)
        return [d[j, kappa[j]:R[j] + 1].tolist() for j in range(len(kappa))]

    return w


def stabilized_w(ref: ReferenceSignal, fb: QuasiStaticFeedback,
                 gains: Sequence[Sequence[float]]) -> Callable[[float], Callable]:
    """Tracking outer loop ``w = y_d[kappa] + sum_i a_i (y_d[i] - y[i])``.

    ``gains[j]`` holds ``a_0 .. a_{kappa_j - 1}``; the flat-output
    derivatives ``y[i]`` are the unknowns of the feedback solve. Only
    ``w[j, 0]`` is corrected; higher w-derivatives come from the reference.
    """
    kappa, R = list(fb.kappa), list(fb.R)
    for j, g in enumerate(gains):
        if len(g) != kappa[j]:
            raise ValueError(f"channel {j} needs {kappa[j]} gains")

    def at(t):
        d = ref.derivatives(t, max(R))

        def law(low):
            out = []
            for j, kj in enumerate(kappa):
                w0 = float(d[j, kj])
                for i in range(kj):
                    w0 = w0 + gains[j][i] * (float(d[j, i]) - low[j][i])
                out.append([w0] + d[j, kj + 1:R[j] + 1].tolist())
            return out

        return law

    return at


@dataclass
class Trace:
    """Uniformly sampled closed-loop run; row ``i`` is time ``t[i]``."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    y: np.ndarray
    w: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def state(self) -> np.ndarray:
        """Integrated state ``(q, v)``; its width is ``2n``."""
        return np.hstack([self.q, self.v])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def header(self) -> list[str]:
        n, m = self.q.shape[1], self.u.shape[1]
        return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
                + [f"u{j + 1}" for j in range(m)] + [f"y{j + 1}" for j in range(m)]
                + [f"w{j + 1}" for j in range(m)])

    def table(self) -> np.ndarray:
        return np.hstack([self.t[:, None], self.q, self.v, self.u, self.y, self.w])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.table():
                writer.writerow([repr(float(x)) for x in row])

    def write(self, path, certificate: "IOCertificate | None" = None,
              config: dict | None = None) -> tuple[Path, Path]:
        """Write ``path`` (CSV) and a JSON sidecar next to it."""
        path = Path(path)
        self.to_csv(path)
        sidecar = path.with_suffix(".json")
        doc = {
            "config": config or {},
            "meta": self.meta,
            "diagnostics": {
                "max_iterations": int(self.iterations.max()) if len(self.iterations) else 0,
                "mean_iterations": float(self.iterations.mean()) if len(self.iterations) else 0.0,
                "max_residual": float(self.residuals.max()) if len(self.residuals) else 0.0,
            },
            "certificate": certificate.to_dict() if certificate is not None else None,
        }
        sidecar.write_text(json.dumps(doc, indent=2, default=_jsonable))
        return path, sidecar


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _predict(jets: list, kappa, delta: float) -> list:
    # Taylor shift of the last joint jets to the next evaluation time
    out = []
    for j, ch in enumerate(jets):
        row = []
        for k in range(kappa[j]):
            acc, fac = 0.0, 1.0
            for i, c in enumerate(ch[k:]):
                if i:
                    fac *= delta / i
                acc += c * fac
            row.append(acc)
        out.append(row)
    return out


def simulate_closed_loop(sys: FlatSystem, fb: QuasiStaticFeedback, w_signal: Callable,
                         x0: tuple, T: float, dt: float, t0: float = 0.0) -> Trace:
    """Integrate ``q' = v, v' = f(q, v, alpha(q, v, w))`` with classic RK4.

    Parameters
    ----------
    w_signal : callable
        ``t -> w`` per channel, ``(w[j, 0], ..., w[j, r_j - kappa_j])``, or
        ``t -> law`` where ``law`` is a callable of the low-order jets (see
        :func:`stabilized_w`).
    x0 : (q0, v0)
    T, dt : float
        Duration and fixed step; ``T / dt`` is rounded to whole steps.

    The feedback is evaluated at every Runge-Kutta stage; only ``(q, v)`` is
    integrated.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, m = sys.n, sys.m
    steps = int(round(T / dt))
    if steps < 1:
        raise ValueError("T must cover one step or more")
    kappa = list(fb.kappa)
    q0, v0 = (np.asarray(a, dtype=float) for a in x0)
    x = np.concatenate([q0, v0])
    if x.shape != (2 * n,):
        raise ValueError(f"x0 must hold {n} positions and {n} velocities")

    ts = t0 + dt * np.arange(steps + 1)
    X = np.empty((steps + 1, 2 * n))
    U = np.empty((steps + 1, m))
    W = np.empty((steps + 1, m))
    its = np.zeros(steps + 1, dtype=int)
    res = np.zeros(steps + 1)

    last = {"t": None, "jets": None}

    def evaluate(t, xs):
        q, v = xs[:n].tolist(), xs[n:].tolist()
        w = w_signal(t)
        guess = None
        if last["t"] is not None:
            guess = _predict(last["jets"], kappa, t - last["t"])
        u = fb.feedback_u(q, v, w, guess=guess)
        psi = fb.warm_start.channels()
        wch = fb._w_channels(w, psi)
        last["t"] = t
        last["jets"] = [list(psi[j]) + list(wch[j][:fb.w_arity[j] + 1]) for j in range(m)]
        acc = sys.dynamics(q, v, u)
        return np.concatenate([xs[n:], acc]), u, [c[0] for c in wch]

    fb.reset()
    comp = np.zeros(2 * n)
    start = time.perf_counter()
    i = 0
    try:
        for i in range(steps + 1):
            t = ts[i]
            X[i] = x
            k1, u, w0 = evaluate(t, x)
            U[i] = u
            W[i] = [float(c) for c in w0]
            its[i] = fb.info.iterations
            res[i] = fb.info.residual
            if i == steps:
                break
            h = dt
            k2 = evaluate(t + 0.5 * h, x + 0.5 * h * k1)[0]
            k3 = evaluate(t + 0.5 * h, x + 0.5 * h * k2)[0]
            k4 = evaluate(t + h, x + h * k3)[0]
            # compensated summation keeps rounding below the truncation error
            incr = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp
            new = x + incr
            comp = (new - x) - incr
            x = new
    except FeedbackError as exc:
        partial = _make_trace(sys, ts[:i], X[:i], U[:i], W[:i], its[:i], res[:i], {})
        raise SimulationError(float(ts[i]), exc, partial) from exc
    meta = {"model": sys.name, "kappa": kappa, "dt": dt, "T": T, "steps": steps,
            "state_dimension": 2 * n, "wall_time": time.perf_counter() - start}
    return _make_trace(sys, ts, X, U, W, its, res, meta)


def simulate_open_loop(sys: FlatSystem, u_signal: Callable[[float, np.ndarray, np.ndarray], Sequence[float]],
                       x0: tuple, T: float, dt: float) -> Trace:
    """RK4 run of ``v' = f(q, v, u(t, q, v))`` without the linearizing feedback."""
    n, m = sys.n, sys.m
    steps = int(round(T / dt))
    x = np.concatenate([np.asarray(a, dtype=float) for a in x0])
    ts = dt * np.arange(steps + 1)
    X = np.empty((steps + 1, 2 * n))
    U = np.empty((steps + 1, m))

    def f(t, xs):
        u = np.asarray(u_signal(t, xs[:n], xs[n:]), dtype=float)
        return np.concatenate([xs[n:], sys.dynamics(xs[:n], xs[n:], u)]), u

    for i in range(steps + 1):
        X[i] = x
        k1, U[i] = f(ts[i], x)
        if i == steps:
            break
        k2 = f(ts[i] + 0.5 * dt, x + 0.5 * dt * k1)[0]
        k3 = f(ts[i] + 0.5 * dt, x + 0.5 * dt * k2)[0]
        k4 = f(ts[i] + dt, x + dt * k3)[0]
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    zeros = np.zeros(steps + 1)
    return _make_trace(sys, ts, X, U, np.zeros((steps + 1, m)), zeros.astype(int), zeros,
                       {"model": sys.name, "dt": dt, "T": T, "open_loop": True})


def _make_trace(sys, ts, X, U, W, its, res, meta) -> Trace:
    n = sys.n
    Y = np.array([[float(c) for c in sys.flat_output(list(row[:n]))] for row in X]).reshape(len(X), sys.m)
    return Trace(np.asarray(ts, dtype=float), X[:, :n].copy(), X[:, n:].copy(), U, Y, W, its, res, meta)


def _rk4_linear_maps(A: np.ndarray, h: float):
    # one classic RK4 step of z' = A z + b(t) is z+ = P z + sum of maps of b
    # at t, t + h/2 and t + h; obtained by running the step on unit vectors
    size = A.shape[0]
    I = np.eye(size)

    def step(z, b0, bh, b1):
        k1 = A @ z + b0
        k2 = A @ (z + 0.5 * h * k1) + bh
        k3 = A @ (z + 0.5 * h * k2) + bh
        k4 = A @ (z + h * k3) + b1
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    Z = np.zeros((size, size))
    P = step(I, Z, Z, Z)
    M0 = step(Z, I, Z, Z)
    Mh = step(Z, Z, I, Z)
    M1 = step(Z, Z, Z, I)
    return P, M0, Mh, M1


def chain_oracle(kappa: Sequence[int], initial_jets: JetPoint, w_signal: Callable,
                 T: float, dt: float, substeps: int = 10, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the chains ``y[j, kappa_j] = w_j(t)`` with RK4 at ``dt / substeps``.

    ``w_signal`` returns the ``m`` chain inputs at time ``t``; if it carries
    a true ``vectorized`` attribute it is called once on the array of all
    stage times. Returns the time grid (step ``dt``) and the outputs, shape
    ``(steps + 1, m)``. Rounding is controlled by compensated summation.
    """
    kappa = [int(k) for k in kappa]
    m = len(kappa)
    chans = initial_jets.channels()
    if len(chans) != m or any(len(c) < k for c, k in zip(chans, kappa)):
        raise ValueError("initial_jets must have shape kappa - 1")
    steps = int(round(T / dt))
    h = dt / substeps
    offsets = np.cumsum([0] + kappa)
    size = int(offsets[-1])
    A = np.zeros((size, size))
    B = np.zeros((size, m))
    for j in range(m):
        for k in range(kappa[j] - 1):
            A[offsets[j] + k, offsets[j] + k + 1] = 1.0
        B[offsets[j + 1] - 1, j] = 1.0
    P, M0, Mh, M1 = _rk4_linear_maps(A, h)
    # input contributions at every stage time, half-substep grid
    stage_t = t0 + 0.5 * h * np.arange(2 * steps * substeps + 1)
    if getattr(w_signal, "vectorized", False):
        Wst = np.asarray(w_signal(stage_t), dtype=float).reshape(len(stage_t), m)
    else:
        Wst = np.array([np.asarray(w_signal(t), dtype=float) for t in stage_t]).reshape(len(stage_t), m)
    Bst = Wst @ B.T
    drift = (Bst[0:-1:2] @ M0.T) + (Bst[1::2] @ Mh.T) + (Bst[2::2] @ M1.T)
    Pm = P - np.eye(size)
    z = np.concatenate([np.asarray(c[:k], dtype=float) for c, k in zip(chans, kappa)])
    comp = np.zeros(size)
    out = np.empty((steps + 1, m))
    heads = offsets[:-1]
    for i in range(steps + 1):
        out[i] = z[heads]
        if i == steps:
            break
        for s in range(i * substeps, (i + 1) * substeps):
            incr = Pm @ z + drift[s] - comp
            new = z + incr
            comp = (new - z) - incr
            z = new
    ts = t0 + dt * np.arange(steps + 1)
    return ts, out


def fd_weights(offsets: Sequence[float], order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative on ``offsets``."""
    offsets = np.asarray(offsets, dtype=float)
    k = len(offsets)
    if order >= k:
        raise ValueError("need more stencil points than the derivative order")
    A = np.vander(offsets, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


@dataclass
class IOCertificate:
    """Per-channel deviations of the closed loop from the integrator chains."""

    kappa: tuple
    derivative_deviation: list
    chain_deviation: list
    derivative_tol: float
    chain_tol: float
    stride: int

    @property
    def passed(self) -> bool:
        return (all(d < self.derivative_tol for d in self.derivative_deviation)
                and all(d < self.chain_tol for d in self.chain_deviation))

    def to_dict(self) -> dict:
        return {"kappa": list(self.kappa),
                "derivative_deviation": [float(d) for d in self.derivative_deviation],
                "chain_deviation": [float(d) for d in self.chain_deviation],
                "derivative_tol": self.derivative_tol, "chain_tol": self.chain_tol,
                "stride": self.stride, "passed": self.passed}


def certify_io(trace: Trace, kappa: Sequence[int], oracle_y: np.ndarray,
               derivative_tol: float = 1e-3, chain_tol: float = 1e-5,
               fd_step: float = 0.05) -> IOCertificate:
    """Compare the closed loop with ``y[kappa] = w`` and with the chain oracle.

    ``y[j, kappa_j]`` is estimated from the sampled flat output with a
    fourth-order central stencil whose spacing is the multiple of ``dt``
    closest to ``fd_step`` (a spacing of one sample would be dominated by
    rounding). Two stencil widths at each end are excluded.
    """
    kappa = [int(k) for k in kappa]
    N = len(trace.t)
    dt = trace.dt
    stride = max(1, int(round(fd_step / dt))) if dt > 0 else 1
    deriv_dev = []
    for j, k in enumerate(kappa):
        half = (k + 1) // 2 + 1
        offs = np.arange(-half, half + 1)
        weights = fd_weights(offs, k) / (stride * dt) ** k
        width = 2 * half * stride
        lo, hi = 2 * width, N - 1 - 2 * width
        if hi <= lo:
            raise ValueError(f"trace too short for a stencil of {width} samples")
        idx = np.arange(lo, hi + 1)
        est = sum(wt * trace.y[idx + o * stride, j] for o, wt in zip(offs, weights))
        deriv_dev.append(float(np.max(np.abs(est - trace.w[idx, j]))))
    oracle_y = np.asarray(oracle_y, dtype=float)
    if oracle_y.shape != trace.y.shape:
        raise ValueError(f"oracle shape {oracle_y.shape} does not match trace {trace.y.shape}")
    chain_dev = np.max(np.abs(trace.y - oracle_y), axis=0).tolist()
    return IOCertificate(tuple(kappa), deriv_dev, chain_dev, derivative_tol, chain_tol, stride)
