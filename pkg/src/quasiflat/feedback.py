"""Quasi-static linearizing feedback of the classical state.

Given a regular multi-index ``kappa``, the low-order jets
``psi = y[j, 0..kappa[j]-1]`` are recovered from the state ``(q, v)`` and
the new input ``w`` by solving ``(Fq, Fv)(psi || w) = (q, v)``, and the
input is ``u = Fu(psi || w)``. Along the closed loop every channel obeys
``y[j, kappa[j]] = w[j]``.

The solve is carried out in the adapted coordinates ``(phi(q), g(q))``,
where all but two equations read ``y[j, 0] = phi^j(q)`` and
``y[j, 1] = d/dt phi^j(q)``. Those unknowns are set directly and Newton's
method runs on the remaining two equations, ``Fqbar^n`` and ``Fvbar^n``.
This is the same Newton iteration as on the full system: the Jacobian is
block triangular with identity blocks on the directly solved unknowns.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Dual, Taylor, value
from .flatmodel import FlatSystem, ParameterizingMap, inputs_from_motion
from .multijet import JetPoint, MultiIndex, jet_series, taylor_outputs
from .structure import MAX_ORDER, TransformedMap, _check_kappa

__all__ = [
    "FeedbackError",
    "FeedbackSingularityError",
    "NewtonDivergenceError",
    "BranchJumpError",
    "SolverConfig",
    "SolveInfo",
    "QuasiStaticFeedback",
    "WLaw",
]

# callable form of w: receives the unknown low-order jets per channel and
# returns per-channel w values (used by the stabilizing outer loop)
WLaw = Callable[[list], Sequence[Sequence]]


class FeedbackError(ArithmeticError):
    """The feedback could not be evaluated at the requested state."""


class FeedbackSingularityError(FeedbackError):
    """Outside the chart or the regularity region of ``kappa``."""


class NewtonDivergenceError(FeedbackError):
    """Newton's method did not reach the tolerance."""


class BranchJumpError(FeedbackError):
    """The solution moved further than allowed from the warm start."""


@dataclass(frozen=True)
class SolverConfig:
    """Newton settings.

    ``branch_jump`` bounds the infinity-norm change of ``psi`` relative to a
    warm start; ``None`` disables the check. With ``reuse_jacobian`` the
    last Newton Jacobian is tried first and recomputed as soon as a step
    fails to reduce the residual tenfold. ``polish_steps`` extra steps are
    taken after convergence for as long as they reduce the residual.
    """

    tol: float = 1e-10
    max_iter: int = 50
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    rcond_min: float = 1e-12
    branch_jump: float | None = 1.0
    warm_start: bool = True
    reuse_jacobian: bool = True
    polish_steps: int = 0


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    rcond: float
    warm: bool
    jacobian_evaluations: int = 0


def _coef(x, lvl, i):
    # i-th derivative from a Taylor result (constants have zero derivatives)
    if isinstance(x, Taylor) and x.lvl == lvl:
        return x.c[i] * math.factorial(i)
    return x if i == 0 else 0.0


def _rcond2(J) -> float:
    # singular value ratio of the 2 x 2 matrix J
    (a, b), (c, d) = J
    fro = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    if not fro > 0.0:
        return 0.0
    disc = math.sqrt(max(fro * fro - 4.0 * det * det, 0.0))
    return det / (0.5 * (fro + disc))


def _solve2(J, r):
    # Newton step -J^{-1} r
    (a, b), (c, d) = J
    det = a * d - b * c
    if det == 0.0:
        return None
    return [(-d * r[0] + b * r[1]) / det, (c * r[0] - a * r[1]) / det]


def _broyden(J, x, r, x_new, r_new):
    # secant update keeping a reused Jacobian in step with the trajectory
    dx0, dx1 = x_new[0] - x[0], x_new[1] - x[1]
    nrm = dx0 * dx0 + dx1 * dx1
    if nrm == 0.0:
        return J
    (a, b), (c, d) = J
    e0 = (r_new[0] - r[0]) - (a * dx0 + b * dx1)
    e1 = (r_new[1] - r[1]) - (c * dx0 + d * dx1)
    return [[a + e0 * dx0 / nrm, b + e0 * dx1 / nrm],
            [c + e1 * dx0 / nrm, d + e1 * dx1 / nrm]]


class QuasiStaticFeedback:
    """Linearizing feedback ``u = alpha(q, v, w)`` for the multi-index ``kappa``.

    Parameters
    ----------
    sys : FlatSystem
    pmap : ParameterizingMap
    tmap : TransformedMap
    kappa : sequence of int
        Chain lengths, ``#kappa = 2n``, ``kappa <= R``.
    config : SolverConfig, optional

    Notes
    -----
    ``w`` is passed per channel as ``(w[j, 0], ..., w[j, r_j - kappa_j])``,
    either as a :class:`JetPoint` of shape ``R - kappa``, as nested
    sequences, or as a callable of the low-order jets (see :data:`WLaw`).
    The instance keeps the last solution as a warm start, so it is not
    thread safe; :meth:`clone` snapshots it.
    """

    def __init__(self, sys: FlatSystem, pmap: ParameterizingMap, tmap: TransformedMap,
                 kappa: Sequence[int], config: SolverConfig | None = None):
        kappa = _check_kappa(tmap, kappa)
        if any(k < 2 for k in kappa):
            raise ValueError(f"kappa = {tuple(kappa)} has a chain shorter than 2; "
                             "its Jacobian is singular everywhere")
        # with every chain of length >= 2, exactly two unknowns are not fixed
        # directly by the state
        self.sys = sys
        self.map = pmap
        self.tmap = tmap
        self.kappa = kappa
        self.R = pmap.R
        self.w_arity = MultiIndex(self.R - kappa)
        self.config = config or SolverConfig()
        self.unknowns = [(j, k) for k in range(MAX_ORDER + 1) for j in range(sys.m) if k < kappa[j]]
        self.free = [(j, k) for (j, k) in self.unknowns if k >= 2]
        self.warm_start: JetPoint | None = None
        self.info: SolveInfo | None = None
        self._jac = None
        self._jac_rcond = float("nan")
        self._shape = pmap.jet_shape

    def clone(self) -> "QuasiStaticFeedback":
        return copy.copy(self)

    def reset(self) -> None:
        """Forget the warm start and the cached Jacobian."""
        self.warm_start = None
        self._jac = None
        self._jac_rcond = float("nan")

    # -- jet bookkeeping --------------------------------------------------

    def _w_channels(self, w, low) -> list:
        if callable(w):
            w = w(low)
        chans = w.channels() if isinstance(w, JetPoint) else [list(c) for c in w]
        if len(chans) != self.sys.m:
            raise ValueError(f"w needs {self.sys.m} channels")
        for j, c in enumerate(chans):
            if len(c) < self.w_arity[j] + 1:
                raise ValueError(f"w channel {j} needs orders 0..{self.w_arity[j]}, got {len(c)} values")
        return chans

    def _joint(self, low, wch) -> list:
        out = []
        for j in range(self.sys.m):
            ch = list(low[j]) + list(wch[j][:self.w_arity[j] + 1])
            ch += [0.0] * (self._shape[j] + 1 - len(ch))
            out.append(ch)
        return out

    def joint_jet(self, psi: JetPoint, w) -> JetPoint:
        """``psi || w`` padded to the order needed by ``Fu``."""
        low = psi.channels()
        return JetPoint(self._joint(low, self._w_channels(w, low)))

    # -- residuals --------------------------------------------------------

    def residual(self, jets_low: JetPoint, q, v, w, coordinates: str = "original") -> np.ndarray:
        """``(Fq, Fv)(jets_low || w) - (q, v)``.

        With ``coordinates='adapted'`` both sides are expressed in the
        adapted coordinates ``(phi(q), g(q))``; the Jacobian of that residual
        with respect to ``jets_low`` is the ``kappa`` Jacobian.
        """
        joint = self.joint_jet(jets_low, w)
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if coordinates == "original":
            vals = jet_series(self.map.Fq, joint, 1)
            return np.concatenate([vals[0] - q, vals[1] - v])
        if coordinates == "adapted":
            qbar, vbar = self.sys.adapted_state(q, v)
            vals = jet_series(self.tmap.Fqbar, joint, 1)
            return np.concatenate([vals[0] - qbar, vals[1] - vbar])
        raise ValueError(f"unknown coordinates {coordinates!r}")

    def residual_jacobian(self, jets_low: JetPoint, w, coordinates: str = "adapted") -> np.ndarray:
        """Exact Jacobian of :meth:`residual` w.r.t. ``jets_low`` (order-major columns)."""
        joint = self.joint_jet(jets_low, w)
        Fs = self.tmap.Fqbar if coordinates == "adapted" else self.map.Fq
        _, jac = jet_series(Fs, joint, 1, self.unknowns)
        return np.vstack([jac[0], jac[1]])

    # -- Newton on the two nontrivial equations ---------------------------

    def _evaluate(self, low, x, w, target, degree):
        # residual of (Fqbar^n, Fvbar^n) and the raw Taylor outputs of Fq;
        # w is either validated channels or a law validated on every call
        for (j, k), xi in zip(self.free, x):
            low[j][k] = xi
        vals = self._joint(low, self._w_channels(w, low) if callable(w) else w)
        outs = taylor_outputs(self.map.Fq, vals, degree)
        lvl = outs[0].lvl
        g = self.sys.completion(outs)
        return [_coef(g, lvl, 0) - target[0], _coef(g, lvl, 1) - target[1]], outs

    def _merit(self, low, x, w, target):
        try:
            r, outs = self._evaluate(low, x, w, target, 2)
            r = [value(ri) for ri in r]
            if not all(math.isfinite(ri) for ri in r):
                return None
            return r, outs
        except (ValueError, ZeroDivisionError, OverflowError, ArithmeticError):
            return None

    def _jacobian(self, low, x, w, target) -> list:
        cols = []
        for i in range(len(x)):
            xd = [Dual(xi, 1.0) if l == i else xi for l, xi in enumerate(x)]
            r, _ = self._evaluate(low, xd, w, target, 1)
            cols.append([ri.grad if isinstance(ri, Dual) else 0.0 for ri in r])
        return [[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]]

    def _line_search(self, low, x, w, target, J, r, full_step=False):
        cfg = self.config
        dx = _solve2(J, r)
        if dx is None:
            return None
        if full_step:
            xt = [xi + di for xi, di in zip(x, dx)]
            trial = self._merit(low, xt, w, target)
            return None if trial is None else (xt, trial[0], trial[1])
        f0 = 0.5 * sum(ri * ri for ri in r)
        lam = 1.0
        for _ in range(cfg.max_backtracks + 1):
            xt = [xi + lam * di for xi, di in zip(x, dx)]
            trial = self._merit(low, xt, w, target)
            if trial is not None and 0.5 * sum(ri * ri for ri in trial[0]) <= (1.0 - 2.0 * cfg.armijo * lam) * f0:
                return xt, trial[0], trial[1]
            lam *= cfg.backtrack
        return None

    def _solve(self, q, v, w, guess):
        cfg = self.config
        sys = self.sys
        m = sys.m
        if len(q) != sys.n or len(v) != sys.n:
            raise ValueError(f"state must have {sys.n} positions and velocities")
        if not sys.in_chart(q):
            raise FeedbackSingularityError(f"q = {list(q)} outside the chart of {sys.name}")
        try:
            qbar, vbar = sys.adapted_state(q, v)
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            raise FeedbackSingularityError(f"adapted coordinates undefined at q = {list(q)}") from exc
        warm = False
        if guess is None and cfg.warm_start and self.warm_start is not None:
            guess = self.warm_start
            warm = True
        elif guess is not None:
            warm = True
        low = [[float(qbar[j]), float(vbar[j])] + [0.0] * (self.kappa[j] - 2) for j in range(m)]
        if guess is None:
            x = [0.0] * len(self.free)
        else:
            g = guess.channels() if isinstance(guess, JetPoint) else guess
            x = [float(g[j][k]) for (j, k) in self.free]
        x0 = list(x)
        target = (float(qbar[-1]), float(vbar[-1]))
        if not callable(w):
            w = self._w_channels(w, None)

        state = self._merit(low, x, w, target)
        if state is None:
            raise FeedbackSingularityError("parameterization undefined at the initial guess")
        r, outs = state
        rcond = self._jac_rcond
        J = self._jac if cfg.reuse_jacobian else None
        fresh = False
        it = 0
        jac_evals = 0
        norm = max(abs(ri) for ri in r)
        polish = 0
        while norm >= cfg.tol or (polish < cfg.polish_steps and norm > 0.0):
            polishing = norm < cfg.tol
            if it >= cfg.max_iter and not polishing:
                raise NewtonDivergenceError(
                    f"no convergence in {cfg.max_iter} iterations (residual {norm:.3e})")
            if J is None:
                try:
                    J = self._jacobian(low, x, w, target)
                except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
                    if polishing:
                        break
                    raise FeedbackSingularityError(f"Jacobian undefined: {exc}") from exc
                jac_evals += 1
                fresh = True
                rcond = _rcond2(J)
                if not rcond >= cfg.rcond_min:
                    raise FeedbackSingularityError(f"singular Newton Jacobian (rcond {rcond:.3e})")
                self._jac, self._jac_rcond = J, rcond
            trial = self._line_search(low, x, w, target, J, r, full_step=polishing)
            if trial is None:
                if fresh and not polishing:
                    raise NewtonDivergenceError("line search failed")
                if fresh:
                    break
                J = None
                continue
            new_norm = max(abs(ri) for ri in trial[1])
            if polishing:
                polish += 1
                if not new_norm < norm:
                    if fresh:
                        break
                    J = None
                    continue
            if cfg.reuse_jacobian:
                J = _broyden(J, x, r, trial[0], trial[1])
                self._jac = J
            x, r, outs = trial
            it += 0 if polishing else 1
            # a reused Jacobian is kept only while it contracts strongly
            if new_norm > 0.1 * norm:
                if polishing and fresh:
                    norm = new_norm
                    break
                J = None
            fresh = False
            norm = new_norm
        if jac_evals == 0 and (self._jac is None or not cfg.reuse_jacobian):
            # converged without a Jacobian: regularity is still required
            try:
                J = self._jacobian(low, x, w, target)
            except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
                raise FeedbackSingularityError(f"Jacobian undefined: {exc}") from exc
            jac_evals = 1
            rcond = _rcond2(J)
            if not rcond >= cfg.rcond_min:
                raise FeedbackSingularityError(f"singular Newton Jacobian (rcond {rcond:.3e})")
            self._jac, self._jac_rcond = J, rcond
        for (j, k), xi in zip(self.free, x):
            low[j][k] = xi
        if warm and cfg.branch_jump is not None:
            jump = max((abs(a - b) for a, b in zip(x, x0)), default=0.0)
            gch = guess.channels() if isinstance(guess, JetPoint) else guess
            for j in range(m):
                for k in range(2):
                    if k < len(gch[j]):
                        jump = max(jump, abs(low[j][k] - gch[j][k]))
            if jump > cfg.branch_jump:
                raise BranchJumpError(f"psi moved by {jump:.3e} from the warm start")
        psi = JetPoint(low)
        self.warm_start = psi
        self.info = SolveInfo(it, norm, rcond, warm, jac_evals)
        return psi, outs

    def solve_psi(self, q, v, w, guess: JetPoint | None = None) -> JetPoint:
        """Low-order jets ``psi(q, v, w)`` of shape ``kappa - 1``."""
        psi, _ = self._solve(q, v, w, guess)
        return psi

    def feedback_u(self, q, v, w, guess: JetPoint | None = None) -> np.ndarray:
        """Linearizing input ``u = Fu(psi(q, v, w) || w)``."""
        _, outs = self._solve(q, v, w, guess)
        lvl = outs[0].lvl
        qs = [_coef(x, lvl, 0) for x in outs]
        vs = [_coef(x, lvl, 1) for x in outs]
        acc = [_coef(x, lvl, 2) for x in outs]
        try:
            u = inputs_from_motion(self.sys, qs, vs, acc)
        except ArithmeticError as exc:
            raise FeedbackSingularityError(str(exc)) from exc
        return np.array([value(ui) for ui in u], dtype=float)

    def __call__(self, q, v, w, guess: JetPoint | None = None) -> np.ndarray:
        return self.feedback_u(q, v, w, guess)
