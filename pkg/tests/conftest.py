import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quasiflat import (  # noqa: E402
    JetPoint,
    QuasiStaticFeedback,
    analyze,
    gantry_crane,
    plan_rest_to_rest,
    simulate_closed_loop,
    vtol,
    w_from_reference,
)
from quasiflat.simulate import chain_inputs, chain_oracle  # noqa: E402

EPS = 0.1


class Bundle:
    def __init__(self, sys_):
        self.sys = sys_
        self.pmap, self.tmap, self.report = analyze(sys_)


@pytest.fixture(scope="session")
def vt():
    return Bundle(vtol(EPS))


@pytest.fixture(scope="session")
def crane():
    return Bundle(gantry_crane())


def rest_jets(ref, shape, t=0.0):
    d = ref.derivatives(t)
    return JetPoint([d[j, :shape[j] + 1].tolist() for j in range(len(shape))])


class Run:
    """Closed-loop VTOL rest-to-rest run with its chain oracle."""

    def __init__(self, vt, dt, T=10.0, config=None):
        from quasiflat import SolverConfig
        self.kappa = (4, 2)
        self.fb = QuasiStaticFeedback(vt.sys, vt.pmap, vt.tmap, self.kappa, config or SolverConfig())
        self.ref = plan_rest_to_rest((0.0, EPS), (5.0, EPS + 2.0), T)
        self.w = w_from_reference(self.ref, self.fb)
        self.x0 = vt.pmap.state(rest_jets(self.ref, vt.pmap.jet_shape))
        start = time.perf_counter()
        self.trace = simulate_closed_loop(vt.sys, self.fb, self.w, self.x0, T, dt)
        self.sim_time = time.perf_counter() - start
        jets = JetPoint([self.ref.derivatives(0.0)[j, :k].tolist() for j, k in enumerate(self.kappa)])
        _, self.oracle_y = chain_oracle(self.kappa, jets, chain_inputs(self.ref, self.kappa), T, dt)
        self.chain_dev = np.max(np.abs(self.trace.y - self.oracle_y), axis=0)


@pytest.fixture(scope="session")
def vtol_run(vt):
    """The reference scenario at dt = 1e-3."""
    return Run(vt, 1e-3)


@pytest.fixture(scope="session")
def vtol_run_half(vt):
    return Run(vt, 5e-4)
