# # Convergence order of the closed loop
#
# Classic RK4 has global error O(dt^4), so halving the step should shrink
# the deviation from the chain oracle by about 16. That can be seen only
# while the truncation error is above the Newton tolerance and the rounding
# floor. At dt = 1e-3 the y2 deviation is already a few ulps, so this
# script uses coarser steps and one polishing Newton step per solve.

# %%
import numpy as np

from quasiflat import JetPoint, QuasiStaticFeedback, SolverConfig, analyze, plan_rest_to_rest
from quasiflat import simulate_closed_loop, vtol, w_from_reference
from quasiflat.simulate import chain_inputs, chain_oracle

eps = 0.1
sys_ = vtol(eps)
pmap, tmap, _ = analyze(sys_)
kappa = (4, 2)
T = 10.0
ref = plan_rest_to_rest((0.0, eps), (5.0, eps + 2.0), T)
d0 = ref.derivatives(0.0)
x0 = pmap.state(JetPoint([d0[j].tolist() for j in range(2)]))
jets0 = JetPoint([d0[j, :k].tolist() for j, k in enumerate(kappa)])


def deviation(dt, polish):
    fb = QuasiStaticFeedback(sys_, pmap, tmap, kappa, SolverConfig(polish_steps=polish))
    trace = simulate_closed_loop(sys_, fb, w_from_reference(ref, fb), x0, T, dt)
    _, y = chain_oracle(kappa, jets0, chain_inputs(ref, kappa), T, dt)
    return np.max(np.abs(trace.y - y), axis=0)


# %%
for polish in (0, 1):
    prev = None
    for dt in (8e-3, 4e-3, 2e-3):
        dev = deviation(dt, polish)
        ratio = "" if prev is None else f"ratio {prev / dev}"
        print(f"polish {polish} dt {dt:.0e} deviation {dev} {ratio}")
        prev = dev
