# # Structure of the planar VTOL
#
# The VTOL has three degrees of freedom (x, z, theta) and two inputs, so it
# is minimally underactuated. Its flat output is the point
# y = (x - eps sin(theta), z + eps cos(theta)). This script parameterizes the
# model, checks the structural conditions and classifies the chain lengths
# kappa that a quasi-static feedback may realize.

# %%
import numpy as np

from quasiflat import JetPoint, analyze, vtol
from quasiflat.structure import default_probes, enumerate_kappa, full_jacobian, kappa_columns

np.set_printoptions(precision=3, suppress=True)
sys_ = vtol(eps=0.1)
pmap, tmap, report = analyze(sys_)

# %% [markdown]
# The minimal multi-index R lists the highest derivative of each flat output
# channel that the input parameterization needs.

# %%
print("R =", pmap.R)
print(report.to_json())

# %% [markdown]
# At the hover jet (y_s, 0, ..., 0) the Jacobian of the adapted
# parameterization has zero columns for the second derivative of y1 in the
# last two rows. A chain length of 2 for y1 would therefore select a
# singular submatrix at rest.

# %%
hover = JetPoint.constant((0.0, 0.1), pmap.jet_shape)
J = full_jacobian(tmap, hover)
print(J)
for kappa in [(4, 2), (2, 4)]:
    sub = J[:, kappa_columns(kappa)]
    print(kappa, "rank at hover:", np.linalg.matrix_rank(sub))

# %% [markdown]
# An exhaustive search over every kappa <= R with |kappa| = 6 confirms that
# (4, 2) is the only choice regular at equilibrium points.

# %%
probes = default_probes(sys_, pmap, count=16, seed=0)
for r in enumerate_kappa(tmap, pmap.R, "exhaustive", probes):
    print(r.kappa, "generic:", r.generic_regular, "equilibrium:", r.equilibrium_regular)
