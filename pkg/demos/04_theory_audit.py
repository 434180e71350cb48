"""Estimating the constants that govern local convergence.

For a sensing operator A, the restricted constant beta measures how far
<Z, A Z> / |Z|^2 strays from 1 over low-rank Z. From beta, the Lipschitz
constant L and the smallest singular value of the target, one gets a radius
delta_max for the local region and a window of fixed stepsizes that contract.
"""

# %%
import numpy as np

from qprecon import GeneratorSpec, generate, initialize
from qprecon.analysis import estimate_rpd, hessian_rayleigh, incoherence, mc_rpd_check, theory_constants
from qprecon.linalg import product_svd

inst = generate(GeneratorSpec(30, 30, 2, sampling="gaussian_sensing", d=700, normalize_sensing=True, seed=11))
amb = product_svd(inst.mstar.G, inst.mstar.H)

# %%
at_star = estimate_rpd(inst.op, amb, samples=300, seed=1)
rank2k = estimate_rpd(inst.op, rank=4, samples=300, seed=1)
ray = hessian_rayleigh(inst, samples=300, seed=1)
print(f"sampled beta near M*: {at_star.beta_hat:.3f}   over rank-2k: {rank2k.beta_hat:.3f}")
print(f"Hessian quotients at M*: [{ray.min:.3f}, {ray.max:.3f}]")

# %% [markdown]
# Sampling only gives a lower bound on beta: random directions concentrate
# near quotient 1, while the worst direction can be much further out.

# %%
x0 = initialize(inst)
s_xt = float(product_svd(x0.G, x0.H).S[-1])
tc = theory_constants(inst, at_star.beta_hat, 0.1 * (1 - at_star.beta_hat) * amb.S[-1] / (1 + rank2k.beta_hat),
                      s_xt, samples=300, seed=1)
lo, hi = tc.stepsize_window()
print(f"L = {tc.L:.3f}, delta_max = {tc.delta_max:.3f}, nu = {tc.nu_tilde:.3f}, C = {tc.c_delta_t:.3f}")
print(f"contracting stepsizes: (0, {hi:.3f});  kappa at the midpoint = {tc.kappa(hi / 2):.3f}")

# %% [markdown]
# For completion the analogous check samples points near M* whose rows are
# not too spiky, and counts how often the sampled operator stays within
# [1/3, 2] of the identity on their difference from M*.

# %%
mc = generate(GeneratorSpec(100, 100, 3, p=0.6, seed=7))
print("incoherence of the completion target:", round(incoherence(product_svd(mc.mstar.G, mc.mstar.H)), 3))
rep = mc_rpd_check(mc, samples=200, seed=7)
print(f"pass fraction {rep.pass_fraction:.3f}, quotients in [{rep.min_quotient:.3f}, {rep.max_quotient:.3f}]")
