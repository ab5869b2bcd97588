"""
Lyapunov exponent of a spatially constant multiplicative noise
===============================================================

With noise only on the zero mode, every Fourier coefficient is multiplied by
the same geometric Brownian motion, so the exponent is known in closed form:
lambda = -Gamma_0 / 2.  The projective state never moves off ``e_0`` and the
FK integrand is the same constant at every sample.
"""

import numpy as np

from pfsim.integrator import ModelParams, RunRecord, Propagator
from pfsim.lattice import mode_field
from pfsim.lyapunov import estimate_lambda_direct
from pfsim.noise import NoiseSpec
from pfsim.projective import fk_integrand
from pfsim.seeding import trajectory_rng

gamma0 = 0.8
params = ModelParams(K=1, dt=1e-3)
spec = NoiseSpec.k0_only(params.lattice, gamma0)

# the FK integrand at e_0: no dissipation, corrector Gamma_0 - 2 Gamma_0
sample = fk_integrand(mode_field(params.lattice, (0,)), params, spec)
print("FK integrand at e_0:", sample.integrand)

# 256 paths to T = 100, keeping log r at every unit of time
n_paths, T = 256, 100
u = np.repeat(mode_field(params.lattice, (0,)).coeffs[None], n_paths, axis=0)
logr = np.zeros(n_paths)
rngs = [trajectory_rng(1, i) for i in range(n_paths)]
prop = Propagator(params, spec)
path = [logr.copy()]
for _ in range(T):
    prop.run(u, logr, rngs, 1000)
    path.append(logr.copy())
path = np.array(path).T

t = np.arange(T + 1, dtype=float)
rec = RunRecord(t, path, np.ones_like(path, dtype=int), None, {}, [], u, [], 1)
est = estimate_lambda_direct(rec, burn_in=0.0)
print(f"direct estimate  {est.lam:.4f} +- {est.stderr:.4f}")
print(f"closed form      {-gamma0 / 2:.4f}")

# log r_T is Gaussian with mean -Gamma_0 T / 2 and variance Gamma_0 T
print(f"var(log r_T) / T {path[:, -1].var() / T:.3f}  (expected {gamma0})")
