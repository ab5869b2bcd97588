"""
The skeleton median process
===========================

A three-phase machine (padding, dilution, dissipation) watches the shell
masses of a trajectory and moves a piecewise constant median ``M_t``.  Each
jump is logged with the phase that ended it.  This demo starts from a high
mode, where the dynamics are dissipation dominated and the median walks down.
"""

import numpy as np

from pfsim.integrator import ModelParams, Propagator
from pfsim.lattice import mode_field, shell_energies
from pfsim.median_machine import SkeletonMachine, record_violations, stopping_time_stats
from pfsim.noise import NoiseSpec
from pfsim.seeding import trajectory_rng

params = ModelParams(K=24, dt=1e-3)
spec = NoiseSpec.parametric(params.lattice, 1, 1.0, 2.0, K_noise=8)
pi0 = mode_field(params.lattice, (18,))

n_paths, n_steps = 8, 20_000
u = np.repeat(pi0.coeffs[None], n_paths, axis=0)
machines = [SkeletonMachine(params.dt, delta=0.5, lattice=params.lattice, path=p)
            for p in range(n_paths)]
for p, mc in enumerate(machines):
    mc.feed(shell_energies(pi0)[None], u[p:p + 1])


def watch(start, shells, snaps, slog):
    for p, mc in enumerate(machines):
        mc.feed(shells[p], snaps[p])


Propagator(params, spec).run(u, np.zeros(n_paths), [trajectory_rng(4, p) for p in range(n_paths)],
                             n_steps, stride=1, want_shells=True, callback=watch)
records = [r for mc in machines for r in mc.finish().records]

# the first jumps of path 0
print(" i    T_i  T_next  M_i  M_next event  reason")
for r in machines[0].records[:12]:
    print(f"{r.i:2d} {r.T_i:6.3f} {r.T_next:6.3f} {r.M_i:4d} {r.M_next:6d}   {r.event}    {r.reason}")

stats = stopping_time_stats(records, dt=params.dt)
print("jumps:", stats["n_records"], " fraction A:", round(stats["fraction_A"], 3),
      " mean dM:", round(stats["mean_dM"], 3), " longest gap:", round(stats["max_gap"], 3))
print("invariant violations:", record_violations(records, params.dt))
print("band-bound checks:", sum(mc.band_checked for mc in machines),
      " violations:", sum(len(mc.band_violations) for mc in machines))
