"""Exponential Euler-Maruyama stepping of the truncated Fourier SDE.

Each step applies the noise convolution at the left endpoint, multiplies by
the exact linear decay ``exp(-nu zeta_k dt)`` and renormalizes, so only the
unit direction ``pi`` and the accumulated log radius are ever stored.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import _kernels
from .lattice import Lattice, SpectralField, shell_index
from .noise import NoiseIncrement, correlation_tensors, sample_increments

SCHEMES = ("exponential-euler",)
DRIFT_FORMS = ("ito", "stratonovich-corrected")


class TrajectoryDied(RuntimeError):
    """The field vanished after a step (a probability-zero event)."""

    def __init__(self, t, path=None):
        where = "" if path is None else f" on path {path}"
        super().__init__(f"trajectory died at t={t:.6g}{where}")
        self.t = t
        self.path = path


@lru_cache(maxsize=32)
def get_lattice(d, K):
    return Lattice(int(d), int(K))


@dataclass(frozen=True)
class ModelParams:
    d: int = 1
    m: int = 1
    a: float = 1.0
    nu: tuple = (1.0,)
    K: int = 8
    dt: float = 1e-3
    scheme: str = "exponential-euler"
    drift_form: str = "ito"

    def __post_init__(self):
        nu = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(self.nu), (self.m,)))
        object.__setattr__(self, "nu", nu)
        if self.a < 1:
            raise ValueError("a must be >= 1")
        if min(nu) <= 0:
            raise ValueError("every nu must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.drift_form not in DRIFT_FORMS:
            raise ValueError(f"unknown drift form {self.drift_form!r}")

    @property
    def lattice(self):
        return get_lattice(self.d, self.K)

    @property
    def nu_array(self):
        return np.array(self.nu)

    @property
    def zeta(self):
        return self.lattice.norms ** (2 * self.a)


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    pi: SpectralField
    logr: float
    params: ModelParams
    spec: object = field(repr=False)


def linear_decay(phi, dt, params):
    """Exact flow of the dissipative part over time ``dt``."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    g = np.exp(-params.nu_array[:, None] * params.zeta[None, :] * dt)
    return SpectralField(phi.lattice, phi.coeffs * g)


def apply_noise(phi, dB):
    """``psi[a, k] = sum_l sum_b phi[b, k - l] dB[a, b, l]`` on the lattice.

    Computed on half-lattice representatives and conjugate-filled, so a
    Hermitian input stays exactly Hermitian.
    """
    lat = phi.lattice
    dB = dB.dB if isinstance(dB, NoiseIncrement) else np.asarray(dB)
    c = phi.coeffs
    ext = np.concatenate([c, np.zeros((c.shape[0], 1), dtype=complex)], axis=1)
    half = lat.half
    g = ext[:, lat.shift_table[:, half]]              # (b, l, j) = phi[b, half_j - l]
    ph = np.einsum("abl,blj->aj", dB, g)
    out = np.empty_like(c)
    out[:, half] = ph
    out[:, lat.neg[half]] = np.conj(ph)
    out[:, lat.zero_index] = out[:, lat.zero_index].real
    return SpectralField(lat, out)


def decay_factors(params, spec, dt=None):
    """Per-coefficient multiplier applied after the noise in each step."""
    dt = params.dt if dt is None else dt
    rate = params.nu_array[:, None] * params.zeta[None, :]
    if params.drift_form == "stratonovich-corrected":
        tr = correlation_tensors(spec).TrLambda
        if spec.m > 1 and np.any(tr - np.diag(np.diag(tr))):
            raise ValueError("stratonovich correction needs a diagonal Tr(Lambda)")
        rate = rate + 0.5 * np.diag(tr)[:, None]
    return np.exp(-rate * dt)


def step_with(state, increment):
    """One step driven by a given noise increment."""
    u = state.pi.coeffs
    lat = state.pi.lattice
    v = (u + apply_noise(state.pi, increment).coeffs) * decay_factors(state.params, state.spec, increment.dt)
    nrm = float(np.sqrt(np.sum(v.real ** 2 + v.imag ** 2)))
    if nrm == 0:
        raise TrajectoryDied(state.t + increment.dt)
    return SimState(state.t + increment.dt, SpectralField(lat, v / nrm), state.logr + np.log(nrm),
                    state.params, state.spec)


def step(state, rng):
    return step_with(state, sample_increments(state.spec, state.params.dt, rng))


def initial_state(pi0, params, spec):
    r = pi0.norm()
    if r == 0:
        raise ValueError("initial field is zero")
    return SimState(0.0, pi0 * (1.0 / r), 0.0, params, spec)


def n_threads():
    v = os.environ.get("PF_THREADS")
    return max(1, int(v)) if v else (os.cpu_count() or 1)


def shift_runs(lat):
    """Shift table restricted to half-lattice targets, compressed into runs.

    Returns ``(rptr, rj, rt, rlen)``: for mode ``l`` the runs
    ``rptr[l]:rptr[l+1]`` cover slots ``rj .. rj+rlen-1`` of ``lat.half`` with
    source modes ``rt .. rt+rlen-1``.
    """
    tab = lat.shift_table[:, lat.half]
    rptr, rj, rt, rlen = [0], [], [], []
    for row in tab:
        j = np.nonzero(row >= 0)[0]
        if len(j):
            # a run breaks where either index stops advancing by one
            brk = np.nonzero((np.diff(j) != 1) | (np.diff(row[j]) != 1))[0] + 1
            starts = np.concatenate([[0], brk])
            ends = np.concatenate([brk, [len(j)]])
            rj += list(j[starts])
            rt += list(row[j[starts]])
            rlen += list(ends - starts)
        rptr.append(len(rj))
    return tuple(np.asarray(v, dtype=np.int64) for v in (rptr, rj, rt, rlen))


class Propagator:
    """Ensemble stepping through the compiled kernel.

    Each path owns a generator; per step it consumes ``layout.n_draws``
    standard normals, in the same order as :func:`sample_increments`, so the
    ensemble and the single-step API see identical noise.
    """

    def __init__(self, params, spec, budget=4_000_000):
        if not spec.diagonal:
            from .noise import UnsupportedNoise
            raise UnsupportedNoise("sampling is implemented for diagonal noise forms only")
        lat = params.lattice
        if spec.lattice.d != lat.d or spec.lattice.K != lat.K or spec.m != params.m:
            raise ValueError("noise spec does not match the model lattice")
        self.params, self.spec, self.lattice = params, spec, lat
        lay = spec.layout
        self.layout = lay
        self.scale = np.sqrt(lay.rate * params.dt * np.where(lay.is_zero, 1.0, 0.5))
        self.decay = np.ascontiguousarray(decay_factors(params, spec))
        self.shell = np.ascontiguousarray(shell_index(lat, params.nu_array, params.a))
        self.n_shells = int(self.shell.max()) + 1
        self.budget = budget
        self.runs = shift_runs(lat)

    def chunk_length(self, n_paths, stride=0, want_shells=False):
        per = self.layout.n_draws + (self.n_shells if want_shells else 0)
        if stride > 0:
            per += 2 * self.params.m * self.lattice.size / stride
        c = max(1, int(self.budget // (n_paths * max(per, 1))))
        if stride > 0:
            c = max(stride, c - c % stride)
        return c

    def _kernel(self, u, logr, draws, out_shell, want_shell, stride, out_u, out_logr):
        lay, lat = self.layout, self.lattice
        return _kernels.advance(u, logr, draws, lay.alpha, lay.beta, lay.idx, lay.partner,
                                lay.is_zero, lay.offset, self.scale, *self.runs, lat.half,
                                lat.neg, lat.zero_index, self.decay, self.shell, out_shell,
                                want_shell, stride, out_u, out_logr)

    def run(self, u, logr, rngs, n_steps, stride=0, want_shells=False, callback=None, t0=0.0):
        """Advance ``u`` ``(P, m, n)`` and ``logr`` ``(P,)`` in place by ``n_steps``.

        ``callback(start, shells, snaps, snap_logr)`` is invoked after every
        chunk with the global index of its first step, the per-step shell
        masses ``(P, S, n_shells)`` (or None), and the field/logr snapshots at
        multiples of ``stride`` (or None).  A truthy return value stops the
        run early.
        """
        P = u.shape[0]
        chunk = self.chunk_length(P, stride, want_shells)
        workers = min(n_threads(), P)
        done = 0
        while done < n_steps:
            S = min(chunk, n_steps - done)
            nd = self.layout.n_draws
            draws = np.empty((P, S, nd))
            for p in range(P):
                draws[p] = rngs[p].standard_normal((S, nd))
            shells = np.empty((P, S, self.n_shells)) if want_shells else np.empty((1, 1, 1))
            ns = S // stride if stride > 0 else 0
            # stride must divide the chunk boundaries so snapshots stay on the global grid
            snaps = np.empty((P, ns, self.params.m, self.lattice.size), dtype=complex)
            slog = np.empty((P, ns))
            parts = np.array_split(np.arange(P), workers)

            def work(idx):
                if len(idx) == 0:
                    return -1
                sl = slice(idx[0], idx[-1] + 1)
                ub, lb = u[sl].copy(), logr[sl].copy()
                sh = shells[sl] if want_shells else shells
                su, sg = snaps[sl], slog[sl]
                dead = self._kernel(ub, lb, draws[sl], sh, want_shells, stride if stride > 0 else 0,
                                    su, sg)
                u[sl], logr[sl] = ub, lb
                return dead if dead < 0 else dead + idx[0]

            if workers > 1:
                with ThreadPoolExecutor(workers) as ex:
                    deads = list(ex.map(work, parts))
            else:
                deads = [work(parts[0])]
            dead = [d for d in deads if d >= 0]
            if dead:
                raise TrajectoryDied(t0 + (done + S) * self.params.dt, dead[0])
            done += S
            if callback is not None:
                stop = callback(done - S, shells if want_shells else None,
                                snaps if stride > 0 else None, slog if stride > 0 else None)
                if stop:
                    break
        return u, logr

    def advance_draws(self, u, logr, draws):
        """Advance in place with caller-supplied standard normals ``(P, S, n_draws)``."""
        draws = np.ascontiguousarray(draws, dtype=float)
        e1, e4 = np.empty((1, 1, 1)), np.empty((1, 1, 1, 1), dtype=complex)
        dead = self._kernel(u, logr, draws, e1, False, 0, e4, np.empty((1, 1)))
        if dead >= 0:
            raise TrajectoryDied(draws.shape[1] * self.params.dt, dead)
        return u, logr


def self_convergence(params, spec, pi0, T=0.5, levels=(4, 5, 6, 7), n_fine=14, n_paths=32,
                     master_seed=0):
    """Strong self-convergence of the unnormalized field at time ``T``.

    One Brownian path per trajectory is sampled on ``2^n_fine`` steps; the
    solution with step ``T 2^-n_fine`` is the reference, and the schemes with
    steps ``T 2^(level - n_fine)`` reuse the same path through block sums of
    the fine normals.  Returns ``(dts, rms_errors, slope)`` with the slope of
    the least-squares line through ``log err`` against ``log dt``.
    """
    from dataclasses import replace
    from .seeding import derive_seed

    nf = 2 ** n_fine
    nd = spec.layout.n_draws
    draws = np.stack([np.random.default_rng(derive_seed(master_seed, i)).standard_normal((nf, nd))
                      for i in range(n_paths)])

    def solve(block):
        pr = Propagator(replace(params, dt=T * block / nf), spec)
        d = draws.reshape(n_paths, nf // block, block, nd).sum(axis=2) / np.sqrt(block)
        u = np.repeat(pi0.coeffs[None], n_paths, axis=0)
        lr = np.zeros(n_paths)
        pr.advance_draws(u, lr, d)
        return u * np.exp(lr)[:, None, None]

    ref = solve(1)
    dts, errs = [], []
    for lv in levels:
        v = solve(2 ** lv)
        dts.append(T * 2 ** lv / nf)
        errs.append(float(np.sqrt(np.mean(np.sum(np.abs(v - ref) ** 2, axis=(1, 2))))))
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    return np.array(dts), np.array(errs), slope


# ---------------------------------------------------------------- ensemble runs

@dataclass(eq=False)
class RunRecord:
    """Observables at the recording grid ``t`` for every path (arrays are ``(P, n_rec)``)."""

    t: np.ndarray
    logr: np.ndarray
    median: np.ndarray
    fk: np.ndarray
    seminorms: dict
    jumps: list
    final: np.ndarray
    seeds: list
    master_seed: int
    config_hash: str = ""
    flags: list = field(default_factory=list)
    band_checks: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.logr.shape[0]


def seminorm_name(gamma, L):
    return f"seminorm_g{gamma:g}_L{L}"


TIMESERIES_COLUMNS = ("path", "t", "logr", "median", "fk_integrand")


def write_timeseries_csv(record, path):
    import csv
    names = list(record.seminorms)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMESERIES_COLUMNS + tuple(names))
        for p in range(record.n_paths):
            for j, t in enumerate(record.t):
                row = [p, repr(float(t)), repr(float(record.logr[p, j])), int(record.median[p, j]),
                       repr(float(record.fk[p, j]))]
                row += [repr(float(record.seminorms[n][p, j])) for n in names]
                w.writerow(row)


def _shell_matrix(prop):
    flat = prop.shell.ravel()
    onehot = np.zeros((flat.size, prop.n_shells))
    onehot[np.arange(flat.size), flat] = 1.0
    return onehot


def simulate(config):
    """Run ``config.n_paths`` trajectories for ``config.n_steps`` steps.

    Records ``t``, ``logr``, the energy median, the FK integrand and the
    requested seminorms every ``record_stride`` steps (plus the initial
    state), and runs the skeleton machine on every path when enabled.
    """
    from .lattice import shifted_weights
    from .median_machine import SkeletonMachine
    from .projective import fk_batch
    from .seeding import derive_seed
    from .lattice import median_from_shells

    params, spec = config.model, config.noise
    lat = params.lattice
    P, N, stride = config.n_paths, config.n_steps, config.record_stride
    pi0 = config.initial_field()
    prop = Propagator(params, spec)
    tensors = correlation_tensors(spec)
    onehot = _shell_matrix(prop)
    weights = {seminorm_name(g, L): shifted_weights(lat, g, L, params.nu, params.a, m=params.m)
               for g, L in config.seminorms}
    seeds = [derive_seed(config.master_seed, i) for i in range(P)]
    rngs = [np.random.default_rng(s) for s in seeds]

    n_rec = N // stride + 1
    t = np.arange(n_rec) * stride * params.dt
    logr = np.zeros((P, n_rec))
    med = np.zeros((P, n_rec), dtype=np.int64)
    fk = np.zeros((P, n_rec))
    sem = {n: np.zeros((P, n_rec)) for n in weights}

    def observe(c, j0):
        e = np.abs(c) ** 2
        k = c.shape[1]
        med[:, j0:j0 + k] = median_from_shells(e.reshape(P, k, -1) @ onehot)
        d, corr, shift = fk_batch(c, params, spec, tensors)
        fk[:, j0:j0 + k] = d + 0.5 * corr + shift
        for n, w in weights.items():
            sem[n][:, j0:j0 + k] = np.sqrt(np.einsum("ak,pjak->pj", w, e))

    u = np.repeat(pi0.coeffs[None], P, axis=0)
    lr = np.zeros(P)
    observe(u[:, None], 0)
    sk = config.skeleton
    machines = None
    # the machine needs the field at each jump time for the w-seminorm snapshots,
    # so it gets every step's field and the recording grid is subsampled from it
    every = 1 if sk.get("enabled", False) and sk.get("w_snapshots", True) else stride
    if sk.get("enabled", False):
        machines = [SkeletonMachine(params.dt, sk.get("delta", 0.5), sk.get("thresholds"), params.nu,
                                    params.a, path=p, lattice=lat if every == 1 else None)
                    for p in range(P)]
        sh0 = (np.abs(u) ** 2).reshape(P, -1) @ onehot
        for p, mc in enumerate(machines):
            mc.feed(sh0[p:p + 1], u[p:p + 1] if every == 1 else None)

    def cb(start, shells, snaps, slog):
        if snaps is not None and snaps.shape[1]:
            step_no = start + every * (np.arange(snaps.shape[1]) + 1)
            sel = step_no % stride == 0
            if sel.any():
                j = step_no[sel] // stride
                logr[:, j] = slog[:, sel]
                observe(snaps[:, sel], int(j[0]))
        if machines is not None:
            for p, mc in enumerate(machines):
                mc.feed(shells[p], snaps[p] if every == 1 else None)

    if N > 0:
        prop.run(u, lr, rngs, N, stride=every, want_shells=machines is not None, callback=cb)
    jumps, flags = [], []
    if machines is not None:
        checked, bad = 0, []
        for mc in machines:
            mc.finish()
            checked += mc.band_checked
            bad.extend((mc.path, i) for i in mc.band_violations)
            jumps.extend(mc.records)
            if mc.aborted:
                flags.append(f"path {mc.path}: skeleton aborted ({mc.aborted})")
    band = {} if machines is None else {"checked": checked, "violations": bad}
    return RunRecord(t, logr, med, fk, sem, jumps, u, seeds, config.master_seed,
                     config.config_hash, flags, band)
