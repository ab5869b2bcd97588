"""Lyapunov functionals, exponent estimators and the ensemble experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm as _normal

from .lattice import (SpectralField, median_from_shells, mode_field, shell_energies,
                      shifted_weights, project, BandSpec, shell_index)


@dataclass(frozen=True)
class LyapParams:
    kappa0: float = 1.0
    k0: int = 1
    kappa: float = 0.5

    def __post_init__(self):
        if self.kappa0 <= 0 or self.kappa <= 0:
            raise ValueError("kappa0 and kappa must be > 0")
        if int(self.k0) != self.k0 or self.k0 < 1:
            raise ValueError("k0 must be a positive integer")


@dataclass(frozen=True)
class ExponentEstimate:
    lam: float
    stderr: float
    method: str
    burn_in: float
    horizon: float
    n_paths: int

    def as_dict(self, config_hash=""):
        return {"method": self.method, "lambda": self.lam, "stderr": self.stderr,
                "n_paths": self.n_paths, "burn_in": self.burn_in, "horizon": self.horizon,
                "config_hash": config_hash}


# ---------------------------------------------------------------- functionals

def log_G_batch(c, lattice, p=LyapParams(), nu=1.0, a=1.0):
    """``kappa0 M(pi) + ||pi||^2_{1/2, M(pi) + k0}`` for fields ``c`` of shape ``(..., m, n)``."""
    c = np.asarray(c)
    m = c.shape[-2]
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (m,))
    idx = shell_index(lattice, nu, a)
    e = np.abs(c) ** 2
    flat = e.reshape(-1, m * lattice.size)
    shells = np.zeros((flat.shape[0], int(idx.max()) + 1))
    for b in range(shells.shape[1]):
        shells[:, b] = flat[:, (idx == b).ravel()].sum(axis=1)
    M = median_from_shells(shells)
    out = np.empty(len(M))
    for Mv in np.unique(M):
        sel = M == Mv
        w = shifted_weights(lattice, 0.5, int(Mv) + p.k0, nu, a).reshape(-1)
        out[sel] = p.kappa0 * Mv + flat[sel] @ w
    return out.reshape(c.shape[:-2])


def log_G(pi, p=LyapParams(), nu=1.0, a=1.0):
    if pi.norm() == 0:
        raise ValueError("G undefined for the zero field")
    return float(log_G_batch(pi.coeffs, pi.lattice, p, nu, a))


def functional_G(pi, p=LyapParams(), nu=1.0, a=1.0):
    """``exp(kappa0 M(pi) + ||pi||^2_{1/2, M(pi)+k0})``; overflows to ``inf`` like ``np.exp``."""
    return float(np.exp(log_G(pi, p, nu, a)))


def log_F(kappa, M, pi, p=LyapParams(), nu=1.0, a=1.0):
    """``kappa0 M + kappa ||w||^2_{1/2, M+k0}`` with ``w = P_high(M) pi / ||P_low(M) pi||``."""
    low = project(pi, BandSpec(M, "low"), nu, a).norm()
    if low == 0:
        raise ValueError("F undefined: vanishing low-frequency norm")
    high = project(pi, BandSpec(M, "high"), nu, a)
    w = shifted_weights(pi.lattice, 0.5, M + p.k0, nu, a, m=pi.m)
    sn = float(np.sum(w * high.energies())) / low ** 2
    return p.kappa0 * M + kappa * sn


def functional_F(kappa, M, pi, p=LyapParams(), nu=1.0, a=1.0):
    return float(np.exp(log_F(kappa, M, pi, p, nu, a)))


def sandwich_constants(p=LyapParams(), nu=1.0, a=1.0):
    """``(c1, c2)`` with ``c1 |pi|^2_{H^1/2} <= log G(pi) <= c2 |pi|^2_{H^1/2}`` on unit fields."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    lo = 2 * nu.min() ** (-1 / (2 * a)) * (1 + p.k0) + 1
    c1 = 1.0 / max(lo / p.kappa0, 1.0)
    c2 = p.kappa0 * (1 + 2 * nu.max() ** (1 / (2 * a))) + 1
    return c1, c2


# ---------------------------------------------------------------- estimators

def _as_list(records):
    return records if isinstance(records, (list, tuple)) else [records]


def _time_index(t, value, name):
    j = int(np.argmin(np.abs(t - value)))
    if abs(t[j] - value) > 1e-9 * max(1.0, abs(value)):
        raise ValueError(f"{name}={value} is not a recorded time")
    return j


def estimate_lambda_direct(records, burn_in=0.0, horizon=None):
    """Mean over paths of ``(logr(h) - logr(b)) / (h - b)`` with the sample stderr."""
    lams = []
    for rec in _as_list(records):
        h = rec.t[-1] if horizon is None else horizon
        if h <= burn_in:
            raise ValueError("horizon must exceed burn_in")
        if h > rec.t[-1] + 1e-12:
            raise ValueError("horizon beyond the recorded length")
        jb, jh = _time_index(rec.t, burn_in, "burn_in"), _time_index(rec.t, h, "horizon")
        lams.append((rec.logr[:, jh] - rec.logr[:, jb]) / (rec.t[jh] - rec.t[jb]))
    lam = np.concatenate(lams)
    se = float(lam.std(ddof=1) / np.sqrt(len(lam))) if len(lam) > 1 else 0.0
    return ExponentEstimate(float(lam.mean()), se, "direct", float(burn_in), float(h), len(lam))


def estimate_lambda_fk(records, burn_in=0.0, horizon=None, batch=100):
    """Time-and-ensemble mean of the FK integrand on ``[burn_in, horizon)``; batch-means stderr."""
    means, sizes = [], []
    n_paths = 0
    ref = None
    for rec in _as_list(records):
        if rec.fk is None:
            raise ValueError("record carries no FK samples")
        h = rec.t[-1] if horizon is None else horizon
        if h <= burn_in:
            raise ValueError("horizon must exceed burn_in")
        sel = (rec.t >= burn_in - 1e-12) & (rec.t < h - 1e-12)
        x = rec.fk[:, sel]
        if ref is None:
            # centre on one sample so a constant integrand averages without rounding
            ref = float(x.flat[0]) if x.size else 0.0
        x = x - ref
        n_paths += x.shape[0]
        nb = max(1, x.shape[1] // batch)
        for row in x:
            for part in np.array_split(row, nb):
                means.append(part.mean())
                sizes.append(len(part))
    means, sizes = np.array(means), np.array(sizes)
    lam = ref + float(np.sum(means * sizes) / sizes.sum())
    se = float(means.std(ddof=1) / np.sqrt(len(means))) if len(means) > 1 else 0.0
    return ExponentEstimate(lam, se, "fk", float(burn_in), float(h), n_paths)


def wilson_interval(k, n, conf=0.95):
    z = _normal.ppf(0.5 + conf / 2)
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return float(lo), float(hi)


# ---------------------------------------------------------------- experiments

def instability_initial(lattice, M, m=1, nu=1.0, a=1.0, eps=0.01):
    """Mass ``eps`` at ``k = 0`` and ``1 - eps`` spread evenly over shells ``M`` and ``M - 1``."""
    if M < 3:
        raise ValueError("instability initial data needs M >= 3")
    if not 0 < eps <= 16 / 17:
        raise ValueError("eps must lie in (0, 16/17]")
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (m,))
    idx = shell_index(lattice, nu, a)
    sel = (idx == M) | (idx == M - 1)
    if not sel.any():
        raise ValueError(f"no lattice modes in shells {M - 1}, {M}: infeasible initial data")
    c = np.zeros((m, lattice.size), dtype=complex)
    c[sel] = np.sqrt((1 - eps) / sel.sum())
    c[0, lattice.zero_index] = np.sqrt(eps)
    return SpectralField(lattice, c)


def _ensemble(params, spec, pi0, n_paths, n_steps, master_seed, offset=0, want_shells=False,
              callback=None):
    from .integrator import Propagator
    from .seeding import trajectory_rng
    prop = Propagator(params, spec)
    u = np.repeat(pi0.coeffs[None] / pi0.norm(), n_paths, axis=0)
    logr = np.zeros(n_paths)
    rngs = [trajectory_rng(master_seed, offset + i) for i in range(n_paths)]
    prop.run(u, logr, rngs, n_steps, want_shells=want_shells, callback=callback)
    return prop, u, logr


def contraction_experiment(params, spec, Ms=(10, 15, 20), n_paths=200, t_star=5.0, lyap=LyapParams(),
                           master_seed=0, c=1.0, J=0.0, initial=None):
    """Monte Carlo ``E[G(pi_t*)] / G(pi_0)`` for each starting field ``e_M``."""
    lat = params.lattice
    n_steps = int(round(t_star / params.dt))
    rows = []
    for j, M in enumerate(Ms):
        k = (M,) + (0,) * (params.d - 1)
        pi0 = mode_field(lat, k, params.m) if initial is None else initial(M)
        lg0 = log_G(pi0, lyap, params.nu, params.a)
        _, u, _ = _ensemble(params, spec, pi0, n_paths, n_steps, master_seed, offset=j * n_paths)
        lg = log_G_batch(u, lat, lyap, params.nu, params.a)
        lmean = float(logsumexp(lg) - np.log(n_paths))
        # stderr of the ratio from the spread of G / G0
        r = np.exp(lg - lg0)
        se = float(r.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
        log_ratio = lmean - lg0
        bound = float(np.logaddexp(np.log(c) + lg0, np.log(J)) if J > 0 else np.log(c) + lg0)
        rows.append({"M": int(M), "log_G0": lg0, "log_EG": lmean, "ratio": float(np.exp(log_ratio)),
                     "log_ratio": log_ratio, "ratio_stderr": se, "c": c, "J": J,
                     "bound_holds": bool(lmean <= bound)})
    return {"t_star": t_star, "n_paths": n_paths, "kappa0": lyap.kappa0, "k0": lyap.k0, "rows": rows}


def instability_experiment(params, spec, Ms=(10, 20, 30), n_paths=200, horizon=5.0, master_seed=0,
                           eps=0.01, ratio=0.25, initial=None):
    """Probability that the two central bands below ``M`` dilute before ``horizon``.

    ``initial(M)`` overrides the default two-band starting field.
    """
    from .median_machine import marker_from_shells
    lat = params.lattice
    n_steps = int(round(horizon / params.dt))
    rows = []
    for j, M in enumerate(Ms):
        pi0 = (instability_initial(lat, M, params.m, params.nu, params.a, eps) if initial is None
               else initial(M))
        sh0 = shell_energies(pi0, params.nu, params.a)
        hit = np.zeros(n_paths, dtype=bool)
        first = np.full(n_paths, np.nan)

        def cb(start, shells, snaps, slog):
            d = ~marker_from_shells(shells, M - 1, ratio)
            new = d.any(axis=1) & ~hit
            first[new] = (start + 1 + np.argmax(d[new], axis=1)) * params.dt
            hit[:] |= d.any(axis=1)

        d0 = not marker_from_shells(sh0, M - 1, ratio)
        if d0:
            raise ValueError("initial data is already diluted")
        _ensemble(params, spec, pi0, n_paths, n_steps, master_seed, offset=j * n_paths,
                  want_shells=True, callback=cb)
        k = int(hit.sum())
        lo, hi = wilson_interval(k, n_paths)
        rows.append({"M": int(M), "p_hat": k / n_paths, "wilson_lo": lo, "wilson_hi": hi,
                     "n_paths": n_paths, "mean_first_time": float(np.nanmean(first)) if k else None})
    return {"horizon": horizon, "eps": eps, "rows": rows}


def trend_nondecreasing(rows):
    """No strict reversal: each later interval's upper end reaches the earlier lower end."""
    return all(b["wilson_hi"] >= a["wilson_lo"] for a, b in zip(rows, rows[1:]))


def skeleton_drift(params, spec, M0=20, n_paths=200, n_jumps=5, max_time=20.0, master_seed=0,
                   delta=0.5):
    """Skeleton median after ``n_jumps`` jumps and energy median at ``max_time`` from ``e_M0``."""
    from .median_machine import SkeletonMachine
    lat = params.lattice
    k = (M0,) + (0,) * (params.d - 1)
    pi0 = mode_field(lat, k, params.m)
    sh0 = shell_energies(pi0, params.nu, params.a)
    machs = [SkeletonMachine(params.dt, delta, nu=params.nu, a=params.a, path=i) for i in range(n_paths)]
    for mc in machs:
        mc.feed(sh0[None])
    last = [None]

    def cb(start, shells, snaps, slog):
        for i, mc in enumerate(machs):
            if len(mc.records) < n_jumps and mc.aborted is None:
                mc.feed(shells[i])
        last[0] = shells[:, -1]
        return all(len(mc.records) >= n_jumps or mc.aborted is not None for mc in machs)

    n_steps = int(round(max_time / params.dt))
    _ensemble(params, spec, pi0, n_paths, n_steps, master_seed, offset=10_000_000, want_shells=True,
              callback=cb)
    MJ = np.array([mc.records[n_jumps - 1].M_next if len(mc.records) >= n_jumps else np.nan
                   for mc in machs])
    med_end = median_from_shells(last[0])
    return {"M0": M0, "n_jumps": n_jumps, "mean_M_after_jumps": float(np.nanmean(MJ)),
            "n_reached": int(np.isfinite(MJ).sum()), "mean_median_at_stop": float(med_end.mean()),
            "max_time": max_time}
