"""Randomized and exhaustive checks of the deterministic norm inequalities.

Every check returns a :class:`CheckResult` with the instance count, the number
of violations and the worst ``lhs - rhs`` seen.  Where a stated inequality is
known to be too strong, a ``corrected`` variant carrying the constant that the
argument actually supports is provided alongside the ``stated`` one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, median_from_shells, shell_index, threshold
from .lyapunov import LyapParams, sandwich_constants
from .noise import descent_direction, descent_radius

TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    n: int
    violations: int
    worst: float
    seconds: float = 0.0
    example: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.violations == 0

    def as_dict(self):
        return {"name": self.name, "n": self.n, "violations": self.violations,
                "worst": self.worst, "seconds": self.seconds, "ok": self.ok,
                "example": self.example}


def _result(name, lhs, rhs, info=None, rel=TOL):
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    gap = lhs - rhs
    bad = gap > rel * np.maximum(1.0, np.abs(rhs))
    ex = {}
    if bad.any() and info is not None:
        i = int(np.argmax(gap))
        ex = {k: (v[i].tolist() if isinstance(v, np.ndarray) else v) for k, v in info.items()}
        ex.update(lhs=float(lhs.flat[i]), rhs=float(rhs.flat[i]))
    return CheckResult(name, int(lhs.size), int(bad.sum()), float(gap.max()) if gap.size else 0.0,
                       example=ex)


# ---------------------------------------------------------------- random family

def random_energies(lattice, m, rng, n, decay):
    """Mode energies ``|c_k|^2`` of ``n`` random real unit fields, shape ``(n, m, size)``.

    Coefficients are complex Gaussians scaled by ``(1+|k|)^-decay`` and paired
    under ``k -> -k``; ``decay`` may be a scalar or one value per field.
    """
    z = rng.standard_normal((n, m, lattice.size)) + 1j * rng.standard_normal((n, m, lattice.size))
    half = np.zeros(lattice.size, dtype=bool)
    half[lattice.half] = True
    zi = lattice.zero_index
    z[..., ~half] = np.conj(z[..., lattice.neg[~half]])
    z[..., zi] = z[..., zi].real
    dec = np.asarray(decay, dtype=float).reshape(-1, 1, 1)
    e = np.abs(z) ** 2 * (1.0 + lattice.norms) ** (-2 * dec)
    return e / e.sum(axis=(1, 2), keepdims=True)


def seminorm_sq(E, lattice, gamma, L, nu, a):
    """Shifted seminorm squared for energies ``E`` (n, m, size); ``gamma`` and ``L`` per field."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (E.shape[0],))
    L = np.broadcast_to(np.asarray(L, dtype=float), (E.shape[0],))
    La = threshold(1.0, nu, a)[None, :, None] * L[:, None, None]
    r = lattice.norms[None, None, :]
    above = r > La
    w = np.where(above, (1.0 + np.where(above, r - La, 0.0)) ** (2 * gamma[:, None, None]), 0.0)
    return np.sum(w * E, axis=(1, 2))


def sobolev_sq(E, lattice, gamma):
    return np.sum((1.0 + lattice.norms) ** (2 * gamma) * E, axis=(1, 2))


def shell_masses(E, lattice, nu, a):
    """Per-shell energies ``(n, n_shells)`` for energies ``E`` (n, m, size)."""
    sh = shell_index(lattice, nu, a)
    nb = int(sh.max()) + 1
    out = np.zeros((E.shape[0], nb))
    for al in range(E.shape[1]):
        for b in range(nb):
            sel = sh[al] == b
            if sel.any():
                out[:, b] += E[:, al, sel].sum(axis=1)
    return out


def _settings(rng, n_settings):
    """Random model settings ``(lattice, m, nu, a)`` shared by a block of instances.

    ``n_settings=None`` yields forever.
    """
    lats = {1: Lattice(1, 48), 2: Lattice(2, 8)}
    i = 0
    while n_settings is None or i < n_settings:
        i += 1
        d = int(rng.integers(1, 3))
        m = int(rng.integers(1, 3))
        nu = tuple(np.exp(rng.uniform(np.log(0.25), np.log(4.0), m)))
        a = float(rng.choice([1.0, 1.5, 2.0]))
        yield lats[d], m, nu, a


# ---------------------------------------------------------------- individual checks

def reg_jump_bound(E, lattice, gamma, Lp, Lm, nu, a, form="stated"):
    """``(lhs, rhs)`` of the seminorm jump bound between levels ``L+`` and ``L-``.

    ``stated``: ``2^{2g}(nu_min^{-g/a}+1)(dL)_- + 2^{2g-1}|phi|^2_{g,L-}`` when ``dL < 0``.
    ``corrected``: ``2^{2g-1}(1 + nu_min^{-g/a}(dL)_-^{2g}) + 2^{2g-1}|phi|^2_{g,L-}``,
    which is what the convexity split of ``(|k| - L+ + 1)^{2g}`` yields.
    Both read ``|phi|^2_{g,L+} <= |phi|^2_{g,L-}`` when ``dL >= 0``.
    """
    numin = float(np.min(nu))
    lhs = seminorm_sq(E, lattice, gamma, Lp, nu, a)
    base = seminorm_sq(E, lattice, gamma, Lm, nu, a)
    neg = np.maximum(np.asarray(Lm, float) - np.asarray(Lp, float), 0.0)
    g = np.asarray(gamma, float)
    if form == "stated":
        extra = 2 ** (2 * g) * (numin ** (-g / a) + 1) * neg + 2 ** (2 * g - 1) * base
    elif form == "corrected":
        extra = 2 ** (2 * g - 1) * (1 + numin ** (-g / a) * neg ** (2 * g)) + 2 ** (2 * g - 1) * base
    else:
        raise ValueError(f"unknown form {form!r}")
    rhs = np.where(neg > 0, extra, base)
    return lhs, rhs


def mid_jump_bound(E, lattice, L, nu, a, form="stated"):
    """``(lhs, rhs)`` for the median of the high band ``Pi^>_L phi``.

    ``stated``: ``(M(Pi^>_L phi) - L)^{1/2} <= 2 nu_max^{1/(4a)} |phi|_{1/2,L}``.
    ``corrected``: ``(M - L)^{1/2} |Pi^>_L phi| <= sqrt(2) max(1, nu_max^{1/(4a)}) |phi|_{1/2,L}``;
    the median only controls the high band through its own mass, so its norm
    has to appear on the left.  ``Pi^>_L`` keeps ``|k| > (L+1)_alpha``.
    Fields with an empty high band are dropped.
    """
    L = np.asarray(L, dtype=int)
    S = shell_masses(E, lattice, nu, a)
    hi = S.copy()
    hi[np.arange(S.shape[1])[None, :] <= L[:, None] + 1] = 0.0
    mass = hi.sum(axis=1)
    keep = mass > 0
    M = median_from_shells(hi[keep])
    Lk = L[keep]
    semi = np.sqrt(seminorm_sq(E[keep], lattice, 0.5, Lk, nu, a))
    numax = float(np.max(nu))
    if form == "stated":
        return np.sqrt(M - Lk), 2 * numax ** (1 / (4 * a)) * semi, keep
    if form == "corrected":
        return (np.sqrt((M - Lk) * mass[keep]),
                np.sqrt(2) * max(1.0, numax ** (1 / (4 * a))) * semi, keep)
    raise ValueError(f"unknown form {form!r}")


def half_identity_gap(E, lattice, L, nu, a):
    """``|phi|^2_{1/2,L} - (|Pi^> phi|^2_{H^1/2} - sum_alpha L_alpha |Pi^> phi^alpha|^2)``."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    L = np.asarray(L, dtype=float)
    La = threshold(1.0, nu, a)[None, :, None] * L[:, None, None]
    above = lattice.norms[None, None, :] > La
    hi = np.where(above, E, 0.0)
    rhs = sobolev_sq(hi, lattice, 0.5) - np.sum(La * hi, axis=(1, 2))
    return seminorm_sq(E, lattice, 0.5, L, nu, a) - rhs


def h_half_sandwich(E, lattice, nu, a, k0):
    """``(lhs, rhs)`` of ``|pi|^2_{H^1/2} <= 2 nu_min^{-1/2a}(M + k0) + 1 + |pi|^2_{1/2,M+k0}``."""
    M = median_from_shells(shell_masses(E, lattice, nu, a))
    numin = float(np.min(nu))
    lhs = sobolev_sq(E, lattice, 0.5)
    rhs = 2 * numin ** (-1 / (2 * a)) * (M + k0) + 1 + seminorm_sq(E, lattice, 0.5, M + k0, nu, a)
    return lhs, rhs


def lyap_sandwich(E, lattice, nu, a, p):
    """``c1 |pi|^2_{H^1/2} <= kappa0 M + |pi|^2_{1/2,M+k0} <= c2 |pi|^2_{H^1/2}`` as two (lhs, rhs) pairs."""
    M = median_from_shells(shell_masses(E, lattice, nu, a))
    mid = p.kappa0 * M + seminorm_sq(E, lattice, 0.5, M + p.k0, nu, a)
    h = sobolev_sq(E, lattice, 0.5)
    c1, c2 = sandwich_constants(p, nu, a)
    return (c1 * h, mid), (mid, c2 * h)


def weight(k_norm, L, gamma):
    """``rho^L_k``: 1 on ``|k| <= L`` and ``(1 + |k| - L)^{2 gamma}`` beyond."""
    return np.where(k_norm <= L, 1.0, (1.0 + np.maximum(k_norm - L, 0.0)) ** (2 * gamma))


def weights_scan(d, R, gammas, Ls, c=None):
    """Exhaustive ``rho^L_k <= c rho^L_{k+l} rho_l`` over ``|k|, |l| <= R``; ``c`` defaults to ``2^{2 gamma}``."""
    lat = Lattice(d, R)
    kn = lat.norms
    s = lat.modes[:, None, :] + lat.modes[None, :, :]
    sn = np.sqrt(np.sum(s * s, axis=-1))
    n, viol, worst = 0, 0, -np.inf
    ex = {}
    for g in gammas:
        cg = 2 ** (2 * g) if c is None else c
        rho_l = (1.0 + kn) ** (2 * g)
        for L in Ls:
            lhs = np.broadcast_to(weight(kn, L, g)[:, None], sn.shape)
            rhs = cg * weight(sn, L, g) * rho_l[None, :]
            gap = lhs - rhs
            bad = gap > TOL * rhs
            n += gap.size
            viol += int(bad.sum())
            if gap.max() > worst:
                worst = float(gap.max())
                if bad.any():
                    i, j = np.unravel_index(np.argmax(gap), gap.shape)
                    ex = {"gamma": g, "L": L, "k": lat.modes[i].tolist(), "l": lat.modes[j].tolist()}
    return CheckResult("bound_weights", n, viol, worst, example=ex)


def geom_check(rng, n, d_max=4, beta_max=6):
    """``|k + l| <= |k| - beta/sqrt(d) + eps`` with ``l = descent_direction(k)`` once ``|k| >= L0``."""
    lhs, rhs = np.empty(n), np.empty(n)
    bad_ex = {}
    for i in range(n):
        d = int(rng.integers(1, d_max + 1))
        beta = int(rng.integers(1, beta_max + 1))
        eps = float(np.exp(rng.uniform(np.log(0.05), np.log(2.0))))
        L0 = descent_radius(beta, eps)
        r = L0 * np.exp(rng.uniform(0.0, np.log(20.0)))
        v = rng.standard_normal(d)
        k = np.round(v / np.linalg.norm(v) * r).astype(np.int64)
        while np.linalg.norm(k) < L0:
            k[np.argmax(np.abs(k))] += np.sign(k[np.argmax(np.abs(k))]) or 1
        ell, _ = descent_direction(k, beta, eps)
        lhs[i] = np.linalg.norm(k + ell)
        rhs[i] = np.linalg.norm(k) - beta / np.sqrt(d) + eps
        if np.linalg.norm(ell) > beta + 1e-12:
            rhs[i] = -np.inf
        if lhs[i] > rhs[i] + TOL and not bad_ex:
            bad_ex = {"k": k.tolist(), "beta": beta, "eps": eps}
    res = _result("geom", lhs, rhs)
    res.example = bad_ex
    return res


# ---------------------------------------------------------------- suite

def run_suite(n=10_000, seed=0, block=250):
    """Run every check with at least ``n`` random instances; returns a list of results.

    Blocks are drawn until every check has ``n`` instances (the mid-jump checks
    drop fields whose high band is empty).
    """
    rng = np.random.default_rng(seed)
    acc = {k: ([], [], {}) for k in ("reg_jump_stated", "reg_jump_corrected", "mid_jump_stated",
                                     "mid_jump_corrected", "half_identity", "h_half_sandwich",
                                     "lyap_sandwich_lower", "lyap_sandwich_upper")}
    times = dict.fromkeys(acc, 0.0)

    def add(name, lhs, rhs, info, t):
        acc[name][0].append(np.asarray(lhs, float))
        acc[name][1].append(np.asarray(rhs, float))
        gap = np.asarray(lhs) - np.asarray(rhs)
        bad = gap > TOL * np.maximum(1.0, np.abs(rhs))
        if bad.any() and not acc[name][2]:
            i = int(np.argmax(gap))
            acc[name][2].update({k: (v[i].item() if isinstance(v, np.ndarray) else v)
                                 for k, v in info.items()})
            acc[name][2].update(lhs=float(np.ravel(lhs)[i]), rhs=float(np.ravel(rhs)[i]))
        times[name] += time.perf_counter() - t

    for lat, m, nu, a in _settings(rng, None):
        if min(sum(len(x) for x in ls) for ls, _, _ in acc.values()) >= n:
            break
        dec = rng.uniform(0.0, 2.5, block)
        E = random_energies(lat, m, rng, block, dec)
        cap = int(np.floor(lat.K * min(nu) ** (1 / (2 * a))))
        gam = rng.uniform(0.5, 2.0, block)
        Lp = rng.integers(0, cap + 1, block)
        Lm = rng.integers(0, cap + 1, block)
        info = {"gamma": gam, "L_plus": Lp, "L_minus": Lm, "decay": dec, "nu": list(nu), "a": a,
                "d": lat.d}
        for form in ("stated", "corrected"):
            t = time.perf_counter()
            lhs, rhs = reg_jump_bound(E, lat, gam, Lp, Lm, nu, a, form)
            add(f"reg_jump_{form}", lhs, rhs, info, t)
            t = time.perf_counter()
            lhs, rhs, keep = mid_jump_bound(E, lat, Lm, nu, a, form)
            sub = {k: (v[keep] if isinstance(v, np.ndarray) else v) for k, v in info.items()}
            add(f"mid_jump_{form}", lhs, rhs, sub, t)
        t = time.perf_counter()
        g = half_identity_gap(E, lat, Lm, nu, a)
        add("half_identity", np.abs(g), np.zeros_like(g) + 1e-12, info, t)
        t = time.perf_counter()
        k0 = int(rng.integers(1, 4))
        lhs, rhs = h_half_sandwich(E, lat, nu, a, k0)
        add("h_half_sandwich", lhs, rhs, info, t)
        t = time.perf_counter()
        p = LyapParams(kappa0=float(rng.uniform(0.5, 2.0)), k0=k0)
        (l1, r1), (l2, r2) = lyap_sandwich(E, lat, nu, a, p)
        add("lyap_sandwich_lower", l1, r1, info, t)
        t0 = time.perf_counter()
        add("lyap_sandwich_upper", l2, r2, info, t0)

    out = []
    for name, (ls, rs, ex) in acc.items():
        lhs, rhs = np.concatenate(ls), np.concatenate(rs)
        res = _result(name, lhs, rhs)
        res.example, res.seconds = ex, times[name]
        out.append(res)
    t = time.perf_counter()
    out.append(weights_scan(1, 40, (0.5, 1.0, 1.5, 2.0), range(0, 12)))
    out.append(weights_scan(2, 6, (0.5, 1.0, 2.0), range(0, 6)))
    out[-1].name = out[-2].name = "bound_weights"
    merged = CheckResult("bound_weights", out[-1].n + out[-2].n,
                         out[-1].violations + out[-2].violations,
                         max(out[-1].worst, out[-2].worst), time.perf_counter() - t,
                         out[-2].example or out[-1].example)
    out = out[:-2] + [merged]
    t = time.perf_counter()
    g = geom_check(rng, n)
    g.seconds = time.perf_counter() - t
    out.append(g)
    return out
