"""Concentration marker, relative energies and the skeleton median process.

Everything here works on per-shell masses: ``shells[..., b]`` is the mass
of the coefficients whose shell index is ``b`` (see
:func:`pfsim.lattice.shell_index`).  At level ``L`` the low band is shells
``<= L``, the central band is shell ``L + 1`` and the high band shells
``>= L + 2``.  Norm comparisons are made on squared masses.

The skeleton machine watches a stream of shell masses at grid times
``0, dt, 2 dt, ...`` and never feeds back into the dynamics.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .lattice import (BandSpec, SpectralField, gap, median_from_shells, project, shell_energies,
                      shifted_seminorm)

PHASES = ("Padding", "Dilution", "Dissipation")
DEFAULT_THRESHOLDS = {"tau_less": 0.5, "padding": 1.25, "dilution": 1.5,
                      "dissipation": 2.0, "marker": 0.25}


class WUndefined(ValueError):
    pass


# ---------------------------------------------------------------- band masses

def _cum(shells):
    return np.cumsum(np.asarray(shells, dtype=float), axis=-1)


def _low(cum, L):
    if L < 0:
        return np.zeros(cum.shape[:-1])
    return cum[..., min(L, cum.shape[-1] - 1)]


def band_masses(shells, L):
    """Squared ``(low, geq, high)`` norms at level ``L``."""
    cum = _cum(shells)
    total = cum[..., -1]
    low = _low(cum, L)
    return low, total - low, total - _low(cum, L + 1)


def marker_from_shells(shells, L, ratio=0.25):
    """``True`` where concentrated (``C``) about level ``L``."""
    cum = _cum(shells)
    centre = _low(cum, L + 1) - _low(cum, L - 1)
    low = _low(cum, L - 1)
    return centre >= ratio * ratio * low


def marker(L, u, nu=1.0, a=1.0, ratio=0.25):
    """``'C'`` if the two central bands below ``L + 1`` carry at least ``ratio`` of the low norm."""
    if L < 1:
        raise ValueError("marker needs L >= 1")
    if u.norm() == 0:
        raise ValueError("marker undefined for the zero field")
    return "C" if marker_from_shells(shell_energies(u, nu, a), L, ratio) else "D"


def relative_energy(u, L, nu=1.0, a=1.0):
    """``(||P_high u|| / ||P_low u||, ||P_geq u|| / ||P_low u||)`` at level ``L``."""
    low, geq, high = band_masses(shell_energies(u, nu, a), L)
    if low <= 0:
        raise WUndefined("w undefined: vanishing low-frequency norm")
    return float(np.sqrt(high / low)), float(np.sqrt(geq / low))


# ---------------------------------------------------------------- stopping rules

@dataclass(frozen=True)
class StopRule:
    """``tau_less``: ``||w|| <= beta``; ``sigma_geq``: ``||w_geq|| >= beta``;
    ``sigma_D``: marker about ``L`` is ``D`` (``beta`` is the marker ratio)."""

    kind: str
    L: int
    beta: float

    def condition(self, shells):
        if self.kind == "sigma_D":
            if self.L < 1:
                return np.zeros(np.shape(shells)[:-1], dtype=bool)
            return ~marker_from_shells(shells, self.L, self.beta)
        low, geq, high = band_masses(shells, self.L)
        b2 = self.beta * self.beta
        if self.kind == "tau_less":
            return high <= b2 * low
        if self.kind == "sigma_geq":
            return geq >= b2 * low
        raise ValueError(f"unknown stopping rule {self.kind!r}")

    @property
    def capped(self):
        return self.kind != "sigma_D"


def detect_stop(rule, shells, start, steps_per_unit):
    """First grid index ``>= start`` where ``rule`` holds, else the cap ``start + steps_per_unit``.

    ``shells`` is indexed by grid index.  Returns ``(index, fired)`` where
    ``fired`` is False when the cap was reached, or ``None`` when the
    stream is too short to decide.  Raises :class:`WUndefined` if the low
    band used by a ratio rule vanishes inside the window.
    """
    cap = start + steps_per_unit if rule.capped else None
    stop = len(shells) if cap is None else min(len(shells), cap + 1)
    window = np.asarray(shells[start:stop])
    cond = rule.condition(window)
    hit = int(np.argmax(cond)) if cond.any() else None
    end = hit if hit is not None else len(window)
    if rule.kind != "sigma_D":
        low = band_masses(window[:end + 1], rule.L)[0]
        if np.any(low <= 0):
            raise WUndefined(f"w undefined at grid index {start + int(np.argmax(low <= 0))}")
    if hit is not None:
        return start + hit, True
    if cap is not None and cap < len(shells):
        return cap, False
    return None


# ---------------------------------------------------------------- skeleton machine

@dataclass
class SkeletonState:
    i: int
    T_i: float
    M_i: int
    phase: str
    phase_entry_time: float
    delta: float
    flags: tuple = ()


@dataclass
class JumpRecord:
    i: int
    T_i: float
    T_next: float
    M_i: int
    M_next: int
    event: str
    reason: str
    marker: str
    w_seminorm: float = float("nan")
    w_seminorm_next: float = float("nan")
    V: float = float("nan")
    S: float = float("nan")
    median_at_jump: int = 0
    flags: str = ""
    path: int = 0
    wgeq_at_S: float = float("nan")


JUMP_COLUMNS = ("i", "T_i", "T_next", "M_i", "M_next", "event", "marker", "w_seminorm")


def write_jumps_csv(records, path, extra=True):
    cols = JUMP_COLUMNS + (("reason", "w_seminorm_next", "V", "S", "median_at_jump", "flags", "path",
                                 "wgeq_at_S")
                           if extra else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            d = asdict(r)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in cols])


class SkeletonMachine:
    """Streaming construction of the skeleton median from grid-time shell masses.

    Feed chunks of shape ``(S, n_shells)`` in grid order starting with the
    initial state.  Optionally pass the matching fields ``(S, m, n)`` so that
    jump records carry the relative-energy seminorm snapshots.
    """

    def __init__(self, dt, delta=0.5, thresholds=None, nu=1.0, a=1.0, gamma=0.5, k0=1, path=0,
                 lattice=None):
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self.dt = dt
        self.delta = delta
        self.th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
        self.unit = int(round(1.0 / dt))
        self.pad = int(np.ceil(delta / dt - 1e-9))
        self.nu, self.a, self.gamma, self.k0 = nu, a, gamma, k0
        self.path = path
        self.lattice = lattice
        self.buf = []            # list of chunks
        self.fbuf = []
        self.base = 0            # grid index of buf[0][0]
        self.size = 0
        self.records = []
        self.segments = []       # (start index, M)
        self.aborted = None
        self.state = None
        self._cursor = None
        self.band_checked = 0
        self.band_violations = []    # grid indices where ||P_geq pi|| > 2 ||P_low pi||

    # buffer helpers
    def _data(self):
        if len(self.buf) > 1:
            self.buf = [np.concatenate(self.buf)]
            if self.fbuf:
                self.fbuf = [np.concatenate(self.fbuf)]
        return self.buf[0]

    def _trim(self, keep_from):
        cut = keep_from - self.base
        if cut > 0:
            data = self._data()
            self.buf = [data[cut:]]
            if self.fbuf:
                self.fbuf = [self.fbuf[0][cut:]]
            self.base = keep_from

    def _field(self, idx):
        if not self.fbuf:
            return None
        if len(self.fbuf) > 1:
            self.fbuf = [np.concatenate(self.fbuf)]
        return self.fbuf[0][idx - self.base]

    def _shells(self, idx):
        return self._data()[idx - self.base]

    def feed(self, shells, fields=None):
        shells = np.asarray(shells, dtype=float)
        if self.aborted is not None or len(shells) == 0:
            return
        self.buf.append(shells)
        if fields is not None:
            self.fbuf.append(np.asarray(fields))
        self.size += len(shells)
        if self.state is None:
            M0 = int(median_from_shells(shells[0]))
            self.state = SkeletonState(0, 0.0, M0, "Padding", 0.0, self.delta)
            self.segments.append((0, M0))
            self._cursor = {"T": 0}
        self._advance()

    def _window(self, rule, start, cap=None):
        data = self._data()
        local = detect_stop(rule, data, start - self.base, self.unit if cap is None else cap)
        if local is None:
            return None
        return local[0] + self.base, local[1]

    def _advance(self):
        th = self.th
        while self.aborted is None:
            c = self._cursor
            M = self.state.M_i
            try:
                if "V" not in c:
                    T = c["T"]
                    r = self._window(StopRule("sigma_geq", M, th["padding"]), T, self.pad)
                    if r is None:
                        return
                    c["V"] = r[0]
                    c["pad_reason"] = "sigma_5/4" if r[1] and r[0] < T + self.pad else "delta"
                    self.state.phase, self.state.phase_entry_time = "Dilution", c["V"] * self.dt
                if "S" not in c:
                    V = c["V"]
                    s_geq = self._window(StopRule("sigma_geq", M, th["dilution"]), V)
                    if s_geq is None:
                        return
                    s_d = self._window(StopRule("sigma_D", M - 1, th["marker"]), V)
                    if s_d is not None and s_d[0] <= s_geq[0]:
                        c["S"], c["dil_reason"] = s_d[0], "D"
                    else:
                        c["S"], c["dil_reason"] = s_geq[0], "sigma_3/2" if s_geq[1] else "cap"
                    self.state.phase, self.state.phase_entry_time = "Dissipation", c["S"] * self.dt
                S = c["S"]
                L2 = max(M - 2, 0)
                tau = self._window(StopRule("tau_less", L2, th["tau_less"]), S)
                if tau is None:
                    return
                sig = self._window(StopRule("sigma_geq", L2, th["dissipation"]), S)
                if sig is None:
                    return
            except WUndefined as exc:
                self.aborted = str(exc)
                return
            Tn = min(tau[0], sig[0])
            tau_fired = tau[1] and tau[0] == Tn
            if tau_fired:
                reason = "tau"
            elif sig[1] and sig[0] == Tn:
                reason = "sigma_2"
            else:
                reason = "cap"
            self._jump(c, Tn, reason, tau_fired, L2)

    def _jump(self, c, Tn, reason, tau_fired, L2):
        st = self.state
        M = st.M_i
        sh_T = self._shells(Tn)
        med = int(median_from_shells(sh_T))
        M_next = M - 1 if med < M else med
        if M - 1 >= 1:
            mk = "C" if marker_from_shells(self._shells(c["S"]), M - 1, self.th["marker"]) else "D"
        else:
            mk = "C"
        event = "A" if (c["V"] == c["T"] + self.pad and mk == "D" and tau_fired) else "B"
        flags = []
        if M - 2 < 0:
            flags.append("clamped")
        if M - 1 < 1:
            flags.append("marker_level_0")
        low, geq, _ = band_masses(self._shells(c["S"]), L2)
        wgeq = float(np.sqrt(geq / low)) if low > 0 else float("nan")
        w_before = w_after = float("nan")
        f = self._field(Tn)
        if f is not None:
            w_before = self._w_seminorm(f, M)
            w_after = self._w_seminorm(f, M_next)
        self.records.append(JumpRecord(
            st.i, c["T"] * self.dt, Tn * self.dt, M, M_next, event,
            f"{c['pad_reason']}/{c['dil_reason']}/{reason}", mk, w_before, w_after,
            c["V"] * self.dt, c["S"] * self.dt, med, ",".join(flags), self.path, wgeq))
        self.state = SkeletonState(st.i + 1, Tn * self.dt, M_next, "Padding", Tn * self.dt, self.delta)
        self._check_band(c["T"], Tn, M)
        self.segments.append((Tn, M_next))
        self._cursor = {"T": Tn}
        self._trim(Tn)

    def _check_band(self, start, stop, M):
        # the first index of a later segment gets one grid step of grace
        lo = start + 1 if start > 0 else start
        if stop <= lo:
            return
        sh = self._data()[lo - self.base:stop - self.base]
        low, geq, _ = band_masses(sh, M)
        bad = np.nonzero(geq > 4.0 * low * (1 + 1e-12))[0]
        self.band_checked += len(sh)
        self.band_violations.extend(int(lo + b) for b in bad)

    def finish(self):
        """Check the band bound on the still-open last segment; call once after the last feed."""
        if self.state is not None and self.aborted is None:
            self._check_band(self._cursor["T"], self.base + len(self._data()), self.state.M_i)
        return self

    def _w_seminorm(self, coeffs, M):
        if self.lattice is None:
            return float("nan")
        phi = SpectralField(self.lattice, coeffs)
        low = project(phi, BandSpec(M, "low"), self.nu, self.a).norm()
        if low == 0:
            return float("nan")
        high = project(phi, BandSpec(M, "high"), self.nu, self.a)
        return shifted_seminorm(high, self.gamma, M + self.k0, self.nu, self.a) / low

    def median_path(self, n):
        """Skeleton median ``M_t`` at grid indices ``0..n-1``."""
        out = np.empty(n, dtype=np.int64)
        for j, (s, M) in enumerate(self.segments):
            e = self.segments[j + 1][0] if j + 1 < len(self.segments) else n
            out[s:e] = M
        return out


def run_skeleton(shells, dt, delta=0.5, thresholds=None, fields=None, lattice=None, **kw):
    """Offline convenience wrapper: the machine after consuming ``shells``."""
    mach = SkeletonMachine(dt, delta, thresholds, lattice=lattice, **kw)
    mach.feed(shells, fields)
    return mach.finish()


# ---------------------------------------------------------------- statistics

def record_violations(records, dt):
    """Counts of jump records breaking the pathwise skeleton invariants."""
    out = {"decrement_gt_1": 0, "below_median": 0, "gap_gt_3": 0, "A_not_decrement_1": 0,
           "dilution_exit_gt_E": 0}
    E = np.sqrt(1 / 16 + (1 + 1 / 16) * 1.5 ** 2)
    for r in records:
        out["dilution_exit_gt_E"] += int(r.marker == "D" and r.wgeq_at_S > E)
        out["decrement_gt_1"] += r.M_next < r.M_i - 1
        out["below_median"] += r.M_next < r.median_at_jump
        out["gap_gt_3"] += r.T_next - r.T_i > 3 + dt + 1e-9
        out["A_not_decrement_1"] += r.event == "A" and r.M_next != r.M_i - 1
    return out


def stopping_time_stats(records, eps=(0.01, 0.1, 0.5), dt=0.0, t_fit=1.0, bins="auto"):
    """Summary of jump gaps, event mix and the tail of ``P(T_j <= t)`` in ``j``."""
    if not records:
        raise ValueError("need at least one jump record")
    gaps = np.array([r.T_next - r.T_i for r in records])
    dM = np.array([r.M_next - r.M_i for r in records])
    counts, edges = np.histogram(gaps, bins=1 if len(gaps) == 1 else bins)
    by_path = {}
    for r in records:
        by_path.setdefault(r.path, []).append(r.T_next)
    jmax = max(len(v) for v in by_path.values())
    p = np.array([np.mean([len(v) > j and v[j] <= t_fit for v in by_path.values()])
                  for j in range(jmax)])
    good = p > 0
    rate = float("nan")
    if good.sum() >= 2:
        js = np.arange(jmax)[good]
        rate = float(-np.polyfit(js, np.log(p[good]), 1)[0])
    return {
        "n_records": len(records),
        "hist_counts": counts.tolist(),
        "hist_edges": edges.tolist(),
        "max_gap": float(gaps.max()),
        "max_gap_ok": bool(gaps.max() <= 3 + dt + 1e-12),
        "p_gap_gt": {float(e): float(np.mean(gaps > e)) for e in eps},
        "fraction_A": float(np.mean([r.event == "A" for r in records])),
        "mean_dM": float(dM.mean()),
        "p_jump_by_t": p.tolist(),
        "tail_rate": rate,
    }


@dataclass(frozen=True)
class DriftReport:
    slope: float
    intercept: float
    residual_var: float
    bound: float
    passed: bool
    n: int


def dissipation_diagnostic(shells, L, beta, dt, nu_min=1.0, a=1.0, tol=0.1):
    """Regress increments of ``||w||^2`` on ``||w||^2 dt`` and ``dt``.

    ``shells`` is a grid-time segment inside ``[t0, sigma_geq_beta]``.  The
    check passes when the fitted drift ``slope * X + intercept`` stays below
    ``-2 nu_min gap(L) (1 - tol) X + max(intercept, 0) (1 + tol)`` over the
    observed range of ``X = ||w||^2``.
    """
    shells = np.asarray(shells, dtype=float)
    if len(shells) < 51:
        raise ValueError("segment too short (need at least 50 steps)")
    low, geq, high = band_masses(shells, L)
    if np.any(low <= 0):
        raise WUndefined("w undefined inside the segment")
    if np.any(geq[:-1] >= beta * beta * low[:-1]):
        raise ValueError("segment leaves the window before sigma_geq")
    X = high / low
    dX = np.diff(X)
    A = np.column_stack([X[:-1] * dt, np.full(len(dX), dt)])
    coef, *_ = np.linalg.lstsq(A, dX, rcond=None)
    s, c = float(coef[0]), float(coef[1])
    resid = dX - A @ coef
    bound = -2.0 * nu_min * gap(L, a)
    lhs = s * X + c
    rhs = bound * (1 - tol) * X + max(c, 0.0) * (1 + tol)
    scale = np.abs(X).max() * abs(bound) + abs(c) + 1e-300
    ok = bool(np.all(lhs <= rhs + 1e-9 * scale))
    return DriftReport(s, c, float(resid.var() / dt), bound, ok, len(dX))
