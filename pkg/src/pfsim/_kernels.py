"""Compiled inner loop for ensemble time stepping."""
import numpy as np
from numba import njit

# fast-math without "arcp": division by the norm must stay a true division
FLAGS = {"nnan", "ninf", "nsz", "contract", "reassoc", "afn"}


@njit(cache=True, nogil=True, fastmath=FLAGS, inline="always")
def _accumulate(pr, pi, ur, ui, xr, xi, l, rptr, rj, rt, rlen):
    """``p[j] += x * u[half[j] - l]`` over the runs of shift ``l``."""
    for e in range(rptr[l], rptr[l + 1]):
        j0 = rj[e]
        t0 = rt[e]
        for q in range(rlen[e]):
            vr = ur[t0 + q]
            vi = ui[t0 + q]
            pr[j0 + q] += xr * vr - xi * vi
            pi[j0 + q] += xr * vi + xi * vr


@njit(cache=True, nogil=True, fastmath=FLAGS)
def advance(u, logr, draws, alpha, beta, idx, partner, is_zero, offset, scale,
            rptr, rj, rt, rlen, half, neg, zero_index, decay, shell, out_shell, want_shell,
            stride, out_u, out_logr):
    """Advance ``P`` paths by ``S`` steps in place.

    ``u`` is ``(P, m, n)`` with unit norm, ``draws`` is ``(P, S, n_draws)``.
    ``logr`` ``(P,)`` accumulates the log of the renormalization factors.
    When ``want_shell`` the mass per shell (``shell`` maps each coefficient
    to its shell) after every step goes to ``out_shell`` ``(P, S, n_shells)``.
    With ``stride > 0`` the field and logr after every ``stride``-th step go
    to ``out_u`` and ``out_logr``.  The shift table is passed compressed:
    for lattice mode ``l``, entries ``ptr[l]:ptr[l+1]`` of ``cols``/``src``
    list the half-lattice slots ``j`` and source modes ``half[j] - l`` that
    stay on the lattice.  Returns the index of the first path whose
    field vanished, or -1.
    """
    P, m, n = u.shape
    S = draws.shape[1]
    R = idx.shape[0]
    H = half.shape[0]
    zr = np.empty(R)
    zi = np.empty(R)
    # noise product on half-lattice modes, split into real and imaginary parts
    pr = np.empty((m, H))
    pi = np.empty((m, H))
    ur = np.empty((m, n))
    ui = np.empty((m, n))
    for p in range(P):
        for a in range(m):
            for k in range(n):
                ur[a, k] = u[p, a, k].real
                ui[a, k] = u[p, a, k].imag
        lr = logr[p]
        acc = 1.0
        for s in range(S):
            for r in range(R):
                o = offset[r]
                if is_zero[r]:
                    zr[r] = scale[r] * draws[p, s, o]
                    zi[r] = 0.0
                else:
                    zr[r] = scale[r] * draws[p, s, o]
                    zi[r] = scale[r] * draws[p, s, o + 1]
            for a in range(m):
                for j in range(H):
                    pr[a, j] = 0.0
                    pi[a, j] = 0.0
            # psi[a, k] = sum_l sum_b u[b, k - l] dB[a, b, l]
            for r in range(R):
                a = alpha[r]
                b = beta[r]
                xr = zr[r]
                xi = zi[r]
                _accumulate(pr[a], pi[a], ur[b], ui[b], xr, xi, idx[r], rptr, rj, rt, rlen)
                if not is_zero[r]:
                    _accumulate(pr[a], pi[a], ur[b], ui[b], xr, -xi, partner[r], rptr, rj, rt, rlen)
            tot = 0.0
            for a in range(m):
                for j in range(H):
                    k = half[j]
                    g = decay[a, k]
                    vr = (ur[a, k] + pr[a, j]) * g
                    if k == zero_index:
                        vi = 0.0
                        tot += vr * vr
                    else:
                        vi = (ui[a, k] + pi[a, j]) * g
                        tot += 2.0 * (vr * vr + vi * vi)
                    pr[a, j] = vr
                    pi[a, j] = vi
            if tot == 0.0:
                logr[p] = lr + np.log(acc)
                return p
            nrm = np.sqrt(tot)
            # divide rather than multiply by 1 / nrm: a single-mode field then stays exactly unit
            for a in range(m):
                for j in range(H):
                    k = half[j]
                    vr = pr[a, j] / nrm
                    vi = pi[a, j] / nrm
                    ur[a, k] = vr
                    ui[a, k] = vi
                    q = neg[k]
                    ur[a, q] = vr
                    ui[a, q] = -vi
            # defer the log; a product of 32 step norms cannot leave double range
            acc *= nrm
            snap = stride > 0 and (s + 1) % stride == 0
            if snap or (s & 31) == 31 or acc < 1e-150 or acc > 1e150:
                lr += np.log(acc)
                acc = 1.0
            if want_shell:
                for b in range(out_shell.shape[2]):
                    out_shell[p, s, b] = 0.0
                for a in range(m):
                    for k in range(n):
                        out_shell[p, s, shell[a, k]] += ur[a, k] * ur[a, k] + ui[a, k] * ui[a, k]
            if snap:
                j = (s + 1) // stride - 1
                out_logr[p, j] = lr
                for a in range(m):
                    for k in range(n):
                        out_u[p, j, a, k] = ur[a, k] + 1j * ui[a, k]
        logr[p] = lr + np.log(acc)
        for a in range(m):
            for k in range(n):
                u[p, a, k] = ur[a, k] + 1j * ui[a, k]
    return -1
