"""Angular observables: radial split, quartic noise form, corrector and FK integrand."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import SpectralField
from .noise import correlation_tensors


@dataclass(frozen=True)
class FkSample:
    """Drift of ``d log r`` at one angular state.

    ``integrand = dissipation + corrector / 2 + drift_shift``; the shift is
    nonzero only for the Stratonovich-corrected drift form.
    """

    t: float
    dissipation: float
    corrector: float
    integrand: float
    drift_shift: float = 0.0


def decompose(u):
    """Split ``u`` into its norm and unit direction."""
    r = u.norm()
    if r == 0:
        raise ValueError("cannot decompose the zero field")
    return r, u * (1.0 / r)


def _coeffs(phi):
    return phi.coeffs if isinstance(phi, SpectralField) else np.asarray(phi)


def product_coeffs(c, lattice, max_bytes=64e6):
    """``q[..., a, g, k] = sum_l c[a, l] c[g, k - l]`` truncated to the lattice.

    ``c`` has shape ``(..., m, n)``.
    """
    c = np.asarray(c, dtype=complex)
    lead = c.shape[:-2]
    m, n = c.shape[-2:]
    flat = c.reshape(-1, m, n)
    table = lattice.shift_table
    ext = np.concatenate([flat, np.zeros(flat.shape[:-1] + (1,), dtype=complex)], axis=-1)
    out = np.empty((flat.shape[0], m, m, n), dtype=complex)
    step = max(1, int(max_bytes // (16 * m * n * n)))
    for s in range(0, flat.shape[0], step):
        g = ext[s:s + step][:, :, table]          # (B, m, l, k) = c[g, k - l]
        out[s:s + step] = np.einsum("bal,bglk->bagk", flat[s:s + step], g)
    return out.reshape(lead + (m, m, n))


def quartic_batch(c, spec):
    q = product_coeffs(c, spec.lattice)
    if spec.diagonal:
        # real fields give q(-k) = conj(q(k))
        return np.einsum("agk,...agk->...", spec.coeffs, np.abs(q) ** 2)
    qn = q[..., spec.lattice.neg]
    return np.einsum("abgek,...agk,...bek->...", spec.coeffs, qn, q).real


def quartic_form(pi, spec):
    """``sum Gamma^{a,b}_{g,e,k} q^{ag}(-k) q^{be}(k)`` for a unit field ``pi``."""
    return float(quartic_batch(_coeffs(pi), spec))


def _tru_term(c, tru):
    gram = np.einsum("...ak,...bk->...ab", c, np.conj(c)).real
    return np.einsum("ab,...ab->...", tru, gram)


def corrector_batch(c, spec, tensors=None):
    tensors = correlation_tensors(spec) if tensors is None else tensors
    return _tru_term(c, tensors.TruLambda) - 2.0 * quartic_batch(c, spec)


def corrector(pi, spec):
    """Ito-Stratonovich corrector ``<pi, pi Tr^u Lambda> - 2 * quartic``."""
    return float(corrector_batch(_coeffs(pi), spec))


def dissipation_batch(c, params):
    rate = params.nu_array[:, None] * params.zeta[None, :]
    return -np.einsum("ak,...ak->...", rate, np.abs(c) ** 2)


def fk_batch(c, params, spec, tensors=None):
    """``(dissipation, corrector, shift)`` arrays for fields ``c`` of shape ``(..., m, n)``."""
    c = np.asarray(c)
    tensors = correlation_tensors(spec) if tensors is None else tensors
    diss = dissipation_batch(c, params)
    corr = corrector_batch(c, spec, tensors)
    if params.drift_form == "stratonovich-corrected":
        tr = np.diag(tensors.TrLambda)
        shift = -0.5 * np.einsum("a,...ak->...", tr, np.abs(c) ** 2)
    else:
        shift = np.zeros_like(diss)
    return diss, corr, shift


def fk_integrand(pi, params, spec, t=0.0):
    """Drift ``<pi, L pi> + C(pi) / 2`` of the log radius at ``pi``."""
    diss, corr, shift = (float(v) for v in fk_batch(_coeffs(pi), params, spec))
    return FkSample(t, diss, corr, diss + 0.5 * corr + shift, shift)
