"""Spatially homogeneous matrix-valued noise in Fourier coordinates.

The noise ``W^alpha_beta(x) = sum_k e_k B^{alpha,beta}_k`` is described by its
coefficient tensor ``Gamma``.  Diagonal forms store ``Gamma^alpha_{beta,k}``
as an array of shape ``(m, m, n_modes)``; the general form stores the full
``Gamma^{alpha,alpha'}_{beta,beta',k}`` with shape ``(m, m, m, m, n_modes)``
indexed ``[alpha, alpha', beta, beta', k]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

FORMS = ("diagonal-parametric", "diagonal-table", "general-table")


class UnsupportedNoise(NotImplementedError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Noise coefficients ``Gamma`` on a given lattice.

    Build instances with :meth:`parametric`, :meth:`table`, :meth:`general`
    or :meth:`zero`; ``coeffs`` is already truncated at ``K_noise``.
    """

    lattice: object
    m: int
    form: str
    coeffs: np.ndarray = field(repr=False)
    K_noise: float = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown noise form {self.form!r}")
        c = np.array(self.coeffs, dtype=float)
        K_noise = self.lattice.K if self.K_noise is None else self.K_noise
        c[..., self.lattice.norms > K_noise] = 0.0
        if not np.array_equal(c, c[..., self.lattice.neg]):
            raise ValueError("noise coefficients must satisfy Gamma(-k) = Gamma(k)")
        if self.diagonal and np.any(c < 0):
            raise ValueError("diagonal noise coefficients must be nonnegative")
        if self.form == "general-table" and self.m <= 4:
            _check_psd(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "K_noise", K_noise)

    @property
    def diagonal(self) -> bool:
        return self.form != "general-table"

    @classmethod
    def parametric(cls, lattice, m=1, c=1.0, gamma0=2.5, K_noise=None):
        """``Gamma^alpha_{beta,k} = c (1 + |k|)^(-2 gamma0)`` for every pair ``(alpha, beta)``."""
        if c <= 0 or gamma0 <= 0:
            raise ValueError("parametric noise needs c > 0 and gamma0 > 0")
        g = c * (1.0 + lattice.norms) ** (-2.0 * gamma0)
        coeffs = np.broadcast_to(g, (m, m, lattice.size)).copy()
        return cls(lattice, m, "diagonal-parametric", coeffs, K_noise,
                   {"c": c, "gamma0": gamma0})

    @classmethod
    def table(cls, lattice, m, entries, K_noise=None):
        """Diagonal table from ``(alpha, beta, k..., value)`` rows; ``-k`` is filled by symmetry."""
        coeffs = np.zeros((m, m, lattice.size))
        seen = {}
        for row in entries:
            al, be = int(row[0]), int(row[1])
            k = tuple(int(v) for v in row[2:-1])
            i = lattice.find(k)
            key = (al, be, min(i, lattice.neg[i]))
            if key in seen:
                raise ValueError(f"duplicate noise entry {seen[key]} and {tuple(row)}")
            seen[key] = tuple(row)
            coeffs[al, be, i] = coeffs[al, be, lattice.neg[i]] = float(row[-1])
        return cls(lattice, m, "diagonal-table", coeffs, K_noise)

    @classmethod
    def k0_only(cls, lattice, gamma0_rate, m=1):
        """Space-independent noise: only the zero mode, rate ``gamma0_rate`` on every ``(alpha, alpha)``."""
        coeffs = np.zeros((m, m, lattice.size))
        for al in range(m):
            coeffs[al, al, lattice.zero_index] = gamma0_rate
        return cls(lattice, m, "diagonal-table", coeffs)

    @classmethod
    def zero(cls, lattice, m=1):
        return cls(lattice, m, "diagonal-table", np.zeros((m, m, lattice.size)))

    @classmethod
    def general(cls, lattice, m, coeffs, K_noise=None):
        return cls(lattice, m, "general-table", coeffs, K_noise)

    def scaled(self, s):
        return NoiseSpec(self.lattice, self.m, self.form, self.coeffs * s, self.K_noise,
                         dict(self.params))

    def full_tensor(self) -> np.ndarray:
        """``Gamma^{alpha,alpha'}_{beta,beta',k}`` with shape ``(m, m, m, m, n)``."""
        if not self.diagonal:
            return self.coeffs
        m, n = self.m, self.lattice.size
        t = np.zeros((m, m, m, m, n))
        for al in range(m):
            for be in range(m):
                t[al, al, be, be] = self.coeffs[al, be]
        return t

    @cached_property
    def layout(self):
        return _Layout(self)


def _check_psd(c):
    m, n = c.shape[0], c.shape[-1]
    for k in range(n):
        mat = c[..., k].transpose(0, 2, 1, 3).reshape(m * m, m * m)
        if np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() < -1e-12:
            raise ValueError(f"noise tensor is not positive semidefinite at mode index {k}")


class _Layout:
    """Order of Gaussian draws for one increment.

    Draws run over ``(alpha, beta)`` lexicographically, then over the
    half-lattice representatives ``k`` with ``Gamma > 0``; ``k = 0`` takes one
    real draw and every other ``k`` takes two (real, imaginary).
    """

    def __init__(self, spec):
        lat = spec.lattice
        rows = []
        if spec.diagonal:
            for al in range(spec.m):
                for be in range(spec.m):
                    for i in lat.half:
                        g = spec.coeffs[al, be, i]
                        if g > 0:
                            rows.append((al, be, i, lat.neg[i], g))
        self.alpha = np.array([r[0] for r in rows], dtype=np.int64)
        self.beta = np.array([r[1] for r in rows], dtype=np.int64)
        self.idx = np.array([r[2] for r in rows], dtype=np.int64)
        self.partner = np.array([r[3] for r in rows], dtype=np.int64)
        self.rate = np.array([r[4] for r in rows], dtype=float)
        self.is_zero = self.idx == self.partner
        self.n_draws = int(np.sum(np.where(self.is_zero, 1, 2)))
        # offset of each row's first draw
        self.offset = np.concatenate([[0], np.cumsum(np.where(self.is_zero, 1, 2))[:-1]]).astype(np.int64)

    def assemble(self, draws, dt, m, n):
        """Map standard normals of shape ``(..., n_draws)`` to increments ``(..., m, m, n)``."""
        draws = np.asarray(draws, dtype=float)
        out = np.zeros(draws.shape[:-1] + (m, m, n), dtype=complex)
        if len(self.idx) == 0:
            return out
        re = draws[..., self.offset]
        im = np.where(self.is_zero, 0.0, draws[..., np.where(self.is_zero, self.offset, self.offset + 1)])
        # k = 0 draws carry the full variance; k != 0 split it over real and imaginary parts
        scale = np.sqrt(self.rate * dt * np.where(self.is_zero, 1.0, 0.5))
        z = scale * (re + 1j * im)
        out[..., self.alpha, self.beta, self.idx] = z
        out[..., self.alpha, self.beta, self.partner] = np.conj(z)
        return out


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    """Complex increments ``dB^{alpha,beta}_k`` over the full lattice, shape ``(m, m, n)``."""

    dB: np.ndarray
    dt: float


def sample_increments(spec, dt, rng):
    """Draw one noise increment over a step of length ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not spec.diagonal:
        raise UnsupportedNoise("sampling is implemented for diagonal noise forms only")
    lay = spec.layout
    draws = rng.standard_normal(lay.n_draws)
    return NoiseIncrement(lay.assemble(draws, dt, spec.m, spec.lattice.size), dt)


@dataclass(frozen=True)
class CorrelationTensors:
    """``Lambda(0)`` and its traces; ``Lambda0[alpha, alpha', beta, beta']``."""

    Lambda0: np.ndarray
    TrLambda: np.ndarray
    TruLambda: np.ndarray
    sup_bound: float


def correlation_tensors(spec):
    full = spec.full_tensor()
    L0 = full.sum(axis=-1)
    tr = np.einsum("gabg->ab", L0)
    tru = np.einsum("ggab->ab", L0)
    gbar = np.abs(full).reshape(-1, spec.lattice.size).max(axis=0)
    return CorrelationTensors(L0, tr, tru, float(gbar.sum()))


def covariance_function(spec, x):
    """``Lambda(x)`` at physical points ``x`` of shape ``(npts, d)``; returns ``(m,m,m,m,npts)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phase = np.exp(1j * x @ spec.lattice.modes.T)
    return np.real(np.einsum("...k,pk->...p", spec.full_tensor(), phase))


@dataclass(frozen=True)
class DecayCheck:
    passed: bool
    ratio: float
    worst_mode: tuple


def check_decay(spec, gamma0, C):
    """Check ``|Gamma_k| <= C (1+|k|)^(-2 gamma0)`` over the stored modes."""
    env = C * (1.0 + spec.lattice.norms) ** (-2.0 * gamma0)
    mags = np.abs(spec.full_tensor()).reshape(-1, spec.lattice.size).max(axis=0)
    ratios = mags / env
    i = int(np.argmax(ratios))
    worst = tuple(int(v) for v in spec.lattice.modes[i])
    return DecayCheck(bool(ratios[i] <= 1.0), float(ratios[i]), worst)


def _ball(d, R):
    n = int(np.floor(R))
    axes = [np.arange(-n, n + 1)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    return pts[np.sum(pts * pts, axis=1) <= R * R + 1e-9]


def check_support_condition(A, b, K0, M_max):
    """Exhaustive check of ``1_A * 1_B(M) >= 1_B(M+b)`` for ``M = K0..M_max``.

    Returns a dict mapping each ``M`` to a bool.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.int64))
    if A.size == 0:
        raise ValueError("support set A is empty")
    d = A.shape[1]
    out = {}
    for M in range(K0, M_max + 1):
        J = _ball(d, M + b)
        diff = J[:, None, :] - A[None, :, :]
        dist2 = np.sum(diff * diff, axis=-1)
        out[M] = bool(np.all(dist2.min(axis=1) <= M * M))
    return out


def support_set(spec, alpha, beta):
    """Modes where ``Gamma^alpha_{beta,k} > 0``."""
    return spec.lattice.modes[spec.coeffs[alpha, beta] > 0]


def descent_direction(k, beta, eps):
    """Step ``l = -beta sign(k_i) e_i`` along the largest coordinate of ``k``.

    Returns ``(l, holds)`` where ``holds`` reports ``|k+l| <= |k| - beta/sqrt(d) + eps``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    d = len(k)
    i0 = int(np.argmax(np.abs(k)))
    step = np.zeros(d, dtype=np.int64)
    step[i0] = -beta if k[i0] >= 0 else beta
    lhs = np.sqrt(float(np.sum((k + step) ** 2)))
    rhs = np.sqrt(float(np.sum(k * k))) - beta / np.sqrt(d) + eps
    return step, bool(lhs <= rhs)


def descent_radius(beta, eps):
    """Radius beyond which :func:`descent_direction` always succeeds: ``beta^2 / (2 eps)``."""
    return beta * beta / (2.0 * eps)
