"""Truncated Fourier lattice, frequency bands and Sobolev-type norms.

Fields are real valued on the unit-volume torus, so a field is stored as the
full set of complex coefficients over the lattice ``{k : |k| <= K}`` with the
Hermitian pairing ``c(-k) = conj(c(k))`` maintained by every operation here.
Parseval holds without any ``2 pi`` factors.

Frequency levels are per component: at integer level ``L`` component ``alpha``
uses the threshold ``L_alpha = nu_alpha ** (-1 / (2 a)) * L``.  All band
membership tests go through :func:`threshold` so that projections, shell
indices and seminorms agree to the last bit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

BANDS = ("low", "central", "high", "leq", "geq")


def eigenvalue(k, a=1.0):
    """Eigenvalue ``|k| ** (2 a)`` of the fractional Laplacian at mode ``k``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return float(np.sqrt(np.sum(k * k)) ** (2 * a))


def gap(L, a=1.0):
    """One-dimensional spectral gap ``(L + 1) ** (2 a) - L ** (2 a)``."""
    if L < 0:
        raise ValueError("L must be >= 0")
    return float((L + 1) ** (2 * a) - L ** (2 * a))


def threshold(L, nu, a):
    """Per-component frequency threshold ``L * nu ** (-1/(2a))``."""
    return L * np.asarray(nu, dtype=float) ** (-1.0 / (2 * a))


@dataclass(frozen=True)
class Lattice:
    """Integer modes ``k`` in ``Z^d`` with ``|k| <= K``, in lexicographic order."""

    d: int
    K: int

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ValueError("lattice needs d >= 1 and K >= 1")

    @cached_property
    def modes(self) -> np.ndarray:
        rng = range(-self.K, self.K + 1)
        pts = [k for k in itertools.product(rng, repeat=self.d)
               if sum(c * c for c in k) <= self.K * self.K]
        return np.array(pts, dtype=np.int64).reshape(-1, self.d)

    @property
    def size(self) -> int:
        return len(self.modes)

    @cached_property
    def norms(self) -> np.ndarray:
        m = self.modes.astype(float)
        return np.sqrt(np.sum(m * m, axis=1))

    @cached_property
    def index(self) -> dict:
        return {tuple(int(c) for c in k): i for i, k in enumerate(self.modes)}

    @cached_property
    def zero_index(self) -> int:
        return self.index[(0,) * self.d]

    @cached_property
    def neg(self) -> np.ndarray:
        """Index of ``-k`` for every stored ``k``."""
        return np.array([self.index[tuple(int(-c) for c in k)] for k in self.modes])

    @cached_property
    def half(self) -> np.ndarray:
        """Representatives of the pairs ``{k, -k}``: zero plus lexicographically positive modes."""
        return np.array([i for i, k in enumerate(self.modes) if tuple(k) >= (0,) * self.d
                         and (not np.any(k) or k[np.flatnonzero(k)[0]] > 0)])

    def find(self, k) -> int:
        """Storage index of mode ``k`` (``KeyError`` if outside the lattice)."""
        return self.index[tuple(int(c) for c in np.atleast_1d(k))]

    @cached_property
    def shift_table(self) -> np.ndarray:
        """``table[l, k]`` is the index of ``k - l`` or ``-1`` when off the lattice."""
        n = self.size
        table = np.full((n, n), -1, dtype=np.int32)
        for li, l in enumerate(self.modes):
            for ki, k in enumerate(self.modes):
                j = self.index.get(tuple(int(c) for c in k - l))
                if j is not None:
                    table[li, ki] = j
        return table


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of an ``m``-component real field.

    ``coeffs`` has shape ``(m, lattice.size)``.
    """

    lattice: Lattice
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim == 1:
            c = c[None, :]
        if c.shape[1] != self.lattice.size:
            raise ValueError("coefficient array does not match the lattice")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def energies(self) -> np.ndarray:
        """``|c^alpha(k)|^2`` per component and mode."""
        return np.abs(self.coeffs) ** 2

    def is_hermitian(self) -> bool:
        c = self.coeffs
        z = self.lattice.zero_index
        return bool(np.array_equal(c[:, self.lattice.neg], np.conj(c))
                    and np.all(c[:, z].imag == 0))

    def __add__(self, other):
        return SpectralField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.lattice, self.coeffs - other.coeffs)

    def __mul__(self, s):
        return SpectralField(self.lattice, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.lattice, -self.coeffs)

    def to_array(self) -> np.ndarray:
        """Interleaved ``(re, im)`` doubles in component-major lexicographic order."""
        c = self.coeffs.ravel()
        return np.column_stack([c.real, c.imag]).ravel()

    @classmethod
    def from_array(cls, lattice, m, data):
        data = np.asarray(data, dtype=float).reshape(-1, 2)
        return cls(lattice, (data[:, 0] + 1j * data[:, 1]).reshape(m, lattice.size))


def hermitize(lattice, coeffs):
    """Project arbitrary coefficients onto the real-field (Hermitian) subspace."""
    c = np.asarray(coeffs, dtype=complex)
    return 0.5 * (c + np.conj(c[..., lattice.neg]))


def mode_field(lattice, k, m=1, component=0, weight=1.0):
    """Real unit-norm field carrying ``weight`` of mass on the pair ``{k, -k}``.

    For ``k = 0`` the coefficient is ``sqrt(weight)``; otherwise each of the
    two coefficients is ``sqrt(weight / 2)``, i.e. a cosine wave.
    """
    c = np.zeros((m, lattice.size), dtype=complex)
    i = lattice.find(k)
    j = lattice.neg[i]
    if i == j:
        c[component, i] = np.sqrt(weight)
    else:
        c[component, i] = c[component, j] = np.sqrt(weight / 2)
    return SpectralField(lattice, c)


def zeros(lattice, m=1):
    return SpectralField(lattice, np.zeros((m, lattice.size), dtype=complex))


def random_unit_field(lattice, m, rng, decay=0.0):
    """Random real unit field with complex Gaussian coefficients scaled by ``(1+|k|)^-decay``."""
    z = rng.standard_normal((m, lattice.size)) + 1j * rng.standard_normal((m, lattice.size))
    z = z * (1.0 + lattice.norms) ** (-decay)
    c = hermitize(lattice, z)
    c[:, lattice.zero_index] = c[:, lattice.zero_index].real
    f = SpectralField(lattice, c)
    return f * (1.0 / f.norm())


@dataclass(frozen=True)
class BandSpec:
    """Frequency band selector at integer level ``L``."""

    L: int
    band: str = "low"

    def __post_init__(self):
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")
        if self.L < 0:
            raise ValueError("band level must be >= 0")


def band_mask(lattice, L, band, nu, a):
    """Boolean mask of shape ``(m, n_modes)`` selecting the band at level ``L``."""
    r = lattice.norms[None, :]
    lo = threshold(L, nu, a).reshape(-1, 1)
    hi = threshold(L + 1, nu, a).reshape(-1, 1)
    if band == "low":
        return r <= lo
    if band == "central":
        return (r > lo) & (r <= hi)
    if band == "high":
        return r > hi
    if band == "leq":
        return r <= hi
    if band == "geq":
        return r > lo
    raise ValueError(f"unknown band {band!r}")


def project(phi, band, nu=1.0, a=1.0):
    """Zero every coefficient of ``phi`` outside ``band`` (a :class:`BandSpec`)."""
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (phi.m,))
    mask = band_mask(phi.lattice, band.L, band.band, nu, a)
    return SpectralField(phi.lattice, np.where(mask, phi.coeffs, 0))


def shell_index(lattice, nu, a):
    """Smallest integer level ``L >= 0`` whose low band contains each (component, mode).

    Level-``L`` bands are sums over shells: low is shells ``<= L``, central is
    shell ``L + 1`` and high is shells ``>= L + 2``.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    r = lattice.norms
    out = np.empty((len(nu), lattice.size), dtype=np.int64)
    for al, n in enumerate(nu):
        s = n ** (-1.0 / (2 * a))
        guess = np.maximum(np.ceil(r / s).astype(np.int64) - 1, 0)
        # float rounding of r / s: step up until the exact comparison used by band_mask holds
        while True:
            bad = r > guess * s
            if not bad.any():
                break
            guess = guess + bad
        # and step down while the previous level already contains the mode
        while True:
            can = (guess > 0) & (r <= (guess - 1) * s)
            if not can.any():
                break
            guess = guess - can
        out[al] = guess
    return out


def shell_energies(phi, nu=1.0, a=1.0):
    """Mass per shell; index ``b`` holds modes whose shell index is ``b``."""
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (phi.m,))
    idx = shell_index(phi.lattice, nu, a)
    return np.bincount(idx.ravel(), weights=phi.energies().ravel())


def band_norms(shells, L):
    """``(low, central, high)`` L2 norms at level ``L`` from per-shell masses.

    ``shells`` may be 1-D or have shells along the last axis.
    """
    shells = np.asarray(shells, dtype=float)
    n = shells.shape[-1]
    if L < 0:
        low = np.zeros(shells.shape[:-1])
    else:
        low = shells[..., :min(L + 1, n)].sum(axis=-1)
    cen = shells[..., L + 1] if 0 <= L + 1 < n else np.zeros(shells.shape[:-1])
    high = shells[..., max(L + 2, 0):].sum(axis=-1)
    return np.sqrt(low), np.sqrt(cen), np.sqrt(high)


def median_from_shells(shells):
    """Energy median from per-shell masses; vectorized over leading axes."""
    shells = np.asarray(shells, dtype=float)
    cum = np.cumsum(shells, axis=-1)
    total = cum[..., -1:]
    n = shells.shape[-1]
    # level M: low = cum[M], geq = total - cum[M]; compare squared norms
    levels = np.arange(1, n + 1)
    low = cum[..., np.minimum(levels, n - 1)]
    ok = (total - low) <= low
    first = np.argmax(ok, axis=-1)
    return levels[first]


def energy_median(phi, nu=1.0, a=1.0):
    """Smallest level ``M >= 1`` with ``||P_geq(M) phi|| <= ||P_low(M) phi||``."""
    if phi.norm() == 0:
        raise ValueError("median undefined for the zero field")
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (phi.m,))
    M = 1
    while True:
        geq = project(phi, BandSpec(M, "geq"), nu, a).norm()
        low = project(phi, BandSpec(M, "low"), nu, a).norm()
        if geq <= low:
            return M
        M += 1


def shifted_weights(lattice, gamma, L, nu=1.0, a=1.0, m=None):
    """Weights ``(1 + |k| - L_alpha) ** (2 gamma)`` on ``|k| > L_alpha``, zero elsewhere."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if m is not None:
        nu = np.broadcast_to(nu, (m,))
    r = lattice.norms[None, :]
    La = threshold(L, nu, a).reshape(-1, 1)
    above = r > La
    return np.where(above, (1.0 + np.where(above, r - La, 0.0)) ** (2 * gamma), 0.0)


def shifted_seminorm(phi, gamma, L, nu=1.0, a=1.0):
    """Shifted Sobolev seminorm summing ``(1+|k|-L_alpha)^{2 gamma} |c|^2`` over ``|k| > L_alpha``."""
    if gamma < 0 or L < 0:
        raise ValueError("need gamma >= 0 and L >= 0")
    w = shifted_weights(phi.lattice, gamma, L, nu, a, m=phi.m)
    return float(np.sqrt(np.sum(w * phi.energies())))


def sobolev_norm(phi, gamma):
    w = (1.0 + phi.lattice.norms) ** (2 * gamma)
    return float(np.sqrt(np.sum(w[None, :] * phi.energies())))
