import numpy as np
import pytest

from pfsim.lattice import (BandSpec, Lattice, SpectralField, energy_median, eigenvalue, gap,
                           median_from_shells, mode_field, project, random_unit_field,
                           shell_energies, shifted_seminorm, sobolev_norm, threshold)


def two_mode(lat, k1, p1, k2, p2):
    c = np.sqrt(p1) * mode_field(lat, k1).coeffs + np.sqrt(p2) * mode_field(lat, k2).coeffs
    return SpectralField(lat, c)


def test_eigenvalue_and_gap():
    assert eigenvalue(3, 1.0) == 9
    assert gap(0, 1.0) == 1
    assert gap(1, 2.0) == 15


def test_lattice_ordering_and_pairing():
    lat = Lattice(2, 3)
    modes = lat.modes
    assert np.all(np.sum(modes ** 2, axis=1) <= 9)
    assert [tuple(m) for m in modes] == sorted(tuple(m) for m in modes)
    assert np.array_equal(modes[lat.neg], -modes)
    assert lat.modes[lat.zero_index].tolist() == [0, 0]
    # half-lattice representatives: one of each +-k pair plus zero
    assert len(lat.half) == (lat.size + 1) // 2


def test_shift_table():
    lat = Lattice(1, 4)
    for i, l in enumerate(lat.modes[:, 0]):
        for j, k in enumerate(lat.modes[:, 0]):
            t = lat.shift_table[i, j]
            if abs(k - l) <= 4:
                assert lat.modes[t, 0] == k - l
            else:
                assert t == -1


def test_mode_field_is_real_unit():
    lat = Lattice(2, 4)
    f = mode_field(lat, (1, 2), m=2, component=1)
    assert f.is_hermitian()
    assert f.norm() == pytest.approx(1.0, abs=1e-15)
    assert np.all(f.coeffs[0] == 0)


def test_threshold_component_scaling():
    # nu = 16, a = 1: L_alpha = 2 * 16^-1/2 = 0.5, only k = 0 is low
    lat = Lattice(1, 4)
    phi = random_unit_field(lat, 2, np.random.default_rng(0))
    low = project(phi, BandSpec(2, "low"), (1.0, 16.0), 1.0)
    kept = lat.modes[np.abs(low.coeffs[1]) > 0, 0]
    assert kept.tolist() == [0]
    assert threshold(2, 16.0, 1.0) == pytest.approx(0.5)


def test_band_examples():
    lat = Lattice(1, 8)
    e5 = mode_field(lat, (5,))
    assert np.array_equal(project(e5, BandSpec(5, "low")).coeffs, e5.coeffs)
    assert np.array_equal(project(e5, BandSpec(4, "geq")).coeffs, e5.coeffs)
    assert project(e5, BandSpec(5, "geq")).norm() == 0


def test_band_completeness_and_nesting(rng):
    lat = Lattice(2, 5)
    nu, a = (1.0, 2.5), 1.5
    for _ in range(10):
        phi = random_unit_field(lat, 2, rng, 0.3)
        for L in range(0, 6):
            parts = [project(phi, BandSpec(L, b), nu, a) for b in ("low", "central", "high")]
            assert np.array_equal(parts[0].coeffs + parts[1].coeffs + parts[2].coeffs, phi.coeffs)
            assert sum(p.norm() ** 2 for p in parts) == pytest.approx(1.0, rel=1e-12)
            if L >= 1:
                assert np.array_equal(project(phi, BandSpec(L, "leq"), nu, a).coeffs,
                                      project(phi, BandSpec(L + 1, "low"), nu, a).coeffs)
                assert np.array_equal(project(phi, BandSpec(L, "geq"), nu, a).coeffs,
                                      project(phi, BandSpec(L - 1, "high"), nu, a).coeffs)
            once = project(phi, BandSpec(L, "central"), nu, a)
            assert np.array_equal(project(once, BandSpec(L, "central"), nu, a).coeffs, once.coeffs)


def test_shifted_seminorm_examples(rng):
    lat = Lattice(1, 10)
    assert shifted_seminorm(mode_field(lat, (5,)), 0.5, 3) == pytest.approx(np.sqrt(3))
    assert shifted_seminorm(mode_field(lat, (2,)), 1.0, 3) == 0.0
    with pytest.raises(ValueError):
        shifted_seminorm(mode_field(lat, (2,)), -1.0, 3)


def test_half_identity(rng):
    # |phi|^2_{1/2,L} = |P phi|^2_{H^1/2} - sum_alpha L_alpha |P phi^alpha|^2, P = geq band at L
    lat = Lattice(2, 6)
    nu, a = (0.5, 3.0), 2.0
    for _ in range(20):
        phi = random_unit_field(lat, 2, rng, 0.4)
        L = int(rng.integers(0, 6))
        P = project(phi, BandSpec(L, "geq"), nu, a)
        La = threshold(L, np.array(nu), a)
        rhs = sobolev_norm(P, 0.5) ** 2 - np.sum(La * np.sum(P.energies(), axis=1))
        assert shifted_seminorm(phi, 0.5, L, nu, a) ** 2 == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_sobolev_examples(rng):
    lat = Lattice(1, 8)
    assert sobolev_norm(mode_field(lat, (0,)), 2.0) == pytest.approx(1.0)
    assert sobolev_norm(mode_field(lat, (3,)), 1.0) == pytest.approx(4.0)
    phi = random_unit_field(lat, 1, rng)
    assert sobolev_norm(phi, 0.0) == pytest.approx(phi.norm())


def test_energy_median_examples():
    lat = Lattice(1, 10)
    assert energy_median(mode_field(lat, (0,))) == 1
    assert energy_median(mode_field(lat, (5,))) == 5
    assert energy_median(two_mode(lat, (1,), 0.4, (7,), 0.6)) == 7
    with pytest.raises(ValueError, match="median undefined"):
        energy_median(SpectralField(lat, np.zeros((1, lat.size), complex)))


def test_median_from_shells_matches_definition(rng):
    lat = Lattice(2, 6)
    nu, a = (1.0, 0.3), 1.0
    for _ in range(30):
        phi = random_unit_field(lat, 2, rng, rng.uniform(0, 2))
        assert median_from_shells(shell_energies(phi, nu, a)) == energy_median(phi, nu, a)


def test_field_serialization_roundtrip(rng):
    lat = Lattice(2, 3)
    phi = random_unit_field(lat, 2, rng)
    back = SpectralField.from_array(lat, 2, phi.to_array())
    assert np.array_equal(back.coeffs, phi.coeffs)
