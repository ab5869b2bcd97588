import csv

import numpy as np
import pytest

from pfsim.integrator import ModelParams, Propagator
from pfsim.lattice import Lattice, SpectralField, mode_field, random_unit_field, shell_energies
from pfsim.median_machine import (JumpRecord, SkeletonMachine, StopRule, WUndefined, detect_stop,
                                  dissipation_diagnostic, marker, record_violations,
                                  relative_energy, run_skeleton, stopping_time_stats,
                                  write_jumps_csv)
from pfsim.noise import NoiseSpec
from pfsim.seeding import trajectory_rng

LAT = Lattice(1, 12)


def mix(*pairs):
    c = sum(mode_field(LAT, (k,), weight=w).coeffs for k, w in pairs)
    return SpectralField(LAT, c)


def shells_of(*pairs, n=14):
    s = np.zeros(n)
    for b, w in pairs:
        s[b] += w
    return s


def test_marker_examples():
    assert marker(4, mode_field(LAT, (4,))) == "C"
    assert marker(3, mode_field(LAT, (0,))) == "D"
    # central norm exactly a quarter of the low norm, with exactly representable coefficients
    c = np.zeros((1, LAT.size), dtype=complex)
    c[0, [LAT.find((1,)), LAT.find((-1,))]] = 1.0
    c[0, [LAT.find((3,)), LAT.find((-3,))]] = 0.25
    assert marker(3, SpectralField(LAT, c)) == "C"
    c[0, [LAT.find((3,)), LAT.find((-3,))]] = 0.2499
    assert marker(3, SpectralField(LAT, c)) == "D"
    with pytest.raises(ValueError):
        marker(0, mode_field(LAT, (1,)))


def test_relative_energy_examples():
    assert relative_energy(mix((0, 0.5), (2, 0.5)), 3) == (0.0, 0.0)
    w, wg = relative_energy(mix((1, 0.5), (6, 0.5)), 3)
    assert (w, wg) == pytest.approx((1.0, 1.0))
    w, wg = relative_energy(mix((1, 0.8), (4, 0.2)), 3)
    assert w == 0.0 and wg == pytest.approx(0.5)
    with pytest.raises(WUndefined):
        relative_energy(mode_field(LAT, (9,)), 3)


def test_detect_stop_immediate_and_cap():
    s = np.repeat(shells_of((0, 0.9), (6, 0.1))[None], 50, axis=0)
    assert detect_stop(StopRule("tau_less", 3, 0.5), s, 10, 20) == (10, True)
    # ||w_geq|| = 1 < 3/2 throughout: the cap is returned
    s = np.repeat(shells_of((0, 0.5), (6, 0.5))[None], 50, axis=0)
    assert detect_stop(StopRule("sigma_geq", 3, 1.5), s, 5, 20) == (25, False)
    assert detect_stop(StopRule("sigma_geq", 3, 1.5), s, 40, 20) is None
    assert detect_stop(StopRule("sigma_D", 3, 0.25), s, 5, 20) == (5, True)


def test_detect_stop_deterministic_decay_fires_early():
    p = ModelParams(K=12, dt=1e-3)
    pi0 = mix((1, 0.2), (10, 0.8))
    u = pi0.coeffs[None].copy()
    out = [shell_energies(pi0)[None]]
    Propagator(p, NoiseSpec.zero(p.lattice)).run(u, np.zeros(1), [np.random.default_rng(0)], 1000,
                                                 want_shells=True,
                                                 callback=lambda s, sh, a, b: out.append(sh[0]))
    idx, fired = detect_stop(StopRule("tau_less", 3, 0.5), np.concatenate(out), 0, 1000)
    # ||w||^2 = 4 exp(-2 (100 - 1) t) reaches 1/4 at t = log(16) / 198
    assert fired and abs(idx * 1e-3 - np.log(16) / 198) <= 1e-3


def test_detect_stop_undefined_window():
    s = np.repeat(shells_of((6, 1.0))[None], 10, axis=0)
    with pytest.raises(WUndefined):
        detect_stop(StopRule("sigma_geq", 3, 1.5), s, 0, 5)


def machine_on(first, later, n=3000, dt=1e-3):
    s = np.concatenate([first[None], np.repeat(later[None], n, axis=0)])
    return run_skeleton(s, dt)


def test_update_rule_caps_downward_jump():
    mc = machine_on(shells_of((5, 1.0)), shells_of((2, 1.0)))
    r = mc.records[0]
    assert (r.M_i, r.median_at_jump, r.M_next) == (5, 2, 4)
    assert r.event == "A" and r.marker == "D" and r.T_next == pytest.approx(0.5)


def test_update_rule_upward_and_equal():
    r = machine_on(shells_of((5, 1.0)), shells_of((0, 0.4), (7, 0.6))).records[0]
    assert (r.M_i, r.M_next, r.event) == (5, 7, "B")
    assert r.T_next == pytest.approx(1.5)
    r = machine_on(shells_of((0, 0.45), (5, 0.55)), shells_of((0, 0.45), (5, 0.55))).records[0]
    assert (r.M_i, r.M_next, r.event) == (5, 5, "B")
    assert r.T_next == pytest.approx(2.5)


def test_streaming_matches_offline():
    rng = np.random.default_rng(4)
    s = np.abs(rng.standard_normal((6000, 14))) * np.exp(-0.4 * np.arange(14))
    s /= s.sum(axis=1, keepdims=True)
    off = run_skeleton(s, 1e-3)
    mc = SkeletonMachine(1e-3)
    for a in range(0, 6000, 777):
        mc.feed(s[a:a + 777])
    mc.finish()
    assert [r.T_next for r in off.records] == [r.T_next for r in mc.records]
    assert np.array_equal(off.median_path(6000), mc.median_path(6000))


def test_delta_validation():
    with pytest.raises(ValueError):
        SkeletonMachine(1e-3, delta=1.0)


def noisy_machines(P=8, S=20_000, seed=2):
    p = ModelParams(K=16, dt=1e-3)
    spec = NoiseSpec.parametric(p.lattice, 1, 1.0, 2.0, K_noise=8)
    pi0 = mode_field(p.lattice, (12,))
    u = np.repeat(pi0.coeffs[None], P, axis=0)
    mcs = [SkeletonMachine(p.dt, lattice=p.lattice, path=i) for i in range(P)]
    for i, mc in enumerate(mcs):
        mc.feed(shell_energies(pi0)[None], u[i:i + 1])

    def cb(start, sh, snaps, slog):
        for i, mc in enumerate(mcs):
            mc.feed(sh[i], snaps[i])

    Propagator(p, spec).run(u, np.zeros(P), [trajectory_rng(seed, i) for i in range(P)], S,
                            stride=1, want_shells=True, callback=cb)
    return [mc.finish() for mc in mcs]


@pytest.fixture(scope="module")
def machines():
    return noisy_machines()


def test_skeleton_pathwise_invariants(machines):
    recs = [r for mc in machines for r in mc.records]
    assert len(recs) > 50
    assert all(v == 0 for v in record_violations(recs, 1e-3).values())
    assert all(not mc.band_violations for mc in machines)
    assert all(mc.aborted is None for mc in machines)
    for mc in machines:
        path = mc.median_path(20_001)
        assert path[0] == 12 and np.all(path >= 1)


def test_w_seminorm_jump_bounds(machines):
    gamma = 0.5
    for r in (r for mc in machines for r in mc.records):
        assert np.isfinite(r.w_seminorm) and np.isfinite(r.w_seminorm_next)
        if r.M_next >= r.M_i:
            assert r.w_seminorm_next <= r.w_seminorm * (1 + 1e-12)
        else:
            bound = 5 * 2 ** (2 * gamma) * (1.0 + 1 + 0.5 * r.w_seminorm ** 2)
            assert r.w_seminorm_next ** 2 <= bound


def test_dilution_exit_bound(machines):
    # when the marker reads D at the dilution exit, ||w_geq|| at level M - 2 stays below E < 2
    E = np.sqrt(1 / 16 + (1 + 1 / 16) * 1.5 ** 2)
    assert E < 2
    seen = 0
    for r in (r for mc in machines for r in mc.records if r.marker == "D"):
        assert r.wgeq_at_S <= E
        seen += 1
    assert seen > 0


def test_stopping_time_stats(machines):
    recs = [r for mc in machines for r in mc.records]
    st = stopping_time_stats(recs, dt=1e-3)
    assert st["max_gap_ok"] and st["n_records"] == len(recs)
    assert 0 <= st["fraction_A"] <= 1
    one = stopping_time_stats(recs[:1])
    assert len(one["hist_counts"]) == 1
    with pytest.raises(ValueError):
        stopping_time_stats([])


def test_jumps_csv_columns(tmp_path, machines):
    path = tmp_path / "jumps.csv"
    write_jumps_csv(machines[0].records, path)
    rows = list(csv.reader(open(path)))
    assert rows[0][:8] == ["i", "T_i", "T_next", "M_i", "M_next", "event", "marker", "w_seminorm"]
    assert len(rows) == len(machines[0].records) + 1


def test_dissipation_diagnostic_noise_free():
    p = ModelParams(K=12, dt=1e-3)
    pi0 = mix((1, 0.7), (2, 0.1), (9, 0.2))
    u = pi0.coeffs[None].copy()
    out = [shell_energies(pi0)[None]]
    Propagator(p, NoiseSpec.zero(p.lattice)).run(u, np.zeros(1), [np.random.default_rng(0)], 400,
                                                 want_shells=True,
                                                 callback=lambda s, sh, a, b: out.append(sh[0]))
    rep = dissipation_diagnostic(np.concatenate(out), 4, 2.0, p.dt)
    assert rep.passed and rep.n == 400
    assert abs(rep.intercept) <= 1e-3 and rep.residual_var <= 1e-6
    with pytest.raises(ValueError):
        dissipation_diagnostic(np.concatenate(out)[:30], 4, 2.0, p.dt)


def test_dissipation_diagnostic_k0_noise():
    p = ModelParams(K=12, dt=1e-3)
    spec = NoiseSpec.k0_only(p.lattice, 0.8)
    pi0 = mix((1, 0.7), (9, 0.3))
    u = pi0.coeffs[None].copy()
    out = [shell_energies(pi0)[None]]
    Propagator(p, spec).run(u, np.zeros(1), [trajectory_rng(1, 0)], 300, want_shells=True,
                            callback=lambda s, sh, a, b: out.append(sh[0]))
    # noise at k = 0 scales every mode alike, so the ratio dynamics are noise-free
    rep = dissipation_diagnostic(np.concatenate(out), 5, 2.0, p.dt)
    assert rep.passed and rep.slope <= rep.bound * 0.9
