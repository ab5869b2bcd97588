import numpy as np
import pytest
from scipy.optimize import brentq

from pfsim.integrator import ModelParams, RunRecord
from pfsim.lattice import (Lattice, SpectralField, energy_median, mode_field, random_unit_field,
                           shifted_seminorm, sobolev_norm)
from pfsim.lyapunov import (LyapParams, contraction_experiment, estimate_lambda_direct,
                            estimate_lambda_fk, functional_F, functional_G,
                            instability_experiment, instability_initial, log_F, log_G,
                            log_G_batch, sandwich_constants, trend_nondecreasing,
                            wilson_interval)
from pfsim.noise import NoiseSpec

LAT = Lattice(1, 10)


def record(t, logr, fk=None):
    P = logr.shape[0]
    return RunRecord(np.asarray(t, float), logr, np.ones_like(logr, dtype=np.int64),
                     np.zeros_like(logr) if fk is None else fk, {}, [], None, [0] * P, 0)


def test_lyap_params_validation():
    with pytest.raises(ValueError):
        LyapParams(kappa0=0.0)
    with pytest.raises(ValueError):
        LyapParams(k0=0)


def test_G_examples():
    assert functional_G(mode_field(LAT, (0,))) == pytest.approx(np.e)
    assert functional_G(mode_field(LAT, (5,))) == pytest.approx(np.exp(5))
    assert log_G(mode_field(LAT, (5,)), LyapParams(kappa0=2.0)) == pytest.approx(10.0)


def test_G_compositional(rng):
    p = LyapParams(kappa0=1.3, k0=2)
    for _ in range(20):
        phi = random_unit_field(LAT, 1, rng, 0.5)
        M = energy_median(phi)
        ref = p.kappa0 * M + shifted_seminorm(phi, 0.5, M + p.k0) ** 2
        assert log_G(phi, p) == pytest.approx(ref, rel=1e-12)


def test_G_batch_matches_single(rng):
    p = ModelParams(d=2, m=2, nu=(1.0, 0.3), K=4)
    fs = [random_unit_field(p.lattice, 2, rng) for _ in range(6)]
    batch = log_G_batch(np.stack([f.coeffs for f in fs]), p.lattice, LyapParams(), p.nu)
    assert np.allclose(batch, [log_G(f, LyapParams(), p.nu) for f in fs], rtol=1e-13)


def test_G_antipodal_and_floor(rng):
    for _ in range(20):
        phi = random_unit_field(LAT, 1, rng)
        assert log_G(phi) == log_G(-phi) and log_G(phi) >= 1.0


def test_F_examples(rng):
    assert functional_F(0.5, 1, mode_field(LAT, (0,))) == pytest.approx(np.e)
    phi = random_unit_field(LAT, 1, rng)
    assert log_F(0.0, 4, phi) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        log_F(0.5, 2, mode_field(LAT, (9,)))


def test_F_below_G_at_true_median(rng):
    for _ in range(200):
        phi = random_unit_field(LAT, 1, rng, rng.uniform(0, 1.5))
        M = energy_median(phi)
        for kappa in (0.1, 0.5):
            assert log_F(kappa, M, phi) <= log_G(phi) + 1e-12


def test_sandwich(rng):
    p = LyapParams()
    c1, c2 = sandwich_constants(p)
    assert 0 < c1 < c2
    for _ in range(200):
        phi = random_unit_field(LAT, 1, rng, rng.uniform(0, 2))
        h = sobolev_norm(phi, 0.5) ** 2
        assert c1 * h <= log_G(phi, p) <= c2 * h


def test_direct_estimator_examples():
    t = np.linspace(0, 10, 11)
    rec = record(t, np.repeat((-4.0 * t)[None], 3, axis=0))
    est = estimate_lambda_direct(rec, burn_in=2.0)
    assert est.lam == pytest.approx(-4.0, abs=1e-12) and est.stderr == 0.0
    assert est.horizon == 10.0 and est.n_paths == 3
    with pytest.raises(ValueError):
        estimate_lambda_direct(rec, burn_in=5.0, horizon=5.0)
    with pytest.raises(ValueError):
        estimate_lambda_direct(rec, horizon=12.0)


def test_fk_estimator_constant_integrand():
    t = np.linspace(0, 10, 1001)
    fk = np.full((4, len(t)), -0.4)
    est = estimate_lambda_fk(record(t, np.zeros((4, len(t))), fk), batch=100)
    assert est.lam == -0.4 and est.stderr == 0.0


def test_fk_estimator_batch_means():
    rng = np.random.default_rng(0)
    t = np.arange(2001) * 0.1
    fk = -1.0 + rng.standard_normal((5, len(t)))
    est = estimate_lambda_fk(record(t, np.zeros_like(fk), fk), batch=100)
    assert abs(est.lam + 1.0) <= 4 * est.stderr
    assert est.stderr == pytest.approx(1 / np.sqrt(fk.size), rel=0.5)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 200)
    assert lo == 0.0 and 0 < hi < 0.03
    lo, hi = wilson_interval(100, 200)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)
    assert wilson_interval(200, 200)[1] == 1.0


def test_trend_rule():
    rows = [{"wilson_lo": 0.1, "wilson_hi": 0.3}, {"wilson_lo": 0.05, "wilson_hi": 0.2}]
    assert trend_nondecreasing(rows)
    rows[1] = {"wilson_lo": 0.0, "wilson_hi": 0.05}
    assert not trend_nondecreasing(rows)


def test_contraction_without_noise():
    p = ModelParams(K=12, dt=1e-3)
    zero = NoiseSpec.zero(p.lattice)
    rep = contraction_experiment(p, zero, Ms=(0,), n_paths=2, t_star=1.0)
    assert rep["rows"][0]["ratio"] == pytest.approx(1.0, abs=1e-12)

    def spike(M):
        return SpectralField(p.lattice, mode_field(p.lattice, (M,), weight=0.9).coeffs
                             + mode_field(p.lattice, (0,), weight=0.1).coeffs)

    rep = contraction_experiment(p, zero, Ms=(6,), n_paths=2, t_star=2.0, initial=spike)
    row = rep["rows"][0]
    assert row["ratio"] == pytest.approx(np.exp(1 - row["log_G0"]), rel=1e-6) and row["ratio"] < 1


def test_instability_initial_data():
    p = ModelParams(K=32)
    pi0 = instability_initial(p.lattice, 10)
    assert pi0.norm() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        instability_initial(Lattice(1, 4), 10)


def test_instability_without_noise():
    p = ModelParams(K=12, dt=1e-3)
    zero = NoiseSpec.zero(p.lattice)
    rep = instability_experiment(p, zero, Ms=(4,), n_paths=3, horizon=1.0,
                                 initial=lambda M: mode_field(p.lattice, (M,)))
    assert rep["rows"][0]["p_hat"] == 0.0
    # two-shell decay: central mass (1 - eps)/2 (e^{-18 t} + e^{-32 t}) falls below eps / 16
    eps, M = 0.01, 4
    f = lambda t: 0.5 * (1 - eps) * (np.exp(-18 * t) + np.exp(-32 * t)) - eps / 16
    t_hit = brentq(f, 0, 5)
    for h, expect in ((t_hit - 0.01, 0.0), (t_hit + 0.01, 1.0)):
        rep = instability_experiment(p, zero, Ms=(M,), n_paths=3, horizon=round(h, 3), eps=eps)
        assert rep["rows"][0]["p_hat"] == expect
    row = rep["rows"][0]
    assert row["mean_first_time"] == pytest.approx(t_hit, abs=2e-3)
