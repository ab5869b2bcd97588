"""Fast deterministic invariant checks across all modules.

Each check is a small function returning ``(ok, detail)``; :func:`run_selftest`
collects them into ``{"name", "ok", "detail"}`` dicts.  Randomized pieces use
fixed seeds, so the outcome is reproducible.
"""
import numpy as np

from .integrator import ModelParams, Propagator, apply_noise, initial_state, linear_decay, step
from .lattice import (BandSpec, Lattice, SpectralField, energy_median, eigenvalue, mode_field,
                      project, random_unit_field, shifted_seminorm, sobolev_norm)
from .lyapunov import LyapParams, log_F, log_G
from .median_machine import (StopRule, detect_stop, marker, relative_energy, run_skeleton,
                             shell_energies)
from .noise import (NoiseSpec, check_decay, check_support_condition, correlation_tensors,
                    descent_direction, sample_increments)
from .projective import corrector, decompose, fk_integrand, quartic_form
from .seeding import derive_seed

SEED_VECTOR = (42, 0, 6332618229526065668)

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


# ---------------------------------------------------------------- lattice

@check
def lattice_eigenvalues():
    ok = eigenvalue(1, 1.0) == 1 and eigenvalue(2, 2.0) == 16
    return ok, "zeta_k = |k|^2a"


@check
def lattice_seminorm_example():
    lat = Lattice(1, 8)
    v = shifted_seminorm(mode_field(lat, (5,)), 0.5, 3)
    return _close(v, np.sqrt(3)), f"|e_5|_(1/2,3) = {v}"


@check
def lattice_median_examples():
    lat = Lattice(1, 8)
    e0 = energy_median(mode_field(lat, (0,)))
    e5 = energy_median(mode_field(lat, (5,)))
    c = np.sqrt(0.4) * mode_field(lat, (1,)).coeffs + np.sqrt(0.6) * mode_field(lat, (7,)).coeffs
    e17 = energy_median(SpectralField(lat, c))
    return (e0, e5, e17) == (1, 5, 7), f"medians {(e0, e5, e17)}"


@check
def lattice_band_completeness():
    lat = Lattice(2, 6)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        phi = random_unit_field(lat, 2, rng, 0.5)
        for L in range(0, 6):
            nu = (1.0, 3.0)
            parts = [project(phi, BandSpec(L, b), nu, 1.5) for b in ("low", "central", "high")]
            tot = parts[0].coeffs + parts[1].coeffs + parts[2].coeffs
            worst = max(worst, np.abs(tot - phi.coeffs).max())
            pyth = sum(p.norm() ** 2 for p in parts)
            worst = max(worst, abs(pyth - 1.0))
    return worst <= 1e-12, f"max defect {worst:.2e}"


@check
def lattice_sobolev():
    lat = Lattice(1, 8)
    v = sobolev_norm(mode_field(lat, (3,)), 1.0)
    return _close(v, 4.0), f"|e_3|_H1 = {v}"


# ---------------------------------------------------------------- noise

@check
def noise_hermitian_increments():
    lat = Lattice(2, 4)
    spec = NoiseSpec.parametric(lat, 2, 0.5, 2.0)
    inc = sample_increments(spec, 0.01, np.random.default_rng(3))
    dB = inc.dB
    ok = np.array_equal(dB[..., lat.neg], np.conj(dB)) and np.all(dB[..., lat.zero_index].imag == 0)
    return bool(ok), "dB(-k) = conj dB(k), dB(0) real"


@check
def noise_duplicate_entry():
    lat = Lattice(1, 4)
    try:
        NoiseSpec.table(lat, 1, [[0, 0, 2, 0.3], [0, 0, -2, 0.3]])
    except ValueError as exc:
        return "(0, 0, 2, 0.3)" in str(exc) and "(0, 0, -2, 0.3)" in str(exc), str(exc)
    return False, "duplicate accepted"


@check
def noise_tensors_k0():
    lat = Lattice(1, 4)
    t = correlation_tensors(NoiseSpec.k0_only(lat, 0.8))
    vals = (float(t.Lambda0.ravel()[0]), float(t.TrLambda.ravel()[0]), float(t.TruLambda.ravel()[0]))
    return all(_close(v, 0.8) for v in vals), f"{vals}"


@check
def noise_decay_examples():
    lat = Lattice(1, 64)
    ok1 = check_decay(NoiseSpec.parametric(lat, 1, 1.0, 2.5), 2.5, 1.0).passed
    bad = NoiseSpec.table(lat, 1, [[0, 0, 0, 2.0]])
    r = check_decay(bad, 2.5, 1.0)
    return ok1 and not r.passed and r.worst_mode == (0,), f"worst {r.worst_mode}"


@check
def noise_support_examples():
    A = np.arange(-4, 5)[:, None]
    ok1 = all(check_support_condition(A, 3.0, 1, 20).values())
    ok2 = not any(check_support_condition(np.array([[0]]), 1.0, 1, 10).values())
    return ok1 and ok2, "A={-4..4} passes, A={0} fails"


@check
def noise_descent_examples():
    l1, h1 = descent_direction((10,), 2, 0.1)
    l2, h2 = descent_direction((30, 40), 5, 0.5)
    _, h3 = descent_direction((3, 4), 5, 0.1)
    ok = l1.tolist() == [-2] and h1 and l2.tolist() == [0, -5] and h2 and not h3
    return ok, "descent examples"


# ---------------------------------------------------------------- integrator

@check
def integrator_deterministic_decay():
    p = ModelParams(K=6, dt=1e-3)
    spec = NoiseSpec.zero(p.lattice)
    st = initial_state(mode_field(p.lattice, (3,)), p, spec)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        st = step(st, rng)
    return _close(st.logr, -9.0, 1e-12), f"logr(1) = {st.logr!r}"


@check
def integrator_noise_single_mode():
    lat = Lattice(1, 8)
    dB = np.zeros((1, 1, lat.size), dtype=complex)
    dB[0, 0, lat.find((3,))] = 0.1 + 0.2j
    dB[0, 0, lat.find((-3,))] = 0.1 - 0.2j
    out = apply_noise(mode_field(lat, (0,)), dB)
    nz = set(lat.modes[np.abs(out.coeffs[0]) > 0].ravel().tolist())
    return nz == {-3, 3}, f"support {sorted(nz)}"


@check
def integrator_kernel_matches_step():
    p = ModelParams(d=2, m=2, nu=(1.0, 2.0), K=4, dt=1e-3)
    spec = NoiseSpec.parametric(p.lattice, 2, 0.5, 1.5)
    pi0 = mode_field(p.lattice, (1, 0), 2)
    st = initial_state(pi0, p, spec)
    rng = np.random.default_rng(derive_seed(9, 0))
    for _ in range(100):
        st = step(st, rng)
    u = pi0.coeffs[None].copy()
    lr = np.zeros(1)
    Propagator(p, spec).run(u, lr, [np.random.default_rng(derive_seed(9, 0))], 100)
    err = max(np.abs(u[0] - st.pi.coeffs).max(), abs(lr[0] - st.logr))
    return err <= 1e-12, f"max difference {err:.2e}"


@check
def integrator_linear_decay_identity():
    p = ModelParams(K=6)
    phi = random_unit_field(p.lattice, 1, np.random.default_rng(2))
    out = linear_decay(phi, 0.0, p)
    return np.array_equal(out.coeffs, phi.coeffs), "dt = 0 is the identity"


# ---------------------------------------------------------------- projective

@check
def projective_gbm_values():
    lat = Lattice(1, 4)
    spec = NoiseSpec.k0_only(lat, 0.8)
    pi = random_unit_field(lat, 1, np.random.default_rng(4))
    q, c = quartic_form(pi, spec), corrector(pi, spec)
    f = fk_integrand(mode_field(lat, (0,)), ModelParams(K=4), spec).integrand
    ok = _close(q, 0.8) and _close(c, -0.8) and _close(f, -0.4)
    return ok, f"quartic {q}, corrector {c}, fk {f}"


@check
def projective_decompose_roundtrip():
    lat = Lattice(1, 4)
    u = mode_field(lat, (0,)) * 3.0
    r, pi = decompose(u)
    return _close(r, 3.0) and _close(pi.norm(), 1.0), f"r = {r}"


@check
def projective_antipodal():
    lat = Lattice(1, 6)
    spec = NoiseSpec.parametric(lat, 1, 0.5, 1.5)
    p = ModelParams(K=6)
    pi = random_unit_field(lat, 1, np.random.default_rng(5))
    a, b = fk_integrand(pi, p, spec).integrand, fk_integrand(pi * -1.0, p, spec).integrand
    return a == b, f"{a} vs {b}"


# ---------------------------------------------------------------- median machine

@check
def machine_marker_examples():
    lat = Lattice(1, 12)
    c1 = marker(4, mode_field(lat, (4,)))
    c2 = marker(3, mode_field(lat, (0,)))
    return (c1, c2) == ("C", "D"), f"{c1}, {c2}"


@check
def machine_relative_energy():
    lat = Lattice(1, 12)
    c = np.sqrt(0.8) * mode_field(lat, (1,)).coeffs + np.sqrt(0.2) * mode_field(lat, (3,)).coeffs
    w, wg = relative_energy(SpectralField(lat, c), 2)
    return _close(w, 0.0) and _close(wg, 0.5), f"({w}, {wg})"


@check
def machine_cap_without_noise():
    sh = np.tile([0.5, 0.5], (2001, 1))
    idx, fired = detect_stop(StopRule("sigma_geq", 0, 1.5), sh, 0, 1000)
    return idx == 1000 and not fired, f"stop at {idx}, fired {fired}"


@check
def machine_deterministic_skeleton():
    p = ModelParams(K=12, dt=1e-3)
    spec = NoiseSpec.zero(p.lattice)
    pi0 = SpectralField(p.lattice, (mode_field(p.lattice, (1,)).coeffs * 0.1
                                    + mode_field(p.lattice, (8,)).coeffs * np.sqrt(0.99)))
    u = pi0.coeffs[None].copy()
    shells = [shell_energies(pi0)[None]]

    def cb(start, sh, snaps, slog):
        shells.append(sh[0])

    Propagator(p, spec).run(u, np.zeros(1), [np.random.default_rng(0)], 8000, want_shells=True,
                            callback=cb)
    mc = run_skeleton(np.concatenate(shells), p.dt)
    ok = all(r.M_next >= r.M_i - 1 and r.T_next - r.T_i <= 3 + p.dt
             and (r.event != "A" or r.M_next == r.M_i - 1) for r in mc.records)
    return ok and len(mc.records) > 0, f"{len(mc.records)} jumps"


# ---------------------------------------------------------------- functionals and runner

@check
def lyapunov_examples():
    lat = Lattice(1, 8)
    g0 = log_G(mode_field(lat, (0,)), LyapParams())
    g5 = log_G(mode_field(lat, (5,)), LyapParams())
    f0 = log_F(0.5, 1, mode_field(lat, (0,)), LyapParams())
    return _close(g0, 1.0) and _close(g5, 5.0) and _close(f0, 1.0), f"{g0}, {g5}, {f0}"


@check
def seed_vector():
    s, i, v = SEED_VECTOR
    return derive_seed(s, i) == v, f"derive_seed({s}, {i}) = {derive_seed(s, i)}"


@check
def inequality_suite_corrected():
    from .bounds import run_suite
    res = {r.name: r for r in run_suite(n=1000, seed=11)}
    names = ("reg_jump_corrected", "mid_jump_corrected", "half_identity", "h_half_sandwich",
             "lyap_sandwich_lower", "lyap_sandwich_upper", "bound_weights", "geom")
    bad = [n for n in names if not res[n].ok]
    return not bad, "violations in " + ", ".join(bad) if bad else "zero violations"


def run_selftest():
    out = []
    for fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed run
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append({"name": fn.__name__, "ok": bool(ok), "detail": detail})
    return out
