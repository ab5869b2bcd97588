"""Run configuration, orchestration and persistence."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .integrator import ModelParams, simulate, write_timeseries_csv
from .lattice import SpectralField, mode_field
from .lyapunov import (LyapParams, contraction_experiment, estimate_lambda_direct,
                       estimate_lambda_fk, instability_experiment, skeleton_drift,
                       trend_nondecreasing)
from .median_machine import (DEFAULT_THRESHOLDS, record_violations, stopping_time_stats,
                             write_jumps_csv)
from .noise import NoiseSpec, check_decay, check_support_condition, correlation_tensors, support_set
from .seeding import derive_seed

SCENARIOS = ("simulate", "lyapunov", "contraction", "instability", "validate-noise", "selftest")

DEFAULTS = {
    "scenario": "simulate",
    "model": {"d": 1, "m": 1, "a": 1.0, "nu": [1.0], "K": 8, "dt": 1e-3,
              "scheme": "exponential-euler", "drift_form": "ito"},
    "noise": {"form": "diagonal-parametric", "c": 1.0, "gamma0": 2.5, "K_noise": None},
    "lyap": {"kappa0": 1.0, "k0": 1, "kappa": 0.5},
    "skeleton": {"enabled": False, "delta": 0.5, "thresholds": dict(DEFAULT_THRESHOLDS)},
    "initial": {"kind": "mode", "k": [0], "component": 0},
    "n_paths": 1,
    "n_steps": 1000,
    "record_stride": 10,
    "master_seed": 0,
    "output_dir": "out",
    "seminorms": [],
    "estimator": {"burn_in": 0.0, "batch": 100},
    "experiment": {},
}


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("experiment", "noise", "initial"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(raw):
    body = {k: v for k, v in raw.items() if k != "output_dir"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]


@dataclass(eq=False)
class RunConfig:
    model: ModelParams
    noise: NoiseSpec
    lyap: LyapParams
    skeleton: dict
    scenario: str
    n_paths: int
    n_steps: int
    record_stride: int
    master_seed: int
    output_dir: str
    initial: dict
    seminorms: list
    estimator: dict
    experiment: dict
    raw: dict = field(repr=False, default_factory=dict)
    config_hash: str = ""

    def initial_field(self):
        return build_initial(self.model, self.initial)

    def with_overrides(self, seed=None, out=None, scenario=None):
        raw = dict(self.raw)
        if seed is not None:
            raw["master_seed"] = int(seed)
        if out is not None:
            raw["output_dir"] = str(out)
        if scenario is not None:
            raw["scenario"] = scenario
        return parse_config(raw)


def build_initial(params, spec):
    lat = params.lattice
    kind = spec.get("kind", "mode")
    m, d = params.m, params.d

    def key(k):
        k = list(np.atleast_1d(k))
        return tuple(int(v) for v in k + [0] * (d - len(k)))

    if kind == "mode":
        return mode_field(lat, key(spec.get("k", [0])), m, spec.get("component", 0))
    if kind == "modes":
        ws = spec.get("weights") or [1.0] * len(spec["modes"])
        c = sum(np.sqrt(w) * mode_field(lat, key(k), m, spec.get("component", 0)).coeffs
                for k, w in zip(spec["modes"], ws))
        f = SpectralField(lat, c)
        return f * (1.0 / f.norm())
    if kind == "dominant":
        # weight on the pair +-k, the rest spread evenly over every other mode
        wgt = float(spec.get("weight", 0.9))
        c = np.zeros((m, lat.size), dtype=complex)
        main = mode_field(lat, key(spec["k"]), m, spec.get("component", 0)).coeffs
        rest = main == 0
        c[rest] = np.sqrt((1 - wgt) / rest.sum())
        c += np.sqrt(wgt) * main
        return SpectralField(lat, c)
    raise ValueError(f"unknown initial kind {kind!r}")


def _noise_from(raw, lattice, m, errs):
    form = raw.get("form")
    kn = raw.get("K_noise")
    try:
        if form == "diagonal-parametric":
            return NoiseSpec.parametric(lattice, m, raw.get("c", 1.0), raw.get("gamma0", 2.5), kn)
        if form == "diagonal-table":
            return NoiseSpec.table(lattice, m, raw.get("entries", []), kn)
        if form == "general-table":
            t = np.zeros((m, m, m, m, lattice.size))
            for row in raw.get("entries", []):
                i = lattice.find(row[4:-1])
                t[tuple(int(v) for v in row[:4]) + (i,)] = row[-1]
                t[tuple(int(v) for v in row[:4]) + (lattice.neg[i],)] = row[-1]
            return NoiseSpec.general(lattice, m, t, kn)
        errs.append(f"$.noise.form: unknown noise form {form!r}")
    except (ValueError, KeyError) as exc:
        errs.append(f"$.noise: {exc}")
    return None


def parse_config(source):
    """Validated :class:`RunConfig` from a JSON path or dict; raises :class:`ConfigError`."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            raw_in = json.load(fh)
    else:
        raw_in = dict(source)
    errs = []
    for k in raw_in:
        if k not in DEFAULTS and k not in ("T", "comment"):
            errs.append(f"$.{k}: unknown field")
    raw = _merge(DEFAULTS, raw_in)
    md = raw["model"]
    if "T" in raw_in:
        raw["n_steps"] = int(round(raw_in["T"] / md["dt"]))
        raw.pop("T", None)
    raw.pop("comment", None)
    model = None
    if md.get("a", 1) < 1:
        errs.append("$.model.a: a must be ≥ 1 (the Lyapunov functional construction assumes hyperviscosity a ≥ 1)")
    nu = np.atleast_1d(md.get("nu", 1.0))
    if np.any(nu <= 0):
        errs.append("$.model.nu: every nu must be > 0")
    if md.get("dt", 1) <= 0:
        errs.append("$.model.dt: dt must be > 0")
    for key in ("d", "m"):
        if int(md.get(key, 1)) < 1:
            errs.append(f"$.model.{key}: must be >= 1")
    if int(md.get("K", 1)) < 1:
        errs.append("$.model.K: must be >= 1")
    if not errs:
        try:
            model = ModelParams(int(md["d"]), int(md["m"]), float(md["a"]), tuple(nu), int(md["K"]),
                                float(md["dt"]), md["scheme"], md["drift_form"])
            raw["model"]["nu"] = list(model.nu)
        except ValueError as exc:
            errs.append(f"$.model: {exc}")
    noise = _noise_from(raw["noise"], model.lattice, model.m, errs) if model else None
    try:
        lyap = LyapParams(**raw["lyap"])
    except (TypeError, ValueError) as exc:
        errs.append(f"$.lyap: {exc}")
        lyap = None
    delta = raw["skeleton"].get("delta", 0.5)
    if not 0 < delta < 1:
        errs.append("$.skeleton.delta: delta must lie in (0, 1)")
    if raw["scenario"] not in SCENARIOS:
        errs.append(f"$.scenario: unknown scenario {raw['scenario']!r}")
    for key in ("n_paths", "record_stride"):
        if int(raw[key]) < 1:
            errs.append(f"$.{key}: must be >= 1")
    if int(raw["n_steps"]) < 0:
        errs.append("$.n_steps: must be >= 0")
    if model is not None:
        try:
            build_initial(model, raw["initial"])
        except (KeyError, ValueError) as exc:
            errs.append(f"$.initial: {exc}")
    if errs:
        raise ConfigError(errs)
    return RunConfig(model, noise, lyap, raw["skeleton"], raw["scenario"], int(raw["n_paths"]),
                     int(raw["n_steps"]), int(raw["record_stride"]), int(raw["master_seed"]),
                     raw["output_dir"], raw["initial"], [tuple(s) for s in raw["seminorms"]],
                     raw["estimator"], raw["experiment"], raw, config_hash(raw))


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    master_seed: int
    seeds: list
    wall_clock: float
    files: list
    version: str = __version__
    exit_code: int = 0
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {"config": self.config, "config_hash": self.config_hash,
                "master_seed": self.master_seed, "seeds": [str(s) for s in self.seeds],
                "wall_clock": self.wall_clock, "files": self.files, "version": self.version,
                "exit_code": self.exit_code, "warnings": self.warnings}


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def run(config):
    """Dispatch on ``config.scenario``; writes artifacts plus ``manifest.json``."""
    t0 = time.perf_counter()
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    files, warnings, seeds = [], [], []
    code = 0
    sc = config.scenario
    ex = config.experiment

    def emit(name, obj):
        _dump(os.path.join(out, name), obj)
        files.append(name)

    if sc in ("simulate", "lyapunov"):
        rec = simulate(config)
        seeds = rec.seeds
        warnings += rec.flags
        write_timeseries_csv(rec, os.path.join(out, "timeseries.csv"))
        files.append("timeseries.csv")
        if rec.jumps:
            write_jumps_csv(rec.jumps, os.path.join(out, "jumps.csv"))
            files.append("jumps.csv")
        if rec.band_checks:
            viol = record_violations(rec.jumps, config.model.dt)
            bad = rec.band_checks["violations"]
            viol["band_bound"] = len(bad)
            emit("skeleton.json", {"n_jumps": len(rec.jumps), "band_checked": rec.band_checks["checked"],
                                   "violations": viol, "first_band_violations": bad[:20],
                                   "stats": stopping_time_stats(rec.jumps, dt=config.model.dt)
                                   if rec.jumps else None,
                                   "config_hash": config.config_hash})
        emit("record.json", {"config": config.raw, "config_hash": config.config_hash,
                             "master_seed": config.master_seed,
                             "seeds": [str(s) for s in rec.seeds], "version": __version__})
        if sc == "lyapunov":
            b = float(config.estimator.get("burn_in", 0.0))
            d = estimate_lambda_direct(rec, b)
            f = estimate_lambda_fk(rec, b, batch=int(config.estimator.get("batch", 100)))
            emit("lyapunov.json", [d.as_dict(config.config_hash), f.as_dict(config.config_hash)])
    elif sc == "contraction":
        rep = contraction_experiment(config.model, config.noise, tuple(ex.get("Ms", (10, 15, 20))),
                                     config.n_paths, float(ex.get("t_star", 5.0)), config.lyap,
                                     config.master_seed, float(ex.get("c", 1.0)),
                                     float(ex.get("J", 0.0)))
        rep["config_hash"] = config.config_hash
        emit("contraction.json", rep)
    elif sc == "instability":
        rep = instability_experiment(config.model, config.noise, tuple(ex.get("Ms", (10, 20, 30))),
                                     config.n_paths, float(ex.get("horizon", 5.0)),
                                     config.master_seed, float(ex.get("eps", 0.01)))
        rep["nondecreasing"] = trend_nondecreasing(rep["rows"])
        if "drift_M0" in ex:
            rep["skeleton_drift"] = skeleton_drift(config.model, config.noise, int(ex["drift_M0"]),
                                                   config.n_paths, int(ex.get("n_jumps", 5)),
                                                   master_seed=config.master_seed,
                                                   delta=config.skeleton.get("delta", 0.5))
        rep["config_hash"] = config.config_hash
        emit("instability.json", rep)
    elif sc == "validate-noise":
        rep = validate_noise(config)
        code = 0 if rep["passed"] else 2
        emit("noise_validation.json", rep)
    elif sc == "selftest":
        from .selftest import run_selftest
        results = run_selftest()
        n_ok = sum(r["ok"] for r in results)
        print(f"selftest: {n_ok}/{len(results)} passed")
        for r in results:
            if not r["ok"]:
                print(f"  FAIL {r['name']}: {r['detail']}")
        code = 0 if n_ok == len(results) else 2
        emit("selftest.json", results)
    if not seeds and sc in ("contraction", "instability"):
        seeds = [derive_seed(config.master_seed, i) for i in range(config.n_paths)]
    man = RunManifest(config.raw, config.config_hash, config.master_seed, seeds,
                      time.perf_counter() - t0, files + ["manifest.json"], exit_code=code,
                      warnings=warnings)
    _dump(os.path.join(out, "manifest.json"), man.as_dict())
    return man


def validate_noise(config):
    spec, model = config.noise, config.model
    ex = config.experiment
    lat = model.lattice
    gamma0 = float(ex.get("gamma0", config.raw["noise"].get("gamma0", model.d / 2 + 1.5)))
    C = float(ex.get("C", config.raw["noise"].get("c", 1.0)))
    dec = check_decay(spec, gamma0, C)
    tens = correlation_tensors(spec)
    b = 3 * min(model.nu) ** (-1 / (2 * model.a))
    K0 = int(ex.get("K0", 1))
    M_max = int(ex.get("M_max", max(K0, lat.K // 2)))
    supp = {}
    for al in range(spec.m):
        for be in range(spec.m):
            A = support_set(spec, al, be) if spec.diagonal else lat.modes[
                np.abs(spec.coeffs[al, al, be, be]) > 0]
            if len(A):
                res = check_support_condition(A, b, K0, M_max)
                supp[f"{al},{be}"] = {str(M): v for M, v in res.items()}
            else:
                supp[f"{al},{be}"] = None
    support_ok = all(v is not None and all(v.values()) for v in supp.values())
    return {"decay": {"passed": dec.passed, "ratio": dec.ratio, "worst_mode": list(dec.worst_mode),
                      "gamma0": gamma0, "C": C,
                      "gamma0_above_required": gamma0 > model.d / 2 + 1},
            "support": {"b": b, "K0": K0, "M_max": M_max, "by_pair": supp, "passed": support_ok},
            "Lambda0": tens.Lambda0.tolist(), "TrLambda": tens.TrLambda.tolist(),
            "TruLambda": tens.TruLambda.tolist(), "sup_bound": tens.sup_bound,
            "passed": bool(dec.passed and support_ok),
            "config_hash": config.config_hash}
