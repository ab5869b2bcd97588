import json
import os

import numpy as np
import pytest
from scipy.stats import chisquare

from pfsim.__main__ import main
from pfsim.runner import ConfigError, config_hash, parse_config, run
from pfsim.seeding import derive_seed, splitmix64

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def small(**kw):
    cfg = {"scenario": "simulate", "model": {"K": 6}, "n_paths": 3, "n_steps": 200,
           "record_stride": 20, "master_seed": 9, "seminorms": [[0.5, 2]],
           "initial": {"kind": "mode", "k": [2]}}
    cfg.update(kw)
    return cfg


def test_minimal_config_defaults():
    cfg = parse_config({})
    assert cfg.model.a == 1.0 and cfg.model.K == 8 and cfg.scenario == "simulate"
    assert cfg.config_hash == parse_config({}).config_hash
    assert cfg.config_hash == config_hash(cfg.raw)


def test_hash_ignores_output_dir_and_key_order():
    a = parse_config(small(output_dir="x"))
    b = parse_config(dict(reversed(list(small(output_dir="y").items()))))
    assert a.config_hash == b.config_hash
    assert parse_config(small(master_seed=10)).config_hash != a.config_hash


def test_T_maps_to_steps():
    assert parse_config({"T": 2.5, "model": {"dt": 0.01}}).n_steps == 250


@pytest.mark.parametrize("patch, needle", [
    ({"model": {"a": 0.5}}, "$.model.a: a must be ≥ 1"),
    ({"model": {"nu": [1.0, -1.0], "m": 2}}, "$.model.nu"),
    ({"model": {"dt": 0}}, "$.model.dt"),
    ({"skeleton": {"delta": 1.0}}, "$.skeleton.delta"),
    ({"scenario": "nope"}, "$.scenario"),
    ({"bogus": 1}, "$.bogus: unknown field"),
    ({"model": {"K": 0}}, "$.model.K"),
])
def test_parse_errors(patch, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(patch)
    assert any(v.startswith(needle) for v in exc.value.violations)


def test_duplicate_noise_entries_reported_with_both():
    noise = {"form": "diagonal-table", "entries": [[0, 0, 1, 0.3], [0, 0, -1, 0.2]]}
    with pytest.raises(ConfigError) as exc:
        parse_config({"noise": noise})
    msg = exc.value.violations[0]
    assert msg.startswith("$.noise: duplicate noise entry") and "(0, 0, 1, 0.3)" in msg
    assert "(0, 0, -1, 0.2)" in msg


def test_several_violations_collected():
    with pytest.raises(ConfigError) as exc:
        parse_config({"model": {"a": 0.5, "dt": -1}, "skeleton": {"delta": 2}})
    assert len(exc.value.violations) == 3


def test_shipped_configs_parse():
    names = sorted(f for f in os.listdir(CONFIGS) if f.endswith(".json"))
    assert {"gbm.json", "deterministic.json", "fk_consistency.json", "skeleton.json"} <= set(names)
    for f in names:
        parse_config(os.path.join(CONFIGS, f))


def body(path):
    with open(path) as fh:
        return fh.read()


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = parse_config(small(output_dir=str(tmp_path / "a")))
    man = run(cfg)
    run(cfg.with_overrides(out=tmp_path / "b"))
    assert set(man.files) == {"timeseries.csv", "record.json", "manifest.json"}
    assert body(tmp_path / "a" / "timeseries.csv") == body(tmp_path / "b" / "timeseries.csv")
    head = body(tmp_path / "a" / "timeseries.csv").splitlines()
    assert head[0] == "path,t,logr,median,fk_integrand,seminorm_g0.5_L2"
    assert len(head) == 1 + 3 * 11
    m = json.load(open(tmp_path / "a" / "manifest.json"))
    assert m["seeds"] == [str(derive_seed(9, i)) for i in range(3)]
    assert m["config_hash"] == cfg.config_hash and m["exit_code"] == 0


def test_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    outs = []
    for n in ("1", "2"):
        monkeypatch.setenv("PF_THREADS", n)
        cfg = parse_config(small(output_dir=str(tmp_path / n)))
        run(cfg)
        outs.append(body(tmp_path / n / "timeseries.csv"))
    assert outs[0] == outs[1]


def test_lyapunov_scenario_deterministic(tmp_path):
    cfg = parse_config(os.path.join(CONFIGS, "deterministic.json")).with_overrides(out=tmp_path)
    run(cfg)
    rep = json.load(open(tmp_path / "lyapunov.json"))
    assert [r["method"] for r in rep] == ["direct", "fk"]
    assert rep[0]["lambda"] == pytest.approx(-1.0, abs=1e-6)


def test_skeleton_report(tmp_path):
    cfg = parse_config(small(skeleton={"enabled": True}, n_steps=3000, model={"K": 12},
                             noise={"form": "diagonal-parametric", "c": 1.0, "gamma0": 2.0},
                             initial={"kind": "mode", "k": [9]}, output_dir=str(tmp_path)))
    man = run(cfg)
    assert "jumps.csv" in man.files and "skeleton.json" in man.files
    rep = json.load(open(tmp_path / "skeleton.json"))
    assert rep["n_jumps"] > 0 and all(v == 0 for v in rep["violations"].values())


def test_derive_seed_pinned_vector():
    assert derive_seed(42, 0) == 6332618229526065668 == 0x57E1FABA65107204
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    with pytest.raises(ValueError):
        derive_seed(1, -1)


def test_derive_seed_no_collisions():
    seeds = {derive_seed(123456789, i) for i in range(1_000_000)}
    assert len(seeds) == 1_000_000


def test_child_streams_equidistributed():
    # 1000 children x 1000 uniforms, 100 equal bins
    draws = np.concatenate([np.random.default_rng(derive_seed(7, i)).random(1000)
                            for i in range(1000)])
    counts = np.bincount((draws * 100).astype(int), minlength=100)
    assert chisquare(counts).pvalue > 1e-3
    # first draw of each child stream
    first = np.array([np.random.default_rng(derive_seed(7, i)).random() for i in range(20_000)])
    assert chisquare(np.bincount((first * 20).astype(int), minlength=20)).pvalue > 1e-3


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(small()))
    assert main(["simulate", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert json.load(open(tmp_path / "o" / "manifest.json"))["master_seed"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"a": 0.5}}))
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "a must be ≥ 1" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_cli_validate_noise(tmp_path):
    cfg = os.path.join(CONFIGS, "validate_noise.json")
    assert main(["validate-noise", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.load(open(tmp_path / "noise_validation.json"))
    assert rep["passed"]
