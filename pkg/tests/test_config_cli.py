"""Config validation, canonical hashing, and the command-line front end."""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ehdfl.config import canonical_hash, load_config, parse_config
from ehdfl.errors import ConfigError


def base_raw(out_dir="results", **over):
    raw = {
        "name": "pair-check",
        "topology": {"kind": "line", "m": 2},
        "channel": {"phi": 1.8, "sigma2": 0.4,
                    "chains": [{"levels": [0.4, 2.2],
                                "psi": [[0.7, 0.3], [0.3, 0.7]]}]},
        "energy": {"b_max": 1.0, "n_levels": 2,
                   "harvest": {"support": [0.0, 1.0], "probs": [0.5, 0.5]}},
        "power_levels": [0.0, 1.0],
        "horizon": 2,
        "policy": {"name": "greedy", "gamma": 32.0, "rounds": 4, "hops": 1},
        "task": {"kind": "quadratic", "dim": 4, "samples": 8},
        "seeds": [1],
        "out_dir": out_dir,
    }
    raw.update(over)
    return raw


# ---------------------------------------------------------------------------
# parsing and hashing
# ---------------------------------------------------------------------------

def test_parse_accepts_a_minimal_config():
    cfg = parse_config(base_raw())
    assert cfg.m == 2 and cfg.horizon == 2
    assert cfg.policy_name == "greedy"
    assert cfg.warnings == []
    assert len(cfg.hash) == 12 and int(cfg.hash, 16) >= 0


def test_hash_ignores_out_dir_but_not_content():
    a = canonical_hash(base_raw(out_dir="one"))
    b = canonical_hash(base_raw(out_dir="two"))
    c = canonical_hash(base_raw(horizon=3))
    assert a == b
    assert a != c
    assert parse_config(base_raw(out_dir="one")).hash == a


def test_all_problems_reported_at_once():
    raw = base_raw()
    raw["topology"] = {"kind": "star", "m": 1}
    raw["channel"] = {"chains": [{"levels": [0.4, 2.2],
                                  "psi": [[0.7, 0.3], [0.3, 0.7]]}]}
    raw["power_levels"] = [1.0, 0.5]
    raw["horizon"] = -2
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    text = "\n".join(exc.value.items)
    for frag in ("topology.kind", "topology.m", "channel.phi",
                 "power_levels", "horizon"):
        assert frag in text
    assert len(exc.value.items) >= 5


def test_sub_quantum_power_level_warns_about_snapping():
    cfg = parse_config(base_raw(power_levels=[0.0, 0.4]))
    assert any("snaps" in w for w in cfg.warnings)


def test_no_zero_cost_level_is_an_error():
    with pytest.raises(ConfigError) as exc:
        parse_config(base_raw(power_levels=[2.0, 3.0]))
    assert any("zero quantum cost" in it for it in exc.value.items)


def test_off_grid_harvest_is_an_error():
    raw = base_raw()
    raw["energy"]["harvest"] = {"support": [0.0, 0.4], "probs": [0.5, 0.5]}
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert any(it.startswith("energy.harvest[0]") for it in exc.value.items)


def test_gamma_above_the_certified_ceiling_warns():
    raw = base_raw()
    raw["policy"] = {"name": "decentralized_pi", "gamma": 1e9, "rounds": 2,
                     "hops": 1}
    raw["declared"] = {"lipschitz": 1.0, "grad_bound": 0.5}
    cfg = parse_config(raw)
    assert any("temperature ceiling" in w for w in cfg.warnings)


def test_sweep_section_is_validated():
    for sweep, frag in (
        ({"axis": "volume", "values": [1]}, "sweep.axis"),
        ({"axis": "capacity", "values": [1]}, "level counts"),
        ({"axis": "rounds", "values": [-1]}, "round counts"),
        ({"axis": "hops", "values": []}, "non-empty"),
    ):
        with pytest.raises(ConfigError) as exc:
            parse_config(base_raw(sweep=sweep))
        assert any(frag in it for it in exc.value.items)


def test_start_state_section_is_validated():
    with pytest.raises(ConfigError) as exc:
        parse_config(base_raw(s1={"gains": [1]}))
    assert any("s1" in it for it in exc.value.items)
    with pytest.raises(ConfigError) as exc:
        parse_config(base_raw(s1={"gains": [1], "batteries": [1, 1, 1]}))
    assert any("s1.batteries" in it for it in exc.value.items)


def test_build_model_and_start_state():
    cfg = parse_config(base_raw())
    mdp = cfg.build_model()
    assert mdp.m == 2 and mdp.n_states == 8 and mdp.n_actions == 4
    s1 = cfg.start_state(mdp)
    assert s1.batteries == (1, 1)  # default: full batteries

    cfg2 = parse_config(base_raw(s1={"gains": [1], "batteries": [0, 1]}))
    s2 = cfg2.start_state(mdp)
    assert s2.gains == (1,) and s2.batteries == (0, 1)


def test_build_policy_rejects_unknown_names():
    cfg = parse_config(base_raw())
    mdp = cfg.build_model()
    with pytest.raises(ConfigError):
        cfg.build_policy(mdp, name="thompson")


def test_load_config_reports_broken_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nonsense")
    with pytest.raises(ConfigError) as exc:
        load_config(bad)
    assert any("not valid JSON" in it for it in exc.value.items)


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "ehdfl.cli", *args],
                          capture_output=True, text=True, timeout=300)


def _write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def _csv_bytes(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


def test_cli_train_writes_metrics(tmp_path):
    out = tmp_path / "run"
    cfg = _write(tmp_path, base_raw(out_dir=str(out)))
    res = _cli("train", "--config", str(cfg))
    assert res.returncode == 0, res.stderr
    assert "wrote" in res.stdout
    for name in ("metrics_seed1.csv", "summary.csv", "metric_vs_slots.csv"):
        assert (out / name).exists()


def test_cli_validation_failure_exits_2(tmp_path):
    raw = base_raw()
    raw["topology"]["m"] = 1
    cfg = _write(tmp_path, raw)
    res = _cli("train", "--config", str(cfg))
    assert res.returncode == 2
    assert "error:" in res.stderr

    res2 = _cli("sweep", "--config", str(_write(tmp_path, base_raw(), "ok.json")))
    assert res2.returncode == 2  # no sweep section
    assert "sweep" in res2.stderr


def test_cli_budget_exceeded_exits_3(tmp_path):
    raw = base_raw(out_dir=str(tmp_path / "solve"), budget=10)
    raw["policy"] = {"name": "centralized_pi"}
    cfg = _write(tmp_path, raw)
    res = _cli("solve", "--config", str(cfg))
    assert res.returncode == 3
    assert "error:" in res.stderr and "10" in res.stderr


def test_cli_zero_horizon_writes_headers_only(tmp_path):
    out = tmp_path / "empty"
    cfg = _write(tmp_path, base_raw(out_dir=str(out), horizon=0))
    res = _cli("train", "--config", str(cfg))
    assert res.returncode == 0, res.stderr
    files = sorted(p.name for p in out.glob("*.csv"))
    assert files == ["metric_vs_slots.csv", "metrics_seed1.csv", "summary.csv"]
    for p in out.glob("*.csv"):
        lines = p.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("# config ")


def test_cli_verify_is_reproducible(tmp_path):
    out_a, out_b = tmp_path / "va", tmp_path / "vb"
    res_a = _cli("verify", "--out", str(out_a))
    res_b = _cli("verify", "--out", str(out_b))
    assert res_a.returncode == 0 and res_b.returncode == 0
    assert res_a.stdout == res_b.stdout
    assert "PASS" in res_a.stdout and "FAIL" not in res_a.stdout
    assert (out_a / "verify.csv").read_bytes() == (out_b / "verify.csv").read_bytes()


def test_cli_seed_and_out_overrides(tmp_path):
    out = tmp_path / "override"
    cfg = _write(tmp_path, base_raw(out_dir=str(tmp_path / "ignored")))
    res = _cli("train", "--config", str(cfg), "--seed", "7", "--out", str(out))
    assert res.returncode == 0, res.stderr
    assert (out / "metrics_seed7.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_cli_runs_are_byte_identical_across_jobs(tmp_path):
    dirs = [tmp_path / f"d{k}" for k in range(3)]
    raw = base_raw(seeds=[1, 2, 3], horizon=6)
    cfg = _write(tmp_path, raw)
    for d, jobs in zip(dirs, ("1", "1", "4")):
        res = _cli("train", "--config", str(cfg), "--out", str(d),
                   "--jobs", jobs)
        assert res.returncode == 0, res.stderr
    first = _csv_bytes(dirs[0])
    assert set(first) == {"metrics_seed1.csv", "metrics_seed2.csv",
                          "metrics_seed3.csv", "summary.csv",
                          "metric_vs_slots.csv"}
    assert _csv_bytes(dirs[1]) == first  # same invocation repeated
    assert _csv_bytes(dirs[2]) == first  # parallel workers
