from __future__ import annotations

import json
import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from qcalab.cli import (
    DEFAULT_TOLERANCES,
    EXPERIMENTS,
    ChainConfig,
    ExperimentConfig,
    ModelConfig,
    default_config,
    main,
    render_json,
    run,
)
from qcalab.errors import ConfigError

STAMP = "2000-01-01T00:00:00+00:00"


def write_config(tmp_path, data) -> str:
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(p)


configs = st.builds(
    ExperimentConfig,
    experiment=st.sampled_from(EXPERIMENTS),
    chain=st.builds(ChainConfig, st.integers(2, 12), st.integers(2, 4), st.sampled_from(["periodic", "open"])),
    model=st.builds(
        ModelConfig,
        st.sampled_from(["identity", "shift", "heisenberg", "random_circuit"]),
        st.dictionaries(st.sampled_from(["k", "t", "layers"]), st.integers(-3, 3), max_size=2),
        st.integers(1, 3),
    ),
    sweep=st.dictionaries(st.sampled_from(["window", "cut", "js"]), st.integers(0, 5), max_size=2),
    seed=st.none() | st.integers(0, 2**64 - 1),
    out=st.none() | st.sampled_from(["r.json", "out/report.json"]),
    max_dim=st.none() | st.integers(1, 10**6),
    tolerances=st.dictionaries(st.sampled_from(sorted(DEFAULT_TOLERANCES)), st.floats(1e-12, 1.0), max_size=3),
)


@settings(max_examples=60, deadline=None)
@given(configs)
def test_config_round_trip(cfg):
    assert ExperimentConfig.parse(cfg.dump()) == cfg


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_default_configs_dump_and_reload(experiment):
    cfg = default_config(experiment)
    assert ExperimentConfig.parse(cfg.dump()) == cfg


@pytest.mark.parametrize(
    "data",
    [
        {"experiment": "index", "colour": "red"},
        {"experiment": "nothing"},
        {"experiment": "index", "model": {"kind": "teleporter"}},
        {"experiment": "index", "tolerances": {"bogus": 1.0}},
        {"experiment": "index", "seed": -1},
        {"chain": {"num_sites": 4}},
    ],
)
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_bad_key_exits_2(tmp_path, capsys):
    path = write_config(tmp_path, {"experiment": "index", "colour": "red"})
    assert main(["index", "--config", path]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_randomized_experiment_needs_seed(tmp_path):
    path = write_config(tmp_path, {"experiment": "index", "model": {"kind": "random_circuit"}})
    assert main(["index", "--config", path]) == 2
    assert main(["index", "--config", path, "--seed", "3", "--out", str(tmp_path / "r.json")]) == 0


def test_dimension_cap_exits_3(tmp_path):
    assert main(["tails", "--max-dim", "16", "--out", str(tmp_path / "t.json")]) == 3


def test_numerical_failure_exits_4(tmp_path, capsys):
    data = {"experiment": "index", "chain": {"num_sites": 6}, "model": {"kind": "shift", "params": {"k": 2}}}
    assert main(["index", "--config", write_config(tmp_path, data)]) == 4
    assert "FactorizationFailure" in capsys.readouterr().err


def test_nonzero_index_exits_5(tmp_path, capsys):
    data = {"experiment": "synthesize", "seed": 0, "model": {"kind": "shift", "params": {"k": 1}}}
    assert main(["synthesize", "--config", write_config(tmp_path, data)]) == 5
    assert "0.693147" in capsys.readouterr().err


def test_dump_config_applies_overrides(capsys):
    assert main(["index", "--seed", "7", "--tolerance", "1e-6", "--dump-config"]) == 0
    cfg = ExperimentConfig.parse(capsys.readouterr().out)
    assert cfg.seed == 7
    assert cfg.tolerance("index") == 1e-6
    assert cfg.model.kind == "shift"


def test_index_report_contents(tmp_path):
    out = tmp_path / "idx.json"
    assert main(["index", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) >= {"experiment", "version", "config", "tolerances", "warnings", "result", "timestamp"}
    assert rep["tolerances"] == DEFAULT_TOLERANCES
    assert rep["warnings"]
    for name in ("dimension", "mi_vn", "mi_renyi2", "entropy_diff"):
        assert rep["result"]["methods"][name]["rounded"] == pytest.approx(math.log(2), abs=1e-12)


def test_reports_are_deterministic_apart_from_timestamp():
    cfg = ExperimentConfig("index", ChainConfig(8), ModelConfig("random_circuit", {"layers": 2}), seed=11)
    a, _ = run(cfg, timestamp=STAMP)
    b, _ = run(ExperimentConfig.parse(cfg.dump()), timestamp=STAMP)
    assert render_json(a) == render_json(b)
    c, _ = run(cfg)
    assert c["timestamp"] != STAMP
    c["timestamp"] = STAMP
    assert render_json(c) == render_json(a)


def test_tails_writes_csv_table(tmp_path):
    out = tmp_path / "tails.json"
    data = {"experiment": "tails", "chain": {"num_sites": 6}, "model": {"kind": "heisenberg", "params": {"t": 0.2}}}
    assert main(["tails", "--config", write_config(tmp_path, data), "--out", str(out)]) == 0
    lines = (tmp_path / "tails.csv").read_text().splitlines()
    assert lines[0] == "r,f_hat,method"
    assert len(lines) > 2


def test_synthesize_writes_model_file(tmp_path):
    out = tmp_path / "syn.json"
    assert main(["synthesize", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["result"]["residual"] <= 1e-6
    model = json.loads((tmp_path / "syn.model.json").read_text())
    assert model["chain"]
    assert model["terms"]


def test_figures_flag_renders_png(tmp_path):
    out = tmp_path / "idx.json"
    assert main(["index", "--out", str(out)]) == 0
    assert not list(tmp_path.glob("*.png"))
    assert main(["index", "--out", str(out), "--figures"]) == 0
    pngs = list(tmp_path.glob("*.png"))
    assert len(pngs) == 1
    assert pngs[0].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
