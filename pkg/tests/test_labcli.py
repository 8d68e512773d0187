"""Experiment runner: configs, manifests, determinism, exit codes."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import pytest

from aphomlab.errors import ConfigInvalid
from aphomlab.labcli import (KINDS, config_hash, list_experiments, load_config,
                             main, run, validate_config)


def write_config(tmp_path, name="cfg.json", **overrides):
    obj = {"schema": 1, "kind": "corrector", "field": "cosine_1d",
           "params": {"S_list": [4.0], "h": 0.03125}, "seed": 0}
    obj.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path), obj


def test_catalog_names_all_kinds(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for kind in KINDS:
        assert kind in out
    # the rate study advertises the estimate it exercises
    assert "rate" in out and "Theorem 1.3" in out


def test_validate_ok_and_exit_codes(tmp_path, capsys):
    path, _ = write_config(tmp_path)
    assert main(["validate", path]) == 0
    assert "ok:" in capsys.readouterr().out
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_validate_rejects_bad_configs(tmp_path):
    for overrides in (
        {"schema": 2},
        {"kind": "no-such-kind"},
        {"params": {}},                                   # S_list missing
        {"params": {"S_list": [4.0], "h": -0.1}},
        {"seed": -3},
    ):
        path, _ = write_config(tmp_path, **overrides)
        assert main(["validate", path]) == 2


def test_validate_resolution_rule(tmp_path):
    # oscillatory kinds must resolve the fastest scale: h <= eps_min/8
    path, _ = write_config(
        tmp_path, kind="rate",
        params={"eps_list": [0.125, 0.0625], "sigma": 0.5, "h0": 0.03125})
    assert main(["validate", path]) == 2


def test_config_hash_ignores_out_dir():
    base = {"schema": 1, "kind": "corrector", "field": "cosine_1d",
            "params": {"S_list": [4.0]}, "seed": 0}
    with_dir = dict(base, out_dir="/somewhere/else")
    assert config_hash(base) == config_hash(with_dir)
    assert config_hash(base) != config_hash(dict(base, seed=1))


def test_unknown_field_is_config_error(tmp_path):
    path, _ = write_config(tmp_path, field="no_such_field")
    assert main(["validate", path]) == 2


def test_run_writes_manifest_and_artifacts(tmp_path, capsys):
    path, obj = write_config(tmp_path)
    out_dir = str(tmp_path / "out")
    code = main(["run", path, "--out", out_dir])
    text = capsys.readouterr().out
    assert code == 0
    assert "[PASS]" in text
    manifest = json.load(open(os.path.join(out_dir, "manifest.json")))
    assert manifest["kind"] == "corrector"
    assert manifest["config_hash"] == config_hash(obj)
    assert manifest["passed"] is True
    for entry in manifest["files"]:
        p = os.path.join(out_dir, entry["name"])
        blob = open(p, "rb").read()
        assert len(blob) == entry["bytes"]
        assert hashlib.sha256(blob).hexdigest() == entry["sha256"]


def test_rerun_is_bitwise_deterministic(tmp_path):
    path, _ = write_config(tmp_path)
    outs = []
    for tag in ("a", "b"):
        out_dir = str(tmp_path / tag)
        assert main(["run", path, "--out", out_dir]) == 0
        manifest = json.load(open(os.path.join(out_dir, "manifest.json")))
        outs.append({e["name"]: e["sha256"] for e in manifest["files"]})
    assert outs[0] == outs[1]


def test_list_experiments_structure():
    entries = list_experiments()
    assert sorted(e["kind"] for e in entries) == sorted(KINDS)
    for e in entries:
        assert e["required_params"], f"{e['kind']} lists no required params"


def test_load_config_rejects_non_dict(tmp_path):
    path = tmp_path / "arr.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ConfigInvalid):
        load_config(str(path))
