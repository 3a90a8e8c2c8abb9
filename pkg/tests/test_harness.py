import json
from pathlib import Path

import numpy as np
import pytest

from cdmalab.errors import ConfigError, DomainError
from cdmalab.harness import (ExperimentConfig, expand_seeds, load_config,
                             parse_config, run_experiment)


BASE_SPEC = {"K": 8, "N": 4, "C": 2, "L": 4, "modulation": "bpsk",
             "regularity": "fully_regular"}


def make_config(**over):
    doc = {"schema_version": 1, "experiment": "DetectSweep", "spec": dict(BASE_SPEC),
           "sigma0_grid": [0.5, 1.0], "trials": 10, "seed": 3}
    doc.update(over)
    return doc


def test_expand_seeds_deterministic_and_distinct():
    a = expand_seeds(42, 100)
    b = expand_seeds(42, 100)
    assert a == b
    big = expand_seeds(7, 1_000_000)
    assert len(set(big)) == len(big)
    other = expand_seeds(8, 100)
    assert other != a[:100]
    with pytest.raises(DomainError):
        expand_seeds(1, 0)


def test_parse_config_rejects_unknown_fields():
    with pytest.raises(ConfigError) as ei:
        parse_config(make_config(banana=1))
    assert "banana" in ei.value.fields
    with pytest.raises(ConfigError) as ei:
        parse_config(make_config(spec=dict(BASE_SPEC, power=2)))
    assert "power" in ei.value.fields
    with pytest.raises(ConfigError):
        parse_config(make_config(popdyn={"mystery": 1}))
    with pytest.raises(ConfigError):
        parse_config(make_config(detector={"mystery": 1}))


def test_parse_config_validates_values():
    with pytest.raises(ConfigError) as ei:
        parse_config(make_config(experiment="Banana"))
    assert ei.value.fields == ("experiment",)
    with pytest.raises(ConfigError):
        parse_config(make_config(schema_version=2))
    with pytest.raises(ConfigError):
        parse_config(make_config(sigma0_grid=[]))
    with pytest.raises(ConfigError):
        parse_config(make_config(sigma0_grid=[0.5, -1.0]))
    with pytest.raises(ConfigError):
        parse_config(make_config(trials=0))
    with pytest.raises(ConfigError):
        parse_config(make_config(spec={"K": 5, "N": 3, "C": 3, "L": 4}))


def test_parse_config_grid_shorthand():
    cfg = parse_config(make_config(sigma0_grid={"start": 0.2, "stop": 1.0,
                                                "steps": 5}))
    assert cfg.sigma0_grid == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    with pytest.raises(ConfigError):
        parse_config(make_config(sigma0_grid={"start": 0.2, "stop": 1.0}))
    with pytest.raises(ConfigError):
        parse_config(make_config(sigma0_grid=["a", "b"]))


def test_detect_sweep_end_to_end(tmp_path):
    cfg = parse_config(make_config())
    res = run_experiment(cfg, out_dir=tmp_path)
    assert res.status == "ok"
    csv_text = (tmp_path / "detect_sweep.csv").read_text().splitlines()
    assert csv_text[0] == ("sigma0,Q,ber_exact,ber_bp,se_exact,se_bp,"
                           "bp_convergence_rate")
    assert len(csv_text) == 3
    # Q strictly decreasing along increasing sigma0
    qs = [float(line.split(",")[1]) for line in csv_text[1:]]
    assert qs[0] > qs[1]
    # manifest lists every emitted file
    manifest = (tmp_path / "manifest.txt").read_text()
    for name in ("detect_sweep.csv", "result.json"):
        assert name in manifest
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["status"] == "ok"


def test_detect_sweep_rerun_bit_identical(tmp_path):
    cfg = parse_config(make_config())
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    for name in ("detect_sweep.csv", "result.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_detect_sweep_threads_match_serial(tmp_path):
    cfg = parse_config(make_config())
    run_experiment(cfg, out_dir=tmp_path / "serial", threads=1)
    run_experiment(cfg, out_dir=tmp_path / "par", threads=2)
    assert (tmp_path / "serial" / "detect_sweep.csv").read_bytes() == \
           (tmp_path / "par" / "detect_sweep.csv").read_bytes()


def test_popdyn_scan_experiment(tmp_path):
    doc = make_config(experiment="PopdynScan",
                      spec={"K": 6, "N": 3, "C": 3, "L": 6},
                      sigma0_grid=[0.6],
                      popdyn={"population_size": 2000, "max_sweeps": 150})
    res = run_experiment(parse_config(doc), out_dir=tmp_path)
    assert res.status == "ok"
    text = (tmp_path / "scan.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == ("sigma0,Q,init,ber,ber_se,free_energy,fe_se,"
                        "converged,multivalued")
    assert len(lines) == 3  # two inits for one grid point
    assert {ln.split(",")[2] for ln in lines[1:]} == {"random", "informed"}
    assert "np.float64" not in text
    # every numeric cell parses back to a float
    for ln in lines[1:]:
        cells = ln.split(",")
        for i in (0, 1, 3, 4, 5, 6):
            float(cells[i])


def test_naesat_census_experiment(tmp_path):
    doc = make_config(experiment="NaesatCensus",
                      spec={"K": 8, "N": 6, "C": 3, "L": 4,
                            "modulation": "unmod"},
                      sigma0_grid=[], trials=3)
    res = run_experiment(parse_config(doc), out_dir=tmp_path)
    assert res.status == "ok"
    lines = (tmp_path / "naesat.csv").read_text().splitlines()
    assert len(lines) == 4


def test_moment_check_experiment(tmp_path):
    doc = make_config(experiment="MomentCheck",
                      spec={"K": 12, "N": 6, "C": 3, "L": 6},
                      sigma0_grid=[0.7], trials=600)
    res = run_experiment(parse_config(doc), out_dir=tmp_path)
    assert res.status == "ok"
    assert (tmp_path / "moments.csv").exists()
    assert (tmp_path / "hist_h_0.csv").exists()
    row = (tmp_path / "moments.csv").read_text().splitlines()[1].split(",")
    header = (tmp_path / "moments.csv").read_text().splitlines()[0].split(",")
    vals = dict(zip(header, row))
    assert abs(float(vals["emp_mean"]) - float(vals["pred_mean"])) < \
        5 * float(vals["emp_mean_se"])


def test_equivalence_check_experiment(tmp_path):
    doc = make_config(experiment="EquivalenceCheck",
                      spec={"K": 6, "N": 3, "C": 3, "L": 6},
                      sigma0_grid=[0.6],
                      popdyn={"population_size": 3000, "max_sweeps": 200})
    res = run_experiment(parse_config(doc), out_dir=tmp_path)
    assert res.status == "ok"
    lines = (tmp_path / "equivalence.csv").read_text().splitlines()
    assert len(lines) == 3
    idx = lines[0].split(",").index("ber_consistent")
    assert all(ln.split(",")[idx] == "True" for ln in lines[1:])


def test_partial_failure_recorded(tmp_path):
    # K=30 exceeds the exact-detector budget: every point fails, the run
    # completes with status partial and the manifest records the failures
    doc = make_config(spec={"K": 30, "N": 15, "C": 1, "L": 2}, trials=2)
    res = run_experiment(parse_config(doc), out_dir=tmp_path)
    assert res.status == "partial"
    assert all("failed" in p["status"] for p in res.point_status)
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "failed" in manifest


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(make_config()))
    cfg = load_config(path)
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.experiment == "DetectSweep"
    assert cfg.spec.K == 8
