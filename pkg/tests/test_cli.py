import csv
import json
import math

import numpy as np
import pytest

from outageid.cli import (
    EXIT_ERROR,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_USAGE,
    UsageError,
    benchmark,
    build_experiment_config,
    main,
    parse_epsilon_grid,
)
from outageid.montecarlo import DEFAULT_SIGMA_V


def test_identify_zero_noise(capsys):
    assert main(["identify", "--case", "case_ieee30", "--outage", "7"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "identified=7" in out and "conclusive=True" in out


def test_identify_inconclusive():
    assert main(["identify", "--case", "case_ieee30", "--outage", "7", "--epsilon", "1e9"]) == EXIT_INCONCLUSIVE


def test_identify_missing_case(tmp_path):
    assert main(["identify", "--case", str(tmp_path / "nope.m"), "--outage", "1"]) == EXIT_ERROR


def test_identify_needs_input():
    assert main(["identify", "--case", "case_ieee30"]) == EXIT_USAGE


def test_identify_non_candidate():
    assert main(["identify", "--case", "case_ieee30", "--outage", "13"]) == EXIT_USAGE


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["identify", "--bogus"])
    assert exc.value.code == EXIT_USAGE


def test_identify_from_observation_file(tmp_path, prep30, ieee30, capsys):
    post = prep30.ac.post_voltage(22)
    base = prep30.base.V
    path = tmp_path / "obs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "vm_pre", "va_pre_deg", "vm_post", "va_post_deg"])
        for k in range(30):
            w.writerow([ieee30.external_ids[k], abs(base[k]), math.degrees(np.angle(base[k])),
                        abs(post[k]), math.degrees(np.angle(post[k]))])
    code = main(["identify", "--case", "case_ieee30", "--observation", str(path), "--pmus", "2,10,15,24,27"])
    assert code == EXIT_OK
    assert "identified=22" in capsys.readouterr().out


def test_observation_missing_bus(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("bus_id,vm_pre,va_pre_deg,vm_post,va_post_deg\n1,1,0,1,0\n")
    assert main(["identify", "--case", "case_ieee30", "--observation", str(path), "--pmus", "1,2"]) == EXIT_USAGE


def test_epsilon_grid_parsing():
    assert parse_epsilon_grid("0:0.002:0.0005") == [0.0, 0.0005, 0.001, 0.0015, 0.002]
    assert parse_epsilon_grid("0,1e-3") == [0.0, 0.001]
    with pytest.raises(UsageError):
        parse_epsilon_grid("0:1:0")
    with pytest.raises(UsageError):
        parse_epsilon_grid("1:0:0.1")


def test_build_config_defaults():
    cfg = build_experiment_config({})
    assert cfg.case == "case_ieee30" and cfg.mode == "ac" and cfg.epsilon_grid == (0.0,)
    assert cfg.noise.sigma_v == DEFAULT_SIGMA_V and cfg.independent_pre_noise
    cfg = build_experiment_config({"P": "3,5", "epsilon_grid": "0:1e-3:5e-4", "exact_pre": "yes", "seed": "4"})
    assert cfg.P == (3, 5) and cfg.epsilon_grid == (0.0, 0.0005, 0.001)
    assert not cfg.independent_pre_noise and cfg.noise.seed == 4


def run_sweep(out_dir, *extra):
    return main(["sweep", "--P", "3", "--placements", "6", "--realizations", "4",
                 "--epsilon-grid", "0:0.002:0.001", "--out-dir", str(out_dir), *extra])


def test_sweep_outputs(tmp_path, capsys):
    assert run_sweep(tmp_path, "--trials", "yes") == EXIT_OK
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[0] == "# schema=1"
    assert rows[1] == ("coverage,P,epsilon,n_trials,rate_correct,rate_misidentified,"
                       "rate_correct_filtered,rate_misidentified_filtered")
    assert len(rows) == 2 + 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["schema"] == 1 and manifest["seeds"] == {"master": 0, "noise": 0}
    assert len(manifest["config_digest"]) == 16
    trials = (tmp_path / "trials_P3.csv").read_text().splitlines()
    assert len(trials) == 1 + 6 * 38 * 4


def test_sweep_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_sweep(a) == EXIT_OK
    assert run_sweep(b, "--jobs", "2") == EXIT_OK
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_sweep_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# small run\nP = 3\nplacements = 2\nrealizations = 2\nepsilon = 0, 0.001\n")
    assert main(["sweep", "--config", str(conf), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert len((tmp_path / "o" / "results.csv").read_text().splitlines()) == 4


def test_sweep_unknown_config_key(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("placemnets = 2\n")
    assert main(["sweep", "--config", str(conf), "--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_sweep_conflicting_placement_options(tmp_path):
    assert main(["sweep", "--P", "3", "--pmus", "1,2", "--out-dir", str(tmp_path)]) == EXIT_ERROR


def test_demo4_zero_noise(tmp_path):
    out = tmp_path / "d.csv"
    code = main(["demo4", "--realizations", "25", "--sigma-v", "0", "--sigma-theta", "0", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 25
    assert all(r["closer_to_rival"] == "0" and r["nearest_branch"] == "1" for r in rows)


def test_bench_report(capsys):
    report = benchmark("case4gs", 3)
    assert report["n_bus"] == 4 and report["repetitions"] == 3
    assert report["median_solve_s"] > 0 and report["signature_build_s"] > 0
    assert main(["bench", "--case", "case4gs", "--repetitions", "2"]) == EXIT_OK
    assert "power flow solve" in capsys.readouterr().out


def test_bench_needs_repetitions():
    assert main(["bench", "--repetitions", "0"]) == EXIT_USAGE
