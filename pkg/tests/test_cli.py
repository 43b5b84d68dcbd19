"""End-to-end tests of the command-line front end (in-process)."""

import csv
import json

import numpy as np
import pytest

from offsetbf import cli
from offsetbf.channel import save_scenario

from helpers import scenario_from_rows, standard_complex, unit_scale_scenario

GENERATE_BLOCK = {
    "n_users": 3,
    "n_antennas": 4,
    "radius_km": 0.1,
    "sigma_e": 0.01,
    "shadowing_std_db": 4.0,
    "noise_dbm": -90.0,
    "gamma_db": 6.0,
    "seed": 3,
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def unit_scenario_file(tmp_path):
    path = tmp_path / "unit_scenario.json"
    save_scenario(unit_scale_scenario(seed=0), path)
    return str(path)


def duplicate_scenario_file(tmp_path):
    rng = np.random.default_rng(13)
    base = standard_complex(rng, (4,))
    rows = np.vstack([base, base + 1e-6 * standard_complex(rng, (4,))])
    path = tmp_path / "duplicate_scenario.json"
    save_scenario(scenario_from_rows(rows), path)
    return str(path)


def singular_dual_scenario_file(tmp_path):
    # Unlike the duplicate pair above, this triple drives the direction
    # solver's dual iteration into a numerically singular matrix rather
    # than a sweep-limit timeout.
    rng = np.random.default_rng(13)
    rows = standard_complex(rng, (3, 4))
    rows[1] = rows[0] + 1e-6 * rows[2]
    path = tmp_path / "singular_scenario.json"
    save_scenario(scenario_from_rows(rows), path)
    return str(path)


def run_cli(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# configuration errors (exit code 1)
# ---------------------------------------------------------------------------

def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = write_config(tmp_path, {"generate": {}, "bogus": 1})
    code, out, err = run_cli(capsys, ["design", "--config", cfg])
    assert code == 1
    assert "config error" in err
    assert out == ""


def test_config_requires_exactly_one_scenario_source(tmp_path, capsys):
    scenario = unit_scenario_file(tmp_path)
    both = write_config(tmp_path, {"scenario_file": scenario, "generate": {}},
                        name="both.json")
    neither = write_config(tmp_path, {"algorithm": "zf", "r": 2.0},
                           name="neither.json")
    assert run_cli(capsys, ["design", "--config", both])[0] == 1
    assert run_cli(capsys, ["design", "--config", neither])[0] == 1


def test_config_rejects_unknown_algorithm(tmp_path, capsys):
    cfg = write_config(tmp_path, {"generate": {}, "algorithm": "socp"})
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 1
    cfg = write_config(tmp_path, {"generate": {}, "algorithms": ["zf", "socp"]},
                       name="list.json")
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 1
    cfg = write_config(tmp_path, {"generate": {}}, name="ok.json")
    code, _, err = run_cli(capsys, ["design", "--config", cfg,
                                    "--algorithms", "socp"])
    assert code == 1
    assert "config error" in err


def test_config_rejects_unknown_variance_mode(tmp_path, capsys):
    cfg = write_config(tmp_path, {"generate": {}, "variance_mode": "fast"})
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 1


def test_config_file_errors(tmp_path, capsys):
    code, _, err = run_cli(capsys, ["design", "--config",
                                    str(tmp_path / "missing.json")])
    assert code == 1
    assert "config error" in err
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run_cli(capsys, ["design", "--config", str(broken)])[0] == 1


def test_design_requires_offset_parameter(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "const_offset"})
    code, _, err = run_cli(capsys, ["design", "--config", cfg])
    assert code == 1
    assert "config error" in err


def test_malformed_scenario_file(tmp_path, capsys):
    bad = tmp_path / "scenario.json"
    bad.write_text("{truncated")
    cfg = write_config(tmp_path, {"scenario_file": str(bad), "algorithm": "zf",
                                  "r": 2.0})
    code, _, err = run_cli(capsys, ["design", "--config", cfg])
    assert code == 1
    assert "config error" in err


# ---------------------------------------------------------------------------
# design and maxr subcommands
# ---------------------------------------------------------------------------

def test_design_smoke_writes_reports(tmp_path, capsys):
    out = str(tmp_path / "report.json")
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "alg1", "r": 2.0, "out": out})
    code, stdout, stderr = run_cli(capsys, ["design", "--config", cfg])
    assert code == 0
    assert stdout == out + "\n"
    assert stderr == ""
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["algorithm"] == "alg1"
    assert set(doc) == {"config", "algorithm", "report"}
    users = doc["report"]["users"]
    assert len(users) == 3
    assert all(not u["dropped"] for u in users)
    assert all(u["beta"] > 0 for u in users)
    assert sum(u["beta"] for u in users) > 0
    with open(tmp_path / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert set(rows[0]) == {"index", "beta", "r", "mu_f", "sigma_f",
                            "predicted_outage", "dropped"}


def test_design_delta_equivalent_to_cantelli_r(tmp_path, capsys):
    scenario = unit_scenario_file(tmp_path)
    out_delta = str(tmp_path / "delta.json")
    out_r = str(tmp_path / "r.json")
    cfg_delta = write_config(tmp_path, {"scenario_file": scenario,
                                        "algorithm": "const_offset",
                                        "delta": 0.1, "out": out_delta},
                             name="cfg_delta.json")
    cfg_r = write_config(tmp_path, {"scenario_file": scenario,
                                    "algorithm": "const_offset",
                                    "r": 3.0, "out": out_r}, name="cfg_r.json")
    assert run_cli(capsys, ["design", "--config", cfg_delta])[0] == 0
    assert run_cli(capsys, ["design", "--config", cfg_r])[0] == 0
    users_delta = json.loads((tmp_path / "delta.json").read_text())["report"]["users"]
    users_r = json.loads((tmp_path / "r.json").read_text())["report"]["users"]
    assert users_delta == users_r


def test_design_from_generate_block(tmp_path, capsys):
    out = str(tmp_path / "gen.json")
    cfg = write_config(tmp_path, {"generate": dict(GENERATE_BLOCK),
                                  "algorithm": "const_offset", "r": 2.0,
                                  "out": out})
    code, stdout, _ = run_cli(capsys, ["design", "--config", cfg])
    assert code == 0
    doc = json.loads((tmp_path / "gen.json").read_text())
    assert len(doc["report"]["users"]) == 3


def test_design_rerun_is_byte_identical(tmp_path, capsys):
    out = str(tmp_path / "report.json")
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "const_offset", "r": 2.0,
                                  "out": out})
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 0
    first_json = (tmp_path / "report.json").read_bytes()
    first_csv = (tmp_path / "report.csv").read_bytes()
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 0
    assert (tmp_path / "report.json").read_bytes() == first_json
    assert (tmp_path / "report.csv").read_bytes() == first_csv


def test_design_roundtrip_from_embedded_config(tmp_path, capsys):
    out = str(tmp_path / "report.json")
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "zf", "r": 2.0, "out": out})
    assert run_cli(capsys, ["design", "--config", cfg])[0] == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    embedded = write_config(tmp_path, doc["config"], name="embedded.json")
    out2 = str(tmp_path / "again.json")
    assert run_cli(capsys, ["design", "--config", embedded, "--out", out2])[0] == 0
    again = json.loads((tmp_path / "again.json").read_text())
    assert again["report"] == doc["report"]


def test_maxr_subcommand_defaults_to_maxr(tmp_path, capsys):
    out = str(tmp_path / "maxr.json")
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "zf", "total_power": 50.0,
                                  "out": out})
    code, stdout, _ = run_cli(capsys, ["maxr", "--config", cfg])
    assert code == 0
    doc = json.loads((tmp_path / "maxr.json").read_text())
    assert doc["algorithm"] == "maxr"
    users = doc["report"]["users"]
    assert sum(u["beta"] for u in users) == pytest.approx(50.0, abs=1e-8)
    offsets = {u["r"] for u in users}
    assert len(offsets) == 1


def test_maxr_reschedule_drops_duplicate_user(tmp_path, capsys):
    out = str(tmp_path / "resched.json")
    cfg = write_config(tmp_path, {"scenario_file": duplicate_scenario_file(tmp_path),
                                  "algorithm": "maxr_reschedule",
                                  "total_power": 50.0, "out": out})
    code, stdout, stderr = run_cli(capsys, ["maxr", "--config", cfg])
    assert code == 0
    doc = json.loads((tmp_path / "resched.json").read_text())
    assert doc["report"]["rescheduled"] != []
    users = doc["report"]["users"]
    dropped = [u for u in users if u["dropped"]]
    served = [u for u in users if not u["dropped"]]
    assert len(dropped) == 1
    assert dropped[0]["predicted_outage"] == 1.0
    assert dropped[0]["beta"] == 0.0
    assert len(served) == 1
    with open(tmp_path / "resched.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    flags = {row["dropped"] for row in rows}
    assert flags == {"True", "False"}


def test_maxr_without_reschedule_fails_on_duplicates(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scenario_file": duplicate_scenario_file(tmp_path),
                                  "algorithm": "maxr", "total_power": 50.0,
                                  "out": str(tmp_path / "x.json")})
    code, _, err = run_cli(capsys, ["maxr", "--config", cfg])
    assert code == 2
    assert "design" in err


def test_maxr_reports_singular_dual_as_design_failure(tmp_path, capsys):
    cfg = write_config(tmp_path,
                       {"scenario_file": singular_dual_scenario_file(tmp_path),
                        "algorithm": "maxr", "total_power": 50.0,
                        "out": str(tmp_path / "x.json")})
    code, _, err = run_cli(capsys, ["maxr", "--config", cfg])
    assert code == 2
    assert "design failed" in err


def test_maxr_reschedule_recovers_from_singular_dual(tmp_path, capsys):
    out = str(tmp_path / "singular_resched.json")
    cfg = write_config(tmp_path,
                       {"scenario_file": singular_dual_scenario_file(tmp_path),
                        "algorithm": "maxr_reschedule",
                        "total_power": 50.0, "out": out})
    code, _, _ = run_cli(capsys, ["maxr", "--config", cfg])
    assert code == 0
    doc = json.loads((tmp_path / "singular_resched.json").read_text())
    assert doc["report"]["rescheduled"] != []
    served = [u for u in doc["report"]["users"] if not u["dropped"]]
    assert len(served) >= 1


def test_design_seed_override_changes_generated_scenario(tmp_path, capsys):
    block = {k: v for k, v in GENERATE_BLOCK.items() if k != "seed"}
    out = str(tmp_path / "seeded.json")
    cfg = write_config(tmp_path, {"generate": block, "algorithm": "zf",
                                  "r": 2.0, "out": out})
    assert run_cli(capsys, ["design", "--config", cfg, "--seed", "5"])[0] == 0
    first = json.loads((tmp_path / "seeded.json").read_text())["report"]["users"]
    assert run_cli(capsys, ["design", "--config", cfg, "--seed", "6"])[0] == 0
    second = json.loads((tmp_path / "seeded.json").read_text())["report"]["users"]
    assert first != second


# ---------------------------------------------------------------------------
# montecarlo subcommand
# ---------------------------------------------------------------------------

def test_montecarlo_reports_empirical_outage(tmp_path, capsys):
    out = str(tmp_path / "mc.json")
    cfg = write_config(tmp_path, {"scenario_file": unit_scenario_file(tmp_path),
                                  "algorithm": "const_offset", "r": 2.0,
                                  "out": out})
    code, stdout, _ = run_cli(capsys, ["montecarlo", "--config", cfg,
                                       "--trials", "300"])
    assert code == 0
    doc = json.loads((tmp_path / "mc.json").read_text())
    assert doc["n_trials"] == 300
    assert len(doc["outage"]) == 3
    assert all(0.0 <= p <= 1.0 for p in doc["outage"])
    assert len(doc["stderr_outage"]) == 3


def test_montecarlo_marks_dropped_users_in_outage(tmp_path, capsys):
    out = str(tmp_path / "mc_drop.json")
    cfg = write_config(tmp_path, {"scenario_file": duplicate_scenario_file(tmp_path),
                                  "algorithm": "maxr_reschedule",
                                  "total_power": 50.0, "n_trials": 200,
                                  "out": out})
    code, _, _ = run_cli(capsys, ["montecarlo", "--config", cfg])
    assert code == 0
    doc = json.loads((tmp_path / "mc_drop.json").read_text())
    dropped_index = doc["report"]["rescheduled"][0]
    assert doc["outage"][dropped_index] == 1.0
    assert doc["stderr_outage"][dropped_index] == 0.0


# ---------------------------------------------------------------------------
# sweep subcommand
# ---------------------------------------------------------------------------

def sweep_config(tmp_path, out, **overrides):
    doc = {"generate": dict(GENERATE_BLOCK), "algorithm": "zf",
           "algorithms": ["zf", "const_offset"], "r_grid": [1.0, 2.0, 3.0],
           "n_realizations": 3, "n_trials": 50, "out": out}
    doc.update(overrides)
    return write_config(tmp_path, doc, name="sweep.json")


def test_sweep_grid_rows_and_determinism(tmp_path, capsys):
    out = str(tmp_path / "sweep.csv")
    cfg = sweep_config(tmp_path, out)
    code, stdout, _ = run_cli(capsys, ["sweep", "--config", cfg])
    assert code == 0
    assert stdout == out + "\n"
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert sum(1 for row in rows if row["algorithm"] == "zf") == 3
    assert sum(1 for row in rows if row["algorithm"] == "const_offset") == 3
    first = (tmp_path / "sweep.csv").read_bytes()
    assert run_cli(capsys, ["sweep", "--config", cfg])[0] == 0
    assert (tmp_path / "sweep.csv").read_bytes() == first


def test_sweep_algorithms_override(tmp_path, capsys):
    out = str(tmp_path / "solo.csv")
    cfg = sweep_config(tmp_path, out)
    code, _, _ = run_cli(capsys, ["sweep", "--config", cfg,
                                  "--algorithms", "zf"])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert all(row["algorithm"] == "zf" for row in rows)


def test_sweep_zero_uncertainty_zero_outage(tmp_path, capsys):
    out = str(tmp_path / "zero.csv")
    block = {**GENERATE_BLOCK, "sigma_e": 0.0}
    cfg = sweep_config(tmp_path, out, generate=block, algorithms=["const_offset"],
                       r_grid=[1.0, 2.0])
    code, _, _ = run_cli(capsys, ["sweep", "--config", cfg])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(row["mean_outage"] == "0" for row in rows)
    assert all(row["stderr_outage"] == "0" for row in rows)


def test_sweep_config_errors(tmp_path, capsys):
    scenario = unit_scenario_file(tmp_path)
    from_file = write_config(tmp_path, {"scenario_file": scenario,
                                        "algorithm": "zf",
                                        "r_grid": [1.0]}, name="file.json")
    assert run_cli(capsys, ["sweep", "--config", from_file])[0] == 1
    no_grid = sweep_config(tmp_path, str(tmp_path / "x.csv"), r_grid=None)
    assert run_cli(capsys, ["sweep", "--config", no_grid])[0] == 1
    bad_algo = sweep_config(tmp_path, str(tmp_path / "y.csv"),
                            algorithms=["maxr"])
    assert run_cli(capsys, ["sweep", "--config", bad_algo])[0] == 1
