"""Tests for config parsing, experiment orchestration, and emission.

The determinism contracts are checked at the byte level: the same config
must produce identical CSV files across repeated runs and across worker
counts, and a payload that has made a round trip through JSON must emit
the same CSV bytes as the original report.
"""

import json
import math
import os

import numpy as np
import pytest

from kacsim.ensemble import Ensemble, snapshot_text
from kacsim.errors import FileError, ParseError, ValidationError
from kacsim.harness import (
    emit,
    emit_payload,
    parse_config,
    run_experiment,
    w1_from_text,
)
from kacsim.transport import w1_exact

MAXWELL_COUPLE = """
mode=couple
gamma=0
nu=0.5
eps_theta=0.05
N=16
T=0.05
checkpoints=0.02
seeds=1,2
translate=0.3
"""


def _read_all(out_dir):
    out = {}
    for name in sorted(os.listdir(out_dir)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            out[name] = fh.read()
    return out


# ---------------------------------------------------------------------------
# parsing


def test_parse_minimal_configs():
    cfg = parse_config("mode=w1\npoints_a=a.txt\npoints_b=b.txt")
    assert cfg.mode == "w1" and cfg.points_a == "a.txt"
    cfg = parse_config("mode=bounds\nbound_kind=hard\nd1_0=0.5\nT=2")
    assert cfg.bound_kind == "hard" and len(cfg.grid) == 11
    cfg = parse_config("mode=simulate\ns=7\nN=8\nT=0.1")
    assert cfg.kernel.gamma == pytest.approx(1.0 / 3.0)
    assert cfg.power_s == 7.0
    assert cfg.grid == (0.0, 0.1)


def test_parse_comments_and_grid():
    cfg = parse_config(
        "# full-line comment\nmode=simulate\ngamma=0 # trailing\nnu=0.5\n"
        "\nN=8\nT=1.0\ncheckpoints=0.25,0.5\n")
    assert cfg.grid == (0.0, 0.25, 0.5, 1.0)


def test_parse_mode_argument():
    cfg = parse_config("points_a=a\npoints_b=b", mode="w1")
    assert cfg.mode == "w1"
    with pytest.raises(ValidationError):
        parse_config("mode=couple\npoints_a=a", mode="w1")
    with pytest.raises(ValidationError):
        parse_config("N=4")  # no mode anywhere


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_config("mode=simulate\nnot a pair\n")
    assert err.value.line == 2
    with pytest.raises(ParseError) as err:
        parse_config("mode=simulate\nbogus_key=1\n")
    assert err.value.line == 2
    with pytest.raises(ParseError) as err:
        parse_config("mode=simulate\nN=4\nN=5\n")
    assert err.value.line == 3 and "duplicate" in str(err.value)
    with pytest.raises(ParseError) as err:
        parse_config("mode=simulate\nN=four\n")
    assert err.value.line == 2


def test_validation_names_preconditions():
    base = "mode=simulate\nN=8\nT=0.1\n"
    with pytest.raises(ValidationError, match="nu"):
        parse_config(base + "gamma=0\nnu=1.5")
    with pytest.raises(ValidationError, match="either s or"):
        parse_config(base + "s=7\ngamma=0\nnu=0.5")
    with pytest.raises(ValidationError, match="needs s, or both"):
        parse_config(base + "gamma=0.5")
    with pytest.raises(ValidationError, match="three-dimensional"):
        parse_config(base + "s=7\nd=2")
    with pytest.raises(ValidationError, match="needs N"):
        parse_config("mode=simulate\ns=7\nT=0.1")
    with pytest.raises(ValidationError, match="needs T"):
        parse_config("mode=simulate\ns=7\nN=8")
    with pytest.raises(ValidationError, match="strictly increasing"):
        parse_config(base + "s=7\ncheckpoints=0.08,0.02")
    with pytest.raises(ValidationError, match="lie in"):
        parse_config(base + "s=7\ncheckpoints=0.5")
    with pytest.raises(ValidationError, match="distinct"):
        parse_config(base + "s=7\nseeds=3,3")
    with pytest.raises(ValidationError, match="not valid in mode"):
        parse_config(base + "s=7\npoints_a=x")


def test_validation_couple_marginals():
    base = "mode=couple\ngamma=0\nnu=0.5\nN=8\nT=0.1\n"
    with pytest.raises(ValidationError, match="second marginal"):
        parse_config(base)
    with pytest.raises(ValidationError, match="not both"):
        parse_config(base + "translate=0.1\ninit2=gaussian")
    cfg = parse_config(base + "init2=gaussian\ninit2_scale=4.0")
    assert cfg.init2.covariance_scale == 4.0
    with pytest.raises(ValidationError, match="only applies to"):
        parse_config(base + "translate=0.1\ninit=gaussian\ninit_radius=1")
    with pytest.raises(ValidationError, match="needs init_means"):
        parse_config(base + "translate=0.1\ninit=two_gaussians")


def test_validation_n_cap_and_warning():
    base = "mode=couple\ngamma=0\nnu=0.5\nT=0.1\ntranslate=0.1\n"
    with pytest.raises(ValidationError, match="capped"):
        parse_config(base + "N=5001")
    with pytest.warns(UserWarning, match="matching"):
        parse_config(base + "N=2500")


def test_validation_eps_levels():
    base = "mode=couple\nN=8\nT=0.1\ntranslate=0.1\n"
    with pytest.raises(ValidationError, match="gamma = 0"):
        parse_config(base + "s=7\neps_levels=0.01,0.02")
    with pytest.raises(ValidationError, match="repair"):
        parse_config(base + "gamma=0\nnu=0.5\neps_levels=0.01,0.02\n"
                     "repair=true")
    cfg = parse_config(base + "gamma=0\nnu=0.5\neps_levels=0.02,0.01")
    assert cfg.eps_levels == (0.01, 0.02) and cfg.repair is False
    with pytest.raises(ValidationError, match="not valid in mode"):
        parse_config(base.replace("couple", "verify")
                     + "gamma=0\nnu=0.5\neps_levels=0.01,0.02")


def test_validation_exp_moment_keys():
    base = "mode=simulate\ns=7\nN=8\nT=0.1\n"
    with pytest.raises(ValidationError, match="come together"):
        parse_config(base + "exp_eps=0.05")
    with pytest.raises(ValidationError, match="exp_s"):
        parse_config(base + "exp_eps=0.05\nexp_s=2.5")
    cfg = parse_config(base + "exp_eps=0.05\nexp_s=0.333")
    assert cfg.exp_eps == 0.05


def test_validation_bounds_mode():
    with pytest.raises(ValidationError, match="bound_kind"):
        parse_config("mode=bounds\nd1_0=0.1\nT=1")
    with pytest.raises(ValidationError, match="needs d1_0"):
        parse_config("mode=bounds\nbound_kind=hard\nT=1")
    with pytest.raises(ValidationError, match="only applies to"):
        parse_config("mode=bounds\nbound_kind=hard\nd1_0=0.1\nT=1\nK_p=2")
    with pytest.raises(ValidationError, match="checkpoints or T"):
        parse_config("mode=bounds\nbound_kind=soft\nd1_0=0.1")
    cfg = parse_config("mode=bounds\nbound_kind=soft\nd1_0=0.1\n"
                       "checkpoints=0,1,2\nK_p=0.5\np=2")
    assert cfg.soft_params.K_p == 0.5 and cfg.grid == (0.0, 1.0, 2.0)


# ---------------------------------------------------------------------------
# running


def test_couple_translate_ledger():
    cfg = parse_config(MAXWELL_COUPLE)
    rep = run_experiment(cfg)
    assert len(rep.replicas) == 2
    led = rep.replicas[0].ledger
    assert tuple(led.t) == cfg.grid
    # a rigid translate stays exactly rigid under shared Maxwell noise
    np.testing.assert_allclose(led.d1, 0.3, atol=1e-12)
    assert rep.aggregate["energy_drift_max"] < 1e-9
    assert rep.aggregate["tau"].shape == (3,)
    diag = rep.replicas[0].diagnostics
    assert set(diag) == {"energy_first", "energy_second", "m1_first",
                         "m1_second"}


def test_couple_identical_specs_give_zero_d1():
    cfg = parse_config(
        "mode=couple\ngamma=0\nnu=0.5\neps_theta=0.05\nN=12\nT=0.04\n"
        "seeds=7\ninit=gaussian\ninit2=gaussian")
    rep = run_experiment(cfg)
    np.testing.assert_array_equal(rep.replicas[0].ledger.d1, 0.0)


def test_verify_verdicts_and_overall_pass():
    cfg = parse_config(MAXWELL_COUPLE.replace("mode=couple", "mode=verify"))
    rep = run_experiment(cfg)
    assert rep.overall_pass is True
    assert [v["replica"] for v in rep.verdicts] == [0, 1]
    assert all(v["passed"] for v in rep.verdicts)
    assert all(v["worst_slack"] > 0.0 for v in rep.verdicts)


def test_levels_run_structure():
    cfg = parse_config(
        "mode=couple\ngamma=0\nnu=0.25\nN=24\nT=0.03\ncheckpoints=0.015\n"
        "seeds=3\ntranslate=0.2\neps_levels=0.004,0.002,0.001")
    rep = run_experiment(cfg)
    levels = rep.replicas[0].levels
    assert [e for e, _ in levels] == [0.001, 0.002, 0.004]
    for _, led in levels:
        assert tuple(led.t) == cfg.grid
    assert rep.aggregate["level_d1_diffs"].shape == (2,)
    assert np.all(rep.aggregate["level_d1_diffs"] >= 0.0)


def test_replica_errors_are_tagged():
    cfg = parse_config(
        "mode=simulate\ns=7\nN=8\nT=0.01\nseeds=4,5\ninit=file\n"
        "init_path=/no/such/file.txt")
    for workers in (1, 2):
        with pytest.raises(FileError, match=r"replica 0 \(seed 4\)"):
            run_experiment(cfg, workers=workers)


def test_simulate_series_and_snapshot(tmp_path):
    cfg = parse_config(
        "mode=simulate\ngamma=0\nnu=0.5\neps_theta=0.05\nN=10\nT=0.05\n"
        "checkpoints=0.02\nseeds=11\nexp_eps=0.1\nexp_s=1.0")
    rep = run_experiment(cfg)
    s = rep.replicas[0].series
    assert list(s["t"]) == [0.0, 0.02, 0.05]
    assert s["collisions"][-1] >= s["collisions"][0]
    np.testing.assert_allclose(s["energy"], s["energy"][0], rtol=1e-9)
    assert np.all(s["exp_moment"] >= 1.0)
    # the stored snapshot is the final state
    from kacsim.ensemble import load_snapshot
    snap = load_snapshot(rep.replicas[0].snapshot)
    assert snap.time == pytest.approx(0.05)
    assert snap.velocities.shape == (10, 3)


# ---------------------------------------------------------------------------
# w1 mode


def _snapshot_file(tmp_path, name, vel):
    e = Ensemble(velocities=np.asarray(vel, dtype=float))
    path = tmp_path / name
    path.write_text(snapshot_text(e), encoding="utf-8")
    return path


def test_w1_mode_end_to_end(tmp_path):
    rng = np.random.default_rng(5)
    a = rng.normal(size=(6, 2))
    b = rng.normal(size=(6, 2))
    pa = _snapshot_file(tmp_path, "a.txt", a)
    pb = _snapshot_file(tmp_path, "b.txt", b)
    cfg = parse_config("mode=w1\npoints_a=%s\npoints_b=%s\nwith_plan=true"
                       % (pa, pb))
    rep = run_experiment(cfg)
    assert rep.w1["cost"] == pytest.approx(w1_exact(a, b).cost, rel=1e-12)
    assert rep.w1["dual_feasible"] is True
    assert sorted(rep.w1["matching"]) == list(range(6))
    assert len(rep.w1["plan_rows"]) == 6
    # inline-text route used by the service gives the same numbers
    inline = w1_from_text(pa.read_text(), pb.read_text())
    assert inline["cost"] == rep.w1["cost"]


# ---------------------------------------------------------------------------
# emission


def test_emit_csv_byte_identical_across_runs_and_workers(tmp_path):
    outs = []
    for tag, workers in (("one", 1), ("again", 1), ("four", 4)):
        cfg = parse_config(MAXWELL_COUPLE)
        rep = run_experiment(cfg, workers=workers)
        out = tmp_path / tag
        emit(rep, "csv", out)
        outs.append(_read_all(out))
    assert outs[0] == outs[1] == outs[2]
    assert set(outs[0]) == {"ledger_0.csv", "ledger_1.csv",
                            "diagnostics_0.csv", "diagnostics_1.csv",
                            "summary.csv"}


def test_emit_json_roundtrip_matches_csv(tmp_path):
    cfg = parse_config(MAXWELL_COUPLE.replace("mode=couple", "mode=verify"))
    rep = run_experiment(cfg)
    emit(rep, "csv", tmp_path / "direct")
    emit(rep, "json", tmp_path / "json")
    with open(tmp_path / "json" / "report.json", encoding="utf-8") as fh:
        payload = json.load(fh)
    assert payload["config"]["mode"] == "verify"
    assert payload["overall_pass"] is True
    emit_payload(payload, "csv", tmp_path / "via_json")
    assert _read_all(tmp_path / "direct") == _read_all(tmp_path / "via_json")


def test_emit_ledger_columns_and_values(tmp_path):
    cfg = parse_config(MAXWELL_COUPLE)
    rep = run_experiment(cfg)
    emit(rep, "csv", tmp_path)
    lines = (tmp_path / "ledger_0.csv").read_text().splitlines()
    assert lines[0] == "t,d1,h_pair,H,int_H,rhs_bound,n_both,n_f,n_ftilde," \
        "n_fict"
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[1]) == pytest.approx(0.3, abs=1e-12)
    assert all(len(line.split(",")) == 10 for line in lines[1:])
    # intact 17-significant-digit round trip
    led = rep.replicas[0].ledger
    assert float(lines[2].split(",")[3]) == led.H[1]


def test_emit_bounds_and_header_only(tmp_path):
    cfg = parse_config("mode=bounds\nbound_kind=hard\nd1_0=0.25\n"
                       "checkpoints=0,0.5,1.0\nK_eps=1.0\nC_exp=1.0")
    rep = run_experiment(cfg)
    emit(rep, "csv", tmp_path)
    lines = (tmp_path / "bounds.csv").read_text().splitlines()
    assert lines[0] == "t,value"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == 0.25

    single = parse_config(
        "mode=couple\ngamma=0\nnu=0.25\nN=8\nT=0.01\nseeds=1\n"
        "translate=0.1\neps_levels=0.002")
    rep2 = run_experiment(single)
    emit(rep2, "csv", tmp_path / "lv")
    text = (tmp_path / "lv" / "levels.csv").read_text()
    assert text == "eps_fine,eps_coarse,mean_abs_d1_diff\n"


def test_emit_rejects_bad_format(tmp_path):
    cfg = parse_config("mode=bounds\nbound_kind=hard\nd1_0=0.1\nT=1")
    rep = run_experiment(cfg)
    with pytest.raises(ValidationError):
        emit(rep, "xml", tmp_path)


def test_seed_offset_changes_streams():
    cfg = parse_config(MAXWELL_COUPLE.replace("translate=0.3",
                                              "init2=gaussian\n"
                                              "init2_scale=1.5"))
    rep0 = run_experiment(cfg, seed_offset=0)
    rep9 = run_experiment(cfg, seed_offset=9)
    assert rep0.replicas[0].stream != rep9.replicas[0].stream
    assert not np.array_equal(rep0.replicas[0].ledger.d1,
                              rep9.replicas[0].ledger.d1)
