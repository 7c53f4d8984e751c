"""Tests for the command-line client: exit codes, file emission, and the
in-process/remote transport equivalence (a real uvicorn instance)."""

import json
import socket
import threading
import time
import types

import numpy as np
import pytest

from kacsim.cli import build_parser, main
from kacsim.ensemble import Ensemble, snapshot_text

COUPLE_CFG = ("mode=couple\ngamma=0\nnu=0.5\neps_theta=0.05\nN=12\n"
              "T=0.03\ncheckpoints=0.015\nseeds=5\ntranslate=0.2\n")


def _write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _read_all(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_parser_structure():
    ap = build_parser()
    args = ap.parse_args(["couple", "--config", "c", "--workers", "3",
                          "--seed-offset", "7", "--format", "json"])
    assert args.command == "couple" and args.workers == 3
    assert args.seed_offset == 7 and args.format == "json"
    with pytest.raises(SystemExit):
        ap.parse_args(["couple", "--config", "c", "--format", "xml"])


def test_couple_writes_csv(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, COUPLE_CFG)
    out = tmp_path / "out"
    assert main(["couple", "--config", cfg, "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["diagnostics_0.csv", "ledger_0.csv", "summary.csv"]
    printed = capsys.readouterr().out
    assert "ledger_0.csv" in printed


def test_json_format(tmp_path):
    cfg = _write_cfg(tmp_path, COUPLE_CFG)
    out = tmp_path / "out"
    assert main(["couple", "--config", cfg, "--format", "json",
                 "--out", str(out)]) == 0
    with open(out / "report.json", encoding="utf-8") as fh:
        payload = json.load(fh)
    assert payload["config"]["translate"] == "0.2"
    assert payload["replicas"][0]["ledger"]["d1"][0] == pytest.approx(
        0.2, abs=1e-12)


def test_verify_exit_zero_and_output(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, COUPLE_CFG.replace("mode=couple",
                                                  "mode=verify"))
    out = tmp_path / "out"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "predicate holds" in printed
    assert (out / "verdicts.csv").exists()


def test_verify_exit_two_on_failure(tmp_path, monkeypatch, capsys):
    # force a failing verdict through the service's harness entry point
    payload = {"mode": "verify", "config": {}, "invocation": {},
               "series": {"times": []}, "timings": {}, "n": 4, "d": 3,
               "replicas": [], "verdicts": [
                   {"replica": 0, "seed": 5, "passed": False,
                    "worst_slack": -0.5}],
               "overall_pass": False}
    fake = types.SimpleNamespace(to_payload=lambda: payload)
    monkeypatch.setattr("kacsim.service.run_experiment",
                        lambda cfg, seed_offset=0, workers=1: fake)
    cfg = _write_cfg(tmp_path, COUPLE_CFG.replace("mode=couple",
                                                  "mode=verify"))
    code = main(["verify", "--config", cfg, "--out",
                 str(tmp_path / "out")])
    assert code == 2
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert "FAILED" in captured.err


def test_error_exits_one(tmp_path, capsys):
    assert main(["couple", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "error:" in capsys.readouterr().err
    cfg = _write_cfg(tmp_path, "bogus_key=1\n")
    assert main(["couple", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "ParseError" in err


def test_w1_flow(tmp_path):
    rng = np.random.default_rng(3)
    for name, pts in (("a.txt", rng.normal(size=(5, 2))),
                      ("b.txt", rng.normal(size=(5, 2)))):
        (tmp_path / name).write_text(
            snapshot_text(Ensemble(velocities=pts)), encoding="utf-8")
    cfg = _write_cfg(
        tmp_path,
        "mode=w1\npoints_a=%s\npoints_b=%s\nwith_plan=true\n"
        % (tmp_path / "a.txt", tmp_path / "b.txt"))
    out = tmp_path / "out"
    assert main(["w1", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "w1.csv").read_text().splitlines()
    assert lines[0] == "n,d,cost,dual_feasible"
    n, d, cost, feas = lines[1].split(",")
    assert (n, d, feas) == ("5", "2", "true")
    assert float(cost) > 0.0
    assert (out / "plan.csv").read_text().startswith("i,j,distance")


def test_out_key_in_config(tmp_path):
    out = tmp_path / "fromcfg"
    cfg = _write_cfg(tmp_path, COUPLE_CFG + "out=%s\n" % out)
    assert main(["couple", "--config", cfg]) == 0
    assert (out / "ledger_0.csv").exists()


def test_bounds_subcommand(tmp_path):
    cfg = _write_cfg(tmp_path,
                     "mode=bounds\nbound_kind=soft\nd1_0=0.1\nK_p=1\n"
                     "lp_c1=1\nlp_c2=1\ncheckpoints=0,1\n")
    out = tmp_path / "out"
    assert main(["bounds", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "bounds.csv").read_text().splitlines()
    assert float(rows[2].split(",")[1]) == pytest.approx(
        0.1 * np.e ** 3, rel=1e-12)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_remote_server_matches_in_process(tmp_path):
    import uvicorn

    from kacsim.service import app

    port = _free_port()
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1",
                                           port=port, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        import httpx
        deadline = time.time() + 30.0
        url = "http://127.0.0.1:%d" % port
        while True:
            try:
                if httpx.get(url + "/v1/health", timeout=2.0).status_code \
                        == 200:
                    break
            except httpx.HTTPError:
                pass
            if time.time() > deadline:
                raise RuntimeError("server did not come up")
            time.sleep(0.1)
        cfg = _write_cfg(tmp_path, COUPLE_CFG)
        assert main(["couple", "--config", cfg, "--out",
                     str(tmp_path / "remote"), "--server", url]) == 0
        assert main(["couple", "--config", cfg, "--out",
                     str(tmp_path / "local")]) == 0
        assert _read_all(tmp_path / "remote") == _read_all(
            tmp_path / "local")
    finally:
        server.should_exit = True
        thread.join(timeout=10.0)
