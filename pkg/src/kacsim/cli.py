"""Command-line client of the kacsim service.

The CLI is a thin transport layer: it reads the config file, posts it to
the service (in-process by default, over HTTP with --server), and writes
the returned payload as CSV or JSON.  All numerical work happens behind
the service; local and remote invocations of the same config produce
byte-identical CSV files.

Exit codes: 0 success, 2 verify-mode predicate failure, 1 any error.
"""

import argparse
import sys

import httpx

from .errors import FileError, KacsimError
from .harness import FORMATS, MODES, emit_payload, parse_config

_HELP = {
    "simulate": "evolve independent ensembles and record moment series",
    "couple": "evolve a coupled pair and record the contraction ledger",
    "verify": "couple plus pass/fail checkpoint predicate verdicts",
    "w1": "exact pairing distance between two snapshot files",
    "bounds": "tabulate a theoretical envelope curve",
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="kacsim",
        description="collision-process simulator and verification client")
    sub = ap.add_subparsers(dest="command", required=True, metavar="MODE")
    for mode in MODES:
        p = sub.add_parser(mode, help=_HELP[mode])
        p.add_argument("--config", required=True, metavar="PATH",
                       help="key=value config file")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (default: config 'out' key, "
                            "else current directory)")
        p.add_argument("--format", choices=FORMATS, default="csv")
        p.add_argument("--seed-offset", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--server", metavar="URL",
                       help="base URL of a running service "
                            "(default: in-process)")
    return ap


def _client(server):
    if server:
        return httpx.Client(base_url=server,
                            timeout=httpx.Timeout(600.0, connect=10.0))
    from fastapi.testclient import TestClient

    from .service import app
    return TestClient(app)


def _read(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise FileError("cannot read %s: %s" % (path, exc))


def _post(client, path, body):
    resp = client.post(path, json=body)
    if resp.status_code != 200:
        try:
            detail = resp.json()
        except ValueError:
            detail = resp.text
        raise KacsimError("service returned %d: %s"
                          % (resp.status_code, detail))
    return resp.json()


def _run_w1(client, args, text):
    # resolve the point files locally; the service takes inline text
    cfg = parse_config(text, mode="w1")
    body = {
        "points_a": _read(cfg.points_a),
        "points_b": _read(cfg.points_b),
        "with_plan": cfg.with_plan,
    }
    w1 = _post(client, "/v1/w1", body)
    payload = {"mode": "w1", "config": dict(cfg.raw),
               "invocation": {}, "series": {}, "timings": {}, "w1": w1}
    return payload, cfg.out


def _run_mode(client, args, text):
    body = {"config_text": text, "seed_offset": args.seed_offset,
            "workers": args.workers}
    payload = _post(client, "/v1/%s" % args.command, body)
    return payload, payload.get("config", {}).get("out")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        text = _read(args.config)
        with _client(args.server) as client:
            if args.command == "w1":
                payload, cfg_out = _run_w1(client, args, text)
            else:
                payload, cfg_out = _run_mode(client, args, text)
        out_dir = args.out or cfg_out or "."
        written = emit_payload(payload, args.format, out_dir)
    except KacsimError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except httpx.HTTPError as exc:
        print("transport error: %s" % exc, file=sys.stderr)
        return 1
    for path in written:
        print(path)
    if args.command == "verify":
        for v in payload.get("verdicts") or []:
            print("replica %d (seed %d): %s (worst slack %.6g)"
                  % (v["replica"], v["seed"],
                     "pass" if v["passed"] else "FAIL", v["worst_slack"]))
        if payload.get("overall_pass") is False:
            print("verify: predicate FAILED", file=sys.stderr)
            return 2
        print("verify: predicate holds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
