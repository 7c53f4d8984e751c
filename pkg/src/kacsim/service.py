"""HTTP service exposing the experiment harness.

One POST endpoint per mode under /v1, each accepting the same config text
the CLI reads (the mode key may be omitted; the endpoint supplies it).
w1 takes inline snapshot text instead of file paths so the server never
touches a client filesystem.  Domain errors map to 400 with the error
class named; request-shape errors are FastAPI's usual 422.

Responses are rendered with sorted keys and with non-finite floats as
bare Infinity/NaN tokens (the envelope curves use +inf as an overflow
sentinel; Python's json module parses these back losslessly).
"""

import json

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from . import __version__
from .errors import KacsimError
from .harness import parse_config, run_experiment, w1_from_text
from .schemas import (
    HealthResponse,
    RunReportModel,
    RunRequest,
    W1Request,
    W1Response,
)


class _Json(JSONResponse):
    def render(self, content):
        return (json.dumps(content, sort_keys=True, ensure_ascii=False,
                           allow_nan=True, separators=(",", ":"))
                + "\n").encode("utf-8")


app = FastAPI(title="kacsim", version=__version__,
              default_response_class=_Json)


@app.exception_handler(KacsimError)
async def _domain_error(request, exc):
    return _Json({"error": type(exc).__name__, "detail": str(exc)},
                 status_code=400)


def _run(mode, req):
    cfg = parse_config(req.config_text, mode=mode)
    report = run_experiment(cfg, seed_offset=req.seed_offset,
                            workers=req.workers)
    return report.to_payload()


@app.get("/v1/health", response_model=HealthResponse)
def health():
    return {"status": "ok", "version": __version__}


@app.post("/v1/simulate", response_model=RunReportModel,
          response_model_exclude_none=True)
def simulate(req: RunRequest):
    return _run("simulate", req)


@app.post("/v1/couple", response_model=RunReportModel,
          response_model_exclude_none=True)
def couple(req: RunRequest):
    return _run("couple", req)


@app.post("/v1/verify", response_model=RunReportModel,
          response_model_exclude_none=True)
def verify(req: RunRequest):
    return _run("verify", req)


@app.post("/v1/bounds", response_model=RunReportModel,
          response_model_exclude_none=True)
def bounds(req: RunRequest):
    return _run("bounds", req)


@app.post("/v1/w1", response_model=W1Response,
          response_model_exclude_none=True)
def w1(req: W1Request):
    return w1_from_text(req.points_a, req.points_b, req.with_plan)
