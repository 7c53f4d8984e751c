"""Request/response models of the HTTP service.

The response payloads mirror RunReport.to_payload one-to-one, so a client
can feed a response straight into harness.emit_payload and obtain the same
CSV bytes a local run would have written.
"""

from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field

Series = Dict[str, Union[List[float], float]]


class RunRequest(BaseModel):
    """A run endpoint call: the config text the CLI would read, plus the
    orchestration knobs that are flags rather than config keys."""

    config_text: str
    seed_offset: int = 0
    workers: int = Field(1, ge=1, le=64)


class W1Request(BaseModel):
    """Inline snapshot texts; the service never reads client paths."""

    points_a: str
    points_b: str
    with_plan: bool = False


class LedgerModel(BaseModel):
    t: List[float]
    d1: List[float]
    h_pair: List[float]
    H: List[float]
    int_H: List[float]
    rhs_bound: List[float]
    n_both: List[int]
    n_f: List[int]
    n_ftilde: List[int]
    n_fict: List[int]
    alpha_drift: List[float]
    d1_initial: float
    drift_in_rhs: bool


class LevelModel(BaseModel):
    eps: float
    ledger: LedgerModel


class ReplicaModel(BaseModel):
    index: int
    seed: int
    stream: int
    series: Optional[Dict[str, List[float]]] = None
    snapshot: Optional[str] = None
    ledger: Optional[LedgerModel] = None
    diagnostics: Optional[Dict[str, List[float]]] = None
    levels: Optional[List[LevelModel]] = None


class VerdictModel(BaseModel):
    replica: int
    seed: int
    passed: bool
    worst_slack: float


class W1Response(BaseModel):
    n: int
    d: int
    cost: float
    matching: List[int]
    dual_u: List[float]
    dual_w: List[float]
    dual_feasible: bool
    plan_rows: Optional[List[Tuple[int, int, float]]] = None


class RunReportModel(BaseModel):
    mode: str
    config: Dict[str, str]
    invocation: Dict[str, int]
    series: Series
    timings: Dict[str, Union[List[float], float]]
    n: Optional[int] = None
    d: Optional[int] = None
    replicas: Optional[List[ReplicaModel]] = None
    verdicts: Optional[List[VerdictModel]] = None
    overall_pass: Optional[bool] = None
    w1: Optional[W1Response] = None


class HealthResponse(BaseModel):
    status: str
    version: str
