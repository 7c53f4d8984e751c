"""Experiment configuration, orchestration, and bit-stable emission.

Config format: line-oriented ``key=value``, '#' starts a comment, unknown
keys are rejected.  Five modes:

* simulate  -- one ensemble per replica; per-checkpoint series of
               (t, collisions, energy, momentum, m1[, exp_moment]) and a
               final snapshot.
* couple    -- a coupled pair per replica; the contraction ledger
               (t, d1, h_pair, H, int_H, rhs_bound, channel counts) plus
               marginal diagnostics.  With eps_levels set, one common-noise
               run per grazing cutoff instead.
* verify    -- couple plus pass/fail verdicts of the checkpoint predicate
               d1(t) <= d1(0) + int_H + tau_N with
               tau_N = 5 (replica SE + 2 N^{-1/2}).
* w1        -- exact pairing distance between two snapshot files, with the
               dual certificate.
* bounds    -- a theoretical envelope curve on a time grid.

Replicas: the seed list gives one replica per seed; replica r runs on
stream (seed_r + seed_offset) XOR r.  A drawn second marginal shares the
replica stream, giving the comonotone initial coupling (identical specs
start at d1 = 0).  Replicas are independent, may run on a worker pool, and
are merged in seed-list order, so outputs are byte-identical for any
worker count.  The checkpoint grid always includes t=0 and t=T.

Emission: CSV files use '.' decimals, 17 significant digits ("%.17g"), LF
endings, fixed column order per mode; JSON is a single object with sorted
keys, the config echoed under "config" and all numeric arrays under
"series" (per-replica payloads under "replicas").  Wall-clock timings
appear only in JSON, keeping CSVs run-to-run identical.
"""

import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .bounds import (
    BoundCurve,
    HardStabilityParams,
    SoftStabilityParams,
    exp_moment,
    hard_bound,
    moment,
    soft_bound,
)
from .coupling import LEDGER_COLUMNS, couple, run_coupled, run_truncation_levels
from .ensemble import (
    Ensemble,
    InitialSpec,
    init,
    load_snapshot,
    run,
    snapshot_text,
    total_energy,
    total_momentum,
)
from .errors import (
    DomainError,
    FileError,
    IoError,
    KacsimError,
    ParseError,
    ValidationError,
)
from .kernel import AngularMeasure, CollisionKernel, from_inverse_power
from .transport import plan_to_rows, verify_duality, w1_exact

MODES = ("simulate", "couple", "verify", "w1", "bounds")
FORMATS = ("csv", "json")

MAX_COUPLED_N = 5000
WARN_N = 2000
FLOAT_FMT = "%.17g"

# predicate tolerance tau_N = TAU_FACTOR * (replica SE + TAU_N_COEFF / sqrt(N))
TAU_FACTOR = 5.0
TAU_N_COEFF = 2.0


def _fmt(x):
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# config parsing


def _as_str(raw):
    return raw


def _as_float(raw):
    return float(raw)


def _as_int(raw):
    return int(raw, 0)


def _as_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % raw)


def _as_floats(raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _as_ints(raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(int(p, 0) for p in parts)


def _as_means(raw):
    """Two mean vectors 'a;b' (components comma/space separated), or two
    scalars 'a,b'."""
    if ";" in raw:
        parts = raw.split(";")
        if len(parts) != 2:
            raise ValueError("expected two ';'-separated means")
        return tuple(_as_floats(p) for p in parts)
    vals = _as_floats(raw)
    if len(vals) != 2:
        raise ValueError("expected two means")
    return ((vals[0],), (vals[1],))


_KEY_PARSERS = {
    "mode": _as_str,
    "out": _as_str,
    # kernel
    "s": _as_float,
    "gamma": _as_float,
    "nu": _as_float,
    "strength": _as_float,
    "eps_theta": _as_float,
    "phi_upper": _as_float,
    "phi_cap": _as_float,
    "d": _as_int,
    # run geometry
    "N": _as_int,
    "T": _as_float,
    "checkpoints": _as_floats,
    "seeds": _as_ints,
    # first marginal
    "init": _as_str,
    "init_mean": _as_float,
    "init_scale": _as_float,
    "init_means": _as_means,
    "init_weight": _as_float,
    "init_radius": _as_float,
    "init_path": _as_str,
    # second marginal
    "init2": _as_str,
    "init2_mean": _as_float,
    "init2_scale": _as_float,
    "init2_means": _as_means,
    "init2_weight": _as_float,
    "init2_radius": _as_float,
    "init2_path": _as_str,
    "translate": _as_float,
    # coupling controls
    "repair": _as_bool,
    "drift_in_rhs": _as_bool,
    "eps_levels": _as_floats,
    # diagnostics
    "exp_eps": _as_float,
    "exp_s": _as_float,
    # w1
    "points_a": _as_str,
    "points_b": _as_str,
    "with_plan": _as_bool,
    # bounds
    "bound_kind": _as_str,
    "d1_0": _as_float,
    "K_eps": _as_float,
    "C_exp": _as_float,
    "eps_exp": _as_float,
    "K_p": _as_float,
    "lp_c1": _as_float,
    "lp_c2": _as_float,
    "p": _as_float,
}

_KERNEL_KEYS = frozenset(
    ("s", "gamma", "nu", "strength", "eps_theta", "phi_upper", "phi_cap",
     "d"))
_RUN_KEYS = frozenset(("N", "T", "checkpoints", "seeds"))
_INIT1_KEYS = frozenset(
    ("init", "init_mean", "init_scale", "init_means", "init_weight",
     "init_radius", "init_path"))
_INIT2_KEYS = frozenset(
    ("init2", "init2_mean", "init2_scale", "init2_means", "init2_weight",
     "init2_radius", "init2_path"))
_DIAG_KEYS = frozenset(("exp_eps", "exp_s"))

_MODE_KEYS = {
    "simulate": _KERNEL_KEYS | _RUN_KEYS | _INIT1_KEYS | _DIAG_KEYS
    | {"mode", "out"},
    "couple": _KERNEL_KEYS | _RUN_KEYS | _INIT1_KEYS | _INIT2_KEYS
    | _DIAG_KEYS
    | {"mode", "out", "translate", "repair", "drift_in_rhs", "eps_levels"},
    "w1": {"mode", "out", "points_a", "points_b", "with_plan"},
    "bounds": {"mode", "out", "bound_kind", "d1_0", "K_eps", "C_exp",
               "eps_exp", "K_p", "lp_c1", "lp_c2", "p", "gamma", "d", "T",
               "checkpoints"},
}
# the truncation ladder is a couple-mode analysis; verify's predicate
# machinery assumes a single ledger per replica
_MODE_KEYS["verify"] = _MODE_KEYS["couple"] - {"eps_levels"}

_HARD_ONLY = frozenset(("K_eps", "C_exp", "eps_exp"))
_SOFT_ONLY = frozenset(("K_p", "lp_c1", "lp_c2", "p", "gamma", "d"))

_INIT_SUFFIXES = {
    "gaussian": ("mean", "scale"),
    "two_gaussians": ("means", "scale", "weight"),
    "uniform_ball": ("radius",),
    "file": ("path",),
}


@dataclass
class ExperimentConfig:
    """Validated experiment description; raw holds the parsed key/value
    text for echoing."""

    mode: str
    raw: Tuple[Tuple[str, str], ...]
    out: Optional[str] = None
    kernel: Optional[CollisionKernel] = None
    power_s: Optional[float] = None
    N: int = 0
    d: int = 3
    T: float = 0.0
    grid: Tuple[float, ...] = ()
    seeds: Tuple[int, ...] = (0,)
    init: Optional[InitialSpec] = None
    init2: Optional[InitialSpec] = None
    translate: Optional[float] = None
    repair: bool = True
    drift_in_rhs: bool = False
    eps_levels: Tuple[float, ...] = ()
    exp_eps: Optional[float] = None
    exp_s: Optional[float] = None
    points_a: Optional[str] = None
    points_b: Optional[str] = None
    with_plan: bool = False
    bound_kind: Optional[str] = None
    d1_0: float = 0.0
    hard_params: Optional[HardStabilityParams] = None
    soft_params: Optional[SoftStabilityParams] = None

    @property
    def replicas(self):
        return len(self.seeds)


def _scan_pairs(text):
    pairs = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError("expected key=value, got %r" % body, lineno)
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key:
            raise ParseError("empty key", lineno)
        if key not in _KEY_PARSERS:
            raise ParseError("unknown key %r" % key, lineno)
        if key in seen:
            raise ParseError("duplicate key %r (first on line %d)"
                             % (key, seen[key]), lineno)
        seen[key] = lineno
        try:
            value = _KEY_PARSERS[key](raw)
        except ValueError as exc:
            raise ParseError("bad value for %r: %s" % (key, exc), lineno)
        pairs.append((key, raw, value))
    return pairs


def _build_init(values, prefix, d):
    kind = values.get(prefix, "gaussian")
    if kind not in _INIT_SUFFIXES:
        raise ValidationError("%s must be one of %s"
                              % (prefix, sorted(_INIT_SUFFIXES)))
    allowed = _INIT_SUFFIXES[kind]
    for suffix in ("mean", "scale", "means", "weight", "radius", "path"):
        key = "%s_%s" % (prefix, suffix)
        if key in values and suffix not in allowed:
            raise ValidationError("%s only applies to %s=%s" % (
                key, prefix,
                next(k for k, v in _INIT_SUFFIXES.items() if suffix in v)))

    def get(suffix, default=None):
        return values.get("%s_%s" % (prefix, suffix), default)

    if kind == "gaussian":
        return InitialSpec.gaussian(mean=get("mean", 0.0),
                                    covariance_scale=get("scale", 1.0))
    if kind == "two_gaussians":
        means = get("means")
        if means is None:
            raise ValidationError("%s=two_gaussians needs %s_means"
                                  % (prefix, prefix))
        return InitialSpec.two_gaussians(means, scale=get("scale", 1.0),
                                         mixture_weight=get("weight", 0.5))
    if kind == "uniform_ball":
        radius = get("radius")
        if radius is None:
            raise ValidationError("%s=uniform_ball needs %s_radius"
                                  % (prefix, prefix))
        return InitialSpec.uniform_ball(radius)
    path = get("path")
    if path is None:
        raise ValidationError("%s=file needs %s_path" % (prefix, prefix))
    return InitialSpec.from_file(path)


def _build_kernel(values, d):
    have_s = "s" in values
    have_gn = ("gamma" in values) or ("nu" in values)
    if have_s and have_gn:
        raise ValidationError("give either s or (gamma, nu), not both")
    try:
        if have_s:
            if d != 3:
                raise ValidationError(
                    "inverse-power kernels are three-dimensional; drop d "
                    "or set d=3")
            k = from_inverse_power(values["s"],
                                   phi_upper=values.get("phi_upper", 1.0),
                                   strength=values.get("strength", 1.0),
                                   eps_theta=values.get("eps_theta", 1e-3),
                                   phi_cap=values.get("phi_cap"))
            return k, values["s"]
        if not ("gamma" in values and "nu" in values):
            raise ValidationError(
                "a kernel needs s, or both gamma and nu")
        ang = AngularMeasure(nu=values["nu"],
                             strength=values.get("strength", 1.0),
                             eps_theta=values.get("eps_theta", 1e-3))
        k = CollisionKernel(gamma=values["gamma"],
                            phi_upper=values.get("phi_upper", 1.0),
                            angular=ang, dimension=d,
                            phi_cap=values.get("phi_cap"))
        return k, None
    except DomainError as exc:
        raise ValidationError(str(exc))


def _build_grid(values, T):
    cps = values.get("checkpoints", ())
    for c in cps:
        if not (0.0 <= c <= T):
            raise ValidationError("checkpoints must lie in [0, T]")
    if any(cps[i] >= cps[i + 1] for i in range(len(cps) - 1)):
        raise ValidationError("checkpoints must be strictly increasing")
    grid = list(cps)
    if not grid or grid[0] > 0.0:
        grid.insert(0, 0.0)
    if grid[-1] < T:
        grid.append(T)
    return tuple(grid)


def parse_config(text, mode=None):
    """Parse and validate config text; mode supplies/checks the mode key.

    Raises:
        ParseError: malformed line, unknown or duplicate key, bad value
            (with line number).
        ValidationError: well-formed value violating a precondition.
    """
    pairs = _scan_pairs(text)
    values = {key: value for key, raw, value in pairs}
    raw_items = tuple((key, raw) for key, raw, value in pairs)

    cfg_mode = values.get("mode", mode)
    if cfg_mode is None:
        raise ValidationError("mode is required (one of %s)"
                              % ", ".join(MODES))
    if mode is not None and cfg_mode != mode:
        raise ValidationError("config mode %r does not match requested "
                              "mode %r" % (cfg_mode, mode))
    if cfg_mode not in MODES:
        raise ValidationError("mode must be one of %s" % ", ".join(MODES))
    allowed = _MODE_KEYS[cfg_mode]
    for key in values:
        if key not in allowed:
            raise ValidationError("key %r is not valid in mode %r"
                                  % (key, cfg_mode))

    cfg = ExperimentConfig(mode=cfg_mode, raw=raw_items,
                           out=values.get("out"))
    if cfg_mode == "w1":
        for key in ("points_a", "points_b"):
            if key not in values:
                raise ValidationError("w1 mode needs %s" % key)
        cfg.points_a = values["points_a"]
        cfg.points_b = values["points_b"]
        cfg.with_plan = values.get("with_plan", False)
        return cfg
    if cfg_mode == "bounds":
        return _finish_bounds_config(cfg, values)
    return _finish_run_config(cfg, values)


def _finish_bounds_config(cfg, values):
    kind = values.get("bound_kind")
    if kind not in ("hard", "soft"):
        raise ValidationError("bounds mode needs bound_kind=hard|soft")
    cfg.bound_kind = kind
    if "d1_0" not in values:
        raise ValidationError("bounds mode needs d1_0")
    cfg.d1_0 = values["d1_0"]
    if not (cfg.d1_0 >= 0.0 and math.isfinite(cfg.d1_0)):
        raise ValidationError("d1_0 must be finite and >= 0")
    wrong = (_SOFT_ONLY if kind == "hard" else _HARD_ONLY) & set(values)
    if wrong:
        raise ValidationError("%s only applies to bound_kind=%s"
                              % (sorted(wrong)[0],
                                 "soft" if kind == "hard" else "hard"))
    if "checkpoints" in values:
        grid = values["checkpoints"]
        if any(grid[i] >= grid[i + 1] for i in range(len(grid) - 1)):
            raise ValidationError("checkpoints must be strictly increasing")
        if grid and grid[0] < 0.0:
            raise ValidationError("checkpoints must be nonnegative")
        cfg.grid = tuple(grid)
    else:
        T = values.get("T")
        if T is None or not (T > 0.0):
            raise ValidationError("bounds mode needs checkpoints or T > 0")
        cfg.T = T
        cfg.grid = tuple(np.linspace(0.0, T, 11))
    try:
        if kind == "hard":
            cfg.hard_params = HardStabilityParams(
                K_eps=values.get("K_eps", 1.0),
                C_exp=values.get("C_exp", 1.0),
                eps=values.get("eps_exp", 0.1))
        else:
            cfg.soft_params = SoftStabilityParams(
                K_p=values.get("K_p", 1.0),
                lp_integrals=(values.get("lp_c1", 0.0),
                              values.get("lp_c2", 0.0)),
                p=values.get("p", 2.0),
                gamma=values.get("gamma"),
                dimension=values.get("d", 3))
    except DomainError as exc:
        raise ValidationError(str(exc))
    return cfg


def _finish_run_config(cfg, values):
    mode = cfg.mode
    cfg.d = values.get("d", 3)
    if cfg.d < 2:
        raise ValidationError("d must be >= 2")
    cfg.kernel, cfg.power_s = _build_kernel(values, cfg.d)
    if "N" not in values:
        raise ValidationError("%s mode needs N" % mode)
    cfg.N = values["N"]
    if cfg.N < 2:
        raise ValidationError("N must be >= 2")
    if mode in ("couple", "verify"):
        if cfg.N > MAX_COUPLED_N:
            raise ValidationError("N is capped at %d in %s mode (exact "
                                  "matching cost)" % (MAX_COUPLED_N, mode))
        if cfg.N > WARN_N:
            warnings.warn("N=%d: exact matching solves above N=%d dominate "
                          "runtime" % (cfg.N, WARN_N))
    if "T" not in values:
        raise ValidationError("%s mode needs T" % mode)
    cfg.T = values["T"]
    if not (cfg.T >= 0.0 and math.isfinite(cfg.T)):
        raise ValidationError("T must be finite and >= 0")
    cfg.grid = _build_grid(values, cfg.T)
    cfg.seeds = values.get("seeds", (0,))
    if not cfg.seeds:
        raise ValidationError("seeds must be nonempty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ValidationError("seeds must be distinct")
    try:
        cfg.init = _build_init(values, "init", cfg.d)
    except DomainError as exc:
        raise ValidationError(str(exc))

    if ("exp_eps" in values) != ("exp_s" in values):
        raise ValidationError("exp_eps and exp_s come together")
    if "exp_eps" in values:
        cfg.exp_eps = values["exp_eps"]
        cfg.exp_s = values["exp_s"]
        if not (cfg.exp_eps > 0.0):
            raise ValidationError("exp_eps must be positive")
        if not (0.0 < cfg.exp_s < 2.0):
            raise ValidationError("exp_s must lie in (0, 2)")

    if mode == "simulate":
        return cfg

    has_init2 = bool(_INIT2_KEYS & set(values))
    has_translate = "translate" in values
    if has_init2 and has_translate:
        raise ValidationError("give either translate or init2_*, not both")
    if not (has_init2 or has_translate):
        raise ValidationError("%s mode needs a second marginal: set "
                              "translate or init2" % mode)
    if has_translate:
        cfg.translate = values["translate"]
        if not (cfg.translate >= 0.0 and math.isfinite(cfg.translate)):
            raise ValidationError("translate must be finite and >= 0")
    else:
        try:
            cfg.init2 = _build_init(values, "init2", cfg.d)
        except DomainError as exc:
            raise ValidationError(str(exc))

    cfg.repair = values.get("repair", True)
    cfg.drift_in_rhs = values.get("drift_in_rhs", False)
    levels = values.get("eps_levels", ())
    if levels:
        if cfg.kernel.gamma != 0.0:
            raise ValidationError("eps_levels needs gamma = 0 (state-"
                                  "independent acceptance)")
        if len(set(levels)) != len(levels):
            raise ValidationError("eps_levels must be distinct")
        if any(not (0.0 < e < math.pi) for e in levels):
            raise ValidationError("eps_levels must lie in (0, pi)")
        if values.get("repair"):
            raise ValidationError("repair is unavailable with eps_levels "
                                  "(re-pairing breaks the common noise)")
        cfg.repair = False
        cfg.eps_levels = tuple(sorted(levels))
    return cfg


# ---------------------------------------------------------------------------
# replica execution


@dataclass
class ReplicaResult:
    index: int
    seed: int
    stream: int
    wall_time: float = 0.0
    series: Optional[dict] = None
    snapshot: Optional[str] = None
    ledger: Optional[object] = None
    diagnostics: Optional[dict] = None
    levels: Optional[list] = None  # [(eps, CouplingLedger), ...]


@dataclass
class RunReport:
    """Everything a run produced, pre-serialization."""

    mode: str
    config: ExperimentConfig
    replicas: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    verdicts: Optional[list] = None
    overall_pass: Optional[bool] = None
    w1: Optional[dict] = None
    bounds: Optional[BoundCurve] = None
    timings: dict = field(default_factory=dict)
    invocation: dict = field(default_factory=dict)

    def to_payload(self):
        """JSON-ready dict; the transport format of the service and the
        sole input of CSV emission (so local and remote runs serialize
        identically)."""
        payload = {
            "mode": self.mode,
            "config": {key: raw for key, raw in self.config.raw},
            "invocation": dict(self.invocation),
            "series": _plain(self.aggregate),
            "timings": _plain(self.timings),
        }
        if self.mode in ("simulate", "couple", "verify"):
            payload["n"] = self.config.N
            payload["d"] = self.config.d
            payload["replicas"] = [_replica_payload(r) for r in self.replicas]
        if self.mode == "verify":
            payload["verdicts"] = _plain(self.verdicts)
            payload["overall_pass"] = self.overall_pass
        if self.w1 is not None:
            payload["w1"] = _plain(self.w1)
        if self.bounds is not None:
            payload["series"]["times"] = self.bounds.times.tolist()
            payload["series"]["values"] = self.bounds.values.tolist()
        return payload


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _ledger_payload(ledger):
    out = {name: getattr(ledger, name).tolist() for name in LEDGER_COLUMNS}
    out["alpha_drift"] = ledger.alpha_drift.tolist()
    out["d1_initial"] = ledger.d1_initial
    out["drift_in_rhs"] = ledger.drift_in_rhs
    return out


def _replica_payload(r):
    out = {"index": r.index, "seed": r.seed, "stream": r.stream}
    if r.series is not None:
        out["series"] = _plain(r.series)
    if r.snapshot is not None:
        out["snapshot"] = r.snapshot
    if r.ledger is not None:
        out["ledger"] = _ledger_payload(r.ledger)
    if r.diagnostics is not None:
        out["diagnostics"] = _plain(r.diagnostics)
    if r.levels is not None:
        out["levels"] = [{"eps": eps, "ledger": _ledger_payload(led)}
                         for eps, led in r.levels]
    return out


def _translated(first, delta):
    vel = first.velocities.copy()
    vel[:, 0] += delta
    return Ensemble(velocities=vel, time=first.time, seed=first.seed)


class _DiagCollector:
    """Per-checkpoint marginal diagnostics of a coupled run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.rows = {name: [] for name in
                     ("energy_first", "energy_second", "m1_first",
                      "m1_second")}
        if cfg.exp_eps is not None:
            self.rows["exp_first"] = []
            self.rows["exp_second"] = []

    def __call__(self, t, ce):
        self.rows["energy_first"].append(total_energy(ce.first))
        self.rows["energy_second"].append(total_energy(ce.second))
        self.rows["m1_first"].append(moment(ce.first, 1.0))
        self.rows["m1_second"].append(moment(ce.second, 1.0))
        if self.cfg.exp_eps is not None:
            self.rows["exp_first"].append(
                exp_moment(ce.first, self.cfg.exp_eps, self.cfg.exp_s))
            self.rows["exp_second"].append(
                exp_moment(ce.second, self.cfg.exp_eps, self.cfg.exp_s))

    def arrays(self):
        return {name: np.asarray(vals, dtype=float)
                for name, vals in self.rows.items()}


def _run_simulate_replica(cfg, stream):
    e = init(cfg.init.with_seed(stream), cfg.N, cfg.d)
    snaps = run(e, cfg.kernel, cfg.T, cfg.grid)
    series = {
        "t": np.array([s.time for s in snaps]),
        "collisions": np.array([s.collision_count for s in snaps]),
        "energy": np.array([total_energy(s) for s in snaps]),
        "momentum": np.array([float(np.linalg.norm(total_momentum(s)))
                              for s in snaps]),
        "m1": np.array([moment(s, 1.0) for s in snaps]),
    }
    if cfg.exp_eps is not None:
        series["exp_moment"] = np.array(
            [exp_moment(s, cfg.exp_eps, cfg.exp_s) for s in snaps])
    return series, snapshot_text(e)


def _run_coupled_replica(cfg, stream):
    first = init(cfg.init.with_seed(stream), cfg.N, cfg.d)
    if cfg.translate is not None:
        second = _translated(first, cfg.translate)
    else:
        # Same stream on purpose: the marginals are drawn with common
        # noise, so identical specs start at d1 = 0 and differing specs
        # start from the comonotone coupling of their distributions.
        second = init(cfg.init2.with_seed(stream), cfg.N, cfg.d)
    if cfg.eps_levels:
        ledgers = run_truncation_levels(first, second, cfg.kernel,
                                        cfg.eps_levels, cfg.T, cfg.grid,
                                        stream=stream,
                                        drift_in_rhs=cfg.drift_in_rhs)
        levels = sorted(ledgers.items())
        return None, None, levels
    ce = couple(first, second, stream=stream)
    diag = _DiagCollector(cfg)
    ledger = run_coupled(ce, cfg.kernel, cfg.T, cfg.grid,
                         repair=cfg.repair, drift_in_rhs=cfg.drift_in_rhs,
                         observer=diag)
    return ledger, diag.arrays(), None


def _run_replica(cfg, index, seed, stream):
    start = time.perf_counter()
    result = ReplicaResult(index=index, seed=seed, stream=stream)
    if cfg.mode == "simulate":
        result.series, result.snapshot = _run_simulate_replica(cfg, stream)
    else:
        result.ledger, result.diagnostics, result.levels = \
            _run_coupled_replica(cfg, stream)
    result.wall_time = time.perf_counter() - start
    return result


def _tagged(exc, index, seed):
    msg = "replica %d (seed %d): %s" % (index, seed, exc)
    if isinstance(exc, KacsimError):
        return type(exc)(msg)
    return RuntimeError(msg)


def _mean_se(stack):
    """(mean, se) across axis 0; se is None below two replicas."""
    mean = stack.mean(axis=0)
    if stack.shape[0] < 2:
        return mean, None
    se = stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])
    return mean, se


def _energy_drift(series_list):
    worst = 0.0
    for arr in series_list:
        ref = max(abs(float(arr[0])), 1e-300)
        worst = max(worst, float(np.max(np.abs(arr - arr[0]))) / ref)
    return worst


def _aggregate_simulate(cfg, replicas):
    m1 = np.stack([r.series["m1"] for r in replicas])
    mean, se = _mean_se(m1)
    agg = {"times": np.asarray(cfg.grid), "m1_mean": mean}
    if se is not None:
        agg["m1_se"] = se
    agg["energy_drift_max"] = _energy_drift(
        [r.series["energy"] for r in replicas])
    return agg


def _aggregate_coupled(cfg, replicas):
    agg = {"times": np.asarray(cfg.grid)}
    d1 = np.stack([r.ledger.d1 for r in replicas])
    mean, se = _mean_se(d1)
    agg["d1_mean"] = mean
    if se is not None:
        agg["d1_se"] = se
    agg["h_mean"] = np.stack([r.ledger.H for r in replicas]).mean(axis=0)
    agg["int_h_mean"] = np.stack(
        [r.ledger.int_H for r in replicas]).mean(axis=0)
    agg["rhs_mean"] = np.stack(
        [r.ledger.rhs_bound for r in replicas]).mean(axis=0)
    agg["tau"] = TAU_FACTOR * ((se if se is not None else 0.0)
                               + TAU_N_COEFF / math.sqrt(cfg.N))
    if isinstance(agg["tau"], float):
        agg["tau"] = np.full(len(cfg.grid), agg["tau"])
    energies = []
    for r in replicas:
        energies.append(r.diagnostics["energy_first"])
        energies.append(r.diagnostics["energy_second"])
    agg["energy_drift_max"] = _energy_drift(energies)
    return agg


def _aggregate_levels(cfg, replicas):
    eps = [e for e, _ in replicas[0].levels]
    agg = {"times": np.asarray(cfg.grid), "eps_levels": np.asarray(eps)}
    # mean |d1 difference| between successive cutoffs, over the checkpoints
    # after the start and over replicas; finest pair first.
    diffs = []
    for j in range(len(eps) - 1):
        acc = []
        for r in replicas:
            fine = r.levels[j][1].d1[1:]
            coarse = r.levels[j + 1][1].d1[1:]
            acc.append(np.abs(fine - coarse))
        stacked = np.stack(acc)
        diffs.append(float(stacked.mean()) if stacked.size else 0.0)
    agg["level_d1_diffs"] = np.asarray(diffs)
    if len(diffs) > 1 and all(x > 0.0 for x in diffs[:-1]):
        agg["level_diff_ratios"] = np.asarray(
            [diffs[j + 1] / diffs[j] for j in range(len(diffs) - 1)])
    return agg


def _verify_verdicts(cfg, replicas, tau):
    verdicts = []
    failures = 0
    for r in replicas:
        slack = r.ledger.rhs_bound + tau - r.ledger.d1
        passed = bool(np.all(slack >= 0.0))
        if not passed:
            failures += 1
        verdicts.append({"replica": r.index, "seed": r.seed,
                         "passed": passed,
                         "worst_slack": float(slack.min())})
    allowed = len(replicas) // 10
    return verdicts, failures <= allowed


def run_experiment(cfg, seed_offset=0, workers=1):
    """Execute the experiment; deterministic given (config, seed list,
    seed_offset) for any worker count.

    Raises:
        KacsimError subclasses from the underlying modules, tagged with the
        replica id where applicable.
    """
    t_start = time.perf_counter()
    report = RunReport(mode=cfg.mode, config=cfg)
    report.invocation = {"seed_offset": int(seed_offset),
                         "workers": int(workers)}
    if cfg.mode == "w1":
        report.w1 = _run_w1(cfg)
    elif cfg.mode == "bounds":
        report.bounds = _run_bounds(cfg)
    else:
        jobs = [(idx, seed, (seed + seed_offset) ^ idx)
                for idx, seed in enumerate(cfg.seeds)]
        if workers <= 1 or len(jobs) <= 1:
            results = []
            for job in jobs:
                try:
                    results.append(_run_replica(cfg, *job))
                except Exception as exc:
                    raise _tagged(exc, job[0], job[1])
        else:
            results = [None] * len(jobs)
            with ThreadPoolExecutor(max_workers=int(workers)) as pool:
                futures = {pool.submit(_run_replica, cfg, *job): job
                           for job in jobs}
                for fut in futures:
                    idx, seed, _ = futures[fut]
                    try:
                        results[idx] = fut.result()
                    except Exception as exc:
                        raise _tagged(exc, idx, seed)
        report.replicas = results
        if cfg.mode == "simulate":
            report.aggregate = _aggregate_simulate(cfg, results)
        elif cfg.eps_levels:
            report.aggregate = _aggregate_levels(cfg, results)
        else:
            report.aggregate = _aggregate_coupled(cfg, results)
            if cfg.mode == "verify":
                report.verdicts, report.overall_pass = _verify_verdicts(
                    cfg, results, report.aggregate["tau"])
        report.timings["replicas"] = [r.wall_time for r in results]
    report.timings["total"] = time.perf_counter() - t_start
    return report


def _read_points(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FileError("cannot read %s: %s" % (path, exc))
    return load_snapshot(text).velocities


def _run_w1(cfg, points_a=None, points_b=None):
    a = points_a if points_a is not None else _read_points(cfg.points_a)
    b = points_b if points_b is not None else _read_points(cfg.points_b)
    if a.shape[0] > MAX_COUPLED_N or b.shape[0] > MAX_COUPLED_N:
        raise ValidationError("w1 instances are capped at N=%d"
                              % MAX_COUPLED_N)
    plan = w1_exact(a, b)
    u, w = plan.dual_potentials
    out = {
        "n": int(a.shape[0]),
        "d": int(a.shape[1]),
        "cost": plan.cost,
        "matching": [int(j) for j in plan.matching],
        "dual_u": [float(x) for x in u],
        "dual_w": [float(x) for x in w],
        "dual_feasible": bool(verify_duality(plan, a, b)),
    }
    if cfg.with_plan:
        out["plan_rows"] = plan_to_rows(plan, a, b)
    return out


def w1_from_text(text_a, text_b, with_plan=False):
    """w1-mode entry point over inline snapshot text (the service route)."""
    cfg = ExperimentConfig(mode="w1", raw=(), with_plan=with_plan)
    return _run_w1(cfg, points_a=load_snapshot(text_a).velocities,
                   points_b=load_snapshot(text_b).velocities)


def _run_bounds(cfg):
    grid = np.asarray(cfg.grid)
    if cfg.bound_kind == "hard":
        return hard_bound(cfg.hard_params, cfg.d1_0, grid)
    vals = np.array([soft_bound(cfg.soft_params, cfg.d1_0, t)
                     for t in grid])
    return BoundCurve(grid, vals)


# ---------------------------------------------------------------------------
# emission


def _cell(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return "%d" % x
    if isinstance(x, (float, np.floating)):
        return _fmt(x)
    return str(x)


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError("cannot write %s: %s" % (path, exc))


def _csv(columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(x) for x in row))
    return "\n".join(lines) + "\n"


def _ledger_csv(led):
    cols = [led[name] for name in LEDGER_COLUMNS]
    int_cols = {"n_both", "n_f", "n_ftilde", "n_fict"}
    rows = []
    for i in range(len(led["t"])):
        row = []
        for name, col in zip(LEDGER_COLUMNS, cols):
            row.append(int(col[i]) if name in int_cols else float(col[i]))
        rows.append(row)
    return _csv(LEDGER_COLUMNS, rows)


def _series_csv(series, order):
    names = [n for n in order if n in series]
    rows = list(zip(*(series[n] for n in names))) if names else []
    return _csv(names, rows)


def _emit_csv(payload, out_dir):
    mode = payload["mode"]
    written = []

    def put(name, text):
        path = os.path.join(out_dir, name)
        _write(path, text)
        written.append(path)

    series = payload.get("series", {})
    if mode == "simulate":
        for r in payload["replicas"]:
            put("series_%d.csv" % r["index"], _series_csv(
                r["series"],
                ("t", "collisions", "energy", "momentum", "m1",
                 "exp_moment")))
            put("snapshot_%d.txt" % r["index"], r["snapshot"])
        put("summary.csv", _series_csv(
            {**series, "t": series["times"]}, ("t", "m1_mean", "m1_se")))
    elif mode in ("couple", "verify"):
        levels_mode = "eps_levels" in series
        for r in payload["replicas"]:
            if levels_mode:
                for j, level in enumerate(r["levels"]):
                    put("ledger_%d_level%d.csv" % (r["index"], j),
                        _ledger_csv(level["ledger"]))
            else:
                put("ledger_%d.csv" % r["index"], _ledger_csv(r["ledger"]))
                diag = {**r["diagnostics"], "t": r["ledger"]["t"],
                        "alpha_drift": r["ledger"]["alpha_drift"]}
                put("diagnostics_%d.csv" % r["index"], _series_csv(
                    diag, ("t", "alpha_drift", "energy_first",
                           "energy_second", "m1_first", "m1_second",
                           "exp_first", "exp_second")))
        if levels_mode:
            eps = series["eps_levels"]
            diffs = series["level_d1_diffs"]
            rows = [(eps[j], eps[j + 1], diffs[j])
                    for j in range(len(eps) - 1)]
            put("levels.csv", _csv(
                ("eps_fine", "eps_coarse", "mean_abs_d1_diff"), rows))
        else:
            put("summary.csv", _series_csv(
                {**series, "t": series["times"]},
                ("t", "d1_mean", "d1_se", "h_mean", "int_h_mean",
                 "rhs_mean", "tau")))
        if mode == "verify":
            rows = [(v["replica"], v["seed"], v["passed"],
                     v["worst_slack"]) for v in payload["verdicts"]]
            put("verdicts.csv", _csv(
                ("replica", "seed", "passed", "worst_slack"), rows))
    elif mode == "w1":
        w1 = payload["w1"]
        put("w1.csv", _csv(("n", "d", "cost", "dual_feasible"),
                           [(w1["n"], w1["d"], w1["cost"],
                             w1["dual_feasible"])]))
        if "plan_rows" in w1:
            rows = [(int(i), int(j), float(c))
                    for i, j, c in w1["plan_rows"]]
            put("plan.csv", _csv(("i", "j", "distance"), rows))
    elif mode == "bounds":
        rows = list(zip(series["times"], series["values"]))
        put("bounds.csv", _csv(("t", "value"), rows))
    return written


def emit_payload(payload, fmt, out_dir):
    """Write a report payload (the JSON-dict form) to out_dir; returns the
    written paths."""
    if fmt not in FORMATS:
        raise ValidationError("format must be one of %s"
                              % ", ".join(FORMATS))
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError("cannot create %s: %s" % (out_dir, exc))
    if fmt == "json":
        path = os.path.join(out_dir, "report.json")
        _write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return [path]
    return _emit_csv(payload, out_dir)


def emit(report, fmt, out_dir):
    """Serialize a RunReport: CSV set or report.json under out_dir."""
    return emit_payload(report.to_payload(), fmt, out_dir)
