"""Analytical execution model of a pipelined in-situ workflow.

One step is simulate (S), ingest (I), get (G), analyze (A), send (Se) and
collect (C). With per-step stage costs held constant over ``rho`` steps:

* idle per step   = |(S + I) - (G + A)|
* makespan        = rho * max(S + I, G + A)
* efficiency      = 1 - idle / max(S + I, G + A)

Se and C are treated as synchronisation points and left out unless
``strict=True``, in which case they are charged to the analytics side (Se)
and to the simulation side (C).
"""

from __future__ import annotations

import re
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, DegenerateInput, MalformedTrace

STAGES = ("S", "I", "G", "A", "Se", "C")
SIM_STAGES = ("S", "I", "C")
ANA_STAGES = ("G", "A", "Se")

IA = "IA"
IS = "IS"
IDLE_FREE = "idle-free"

# relative gap under which both sides count as equal
DEFAULT_RTOL = 1e-12
CONSTANCY_WARN = 0.05


@dataclass(frozen=True)
class StageCosts:
    S: float = 0.0
    I: float = 0.0
    G: float = 0.0
    A: float = 0.0
    Se: float = 0.0
    C: float = 0.0

    def __post_init__(self):
        for name in STAGES:
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"stage {name} must be >= 0, got {v}")

    def sides(self, strict=False):
        """(simulation side, analytics side) per-step busy time."""
        if strict:
            return self.S + self.I + self.C, self.G + self.A + self.Se
        return self.S + self.I, self.G + self.A

    def scaled(self, factor):
        return StageCosts(*(getattr(self, n) * factor for n in STAGES))

    def as_array(self):
        return np.array([getattr(self, n) for n in STAGES])


@dataclass(frozen=True)
class ModelInputs:
    stages: StageCosts
    N: int
    T: int

    def __post_init__(self):
        if self.T < 1 or self.N < 1 or self.N % self.T:
            raise ConfigError(f"stride {self.T} must divide {self.N} iterations")

    @property
    def rho(self):
        return self.N // self.T


@dataclass
class StepReport:
    step: int
    spans: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)
    idle_S: float = 0.0
    idle_A: float = 0.0


@dataclass(frozen=True)
class EfficiencyReport:
    rho: int
    makespan: float
    idle_per_step: float
    eta: float
    scenario: str


def _gap(stages, strict, rtol):
    sim, ana = stages.sides(strict)
    diff = sim - ana
    if abs(diff) <= rtol * max(sim, ana):
        diff = 0.0
    return sim, ana, diff


def classify_scenario(stages, strict=False, rtol=DEFAULT_RTOL):
    """``IA`` when analytics idles, ``IS`` when simulation idles."""
    _, _, diff = _gap(stages, strict, rtol)
    if diff > 0:
        return IA
    if diff < 0:
        return IS
    return IDLE_FREE


def idle_time(stages, strict=False, rtol=DEFAULT_RTOL):
    return abs(_gap(stages, strict, rtol)[2])


def split_idle(stages, strict=False, rtol=DEFAULT_RTOL):
    """(idle_S, idle_A): the faster component owns all the idle time."""
    _, _, diff = _gap(stages, strict, rtol)
    return (-diff, 0.0) if diff < 0 else (0.0, diff)


def _as_inputs(m, rho):
    if isinstance(m, ModelInputs):
        return m.stages, m.rho
    if rho is None:
        raise TypeError("pass ModelInputs or StageCosts with rho")
    return m, rho


def makespan(m, rho=None, strict=False):
    stages, rho = _as_inputs(m, rho)
    return rho * max(stages.sides(strict))


def efficiency(m, rho=None, strict=False, rtol=DEFAULT_RTOL):
    stages, _ = _as_inputs(m, rho)
    sim, ana, diff = _gap(stages, strict, rtol)
    longest = max(sim, ana)
    if longest <= 0:
        raise DegenerateInput("all stage costs are zero")
    if diff == 0:
        return 1.0
    # min/max equals 1 - idle/max without the cancellation
    return min(sim, ana) / longest


def evaluate(m, rho=None, strict=False):
    stages, rho = _as_inputs(m, rho)
    return EfficiencyReport(
        rho=rho,
        makespan=makespan(stages, rho, strict),
        idle_per_step=idle_time(stages, strict),
        eta=efficiency(stages, rho, strict),
        scenario=classify_scenario(stages, strict),
    )


# trace extraction ------------------------------------------------------

_DETAIL = re.compile(r"^(begin|end) step=(\d+)$")


def _intervals(trace):
    """Per (label, step, actor) lists of (begin, end) intervals."""
    open_ = {}
    out = defaultdict(list)
    for ev in trace:
        if ev.label not in STAGES:
            continue
        m = _DETAIL.match(ev.detail)
        if not m:
            raise MalformedTrace(f"unparseable stage detail {ev.detail!r} (seq {ev.seq})")
        kind, step = m.group(1), int(m.group(2))
        key = (ev.actor, ev.label)
        if kind == "begin":
            if key in open_:
                raise MalformedTrace(f"actor {ev.actor} opens {ev.label} twice (seq {ev.seq})")
            open_[key] = (step, ev.time)
        else:
            if key not in open_:
                raise MalformedTrace(f"actor {ev.actor} closes {ev.label} without opening it (seq {ev.seq})")
            s_step, t0 = open_.pop(key)
            if s_step != step:
                raise MalformedTrace(f"actor {ev.actor} {ev.label}: begin step {s_step} closed as {step}")
            out[(ev.label, step, ev.actor)].append((t0, ev.time))
    if open_:
        (actor, label), (step, _) = next(iter(open_.items()))
        raise MalformedTrace(f"unpaired {label} begin for actor {actor} at step {step}")
    return out


def step_reports(trace, strict=False, aggregation="busiest"):
    """Per-step stage spans and durations from a labelled trace.

    ``spans[label]`` is (earliest begin, latest end) over the component.
    ``durations[label]`` is, with ``aggregation="busiest"``, the largest
    per-actor total time in that stage during the step; with
    ``aggregation="span"`` it is the span length.
    """
    if aggregation not in ("busiest", "span"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    ivals = _intervals(trace)
    if not ivals:
        raise MalformedTrace("trace has no stage events")
    steps = sorted({step for _, step, _ in ivals})
    per = {s: StepReport(step=s) for s in steps}
    busy = defaultdict(float)
    for (label, step, actor), spans in ivals.items():
        rep = per[step]
        lo = min(a for a, _ in spans)
        hi = max(b for _, b in spans)
        if label in rep.spans:
            plo, phi = rep.spans[label]
            lo, hi = min(lo, plo), max(hi, phi)
        rep.spans[label] = (lo, hi)
        total = sum(b - a for a, b in spans)
        busy[(label, step)] = max(busy[(label, step)], total)
    for s, rep in per.items():
        for label in STAGES:
            if aggregation == "span":
                lo, hi = rep.spans.get(label, (0.0, 0.0))
                rep.durations[label] = hi - lo
            else:
                rep.durations[label] = busy.get((label, s), 0.0)
        rep.idle_S, rep.idle_A = split_idle(StageCosts(**rep.durations), strict)
    return [per[s] for s in steps]


def stage_matrix(reports):
    """Rows of per-step durations in ``STAGES`` order."""
    return np.array([[r.durations[n] for n in STAGES] for r in reports], dtype=float)


def constancy_deviation(matrix, strict=False):
    """Largest gap between a step's stage time and the steady mean.

    Gaps are taken relative to the mean step length (the longer side), so
    near-zero stages such as an instantaneous ingest do not blow up.
    """
    matrix = np.asarray(matrix, dtype=float)
    mean = matrix.mean(axis=0)
    stages = StageCosts(*(float(v) for v in mean))
    scale = max(stages.sides(strict))
    if scale <= 0:
        return 0.0
    return float(np.abs(matrix - mean).max() / scale)


def extract_stages(trace, cfg=None, strict=False, aggregation="busiest", warmup=1, min_steps=3):
    """Steady-state stage costs, per-step reports and constancy deviation.

    Steps after the first ``warmup`` ones are averaged. Requires at least
    ``min_steps`` steps in the trace (and ``cfg.rho`` of them when a config
    is given).
    """
    reports = step_reports(trace, strict, aggregation)
    rho = len(reports)
    if cfg is not None and cfg.rho != rho:
        raise MalformedTrace(f"trace covers {rho} steps, config expects {cfg.rho}")
    if rho < min_steps:
        raise MalformedTrace(f"insufficient steps: {rho} < {min_steps}")
    for rep in reports:
        missing = [l for l in ("S", "I", "G", "A") if l not in rep.spans]
        if missing:
            raise MalformedTrace(f"step {rep.step} lacks stage(s) {missing}")
    steady = stage_matrix(reports[warmup:])
    stages = StageCosts(*(float(v) for v in np.maximum(steady.mean(axis=0), 0.0)))
    deviation = constancy_deviation(steady, strict)
    if deviation > CONSTANCY_WARN:
        warnings.warn(
            f"stage costs vary by {deviation:.1%} across steps; constant-stage assumption is weak",
            RuntimeWarning,
            stacklevel=2,
        )
    return stages, reports, deviation


def ingest_times(trace):
    """Latest ingest completion per step, over all ranks."""
    out = {}
    for ev in trace:
        if ev.label == "I" and ev.detail.startswith("end"):
            step = int(ev.detail.rsplit("=", 1)[1])
            out[step] = max(out.get(step, ev.time), ev.time)
    return out


def steady_state_span(trace, first=1):
    """Time between the step-``first`` ingest and the last step's ingest."""
    times = ingest_times(trace)
    if not times:
        raise MalformedTrace("trace has no ingest events")
    last = max(times)
    return times[last] - times[first], last - first


# estimator -------------------------------------------------------------


def check_stage_matrix(X):
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] != len(STAGES):
        raise ValueError(f"expected {len(STAGES)} stage columns {STAGES}, got {X.shape[1]}")
    if (X < 0).any():
        raise ValueError("stage durations must be >= 0")
    return X


class StageModel(BaseEstimator):
    """Fit steady-state stage costs on per-step measurements; predict makespan.

    ``X`` has one row per step and one column per stage (``STAGES`` order),
    for instance ``stage_matrix(step_reports(trace))``.
    """

    def __init__(self, warmup=1, strict=False):
        self.warmup = warmup
        self.strict = strict

    def fit(self, X, y=None):
        X = check_stage_matrix(X)
        if X.shape[0] <= self.warmup:
            raise ValueError(f"need more than {self.warmup} steps to fit, got {X.shape[0]}")
        steady = X[self.warmup:]
        self.stage_costs_ = StageCosts(*(float(v) for v in steady.mean(axis=0)))
        self.deviation_ = constancy_deviation(steady, self.strict)
        self.n_steps_ = X.shape[0]
        return self

    def predict(self, rho):
        """Makespan for each step count in ``rho``."""
        check_is_fitted(self, "stage_costs_")
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        return rho * max(self.stage_costs_.sides(self.strict))

    def efficiency(self):
        check_is_fitted(self, "stage_costs_")
        return efficiency(self.stage_costs_, 1, self.strict)

    def scenario(self):
        check_is_fitted(self, "stage_costs_")
        return classify_scenario(self.stage_costs_, self.strict)

    def score(self, X, y=None):
        """Negative relative error of the predicted steady span on new steps."""
        check_is_fitted(self, "stage_costs_")
        X = check_stage_matrix(X)
        sim = X[:, [STAGES.index(s) for s in ("S", "I")]].sum(axis=1)
        ana = X[:, [STAGES.index(s) for s in ("G", "A")]].sum(axis=1)
        observed = np.maximum(sim, ana).sum()
        predicted = self.predict(len(X))[0]
        return -abs(predicted - observed) / max(observed, np.finfo(float).tiny)


def report_record(stages, rho, makespan_simulated=None, eta_simulated=None, strict=False, idle=None):
    """Flat record with the fields of a model report."""
    ev = evaluate(stages, rho, strict)
    idle_S, idle_A = idle if idle is not None else split_idle(stages, strict)
    rec = {"rho": rho, **asdict(stages), "idle_S": idle_S, "idle_A": idle_A,
           "makespan_predicted": ev.makespan, "makespan_simulated": makespan_simulated,
           "eta_predicted": ev.eta, "eta_simulated": eta_simulated, "scenario": ev.scenario}
    return rec
