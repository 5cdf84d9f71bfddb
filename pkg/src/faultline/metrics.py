"""Load accounting, competitive-ratio series, redundancy reporting and bound checks."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

from .core import TIME_TOL, ConfigError
from .engine import Trace

Trajectory = Sequence[tuple[float, float]]  # (t, cumulative value), t nondecreasing


@dataclass(frozen=True)
class SizeFilter:
    op: str = "all"  # all | eq | lt | ge
    size: float = 0.0

    def __post_init__(self) -> None:
        if self.op not in ("all", "eq", "lt", "ge"):
            raise ConfigError(f"unknown size filter {self.op!r}")

    def matches(self, size: float) -> bool:
        if self.op == "all":
            return True
        close = math.isclose(size, self.size, rel_tol=1e-9, abs_tol=1e-12)
        if self.op == "eq":
            return close
        if self.op == "lt":
            return size < self.size and not close
        return size > self.size or close

    @classmethod
    def parse(cls, text: str) -> SizeFilter:
        """Accepts ``all``, ``=2``, ``<2``, ``>=2``."""
        text = text.strip()
        if text == "all":
            return cls()
        for prefix, op in ((">=", "ge"), ("=", "eq"), ("<", "lt")):
            if text.startswith(prefix):
                return cls(op, float(text[len(prefix):]))
        raise ConfigError(f"cannot parse size filter {text!r}")


ALL = SizeFilter()


def completed_load(trace: Trace, t: float, flt: SizeFilter = ALL) -> float:
    """Sum of sizes of distinct tasks completed by t; redundant informs are ignored."""
    return math.fsum(r.size for r in trace.of_kind("complete") if r.t <= t + TIME_TOL and flt.matches(r.size))


def injected_load(trace: Trace, t: float, flt: SizeFilter = ALL) -> float:
    return math.fsum(r.size for r in trace.of_kind("inject") if r.t <= t + TIME_TOL and flt.matches(r.size))


def pending_load(trace: Trace, t: float, flt: SizeFilter = ALL) -> float:
    return injected_load(trace, t, flt) - completed_load(trace, t, flt)


def load_trajectory(trace: Trace) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    c = 0.0
    for r in trace.of_kind("complete"):
        c += r.size
        out.append((r.t, c))
    return out


def count_trajectory(trace: Trace) -> list[tuple[float, float]]:
    return [(r.t, float(i + 1)) for i, r in enumerate(trace.of_kind("complete"))]


def _step_value(traj: Trajectory, times: list[float], t: float) -> float:
    i = bisect.bisect_right(times, t + TIME_TOL)
    return traj[i - 1][1] if i else 0.0


# ---------------------------------------------------------------------------
# Ratio series


@dataclass(frozen=True)
class RatioSample:
    t: float
    c_alg: float
    c_base: float

    @property
    def ratio(self) -> float | None:
        return self.c_alg / self.c_base if self.c_base > 0 else None


@dataclass
class RatioSeries:
    samples: list[RatioSample]
    horizon: float

    @property
    def defined(self) -> bool:
        return any(s.c_base > 0 for s in self.samples)

    @property
    def final_ratio(self) -> float | None:
        return self.samples[-1].ratio if self.samples else None

    def min_suffix_ratio(self, t0: float = 0.0) -> float | None:
        vals = [s.ratio for s in self.samples if s.t >= t0 - TIME_TOL and s.ratio is not None]
        return min(vals) if vals else None

    def slack_estimate(self, alpha: float, t0: float = 0.0) -> float | None:
        """Largest D with alpha*C_base + D <= C_alg at every sample from t0 on."""
        vals = [s.c_alg - alpha * s.c_base for s in self.samples if s.t >= t0 - TIME_TOL]
        return min(vals) if vals else None

    def summary(self, burn_in: float = 0.0, alpha: float | None = None) -> dict:
        msr = self.min_suffix_ratio(burn_in)
        a = alpha if alpha is not None else msr
        return {
            "final_ratio": self.final_ratio,
            "min_suffix_ratio": msr,
            "slack_estimate": self.slack_estimate(a, burn_in) if a is not None else None,
        }


def competitive_ratio(
    alg: Union[Trace, Trajectory],
    base: Union[Trace, Trajectory],
    horizon: float,
) -> RatioSeries:
    """Sample both completed-load step functions at every completion of either."""
    a = load_trajectory(alg) if isinstance(alg, Trace) else list(alg)
    b = load_trajectory(base) if isinstance(base, Trace) else list(base)
    ta, tb = [t for t, _ in a], [t for t, _ in b]
    times = sorted({t for t in ta + tb if t <= horizon + TIME_TOL})
    merged: list[float] = []
    for t in times:
        if not merged or t - merged[-1] > TIME_TOL:
            merged.append(t)
    samples = [RatioSample(t, _step_value(a, ta, t), _step_value(b, tb, t)) for t in merged]
    return RatioSeries(samples, horizon)


# ---------------------------------------------------------------------------
# Redundancy


@dataclass
class RedundancyReport:
    duplicates: int
    wasted_load: float
    lemma_violations: int
    details: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"duplicates": self.duplicates, "wasted_load": self.wasted_load,
                "lemma_violations": self.lemma_violations}


def redundancy_report(trace: Trace) -> RedundancyReport:
    """Count redundant informs; flag those where both executions ran with >= m^2 tasks of their class pending."""
    cfg = trace.config
    m2 = cfg.m * cfg.m
    first = {r.task: r for r in trace.of_kind("complete")}
    dups = trace.duplicates
    violations = 0
    details: list[str] = []
    for d in dups:
        c = first[d.task]
        i = cfg.size_index(d.size)
        lo1 = trace.min_count_between(i, c.start, c.t)
        lo2 = trace.min_count_between(i, d.start, d.t)
        if lo1 >= m2 and lo2 >= m2:
            violations += 1
            details.append(
                f"task {d.task} (size {d.size:.12g}) finished by machine {c.machine} on "
                f"[{c.start:.12g}, {c.t:.12g}] and machine {d.machine} on [{d.start:.12g}, {d.t:.12g}]")
    return RedundancyReport(len(dups), math.fsum(d.size for d in dups), violations, details)


def grouped_size_runs(trace: Trace) -> tuple[int, list[str]]:
    """Check that grouped completions share one size between changes of the grouped level.

    Returns (number of runs seen, problems).
    """
    cfg = trace.config
    runs = 0
    problems: list[str] = []
    last: dict[int, tuple[int, float]] = {}
    for r in trace.of_kind("complete", "duplicate"):
        if not r.provenance.startswith("group:"):
            last.pop(r.machine, None)
            continue
        level = int(r.provenance.split(":")[1])
        if not math.isclose(r.size, cfg.sizes[level], rel_tol=1e-9):
            problems.append(f"t={r.t:.12g} machine {r.machine}: size {r.size} at level {level}")
        prev = last.get(r.machine)
        if prev is None or prev[0] != level:
            runs += 1
        elif not math.isclose(prev[1], r.size, rel_tol=1e-9):
            problems.append(f"t={r.t:.12g} machine {r.machine}: size changed within a run")
        last[r.machine] = (level, r.size)
    return runs, problems


# ---------------------------------------------------------------------------
# Bound checks against an offline schedule


def backlog_window_end(trace: Trace) -> float:
    """Instant at which some size class first drops below m^2 pending.

    Every class held at least m^2 pending tasks before that instant. Returns
    -inf when the backlog is short right from the first instant, and the
    horizon when it never drops.
    """
    m2 = trace.config.m ** 2
    for n, (t, counts) in enumerate(trace.counts):
        if min(counts) < m2:
            return t if n else -math.inf
    return trace.horizon


def check_instants(
    alg: Trajectory,
    base: Trajectory,
    instants: Sequence[float],
    slack: float,
    alpha: float = 1.0,
) -> list[tuple[float, float, float]]:
    """Instants where alg(t) < alpha*base(t) - slack, as (t, alg, base)."""
    ta, tb = [t for t, _ in alg], [t for t, _ in base]
    bad = []
    for t in instants:
        va, vb = _step_value(alg, ta, t), _step_value(base, tb, t)
        if va < alpha * vb - slack - TIME_TOL:
            bad.append((t, va, vb))
    return bad
