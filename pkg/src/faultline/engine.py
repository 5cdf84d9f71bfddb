"""Discrete-event simulation of crash/restart machines sharing one repository."""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from .core import (
    TIME_TOL,
    AdversarialPattern,
    ConfigError,
    Event,
    Kind,
    Outcome,
    Repository,
    SimulationError,
    SystemConfig,
    Task,
    group_by_instant,
    order_simultaneous,
)

if TYPE_CHECKING:
    from .schedulers import Policy


# ---------------------------------------------------------------------------
# Pattern validation


@dataclass(frozen=True)
class Violation:
    kind: str  # "no-alive" | "alternation" | "machine-range"
    t0: float
    t1: float = math.nan
    machine: int = -1
    detail: str = ""
    seq: int = -1  # pattern event that triggered it, if any

    def __str__(self) -> str:
        if self.kind == "no-alive":
            return f"no machine alive on [{self.t0:.12g}, {self.t1:.12g}]"
        return f"{self.kind} at t={self.t0:.12g} machine {self.machine}: {self.detail}"


def validate(pattern: AdversarialPattern, m: int, horizon: float | None = None) -> list[Violation]:
    """Admissibility and alternation diagnostics; an empty list means Ok.

    Zero-alive intervals are reported only with positive length, so a
    same-instant handoff between two machines is fine.
    """
    out: list[Violation] = []
    for p in pattern.initially_alive or ():
        if p >= m:
            out.append(Violation("machine-range", 0.0, machine=p, detail=f"start-alive id >= {m}"))
    alive = {p for p in pattern.alive_at_start(m) if p < m}
    dead_since: float | None = None if alive else 0.0
    dead_seq = -1
    last_crash = -1
    end = math.inf if horizon is None else horizon
    for group in group_by_instant(pattern.events):
        t = group[0].t
        if t > end + TIME_TOL:
            break
        for e in order_simultaneous(group):
            if e.kind == Kind.INJECT:
                continue
            if not 0 <= e.machine < m:
                out.append(Violation("machine-range", t, machine=e.machine,
                                     detail=f"id outside 0..{m - 1}", seq=e.seq))
                continue
            if e.kind == Kind.CRASH:
                if e.machine not in alive:
                    out.append(Violation("alternation", t, machine=e.machine,
                                         detail="crash while crashed", seq=e.seq))
                alive.discard(e.machine)
                last_crash = e.seq
            else:
                if e.machine in alive:
                    out.append(Violation("alternation", t, machine=e.machine,
                                         detail="restart while alive", seq=e.seq))
                alive.add(e.machine)
        if not alive and dead_since is None:
            dead_since, dead_seq = t, last_crash
        elif alive and dead_since is not None:
            if t - dead_since > TIME_TOL:
                out.append(Violation("no-alive", dead_since, t, seq=dead_seq))
            dead_since = None
    if dead_since is not None and end - dead_since > TIME_TOL:
        out.append(Violation("no-alive", dead_since, end, seq=dead_seq))
    return out


# ---------------------------------------------------------------------------
# Trace


@dataclass(frozen=True, slots=True)
class Record:
    """One trace line.

    kind is one of: inject, restart, crash, start, complete, duplicate,
    interrupt, park. For complete/duplicate/interrupt ``start`` holds the
    cycle's start instant.
    """

    t: float
    kind: str
    machine: int = -1
    task: int = -1
    size: float = 0.0
    start: float = math.nan
    provenance: str = ""


@dataclass
class Trace:
    config: SystemConfig
    horizon: float
    policy: str
    records: list[Record] = field(default_factory=list)
    # (instant, pending count per size class after the instant was processed)
    counts: list[tuple[float, tuple[int, ...]]] = field(default_factory=list)
    tasks: dict[int, Task] = field(default_factory=dict)
    _count_times: list[float] = field(default_factory=list, repr=False, compare=False)

    def of_kind(self, *kinds: str) -> Iterator[Record]:
        return (r for r in self.records if r.kind in kinds)

    @property
    def completions(self) -> list[Record]:
        return list(self.of_kind("complete"))

    @property
    def duplicates(self) -> list[Record]:
        return list(self.of_kind("duplicate"))

    @property
    def completed_load(self) -> float:
        return math.fsum(r.size for r in self.of_kind("complete"))

    def min_count_between(self, size_index: int, t0: float, t1: float) -> int:
        """Lowest pending count of a class over [t0, t1)."""
        if len(self._count_times) != len(self.counts):
            self._count_times = [t for t, _ in self.counts]
        times = self._count_times
        lo = bisect.bisect_right(times, t0 + TIME_TOL) - 1
        hi = bisect.bisect_left(times, t1 - TIME_TOL)
        vals = [self.counts[i][1][size_index] for i in range(max(lo, 0), hi)]
        if lo < 0 and not vals:
            return 0
        return min(vals) if vals else self.counts[lo][1][size_index]


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class _Cycle:
    task: Task
    start: float
    finish: float
    provenance: str
    serial: int


def run(
    config: SystemConfig,
    pattern: AdversarialPattern,
    policy: Policy,
    horizon: float,
    *,
    require_admissible: bool = True,
) -> Trace:
    """Simulate ``policy`` on ``pattern`` over [0, horizon] (inclusive).

    With ``require_admissible=False`` intervals with no machine alive are
    tolerated; malformed crash/restart sequences are still rejected.
    """
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    problems = validate(pattern, config.m, horizon)
    if not require_admissible:
        problems = [v for v in problems if v.kind != "no-alive"]
    if problems:
        raise ConfigError("inadmissible pattern: " + "; ".join(map(str, problems)))
    for e in pattern.injections:
        config.size_index(e.size)

    repo = Repository(config)
    trace = Trace(config, horizon, policy.name)
    alive = pattern.alive_at_start(config.m)
    states: dict[int, object] = {p: policy.initial_state(p) for p in alive}
    current: dict[int, _Cycle] = {}
    finishes: list[tuple[float, int, int]] = []
    events = pattern.events
    ei = 0
    next_id = 0
    serial = 0
    s = config.s
    rec = trace.records.append

    t = 0.0
    first = True
    while True:
        while finishes and (finishes[0][1] not in current or current[finishes[0][1]].serial != finishes[0][2]):
            heapq.heappop(finishes)
        candidates = []
        if ei < len(events):
            candidates.append(events[ei].t)
        if finishes:
            candidates.append(finishes[0][0])
        if first:
            # machines alive at t=0 issue their first get even with no events
            t = min(candidates + [0.0])
            first = False
        elif candidates:
            t = min(candidates)
        else:
            break
        if t > horizon + TIME_TOL:
            break

        batch: list[Event] = []
        while ei < len(events) and events[ei].t <= t + TIME_TOL:
            batch.append(events[ei])
            ei += 1
        while finishes and finishes[0][0] <= t + TIME_TOL:
            _, p, ser = heapq.heappop(finishes)
            cyc = current.get(p)
            if cyc is not None and cyc.serial == ser:
                batch.append(Event(t, Kind.INFORM, machine=p, task=cyc.task.id))

        for e in order_simultaneous(batch) if batch else ():
            if e.kind == Kind.INFORM:
                cyc = current.pop(e.machine)
                res = repo.inform(e.machine, cyc.task.id)
                accepted = res.outcome is Outcome.ACCEPTED
                rec(Record(t, "complete" if accepted else "duplicate", e.machine, cyc.task.id,
                           cyc.task.size, cyc.start, cyc.provenance))
                policy.on_complete(states[e.machine], e.machine, cyc.task, accepted)
            elif e.kind == Kind.RESTART:
                alive.add(e.machine)
                states[e.machine] = policy.initial_state(e.machine)
                rec(Record(t, "restart", e.machine))
            elif e.kind == Kind.CRASH:
                alive.discard(e.machine)
                cyc = current.pop(e.machine, None)
                if cyc is not None:
                    rec(Record(t, "interrupt", e.machine, cyc.task.id, cyc.task.size, cyc.start, cyc.provenance))
                states.pop(e.machine, None)
                rec(Record(t, "crash", e.machine))
            elif e.kind == Kind.INJECT:
                task = Task(next_id, t, e.size)
                next_id += 1
                repo.inject(task)
                trace.tasks[task.id] = task
                rec(Record(t, "inject", task=task.id, size=task.size))

        idle = sorted(p for p in alive if p not in current)
        if idle:
            snap = repo.get(t)
            for p in idle:
                choice = policy.choose(snap, p, states[p])
                if choice is None:
                    if snap:
                        raise SimulationError(
                            f"{policy.name}: machine {p} declined at t={t} with {len(snap)} pending")
                    rec(Record(t, "park", p))
                    continue
                if choice.task.id not in snap:
                    raise SimulationError(f"{policy.name}: machine {p} chose non-pending task {choice.task.id}")
                serial += 1
                cyc = _Cycle(choice.task, t, t + choice.task.size / s, str(choice.provenance), serial)
                current[p] = cyc
                heapq.heappush(finishes, (cyc.finish, p, serial))
                rec(Record(t, "start", p, cyc.task.id, cyc.task.size, t, cyc.provenance))
        trace.counts.append((t, repo.counts))
    return trace
