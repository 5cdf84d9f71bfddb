"""Domain types, the shared task repository and same-instant event ordering."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

TIME_TOL = 1e-9


class ConfigError(ValueError):
    """Malformed configuration or pattern input."""


class SimulationError(RuntimeError):
    """A fatal bug detected while simulating (policy or engine)."""


class InvariantViolation(SimulationError):
    """A runtime invariant monitor fired."""


def approx_eq(a: float, b: float, tol: float = TIME_TOL) -> bool:
    return abs(a - b) <= tol


def fmt_float(x: float) -> str:
    """Serialize with 12 significant digits (round-trips within TIME_TOL)."""
    return f"{x:.12g}"


@dataclass(frozen=True, slots=True)
class Task:
    id: int
    arrival: float
    size: float

    @property
    def key(self) -> tuple[float, int]:
        return (self.arrival, self.id)


@dataclass(frozen=True)
class SystemConfig:
    m: int
    s: float
    sizes: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(float(x) for x in self.sizes))
        if self.m < 1:
            raise ConfigError(f"machine count must be >= 1, got {self.m}")
        if self.s < 1:
            raise ConfigError(f"speedup must be >= 1, got {self.s}")
        if not self.sizes:
            raise ConfigError("size ladder is empty")
        if any(x <= 0 for x in self.sizes):
            raise ConfigError("sizes must be positive")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError(f"sizes must be strictly ascending: {self.sizes}")

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def l_min(self) -> float:
        return self.sizes[0]

    @property
    def l_max(self) -> float:
        return self.sizes[-1]

    @property
    def rho(self) -> float:
        return self.l_max / self.l_min

    @property
    def rho_bar(self) -> int:
        return math.floor(self.rho + TIME_TOL)

    def ratio(self, i: int, j: int) -> float:
        """sizes[i] / sizes[j] (0-based indices)."""
        return self.sizes[i] / self.sizes[j]

    def step_ratio(self, i: int) -> float:
        """sizes[i] / sizes[i-1] for 1 <= i < k."""
        return self.sizes[i] / self.sizes[i - 1]

    @property
    def pairwise_divisible(self) -> bool:
        for i in range(self.k):
            for j in range(i):
                r = self.ratio(i, j)
                if abs(r - round(r)) > 1e-9:
                    return False
        return True

    def size_index(self, size: float) -> int:
        i = bisect.bisect_left(self.sizes, size - 1e-9 * max(1.0, size))
        if i < self.k and math.isclose(self.sizes[i], size, rel_tol=1e-9, abs_tol=1e-12):
            return i
        raise ConfigError(f"size {size!r} is not on the ladder {self.sizes}")


# ---------------------------------------------------------------------------
# Events


class Kind(enum.IntEnum):
    """Event classes; the value is the rank used for same-instant ordering."""

    INFORM = 0
    RESTART = 1
    CRASH = 2
    INJECT = 4
    GET = 5


_BOUNCE_RANK = 3  # a same-machine restart that follows its own crash


@dataclass(frozen=True, slots=True)
class Event:
    t: float
    kind: Kind
    machine: int = -1
    size: float = 0.0
    task: int = -1
    seq: int = 0


def inject(t: float, size: float, seq: int = 0) -> Event:
    return Event(float(t), Kind.INJECT, size=float(size), seq=seq)


def crash(t: float, machine: int, seq: int = 0) -> Event:
    return Event(float(t), Kind.CRASH, machine=machine, seq=seq)


def restart(t: float, machine: int, seq: int = 0) -> Event:
    return Event(float(t), Kind.RESTART, machine=machine, seq=seq)


def order_simultaneous(events: Sequence[Event]) -> list[Event]:
    """Canonical order for events sharing one instant.

    informs, restarts, crashes, injections, gets; ties by machine id then
    sequence number. A restart of a machine that also crashes at this instant
    with a lower sequence number is a bounce and is placed right after the
    crashes.
    """
    if not events:
        return []
    t0 = events[0].t
    for e in events:
        if not approx_eq(e.t, t0):
            raise SimulationError(f"events at different instants: {t0} vs {e.t}")
    crash_seq = {e.machine: e.seq for e in events if e.kind == Kind.CRASH}

    def rank(e: Event) -> tuple[int, int, int]:
        r = int(e.kind)
        if e.kind == Kind.RESTART and e.machine in crash_seq and crash_seq[e.machine] < e.seq:
            r = _BOUNCE_RANK
        return (r, e.machine, e.seq)

    return sorted(events, key=rank)


# ---------------------------------------------------------------------------
# Adversarial patterns


@dataclass
class AdversarialPattern:
    """Time-ordered injection/crash/restart script.

    ``initially_alive`` lists machines alive at t=0; None means all of them.
    """

    events: list[Event] = field(default_factory=list)
    initially_alive: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        self.events = sorted(
            (Event(e.t, e.kind, e.machine, e.size, e.task, i) for i, e in enumerate(self.events)),
            key=lambda e: (e.t, e.seq),
        )
        if self.initially_alive is not None:
            self.initially_alive = tuple(sorted(set(self.initially_alive)))

    def alive_at_start(self, m: int) -> set[int]:
        if self.initially_alive is None:
            return set(range(m))
        return set(self.initially_alive)

    @property
    def injections(self) -> list[Event]:
        return [e for e in self.events if e.kind == Kind.INJECT]

    @property
    def errors(self) -> list[Event]:
        return [e for e in self.events if e.kind in (Kind.CRASH, Kind.RESTART)]

    def tasks(self) -> list[Task]:
        """Tasks in injection order; ids follow (time, sequence) order."""
        return [Task(i, e.t, e.size) for i, e in enumerate(self.injections)]

    def max_machine(self) -> int:
        ids = [e.machine for e in self.errors]
        ids += list(self.initially_alive or ())
        return max(ids, default=-1)

    def sizes(self) -> tuple[float, ...]:
        out: list[float] = []
        for e in sorted(self.injections, key=lambda e: e.size):
            if not out or not math.isclose(out[-1], e.size, rel_tol=1e-9):
                out.append(e.size)
        return tuple(out)

    def alive_intervals(self, m: int, horizon: float) -> dict[int, list[tuple[float, float]]]:
        """Per-machine half-open alive intervals clipped to [0, horizon].

        Same-instant crash/restart of one machine (a bounce) splits the
        interval at that instant.
        """
        alive = self.alive_at_start(m)
        since = {p: 0.0 for p in alive}
        out: dict[int, list[tuple[float, float]]] = {p: [] for p in range(m)}
        for group in group_by_instant(self.events):
            for e in order_simultaneous(group):
                if e.kind == Kind.RESTART and e.machine not in alive:
                    alive.add(e.machine)
                    since[e.machine] = e.t
                elif e.kind == Kind.CRASH and e.machine in alive:
                    alive.discard(e.machine)
                    out[e.machine].append((since[e.machine], min(e.t, horizon)))
        for p in alive:
            out[p].append((since[p], horizon))
        return {p: [(a, b) for a, b in iv if a <= horizon and b - a > TIME_TOL] for p, iv in out.items()}


def group_by_instant(events: Iterable[Event]) -> list[list[Event]]:
    """Split time-sorted events into groups within TIME_TOL of the group's first."""
    groups: list[list[Event]] = []
    for e in events:
        if groups and approx_eq(e.t, groups[-1][0].t):
            groups[-1].append(e)
        else:
            groups.append([e])
    return groups


# ---------------------------------------------------------------------------
# Pattern text format


def format_pattern(pattern: AdversarialPattern) -> str:
    lines = []
    if pattern.initially_alive is not None:
        lines.append("start-alive " + " ".join(str(p) for p in pattern.initially_alive))
    for e in pattern.events:
        if e.kind == Kind.INJECT:
            lines.append(f"inject {fmt_float(e.t)} {fmt_float(e.size)}")
        elif e.kind == Kind.CRASH:
            lines.append(f"crash {fmt_float(e.t)} {e.machine}")
        elif e.kind == Kind.RESTART:
            lines.append(f"restart {fmt_float(e.t)} {e.machine}")
    return "\n".join(lines) + "\n"


class PatternSyntaxError(ConfigError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def parse_pattern_text(text: str) -> tuple[AdversarialPattern, dict[int, int]]:
    """Parse the line format; returns the pattern and a map from event seq to source line.

    Only syntax is checked here; see ``cli.parse_pattern_file`` for validation.
    """
    raw: list[tuple[Event, int]] = []
    alive: list[int] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        try:
            if word == "start-alive":
                alive = (alive or []) + [_machine(a) for a in args]
            elif word in ("inject", "crash", "restart"):
                if len(args) != 2:
                    raise ValueError(f"'{word}' takes 2 arguments, got {len(args)}")
                t = _time(args[0])
                if word == "inject":
                    size = float(args[1])
                    if not size > 0 or not math.isfinite(size):
                        raise ValueError(f"size must be positive: {args[1]}")
                    raw.append((inject(t, size), lineno))
                else:
                    ev = crash if word == "crash" else restart
                    raw.append((ev(t, _machine(args[1])), lineno))
            else:
                raise ValueError(f"unknown directive '{word}'")
        except ValueError as exc:
            raise PatternSyntaxError(lineno, str(exc)) from None
    pattern = AdversarialPattern([e for e, _ in raw], tuple(alive) if alive is not None else None)
    return pattern, {i: lineno for i, (_, lineno) in enumerate(raw)}


def _time(tok: str) -> float:
    t = float(tok)
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and >= 0: {tok}")
    return t


def _machine(tok: str) -> int:
    p = int(tok)
    if p < 0:
        raise ValueError(f"machine id must be >= 0: {tok}")
    return p


# ---------------------------------------------------------------------------
# Repository


class Outcome(enum.Enum):
    ACCEPTED = "accepted"
    ALREADY_DONE = "already_done"


@dataclass(frozen=True, slots=True)
class InformResult:
    outcome: Outcome
    task: Task


class Snapshot:
    """Point-in-time, read-only copy of the pending queues."""

    __slots__ = ("t", "config", "queues", "_by_arrival", "_ids")

    def __init__(self, t: float, config: SystemConfig, queues: tuple[tuple[Task, ...], ...]):
        self.t = t
        self.config = config
        self.queues = queues
        self._by_arrival: tuple[Task, ...] | None = None
        self._ids: frozenset[int] | None = None

    def queue(self, i: int) -> tuple[Task, ...]:
        return self.queues[i]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(q) for q in self.queues)

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues)

    def __bool__(self) -> bool:
        return any(self.queues)

    @property
    def by_arrival(self) -> tuple[Task, ...]:
        """All pending tasks sorted by (arrival, id)."""
        if self._by_arrival is None:
            self._by_arrival = tuple(sorted((t for q in self.queues for t in q), key=lambda t: t.key))
        return self._by_arrival

    @property
    def by_size(self) -> tuple[Task, ...]:
        """All pending tasks sorted by size, then arrival, then id."""
        return tuple(t for q in self.queues for t in q)

    def __contains__(self, task_id: int) -> bool:
        if self._ids is None:
            self._ids = frozenset(t.id for q in self.queues for t in q)
        return task_id in self._ids


class Repository:
    """Shared pending-task store with per-size queues sorted by (arrival, id)."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.queues: list[list[Task]] = [[] for _ in config.sizes]
        self._keys: list[list[tuple[float, int]]] = [[] for _ in config.sizes]
        self.completed: set[int] = set()
        self.tasks: dict[int, Task] = {}
        self._where: dict[int, int] = {}

    def inject(self, task: Task) -> None:
        if task.id in self.tasks:
            raise ConfigError(f"duplicate task id {task.id}")
        i = self.config.size_index(task.size)
        pos = bisect.bisect_right(self._keys[i], task.key)
        self.queues[i].insert(pos, task)
        self._keys[i].insert(pos, task.key)
        self.tasks[task.id] = task
        self._where[task.id] = i

    def get(self, now: float) -> Snapshot:
        return Snapshot(now, self.config, tuple(tuple(q) for q in self.queues))

    def inform(self, machine: int, task_id: int) -> InformResult:
        task = self.tasks.get(task_id)
        if task is None:
            raise SimulationError(f"machine {machine} informed unknown task {task_id}")
        if task_id in self.completed:
            return InformResult(Outcome.ALREADY_DONE, task)
        i = self._where.pop(task_id)
        pos = bisect.bisect_left(self._keys[i], task.key)
        del self.queues[i][pos]
        del self._keys[i][pos]
        self.completed.add(task_id)
        return InformResult(Outcome.ACCEPTED, task)

    def is_pending(self, task_id: int) -> bool:
        return task_id in self._where

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(q) for q in self.queues)

    def check_invariants(self) -> None:
        seen: set[int] = set()
        for q in self.queues:
            for a, b in zip(q, q[1:]):
                if not a.key < b.key:
                    raise InvariantViolation(f"queue order broken: {a} before {b}")
            for t in q:
                if t.id in seen or t.id in self.completed:
                    raise InvariantViolation(f"task {t.id} appears twice")
                seen.add(t.id)
