"""Pattern constructors: the δ-epoch lower-bound schedule, phase suites, random patterns."""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .core import TIME_TOL, AdversarialPattern, ConfigError, Event, crash, inject, restart

ScriptEntry = tuple[int, float, float]  # (machine, start, size)


def _switch(events: list[Event], t: float, prev: int, nxt: int) -> None:
    """Move the single alive slot from ``prev`` to ``nxt`` at instant t.

    Different machines: restart then crash (handoff). Same machine: crash then
    restart (a bounce, which cuts the active period in two).
    """
    if prev == nxt:
        events.append(crash(t, prev))
        events.append(restart(t, nxt))
    else:
        events.append(restart(t, nxt))
        events.append(crash(t, prev))


def _one_alive_timeline(machines: Sequence[int], durations: Sequence[float]) -> tuple[list[Event], list[float]]:
    """Crash/restart events keeping exactly one machine alive per phase; returns events and phase starts."""
    events: list[Event] = []
    starts: list[float] = []
    t = 0.0
    for i, (p, lam) in enumerate(zip(machines, durations)):
        if i:
            _switch(events, t, machines[i - 1], p)
        starts.append(t)
        t += lam
    return events, starts


# ---------------------------------------------------------------------------
# δ-epoch construction against m-LIS (m=2, s=rho)

EPOCH_SEQUENCE = (0, 2, 2, 4, 1, 3, 3, 5)  # exponents of δ in arrival order
EPOCH_PHASES = (3, 1, 3, 2, 4, 2, 4, 2)  # exponents of δ for phase lengths
EPOCH_ALIVE = (1, 0, 0, 0, 1, 0, 0, 0)
MLIS_EPOCH_COMPLETIONS = (2, 0, 2, 4, 3, 1, 3, 5)  # what m-LIS finishes in each phase


@dataclass
class EpochSpec:
    rho: float = 2.0
    l_min: float = 1.0

    @property
    def delta(self) -> float:
        return self.rho ** (1 / 5)

    def size(self, exponent: int) -> float:
        return self.l_min * self.delta**exponent

    @property
    def sizes(self) -> tuple[float, ...]:
        return tuple(self.size(e) for e in range(6))

    @property
    def phase_lengths(self) -> tuple[float, ...]:
        return tuple(self.size(e) for e in EPOCH_PHASES)

    @property
    def epoch_length(self) -> float:
        return math.fsum(self.phase_lengths)

    @property
    def offline_epoch_load(self) -> float:
        """Load the scripted X finishes per epoch: one task as long as each phase."""
        return math.fsum(self.phase_lengths)

    @property
    def mlis_epoch_load(self) -> float:
        return math.fsum(self.size(e) for e in EPOCH_SEQUENCE)


@dataclass
class MlisConstruction:
    pattern: AdversarialPattern
    script: list[ScriptEntry]
    spec: EpochSpec
    epochs: int
    horizon: float
    epoch_bounds: list[float] = field(default_factory=list)


def build_mlis_pattern(rho: float = 2.0, l_min: float = 1.0, epochs: int = 1) -> MlisConstruction:
    """Epoch pattern plus the matching offline script.

    Injects ``2 * epochs`` copies of the 8-task sequence at t=0: one copy per
    epoch is what m-LIS consumes, the second keeps the offline schedule supplied
    (it needs two δ^4 and three δ^2 tasks per epoch).
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    spec = EpochSpec(rho, l_min)
    if epochs == 0:
        return MlisConstruction(AdversarialPattern([]), [], spec, 0, 0.0, [0.0])
    injections = [inject(0.0, spec.size(e)) for _ in range(2 * epochs) for e in EPOCH_SEQUENCE]
    machines = list(EPOCH_ALIVE) * epochs
    durations = list(spec.phase_lengths) * epochs
    events, starts = _one_alive_timeline(machines, durations)
    pattern = AdversarialPattern(injections + events, initially_alive=(EPOCH_ALIVE[0],))
    script = [(p, t, lam) for p, t, lam in zip(machines, starts, durations)]
    bounds = [starts[8 * e] for e in range(epochs)]
    horizon = starts[-1] + durations[-1]
    return MlisConstruction(pattern, script, spec, epochs, horizon, bounds + [horizon])


# ---------------------------------------------------------------------------
# Phase patterns for rho-m-Preamble (one machine alive per phase)

PHASE_TYPES = (1, 2, 3, 4)


@dataclass(frozen=True)
class Phase:
    type: int
    machine: int
    duration: float


@dataclass
class PhaseSpec:
    phases: list[Phase]
    m: int
    sizes: tuple[float, float]

    @property
    def rho_bar(self) -> int:
        return math.floor(self.sizes[1] / self.sizes[0] + TIME_TOL)

    def check(self) -> None:
        lmin, lmax = self.sizes
        pre = self.rho_bar * lmin
        for i, ph in enumerate(self.phases):
            lam = ph.duration
            ok = {
                1: 0 < lam < pre - TIME_TOL,
                2: lam >= pre - TIME_TOL,
                3: 0 < lam < lmax - TIME_TOL,
                4: lam >= lmax - TIME_TOL,
            }.get(ph.type)
            if not ok:
                raise ConfigError(f"phase {i}: type {ph.type} cannot have duration {lam}")
            if not 0 <= ph.machine < self.m:
                raise ConfigError(f"phase {i}: machine {ph.machine} outside 0..{self.m - 1}")


@dataclass
class PhaseConstruction:
    pattern: AdversarialPattern
    script: list[ScriptEntry]
    spec: PhaseSpec
    horizon: float
    preamble_consumption: list[int]


def _preamble_consumed(ph: Phase, lmin: float, rho_bar: int, s: float) -> int:
    if ph.type in (3, 4):
        return 0
    return min(rho_bar, math.floor(ph.duration * s / lmin + TIME_TOL))


def _best_response(lam: float, lmin: float, lmax: float, have_min: int, have_max: int) -> tuple[int, int]:
    """Counts (a, b) of l_min/l_max tasks maximizing a*lmin + b*lmax <= lam; ties favour fewer l_min."""
    best = (-1.0, 0, 0)
    for b in range(min(have_max, math.floor(lam / lmax + TIME_TOL)) + 1):
        a = min(have_min, math.floor((lam - b * lmax) / lmin + TIME_TOL))
        load = a * lmin + b * lmax
        if load > best[0] + TIME_TOL or (abs(load - best[0]) <= TIME_TOL and a < best[1]):
            best = (load, a, b)
    return best[1], best[2]


def build_phase_pattern(spec: PhaseSpec, *, speedup: float = 1.0, max_margin: int = 4) -> PhaseConstruction:
    """Realize a phase sequence with one alive machine at a time.

    l_max tasks are all injected at t=0 so |L_max| >= m^2 holds throughout.
    l_min tasks arrive at the start of each type-1/2 phase, topping the
    preamble-running algorithm's queue up to exactly rho_bar*m^2 so its
    preamble flag is set; type-3/4 phases need the queue below that mark, so
    they must follow a phase in which the preamble consumed something.
    The returned script is a per-phase best response for the offline side.
    """
    spec.check()
    lmin, lmax = spec.sizes
    m, rb = spec.m, spec.rho_bar
    target = rb * m * m
    machines = [ph.machine for ph in spec.phases]
    durations = [ph.duration for ph in spec.phases]
    events, starts = _one_alive_timeline(machines, durations)
    horizon = starts[-1] + durations[-1] if starts else 0.0

    max_count = m * m + 2 * math.ceil(horizon * speedup / lmax) + max_margin
    injections = [inject(0.0, lmax) for _ in range(max_count)]

    alg_min = 0  # l_min pending for the simulated algorithm
    x_min, x_max = 0, max_count  # supply left for the offline script
    prev_consumed = None
    consumed: list[int] = []
    script: list[ScriptEntry] = []
    for i, (ph, t0) in enumerate(zip(spec.phases, starts)):
        if ph.type in (1, 2):
            add = target - alg_min
            injections += [inject(t0, lmin) for _ in range(add)]
            alg_min += add
            x_min += add
        elif prev_consumed is None or alg_min >= target:
            raise ConfigError(f"phase {i}: type {ph.type} needs fewer than {target} l_min tasks pending")
        used = _preamble_consumed(ph, lmin, rb, speedup)
        alg_min -= used
        consumed.append(used)
        prev_consumed = used
        a, b = _best_response(ph.duration, lmin, lmax, x_min, x_max)
        x_min -= a
        x_max -= b
        t = t0
        for size, n in ((lmin, a), (lmax, b)):
            for _ in range(n):
                script.append((ph.machine, t, size))
                t += size
    pattern = AdversarialPattern(injections + events, initially_alive=(machines[0],) if machines else None)
    return PhaseConstruction(pattern, script, spec, horizon, consumed)


def random_phase_spec(
    seed: int,
    m: int,
    sizes: tuple[float, float],
    horizon: float,
) -> PhaseSpec:
    """Random mix of all four phase types covering at least ``horizon``.

    Type-1 phases last at least l_min so the preamble always consumes a task,
    which keeps a following type-3/4 phase realizable.
    """
    rng = random.Random(seed)
    lmin, lmax = sizes
    rb = math.floor(lmax / lmin + TIME_TOL)
    pre = rb * lmin
    phases: list[Phase] = []
    total = 0.0
    while total < horizon:
        kinds = [1, 2] if not phases else [1, 2, 3, 4]
        kind = rng.choice(kinds)
        if kind == 1:
            lo = lmin if rb >= 2 else 0.5 * lmin
            lam = rng.uniform(lo, pre)
            if lam >= pre - TIME_TOL:
                lam = lo
        elif kind == 2:
            lam = rng.uniform(pre, pre + 3 * lmax)
        elif kind == 3:
            lam = rng.uniform(0.25 * lmax, lmax)
            if lam >= lmax - TIME_TOL:
                lam = 0.25 * lmax
        else:
            lam = rng.uniform(lmax, 4 * lmax)
        if kind in (3, 4) and phases:
            prev = phases[-1]
            if prev.type in (1, 2) and _preamble_consumed(prev, lmin, rb, 1.0) == 0:
                continue
        phases.append(Phase(kind, rng.randrange(m), lam))
        total += lam
    return PhaseSpec(phases, m, sizes)


# ---------------------------------------------------------------------------
# Random patterns


def build_random_pattern(
    seed: int,
    m: int,
    sizes: Sequence[float],
    horizon: float,
    crash_rate: float,
    injection_rate: float,
    *,
    mean_downtime: float | None = None,
    front_load: int | Sequence[int] = 0,
    max_tasks: int | None = None,
    max_errors: int | None = None,
    time_grid: float | None = None,
    backlog_period: float | None = None,
    backlog_reserve: int | Sequence[int] = 0,
    speedup: float = 1.0,
) -> AdversarialPattern:
    """Seeded random pattern, admissible and alternating by construction.

    Each machine alternates exponential up/down times. A crash that would
    leave nobody alive is deferred to the next restart of another machine
    (same instant; restarts are ordered first). ``front_load`` tasks per class
    are injected at t=0 in shuffled order, then Poisson arrivals follow.
    ``time_grid`` rounds every event time to a multiple of the grid.
    ``backlog_period`` adds the periodic top-ups from ``backlog_injections``.
    """
    if crash_rate < 0 or injection_rate < 0:
        raise ConfigError("rates must be non-negative")
    rng = random.Random(seed)
    sizes = tuple(sizes)
    down_mean = mean_downtime if mean_downtime is not None else max(sizes)

    def snap(t: float) -> float:
        return round(t / time_grid) * time_grid if time_grid else t

    loads = [front_load] * len(sizes) if isinstance(front_load, int) else list(front_load)
    first = [sz for sz, n in zip(sizes, loads) for _ in range(n)]
    rng.shuffle(first)
    injections = [inject(0.0, sz) for sz in first]
    if injection_rate > 0:
        t = rng.expovariate(injection_rate)
        while t <= horizon and (max_tasks is None or len(injections) < max_tasks):
            injections.append(inject(snap(t), rng.choice(sizes)))
            t += rng.expovariate(injection_rate)
    if max_tasks is not None:
        injections = injections[:max_tasks]
    if backlog_period is not None:
        injections += backlog_injections(m, sizes, horizon, speedup, backlog_period, backlog_reserve)

    errors: list[Event] = []
    if crash_rate > 0:
        alive = set(range(m))
        gap = time_grid or 0.0
        # (time, is_crash, machine): restarts pop before crashes at one instant
        heap = [(snap(rng.expovariate(crash_rate)), True, p) for p in range(m)]
        heapq.heapify(heap)
        while heap:
            t, is_crash, p = heapq.heappop(heap)
            if t > horizon or (max_errors is not None and len(errors) >= max_errors):
                break
            if is_crash:
                if alive == {p}:
                    pending = [tt for tt, c, q in heap if not c and q != p]
                    if pending:
                        heapq.heappush(heap, (min(pending), True, p))
                    continue
                alive.discard(p)
                errors.append(crash(t, p))
                heapq.heappush(heap, (snap(t + max(rng.expovariate(1 / down_mean), gap)), False, p))
            else:
                alive.add(p)
                errors.append(restart(t, p))
                heapq.heappush(heap, (snap(t + max(rng.expovariate(crash_rate), gap)), True, p))
    return AdversarialPattern(injections + errors)


def supply_for(m: int, sizes: Sequence[float], horizon: float, speedup: float) -> list[int]:
    """Per-class front-load large enough that no class drops below m^2 pending."""
    return [m * m + m * math.ceil(horizon * speedup / sz) + m for sz in sizes]


def backlog_injections(
    m: int,
    sizes: Sequence[float],
    horizon: float,
    speedup: float,
    period: float,
    reserve: int | Sequence[int] = 0,
) -> list[Event]:
    """Periodic top-ups that keep every class at >= m^2 + reserve pending.

    A machine finishes at most floor(t*s/l) tasks of size l by time t, so a
    batch of b = m*(ceil(period*s/l) + 1) per period, plus one batch up
    front, always stays ahead of consumption.
    """
    if period <= 0:
        raise ConfigError("backlog period must be positive")
    res = [reserve] * len(sizes) if isinstance(reserve, int) else list(reserve)
    out: list[Event] = []
    for sz, r in zip(sizes, res):
        b = m * (math.ceil(period * speedup / sz - TIME_TOL) + 1)
        out += [inject(0.0, sz) for _ in range(m * m + r + b)]
        k = 1
        while k * period <= horizon + TIME_TOL:
            out += [inject(k * period, sz) for _ in range(b)]
            k += 1
    return out


@dataclass(frozen=True)
class BudgetedInstance:
    seed: int
    m: int
    sizes: tuple[float, ...]
    horizon: float
    pattern: AdversarialPattern


def budgeted_instance(
    seed: int,
    *,
    front_load: int = 5,
    arrivals: float = 0.0,
    max_tasks: int = 10,
    max_errors: int = 8,
    time_grid: float | None = None,
) -> BudgetedInstance:
    """Small instance sized for the exhaustive offline search.

    Alternates m in {1, 2} and size ratio in {2, 3}; the horizon is three
    long-task lengths. With the default front load each class starts with
    at least m^2 pending tasks.
    """
    m = 1 + seed % 2
    rho = (2.0, 3.0)[(seed // 2) % 2]
    sizes = (1.0, rho)
    horizon = 3 * rho
    pattern = build_random_pattern(
        seed, m, sizes, horizon, crash_rate=0.4, injection_rate=arrivals, mean_downtime=1.0,
        front_load=front_load, max_tasks=max_tasks, max_errors=max_errors, time_grid=time_grid)
    return BudgetedInstance(seed, m, sizes, horizon, pattern)
