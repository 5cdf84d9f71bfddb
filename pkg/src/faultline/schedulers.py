"""Scheduling policies behind one contract: snapshot + machine + state -> task.

Position indices are 0-based. Per-machine state is created by
``initial_state`` on every restart, so a crash wipes it.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .core import TIME_TOL, ConfigError, InvariantViolation, Snapshot, SystemConfig, Task


@dataclass(frozen=True, slots=True)
class Provenance:
    kind: str  # "positioned" | "modular" | "group" | "head"
    index: int
    level: int = -1

    def __str__(self) -> str:
        if self.kind == "group":
            return f"group:{self.level}:{self.index}"
        return f"{self.kind}:{self.index}"


@dataclass(frozen=True, slots=True)
class TaskChoice:
    task: Task
    provenance: Provenance


def _at(queue: Sequence[Task], index: int, kind: str, level: int = -1) -> TaskChoice:
    return TaskChoice(queue[index], Provenance(kind, index, level))


def grouplis_pick(queue: Sequence[Task], p: int, m: int) -> TaskChoice:
    """Position p*m if the queue holds at least m^2 tasks, else (p*m) mod |queue|."""
    if len(queue) >= m * m:
        return _at(queue, p * m, "positioned")
    return _at(queue, (p * m) % len(queue), "modular")


class Policy:
    """Base class; subclasses implement ``choose``."""

    name = "policy"

    def __init__(self, config: SystemConfig):
        self.config = config
        self.checks: Counter[str] = Counter()

    def initial_state(self, p: int) -> object:
        return None

    def choose(self, snap: Snapshot, p: int, state: object) -> TaskChoice | None:
        raise NotImplementedError

    def on_complete(self, state: object, p: int, task: Task, accepted: bool) -> None:
        pass


# ---------------------------------------------------------------------------
# m-LIS


class MLIS(Policy):
    name = "m-lis"

    def choose(self, snap: Snapshot, p: int, state: object) -> TaskChoice | None:
        q = snap.by_arrival
        if not q:
            return None
        return grouplis_pick(q, p, self.config.m)


# ---------------------------------------------------------------------------
# Generic baselines


class Generic(Policy):
    """FIFO / shortest-size / largest-size, optionally with the GroupLIS position rule."""

    KINDS = ("fifo", "ss", "ls")

    def __init__(self, config: SystemConfig, kind: str, grouplis: bool = False):
        super().__init__(config)
        if kind not in self.KINDS:
            raise ConfigError(f"unknown generic policy {kind!r}")
        self.kind = kind
        self.grouplis = grouplis
        self.name = kind + ("+grouplis" if grouplis else "")

    def choose(self, snap: Snapshot, p: int, state: object) -> TaskChoice | None:
        if not snap:
            return None
        if not self.grouplis:
            if self.kind == "fifo":
                return _at(snap.by_arrival, 0, "head")
            if self.kind == "ss":
                return _at(snap.by_size, 0, "head")
            i = max(j for j, q in enumerate(snap.queues) if q)
            return _at(snap.queues[i], 0, "head")
        if self.kind == "fifo":
            cls = self.config.size_index(snap.by_arrival[0].size)
        elif self.kind == "ss":
            cls = min(j for j, q in enumerate(snap.queues) if q)
        else:
            cls = max(j for j, q in enumerate(snap.queues) if q)
        return grouplis_pick(snap.queues[cls], p, self.config.m)


# ---------------------------------------------------------------------------
# rho-m-Preamble


@dataclass
class PreambleState:
    preamble: bool | None = None  # decided at the first get after restart
    c: int = 0
    in_preamble_task: bool = False


class RhoMPreamble(Policy):
    name = "rho-m-preamble"

    def __init__(self, config: SystemConfig):
        if config.k != 2:
            raise ConfigError(f"{self.name} needs exactly 2 sizes, got {config.k}")
        super().__init__(config)
        self.rho_bar = config.rho_bar

    def initial_state(self, p: int) -> PreambleState:
        return PreambleState()

    def choose(self, snap: Snapshot, p: int, state: PreambleState) -> TaskChoice | None:
        m = self.config.m
        lmin, lmax = snap.queues
        if state.preamble is None:
            state.preamble = len(lmin) >= self.rho_bar * m * m
        state.in_preamble_task = False
        if not snap:
            return None
        if state.preamble and state.c < self.rho_bar and lmin:
            state.in_preamble_task = True
            if p * m < len(lmin):
                return _at(lmin, p * m, "positioned")
            return _at(lmin, (p * m) % len(lmin), "modular")
        if len(lmax) >= m * m:
            return _at(lmax, p * m, "positioned")
        if len(lmin) >= m * m:
            return _at(lmin, p * m, "positioned")
        if lmax:
            return _at(lmax, (p * m) % len(lmax), "modular")
        return _at(lmin, (p * m) % len(lmin), "modular")

    def on_complete(self, state: PreambleState, p: int, task: Task, accepted: bool) -> None:
        if state.in_preamble_task:
            state.c += 1
            state.in_preamble_task = False
            if state.c > self.rho_bar:
                raise InvariantViolation(f"preamble counter {state.c} exceeds {self.rho_bar}")


# ---------------------------------------------------------------------------
# k-Amortized


def _adequate_threshold(config: SystemConfig, i: int) -> float:
    m = config.m
    return m * m + m * config.step_ratio(i + 1)


def _smaller_adequate_sum(counts: Sequence[int], config: SystemConfig, j: int) -> float:
    """sum_{i<j} l_i * floor(|L_i| / (m^2 + m*rho_{i+1})) over 0-based i < j."""
    return math.fsum(
        config.sizes[i] * math.floor(counts[i] / _adequate_threshold(config, i) + TIME_TOL) for i in range(j)
    )


def adequate_load_sum(snap: Snapshot | Sequence[int], config: SystemConfig) -> float:
    """l_k*floor(|L_k|/m^2) + sum_{i<k} l_i*floor(|L_i|/(m^2 + m*rho_{i+1}))."""
    counts = snap.counts if isinstance(snap, Snapshot) else tuple(snap)
    k, m = config.k, config.m
    top = config.sizes[k - 1] * (counts[k - 1] // (m * m))
    return top + _smaller_adequate_sum(counts, config, k - 1)


@dataclass
class _Frame:
    level: int  # 0-based size index
    acc: float = 0.0


@dataclass
class AmortizedState:
    stack: list[_Frame] = field(default_factory=list)
    leaf: int | None = None


def unified_fallback(snap: Snapshot, p: int, m: int) -> TaskChoice:
    q = snap.by_size
    return _at(q, (p * m) % len(q), "modular")


class KAmortized(Policy):
    name = "k-amortized"

    def __init__(self, config: SystemConfig):
        if config.k < 2:
            raise ConfigError(f"{self.name} needs at least 2 sizes")
        if not config.pairwise_divisible:
            raise ConfigError(f"{self.name} needs pairwise-divisible sizes, got {config.sizes}")
        super().__init__(config)
        m = config.m
        self._smaller_load_cap = [
            math.fsum((config.sizes[j] + config.sizes[i]) * _adequate_threshold(config, i) for i in range(j))
            for j in range(config.k)
        ]
        self._m2 = m * m

    def initial_state(self, p: int) -> AmortizedState:
        return AmortizedState()

    def _recurse(self, counts: Sequence[int], j: int) -> bool:
        return j > 0 and _smaller_adequate_sum(counts, self.config, j) >= self.config.sizes[j] - TIME_TOL

    def choose(self, snap: Snapshot, p: int, state: AmortizedState) -> TaskChoice | None:
        if not snap:
            return None
        cfg = self.config
        counts = snap.counts
        stack = state.stack
        while True:
            if not stack:
                if adequate_load_sum(counts, cfg) < cfg.l_max - TIME_TOL:
                    return unified_fallback(snap, p, cfg.m)
                j = cfg.k - 1
                if self._recurse(counts, j):
                    stack.append(_Frame(j))
                    continue
                return self._leaf(snap, p, state, j)
            top = stack[-1]
            if top.acc >= cfg.sizes[top.level] - TIME_TOL:
                stack.pop()
                if stack:
                    stack[-1].acc += cfg.sizes[top.level]
                continue
            j = top.level - 1
            if self._recurse(counts, j):
                stack.append(_Frame(j))
                continue
            return self._leaf(snap, p, state, j)

    def _leaf(self, snap: Snapshot, p: int, state: AmortizedState, j: int) -> TaskChoice:
        cfg = self.config
        queue = snap.queues[j]
        self.checks["class_floor"] += 1
        if len(queue) < self._m2:
            raise InvariantViolation(
                f"{self.name}: grouped choice of size {cfg.sizes[j]} with only {len(queue)} pending (< m^2) "
                f"at t={snap.t}, counts={snap.counts}")
        smaller = math.fsum(cfg.sizes[i] * len(snap.queues[i]) for i in range(j))
        self.checks["smaller_load"] += 1
        if smaller > self._smaller_load_cap[j] + TIME_TOL:
            raise InvariantViolation(
                f"{self.name}: smaller pending load {smaller} exceeds {self._smaller_load_cap[j]} at t={snap.t}")
        state.leaf = j
        return _at(queue, p * cfg.m, "group", j)

    def on_complete(self, state: AmortizedState, p: int, task: Task, accepted: bool) -> None:
        if state.leaf is not None:
            if state.stack:
                state.stack[-1].acc += self.config.sizes[state.leaf]
            state.leaf = None


# ---------------------------------------------------------------------------
# Mk-Amortized


@dataclass
class MAmortizedState:
    stack: list[_Frame] = field(default_factory=list)
    calls_left: int = 0
    candidates: set[int] = field(default_factory=set)
    appropriate: int = -1
    leaf: int | None = None
    refresh: bool = False


class MKAmortized(Policy):
    name = "mk-amortized"

    def __init__(self, config: SystemConfig, c: int = 4, adaptive: bool = False):
        if config.k < 2:
            raise ConfigError(f"{self.name} needs at least 2 sizes")
        if c < 1:
            raise ConfigError(f"stage constant must be >= 1, got {c}")
        super().__init__(config)
        self.c0 = c
        self.adaptive = adaptive
        # per-machine counters that outlive restarts (adaptive mode only)
        self._c: dict[int, int] = {}
        self._since_doubling: dict[int, float] = {}

    def stage_constant(self, p: int) -> int:
        return self._c.get(p, self.c0)

    def candidates(self, counts: Sequence[int], p: int) -> set[int]:
        cfg = self.config
        need = self.stage_constant(p) * cfg.k * cfg.l_max
        m2 = cfg.m * cfg.m
        return {i for i in range(cfg.k) if cfg.sizes[i] * (counts[i] // m2) >= need - TIME_TOL}

    def initial_state(self, p: int) -> MAmortizedState:
        return MAmortizedState()

    def choose(self, snap: Snapshot, p: int, state: MAmortizedState) -> TaskChoice | None:
        if not snap:
            return None
        cfg = self.config
        counts = snap.counts
        if state.refresh:
            state.candidates |= self.candidates(counts, p)
            state.appropriate = min(state.candidates)
            state.refresh = False
        stack = state.stack
        while True:
            if not stack and state.calls_left == 0:
                cand = self.candidates(counts, p)
                if not cand:
                    return unified_fallback(snap, p, cfg.m)
                state.candidates = cand
                state.appropriate = min(cand)
                state.calls_left = self.stage_constant(p) * cfg.k
            if not stack:
                state.calls_left -= 1
                stack.append(_Frame(cfg.k - 1))
            top = stack[-1]
            lj = cfg.sizes[top.level]
            if top.acc > lj - cfg.sizes[state.appropriate] + TIME_TOL:
                stack.pop()
                if stack:
                    stack[-1].acc += top.acc
                continue
            if top.level > state.appropriate:
                stack.append(_Frame(top.level - 1))
                continue
            queue = snap.queues[top.level]
            self.checks["appropriate"] += 1
            if len(queue) < cfg.m * cfg.m:
                raise InvariantViolation(
                    f"{self.name}: appropriate size {cfg.sizes[top.level]} has only {len(queue)} pending "
                    f"(< m^2) at t={snap.t}")
            state.leaf = top.level
            return _at(queue, p * cfg.m, "group", top.level)

    def on_complete(self, state: MAmortizedState, p: int, task: Task, accepted: bool) -> None:
        if state.leaf is not None:
            state.stack[-1].acc = self.config.sizes[state.leaf]
            state.leaf = None
            state.refresh = True
        if self.adaptive:
            c = self.stage_constant(p)
            done = self._since_doubling.get(p, 0.0) + task.size
            if done > c * c * self.config.k * self.config.l_max:
                self._c[p] = 2 * c
                done = 0.0
            self._since_doubling[p] = done


# ---------------------------------------------------------------------------

POLICY_IDS = ("rho-m-preamble", "k-amortized", "mk-amortized", "m-lis", "fifo", "ss", "ls")


def make_policy(
    name: str,
    config: SystemConfig,
    *,
    grouplis: bool = False,
    c: int = 4,
    adaptive_c: bool = False,
) -> Policy:
    if name == "rho-m-preamble":
        return RhoMPreamble(config)
    if name == "k-amortized":
        return KAmortized(config)
    if name == "mk-amortized":
        return MKAmortized(config, c=c, adaptive=adaptive_c)
    if name == "m-lis":
        return MLIS(config)
    if name in Generic.KINDS:
        return Generic(config, name, grouplis)
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_IDS)}")
