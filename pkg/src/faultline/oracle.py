"""Offline optimum at speedup 1 for tiny instances, and scripted offline replays."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import TIME_TOL, AdversarialPattern, ConfigError, Task

MAX_TASKS = 10
MAX_MACHINES = 2
MAX_ERRORS = 8


class BudgetExceeded(ConfigError):
    """Instance too large for the exhaustive search."""


class ScriptError(ConfigError):
    """Scripted schedule inconsistent with the pattern."""


@dataclass
class OfflineSchedule:
    assignments: dict[int, list[tuple[float, int]]]  # machine -> [(start, task id)]
    load: float
    nodes: int
    tasks: dict[int, Task] = field(default_factory=dict)

    def completions(self) -> list[tuple[float, int, Task]]:
        """(finish time, machine, task) sorted by finish time."""
        out = [(s + self.tasks[i].size, p, self.tasks[i]) for p, cyc in self.assignments.items() for s, i in cyc]
        return sorted(out, key=lambda x: (x[0], x[1], x[2].id))

    def trajectory(self) -> list[tuple[float, float]]:
        c = 0.0
        out = []
        for t, _, task in self.completions():
            c += task.size
            out.append((t, c))
        return out

    def count_trajectory(self) -> list[tuple[float, int]]:
        return [(t, i + 1) for i, (t, _, _) in enumerate(self.completions())]

    def to_json(self) -> dict:
        return {
            "load": self.load,
            "nodes": self.nodes,
            "schedule": {
                str(p): [{"start": s, "task": i, "size": self.tasks[i].size} for s, i in cyc]
                for p, cyc in sorted(self.assignments.items())
            },
        }


def _alive_windows(pattern: AdversarialPattern, m: int, horizon: float) -> list[list[tuple[float, float]]]:
    iv = pattern.alive_intervals(m, horizon)
    return [iv.get(p, []) for p in range(m)]


def optimal_offline(
    pattern: AdversarialPattern,
    m: int,
    horizon: float,
    *,
    grid: float | None = None,
    enforce_budget: bool = True,
) -> OfflineSchedule:
    """Maximum completed load by ``horizon`` over all speedup-1 schedules.

    Depth-first branch-and-bound. The machine that frees up earliest decides
    next: start some available task (one branch per distinct size, since equal
    sized available tasks are interchangeable) or idle until its next
    decision instant (an injection or its own restart). ``grid`` adds every
    pattern event time and every multiple of ``grid`` as extra decision
    instants, which only serves to cross-check the restricted search.
    """
    tasks = pattern.tasks()
    n_err = len(pattern.errors)
    if enforce_budget and (len(tasks) > MAX_TASKS or m > MAX_MACHINES or n_err > MAX_ERRORS):
        raise BudgetExceeded(
            f"oracle budget is <= {MAX_TASKS} tasks, <= {MAX_MACHINES} machines, <= {MAX_ERRORS} error events; "
            f"got {len(tasks)}, {m}, {n_err}")
    windows = _alive_windows(pattern, m, horizon)
    by_id = {t.id: t for t in tasks}

    extra: list[float] = sorted({t.arrival for t in tasks})
    if grid is not None:
        pts = {e.t for e in pattern.events}
        pts.update(i * grid for i in range(int(horizon / grid) + 2) if i * grid <= horizon + TIME_TOL)
        extra = sorted(set(extra) | pts)

    def window_at(p: int, t: float) -> tuple[float, float] | None:
        """The alive window of p containing t, or the next one after t."""
        for a, b in windows[p]:
            if b > t + TIME_TOL:
                return (max(a, t), b)
        return None

    def next_point(p: int, t: float) -> float | None:
        """Next decision instant for an idle p strictly after t."""
        i = bisect.bisect_right(extra, t + TIME_TOL)
        cands = [extra[i]] if i < len(extra) else []
        for a, _ in windows[p]:
            if a > t + TIME_TOL:
                cands.append(a)
                break
        return min(cands) if cands else None

    nodes = 0
    best_load = -1.0
    best_plan: list[tuple[int, float, int]] = []
    seen: dict[tuple, float] = {}
    sizes_sorted = sorted({t.size for t in tasks}, reverse=True)

    def capacity(free: Sequence[float]) -> float:
        cap = 0.0
        for p in range(m):
            for a, b in windows[p]:
                lo = max(a, free[p])
                if b > lo:
                    cap += b - lo
        return cap

    def dfs(free: tuple[float, ...], used: frozenset[int], load: float, plan: list[tuple[int, float, int]]) -> None:
        nonlocal nodes, best_load, best_plan
        nodes += 1
        if load > best_load + TIME_TOL:
            best_load = load
            best_plan = list(plan)
        key = (tuple(round(f, 9) for f in free), used)
        if seen.get(key, -1.0) >= load - TIME_TOL:
            return
        seen[key] = load
        remaining = math.fsum(t.size for t in tasks if t.id not in used)
        if load + min(remaining, capacity(free)) <= best_load + TIME_TOL:
            return
        p = min(range(m), key=lambda q: (free[q], q))
        if math.isinf(free[p]):
            return
        w = window_at(p, free[p])
        if w is None or w[0] > horizon:
            dfs(free[:p] + (math.inf,) + free[p + 1:], used, load, plan)
            return
        t, end = w
        if t > free[p] + TIME_TOL:
            dfs(free[:p] + (t,) + free[p + 1:], used, load, plan)
            return
        limit = min(end, horizon)
        avail: dict[float, Task] = {}
        for task in tasks:
            if task.id in used or task.arrival > t + TIME_TOL or t + task.size > limit + TIME_TOL:
                continue
            if task.size not in avail or task.id < avail[task.size].id:
                avail[task.size] = task
        for size in sizes_sorted:
            task = avail.get(size)
            if task is None:
                continue
            plan.append((p, t, task.id))
            dfs(free[:p] + (t + size,) + free[p + 1:], used | {task.id}, load + size, plan)
            plan.pop()
        nxt = next_point(p, t)
        if nxt is None or nxt > horizon + TIME_TOL:
            nxt = math.inf
        dfs(free[:p] + (nxt,) + free[p + 1:], used, load, plan)

    dfs(tuple(0.0 for _ in range(m)), frozenset(), 0.0, [])
    assignments: dict[int, list[tuple[float, int]]] = {p: [] for p in range(m)}
    for p, t, i in best_plan:
        assignments[p].append((t, i))
    return OfflineSchedule(assignments, max(best_load, 0.0), nodes, by_id)


# ---------------------------------------------------------------------------
# Scripted replays


@dataclass
class ScriptedRun:
    completions: list[tuple[float, int, Task]]  # (finish, machine, task)
    horizon: float

    def trajectory(self) -> list[tuple[float, float]]:
        c = 0.0
        out = []
        for t, _, task in self.completions:
            c += task.size
            out.append((t, c))
        return out

    @property
    def load(self) -> float:
        return math.fsum(task.size for _, _, task in self.completions)

    def load_at(self, t: float) -> float:
        return math.fsum(task.size for f, _, task in self.completions if f <= t + TIME_TOL)


def scripted_x(
    script: Sequence[tuple[int, float, float]],
    pattern: AdversarialPattern,
    m: int,
    horizon: float,
) -> ScriptedRun:
    """Replay a fixed speedup-1 schedule given as (machine, start, size) entries.

    Each entry takes the earliest-arrived unused task of that size.
    A cycle counts only if it finishes within its alive window and by the
    horizon; one cut short by a crash contributes nothing.
    """
    windows = _alive_windows(pattern, m, horizon)
    by_size: dict[float, list[Task]] = {}
    for t in pattern.tasks():
        by_size.setdefault(t.size, []).append(t)
    head = {sz: 0 for sz in by_size}  # tasks are taken in arrival order, so used ones form a prefix
    last_end = [-math.inf] * m
    done: list[tuple[float, int, Task]] = []
    for n, (p, start, size) in enumerate(script):
        if not 0 <= p < m:
            raise ScriptError(f"entry {n}: machine {p} outside 0..{m - 1}")
        if start < last_end[p] - TIME_TOL:
            raise ScriptError(f"entry {n}: overlaps the previous cycle on machine {p}")
        win = next(((a, b) for a, b in windows[p] if a - TIME_TOL <= start < b - TIME_TOL), None)
        if win is None:
            raise ScriptError(f"entry {n}: machine {p} is crashed at t={start}")
        key = next((sz for sz in by_size if math.isclose(sz, size, rel_tol=1e-9, abs_tol=1e-12)), None)
        queue = by_size.get(key, []) if key is not None else []
        i = head.get(key, 0)
        if i >= len(queue) or queue[i].arrival > start + TIME_TOL:
            raise ScriptError(f"entry {n}: no available task of size {size} at t={start}")
        task = queue[i]
        head[key] = i + 1
        finish = start + task.size
        last_end[p] = finish
        if finish <= win[1] + TIME_TOL and finish <= horizon + TIME_TOL:
            done.append((finish, p, task))
    done.sort(key=lambda x: (x[0], x[1], x[2].id))
    return ScriptedRun(done, horizon)
