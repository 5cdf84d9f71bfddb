import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from faultline import adversary, metrics
from faultline.core import ConfigError, InvariantViolation, Repository, SystemConfig, Task, inject
from faultline.core import AdversarialPattern
from faultline.engine import run
from faultline.schedulers import (
    MLIS,
    Generic,
    KAmortized,
    MKAmortized,
    RhoMPreamble,
    adequate_load_sum,
    grouplis_pick,
    make_policy,
)

from reference_policies import Interpreted, k_amortized, mk_amortized, preamble


def snapshot(cfg, sizes_and_arrivals, t=0.0):
    repo = Repository(cfg)
    for i, (size, arrival) in enumerate(sizes_and_arrivals):
        repo.inject(Task(i, arrival, size))
    return repo, repo.get(t)


def fill(cfg, counts):
    """Repository with counts[i] tasks of size i, arrivals 0,1,2,... in id order."""
    items = [(cfg.sizes[i], 0.0) for i, n in enumerate(counts) for _ in range(n)]
    items = [(size, float(n)) for n, (size, _) in enumerate(items)]
    return snapshot(cfg, items)


def complete(repo, policy, state, p, choice):
    repo.inform(p, choice.task.id)
    policy.on_complete(state, p, choice.task, True)


class TestGroupLISPick:
    def test_positioned_at_threshold(self):
        q = list(range(4))
        assert grouplis_pick(q, 1, 2).task == 2

    def test_modular_below_threshold(self):
        assert grouplis_pick(list(range(3)), 1, 2).task == 2
        assert grouplis_pick(list(range(1)), 1, 2).task == 0


class TestPreamble:
    cfg = SystemConfig(2, 1.0, (1, 2))

    def test_preamble_takes_position_pm_twice(self):
        repo, snap = fill(self.cfg, (10, 5))
        pol = RhoMPreamble(self.cfg)
        state = pol.initial_state(1)
        first = pol.choose(snap, 1, state)
        assert first.task.id == 2
        complete(repo, pol, state, 1, first)
        second = pol.choose(repo.get(1), 1, state)
        assert second.task.id == 3 and second.task.size == 1
        complete(repo, pol, state, 1, second)
        third = pol.choose(repo.get(2), 1, state)
        assert third.task.size == 2 and third.task.id == 12

    def test_large_tasks_first_after_preamble(self):
        _, snap = fill(self.cfg, (3, 5))  # 3 < rho_bar*m^2 = 8, so no preamble
        pol = RhoMPreamble(self.cfg)
        assert pol.choose(snap, 0, pol.initial_state(0)).task.id == 3

    def test_modular_fallback_on_large_queue(self):
        _, snap = fill(self.cfg, (0, 1))
        pol = RhoMPreamble(self.cfg)
        assert pol.choose(snap, 1, pol.initial_state(1)).task.id == 0

    def test_small_queue_positioned_when_large_is_short(self):
        _, snap = fill(self.cfg, (5, 1))
        pol = RhoMPreamble(self.cfg)
        state = pol.initial_state(1)
        state.preamble = False
        assert pol.choose(snap, 1, state).task.id == 2

    def test_requires_two_sizes(self):
        with pytest.raises(ConfigError):
            RhoMPreamble(SystemConfig(2, 1, (1, 2, 4)))

    def test_crash_resets_counter(self):
        pol = RhoMPreamble(self.cfg)
        assert pol.initial_state(0).c == 0 and pol.initial_state(0).preamble is None


class TestAdequateLoad:
    def test_two_sizes(self):
        assert adequate_load_sum((8, 4), SystemConfig(2, 1, (1, 2))) == 3

    def test_empty(self):
        assert adequate_load_sum((0, 0, 0), SystemConfig(2, 1, (1, 2, 4))) == 0

    def test_three_sizes_reaches_top(self):
        # thresholds: m^2 + m*rho_{i+1} = 8 for both lower classes
        assert adequate_load_sum((16, 8, 0), SystemConfig(2, 1, (1, 2, 4))) == 4


class TestKAmortized:
    def test_two_small_tasks_form_a_group(self):
        cfg = SystemConfig(1, 1, (1, 2))
        repo, snap = fill(cfg, (6, 0))
        pol = KAmortized(cfg)
        state = pol.initial_state(0)
        a = pol.choose(snap, 0, state)
        assert a.task.id == 0 and str(a.provenance) == "group:0:0"
        assert [f.level for f in state.stack] == [1]
        complete(repo, pol, state, 0, a)
        b = pol.choose(repo.get(1), 0, state)
        assert b.task.id == 1
        complete(repo, pol, state, 0, b)
        assert state.stack[-1].acc == 2
        c = pol.choose(repo.get(2), 0, state)
        # group popped; 4 small tasks give an adequate sum of 1 < 2, so the fallback takes over
        assert c.task.id == 2 and c.provenance.kind == "modular" and state.stack == []

    def test_fallback_below_adequate(self):
        cfg = SystemConfig(2, 1, (1, 2))
        _, snap = fill(cfg, (2, 1))
        pol = KAmortized(cfg)
        ch = pol.choose(snap, 0, pol.initial_state(0))
        assert ch.task.id == 0 and ch.provenance.kind == "modular"

    def test_large_class_when_small_exhausted(self):
        cfg = SystemConfig(2, 1, (1, 2))
        _, snap = fill(cfg, (0, 4))
        pol = KAmortized(cfg)
        ch = pol.choose(snap, 1, pol.initial_state(1))
        assert ch.task.size == 2 and ch.task.id == 2

    def test_rejects_non_divisible_sizes(self):
        with pytest.raises(ConfigError):
            KAmortized(SystemConfig(2, 1, (1, 1.5)))

    def test_short_grouped_class_is_fatal(self):
        cfg = SystemConfig(2, 1, (1, 2))
        _, snap = fill(cfg, (0, 4))
        pol = KAmortized(cfg)
        state = pol.initial_state(0)
        with pytest.raises(InvariantViolation):
            pol._leaf(fill(cfg, (0, 3))[1], 0, state, 1)


class TestMKAmortized:
    def test_single_candidate(self):
        cfg = SystemConfig(1, 1, (1, 1.5))
        _, snap = fill(cfg, (20, 0))
        pol = MKAmortized(cfg, c=4)
        state = pol.initial_state(0)
        ch = pol.choose(snap, 0, state)
        assert state.candidates == {0} and state.appropriate == 0
        assert ch.task.id == 0 and ch.task.size == 1

    def test_fallback_without_candidates(self):
        cfg = SystemConfig(2, 1, (1, 1.5))
        _, snap = fill(cfg, (3, 2))
        pol = MKAmortized(cfg)
        ch = pol.choose(snap, 1, pol.initial_state(1))
        assert ch.task.id == 2 and ch.provenance.kind == "modular"

    def test_smallest_candidate_wins(self):
        cfg = SystemConfig(1, 1, (1, 2))
        _, snap = fill(cfg, (20, 20))
        pol = MKAmortized(cfg, c=2)
        state = pol.initial_state(0)
        pol.choose(snap, 0, state)
        assert state.candidates == {0, 1} and state.appropriate == 0

    def test_stage_constant_doubles_in_adaptive_mode(self):
        cfg = SystemConfig(1, 1, (1, 2))
        pol = MKAmortized(cfg, c=1, adaptive=True)
        state = pol.initial_state(0)
        # threshold c^2*k*l_max = 4: the fifth unit of load triggers doubling
        for _ in range(5):
            pol.on_complete(state, 0, Task(0, 0, 1), True)
        assert pol.stage_constant(0) == 2 and pol.stage_constant(1) == 1


class TestMLIS:
    def test_second_machine_skips_ahead(self):
        d = math.sqrt(math.sqrt(math.sqrt(2)))  # any ladder works; sizes only label the tasks
        cfg = SystemConfig(2, 2, (1, d**2, d**4))
        items = [(1, 0), (d**2, 0), (d**2, 0), (d**4, 0)] + [(1, 1)] * 4
        _, snap = snapshot(cfg, items)
        ch = MLIS(cfg).choose(snap, 1, None)
        assert ch.task.id == 2 and ch.task.size == d**2

    def test_short_queue(self):
        cfg = SystemConfig(2, 1, (1,))
        _, snap = fill(cfg, (3,))
        assert MLIS(cfg).choose(snap, 1, None).task.id == 2

    def test_single_machine_is_lis(self):
        cfg = SystemConfig(1, 1, (1, 2))
        _, snap = snapshot(cfg, [(2, 3.0), (1, 1.0), (2, 0.5)])
        assert MLIS(cfg).choose(snap, 0, None).task.id == 2


class TestGeneric:
    cfg = SystemConfig(2, 1, (1, 2))

    def test_fifo(self):
        _, snap = snapshot(self.cfg, [(1, 2.0), (2, 1.0)])
        assert Generic(self.cfg, "fifo").choose(snap, 0, None).task.id == 1

    def test_shortest(self):
        _, snap = snapshot(self.cfg, [(2, 0.0), (1, 1.0)])
        assert Generic(self.cfg, "ss").choose(snap, 1, None).task.size == 1

    def test_largest_with_grouplis(self):
        _, snap = fill(self.cfg, (3, 4))
        ch = Generic(self.cfg, "ls", grouplis=True).choose(snap, 1, None)
        assert ch.task.id == 5 and ch.provenance.kind == "positioned"

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            make_policy("lifo", self.cfg)


# ---------------------------------------------------------------------------
# Agreement with the reference interpreters over whole simulations

def _compare(cfg, pattern, horizon, real, ref):
    a = run(cfg, pattern, real, horizon)
    b = run(cfg, pattern, ref, horizon)
    strip = lambda tr: [(r.t, r.kind, r.machine, r.task) for r in tr.records]
    assert strip(a) == strip(b)
    return a


cases = st.tuples(st.integers(0, 100_000), st.integers(1, 3), st.floats(0.05, 0.6), st.floats(0.3, 4.0),
                  st.integers(0, 30), st.sampled_from([None, 1.0, 3.0]))


@given(cases, st.sampled_from([(1.0, 2.0), (1.0, 2.5), (1.0, 3.0)]))
def test_preamble_matches_reference(case, sizes):
    seed, m, cr, inj, front, period = case
    cfg = SystemConfig(m, 1.0, sizes)
    pat = adversary.build_random_pattern(seed, m, sizes, 25, cr, inj, front_load=front, backlog_period=period)
    _compare(cfg, pat, 25, RhoMPreamble(cfg), Interpreted(cfg, preamble, "ref"))


@given(cases, st.sampled_from([(1.0, 2.0), (1.0, 3.0), (1.0, 2.0, 4.0), (1.0, 2.0, 6.0)]))
def test_k_amortized_matches_reference(case, sizes):
    seed, m, cr, inj, front, period = case
    cfg = SystemConfig(m, 1.0, sizes)
    pat = adversary.build_random_pattern(seed, m, sizes, 25, cr, inj, front_load=front, backlog_period=period)
    _compare(cfg, pat, 25, KAmortized(cfg), Interpreted(cfg, k_amortized, "ref"))


@given(cases, st.sampled_from([(1.0, 1.5), (1.0, 2.0), (1.0, 1.5, 3.0)]), st.integers(1, 4))
def test_mk_amortized_matches_reference(case, sizes, c):
    seed, m, cr, inj, front, period = case
    cfg = SystemConfig(m, 1.0, sizes)
    pat = adversary.build_random_pattern(seed, m, sizes, 25, cr, inj, front_load=front * 4,
                                         backlog_period=period)
    _compare(cfg, pat, 25, MKAmortized(cfg, c=c), Interpreted(cfg, lambda g, p: mk_amortized(g, p, c), "ref"))


def test_reference_agreement_on_a_crash_free_group():
    cfg = SystemConfig(1, 1, (1, 2))
    pat = AdversarialPattern([inject(0, 1) for _ in range(6)])
    tr = _compare(cfg, pat, 10, KAmortized(cfg), Interpreted(cfg, k_amortized, "ref"))
    assert [r.task for r in tr.completions] == list(range(6))


# ---------------------------------------------------------------------------
# Non-redundancy

def test_mlis_duplicates_with_full_queues():
    """Mixed sizes let two m-LIS machines land on the same task despite >= m^2 pending."""
    sizes = (1.0, 3.0)
    pat = adversary.build_random_pattern(10, 2, sizes, 12.0, crash_rate=0.0, injection_rate=0.0,
                                         front_load=0, backlog_period=1.0, backlog_reserve=0)
    cfg = SystemConfig(2, 1.0, sizes)
    tr = run(cfg, pat, MLIS(cfg), 12.0)
    rep = metrics.redundancy_report(tr)
    assert rep.lemma_violations > 0
    assert min(min(c) for _, c in tr.counts) >= 4


@pytest.mark.parametrize("name", ["rho-m-preamble", "k-amortized", "mk-amortized", "fifo", "ss", "ls"])
@pytest.mark.parametrize("seed", range(6))
def test_grouped_policies_never_duplicate_with_backlog(name, seed):
    sizes = (1.0, 2.0)
    m = 2 + seed % 2
    pat = adversary.build_random_pattern(seed, m, sizes, 30.0, crash_rate=0.3, injection_rate=0.5,
                                         backlog_period=2.0, backlog_reserve=2 * m)
    cfg = SystemConfig(m, 1.0, sizes)
    tr = run(cfg, pat, make_policy(name, cfg, grouplis=True), 30.0)
    assert metrics.redundancy_report(tr).lemma_violations == 0
    assert not tr.duplicates


def test_grouped_completions_keep_one_size_per_run():
    sizes = (1.0, 1.5, 3.0)
    cfg = SystemConfig(2, 1.0, sizes)
    for seed in range(5):
        pat = adversary.build_random_pattern(seed, 2, sizes, 60.0, 0.2, 1.0, backlog_period=2.0,
                                             backlog_reserve=40)
        tr = run(cfg, pat, MKAmortized(cfg, c=1), 60.0)
        runs, problems = metrics.grouped_size_runs(tr)
        assert runs > 0 and problems == []
