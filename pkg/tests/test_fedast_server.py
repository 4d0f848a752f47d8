"""Buffered async server: aggregation, dispatch walk, drops, reallocation."""

import numpy as np
import pytest

from fstsim.delay_model import ClientProfile, DelaySpec, SpeedClass
from fstsim.event_engine import Engine, SimulationError, StopConditions
from fstsim.fedast_server import FedAstServer, lr_bound_warnings, lr_bounds
from fstsim.local_trainer import Update
from fstsim.objectives import ClientShard, Dataset, QuadraticObjective, TaskSpec


class FakeEngine:
    """Just enough engine surface for driving handle_update by hand."""

    def __init__(self):
        self.now = 0.0
        self.sent = []

    def send_requests(self, task_id, count):
        self.sent.append((task_id, count))


def quad_task(tid=0, dim=1, tau=1, eta_c=0.1, eta_s=1.0):
    return TaskSpec(task_id=tid, objective=QuadraticObjective(dim=dim), tau=tau,
                    eta_c=eta_c, eta_s=eta_s, target_metric=0.9, batch_size=1)


def upd(tid, delta, dispatch_round=0, cid=0):
    return Update(task_id=tid, client_id=cid, delta=np.asarray(delta, dtype=float),
                  dispatch_round=dispatch_round, dispatch_time=0.0, arrival_time=0.0)


class TestAggregation:
    def test_two_update_buffer_step(self):
        # x <- x - eta_s*eta_c*tau * mean(deltas) = 0 - 1*0.1*5 * 2 = -1
        task = quad_task(tau=5, eta_c=0.1)
        srv = FedAstServer([task], r0={0: 2}, b0={0: 2}, keep_model_history=True)
        eng = FakeEngine()
        srv.start(eng)
        assert eng.sent == [(0, 2)]

        srv.handle_update(eng, upd(0, [1.0]))
        st = srv.state(0)
        assert st.round == 0 and len(st.buffer) == 1

        eng.now = 3.5
        srv.handle_update(eng, upd(0, [3.0]))
        assert st.round == 1
        assert st.buffer == []
        assert st.model[0] == pytest.approx(-1.0, abs=1e-15)
        assert st.aggregation_times == [3.5]
        assert [m[0] for m in st.model_history] == [pytest.approx(-1.0)]
        # one replacement request per arrival in steady state
        assert eng.sent == [(0, 2), (0, 1), (0, 1)]

    def test_round_advances_once_per_full_buffer(self):
        srv = FedAstServer([quad_task()], r0={0: 6}, b0={0: 3})
        eng = FakeEngine()
        srv.start(eng)
        for i in range(6):
            srv.handle_update(eng, upd(0, [0.5], dispatch_round=srv.state(0).round))
        assert srv.state(0).round == 2
        assert srv.c == 6

    def test_non_finite_aggregate_is_fatal(self):
        srv = FedAstServer([quad_task()], r0={0: 1}, b0={0: 1})
        eng = FakeEngine()
        srv.start(eng)
        with pytest.raises(SimulationError, match="non-finite"):
            srv.handle_update(eng, upd(0, [np.inf]))


class TestStaleness:
    def test_staleness_measured_at_arrival(self):
        srv = FedAstServer([quad_task()], r0={0: 4}, b0={0: 10})
        eng = FakeEngine()
        srv.start(eng)
        st = srv.state(0)
        st.round = 5
        update = upd(0, [1.0], dispatch_round=3)
        srv.handle_update(eng, update)
        assert update.staleness == 2
        assert st.staleness_count == 1
        assert st.staleness_total == 2
        assert st.staleness_max == 2
        assert srv.task_metrics(0)["staleness_mean"] == 2.0

    def test_drop_enforcement_discards_but_still_redispatches(self):
        srv = FedAstServer([quad_task()], r0={0: 4}, b0={0: 10},
                           tau_max=1, drop_enforcement=True)
        eng = FakeEngine()
        srv.start(eng)
        st = srv.state(0)
        st.round = 5
        srv.handle_update(eng, upd(0, [1.0], dispatch_round=3))  # staleness 2 > 1
        assert st.dropped == 1
        assert st.buffer == [] and len(st.history) == 0
        assert st.staleness_count == 0  # dropped updates leave the stats alone
        assert srv.c == 1               # but are counted as received
        assert eng.sent[-1] == (0, 1)   # and still trigger a replacement

    def test_cap_without_enforcement_only_observes(self):
        srv = FedAstServer([quad_task()], r0={0: 4}, b0={0: 10}, tau_max=1)
        eng = FakeEngine()
        srv.start(eng)
        st = srv.state(0)
        st.round = 5
        srv.handle_update(eng, upd(0, [1.0], dispatch_round=3))
        assert st.dropped == 0
        assert len(st.buffer) == 1
        assert st.staleness_max == 2


class TestDispatchWalk:
    def make(self):
        srv = FedAstServer([quad_task()], r0={0: 5}, b0={0: 50})
        eng = FakeEngine()
        srv.start(eng)
        eng.sent.clear()
        return srv, eng, srv.state(0)

    def test_above_target_sends_nothing(self):
        srv, eng, st = self.make()
        st.r_cur, st.r_target = 5, 3
        srv.handle_update(eng, upd(0, [1.0]))
        assert eng.sent == []
        assert st.r_cur == 4

    def test_below_target_sends_two(self):
        srv, eng, st = self.make()
        st.r_cur, st.r_target = 3, 5
        srv.handle_update(eng, upd(0, [1.0]))
        assert eng.sent == [(0, 2)]
        assert st.r_cur == 4

    def test_on_target_sends_one(self):
        srv, eng, st = self.make()
        srv.handle_update(eng, upd(0, [1.0]))
        assert eng.sent == [(0, 1)]
        assert st.r_cur == 5

    def test_one_below_target_sends_two_and_overshoots_by_one(self):
        # r_cur 4 -> target 5: K = min(2, 5 - 3) = 2, landing exactly on 5
        srv, eng, st = self.make()
        st.r_cur, st.r_target = 4, 5
        srv.handle_update(eng, upd(0, [1.0]))
        assert eng.sent == [(0, 2)]
        assert st.r_cur == 5


class TestFinishing:
    def test_mark_finished_releases_budget_once(self):
        srv = FedAstServer([quad_task(0), quad_task(1)], r0={0: 7, 1: 3},
                           b0={0: 1, 1: 1})
        eng = FakeEngine()
        srv.start(eng)
        srv.mark_finished(eng, 0)
        assert srv.released_budget == 7
        assert srv.state(0).r_target == 0
        srv.mark_finished(eng, 0)
        assert srv.released_budget == 7

    def test_late_update_is_discarded_silently(self):
        srv = FedAstServer([quad_task()], r0={0: 4}, b0={0: 2})
        eng = FakeEngine()
        srv.start(eng)
        srv.mark_finished(eng, 0)
        eng.sent.clear()
        srv.handle_update(eng, upd(0, [1.0]))
        st = srv.state(0)
        assert st.late_discards == 1
        assert st.r_cur == 3
        assert srv.c == 0
        assert eng.sent == []

    def test_skipped_dispatch_shrinks_outstanding_count(self):
        srv = FedAstServer([quad_task()], r0={0: 4}, b0={0: 2})
        eng = FakeEngine()
        srv.start(eng)
        srv.on_dispatch_skipped(0)
        assert srv.state(0).r_cur == 3


class TestLearningRateBounds:
    def test_frozen_examples(self):
        eta_s_max, eta_c_max = lr_bounds(smoothness=1.0, tau=4, buffer_size=4,
                                         concurrency=8, staleness_cap=2)
        assert eta_s_max == pytest.approx(4.0)
        # buffer term 1/96 vs staleness term 1/(16*sqrt(64)) = 1/128
        assert eta_c_max == pytest.approx(1.0 / 128.0)

    def test_buffer_term_binds_at_low_concurrency(self):
        _, eta_c_max = lr_bounds(1.0, 4, 4, concurrency=1, staleness_cap=1)
        assert eta_c_max == pytest.approx(1.0 / 96.0)

    def test_buffer_skew_damping(self):
        eta_s_max, eta_c_max = lr_bounds(1.0, 4, 4, 8, 2, chi=4.0)
        assert eta_s_max == pytest.approx(0.5)        # 4 / 8
        assert eta_c_max == pytest.approx(1.0 / 1024)  # (1/128) / 8

    def test_validation(self):
        with pytest.raises(ValueError):
            lr_bounds(0.0, 1, 1, 1, 1)
        with pytest.raises(ValueError):
            lr_bounds(1.0, 1, 1, 1, 1, chi=0.5)

    def test_warnings_name_the_binding_term(self):
        loud = TaskSpec(task_id=0, objective=QuadraticObjective(dim=1), tau=4,
                        eta_c=1.0, eta_s=100.0, target_metric=0.9)
        msgs = lr_bound_warnings(loud, concurrency=8, buffer_size=4, staleness_cap=2)
        assert len(msgs) == 2
        assert "sqrt(tau*b) term" in msgs[0]
        assert "staleness term" in msgs[1]

        quiet = TaskSpec(task_id=0, objective=QuadraticObjective(dim=1), tau=1,
                         eta_c=0.01, eta_s=1.0, target_metric=0.9)
        assert lr_bound_warnings(quiet, concurrency=1, buffer_size=1,
                                 staleness_cap=None) == []


class TestRatioCap:
    def test_at_cap_is_fine(self):
        srv = FedAstServer([quad_task()], r0={0: 37}, b0={0: 1})
        assert srv.warnings == []

    def test_over_cap_warns_by_default(self):
        srv = FedAstServer([quad_task()], r0={0: 38}, b0={0: 1})
        assert len(srv.warnings) == 1
        assert "37" in srv.warnings[0]

    def test_over_cap_strict_raises(self):
        with pytest.raises(ValueError, match="exceeds"):
            FedAstServer([quad_task()], r0={0: 38}, b0={0: 1}, strict_ratio=True)


class TestDynamicReallocation:
    def test_plan_application_and_buffer_flush(self):
        """Fourth received update triggers the planner; the high-variance
        task grabs 8 of 9 requests, buffers rescale, and the shrunk buffer
        of the flat task flushes immediately."""
        t0 = quad_task(0, dim=2, tau=2, eta_c=1.0)   # step scale 2
        t1 = quad_task(1, dim=2, tau=1, eta_c=1.0)   # step scale 1
        srv = FedAstServer([t0, t1], r0={0: 6, 1: 3}, b0={0: 2, 1: 3},
                           option="D", c_period=4)
        eng = FakeEngine()
        srv.start(eng)

        srv.handle_update(eng, upd(0, [1.0, 0.0]))
        srv.handle_update(eng, upd(0, [3.0, 0.0]))   # aggregates task 0
        srv.handle_update(eng, upd(1, [2.0, 0.0]))
        eng.now = 9.0
        srv.handle_update(eng, upd(1, [2.0, 0.0]))   # c = 4: trigger

        assert srv.realloc_events == [
            (9.0, 4, {0: 8, 1: 1}, {0: pytest.approx(0.5), 1: 0.0})
        ]
        s0, s1 = srv.state(0), srv.state(1)
        assert (s0.r_target, s0.b) == (8, 3)
        assert (s1.r_target, s1.b) == (1, 1)
        # task 1 held 2 buffered updates; the new target of 1 flushed them
        assert s1.round == 1 and s1.buffer == []
        assert np.allclose(s1.model, [-2.0, 0.0])

    def test_static_never_replans(self):
        srv = FedAstServer([quad_task(0), quad_task(1)], r0={0: 2, 1: 2},
                           b0={0: 9, 1: 9}, option="S", c_period=2)
        eng = FakeEngine()
        srv.start(eng)
        for i in range(8):
            srv.handle_update(eng, upd(i % 2, [float(i)]))
        assert srv.realloc_events == []
        assert srv.state(0).r_target == 2

    def test_released_budget_zeroed_after_trigger(self):
        t0 = quad_task(0)
        t1 = quad_task(1)
        srv = FedAstServer([t0, t1], r0={0: 3, 1: 3}, b0={0: 9, 1: 9},
                           option="D", c_period=4)
        eng = FakeEngine()
        srv.start(eng)
        srv.mark_finished(eng, 1)
        assert srv.released_budget == 3
        srv.handle_update(eng, upd(0, [1.0]))
        srv.handle_update(eng, upd(0, [3.0]))
        srv.handle_update(eng, upd(0, [1.0]))
        srv.handle_update(eng, upd(0, [3.0]))  # c = 4: trigger, budget 3 + 3
        assert srv.realloc_events[0][2][0] == 6
        assert srv.released_budget == 0


class TestPolicyContract:
    def test_barrier_event_is_a_protocol_violation(self):
        srv = FedAstServer([quad_task()], r0={0: 1}, b0={0: 1})
        with pytest.raises(SimulationError, match="barrier"):
            srv.handle_barrier(FakeEngine())

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            FedAstServer([], r0={}, b0={})
        with pytest.raises(ValueError):
            FedAstServer([quad_task()], r0={0: 1}, b0={0: 1}, option="Q")
        with pytest.raises(ValueError):
            FedAstServer([quad_task()], r0={0: 1}, b0={0: 1}, history_size=1)
        with pytest.raises(ValueError):
            FedAstServer([quad_task()], r0={0: 1}, b0={0: 1}, drop_enforcement=True)
        with pytest.raises(ValueError):
            FedAstServer([quad_task()], r0={}, b0={0: 1})
        with pytest.raises(ValueError):
            FedAstServer([quad_task()], r0={0: 0}, b0={0: 1})

    def test_outstanding_requests_conserved_in_live_run(self):
        """Static allocation keeps the concurrent-request count pinned at
        R0 for the whole run: every arrival is answered by one dispatch."""
        task = quad_task(tau=1, eta_c=0.05)
        n = 6
        profiles = [ClientProfile(i, SpeedClass.NORMAL, 1.0, {0: 1.0}) for i in range(n)]
        shards = {0: [ClientShard(i, np.array([[5.0]])) for i in range(n)]}
        evals = {0: Dataset(np.array([[5.0]]))}
        srv = FedAstServer([task], r0={0: 3}, b0={0: 2})
        engine = Engine(tasks=[task], shards=shards, eval_sets=evals,
                        profiles=profiles, seed=11,
                        delay=DelaySpec(1.0, 2.0), eval_interval=None,
                        stop=StopConditions(stop_on_targets=False, max_rounds=20),
                        trace=True)
        log = engine.run(srv)
        st = srv.state(0)
        assert st.r_cur == 3
        assert engine.skipped_dispatches == 0
        dispatches = sum(1 for ev in log.trace if ev[0] == "dispatch")
        arrivals = sum(1 for ev in log.trace if ev[0] == "arrival")
        assert 0 <= dispatches - arrivals <= 3
        assert st.round == 20
