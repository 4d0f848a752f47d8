"""Round-synchronous baseline: disjoint rounds, first-k, straggler cancel."""

import numpy as np
import pytest

from fstsim.baselines import MmSyncServer
from fstsim.delay_model import ClientProfile, DelaySpec, SpeedClass
from fstsim.event_engine import Engine, SimulationError, StopConditions
from fstsim.objectives import ClientShard, Dataset, QuadraticObjective, TaskSpec

CONSTANT_DELAY = DelaySpec(shift_factor=1.0, scale_factor=0.0)
EXPONENTIAL_DELAY = DelaySpec(shift_factor=0.0, scale_factor=1.0)


def quad_task(tid=0, target_kind="accuracy", target=0.999, eta_c=0.1):
    return TaskSpec(task_id=tid, objective=QuadraticObjective(dim=1), tau=1,
                    eta_c=eta_c, eta_s=1.0, target_metric=target,
                    target_kind=target_kind, batch_size=1)


def uniform_profiles(n, task_ids, beta=1.0):
    betas = {tid: beta for tid in task_ids}
    return [ClientProfile(i, SpeedClass.NORMAL, 1.0, dict(betas)) for i in range(n)]


def shards_at(task_ids, n_clients, value=5.0):
    return {tid: [ClientShard(i, np.array([[value]])) for i in range(n_clients)]
            for tid in task_ids}


def evals_at(task_ids, value=5.0):
    return {tid: Dataset(np.array([[value]])) for tid in task_ids}


class TestRoundStructure:
    def test_clients_are_partitioned_disjointly_every_round(self):
        tasks = [quad_task(0), quad_task(1)]
        policy = MmSyncServer(tasks, allocation={0: 3, 1: 2}, k=2)
        engine = Engine(
            tasks=tasks, shards=shards_at([0, 1], 10), eval_sets=evals_at([0, 1]),
            profiles=uniform_profiles(10, [0, 1]), seed=4, delay=CONSTANT_DELAY,
            eval_interval=None, stop=StopConditions(stop_on_targets=False, max_rounds=3),
            trace=True,
        )
        engine.run(policy)
        dispatches = [ev for ev in engine.trace if ev[0] == "dispatch"]
        for rnd in (0, 1, 2):
            per_task = {0: set(), 1: set()}
            for ev in dispatches:
                if ev[4] == rnd:
                    per_task[ev[2]].add(ev[3])
            assert len(per_task[0]) == 3
            assert len(per_task[1]) == 2
            assert per_task[0].isdisjoint(per_task[1])

    def test_first_k_close_and_straggler_cancellation(self):
        """Clients with step times 1/2/3, allocation 3, k=2: each round
        closes at its second arrival (t = 2 after the round starts), the
        slowest request is cancelled, and its late arrival is discarded."""
        task = quad_task()
        policy = MmSyncServer([task], allocation={0: 3}, k=2)
        profiles = [ClientProfile(i, SpeedClass.NORMAL, 1.0, {0: float(i + 1)})
                    for i in range(3)]
        engine = Engine(
            tasks=[task], shards=shards_at([0], 3), eval_sets=evals_at([0]),
            profiles=profiles, seed=0, delay=CONSTANT_DELAY, eval_interval=None,
            stop=StopConditions(stop_on_targets=False, max_rounds=2),
        )
        log = engine.run(policy)
        assert policy.round_durations == [2.0, 2.0]
        assert policy.updates_received == 5   # 2+2 aggregated, 1 stale
        assert policy.updates_discarded == 1
        assert policy.state(0).aggregated_total == 4
        # both rounds averaged two identical full-batch gradients, so the
        # trajectory is exactly two plain gradient steps toward a = 5
        assert log.final_models[0][0] == pytest.approx(0.95, rel=1e-12)
        assert log.sim_time == 4.0

    def test_staleness_is_identically_zero(self):
        task = quad_task()
        policy = MmSyncServer([task], allocation={0: 4}, k=2)
        engine = Engine(
            tasks=[task], shards=shards_at([0], 8), eval_sets=evals_at([0]),
            profiles=uniform_profiles(8, [0]), seed=9, eval_interval=1.0,
            stop=StopConditions(stop_on_targets=False, max_rounds=10),
        )
        log = engine.run(policy)
        assert all(rec.staleness_mean == 0.0 for rec in log.records)
        assert all(rec.staleness_max == 0 for rec in log.records)


class TestWaitingTimes:
    def test_k_one_round_is_the_minimum_of_three_exponentials(self):
        """k = 1 over 3 exponential clients: round length ~ Exp(3), so the
        mean over 3000 rounds sits near 1/3."""
        task = quad_task(eta_c=0.001)
        policy = MmSyncServer([task], allocation={0: 3}, k=1)
        engine = Engine(
            tasks=[task], shards=shards_at([0], 3), eval_sets=evals_at([0]),
            profiles=uniform_profiles(3, [0]), seed=17, delay=EXPONENTIAL_DELAY,
            eval_interval=None, stop=StopConditions(stop_on_targets=False, max_rounds=3000),
        )
        engine.run(policy)
        durations = np.array(policy.round_durations)
        assert len(durations) == 3000
        # SE of the mean is (1/3)/sqrt(3000) ~ 0.006; allow 4 SE
        assert durations.mean() == pytest.approx(1 / 3, abs=0.025)

    def test_k_equal_to_allocation_is_plain_parallel_sgd(self):
        """Waiting for everyone with constant unit delays reproduces
        synchronous federated averaging: x_T = a_bar (1 - (1 - lr)^T)."""
        task = quad_task(eta_c=0.1)
        n = 4
        policy = MmSyncServer([task], allocation={0: n}, k=n)
        shards = {0: [ClientShard(i, np.array([[a]]))
                      for i, a in enumerate([1.0, 3.0, 7.0, 13.0])]}
        engine = Engine(
            tasks=[task], shards=shards, eval_sets=evals_at([0], value=6.0),
            profiles=uniform_profiles(n, [0]), seed=2, delay=CONSTANT_DELAY,
            eval_interval=None, stop=StopConditions(stop_on_targets=False, max_rounds=5),
        )
        log = engine.run(policy)
        assert policy.round_durations == [1.0] * 5
        assert log.final_models[0][0] == pytest.approx(6.0 * (1 - 0.9**5), rel=1e-12)
        assert policy.updates_discarded == 0


class TestPoolPressure:
    def test_scale_down_when_pool_is_short(self):
        tasks = [quad_task(0), quad_task(1)]
        policy = MmSyncServer(tasks, allocation={0: 4, 1: 4}, k=2)
        engine = Engine(
            tasks=tasks, shards=shards_at([0, 1], 5), eval_sets=evals_at([0, 1]),
            profiles=uniform_profiles(5, [0, 1]), seed=3, delay=CONSTANT_DELAY,
            eval_interval=None, stop=StopConditions(stop_on_targets=False, max_rounds=1),
        )
        engine.run(policy)
        assert any("scaling down" in w for w in policy.warnings)
        assert policy.state(0).expected == 3  # apportion([4, 4], 5)
        assert policy.state(1).expected == 2

    def test_fewer_clients_than_tasks_is_fatal(self):
        tasks = [quad_task(0), quad_task(1)]
        policy = MmSyncServer(tasks, allocation={0: 1, 1: 1}, k=1)
        engine = Engine(
            tasks=tasks, shards=shards_at([0, 1], 1), eval_sets=evals_at([0, 1]),
            profiles=uniform_profiles(1, [0, 1]), seed=0, eval_interval=None,
            stop=StopConditions(stop_on_targets=False, max_rounds=1),
        )
        with pytest.raises(SimulationError, match="available"):
            engine.run(policy)

    def test_k_clip_warns_and_aggregates_what_returned(self):
        policy = MmSyncServer([quad_task()], allocation={0: 2}, k=5)
        assert any("exceeds its allocation" in w for w in policy.warnings)
        engine = Engine(
            tasks=[quad_task()], shards=shards_at([0], 4), eval_sets=evals_at([0]),
            profiles=uniform_profiles(4, [0]), seed=1, delay=CONSTANT_DELAY,
            eval_interval=None, stop=StopConditions(stop_on_targets=False, max_rounds=2),
        )
        engine.run(policy)
        assert policy.state(0).k_eff == 2
        assert policy.state(0).aggregated_total == 4  # both rounds kept both


class TestFinishing:
    def test_finished_task_allocation_flows_to_the_rest(self):
        """Task 0 hits its target at the t=0 evaluation; from the next round
        task 1 receives the whole combined allocation."""
        tasks = [quad_task(0, target_kind="loss", target=0.5),
                 quad_task(1, target_kind="loss", target=1e-9)]
        policy = MmSyncServer(tasks, allocation={0: 2, 1: 3}, k=2)
        shards = {0: [ClientShard(i, np.zeros((1, 1))) for i in range(10)],
                  1: [ClientShard(i, np.array([[5.0]])) for i in range(10)]}
        evals = {0: Dataset(np.zeros((1, 1))), 1: Dataset(np.array([[5.0]]))}
        engine = Engine(
            tasks=tasks, shards=shards, eval_sets=evals,
            profiles=uniform_profiles(10, [0, 1]), seed=5, delay=CONSTANT_DELAY,
            eval_interval=1.0, stop=StopConditions(stop_on_targets=True, max_rounds=2),
        )
        log = engine.run(policy)
        assert log.finish_reasons == {0: "target", 1: "max_rounds"}
        assert policy.state(0).finished
        assert policy.state(1).expected == 5  # 2 + 3 redistributed

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            MmSyncServer([], allocation={}, k=1)
        with pytest.raises(ValueError):
            MmSyncServer([quad_task()], allocation={0: 3}, k=0)
        with pytest.raises(ValueError):
            MmSyncServer([quad_task()], allocation={}, k=1)
        with pytest.raises(ValueError):
            MmSyncServer([quad_task()], allocation={0: 0}, k=1)
