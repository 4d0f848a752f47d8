"""Synchronous multi-model baseline with straggler mitigation.

Each round, the available clients are shuffled and split disjointly across
tasks according to a per-task allocation. Every task aggregates the first
k of its returned updates (k is the mitigation knob; k equal to the
allocation means waiting for everyone) with the same
x <- x - eta_s * eta_c * tau * mean(delta) rule as the asynchronous
server. The round ends when the last task collects its k-th update; all
still-running requests are cancelled and their clients freed. No update
ever crosses a round boundary, so staleness is identically zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .event_engine import Engine, SimulationError
from .local_trainer import Update
from .objectives import TaskSpec
from .realloc import apportion_largest_remainder

logger = logging.getLogger(__name__)


@dataclass
class SyncTaskState:
    spec: TaskSpec
    model: np.ndarray
    round: int = 0
    finished: bool = False
    collected: list[Update] = field(default_factory=list)
    expected: int = 0
    k_eff: int = 0
    aggregated_total: int = 0


class MmSyncServer:
    """Round-synchronous policy over a shared client pool.

    ``allocation`` maps task id to its per-round client count. When fewer
    clients are available than the total allocation, the round's counts are
    scaled down proportionally (largest remainder, at least one each) with
    a warning. When a task finishes early its allocation is redistributed
    to the remaining tasks in proportion to their original shares.
    """

    def __init__(self, tasks: list[TaskSpec], allocation: Mapping[int, int], k: int):
        if not tasks:
            raise ValueError("need at least one task")
        if k < 1:
            raise ValueError("k must be at least 1")
        for task in tasks:
            if allocation.get(task.task_id, 0) < 1:
                raise ValueError(f"task {task.task_id}: allocation must be at least 1")
        self.k = k
        self.warnings: list[str] = []
        self._alloc0 = {t.task_id: int(allocation[t.task_id]) for t in tasks}
        self._states = {t.task_id: SyncTaskState(spec=t, model=t.new_model()) for t in tasks}
        self._round = 0
        self._round_start = 0.0
        self._barrier_scheduled = False
        #: duration of every completed round, in order
        self.round_durations: list[float] = []
        self.updates_received = 0
        self.updates_discarded = 0
        self._k_clip_warned = False

        for task in tasks:
            if self.k > self._alloc0[task.task_id]:
                msg = (
                    f"task {task.task_id}: k={k} exceeds its allocation "
                    f"{self._alloc0[task.task_id]}; aggregating all returned updates"
                )
                logger.warning(msg)
                self.warnings.append(msg)
                self._k_clip_warned = True

    # -- policy interface ----------------------------------------------------

    def start(self, engine: Engine) -> None:
        self._begin_round(engine)

    def handle_update(self, engine: Engine, update: Update) -> None:
        self.updates_received += 1
        st = self._states[update.task_id]
        if st.finished or update.dispatch_round != st.round:
            self.updates_discarded += 1
            return
        if len(st.collected) >= st.k_eff:
            # Arrived before the global barrier but after this task already
            # has its k updates: dropped at round end.
            self.updates_discarded += 1
            return
        update.staleness = 0
        st.collected.append(update)
        self._maybe_close_round(engine)

    def handle_barrier(self, engine: Engine) -> None:
        live = [st for st in self._states.values() if not st.finished]
        if not live:
            return
        self.round_durations.append(engine.now - self._round_start)
        for st in live:
            if st.collected:
                stack = np.stack([u.delta for u in st.collected])
                st.model = st.model - st.spec.eta_s * st.spec.eta_c * st.spec.tau * stack.mean(
                    axis=0
                )
                if not np.all(np.isfinite(st.model)):
                    raise SimulationError(
                        f"aggregate produced non-finite model on task {st.spec.task_id} "
                        f"at round {st.round}"
                    )
                st.aggregated_total += len(st.collected)
            st.collected = []
            st.round += 1
        self._round += 1
        engine.release_clients(engine.now)
        self._barrier_scheduled = False
        if any(not st.finished for st in self._states.values()):
            self._begin_round(engine)

    def model_snapshot(self, task_id: int) -> np.ndarray:
        return self._states[task_id].model

    def current_round(self, task_id: int) -> int:
        return self._states[task_id].round

    def task_metrics(self, task_id: int) -> dict[str, float | int]:
        st = self._states[task_id]
        return {
            "r": st.expected,
            "b": st.k_eff,
            "staleness_mean": 0.0,
            "staleness_max": 0,
            "c": self.updates_received,
            "dropped": self.updates_discarded,
        }

    def mark_finished(self, engine: Engine, task_id: int) -> None:
        st = self._states[task_id]
        if st.finished:
            return
        st.finished = True
        st.collected = []
        # The round may now be complete without another arrival.
        self._maybe_close_round(engine)

    def on_dispatch_skipped(self, task_id: int) -> None:
        pass

    # -- internals -----------------------------------------------------------

    def state(self, task_id: int) -> SyncTaskState:
        return self._states[task_id]

    def _begin_round(self, engine: Engine) -> None:
        live = [tid for tid, st in self._states.items() if not st.finished]
        if not live:
            return
        available = engine.draw_available()
        budget = sum(self._alloc0.values())
        weights = [self._alloc0[tid] for tid in live]
        if len(available) < len(live):
            raise SimulationError(
                f"only {len(available)} clients available for {len(live)} tasks "
                f"at t={engine.now}"
            )
        if len(available) < budget:
            msg = (
                f"round {self._round}: {len(available)} clients available, "
                f"allocation wants {budget}; scaling down proportionally"
            )
            logger.warning(msg)
            self.warnings.append(msg)
            budget = len(available)
        counts = apportion_largest_remainder(weights, budget, min_each=1)

        order = engine.server_stream.permutation(len(available))
        shuffled = [available[int(i)] for i in order]
        self._round_start = engine.now
        pos = 0
        for tid, count in zip(live, counts):
            st = self._states[tid]
            st.expected = count
            st.k_eff = min(self.k, count)
            st.collected = []
            for client_id in shuffled[pos : pos + count]:
                engine.send_request_to(tid, client_id)
            pos += count

    def _maybe_close_round(self, engine: Engine) -> None:
        if self._barrier_scheduled:
            return
        live = [st for st in self._states.values() if not st.finished]
        if live and all(len(st.collected) >= st.k_eff for st in live):
            self._barrier_scheduled = True
            engine.schedule_barrier()
