"""Deterministic discrete-event loop driving any server policy.

Events are processed in strictly nondecreasing (time, sequence) order; the
monotone sequence number breaks simultaneous-event ties by scheduling
order, so reruns are bit-reproducible. Clients are single-threaded queues:
a request dispatched to a busy client starts when the client frees up.

Requests are computed eagerly at dispatch: the model snapshot is frozen,
the per-request RNG streams are derived from (seed, task, client, dispatch
counter), and the finished update is placed on the event heap at its
arrival time. Nothing that happens later can change the result.

A policy's decision to send new requests is itself realized as a
same-time event, so when several updates share a timestamp all of them are
absorbed (and any triggered aggregation applied) before the replacement
requests snapshot the model. For continuous delay distributions this is
indistinguishable from dispatching inline.
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol

import numpy as np

from . import rng as rng_tree
from .delay_model import ClientProfile, DelaySpec, sample_duration
from .local_trainer import Update, local_train
from .metrics import MetricsRecord
from .objectives import ClientShard, Dataset, TaskSpec, evaluate

logger = logging.getLogger(__name__)

#: Iteration cap for the availability-rejection sampler.
SAMPLER_ITERATION_CAP = 1_000_000


class SimulationError(RuntimeError):
    """The simulation reached an invalid state and cannot continue."""


class StarvedError(SimulationError):
    """Event queue ran dry before any stop condition was satisfied."""


class EventKind(enum.Enum):
    UPDATE_ARRIVAL = "update_arrival"
    DISPATCH = "dispatch"
    EVAL_TICK = "eval_tick"
    SYNC_ROUND_BARRIER = "sync_round_barrier"


@dataclass(eq=False)
class Event:
    time: float
    seq: int
    kind: EventKind
    payload: Any = None


@dataclass
class ClientState:
    profile: ClientProfile
    busy_until: float = 0.0


@dataclass(frozen=True)
class StopConditions:
    """Run termination: first satisfied condition wins.

    ``stop_on_targets`` ends the run once every task crossed its target
    (targets are recorded either way). At least one mechanism must be
    enabled or the run could never halt.
    """

    stop_on_targets: bool = True
    max_sim_time: float | None = None
    max_rounds: int | None = None

    def __post_init__(self) -> None:
        if not self.stop_on_targets and self.max_sim_time is None and self.max_rounds is None:
            raise ValueError("no stop condition enabled; the run would never halt")
        if self.max_sim_time is not None and self.max_sim_time <= 0:
            raise ValueError("max_sim_time must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


class ServerPolicy(Protocol):
    """What the engine needs from a server-side training algorithm."""

    def start(self, engine: "Engine") -> None: ...

    def handle_update(self, engine: "Engine", update: Update) -> None: ...

    def handle_barrier(self, engine: "Engine") -> None: ...

    def model_snapshot(self, task_id: int) -> np.ndarray: ...

    def current_round(self, task_id: int) -> int: ...

    def task_metrics(self, task_id: int) -> dict[str, float | int]: ...

    def mark_finished(self, engine: "Engine", task_id: int) -> None: ...

    def on_dispatch_skipped(self, task_id: int) -> None: ...


@dataclass
class RunLog:
    """Everything observable about one completed run."""

    records: list[MetricsRecord]
    target_times: dict[int, float | None]
    finish_reasons: dict[int, str | None]
    stop_reason: str
    sim_time: float
    events_processed: int
    final_models: dict[int, np.ndarray]
    trace: list[tuple] | None = None


class Engine:
    """Owns the clock, the event heap, and the client pool."""

    def __init__(
        self,
        tasks: Iterable[TaskSpec],
        shards: dict[int, list[ClientShard]],
        eval_sets: dict[int, Dataset],
        profiles: list[ClientProfile],
        seed: int,
        availability_p: float = 1.0,
        delay: DelaySpec = DelaySpec(),
        eval_interval: float | None = 1.0,
        stop: StopConditions = StopConditions(max_rounds=100),
        trace: bool = False,
    ):
        self.tasks: dict[int, TaskSpec] = {t.task_id: t for t in tasks}
        if not 0.0 < availability_p <= 1.0:
            raise ValueError("availability_p must lie in (0, 1]")
        if eval_interval is not None and eval_interval <= 0:
            raise ValueError("eval_interval must be positive")
        for tid, task in self.tasks.items():
            if tid not in shards:
                raise ValueError(f"task {tid} has no client shards")
            if len(shards[tid]) != len(profiles):
                raise ValueError(f"task {tid}: one shard per client required")
            if tid not in eval_sets:
                raise ValueError(f"task {tid} has no evaluation set")
        self.shards = shards
        self.eval_sets = eval_sets
        self.clients = [ClientState(profile=p) for p in profiles]
        self.seed = seed
        self.availability_p = availability_p
        self.delay = delay
        self.eval_interval = eval_interval
        self.stop = stop

        self.now = 0.0
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = 0
        self._server_rng = rng_tree.server_rng(seed)
        self._dispatch_counts: dict[tuple[int, int], int] = {}
        self.finished: dict[int, str | None] = {tid: None for tid in self.tasks}
        self.target_times: dict[int, float | None] = {tid: None for tid in self.tasks}
        self.records: list[MetricsRecord] = []
        self.trace: list[tuple] | None = [] if trace else None
        self.skipped_dispatches = 0
        self._events_processed = 0

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def server_stream(self) -> np.random.Generator:
        """The server-side decision stream (sampling, availability, shuffles)."""
        return self._server_rng

    # -- scheduling ---------------------------------------------------------

    def _push(self, time: float, kind: EventKind, payload: Any = None) -> None:
        if time < self.now:
            raise SimulationError(f"event scheduled in the past: {time} < {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, Event(time, self._seq, kind, payload)))

    def send_requests(self, task_id: int, count: int) -> None:
        """Queue `count` dispatches to uniformly sampled clients, effective now."""
        for _ in range(count):
            self._push(self.now, EventKind.DISPATCH, (task_id, None))

    def send_request_to(self, task_id: int, client_id: int) -> None:
        """Queue a dispatch to a specific client, effective now."""
        self._push(self.now, EventKind.DISPATCH, (task_id, client_id))

    def schedule_barrier(self) -> None:
        self._push(self.now, EventKind.SYNC_ROUND_BARRIER, None)

    # -- client pool --------------------------------------------------------

    def sample_clients(self, k: int) -> list[int]:
        """Draw k client ids uniformly with replacement, each accepted by an
        independent availability coin flip. Hard error if the rejection loop
        exceeds SAMPLER_ITERATION_CAP iterations."""
        out: list[int] = []
        iterations = 0
        while len(out) < k:
            iterations += 1
            if iterations > SAMPLER_ITERATION_CAP:
                raise SimulationError(
                    f"availability sampler exceeded {SAMPLER_ITERATION_CAP} iterations "
                    f"(availability_p={self.availability_p})"
                )
            candidate = int(self._server_rng.integers(self.n_clients))
            if self._server_rng.random() < self.availability_p:
                out.append(candidate)
        return out

    def draw_available(self) -> list[int]:
        """Round-style availability: one Bernoulli coin per client."""
        mask = self._server_rng.random(self.n_clients) < self.availability_p
        return [int(i) for i in np.flatnonzero(mask)]

    def release_clients(self, at: float) -> None:
        """Cancel queued work: no client stays busy past `at`."""
        for client in self.clients:
            if client.busy_until > at:
                client.busy_until = at

    # -- event handlers -----------------------------------------------------

    def _do_dispatch(self, policy: ServerPolicy, payload: tuple[int, int | None]) -> None:
        task_id, forced_client = payload
        if self.finished[task_id] is not None:
            self.skipped_dispatches += 1
            policy.on_dispatch_skipped(task_id)
            return
        client_id = forced_client if forced_client is not None else self.sample_clients(1)[0]
        task = self.tasks[task_id]
        snapshot = np.array(policy.model_snapshot(task_id), copy=True)
        dispatch_round = policy.current_round(task_id)

        key = (task_id, client_id)
        dispatch_no = self._dispatch_counts.get(key, 0)
        self._dispatch_counts[key] = dispatch_no + 1
        train_rng, delay_rng = rng_tree.request_rngs(self.seed, task_id, client_id, dispatch_no)

        client = self.clients[client_id]
        duration = sample_duration(client.profile, task, delay_rng, self.delay)
        start = max(self.now, client.busy_until)
        completion = start + duration
        client.busy_until = completion

        delta = local_train(task, snapshot, self.shards[task_id][client_id], train_rng)
        update = Update(
            task_id=task_id,
            client_id=client_id,
            delta=delta,
            dispatch_round=dispatch_round,
            dispatch_time=self.now,
            arrival_time=completion,
        )
        self._push(completion, EventKind.UPDATE_ARRIVAL, update)
        if self.trace is not None:
            self.trace.append(
                ("dispatch", self.now, task_id, client_id, dispatch_round, completion)
            )

    def _do_eval(self, policy: ServerPolicy) -> None:
        for task_id in sorted(self.tasks):
            task = self.tasks[task_id]
            loss, accuracy = evaluate(task, policy.model_snapshot(task_id), self.eval_sets[task_id])
            stats = policy.task_metrics(task_id)
            self.records.append(
                MetricsRecord(
                    sim_time=self.now,
                    task_id=task_id,
                    round=policy.current_round(task_id),
                    loss=loss,
                    accuracy=accuracy,
                    r=int(stats["r"]),
                    b=int(stats["b"]),
                    staleness_mean=float(stats["staleness_mean"]),
                    staleness_max=int(stats["staleness_max"]),
                    c=int(stats["c"]),
                    dropped=int(stats["dropped"]),
                )
            )
            if self.target_times[task_id] is None and task.target_reached(loss, accuracy):
                self.target_times[task_id] = self.now
                if self.stop.stop_on_targets and self.finished[task_id] is None:
                    self._finish_task(policy, task_id, "target")

    def _finish_task(self, policy: ServerPolicy, task_id: int, reason: str) -> None:
        self.finished[task_id] = reason
        policy.mark_finished(self, task_id)
        if self.trace is not None:
            self.trace.append(("finish", self.now, task_id, reason))

    # -- main loop ----------------------------------------------------------

    def run(self, policy: ServerPolicy) -> RunLog:
        if self.eval_interval is not None and self.tasks:
            self._push(0.0, EventKind.EVAL_TICK)
        policy.start(self)

        stop_reason: str | None = None
        while self._heap:
            time, _, event = heapq.heappop(self._heap)
            if self.stop.max_sim_time is not None and time > self.stop.max_sim_time:
                self.now = self.stop.max_sim_time
                stop_reason = "max_sim_time"
                break
            self.now = time
            self._events_processed += 1

            if event.kind is EventKind.DISPATCH:
                self._do_dispatch(policy, event.payload)
            elif event.kind is EventKind.UPDATE_ARRIVAL:
                if self.trace is not None:
                    upd = event.payload
                    self.trace.append(
                        ("arrival", self.now, upd.task_id, upd.client_id, upd.dispatch_round)
                    )
                policy.handle_update(self, event.payload)
            elif event.kind is EventKind.EVAL_TICK:
                self._do_eval(policy)
                if self.eval_interval is not None:
                    self._push(self.now + self.eval_interval, EventKind.EVAL_TICK)
            elif event.kind is EventKind.SYNC_ROUND_BARRIER:
                policy.handle_barrier(self)

            if self.stop.max_rounds is not None:
                for task_id in self.tasks:
                    if (
                        self.finished[task_id] is None
                        and policy.current_round(task_id) >= self.stop.max_rounds
                    ):
                        self._finish_task(policy, task_id, "max_rounds")
            if self.tasks and all(reason is not None for reason in self.finished.values()):
                reasons = set(self.finished.values())
                stop_reason = "targets" if reasons == {"target"} else "max_rounds"
                break

        if stop_reason is None:
            raise StarvedError(
                "event queue starved before any stop condition was met "
                f"(t={self.now}, finished={self.finished})"
            )

        return RunLog(
            records=self.records,
            target_times=dict(self.target_times),
            finish_reasons=dict(self.finished),
            stop_reason=stop_reason,
            sim_time=self.now,
            events_processed=self._events_processed,
            final_models={tid: np.array(policy.model_snapshot(tid), copy=True) for tid in self.tasks},
            trace=self.trace,
        )
