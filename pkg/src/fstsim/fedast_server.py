"""Buffered asynchronous server for simultaneous multi-task training.

Per task m the server keeps a model x_m, a round counter t_m, and a buffer
of received updates. Each arriving update is buffered (unless dropped for
excess staleness), and once the buffer holds b_m updates the model takes
one step against their mean:

    x_m <- x_m - eta_s * eta_c * tau_m * mean(buffer)

after which the buffer clears and t_m advances. Every arrival is answered
by dispatching K in {0, 1, 2} fresh requests, chosen to walk the task's
concurrent-request count one step toward its target, so the total number
of outstanding requests is conserved in steady state. Targets are constant
under static allocation ("S") and periodically re-planned from estimated
update variances under dynamic allocation ("D").
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .event_engine import Engine, SimulationError
from .local_trainer import Update
from .objectives import TaskSpec
from .realloc import TaskAllocView, compute_plan, default_c_period

logger = logging.getLogger(__name__)

#: Default ceiling on requests-per-buffer-slot; concurrency beyond this is
#: known to stop paying for itself and mostly adds staleness.
DEFAULT_RATIO_CAP = 37.0


def lr_bounds(
    smoothness: float,
    tau: int,
    buffer_size: int,
    concurrency: int,
    staleness_cap: int,
    chi: float = 1.0,
) -> tuple[float, float]:
    """Largest (eta_s, eta_c) with a convergence guarantee.

    eta_s <= chi^-1.5 * sqrt(tau * b)
    eta_c <= chi^-1.5 * min( 1 / (6 L tau sqrt(tau b)),
                             1 / (4 L tau sqrt(tau R tau_max)) )

    chi is the max/min buffer-size skew across tasks; chi = 1 (uniform
    buffers) recovers the unskewed bounds exactly.
    """
    if smoothness <= 0 or tau < 1 or buffer_size < 1 or concurrency < 1 or staleness_cap < 1:
        raise ValueError("lr_bounds arguments must be positive")
    if chi < 1:
        raise ValueError("buffer skew chi is a max/min ratio, so chi >= 1")
    damp = chi**-1.5
    eta_s_max = damp * math.sqrt(tau * buffer_size)
    buffer_term = 1.0 / (6.0 * smoothness * tau * math.sqrt(tau * buffer_size))
    staleness_term = 1.0 / (
        4.0 * smoothness * tau * math.sqrt(tau * concurrency * staleness_cap)
    )
    eta_c_max = damp * min(buffer_term, staleness_term)
    return eta_s_max, eta_c_max


def lr_bound_warnings(
    task: TaskSpec,
    concurrency: int,
    buffer_size: int,
    staleness_cap: int | None,
    smoothness: float = 1.0,
    chi: float = 1.0,
) -> list[str]:
    """Human-readable warnings when a task's rates exceed the guarantee.

    Without a staleness cap only the buffer term of the eta_c bound can be
    checked. Each warning names the binding term so the offending knob is
    obvious.
    """
    cap = staleness_cap if staleness_cap is not None else 1
    eta_s_max, _ = lr_bounds(smoothness, task.tau, buffer_size, concurrency, cap, chi)
    damp = chi**-1.5
    buffer_term = damp / (6.0 * smoothness * task.tau * math.sqrt(task.tau * buffer_size))
    staleness_term = (
        damp / (4.0 * smoothness * task.tau * math.sqrt(task.tau * concurrency * staleness_cap))
        if staleness_cap is not None
        else math.inf
    )
    warnings = []
    if task.eta_s > eta_s_max:
        warnings.append(
            f"task {task.task_id}: eta_s={task.eta_s:g} exceeds the server-rate bound "
            f"{eta_s_max:g} (sqrt(tau*b) term)"
        )
    if task.eta_c > min(buffer_term, staleness_term):
        binding = "buffer term" if buffer_term <= staleness_term else "staleness term"
        warnings.append(
            f"task {task.task_id}: eta_c={task.eta_c:g} exceeds the client-rate bound "
            f"{min(buffer_term, staleness_term):g} (binding: {binding})"
        )
    return warnings


@dataclass
class ServerTaskState:
    """Mutable per-task server bookkeeping."""

    spec: TaskSpec
    model: np.ndarray
    round: int = 0
    buffer: list[Update] = field(default_factory=list)
    r_cur: int = 0
    r_target: int = 0
    b: int = 1
    history: deque = field(default_factory=deque)
    staleness_count: int = 0
    staleness_total: int = 0
    staleness_max: int = 0
    dropped: int = 0
    late_discards: int = 0
    finished: bool = False
    #: sim times of every aggregation (diagnostic, used for rate checks)
    aggregation_times: list[float] = field(default_factory=list)
    #: post-aggregation model copies when history tracking is on
    model_history: list[np.ndarray] | None = None

    @property
    def step_scale(self) -> float:
        return self.spec.eta_c * self.spec.eta_s * self.spec.tau


class FedAstServer:
    """Asynchronous buffered policy with static or dynamic allocation.

    ``r0`` and ``b0`` map task id to the initial concurrent-request count
    and buffer size. ``option`` selects static ("S") or dynamic ("D")
    reallocation; dynamic re-plans every ``c_period`` received updates
    (default: 0.75 * n_tasks * total requests). ``tau_max`` with
    ``drop_enforcement`` discards updates staler than the cap instead of
    aggregating them.
    """

    def __init__(
        self,
        tasks: list[TaskSpec],
        r0: Mapping[int, int],
        b0: Mapping[int, int],
        option: str = "S",
        history_size: int = 8,
        c_period: int | None = None,
        tau_max: int | None = None,
        drop_enforcement: bool = False,
        ratio_cap: float = DEFAULT_RATIO_CAP,
        strict_ratio: bool = False,
        keep_model_history: bool = False,
    ):
        if option not in ("S", "D"):
            raise ValueError("option must be 'S' (static) or 'D' (dynamic)")
        if not tasks:
            raise ValueError("need at least one task")
        if history_size < 2:
            raise ValueError("history_size must be at least 2")
        if drop_enforcement and tau_max is None:
            raise ValueError("drop_enforcement requires tau_max")
        if tau_max is not None and tau_max < 0:
            raise ValueError("tau_max must be nonnegative")
        self.option = option
        self.history_size = history_size
        self.tau_max = tau_max
        self.drop_enforcement = drop_enforcement
        self.warnings: list[str] = []
        self.c = 0
        self.released_budget = 0
        #: (sim_time, c, new request targets, sigma_sq estimates) per trigger
        self.realloc_events: list[tuple[float, int, dict[int, int], dict[int, float]]] = []

        self._states: dict[int, ServerTaskState] = {}
        for task in tasks:
            tid = task.task_id
            if tid not in r0 or tid not in b0:
                raise ValueError(f"task {tid} is missing r0 or b0")
            if r0[tid] < 1 or b0[tid] < 1:
                raise ValueError(f"task {tid}: r0 and b0 must be at least 1")
            if r0[tid] > ratio_cap * b0[tid]:
                msg = (
                    f"task {tid}: r0={r0[tid]} exceeds {ratio_cap:g} x b0={b0[tid]}; "
                    f"extra concurrency past that ratio buys no speedup and "
                    f"inflates staleness"
                )
                if strict_ratio:
                    raise ValueError(msg)
                logger.warning(msg)
                self.warnings.append(msg)
            self._states[tid] = ServerTaskState(
                spec=task,
                model=task.new_model(),
                r_target=r0[tid],
                b=b0[tid],
                history=deque(maxlen=history_size),
                model_history=[] if keep_model_history else None,
            )
        self.c_period = (
            c_period
            if c_period is not None
            else default_c_period(len(tasks), sum(r0[t.task_id] for t in tasks))
        )
        if self.c_period < 1:
            raise ValueError("c_period must be at least 1")

    # -- policy interface ----------------------------------------------------

    def start(self, engine: Engine) -> None:
        for tid, st in self._states.items():
            st.r_cur = st.r_target
            engine.send_requests(tid, st.r_target)

    def handle_update(self, engine: Engine, update: Update) -> None:
        st = self._states[update.task_id]
        if st.finished:
            # Late straggler for a completed task: drop silently, shrink the
            # outstanding count, dispatch nothing.
            st.late_discards += 1
            st.r_cur = max(0, st.r_cur - 1)
            return

        self.c += 1
        staleness = st.round - update.dispatch_round
        update.staleness = staleness
        if self.drop_enforcement and staleness > self.tau_max:
            st.dropped += 1
        else:
            st.buffer.append(update)
            st.history.append(np.array(update.delta, copy=True))
            st.staleness_count += 1
            st.staleness_total += staleness
            if staleness > st.staleness_max:
                st.staleness_max = staleness

        plan = compute_plan(
            self.option, self.c, self.c_period, self._alloc_views(), self.released_budget
        )
        if plan.triggered:
            self.released_budget = 0
            for tid, st2 in self._states.items():
                st2.r_target = plan.r_new[tid]
                st2.b = plan.b_new[tid]
            self.realloc_events.append(
                (engine.now, self.c, dict(plan.r_new), dict(plan.sigma_sq))
            )
            # A shrunk buffer target may already be satisfied.
            for st2 in self._states.values():
                if not st2.finished and len(st2.buffer) >= st2.b:
                    self._aggregate(st2, engine.now)

        if len(st.buffer) >= st.b:
            self._aggregate(st, engine.now)

        k = min(2, max(0, st.r_target - (st.r_cur - 1)))
        st.r_cur += k - 1
        if k > 0:
            engine.send_requests(update.task_id, k)

    def handle_barrier(self, engine: Engine) -> None:
        raise SimulationError("asynchronous server received a sync barrier event")

    def model_snapshot(self, task_id: int) -> np.ndarray:
        return self._states[task_id].model

    def current_round(self, task_id: int) -> int:
        return self._states[task_id].round

    def task_metrics(self, task_id: int) -> dict[str, float | int]:
        st = self._states[task_id]
        mean = st.staleness_total / st.staleness_count if st.staleness_count else 0.0
        return {
            "r": st.r_target,
            "b": st.b,
            "staleness_mean": mean,
            "staleness_max": st.staleness_max,
            "c": self.c,
            "dropped": st.dropped,
        }

    def mark_finished(self, engine: Engine, task_id: int) -> None:
        st = self._states[task_id]
        if st.finished:
            return
        st.finished = True
        self.released_budget += st.r_target
        st.r_target = 0

    def on_dispatch_skipped(self, task_id: int) -> None:
        st = self._states[task_id]
        st.r_cur = max(0, st.r_cur - 1)

    # -- internals -----------------------------------------------------------

    def state(self, task_id: int) -> ServerTaskState:
        """Direct state access for tests and diagnostics."""
        return self._states[task_id]

    def _alloc_views(self) -> list[TaskAllocView]:
        return [
            TaskAllocView(
                task_id=tid,
                r_target=st.r_target,
                buffer_target=st.b,
                finished=st.finished,
                step_scale=st.step_scale,
                history=tuple(st.history),
            )
            for tid, st in self._states.items()
        ]

    def _aggregate(self, st: ServerTaskState, now: float) -> None:
        stack = np.stack([u.delta for u in st.buffer])
        mean_delta = stack.mean(axis=0)
        st.model = st.model - st.step_scale * mean_delta
        if not np.all(np.isfinite(st.model)):
            raise SimulationError(
                f"aggregate produced non-finite model on task {st.spec.task_id} "
                f"at round {st.round} (buffer size {len(st.buffer)})"
            )
        st.buffer.clear()
        st.round += 1
        st.aggregation_times.append(now)
        if st.model_history is not None:
            st.model_history.append(np.array(st.model, copy=True))
