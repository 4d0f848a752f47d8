"""Periodic resource reallocation across concurrently trained tasks.

Every ``c_period`` received updates (dynamic mode only) the server
re-splits the total concurrent-request budget proportionally to each
task's estimated heterogeneity: the square root of a normalized update
variance computed from the last few buffered updates. Buffer sizes follow
their task's request count so the requests-per-aggregation ratio is
preserved. Everything here is a pure function over snapshots; the caller
applies the returned plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

#: Updates retained per task for variance estimation.
DEFAULT_HISTORY_SIZE = 8
#: Reallocation cadence: one pass after roughly this fraction of
#: (tasks x total requests) updates have been received.
C_PERIOD_FACTOR = 0.75


@dataclass(frozen=True)
class TaskAllocView:
    """Read-only slice of one task's server state, as seen by the planner."""

    task_id: int
    r_target: int
    buffer_target: int
    finished: bool
    #: eta_c * eta_s * tau, the update-to-model scaling of this task
    step_scale: float
    history: Sequence[np.ndarray]


@dataclass(frozen=True)
class ReallocPlan:
    """New request and buffer targets; passthrough when not triggered."""

    triggered: bool
    r_new: Mapping[int, int]
    b_new: Mapping[int, int]
    sigma_sq: Mapping[int, float]


def default_c_period(n_tasks: int, r_total: int) -> int:
    """Reallocation cadence: round(0.75 * n_tasks * r_total), at least 1."""
    if n_tasks < 1 or r_total < 1:
        raise ValueError("n_tasks and r_total must be positive")
    return max(1, int(math.floor(C_PERIOD_FACTOR * n_tasks * r_total + 0.5)))


def estimate_variances(
    histories: Mapping[int, Sequence[np.ndarray]],
    step_scales: Mapping[int, float],
) -> dict[int, float]:
    """Normalized per-task update variance, scaled by the task's step size.

    For the V retained updates of task m with mean delta_bar:
    sigma_sq[m] = step_scale[m] * (1/V) * sum_i ||delta_i - delta_bar||^2
    / ||delta_bar||^2. A zero mean update yields 0 (no usable signal).
    """
    out: dict[int, float] = {}
    for task_id, history in histories.items():
        if len(history) < 2:
            raise ValueError(f"task {task_id}: need at least 2 updates to estimate variance")
        stack = np.stack([np.asarray(d, dtype=np.float64) for d in history])
        mean = stack.mean(axis=0)
        mean_sq = float(mean @ mean)
        if mean_sq == 0.0:
            out[task_id] = 0.0
            continue
        devs = stack - mean
        rel_var = float(np.sum(devs * devs)) / (len(history) * mean_sq)
        out[task_id] = step_scales[task_id] * rel_var
    return out


def apportion_largest_remainder(
    weights: Sequence[float], total: int, min_each: int = 1
) -> list[int]:
    """Integer allocation proportional to nonnegative weights.

    Hamilton/largest-remainder rounding; remainder ties break toward the
    lower index. All-zero weights fall back to a uniform split. Each entry
    gets at least ``min_each``, funded by the largest allocations.
    """
    n = len(weights)
    if n == 0:
        raise ValueError("nothing to apportion")
    if total < n * min_each:
        raise ValueError(f"total {total} cannot give {n} entries at least {min_each} each")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() == 0.0:
        w = np.ones(n)
    quotas = w / w.sum() * total
    alloc = np.floor(quotas).astype(np.int64)
    order = np.argsort(-(quotas - alloc), kind="stable")
    for i in range(total - int(alloc.sum())):
        alloc[order[i]] += 1
    while True:
        short = np.flatnonzero(alloc < min_each)
        if len(short) == 0:
            break
        donor = int(np.argmax(alloc))
        alloc[donor] -= 1
        alloc[short[0]] += 1
    return [int(a) for a in alloc]


def compute_plan(
    option: str,
    c: int,
    c_period: int,
    views: Sequence[TaskAllocView],
    released_budget: int = 0,
) -> ReallocPlan:
    """Decide new (R, b) targets after the c-th received update.

    Option "S" (static) and off-cadence calls pass through unchanged. A
    triggered pass re-apportions the live budget (live targets plus any
    budget released by finished tasks) proportionally to sqrt(sigma_sq),
    then rescales each buffer by its task's request ratio (round to
    nearest, floor 1). If any live task has fewer than 2 retained updates
    the pass is skipped.
    """
    if option not in ("S", "D"):
        raise ValueError("option must be 'S' (static) or 'D' (dynamic)")
    passthrough = ReallocPlan(
        triggered=False,
        r_new={v.task_id: v.r_target for v in views},
        b_new={v.task_id: v.buffer_target for v in views},
        sigma_sq={},
    )
    if option == "S" or c_period < 1 or c % c_period != 0:
        return passthrough
    live = [v for v in views if not v.finished]
    if not live or any(len(v.history) < 2 for v in live):
        return passthrough

    sigma_sq = estimate_variances(
        {v.task_id: v.history for v in live},
        {v.task_id: v.step_scale for v in live},
    )
    weights = [math.sqrt(sigma_sq[v.task_id]) for v in live]
    budget = sum(v.r_target for v in live) + released_budget
    new_r = apportion_largest_remainder(weights, budget, min_each=1)

    r_new = {v.task_id: v.r_target for v in views}
    b_new = {v.task_id: v.buffer_target for v in views}
    for view, r in zip(live, new_r):
        r_new[view.task_id] = r
        scaled = view.buffer_target * r / view.r_target
        b_new[view.task_id] = max(1, int(math.floor(scaled + 0.5)))
    return ReallocPlan(triggered=True, r_new=r_new, b_new=b_new, sigma_sq=sigma_sq)
