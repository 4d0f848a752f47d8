"""Client-side local SGD producing normalized update directions.

A request runs ``tau`` stochastic gradient steps from a frozen model
snapshot and returns the mean of the gradients it took. That mean equals
(x_start - x_end) / (tau * eta_c) in exact arithmetic; accumulating the
gradients keeps the identity with the single gradient at tau = 1 exact in
floating point as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objectives import ClientShard, TaskSpec, local_stoch_grad

#: Any iterate coordinate beyond this magnitude aborts the request.
DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Local training produced a non-finite or runaway iterate."""

    def __init__(self, task_id: int, client_id: int, step_index: int):
        super().__init__(
            f"local training diverged on task {task_id}, client {client_id}, "
            f"step {step_index}"
        )
        self.task_id = task_id
        self.client_id = client_id
        self.step_index = step_index


@dataclass(eq=False)
class Update:
    """A dispatched training request and, once computed, its result.

    ``dispatch_round`` is the server round of the model snapshot the client
    trained on; ``staleness`` is filled in by the server at arrival time as
    (current round - dispatch_round).
    """

    task_id: int
    client_id: int
    delta: np.ndarray
    dispatch_round: int
    dispatch_time: float
    arrival_time: float
    staleness: int = field(default=-1)


def local_train(
    task: TaskSpec,
    x_snapshot: np.ndarray,
    shard: ClientShard,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run tau local SGD steps and return the averaged gradient direction.

    The snapshot is never mutated. Raises DivergenceError (with the
    offending step index) instead of returning a poisoned update if an
    iterate goes non-finite or exceeds DIVERGENCE_LIMIT in any coordinate.
    """
    x = np.array(x_snapshot, dtype=np.float64, copy=True)
    grad_sum = np.zeros_like(x)
    for step in range(1, task.tau + 1):
        g = local_stoch_grad(task, shard, x, rng)
        grad_sum += g
        x -= task.eta_c * g
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(task.task_id, shard.client_id, step)
    return grad_sum / task.tau
