"""Deterministic stream derivation for every random decision in a run.

All randomness flows from a single integer seed through named
``SeedSequence`` spawn keys, so any two runs with the same seed consume
identical streams regardless of wall-clock interleaving. Philox is
counter-based and stable across platforms and numpy versions.
"""

from __future__ import annotations

from numpy.random import Generator, Philox, SeedSequence

# Top-level branch indices of the seed tree. Streams under different
# branches never collide.
_DATA = 0
_PROFILES = 1
_SERVER = 2
_REQUEST = 3


def _generator(seed: int, spawn_key: tuple[int, ...]) -> Generator:
    return Generator(Philox(SeedSequence(seed, spawn_key=spawn_key)))


def data_rng(seed: int, task_id: int) -> Generator:
    """Stream for dataset synthesis and partitioning of one task.

    Keyed only by (seed, task_id) so paired algorithm comparisons see
    identical data and shards.
    """
    return _generator(seed, (_DATA, task_id))


def profile_rng(seed: int) -> Generator:
    """Stream for client speed-class assignment."""
    return _generator(seed, (_PROFILES,))


def server_rng(seed: int) -> Generator:
    """Stream for server-side decisions: client sampling and availability."""
    return _generator(seed, (_SERVER,))


def request_rngs(
    seed: int, task_id: int, client_id: int, dispatch_no: int
) -> tuple[Generator, Generator]:
    """Streams for one dispatched training request.

    Returns ``(training, delay)`` generators keyed by the request identity
    (task, client, per-pair dispatch counter). Event-processing order can
    never change which batches a given request samples or how long it runs.
    """
    root = SeedSequence(seed, spawn_key=(_REQUEST, task_id, client_id, dispatch_no))
    train_seq, delay_seq = root.spawn(2)
    return Generator(Philox(train_seq)), Generator(Philox(delay_seq))
