"""Buffered asynchronous training vs a synchronous barrier, paired seeds.

Two logistic-regression tasks share one client pool; task 1 is twice as
expensive per local step. The synchronous baseline waits each round for the
first k of its sampled clients, so every round is paced by stragglers. The
buffered asynchronous server aggregates whenever b updates arrive and keeps
all clients busy, which is where its wall-clock advantage comes from.

Run:  python3 demos/03_async_vs_sync.py        (about 10 seconds)
"""

import numpy as np

from fstsim.config import ExperimentConfig, TaskConfig
from fstsim.harness import compare


def make_cfg(algorithm):
    def task(tid, beta, target):
        return TaskConfig(task_id=tid, kind="logistic", tau=2, eta_c=0.05,
                          eta_s=1.0, target_metric=target, target_kind="loss",
                          batch_size=8, base_beta=beta, r0=20, b0=5,
                          n_features=2, n_classes=2, n_train=600, n_eval=200,
                          alpha=0.3)

    return ExperimentConfig(
        tasks=(task(0, 1.0, 0.10), task(1, 2.0, 0.35)),
        algorithm=algorithm, n_clients=60, availability=0.9, k_sync=15,
        eval_interval=2.0, stop_on_targets=True, max_sim_time=400.0,
        seed=100, runs=5,
    )


report = compare(make_cfg("mm_sync"), make_cfg("fedast_static"), paired=True)

print("time until BOTH tasks reach their loss target, per paired seed:")
print(f"  {'seed':<6}{'sync':>10}{'async':>10}{'gain':>9}")
overall = report["overall"]
for i, (a, b, g) in enumerate(zip(overall["finish_all_a"],
                                  overall["finish_all_b"],
                                  overall["per_seed_gain_pct"])):
    print(f"  {100 + i:<6}{a:>10.1f}{b:>10.1f}{g:>8.1f}%")
print(f"\n  mean per-seed gain: {np.mean(overall['per_seed_gain_pct']):.1f}%")
for tid in ("0", "1"):
    t = report["tasks"][tid]
    print(f"  task {tid}: all targets reached "
          f"sync={t['all_reached_a']} async={t['all_reached_b']}")
print("\nSync runs that miss a target inside the time limit are charged the")
print("full limit, so the printed gains understate the async advantage.")
