"""Multi-source batch scheduling.

Training draws from three label pools (VA, AU, EXPR) at once: every
iteration takes one chunk from each pool and concatenates them, and the
per-pool chunk sizes are chosen so all pools run out together after one
epoch. ``aligned_batch_sizes`` picks those chunk sizes; ``epoch_iterator``
walks the pools in seeded shuffled order, exactly once per epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .errors import BatchTooSmall, Infeasible, ValueOutOfRange


def aligned_batch_sizes(set_sizes: Sequence[int], total_batch: int) -> Tuple[int, ...]:
    """Split ``total_batch`` across pools proportionally to their sizes.

    Largest-remainder rounding, floored at 1 per nonempty pool, then a
    greedy repair that minimizes the spread of the per-pool epoch lengths
    n_k / b_k so every pool finishes in the same number of iterations
    (exactly equal whenever the proportions allow it). Empty pools get 0.
    Scale-invariant in the pool sizes.
    """
    sizes = [int(s) for s in set_sizes]
    if any(s < 0 for s in sizes):
        raise ValueOutOfRange("set sizes must be nonnegative")
    active = [i for i, s in enumerate(sizes) if s > 0]
    if not active:
        raise Infeasible("all pools are empty")
    if total_batch < len(active):
        raise Infeasible(
            f"total batch {total_batch} cannot cover {len(active)} nonempty pools"
        )
    total_size = sum(sizes)
    quotas = {i: sizes[i] * total_batch / total_size for i in active}
    alloc = {i: math.floor(quotas[i]) for i in active}
    leftover = total_batch - sum(alloc.values())
    by_remainder = sorted(active, key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in by_remainder[:leftover]:
        alloc[i] += 1

    # floor repair: promote empty allocations, shrinking the largest pool
    while any(alloc[i] == 0 for i in active):
        zero = next(i for i in active if alloc[i] == 0)
        donor = max(active, key=lambda i: (alloc[i], -i))
        if alloc[donor] <= 1:
            raise Infeasible("cannot give every nonempty pool a sample")
        alloc[donor] -= 1
        alloc[zero] += 1

    def spread(a):
        ratios = [sizes[i] / a[i] for i in active]
        return max(ratios) - min(ratios)

    # local search: move single units while epoch lengths get more even
    improved = True
    while improved:
        improved = False
        best = spread(alloc)
        best_move = None
        for i in active:
            if alloc[i] <= 1:
                continue
            for j in active:
                if i == j:
                    continue
                trial = dict(alloc)
                trial[i] -= 1
                trial[j] += 1
                s = spread(trial)
                if s < best - 1e-12:
                    best = s
                    best_move = (i, j)
        if best_move:
            i, j = best_move
            alloc[i] -= 1
            alloc[j] += 1
            improved = True

    return tuple(alloc.get(i, 0) for i in range(len(sizes)))


@dataclass(frozen=True)
class TaskPartition:
    """Disjoint sample-id pools per label type, with per-pool chunk sizes."""

    va_ids: Tuple = ()
    au_ids: Tuple = ()
    expr_ids: Tuple = ()
    batch_sizes: Tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        pools = (self.va_ids, self.au_ids, self.expr_ids)
        seen = set()
        for pool in pools:
            for sample_id in pool:
                if sample_id in seen:
                    raise ValueOutOfRange(f"sample id {sample_id!r} appears in two pools")
                seen.add(sample_id)
        for pool, b in zip(pools, self.batch_sizes):
            if pool and b < 1:
                raise BatchTooSmall(f"chunk size {b} for a nonempty pool")

    def epoch_length(self) -> int:
        lengths = [
            math.ceil(len(pool) / b)
            for pool, b in zip(
                (self.va_ids, self.au_ids, self.expr_ids), self.batch_sizes
            )
            if pool
        ]
        return max(lengths) if lengths else 0


@dataclass(frozen=True)
class ConcatBatch:
    """One training iteration's ids, still grouped by label type."""

    va: Tuple
    au: Tuple
    expr: Tuple

    def all_ids(self) -> Tuple:
        return self.va + self.au + self.expr


def epoch_iterator(
    partition: TaskPartition,
    seed: int,
    epoch: int = 0,
    shuffle: bool = True,
) -> Iterator[ConcatBatch]:
    """Yield the epoch's concatenated batches.

    Each pool is walked in sequential chunks of its batch size over a
    per-epoch shuffle (seeded by (seed, epoch), so epochs differ but runs
    repeat); the last chunk may be short. Every id is emitted exactly
    once per epoch.
    """
    pools = (partition.va_ids, partition.au_ids, partition.expr_ids)
    orders: List[Tuple] = []
    for k, pool in enumerate(pools):
        pool = tuple(pool)
        if shuffle and pool:
            rng = np.random.default_rng([int(seed), int(epoch), k])
            pool = tuple(pool[i] for i in rng.permutation(len(pool)))
        orders.append(pool)
    steps = partition.epoch_length()
    for it in range(steps):
        chunks = []
        for pool, b in zip(orders, partition.batch_sizes):
            if not pool:
                chunks.append(())
                continue
            chunks.append(pool[it * b : (it + 1) * b])
        yield ConcatBatch(va=chunks[0], au=chunks[1], expr=chunks[2])
