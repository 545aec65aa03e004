"""Proportional batch splitting and exactly-once epoch iteration."""

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectkit.errors import BatchTooSmall, Infeasible, ValueOutOfRange
from affectkit.sampler import TaskPartition, aligned_batch_sizes, epoch_iterator


class TestAlignedBatchSizes:
    def test_proportional_split(self):
        assert aligned_batch_sizes((401_000, 247_000, 103_000), 751) == (401, 247, 103)

    def test_equal_pools(self):
        assert aligned_batch_sizes((10, 10, 10), 6) == (2, 2, 2)

    def test_two_to_one_ratio(self):
        assert aligned_batch_sizes((10, 5, 5), 4) == (2, 1, 1)

    def test_scale_invariant(self):
        assert aligned_batch_sizes((4, 2, 2), 8) == aligned_batch_sizes(
            (400, 200, 200), 8
        )

    def test_empty_pool_gets_zero(self):
        sizes = aligned_batch_sizes((12, 0, 6), 9)
        assert sizes[1] == 0
        assert sum(sizes) == 9

    def test_nonempty_pools_get_at_least_one(self):
        sizes = aligned_batch_sizes((1000, 1, 1), 3)
        assert sizes == (1, 1, 1)

    def test_total_preserved(self):
        for total in range(3, 40):
            assert sum(aligned_batch_sizes((17, 5, 29), total)) == total

    def test_all_empty(self):
        with pytest.raises(Infeasible):
            aligned_batch_sizes((0, 0, 0), 4)

    def test_batch_smaller_than_pool_count(self):
        with pytest.raises(Infeasible):
            aligned_batch_sizes((5, 5, 5), 2)

    def test_negative_size(self):
        with pytest.raises(ValueOutOfRange):
            aligned_batch_sizes((5, -1, 5), 4)

    @given(
        st.tuples(
            st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 5000)
        ),
        st.integers(3, 256),
    )
    @settings(max_examples=100, deadline=None)
    def test_allocation_properties(self, sizes, total):
        if sum(sizes) == 0:
            return
        try:
            alloc = aligned_batch_sizes(sizes, total)
        except Infeasible:
            assert total < sum(1 for s in sizes if s > 0)
            return
        assert sum(alloc) == total
        for s, b in zip(sizes, alloc):
            assert (b == 0) == (s == 0)


class TestTaskPartition:
    def test_overlapping_pools_rejected(self):
        with pytest.raises(ValueOutOfRange):
            TaskPartition(va_ids=("a", "b"), au_ids=("b",))

    def test_zero_chunk_for_nonempty_pool(self):
        with pytest.raises(BatchTooSmall):
            TaskPartition(va_ids=("a",), batch_sizes=(0, 1, 1))

    def test_epoch_length_is_slowest_pool(self):
        part = TaskPartition(
            va_ids=tuple(range(10)),
            au_ids=tuple(range(10, 13)),
            expr_ids=tuple(range(20, 27)),
            batch_sizes=(2, 1, 4),
        )
        assert part.epoch_length() == 5  # va: 5, au: 3, expr: 2 chunks

    def test_empty_partition(self):
        assert TaskPartition().epoch_length() == 0


class TestEpochIterator:
    def make_partition(self):
        return TaskPartition(
            va_ids=tuple(f"v{i}" for i in range(7)),
            au_ids=tuple(f"a{i}" for i in range(5)),
            expr_ids=tuple(f"e{i}" for i in range(6)),
            batch_sizes=(3, 2, 2),
        )

    def test_each_id_exactly_once(self):
        part = self.make_partition()
        seen = Counter()
        for batch in epoch_iterator(part, seed=0):
            seen.update(batch.all_ids())
        expected = Counter(part.va_ids + part.au_ids + part.expr_ids)
        assert seen == expected

    def test_chunks_keep_type_grouping(self):
        part = self.make_partition()
        for batch in epoch_iterator(part, seed=0):
            assert all(i.startswith("v") for i in batch.va)
            assert all(i.startswith("a") for i in batch.au)
            assert all(i.startswith("e") for i in batch.expr)

    def test_deterministic_per_seed_and_epoch(self):
        part = self.make_partition()
        a = [b.all_ids() for b in epoch_iterator(part, seed=5, epoch=2)]
        b = [b.all_ids() for b in epoch_iterator(part, seed=5, epoch=2)]
        assert a == b

    def test_epochs_reshuffle(self):
        part = self.make_partition()
        a = [b.all_ids() for b in epoch_iterator(part, seed=5, epoch=0)]
        b = [b.all_ids() for b in epoch_iterator(part, seed=5, epoch=1)]
        assert a != b

    def test_shuffle_off_is_sequential(self):
        part = self.make_partition()
        first = next(iter(epoch_iterator(part, seed=0, shuffle=False)))
        assert first.va == ("v0", "v1", "v2")
        assert first.au == ("a0", "a1")
        assert first.expr == ("e0", "e1")

    def test_short_final_chunk(self):
        part = TaskPartition(va_ids=("v0", "v1", "v2"), batch_sizes=(2, 1, 1))
        batches = list(epoch_iterator(part, seed=0, shuffle=False))
        assert [len(b.va) for b in batches] == [2, 1]

    def test_exactly_once_on_random_partitions(self):
        import numpy as np

        rng = np.random.default_rng(13)
        for trial in range(20):
            counts = rng.integers(1, 60, size=3)
            ids = iter(range(int(counts.sum())))
            pools = [tuple(next(ids) for _ in range(c)) for c in counts]
            total = int(rng.integers(3, 12))
            sizes = aligned_batch_sizes([len(p) for p in pools], total)
            part = TaskPartition(
                va_ids=pools[0], au_ids=pools[1], expr_ids=pools[2], batch_sizes=sizes
            )
            seen = Counter()
            for batch in epoch_iterator(part, seed=trial):
                seen.update(batch.all_ids())
            assert seen == Counter(pools[0] + pools[1] + pools[2])
