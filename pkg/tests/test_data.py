import numpy as np
import pytest

from conet.data import (
    CrossDomainDataset,
    InteractionDataset,
    SyntheticConfig,
    align_domains,
    epoch_batches,
    generate_synthetic,
    load_interactions,
    load_split_manifest,
    loo_split,
    reduce_training,
    sample_eval_negatives,
    save_split_manifest,
    write_interactions,
)
from conet.errors import ConfigError, DataError
from conet.numerics import derive_rng


def make_dataset(adjacency, num_items, ids=True):
    return InteractionDataset(
        num_users=len(adjacency),
        num_items=num_items,
        adjacency=adjacency,
        user_ids=[f"u{k}" for k in range(len(adjacency))] if ids else None,
        item_ids=[f"i{k}" for k in range(num_items)] if ids else None,
    )


class TestLoadInteractions:
    def test_dedup(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("a\tx\na\tx\na\ty\n")
        ds = load_interactions(path, min_user_interactions=1)
        assert (ds.num_users, ds.num_items, ds.num_interactions) == (1, 2, 2)

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("")
        with pytest.raises(DataError):
            load_interactions(path, min_user_interactions=1)

    def test_density_hand_count(self, tmp_path):
        # 5 lines, 2 users, 3 items; duplicates collapse to 3 of 6 cells
        path = tmp_path / "t.tsv"
        path.write_text("a\tx\na\tx\na\ty\nb\tz\nb\tz\n")
        ds = load_interactions(path, min_user_interactions=1)
        assert ds.num_users == 2 and ds.num_items == 3
        assert ds.density == 0.5

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("a\tx\nbroken-line\n")
        with pytest.raises(DataError, match="line 2"):
            load_interactions(path, min_user_interactions=1)

    def test_comments_and_extra_columns_ignored(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("# header\na\tx\textra\tcols\na\ty\n")
        ds = load_interactions(path, min_user_interactions=1)
        assert ds.num_interactions == 2

    def test_min_interactions_filter(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("a\tx\na\ty\na\tz\nb\tx\n")
        ds = load_interactions(path, min_user_interactions=3)
        assert ds.num_users == 1
        assert ds.user_ids == ("a",)
        # items of the dropped user vanish from the index space
        assert ds.num_items == 3

    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("a\tx\na\ty\nb\ty\nb\tz\nc\tx\n")
        ds = load_interactions(path, min_user_interactions=1)
        out = tmp_path / "copy.tsv"
        write_interactions(ds, out)
        again = load_interactions(out, min_user_interactions=1)
        assert ds.same_interactions(again)
        assert ds.user_ids == again.user_ids
        assert ds.item_ids == again.item_ids


class TestAlignDomains:
    def test_disjoint_users_error(self):
        t = make_dataset([[0], [1]], 2)
        s = InteractionDataset(2, 2, [[0], [1]], user_ids=["x", "y"], item_ids=["a", "b"])
        with pytest.raises(DataError):
            align_domains(t, s)

    def test_identical_user_sets(self):
        t = make_dataset([[0, 1], [1]], 2)
        s = make_dataset([[0], [0, 1]], 2)
        data = align_domains(t, s)
        assert data.num_users == 2

    def test_intersection_by_hand(self):
        t = InteractionDataset(3, 2, [[0], [1], [0, 1]], user_ids=["a", "b", "c"],
                               item_ids=["i", "j"])
        s = InteractionDataset(3, 2, [[0], [1], [0]], user_ids=["b", "c", "d"],
                               item_ids=["k", "l"])
        data = align_domains(t, s)
        assert data.num_users == 2
        assert data.target.user_ids == ("b", "c")
        # source items reindexed in first-appearance order over shared users
        assert data.source.item_ids == ("k", "l")
        assert list(data.source.items_of(0)) == [0]
        assert list(data.source.items_of(1)) == [1]


def small_cross_domain(num_users=12, per_user_target=6, per_user_source=4,
                       n_target=120, n_source=80):
    rng = np.random.default_rng(3)
    t_adj = [sorted(rng.choice(n_target, per_user_target, replace=False)) for _ in range(num_users)]
    s_adj = [sorted(rng.choice(n_source, per_user_source, replace=False)) for _ in range(num_users)]
    return CrossDomainDataset(
        target=make_dataset(t_adj, n_target),
        source=make_dataset(s_adj, n_source),
    )


class TestLooSplit:
    def test_holds_out_two_per_eval_user(self):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(0, "split"))
        for u in split.evaluated_users:
            assert split.train.target.items_of(u).size == 4
            assert not split.train.target.has(u, split.test[u])
            assert not split.train.target.has(u, split.validation[u])
            assert split.test[u] != split.validation[u]

    def test_cold_users_keep_everything_and_skip_eval(self):
        data = CrossDomainDataset(
            target=make_dataset([[0, 1], [2, 3, 4]], 120),
            source=make_dataset([[0], [1]], 80),
        )
        split = loo_split(data, derive_rng(0, "split"))
        assert 0 not in split.test
        assert split.train.target.items_of(0).size == 2
        assert 1 in split.test

    def test_deterministic(self):
        data = small_cross_domain()
        a = loo_split(data, derive_rng(9, "split"))
        b = loo_split(data, derive_rng(9, "split"))
        assert a.test == b.test and a.validation == b.validation
        assert all(np.array_equal(a.eval_negatives[u], b.eval_negatives[u]) for u in a.test)

    def test_partition_union_is_original(self):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(4, "split"))
        for u in split.evaluated_users:
            rebuilt = set(split.train.target.items_of(u)) | {split.test[u], split.validation[u]}
            assert rebuilt == set(data.target.items_of(u))
            assert len(rebuilt) == data.target.items_of(u).size

    def test_source_never_split(self):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(4, "split"))
        assert split.train.source.same_interactions(data.source)

    def test_negatives_exclude_all_interactions(self):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(4, "split"))
        for u in split.evaluated_users:
            negs = split.eval_negatives[u]
            assert negs.size == 99
            assert np.unique(negs).size == 99
            for j in negs:
                assert not data.target.has(u, int(j))


class TestSampleEvalNegatives:
    def test_forced_complement(self):
        ds = make_dataset([[5]], 100)
        negs = sample_eval_negatives(ds, 0, derive_rng(0, "n"))
        assert sorted(negs) == [i for i in range(100) if i != 5]

    def test_too_few_items_errors(self):
        ds = make_dataset([[0]], 50)
        with pytest.raises(DataError):
            sample_eval_negatives(ds, 0, derive_rng(0, "n"))

    def test_deterministic(self):
        ds = make_dataset([[5, 7]], 300)
        a = sample_eval_negatives(ds, 0, derive_rng(1, "n"))
        b = sample_eval_negatives(ds, 0, derive_rng(1, "n"))
        assert np.array_equal(a, b)


class TestEpochBatches:
    def test_batch_sizes_and_labels(self):
        data = small_cross_domain(num_users=40, per_user_target=8)
        batches = list(epoch_batches(data.target, "target", 128, 1, derive_rng(0, "b")))
        full = batches[0]
        assert len(full) == 256
        assert int(full.labels.sum()) == 128
        total_pos = sum(int(b.labels.sum()) for b in batches)
        assert total_pos == data.target.num_interactions

    def test_zero_ratio_gives_positives_only(self):
        data = small_cross_domain()
        batches = list(epoch_batches(data.target, "target", 16, 0, derive_rng(0, "b")))
        assert all(b.labels.all() for b in batches)

    def test_negatives_avoid_adjacency(self):
        data = small_cross_domain()
        for batch in epoch_batches(data.target, "target", 32, 2, derive_rng(1, "b")):
            for u, i, y in zip(batch.users, batch.items, batch.labels):
                if y == 0:
                    assert not data.target.has(int(u), int(i))
                else:
                    assert data.target.has(int(u), int(i))

    def test_epoch_covers_positives_without_replacement(self):
        data = small_cross_domain()
        seen = []
        for batch in epoch_batches(data.target, "target", 8, 0, derive_rng(2, "b")):
            seen += [(int(u), int(i)) for u, i in zip(batch.users, batch.items)]
        assert sorted(seen) == sorted(map(tuple, data.target.pairs()))

    def test_to_examples_view(self):
        data = small_cross_domain()
        batch = next(epoch_batches(data.target, "target", 4, 1, derive_rng(3, "b")))
        examples = batch.to_examples()
        assert len(examples) == 8
        assert {e.domain for e in examples} == {"target"}
        assert all((e.label == 1) == data.target.has(e.user, e.item) for e in examples)


class TestGenerateSynthetic:
    def test_deterministic(self):
        cfg = SyntheticConfig(num_users=60, num_items_target=200, num_items_source=100,
                              latent_dim=4, target_density=0.05, source_density=0.1, seed=5)
        a = generate_synthetic(cfg)
        b = generate_synthetic(cfg)
        assert a.target.same_interactions(b.target)
        assert a.source.same_interactions(b.source)

    def test_density_within_contract(self):
        cfg = SyntheticConfig(num_users=200, num_items_target=400, num_items_source=200,
                              latent_dim=4, target_density=0.05, source_density=0.1, seed=1)
        data = generate_synthetic(cfg)
        assert abs(data.target.density - 0.05) / 0.05 < 0.05
        assert abs(data.source.density - 0.1) / 0.1 < 0.05

    def test_relatedness_extremes_differ(self):
        base = dict(num_users=50, num_items_target=100, num_items_source=100,
                    latent_dim=4, target_density=0.1, source_density=0.1, seed=2)
        rho0 = generate_synthetic(SyntheticConfig(relatedness=0.0, **base))
        rho1 = generate_synthetic(SyntheticConfig(relatedness=1.0, **base))
        assert rho0.target.same_interactions(rho1.target)  # target untouched by rho
        assert not rho0.source.same_interactions(rho1.source)

    def test_rho_one_swapped_domains_mirror(self):
        a = generate_synthetic(SyntheticConfig(
            num_users=50, num_items_target=100, num_items_source=80, latent_dim=4,
            relatedness=1.0, target_density=0.1, source_density=0.05, seed=7))
        b = generate_synthetic(SyntheticConfig(
            num_users=50, num_items_target=80, num_items_source=100, latent_dim=4,
            relatedness=1.0, target_density=0.05, source_density=0.1, seed=7))
        assert a.target.same_interactions(b.source)
        assert a.source.same_interactions(b.target)

    def test_interactions_per_user_matches_density(self):
        cfg = SyntheticConfig(num_users=100, num_items_target=200, num_items_source=100,
                              latent_dim=4, target_density=0.05, source_density=0.1, seed=3)
        data = generate_synthetic(cfg)
        counts = [data.target.items_of(u).size for u in range(100)]
        assert min(counts) == 10  # 0.05 * 200; coverage swaps keep counts fixed
        assert np.mean(counts) < 10.1
        assert abs(data.target.density - 0.05) / 0.05 < 0.05

    def test_tsv_round_trip_identity(self, tmp_path):
        cfg = SyntheticConfig(num_users=40, num_items_target=60, num_items_source=50,
                              latent_dim=4, target_density=0.1, source_density=0.1, seed=9)
        data = generate_synthetic(cfg)
        path = tmp_path / "target.tsv"
        write_interactions(data.target, path)
        again = load_interactions(path, min_user_interactions=1)
        assert data.target.same_interactions(again)
        assert data.target.item_ids == again.item_ids

    def test_unachievable_density_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(num_items_target=150, target_density=0.05).validate()


class TestReduceTraining:
    def test_zero_removal_is_identity(self):
        split = loo_split(small_cross_domain(), derive_rng(0, "split"))
        result = reduce_training(split, 0, derive_rng(0, "r"))
        assert result.removed == 0
        assert result.split.train.target.same_interactions(split.train.target)

    def test_floor_of_one_interaction(self):
        data = CrossDomainDataset(
            target=make_dataset([[0], [1, 2, 3, 4]], 120),
            source=make_dataset([[0], [1]], 80),
        )
        split = loo_split(data, derive_rng(0, "split"))
        result = reduce_training(split, 10, derive_rng(0, "r"))
        for u in range(2):
            assert result.split.train.target.items_of(u).size >= 1

    def test_counts_and_untouched_holdouts(self):
        split = loo_split(small_cross_domain(num_users=20), derive_rng(1, "split"))
        before = split.train.target.num_interactions
        result = reduce_training(split, 1, derive_rng(1, "r"))
        assert result.removed == 20
        assert result.total_before == before
        assert result.split.train.target.num_interactions == before - 20
        assert result.split.test == split.test
        assert result.split.validation == split.validation
        assert all(np.array_equal(result.split.eval_negatives[u], split.eval_negatives[u])
                   for u in split.test)

    def test_deterministic(self):
        split = loo_split(small_cross_domain(), derive_rng(2, "split"))
        a = reduce_training(split, 2, derive_rng(5, "r"))
        b = reduce_training(split, 2, derive_rng(5, "r"))
        assert a.split.train.target.same_interactions(b.split.train.target)


class TestSplitManifest:
    def test_round_trip(self, tmp_path):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(3, "split"))
        path = tmp_path / "split.json"
        save_split_manifest(split, path)
        again = load_split_manifest(data, path)
        assert again.test == split.test
        assert again.validation == split.validation
        assert all(np.array_equal(again.eval_negatives[u], split.eval_negatives[u])
                   for u in split.test)
        assert again.train.target.same_interactions(split.train.target)

    def test_rejects_wrong_dataset(self, tmp_path):
        data = small_cross_domain()
        split = loo_split(data, derive_rng(3, "split"))
        path = tmp_path / "split.json"
        save_split_manifest(split, path)
        other = small_cross_domain(num_users=11)
        with pytest.raises(DataError):
            load_split_manifest(other, path)
