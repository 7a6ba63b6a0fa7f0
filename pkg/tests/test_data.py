"""Synthetic generation, CSV ingestion, partitioning, and splits."""

import numpy as np
import pytest

from fairfedsim.data import (
    CELL_ORDER,
    ClientDataset,
    CsvSchema,
    GaussianClientSpec,
    ImbalanceRecipe,
    RandomEven,
    Sample,
    generate_clients,
    generate_gaussian_client,
    load_csv_dataset,
    partition_clients,
    train_eval_split,
)
from fairfedsim.errors import CapacityError, ParseError, ValidationError
from fairfedsim.fairness import GROUP_A, GROUP_B


def balanced_spec(**kw):
    defaults = dict(mu_1_a=2.0, mu_0_a=0.0, mu_1_b=2.0, mu_0_b=0.0, sigma=1.0)
    defaults.update(kw)
    return GaussianClientSpec(**defaults)


class TestGenerator:
    def test_exact_division_gives_equal_cells(self):
        spec = balanced_spec(n_total=1200)
        client = generate_gaussian_client(spec, seed=0)
        assert client.n == 1200
        assert all(client.cell_count(g, y) == 300 for (g, y) in CELL_ORDER)

    def test_remainder_assigned_group_a_label_1_first(self):
        spec = balanced_spec(n_total=10)  # 2.5 per cell
        counts = spec.cell_counts()
        assert counts == {
            (GROUP_A, 1): 3,
            (GROUP_A, 0): 3,
            (GROUP_B, 1): 2,
            (GROUP_B, 0): 2,
        }

    def test_eight_client_reference_table_first_client(self):
        # both groups N(8,1) for label 1 and N(6,1) for label 0, 1200 each
        spec = GaussianClientSpec(8, 6, 8, 6, sigma=1.0, n_per_cell=1200)
        client = generate_gaussian_client(spec, seed=3, client_id=1)
        assert client.n == 4800
        for (g, y) in CELL_ORDER:
            assert client.cell_count(g, y) == 1200
        for (g, y), mu in [((GROUP_A, 1), 8), ((GROUP_A, 0), 6)]:
            cell = client.features[(client.groups == g) & (client.labels == y), 0]
            assert abs(cell.mean() - mu) < 0.1

    def test_deterministic_given_seed(self):
        spec = balanced_spec(n_total=500)
        a = generate_gaussian_client(spec, seed=11)
        b = generate_gaussian_client(spec, seed=11)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.groups, b.groups)
        c = generate_gaussian_client(spec, seed=12)
        assert not np.array_equal(a.features, c.features)

    def test_empirical_cell_mean_converges(self):
        spec = GaussianClientSpec(7, 4, 6, 3, sigma=1.0, n_total=10000)
        client = generate_gaussian_client(spec, seed=5)
        for (g, y) in CELL_ORDER:
            cell = client.features[(client.groups == g) & (client.labels == y), 0]
            bound = 3 * 4 * spec.sigma / np.sqrt(len(cell))
            assert abs(cell.mean() - spec.mu(g, y)) < bound

    def test_invalid_rates_and_sigma_rejected(self):
        with pytest.raises(ValidationError):
            balanced_spec(sigma=0.0)
        with pytest.raises(ValidationError):
            balanced_spec(alpha_1_a=1.5)
        with pytest.raises(ValidationError):
            balanced_spec(r_a=-0.1)
        with pytest.raises(ValidationError):
            balanced_spec(n_total=100, n_per_cell=10)

    def test_multidimensional_features(self):
        spec = balanced_spec(n_total=400, dim=3)
        client = generate_gaussian_client(spec, seed=2)
        assert client.dim == 3
        cell = client.features[(client.groups == GROUP_A) & (client.labels == 1)]
        assert np.abs(cell.mean(axis=0) - 2.0).max() < 0.4

    def test_paired_groups_make_identical_distributions_identical_samples(self):
        spec = GaussianClientSpec(8, 6, 8, 6, sigma=1.0, n_per_cell=100, paired_groups=True)
        client = generate_gaussian_client(spec, seed=9)
        for y in (0, 1):
            a = client.features[(client.groups == GROUP_A) & (client.labels == y)]
            b = client.features[(client.groups == GROUP_B) & (client.labels == y)]
            assert np.array_equal(a, b)

    def test_paired_groups_shift_by_mean_difference(self):
        spec = GaussianClientSpec(9, 6, 8, 5, sigma=2.0, n_per_cell=50, paired_groups=True)
        client = generate_gaussian_client(spec, seed=9)
        for y, diff in ((1, 1.0), (0, 1.0)):
            a = client.features[(client.groups == GROUP_A) & (client.labels == y)]
            b = client.features[(client.groups == GROUP_B) & (client.labels == y)]
            assert np.allclose(a - b, diff)

    def test_paired_groups_need_equal_counts(self):
        spec = GaussianClientSpec(8, 6, 8, 6, r_a=0.6, n_total=1000, paired_groups=True)
        with pytest.raises(ValidationError, match="paired_groups"):
            generate_gaussian_client(spec, seed=0)

    def test_generate_clients_ids(self):
        clients = generate_clients([balanced_spec(n_total=40)] * 3, seed=0, first_id=1)
        assert [c.client_id for c in clients] == [1, 2, 3]

    def test_spec_dict_round_trip(self):
        spec = GaussianClientSpec(7, 4, 6, 3, sigma=2.0, alpha_1_a=0.7, n_per_cell=10,
                                  paired_groups=True)
        assert GaussianClientSpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(ValidationError, match="unknown"):
            GaussianClientSpec.from_dict({"mu_1_a": 1, "bogus": 2})


class TestClientDataset:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            ClientDataset(0, np.zeros((0, 1)), [], [])
        with pytest.raises(ValidationError):
            ClientDataset(0, [[1.0], [2.0]], [0, 2], [0, 1])
        with pytest.raises(ValidationError):
            ClientDataset(0, [[1.0]], [0], [3])

    def test_arrays_are_frozen(self):
        client = generate_gaussian_client(balanced_spec(n_total=20), seed=0)
        with pytest.raises(ValueError):
            client.features[0, 0] = 99.0

    def test_cached_counts_agree_with_samples(self):
        client = generate_gaussian_client(balanced_spec(n_total=40), seed=1)
        tally = {}
        for s in client.samples:
            key = (GROUP_A if s.group == "a" else GROUP_B, s.label)
            tally[key] = tally.get(key, 0) + 1
        assert tally == client.cell_counts()

    def test_sample_validation(self):
        with pytest.raises(ValidationError):
            Sample(np.array([1.0]), label=2, group="a")
        with pytest.raises(ValidationError):
            Sample(np.array([1.0]), label=1, group="c")


class TestCsv:
    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text)
        return str(path)

    def test_minimal_three_rows(self, tmp_path):
        path = self.write(tmp_path, "f1,label,group\n1.0,1,M\n2.0,0,F\n3.0,1,M\n")
        schema = CsvSchema("label", "group", group_value_map={"M": "a", "F": "b"})
        clients = load_csv_dataset(path, schema)
        assert len(clients) == 1
        assert clients[0].n == 3 and clients[0].dim == 1

    def test_client_column_splits(self, tmp_path):
        path = self.write(
            tmp_path,
            "f1,label,group,site\n1,1,a,0\n2,0,b,1\n3,1,a,0\n4,0,b,1\n",
        )
        clients = load_csv_dataset(path, CsvSchema("label", "group", client_column="site"))
        assert sorted(c.client_id for c in clients) == [0, 1]
        assert all(c.n == 2 for c in clients)

    def test_categorical_column_one_hot_adds_three_columns(self, tmp_path):
        # DERIVED: one numeric column + one 3-level categorical -> d = 1 + 3
        path = self.write(
            tmp_path,
            "num,color,label,group\n1,red,1,a\n2,blue,0,b\n3,green,1,a\n4,red,0,b\n",
        )
        clients = load_csv_dataset(path, CsvSchema("label", "group"))
        assert clients[0].dim == 4
        # lexicographic levels: blue, green, red
        onehot = clients[0].features[:, 1:]
        assert onehot.tolist() == [
            [0, 0, 1],
            [1, 0, 0],
            [0, 1, 0],
            [0, 0, 1],
        ]

    def test_numeric_columns_are_standardized(self, tmp_path):
        path = self.write(tmp_path, "f1,label,group\n1,1,a\n2,0,b\n3,1,a\n4,0,b\n")
        clients = load_csv_dataset(path, CsvSchema("label", "group"))
        col = clients[0].features[:, 0]
        assert col.mean() == pytest.approx(0.0, abs=1e-12)
        assert col.std() == pytest.approx(1.0, abs=1e-12)

    def test_ragged_row_names_row_number(self, tmp_path):
        path = self.write(tmp_path, "f1,label,group\n1,1,a\n2,0\n")
        with pytest.raises(ParseError, match="row 3"):
            load_csv_dataset(path, CsvSchema("label", "group"))

    def test_unmappable_group_names_row(self, tmp_path):
        path = self.write(tmp_path, "f1,label,group\n1,1,a\n2,0,x\n")
        with pytest.raises(ParseError, match="row 3"):
            load_csv_dataset(path, CsvSchema("label", "group"))

    def test_bad_label_names_row(self, tmp_path):
        path = self.write(tmp_path, "f1,label,group\n1,7,a\n")
        with pytest.raises(ParseError, match="row 2"):
            load_csv_dataset(path, CsvSchema("label", "group"))

    def test_missing_column(self, tmp_path):
        path = self.write(tmp_path, "f1,label\n1,1\n")
        with pytest.raises(ParseError, match="group"):
            load_csv_dataset(path, CsvSchema("label", "group"))


class TestPartition:
    def pool(self, n=1000, seed=0):
        return generate_gaussian_client(balanced_spec(n_total=n), seed=seed)

    def test_random_even_five_by_200(self):
        parts = partition_clients(self.pool(1000), RandomEven(5), seed=1)
        assert [p.n for p in parts] == [200] * 5

    def test_partition_round_trips_sample_multiset(self):
        pool = self.pool(500)
        parts = partition_clients(pool, RandomEven(3), seed=2)
        merged = ClientDataset.concat(parts)
        assert sorted(merged.features[:, 0]) == pytest.approx(sorted(pool.features[:, 0]))
        assert merged.labels.sum() == pool.labels.sum()
        assert (merged.groups == GROUP_B).sum() == (pool.groups == GROUP_B).sum()

    def test_recipe_exact_group_quotas(self):
        pool = self.pool(2000)  # 1000 per group
        recipe = ImbalanceRecipe([{"a": 900, "b": 100}, None])
        parts = partition_clients(pool, recipe, seed=3)
        assert (parts[0].groups == GROUP_A).sum() == 900
        assert (parts[0].groups == GROUP_B).sum() == 100
        assert parts[0].n + parts[1].n == 2000

    def test_recipe_cell_and_label_quotas(self):
        pool = self.pool(2000)
        recipe = ImbalanceRecipe([{("a", 1): 100, ("b", 0): 50}, {1: 200}, None])
        parts = partition_clients(pool, recipe, seed=4)
        assert parts[0].cell_count(GROUP_A, 1) == 100
        assert parts[0].cell_count(GROUP_B, 0) == 50
        assert parts[1].labels.sum() == 200

    def test_capacity_error(self):
        pool = self.pool(2000)
        with pytest.raises(CapacityError, match="exceeds"):
            partition_clients(pool, ImbalanceRecipe([{"a": 1100}, None]), seed=0)

    def test_unassigned_leftovers_rejected_without_rest_client(self):
        pool = self.pool(100)
        with pytest.raises(CapacityError, match="unassigned"):
            partition_clients(pool, ImbalanceRecipe([{"a": 10}, {"b": 10}]), seed=0)

    def test_deterministic(self):
        pool = self.pool(300)
        a = partition_clients(pool, RandomEven(3), seed=5)
        b = partition_clients(pool, RandomEven(3), seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)


class TestTrainEvalSplit:
    def test_eighty_twenty(self):
        client = generate_gaussian_client(balanced_spec(n_total=100), seed=0)
        train, ev = train_eval_split(client, 0.2, seed=0)
        assert (train.n, ev.n) == (80, 20)

    def test_split_is_stratified(self):
        client = generate_gaussian_client(balanced_spec(n_total=400), seed=1)
        train, ev = train_eval_split(client, 0.25, seed=1)
        for cell in CELL_ORDER:
            assert ev.cell_count(*cell) == 25
            assert train.cell_count(*cell) == 75

    def test_single_group_degenerate(self):
        spec = balanced_spec(n_total=100, r_a=1.0)
        client = generate_gaussian_client(spec, seed=2)
        train, ev = train_eval_split(client, 0.2, seed=0)
        assert (train.groups == GROUP_A).all()
        assert (ev.groups == GROUP_A).all()

    def test_one_sample_cell_goes_to_train(self):
        feats = np.arange(21, dtype=float)[:, None]
        labels = np.array([1] * 10 + [0] * 10 + [1], dtype=np.int8)
        groups = np.array([0] * 10 + [0] * 10 + [1], dtype=np.int8)
        client = ClientDataset(0, feats, labels, groups)
        train, ev = train_eval_split(client, 0.2, seed=0)
        assert (train.groups == GROUP_B).sum() == 1
        assert (ev.groups == GROUP_B).sum() == 0

    def test_deterministic_indices(self):
        client = generate_gaussian_client(balanced_spec(n_total=100), seed=3)
        t1, e1 = train_eval_split(client, 0.3, seed=7)
        t2, e2 = train_eval_split(client, 0.3, seed=7)
        assert np.array_equal(e1.features, e2.features)
        assert np.array_equal(t1.features, t2.features)

    def test_split_preserves_group_pairing(self):
        spec = GaussianClientSpec(8, 6, 8, 6, sigma=1.0, n_per_cell=50, paired_groups=True)
        client = generate_gaussian_client(spec, seed=4)
        train, ev = train_eval_split(client, 0.2, seed=4)
        for part in (train, ev):
            for y in (0, 1):
                a = part.features[(part.groups == GROUP_A) & (part.labels == y)]
                b = part.features[(part.groups == GROUP_B) & (part.labels == y)]
                assert np.array_equal(np.sort(a, axis=0), np.sort(b, axis=0))

    def test_empty_split_rejected(self):
        client = generate_gaussian_client(balanced_spec(n_total=4), seed=0)
        with pytest.raises(ValidationError, match="empty"):
            train_eval_split(client, 0.2, seed=0)
        with pytest.raises(ValidationError):
            train_eval_split(client, 1.2, seed=0)
