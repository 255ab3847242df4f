import math

import numpy as np
import pytest

from gnsde.datasets import (
    EXTRAP_WINDOW,
    INTERP_WINDOW,
    DatasetFormatError,
    EdgeIndexError,
    LabelError,
    MissingFileError,
    RowCountError,
    add_feature_noise,
    export_planetoid,
    gen_three_node,
    gen_voting,
    intra_class_fraction,
    load_planetoid,
    three_node_truth,
)


class TestVoting:
    def test_degenerate_limit(self):
        d = gen_voting(60, 0.5, homophily=1.0, noise_sd=0.0, seed=1)
        assert intra_class_fraction(d) == 1.0
        # noise-free points sit exactly on the candidate corners
        assert len(np.unique(d.features.round(12), axis=0)) == 3

    def test_label_counts_within_multinomial_bounds(self):
        n = 900
        counts = np.bincount(gen_voting(n, 0.5, seed=2).labels, minlength=3)
        sd = math.sqrt(n * (1 / 3) * (2 / 3))
        assert (np.abs(counts - n / 3) <= 3 * sd).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_all_classes_present(self, seed):
        assert len(np.unique(gen_voting(30, 0.5, seed=seed).labels)) == 3

    @pytest.mark.parametrize("h", [0.3, 0.6, 0.9])
    def test_homophily_recoverable(self, h):
        assert abs(intra_class_fraction(gen_voting(400, 0.5, homophily=h, seed=3)) - h) <= 0.05

    def test_masks_partition(self):
        d = gen_voting(50, 0.3, seed=0, val_frac=0.2)
        total = d.train_mask.astype(int) + d.val_mask + d.test_mask
        np.testing.assert_array_equal(total, 1)
        assert d.train_mask.sum() == 15

    def test_mean_degree(self):
        d = gen_voting(300, 0.5, seed=0)
        assert 2 * d.graph.num_edges / d.n == pytest.approx(6.0, rel=0.02)

    def test_deterministic(self):
        a, b = gen_voting(80, 0.5, seed=5), gen_voting(80, 0.5, seed=5)
        assert a.features.tobytes() == b.features.tobytes()
        np.testing.assert_array_equal(a.graph.edges, b.graph.edges)

    @pytest.mark.parametrize("kw", [dict(n=2), dict(train_frac=0.0), dict(train_frac=1.0), dict(homophily=1.5)])
    def test_invalid(self, kw):
        args = dict(n=20, train_frac=0.5)
        args.update(kw)
        with pytest.raises(ValueError):
            gen_voting(**args)


class TestThreeNode:
    def test_noise_free_values(self):
        a, b, c = three_node_truth([1.0])[0]
        assert a == pytest.approx(1.0, abs=1e-15)
        assert three_node_truth([0.0])[0, 1] == 8.0

    def test_c_is_sum_when_noise_free(self):
        d = gen_three_node(50, seed=1, noise_sd=0.0)
        np.testing.assert_array_equal(d.values[:, 2], d.values[:, 0] + d.values[:, 1])

    def test_truth_vs_direct_formula(self):
        t = np.random.default_rng(0).uniform(0, 12, 100)
        direct_a = [ti * math.sin(math.pi * ti / 2) for ti in t]
        direct_b = [4 / (ti / 5 + 0.5) * math.cos(math.pi * ti / 2) for ti in t]
        truth = three_node_truth(t)
        np.testing.assert_allclose(truth[:, 0], direct_a, atol=1e-12, rtol=0)
        np.testing.assert_allclose(truth[:, 1], direct_b, atol=1e-12, rtol=0)

    def test_graph_shape(self):
        d = gen_three_node(20)
        np.testing.assert_array_equal(d.graph.edges, [[0, 2], [1, 2]])

    def test_windows_flagged(self):
        d = gen_three_node(200, seed=4)
        assert (np.diff(d.times) >= 0).all()
        inside = d.window(*INTERP_WINDOW) | d.window(*EXTRAP_WINDOW)
        np.testing.assert_array_equal(d.test, inside)
        assert d.test.any() and d.train.any()

    def test_noise_level(self):
        d = gen_three_node(20_000, seed=0)
        resid = d.values[:, 0] - three_node_truth(d.times)[:, 0]
        assert resid.std() == pytest.approx(0.5, rel=0.03)

    def test_observations_list(self):
        d = gen_three_node(12, seed=0)
        obs = d.observations()
        assert len(obs) == 36
        assert obs[0][0] <= obs[-1][0]

    def test_minimum(self):
        with pytest.raises(ValueError):
            gen_three_node(5)


FIXTURE_NODES = "0.5\t1.0\t0\ttrain\n-1.0\t2.0\t1\tval\n3.0\t0.0\t2\ttest\n0.0\t0.0\t1\ttrain\n"
FIXTURE_EDGES = "# four-node fixture\n0 1\n1 2\n2 3\n"


class TestPlanetoid:
    def write(self, d, nodes=FIXTURE_NODES, edges=FIXTURE_EDGES):
        (d / "nodes.tsv").write_text(nodes)
        (d / "edges.txt").write_text(edges)
        return d

    def test_fixture(self, tmp_path):
        data = load_planetoid(self.write(tmp_path))
        np.testing.assert_array_equal(data.features, [[0.5, 1.0], [-1.0, 2.0], [3.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(data.labels, [0, 1, 2, 1])
        np.testing.assert_array_equal(data.train_mask, [1, 0, 0, 1])
        np.testing.assert_array_equal(data.val_mask, [0, 1, 0, 0])
        np.testing.assert_array_equal(data.graph.edges, [[0, 1], [1, 2], [2, 3]])

    def test_export_round_trip(self, tmp_path):
        data = load_planetoid(self.write(tmp_path / "a" if (tmp_path / "a").mkdir() is None else None))
        export_planetoid(data, tmp_path / "b")
        back = load_planetoid(tmp_path / "b")
        assert back.features.tobytes() == data.features.tobytes()
        np.testing.assert_array_equal(back.labels, data.labels)
        np.testing.assert_array_equal(back.test_mask, data.test_mask)

    def test_random_split_when_untagged(self, tmp_path):
        rows = "".join(f"{i}.0\t{i % 3}\n" for i in range(10))
        data = load_planetoid(self.write(tmp_path, rows, "0 1\n"))
        assert (data.train_mask.sum(), data.val_mask.sum(), data.test_mask.sum()) == (6, 2, 2)

    def test_missing_file(self, tmp_path):
        (tmp_path / "nodes.tsv").write_text(FIXTURE_NODES)
        with pytest.raises(MissingFileError):
            load_planetoid(tmp_path)

    def test_malformed_edge_names_line(self, tmp_path):
        with pytest.raises(EdgeIndexError, match=":3:"):
            load_planetoid(self.write(tmp_path, edges="0 1\n1 2\n2 x\n"))

    def test_edge_out_of_range(self, tmp_path):
        with pytest.raises(EdgeIndexError):
            load_planetoid(self.write(tmp_path, edges="0 7\n"))

    def test_empty_label(self, tmp_path):
        with pytest.raises(LabelError, match=":2:"):
            load_planetoid(self.write(tmp_path, nodes="1.0\t0\n2.0\t\n"))

    def test_row_width_mismatch(self, tmp_path):
        with pytest.raises(RowCountError):
            load_planetoid(self.write(tmp_path, nodes="1.0\t2.0\t0\n2.0\t1\n"))

    def test_error_classes_distinct(self):
        assert len({MissingFileError, EdgeIndexError, LabelError, RowCountError}) == 4
        assert all(issubclass(e, DatasetFormatError) for e in (MissingFileError, EdgeIndexError, LabelError, RowCountError))


class TestFeatureNoise:
    def test_zero_sd_identical(self):
        d = gen_voting(40, 0.5, seed=0)
        assert add_feature_noise(d, 0.0).features.tobytes() == d.features.tobytes()

    def test_unit_sd(self):
        d = gen_voting(5000, 0.5, seed=0)
        noisy = add_feature_noise(d, 1.0, seed=3)
        resid = noisy.features - d.features
        assert 0.97 <= resid[:, 0].std() <= 1.03
        assert 0.97 <= resid[:, 1].std() <= 1.03

    def test_labels_untouched(self):
        d = gen_voting(40, 0.5, seed=0)
        noisy = add_feature_noise(d, 2.0, seed=1)
        assert noisy.labels.tobytes() == d.labels.tobytes()
        assert noisy.graph is d.graph

    def test_negative(self):
        with pytest.raises(ValueError):
            add_feature_noise(gen_voting(10, 0.5), -1.0)
