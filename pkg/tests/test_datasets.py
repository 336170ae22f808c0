import json
import math

import numpy as np
import pytest

from fcodt.datasets import (
    Dataset,
    dataset_to_csv,
    fetch_dataset,
    gen_sim1,
    gen_sim2,
    kfold_indices,
    load_from_manifest,
    load_manifest,
    minmax_scale,
    normal_from_uniform,
    parse_csv,
    parse_libsvm,
    sim1_function,
    sim2_function,
    train_test_split,
)


class TestDataset:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[1.0, np.inf]]), np.array([1.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(4))

    def test_arrays_immutable(self):
        ds = Dataset(np.ones((2, 2)), np.ones(2))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0

    def test_subset_keeps_clean_targets(self):
        ds = gen_sim1(20, 0.5, 0)
        sub = ds.subset([0, 3, 5])
        assert sub.n == 3
        assert np.array_equal(sub.clean_targets, ds.clean_targets[[0, 3, 5]])


class TestSimGenerators:
    def test_sim1_at_zero(self):
        assert sim1_function(np.zeros((1, 10)))[0] == 0.0

    def test_sim1_at_ones(self):
        assert sim1_function(np.ones((1, 10)))[0] == pytest.approx(5.0)

    def test_sim2_at_zero(self):
        assert sim2_function(np.zeros((1, 10)))[0] == pytest.approx(5.0)

    def test_sim2_at_ones(self):
        assert sim2_function(np.ones((1, 10)))[0] == pytest.approx(5.0 * math.e)

    def test_zero_noise_targets_equal_clean(self):
        ds = gen_sim1(100, 0.0, 3)
        assert np.array_equal(ds.targets, ds.clean_targets)

    def test_noise_level(self):
        ds = gen_sim1(20000, 2.0, 4)
        resid = ds.targets - ds.clean_targets
        assert abs(resid.std() - 2.0) < 0.05
        assert abs(resid.mean()) < 0.05

    def test_bit_identical_reproducibility(self):
        a = gen_sim2(500, 0.01, 11)
        b = gen_sim2(500, 0.01, 11)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.targets, b.targets)

    def test_different_seeds_differ(self):
        a = gen_sim1(100, 0.01, 1)
        b = gen_sim1(100, 0.01, 2)
        assert not np.array_equal(a.features, b.features)

    def test_features_in_box(self):
        ds = gen_sim2(1000, 0.0, 5)
        assert ds.features.min() >= -3.0
        assert ds.features.max() <= 3.0

    def test_sim2_mean_matches_analytic_integral(self):
        # independent oracle: E[exp(avg of k uniforms on [-3,3])] has the
        # closed form (k*sinh(3/k)/3)^k; compare the Monte-Carlo mean of
        # the generated clean targets over 10^6 draws within 3 SE
        ds = gen_sim2(1_000_000, 0.0, 42)
        expected = sum((k * math.sinh(3.0 / k) / 3.0) ** k for k in (1, 2, 3, 4, 5))
        se = ds.clean_targets.std() / 1000.0
        assert abs(ds.clean_targets.mean() - expected) < 3 * se

    def test_normal_transform_moments(self):
        rng = np.random.default_rng(0)
        z = normal_from_uniform(rng, 200000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01


class TestParseLibsvm:
    def test_basic_line(self):
        ds = parse_libsvm("2.5 1:1.0 3:-0.5", expected_dim=3)
        assert ds.targets[0] == 2.5
        assert np.array_equal(ds.features[0], [1.0, 0.0, -0.5])

    def test_target_only_line(self):
        ds = parse_libsvm("0", expected_dim=2)
        assert np.array_equal(ds.features[0], [0.0, 0.0])

    def test_dimension_from_max_index(self):
        ds = parse_libsvm("1 2:5.0\n2 4:1.0")
        assert ds.dim == 4

    def test_malformed_token_reports_line(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_libsvm("1 1:2.0\n3 badtoken")

    def test_nonincreasing_indices_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            parse_libsvm("1 2:1.0 2:3.0")

    def test_nonfinite_values_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            parse_libsvm("1 1:inf")
        with pytest.raises(ValueError, match="non-finite"):
            parse_libsvm("nan 1:2.0")

    def test_empty_input(self):
        ds = parse_libsvm("")
        assert ds.n == 0


class TestParseCsv:
    def test_header_and_target_by_name(self):
        ds = parse_csv("x,y\n1,2\n3,4", target_column="y")
        assert np.array_equal(ds.features, [[1.0], [3.0]])
        assert np.array_equal(ds.targets, [2.0, 4.0])

    def test_target_by_index_without_header(self):
        ds = parse_csv("1,2,3\n4,5,6", target_column=2)
        assert np.array_equal(ds.features, [[1.0, 2.0], [4.0, 5.0]])
        assert np.array_equal(ds.targets, [3.0, 6.0])

    def test_empty_body(self):
        ds = parse_csv("x,y", target_column="y")
        assert ds.n == 0

    def test_ragged_row_rejected(self):
        with pytest.raises(ValueError, match="row 3"):
            parse_csv("x,y\n1,2\n3", target_column="y")

    def test_non_numeric_cell_located(self):
        with pytest.raises(ValueError, match="row 2, column 1"):
            parse_csv("x,y\nfoo,2", target_column="y")

    def test_nonfinite_cell_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            parse_csv("x,y\nnan,2", target_column="y")

    def test_drop_columns(self):
        ds = parse_csv("a,b,y\n1,2,3\n4,5,6", target_column="y", drop_columns=("b",))
        assert np.array_equal(ds.features, [[1.0], [4.0]])

    def test_roundtrip_17_digits(self):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(20, 3)) * 1e3, rng.normal(size=20) / 7.0)
        text = dataset_to_csv(ds)
        back = parse_csv(text, target_column="y")
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.targets, ds.targets)


class TestSplits:
    def test_sizes_round_up_train(self):
        ds = gen_sim1(5, 0.0, 0)
        sp = train_test_split(ds, 0.6, 0)
        assert sp.train_indices.size == 3
        assert sp.test_indices.size == 2

    def test_same_seed_identical(self):
        ds = gen_sim1(100, 0.0, 0)
        a = train_test_split(ds, 0.6, 7)
        b = train_test_split(ds, 0.6, 7)
        assert np.array_equal(a.train_indices, b.train_indices)

    def test_different_seeds_differ(self):
        ds = gen_sim1(1000, 0.0, 0)
        for s in range(10):
            a = train_test_split(ds, 0.6, 2 * s)
            b = train_test_split(ds, 0.6, 2 * s + 1)
            assert not np.array_equal(a.train_indices, b.train_indices)

    def test_partition_property(self):
        ds = gen_sim1(57, 0.0, 0)
        sp = train_test_split(ds, 0.7, 3)
        union = np.sort(np.concatenate([sp.train_indices, sp.test_indices]))
        assert np.array_equal(union, np.arange(57))

    def test_too_small_rejected(self):
        ds = gen_sim1(1, 0.0, 0)
        with pytest.raises(ValueError):
            train_test_split(ds, 0.5, 0)

    def test_kfold_balanced(self):
        folds = kfold_indices(10, 5, 0)
        assert all(f.test_indices.size == 2 for f in folds)

    def test_kfold_partition(self):
        folds = kfold_indices(23, 4, 1)
        union = np.sort(np.concatenate([f.test_indices for f in folds]))
        assert np.array_equal(union, np.arange(23))

    def test_kfold_remainder_sizes(self):
        folds = kfold_indices(11, 5, 2)
        sizes = sorted(f.test_indices.size for f in folds)
        assert sizes == [2, 2, 2, 2, 3]

    def test_kfold_k_bounds(self):
        with pytest.raises(ValueError):
            kfold_indices(5, 6, 0)
        with pytest.raises(ValueError):
            kfold_indices(5, 1, 0)


class TestManifest:
    def test_load_and_resolve(self, tmp_path):
        data_file = tmp_path / "tiny.libsvm"
        data_file.write_text("1.0 1:2.0\n-1.0 2:3.0\n")
        manifest_file = tmp_path / "manifest.json"
        manifest_file.write_text(json.dumps(
            {"tiny": {"path": "tiny.libsvm", "format": "libsvm", "n_features": 2}}))
        manifest = load_manifest(str(manifest_file))
        ds = load_from_manifest("tiny", manifest, str(tmp_path))
        assert ds.n == 2 and ds.dim == 2

    def test_missing_file_raises(self, tmp_path):
        manifest = {"gone": {"path": "nope.libsvm", "format": "libsvm"}}
        with pytest.raises(FileNotFoundError):
            load_from_manifest("gone", manifest, str(tmp_path))

    def test_unknown_name_raises(self):
        with pytest.raises(KeyError):
            load_from_manifest("mystery", {}, ".")

    def test_fetch_requires_url(self, tmp_path):
        with pytest.raises(ValueError):
            fetch_dataset({"path": "x"}, str(tmp_path / "x"))


class TestMinmaxScale:
    def test_train_mapped_to_unit_box(self):
        ds = gen_sim1(100, 0.0, 0)
        (scaled,) = minmax_scale(ds)
        assert scaled.features.min() == pytest.approx(0.0)
        assert scaled.features.max() == pytest.approx(1.0)

    def test_test_uses_train_ranges(self):
        tr = Dataset(np.array([[0.0], [10.0]]), np.zeros(2))
        te = Dataset(np.array([[5.0], [20.0]]), np.zeros(2))
        _, scaled_te = minmax_scale(tr, (te,))
        assert np.array_equal(scaled_te.features[:, 0], [0.5, 2.0])
