import numpy as np
import pytest

from hgnn_mtl.data import (
    CLASSIFICATION,
    REGRESSION,
    MultiTaskDataset,
    SplitSpec,
    TaskDataset,
    generate_synthetic_mtl,
    generate_synthetic_regression,
    load_csv_dataset,
    split,
    standardize,
    write_csv_dataset,
)
from hgnn_mtl.errors import ParseError, SplitError, UsageError


def test_generator_degenerate_point_mass():
    ds = generate_synthetic_mtl(2, 2, 2, 3, task_rotation_angle=0.0, cluster_spread=0.0, seed=9)
    assert np.array_equal(ds.tasks[0].features, ds.tasks[1].features)
    for cls in (1, 2):
        cols = ds.tasks[0].features[:, ds.tasks[0].labels == cls]
        assert np.all(cols == cols[:, [0]])


def test_generator_shapes_and_finiteness():
    ds = generate_synthetic_mtl(4, 3, 16, 30, 0.2, 0.5, seed=1)
    assert ds.num_tasks == 4 and ds.feature_dim == 16 and ds.num_classes == 3
    for t in ds.tasks:
        assert t.n == 90
        assert np.isfinite(t.features).all()
        assert sorted(set(t.labels.tolist())) == [1, 2, 3]


def test_generator_determinism():
    a = generate_synthetic_mtl(3, 2, 4, 5, 0.1, 0.3, seed=7)
    b = generate_synthetic_mtl(3, 2, 4, 5, 0.1, 0.3, seed=7)
    for ta, tb in zip(a.tasks, b.tasks):
        assert np.array_equal(ta.features, tb.features)
        assert np.array_equal(ta.labels, tb.labels)


def test_generator_rejects_bad_counts():
    with pytest.raises(UsageError):
        generate_synthetic_mtl(1, 3, 4, 5)
    with pytest.raises(UsageError):
        generate_synthetic_mtl(2, 3, 4, 0)


def test_regression_generator():
    ds = generate_synthetic_regression(3, 6, 20, seed=2)
    assert ds.mode == REGRESSION and ds.num_classes is None
    assert all(t.n == 20 for t in ds.tasks)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic_mtl(2, 3, 4, 5, seed=3)
    path = tmp_path / "data.csv"
    write_csv_dataset(ds, path)
    loaded = load_csv_dataset(path, CLASSIFICATION)
    assert loaded.num_classes == 3
    for a, b in zip(ds.tasks, loaded.tasks):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)


def test_csv_minimal_file(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("task_id,label,f1,f2\n1,1,0.5,1.5\n1,2,-1.0,2.0\n")
    ds = load_csv_dataset(path, CLASSIFICATION)
    assert ds.num_tasks == 1 and ds.tasks[0].n == 2 and ds.feature_dim == 2


def test_csv_label_out_of_range_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("task_id,label,f1\n1,1,0.0\n1,4,1.0\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv_dataset(path, CLASSIFICATION, expected_classes=3)


def test_csv_ragged_row_names_line(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("task_id,label,f1,f2\n1,1,0.0,1.0\n1,2,0.0\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv_dataset(path, CLASSIFICATION)


def test_csv_non_numeric_feature(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("task_id,label,f1\n1,1,oops\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv_dataset(path, CLASSIFICATION)


def test_csv_regression_mode(tmp_path):
    path = tmp_path / "reg.csv"
    path.write_text("task_id,label,f1\n1,0.25,1.0\n1,-1.5,2.0\n")
    ds = load_csv_dataset(path, REGRESSION)
    assert ds.mode == REGRESSION
    assert np.array_equal(ds.tasks[0].labels, np.array([0.25, -1.5]))


def test_csv_unknown_mode():
    with pytest.raises(UsageError):
        load_csv_dataset("whatever.csv", "ranking")


def _ten_per_class_dataset(seed=0):
    return generate_synthetic_mtl(2, 2, 3, 10, 0.3, 0.4, seed=seed)


def test_split_half_and_seventy():
    ds = _ten_per_class_dataset()
    train, test = split(ds, SplitSpec(0.5, seed=1))
    for t_tr, t_te in zip(train.tasks, test.tasks):
        for cls in (1, 2):
            assert (t_tr.labels == cls).sum() == 5
            assert (t_te.labels == cls).sum() == 5
    train7, test7 = split(ds, SplitSpec(0.7, seed=1))
    for t_tr, t_te in zip(train7.tasks, test7.tasks):
        for cls in (1, 2):
            assert (t_tr.labels == cls).sum() == 7
            assert (t_te.labels == cls).sum() == 3


def test_split_partition_property():
    ds = _ten_per_class_dataset(seed=5)
    train, test = split(ds, SplitSpec(0.6, seed=2))
    for orig, tr, te in zip(ds.tasks, train.tasks, test.tasks):
        combined = np.concatenate([tr.features, te.features], axis=1)
        assert combined.shape == orig.features.shape
        orig_sorted = orig.features[:, np.lexsort(orig.features[::-1])]
        comb_sorted = combined[:, np.lexsort(combined[::-1])]
        assert np.array_equal(orig_sorted, comb_sorted)


def test_split_deterministic_and_order_invariant():
    ds = _ten_per_class_dataset(seed=6)
    train_a, test_a = split(ds, SplitSpec(0.5, seed=3))
    # permute the samples within each task and re-split with the same seed
    rng = np.random.default_rng(0)
    shuffled_tasks = []
    for t in ds.tasks:
        perm = rng.permutation(t.n)
        shuffled_tasks.append(TaskDataset(t.task_id, t.features[:, perm], t.labels[perm]))
    shuffled = MultiTaskDataset(tasks=shuffled_tasks, mode=ds.mode, num_classes=ds.num_classes)
    train_b, test_b = split(shuffled, SplitSpec(0.5, seed=3))
    for a, b in zip(train_a.tasks, train_b.tasks):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
    for a, b in zip(test_a.tasks, test_b.tasks):
        assert np.array_equal(a.features, b.features)


def test_split_stratum_too_small():
    features = np.array([[0.0, 1.0, 2.0]])
    labels = np.array([1, 1, 2])
    ds = MultiTaskDataset(
        tasks=[TaskDataset(1, features, labels)], mode=CLASSIFICATION, num_classes=2
    )
    with pytest.raises(SplitError, match="task 1 class 2"):
        split(ds, SplitSpec(0.5, seed=0))


def test_split_rejects_bad_proportion():
    with pytest.raises(UsageError):
        SplitSpec(1.5)


def test_standardize_constant_feature_and_means():
    ds = _ten_per_class_dataset(seed=7)
    for t in ds.tasks:
        t.features[2, :] = 4.25  # constant feature
    train, test = split(ds, SplitSpec(0.5, seed=0))
    train_s, test_s, stats = standardize(train, test)
    pooled = np.concatenate([t.features for t in train_s.tasks], axis=1)
    assert np.abs(pooled.mean(axis=1)).max() < 1e-9
    assert np.all(pooled[2, :] == 0.0)
    assert stats.scale[2] == 1.0
    # idempotence: standardizing standardized data changes nothing
    train_2, test_2, _ = standardize(train_s, test_s)
    for a, b in zip(train_s.tasks, train_2.tasks):
        assert np.abs(a.features - b.features).max() < 1e-9


def test_standardize_ignores_test_set():
    ds = _ten_per_class_dataset(seed=8)
    train, test = split(ds, SplitSpec(0.5, seed=0))
    _, _, stats_a = standardize(train, test)
    # permute test samples; statistics must be bit-identical
    permuted = MultiTaskDataset(
        tasks=[
            TaskDataset(t.task_id, t.features[:, ::-1].copy(), t.labels[::-1].copy())
            for t in test.tasks
        ],
        mode=test.mode,
        num_classes=test.num_classes,
    )
    _, _, stats_b = standardize(train, permuted)
    assert np.array_equal(stats_a.mean, stats_b.mean)
    assert np.array_equal(stats_a.scale, stats_b.scale)
