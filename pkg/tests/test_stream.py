import numpy as np
import pytest

from gradcal import (
    ConfigError,
    CsvSchema,
    LabeledBatch,
    ModelSpec,
    ParseError,
    StreamConfig,
    Task,
    TaskStream,
    concat_batches,
    default_stream_config,
    full_gradient,
    generate_gaussian_cil,
    load_stream_csv,
    predict_accuracy,
    ridge_minimizer,
    save_stream_csv,
    to_tfcl,
)

SMALL = StreamConfig(
    task_count=3,
    classes_per_task=2,
    samples_per_class=30,
    dimension=8,
    test_fraction=1.0 / 3.0,
    cluster_separation=6.0,
    noise_sigma=1.0,
    seed=11,
)


def test_label_partition_in_label_order():
    stream = generate_gaussian_cil(StreamConfig(seed=1))
    assert [sorted(t.label_set) for t in stream.tasks] == [
        [1, 2], [3, 4], [5, 6], [7, 8], [9, 10],
    ]
    assert stream.class_count == 10 and stream.dimension == 20


def test_default_benchmark_split_sizes():
    stream = generate_gaussian_cil(default_stream_config(seed=2))
    for task in stream.tasks:
        assert len(task.train) == 2 * 200
        assert len(task.test) == 2 * 100


def test_generation_deterministic_in_seed():
    a = generate_gaussian_cil(SMALL)
    b = generate_gaussian_cil(SMALL)
    for ta, tb in zip(a.tasks, b.tasks):
        np.testing.assert_array_equal(ta.train.x, tb.train.x)
        np.testing.assert_array_equal(ta.train.y, tb.train.y)
        np.testing.assert_array_equal(ta.test.x, tb.test.x)
    c = generate_gaussian_cil(StreamConfig(**{**SMALL.__dict__, "seed": 12}))
    assert not np.array_equal(a.tasks[0].train.x, c.tasks[0].train.x)


def test_separated_clusters_are_jointly_learnable():
    # offline joint training on all tasks at once should be near-perfect
    config = StreamConfig(
        task_count=5, classes_per_task=2, samples_per_class=60,
        dimension=10, cluster_separation=10.0, noise_sigma=0.5, seed=3,
    )
    stream = generate_gaussian_cil(config)
    train = concat_batches([t.train for t in stream.tasks])
    test = concat_batches([t.test for t in stream.tasks])
    model = ModelSpec("softmax-linear", 10, 10)
    theta = np.zeros(model.param_dim)
    rng = np.random.default_rng(0)
    for _ in range(3000):
        idx = rng.integers(0, len(train), size=32)
        theta = theta - 0.5 * full_gradient(model, train.subset(idx), theta)
    assert predict_accuracy(model, test, theta) >= 0.99


def test_infeasible_class_arithmetic_rejected():
    with pytest.raises(ConfigError):
        StreamConfig(task_count=4, classes_per_task=3, class_count=10)


def test_cil_label_disjointness_enforced():
    batch = LabeledBatch(np.zeros((2, 3)), np.array([1, 1]))
    t1 = Task(train=batch, test=None, label_set=frozenset({1}))
    with pytest.raises(ConfigError):
        TaskStream(tasks=(t1, t1), mode="CIL", dimension=3, class_count=2)


def test_task_label_set_containment():
    batch = LabeledBatch(np.zeros((2, 3)), np.array([1, 2]))
    with pytest.raises(ConfigError):
        Task(train=batch, test=None, label_set=frozenset({1}))


# ---------------------------------------------------------------------------
# TFCL re-chunking
# ---------------------------------------------------------------------------
def test_to_tfcl_chunking_arithmetic():
    config = StreamConfig(
        task_count=2, classes_per_task=2, samples_per_class=48,
        dimension=4, test_fraction=1.0 / 3.0, seed=4,
    )
    stream = generate_gaussian_cil(config)  # 64 train samples per task
    tfcl = to_tfcl(stream, batch_size=32)
    assert tfcl.mode == "TFCL"
    assert len(tfcl.tasks) == 4
    assert all(len(t.train) == 32 for t in tfcl.tasks)
    assert tfcl.eval_boundaries == (2, 4)
    assert len(tfcl.eval_tests) == 2


def test_to_tfcl_preserves_order_and_multiset():
    stream = generate_gaussian_cil(SMALL)
    tfcl = to_tfcl(stream, batch_size=7)
    original = concat_batches([t.train for t in stream.tasks])
    rechunked = concat_batches([t.train for t in tfcl.tasks])
    np.testing.assert_array_equal(original.x, rechunked.x)
    np.testing.assert_array_equal(original.y, rechunked.y)


def test_to_tfcl_rejects_oversized_batch():
    stream = generate_gaussian_cil(SMALL)
    total = sum(len(t.train) for t in stream.tasks)
    with pytest.raises(ConfigError):
        to_tfcl(stream, batch_size=total + 1)
    with pytest.raises(ConfigError):
        to_tfcl(to_tfcl(stream, 16), batch_size=8)  # already TFCL


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------
def test_csv_round_trip(tmp_path):
    stream = generate_gaussian_cil(SMALL)
    train_path = tmp_path / "stream.csv"
    test_path = tmp_path / "stream.test.csv"
    save_stream_csv(stream, train_path, test_path)
    loaded = load_stream_csv(
        train_path,
        CsvSchema(dimension=8, mode="CIL", test_path=test_path, class_count=6),
    )
    assert len(loaded.tasks) == len(stream.tasks)
    for a, b in zip(stream.tasks, loaded.tasks):
        np.testing.assert_array_equal(a.train.x, b.train.x)
        np.testing.assert_array_equal(a.train.y, b.train.y)
        np.testing.assert_array_equal(a.test.x, b.test.x)
        np.testing.assert_array_equal(a.test.y, b.test.y)
        assert a.label_set == b.label_set


def test_csv_groups_by_task_id(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text(
        "1.0,2.0,1,1\n"
        "1.5,2.5,1,1\n"
        "3.0,4.0,2,2\n"
        "3.5,4.5,2,2\n"
    )
    stream = load_stream_csv(path, CsvSchema(dimension=2, mode="CIL"))
    assert len(stream.tasks) == 2
    assert all(len(t.train) == 2 for t in stream.tasks)
    assert stream.class_count == 2


def test_csv_malformed_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0,1,1\n1.0,1\n")
    with pytest.raises(ParseError) as err:
        load_stream_csv(path, CsvSchema(dimension=2, mode="CIL"))
    assert "line 2" in str(err.value)


def test_csv_overlapping_cil_labels_rejected(tmp_path):
    path = tmp_path / "overlap.csv"
    path.write_text("1.0,2.0,3,1\n3.0,4.0,3,2\n")
    with pytest.raises(ConfigError):
        load_stream_csv(path, CsvSchema(dimension=2, mode="CIL"))


def test_csv_tfcl_chunks_by_arrival(tmp_path):
    path = tmp_path / "tfcl.csv"
    path.write_text("".join(f"{float(i)},{i % 2 + 1}\n" for i in range(10)))
    stream = load_stream_csv(path, CsvSchema(dimension=1, mode="TFCL", micro_batch=4))
    assert [len(t.train) for t in stream.tasks] == [4, 4, 2]
    assert stream.mode == "TFCL"
