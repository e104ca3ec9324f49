import numpy as np
import pytest

from gradcal import (
    ConfigError,
    ModelSpec,
    StreamConfig,
    TrainConfig,
    concat_batches,
    full_gradient,
    generate_gaussian_cil,
    run_cil,
    run_tfcl,
    to_tfcl,
)

STREAM_CFG = StreamConfig(
    task_count=3,
    classes_per_task=2,
    samples_per_class=24,
    dimension=6,
    cluster_separation=5.0,
    noise_sigma=1.0,
    seed=5,
)
STREAM = generate_gaussian_cil(STREAM_CFG)
MODEL = ModelSpec("softmax-linear", 6, 6)


def cfg(**kw):
    base = dict(
        method="DGC", steps_per_stage=10, stages_per_task=2, batch_size=4,
        learning_rate=0.1, buffer_capacity=20, seed=9,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("method", ["ER", "SVRG-joint", "SSVRG", "DGC", "DGC-combined"])
def test_step_accounting_and_matrix_shape(method):
    result = run_cil(STREAM, MODEL, cfg(method=method))
    assert result.step_count == 3 * 2 * 10  # T * S * m
    assert result.accuracy.n_rows == 3
    assert [len(result.accuracy.row(i)) for i in (1, 2, 3)] == [1, 2, 3]
    assert np.all(np.isfinite(result.theta))


@pytest.mark.parametrize("method", ["ER", "DGC", "SSVRG"])
def test_run_deterministic_in_seed(method):
    a = run_cil(STREAM, MODEL, cfg(method=method))
    b = run_cil(STREAM, MODEL, cfg(method=method))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.accuracy == b.accuracy
    assert a.trajectory.pairs() == b.trajectory.pairs()
    c = run_cil(STREAM, MODEL, cfg(method=method, seed=10))
    assert not np.array_equal(a.theta, c.theta)


def test_single_task_dgc_bitwise_equals_svrg():
    one_task = generate_gaussian_cil(
        StreamConfig(task_count=1, classes_per_task=2, samples_per_class=30,
                     dimension=4, seed=2)
    )
    model = ModelSpec("softmax-linear", 4, 2)
    a = run_cil(one_task, model, cfg(method="DGC"))
    b = run_cil(one_task, model, cfg(method="SVRG-joint"))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.trajectory.pairs() == b.trajectory.pairs()
    assert a.accuracy == b.accuracy


def test_combined_alpha_one_run_bitwise_equals_dgc():
    a = run_cil(STREAM, MODEL, cfg(method="DGC-combined", alpha=1.0))
    b = run_cil(STREAM, MODEL, cfg(method="DGC"))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.trajectory.pairs() == b.trajectory.pairs()


def test_trajectory_eval_interval():
    result = run_cil(STREAM, MODEL, cfg(), eval_interval=5)
    assert result.trajectory.steps == list(range(5, 61, 5))


def test_mode_and_dimension_validation():
    with pytest.raises(ConfigError):
        run_cil(to_tfcl(STREAM, 8), MODEL, cfg())
    with pytest.raises(ConfigError):
        run_cil(STREAM, ModelSpec("softmax-linear", 7, 6), cfg())
    with pytest.raises(ConfigError):
        run_tfcl(STREAM, MODEL, cfg())


def test_unknown_method_rejected_naming_options():
    with pytest.raises(ConfigError) as err:
        cfg(method="SGD")
    assert "ER" in str(err.value) and "DGC" in str(err.value)


def test_exhaustive_lossless_calibrator_tracks_history_everywhere():
    # whole-buffer replay terms + capacity above all history: the calibration
    # vector must equal the prior-task full gradient at its snapshot after
    # every stage end and every transition
    total = sum(len(t.train) for t in STREAM.tasks)
    config = cfg(method="DGC", exhaustive_buffer=True, buffer_capacity=total)
    history = {}
    errors = []

    def probe(event, info):
        t = info["task"]
        state = info["state"]
        if event == "stage_end" and t > 1:
            prior = concat_batches([task.train for task in STREAM.tasks[: t - 1]])
            oracle = full_gradient(MODEL, prior, state.theta_snapshot)
            errors.append(np.max(np.abs(state.gamma_prime - oracle)))
        if event == "task_transition":
            prior = concat_batches([task.train for task in STREAM.tasks[:t]])
            oracle = full_gradient(MODEL, prior, state.theta_snapshot)
            errors.append(np.max(np.abs(state.gamma_prime - oracle)))

    run_cil(STREAM, MODEL, config, probe=probe)
    assert len(errors) == (2 * 2) + 3  # stage ends at t=2,3 plus 3 transitions
    assert max(errors) < 1e-10


def test_probe_sequence():
    events = []
    run_cil(STREAM, MODEL, cfg(), probe=lambda e, info: events.append((e, info["task"])))
    assert events[:5] == [
        ("stage_start", 1), ("stage_end", 1), ("stage_start", 1), ("stage_end", 1),
        ("task_transition", 1),
    ]
    assert len(events) == 3 * (2 * 2 + 1)


# ---------------------------------------------------------------------------
# task-free loop
# ---------------------------------------------------------------------------
TFCL_STREAM = to_tfcl(STREAM, batch_size=8)


@pytest.mark.parametrize("method", ["ER", "DGC", "SSVRG", "DGC-combined"])
def test_tfcl_runs_and_counts_steps(method):
    result = run_tfcl(TFCL_STREAM, MODEL, cfg(method=method, steps_per_stage=3))
    assert result.step_count == len(TFCL_STREAM.tasks)
    assert np.all(np.isfinite(result.theta))


def test_tfcl_deterministic():
    a = run_tfcl(TFCL_STREAM, MODEL, cfg(steps_per_stage=3))
    b = run_tfcl(TFCL_STREAM, MODEL, cfg(steps_per_stage=3))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.accuracy == b.accuracy


def test_tfcl_default_eval_at_arrival_boundaries():
    result = run_tfcl(TFCL_STREAM, MODEL, cfg(steps_per_stage=3))
    # one row per original task, widths grow with coverage
    assert result.accuracy.n_rows == 3
    assert [len(r) for r in result.accuracy.to_lists()] == [1, 2, 3]


def test_tfcl_eval_at_configured_multiples():
    # 12 micro-tasks, boundaries (4, 8, 12): multiples of 2 from the first
    # boundary onward produce rows -> 4, 6, 8, 10, 12
    result = run_tfcl(TFCL_STREAM, MODEL, cfg(steps_per_stage=3), eval_every_micro=2)
    assert result.accuracy.n_rows == 5
    assert result.accuracy.is_complete()
    assert [len(r) for r in result.accuracy.to_lists()] == [1, 1, 2, 2, 3]


def test_tfcl_stage_length_one_runs():
    result = run_tfcl(TFCL_STREAM, MODEL, cfg(steps_per_stage=1))
    assert result.step_count == len(TFCL_STREAM.tasks)


def test_tfcl_single_task_stream_reduces_to_snapshot_training():
    one = generate_gaussian_cil(
        StreamConfig(task_count=1, classes_per_task=2, samples_per_class=24,
                     dimension=4, seed=6)
    )
    micro = to_tfcl(one, batch_size=8)
    model = ModelSpec("softmax-linear", 4, 2)
    result = run_tfcl(micro, model, cfg(method="DGC", steps_per_stage=2))
    assert result.accuracy.n_rows == 1
    assert np.all(np.isfinite(result.theta))
