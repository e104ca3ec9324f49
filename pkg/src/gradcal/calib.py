"""Gradient-estimator state machines and the training loops that drive them.

Five estimators share one update rule (theta <- theta - eta * v); they differ
in how v is assembled at task t, step k:

* ``ER``           -- weighted mix of the current-task batch gradient and a
                      replay-buffer batch gradient.
* ``SVRG-joint``   -- snapshot-calibrated gradient over the union of all data
                      seen so far (unlimited memory; diagnostic upper baseline).
* ``SSVRG``        -- snapshot calibration applied separately to the current
                      term (anchored by the current task's full gradient) and
                      the replay term (anchored by the buffer's full gradient).
* ``DGC``          -- like SSVRG for the current term, but the replay term is
                      recentered on a recursively maintained calibration
                      vector that tracks the full-history gradient instead of
                      the buffer's.
* ``DGC-combined`` -- convex mix (weight alpha) of the DGC replay term and the
                      plain replay gradient.

The calibration vector (``CalibratorState.gamma_prime``) starts at zero, is
refreshed from a replay draw at the end of every stage of m steps, and is
folded together with the finished task's full gradient at every task
transition. With a lossless buffer and whole-buffer averaging these updates
are exact identities; with a capacity-limited buffer they hold in
expectation.

Exactness note: every calibrated term is computed as
``(grad_now - grad_snapshot) + anchor`` rather than the algebraically equal
``grad_now - (grad_snapshot - anchor)``. When theta equals the snapshot the
difference is exactly zero in floating point, so the estimate collapses to
the anchor bit-for-bit regardless of the sampled batch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .buffer import ReservoirBuffer
from .errors import ConfigError, StateError
from .metrics import AccuracyMatrix, LossTrajectory
from .model import (
    Dataset,
    LabeledBatch,
    ModelSpec,
    as_batch,
    concat_batches,
    full_gradient,
    gradient,
    init_params,
    loss,
    predict_accuracy,
)
from .stream import TaskStream

METHODS = ("ER", "SVRG-joint", "SSVRG", "DGC", "DGC-combined")
WEIGHTINGS = ("uniform-task", "size-weighted")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters shared by every method.

    ``exhaustive_buffer`` replaces each replay draw with the whole buffer
    (test/diagnostic mode that turns expectation identities into exact
    ones). ``combined_buffer_anchor`` switches the combined estimator's
    current-task term to anchor its snapshot gradient on the replay batch
    instead of the current batch; it biases the estimate and exists for
    comparison runs only.
    """

    method: str = "DGC"
    steps_per_stage: int = 200  # m
    stages_per_task: int = 1  # S
    batch_size: int = 32  # b
    learning_rate: float = 0.05  # eta
    alpha: float = 1e-3  # DGC-combined mixing weight
    task_weighting: str = "uniform-task"
    seed: int = 0
    buffer_capacity: int = 200
    exhaustive_buffer: bool = False
    combined_buffer_anchor: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {METHODS}")
        if self.steps_per_stage < 1 or self.stages_per_task < 1 or self.batch_size < 1:
            raise ConfigError("steps_per_stage, stages_per_task, batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if self.task_weighting not in WEIGHTINGS:
            raise ConfigError(f"task_weighting must be one of {WEIGHTINGS}")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")


@dataclass(frozen=True)
class CalibratorState:
    """Calibration vector, its paired snapshot, and position counters."""

    gamma_prime: np.ndarray  # tracks the full-history gradient at the snapshot
    theta_snapshot: np.ndarray
    task_index: int = 1
    stage_index: int = 1
    step_index: int = 1


def initial_state(model: ModelSpec, theta0: np.ndarray) -> CalibratorState:
    return CalibratorState(
        gamma_prime=np.zeros(model.param_dim), theta_snapshot=np.asarray(theta0, float).copy()
    )


@dataclass(frozen=True)
class GradientEstimate:
    """Estimated update direction plus an optional per-term breakdown."""

    vector: np.ndarray
    current_term: np.ndarray | None = None
    historical_term: np.ndarray | None = None
    calibrator_norm: float | None = None


def task_weights(
    t: int, weighting: str = "uniform-task", task_sizes: list[int] | None = None
) -> tuple[float, float]:
    """(current, historical) mixing weights at task t.

    Uniform weighting treats tasks equally: (1/t, (t-1)/t). Size weighting
    uses sample counts: (|T_t| / N_t, N_{t-1} / N_t) with N_t the total seen.
    """
    if t < 1:
        raise ValueError(f"task index must be >= 1, got {t}")
    if weighting == "uniform-task":
        return 1.0 / t, (t - 1) / t
    if weighting != "size-weighted":
        raise ConfigError(f"task_weighting must be one of {WEIGHTINGS}")
    if task_sizes is None or len(task_sizes) < t:
        raise ConfigError("size-weighted mixing needs per-task sizes up to the current task")
    hist = float(sum(task_sizes[: t - 1]))
    cur = float(task_sizes[t - 1])
    total = hist + cur
    return cur / total, hist / total


def er_estimate(
    model: ModelSpec,
    current_batch: LabeledBatch,
    buffer_batch: LabeledBatch | None,
    theta: np.ndarray,
    t: int,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
    diagnostics: bool = False,
) -> GradientEstimate:
    """Replay estimate: mix of current-batch and buffer-batch gradients.

    At t=1 the historical weight vanishes and the result is exactly the
    current-batch gradient.
    """
    w_cur, w_hist = task_weights(t, weighting, task_sizes)
    g_cur = gradient(model, current_batch, theta)
    if w_hist == 0.0:
        return GradientEstimate(g_cur, current_term=g_cur if diagnostics else None)
    if buffer_batch is None:
        raise StateError(f"replay batch required at task {t} > 1")
    g_buf = gradient(model, buffer_batch, theta)
    v = w_cur * g_cur + w_hist * g_buf
    if diagnostics:
        return GradientEstimate(v, current_term=g_cur, historical_term=g_buf)
    return GradientEstimate(v)


def svrg_prepare(model: ModelSpec, dataset: Dataset, theta_snapshot: np.ndarray) -> np.ndarray:
    """Full-dataset anchor gradient at the snapshot parameter."""
    return full_gradient(model, dataset, theta_snapshot)


def svrg_estimate(
    model: ModelSpec,
    batch: LabeledBatch,
    theta: np.ndarray,
    theta_snapshot: np.ndarray,
    mu_tilde: np.ndarray,
    diagnostics: bool = False,
) -> GradientEstimate:
    """Snapshot-calibrated stochastic gradient:
    grad(batch, theta) - grad(batch, snapshot) + anchor."""
    g_now = gradient(model, batch, theta)
    g_snap = gradient(model, batch, theta_snapshot)
    v = (g_now - g_snap) + mu_tilde
    if diagnostics:
        return GradientEstimate(
            v, current_term=v, calibrator_norm=float(np.linalg.norm(g_snap - mu_tilde))
        )
    return GradientEstimate(v)


def ssvrg_estimate(
    model: ModelSpec,
    current_batch: LabeledBatch,
    buffer_batch: LabeledBatch | None,
    theta: np.ndarray,
    theta_snapshot: np.ndarray,
    v_tilde: np.ndarray,
    mu_tilde: np.ndarray | None,
    t: int,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
    diagnostics: bool = False,
) -> GradientEstimate:
    """Streaming variant: both terms snapshot-calibrated, the replay term
    anchored on the buffer's own full gradient (so its reach is limited to
    whatever the buffer retained)."""
    if t == 1:
        return svrg_estimate(model, current_batch, theta, theta_snapshot, v_tilde, diagnostics)
    w_cur, w_hist = task_weights(t, weighting, task_sizes)
    if buffer_batch is None or mu_tilde is None:
        raise StateError(f"replay batch and buffer anchor required at task {t} > 1")
    cur = (gradient(model, current_batch, theta) - gradient(model, current_batch, theta_snapshot)) + v_tilde
    hist = (gradient(model, buffer_batch, theta) - gradient(model, buffer_batch, theta_snapshot)) + mu_tilde
    v = w_cur * cur + w_hist * hist
    if diagnostics:
        return GradientEstimate(v, current_term=cur, historical_term=hist)
    return GradientEstimate(v)


def dgc_gamma(
    model: ModelSpec,
    state: CalibratorState,
    buffer_batch: LabeledBatch | None,
    theta: np.ndarray,
) -> np.ndarray:
    """Replay term recentered on the calibration vector:
    grad(buf, theta) - grad(buf, snapshot) + gamma_prime.

    At theta == snapshot this is gamma_prime exactly."""
    if buffer_batch is None:
        raise StateError("calibrated replay term needs a buffer batch (empty history?)")
    g_now = gradient(model, buffer_batch, theta)
    g_snap = gradient(model, buffer_batch, state.theta_snapshot)
    return (g_now - g_snap) + state.gamma_prime


def dgc_estimate(
    model: ModelSpec,
    state: CalibratorState,
    current_batch: LabeledBatch,
    buffer_batch: LabeledBatch | None,
    theta: np.ndarray,
    v_tilde: np.ndarray,
    t: int | None = None,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
    diagnostics: bool = False,
) -> GradientEstimate:
    """Calibrated estimate: snapshot-calibrated current term plus the
    gamma-recentered replay term, mixed by the task weights.

    At t=1 the historical weight is zero and the estimate equals the plain
    snapshot-calibrated gradient on the current task (bitwise)."""
    t = state.task_index if t is None else t
    if t == 1:
        return svrg_estimate(model, current_batch, theta, state.theta_snapshot, v_tilde, diagnostics)
    w_cur, w_hist = task_weights(t, weighting, task_sizes)
    cur = (
        gradient(model, current_batch, theta)
        - gradient(model, current_batch, state.theta_snapshot)
    ) + v_tilde
    gam = dgc_gamma(model, state, buffer_batch, theta)
    v = w_cur * cur + w_hist * gam
    if diagnostics:
        return GradientEstimate(
            v,
            current_term=cur,
            historical_term=gam,
            calibrator_norm=float(np.linalg.norm(state.gamma_prime)),
        )
    return GradientEstimate(v)


def dgc_combined_estimate(
    model: ModelSpec,
    state: CalibratorState,
    current_batch: LabeledBatch,
    buffer_batch: LabeledBatch | None,
    theta: np.ndarray,
    v_tilde: np.ndarray,
    alpha: float,
    t: int | None = None,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
    buffer_anchor: bool = False,
    diagnostics: bool = False,
) -> GradientEstimate:
    """Combined estimate: historical term is an alpha-mix of the calibrated
    replay term and the plain replay gradient.

    alpha=1 reproduces the calibrated estimate bit-for-bit and alpha=0 makes
    the historical term the plain replay gradient; both ends are dispatched
    explicitly so the collapses are exact.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ConfigError(f"alpha must be in [0,1], got {alpha}")
    t = state.task_index if t is None else t
    if t == 1:
        return svrg_estimate(model, current_batch, theta, state.theta_snapshot, v_tilde, diagnostics)
    w_cur, w_hist = task_weights(t, weighting, task_sizes)
    if buffer_batch is None:
        raise StateError(f"replay batch required at task {t} > 1")
    g_cur_now = gradient(model, current_batch, theta)
    if buffer_anchor:
        # anchors the current bracket on the replay batch's snapshot gradient;
        # biased variant, kept behind this switch
        cur = (g_cur_now - gradient(model, buffer_batch, state.theta_snapshot)) + v_tilde
    else:
        cur = (g_cur_now - gradient(model, current_batch, state.theta_snapshot)) + v_tilde
    if alpha == 1.0:
        hist = dgc_gamma(model, state, buffer_batch, theta)
    elif alpha == 0.0:
        hist = gradient(model, buffer_batch, theta)
    else:
        g_buf_now = gradient(model, buffer_batch, theta)
        gam = (g_buf_now - gradient(model, buffer_batch, state.theta_snapshot)) + state.gamma_prime
        hist = alpha * gam + (1.0 - alpha) * g_buf_now
    v = w_cur * cur + w_hist * hist
    if diagnostics:
        return GradientEstimate(
            v,
            current_term=cur,
            historical_term=hist,
            calibrator_norm=float(np.linalg.norm(state.gamma_prime)),
        )
    return GradientEstimate(v)


def dgc_stage_end(
    model: ModelSpec,
    state: CalibratorState,
    buffer_batch: LabeledBatch | None,
    theta_end: np.ndarray,
) -> CalibratorState:
    """End-of-stage refresh: re-evaluate the calibrated replay term at the
    stage's final parameter, store it as the new calibration vector, and move
    the snapshot there. With no history yet (buffer_batch None at task 1)
    only the snapshot moves.
    """
    if buffer_batch is None:
        if state.task_index > 1:
            raise StateError(f"stage end at task {state.task_index} > 1 requires a replay batch")
        return dataclasses.replace(
            state,
            theta_snapshot=np.asarray(theta_end, float).copy(),
            stage_index=state.stage_index + 1,
            step_index=1,
        )
    gamma_new = dgc_gamma(model, state, buffer_batch, theta_end)
    return dataclasses.replace(
        state,
        gamma_prime=gamma_new,
        theta_snapshot=np.asarray(theta_end, float).copy(),
        stage_index=state.stage_index + 1,
        step_index=1,
    )


def dgc_task_transition(
    model: ModelSpec,
    state: CalibratorState,
    task_data: Dataset,
    theta_final: np.ndarray,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
) -> CalibratorState:
    """Task-boundary fold: average the finished task's full gradient (at the
    final snapshot) into the calibration vector so it now tracks the history
    including that task, then advance the task counter."""
    batch = as_batch(task_data)
    g_task = full_gradient(model, batch, theta_final)
    t = state.task_index
    if weighting == "uniform-task":
        gamma_new = ((t - 1) * state.gamma_prime + g_task) / t
    else:
        if task_sizes is None or len(task_sizes) < t:
            raise ConfigError("size-weighted transition needs per-task sizes")
        hist = float(sum(task_sizes[: t - 1]))
        cur = float(len(batch))
        gamma_new = (hist * state.gamma_prime + cur * g_task) / (hist + cur)
    return dataclasses.replace(
        state,
        gamma_prime=gamma_new,
        theta_snapshot=np.asarray(theta_final, float).copy(),
        task_index=t + 1,
        stage_index=1,
        step_index=1,
    )


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------
@dataclass
class RunResult:
    theta: np.ndarray
    accuracy: AccuracyMatrix
    trajectory: LossTrajectory
    calibrator: CalibratorState
    step_count: int
    method: str


Probe = Callable[[str, dict], None]


def _draw(batch: LabeledBatch, b: int, rng: np.random.Generator) -> LabeledBatch:
    idx = rng.integers(0, len(batch), size=b)
    return batch.subset(idx)


def _uses_buffer(method: str) -> bool:
    return method in ("ER", "SSVRG", "DGC", "DGC-combined")


def _step_estimate(
    model: ModelSpec,
    method: str,
    state: CalibratorState,
    cur_batch: LabeledBatch,
    buf_batch: LabeledBatch | None,
    theta: np.ndarray,
    v_tilde: np.ndarray | None,
    mu_tilde: np.ndarray | None,
    t: int,
    weighting: str,
    task_sizes: list[int],
    alpha: float,
    buffer_anchor: bool,
    diagnostics: bool = False,
) -> GradientEstimate:
    if method == "ER":
        return er_estimate(model, cur_batch, buf_batch, theta, t, weighting, task_sizes, diagnostics)
    if method == "SVRG-joint":
        return svrg_estimate(model, cur_batch, theta, state.theta_snapshot, mu_tilde, diagnostics)
    if method == "SSVRG":
        return ssvrg_estimate(
            model, cur_batch, buf_batch, theta, state.theta_snapshot,
            v_tilde, mu_tilde, t, weighting, task_sizes, diagnostics,
        )
    if method == "DGC":
        return dgc_estimate(
            model, state, cur_batch, buf_batch, theta, v_tilde, t, weighting, task_sizes, diagnostics
        )
    return dgc_combined_estimate(
        model, state, cur_batch, buf_batch, theta, v_tilde, alpha,
        t, weighting, task_sizes, buffer_anchor, diagnostics,
    )


def run_cil(
    stream: TaskStream,
    model: ModelSpec,
    config: TrainConfig,
    eval_interval: int | None = None,
    probe: Probe | None = None,
) -> RunResult:
    """Class-incremental training: for each task, S stages of m steps with
    the configured estimator, then a reservoir update and (for calibrated
    methods) the task-boundary fold; after each task, accuracy on every seen
    task's test split is appended as a matrix row.

    The loss trajectory is measured on the union of all training data seen
    so far, every ``eval_interval`` steps (default: m // 10). The run is a
    pure function of (stream, model, config).

    ``probe``, if given, is called at stage starts/ends and task transitions
    with a dict of live references (copy anything you keep).
    """
    if stream.mode != "CIL":
        raise ConfigError("run_cil expects a CIL stream; use run_tfcl for TFCL")
    if model.input_dim != stream.dimension:
        raise ConfigError(
            f"model input_dim {model.input_dim} != stream dimension {stream.dimension}"
        )
    if model.class_count < stream.class_count:
        raise ConfigError(
            f"model class_count {model.class_count} < stream class_count {stream.class_count}"
        )
    m, s_per_task, b = config.steps_per_stage, config.stages_per_task, config.batch_size
    eta, method = config.learning_rate, config.method
    if eval_interval is None:
        eval_interval = max(1, m // 10)
    init_ss, batch_ss, buffer_ss = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    batch_rng = np.random.default_rng(batch_ss)
    buffer = ReservoirBuffer(config.buffer_capacity, np.random.default_rng(buffer_ss))

    theta = init_params(model, init_rng)
    state = initial_state(model, theta)
    acc = AccuracyMatrix(expected_rows=len(stream.tasks))
    traj = LossTrajectory()
    seen_parts: list[LabeledBatch] = []
    task_sizes: list[int] = []
    step = 0

    for t, task in enumerate(stream.tasks, start=1):
        if task.test is None:
            raise ConfigError(f"task {t} has no test split; CIL evaluation needs one")
        seen_parts.append(task.train)
        seen_union = concat_batches(seen_parts)
        task_sizes.append(len(task.train))
        current = task.train

        for s in range(1, s_per_task + 1):
            theta_tilde = theta.copy()
            if method != "ER":
                state = dataclasses.replace(state, theta_snapshot=theta_tilde, stage_index=s)
            v_tilde = mu_tilde = None
            if method in ("SSVRG", "DGC", "DGC-combined"):
                v_tilde = full_gradient(model, current, theta_tilde)
            if method == "SSVRG" and t > 1:
                mu_tilde = full_gradient(model, buffer.as_batch(), theta_tilde)
            if method == "SVRG-joint":
                mu_tilde = full_gradient(model, seen_union, theta_tilde)
            if probe is not None:
                probe("stage_start", {"task": t, "stage": s, "theta": theta, "state": state})

            for _ in range(m):
                src = seen_union if method == "SVRG-joint" else current
                cur_batch = _draw(src, b, batch_rng)
                buf_batch = None
                if t > 1 and _uses_buffer(method):
                    buf_batch = buffer.as_batch() if config.exhaustive_buffer else buffer.sample_batch(b)
                est = _step_estimate(
                    model, method, state, cur_batch, buf_batch, theta, v_tilde, mu_tilde,
                    t, config.task_weighting, task_sizes, config.alpha,
                    config.combined_buffer_anchor,
                )
                theta = theta - eta * est.vector
                step += 1
                if step % eval_interval == 0:
                    traj.append(step, loss(model, seen_union, theta))

            if method in ("DGC", "DGC-combined"):
                end_batch = None
                if t > 1:
                    end_batch = buffer.as_batch() if config.exhaustive_buffer else buffer.sample_batch(b)
                state = dgc_stage_end(model, state, end_batch, theta)
            elif method != "ER":
                state = dataclasses.replace(state, theta_snapshot=theta.copy())
            if probe is not None:
                probe("stage_end", {"task": t, "stage": s, "theta": theta, "state": state})

        buffer.update(task.train)
        if method in ("DGC", "DGC-combined"):
            state = dgc_task_transition(
                model, state, task.train, theta, config.task_weighting, task_sizes
            )
        else:
            state = dataclasses.replace(state, task_index=t + 1)
        if probe is not None:
            probe("task_transition", {"task": t, "theta": theta, "state": state})

        acc.add_row(
            [predict_accuracy(model, stream.tasks[j].test, theta) for j in range(t)]
        )

    return RunResult(
        theta=theta, accuracy=acc, trajectory=traj, calibrator=state,
        step_count=step, method=method,
    )


def run_tfcl(
    stream: TaskStream,
    model: ModelSpec,
    config: TrainConfig,
    eval_every_micro: int | None = None,
    eval_interval: int | None = None,
    probe: Probe | None = None,
) -> RunResult:
    """Task-free training: one update per incoming micro-task (the whole
    micro-batch is the current sample). Every ``steps_per_stage`` micro-tasks
    the snapshot is refreshed (and the calibration vector re-evaluated); the
    task-boundary fold runs after every micro-task, so the calibration vector
    keeps tracking the full arrival history. No task identities are read --
    TFCL streams do not carry any.

    Accuracy rows are appended at micro-task indices that are multiples of
    ``eval_every_micro`` (default: the arrival boundaries recorded by
    ``to_tfcl``); each row covers the original test splits whose training
    data has fully arrived.
    """
    if stream.mode != "TFCL":
        raise ConfigError("run_tfcl expects a TFCL stream")
    if model.input_dim != stream.dimension:
        raise ConfigError(
            f"model input_dim {model.input_dim} != stream dimension {stream.dimension}"
        )
    m, b, eta, method = (
        config.steps_per_stage, config.batch_size, config.learning_rate, config.method,
    )
    n_micro = len(stream.tasks)
    if eval_every_micro is not None and eval_every_micro < 1:
        raise ConfigError("eval_every_micro must be >= 1")
    if eval_interval is None:
        eval_interval = max(1, m // 10)
    boundaries = stream.eval_boundaries
    if eval_every_micro is None:
        eval_points = set(boundaries or ())
    else:
        eval_points = {i for i in range(eval_every_micro, n_micro + 1, eval_every_micro)}

    init_ss, _batch_ss, buffer_ss = np.random.SeedSequence(config.seed).spawn(3)
    theta = init_params(model, np.random.default_rng(init_ss))
    buffer = ReservoirBuffer(config.buffer_capacity, np.random.default_rng(buffer_ss))
    state = initial_state(model, theta)
    # evaluation points before any original task has fully arrived yield no row
    if boundaries is not None:
        expected = sum(1 for i in eval_points if i >= min(boundaries))
    else:
        expected = len(eval_points)
    acc = AccuracyMatrix(expected_rows=expected)
    traj = LossTrajectory()
    seen_parts: list[LabeledBatch] = []
    micro_sizes: list[int] = []
    step = 0

    for i, micro in enumerate(stream.tasks, start=1):
        current = micro.train
        seen_parts.append(current)
        micro_sizes.append(len(current))
        v_tilde = mu_tilde = None
        if method in ("SSVRG", "DGC", "DGC-combined"):
            v_tilde = full_gradient(model, current, state.theta_snapshot)
        if method == "SSVRG" and len(buffer):
            # the buffer changes every arrival, so its anchor is re-evaluated
            # (still at the stage snapshot) rather than cached per stage
            mu_tilde = full_gradient(model, buffer.as_batch(), state.theta_snapshot)
        if method == "SVRG-joint":
            mu_tilde = full_gradient(model, concat_batches(seen_parts), state.theta_snapshot)
        buf_batch = None
        if i > 1 and _uses_buffer(method) and len(buffer):
            buf_batch = buffer.as_batch() if config.exhaustive_buffer else buffer.sample_batch(b)
        est = _step_estimate(
            model, method, state, current, buf_batch, theta, v_tilde, mu_tilde,
            i, config.task_weighting, micro_sizes, config.alpha, config.combined_buffer_anchor,
        )
        theta = theta - eta * est.vector
        step += 1
        if step % eval_interval == 0:
            traj.append(step, loss(model, concat_batches(seen_parts), theta))

        if (i - 1) % m == 0:  # snapshot refresh boundary
            if method in ("DGC", "DGC-combined"):
                end_batch = None
                if len(buffer):
                    end_batch = (
                        buffer.as_batch() if config.exhaustive_buffer else buffer.sample_batch(b)
                    )
                state = dgc_stage_end(model, state, end_batch, theta)
            elif method != "ER":
                state = dataclasses.replace(state, theta_snapshot=theta.copy())
            if probe is not None:
                probe("stage_end", {"task": i, "theta": theta, "state": state})

        buffer.update(current)
        if method in ("DGC", "DGC-combined"):
            # fold at the current snapshot; the snapshot itself must not move here
            state = dgc_task_transition(
                model, state, current, state.theta_snapshot,
                config.task_weighting, micro_sizes,
            )
        else:
            state = dataclasses.replace(state, task_index=i + 1)

        if i in eval_points:
            if stream.eval_tests is None:
                raise ConfigError("stream carries no test splits to evaluate")
            if boundaries is not None:
                covered = [j for j, bound in enumerate(boundaries) if bound <= i]
            else:
                covered = list(range(len(stream.eval_tests)))
            if covered:
                acc.add_row(
                    [predict_accuracy(model, stream.eval_tests[j], theta) for j in covered]
                )

    return RunResult(
        theta=theta, accuracy=acc, trajectory=traj, calibrator=state,
        step_count=step, method=method,
    )


def estimator_variance(
    model: ModelSpec,
    method: str,
    current_data: Dataset,
    buffer: ReservoirBuffer | None,
    state: CalibratorState,
    theta: np.ndarray,
    n_draws: int,
    batch_size: int,
    rng: np.random.Generator,
    alpha: float = 1e-3,
    weighting: str = "uniform-task",
    task_sizes: list[int] | None = None,
) -> float:
    """Empirical trace of the estimate covariance over independent draws at a
    fixed parameter and state. For SVRG-joint, ``current_data`` plays the
    role of the full seen dataset. Buffer draws advance the buffer's own
    generator."""
    if n_draws < 2:
        raise ValueError(f"n_draws must be >= 2, got {n_draws}")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {METHODS}")
    current = as_batch(current_data)
    t = state.task_index
    if task_sizes is None:
        task_sizes = [len(current)] * t
    v_tilde = mu_tilde = None
    if method in ("SSVRG", "DGC", "DGC-combined"):
        v_tilde = full_gradient(model, current, state.theta_snapshot)
    if method == "SSVRG" and t > 1:
        mu_tilde = full_gradient(model, buffer.as_batch(), state.theta_snapshot)
    if method == "SVRG-joint":
        mu_tilde = full_gradient(model, current, state.theta_snapshot)
    draws = []
    for _ in range(n_draws):
        cur_batch = _draw(current, batch_size, rng)
        buf_batch = None
        if t > 1 and _uses_buffer(method) and buffer is not None and len(buffer):
            buf_batch = buffer.sample_batch(batch_size)
        est = _step_estimate(
            model, method, state, cur_batch, buf_batch, theta, v_tilde, mu_tilde,
            t, weighting, task_sizes, alpha, False,
        )
        draws.append(est.vector)
    stacked = np.stack(draws)
    stacked -= stacked[0].copy()  # shift-invariant; keeps identical draws at exactly zero
    return float(stacked.var(axis=0, ddof=1).sum())
