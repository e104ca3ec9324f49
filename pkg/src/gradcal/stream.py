"""Non-i.i.d. task streams: synthetic generation, TFCL re-chunking, CSV I/O.

A CIL stream is an ordered list of tasks with pairwise-disjoint label sets;
a TFCL stream is the same data re-chunked into fixed-size micro-tasks with
no task identities attached. Generation is a pure function of the config,
so identical seeds reproduce identical streams bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .model import LabeledBatch, concat_batches

STREAM_MODES = ("CIL", "TFCL")


@dataclass(frozen=True)
class Task:
    """One task: train/test splits plus the label set it is allowed to use."""

    train: LabeledBatch
    test: LabeledBatch | None
    label_set: frozenset[int]

    def __post_init__(self):
        for part, name in ((self.train, "train"), (self.test, "test")):
            if part is None:
                continue
            extra = set(np.unique(part.y)) - set(self.label_set)
            if extra:
                raise ConfigError(f"{name} labels {sorted(extra)} outside task label set")


@dataclass(frozen=True)
class TaskStream:
    """Ordered task sequence with its mode and data-space dimensions.

    ``eval_tests``/``eval_boundaries`` are carried by TFCL streams built
    from a CIL stream: the original per-task test splits and, for each
    original task, the micro-task index after which its data has fully
    arrived. Training never reads them; only evaluation does.
    """

    tasks: tuple[Task, ...]
    mode: str
    dimension: int
    class_count: int
    eval_tests: tuple[LabeledBatch, ...] | None = None
    eval_boundaries: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in STREAM_MODES:
            raise ConfigError(f"mode must be one of {STREAM_MODES}, got {self.mode!r}")
        if not self.tasks:
            raise ConfigError("a stream needs at least one task")
        seen: dict[int, int] = {}
        for i, task in enumerate(self.tasks, start=1):
            for part in (task.train, task.test):
                if part is None:
                    continue
                if part.dim != self.dimension:
                    raise ConfigError(
                        f"task {i} has dimension {part.dim}, stream declares {self.dimension}"
                    )
                bad = part.y[(part.y < 1) | (part.y > self.class_count)]
                if bad.size:
                    raise ConfigError(
                        f"task {i} has labels outside 1..{self.class_count}: {sorted(set(bad))}"
                    )
            if self.mode == "CIL":
                for lab in task.label_set:
                    if lab in seen:
                        raise ConfigError(
                            f"label {lab} appears in tasks {seen[lab]} and {i}; "
                            "CIL tasks must have disjoint label sets"
                        )
                    seen[lab] = i

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class StreamConfig:
    """Synthetic-stream recipe. ``class_count`` defaults to
    ``task_count * classes_per_task``; ``samples_per_class`` is the total per
    class, split into train/test by ``test_fraction``."""

    generator: str = "gaussian-clusters"
    task_count: int = 5
    classes_per_task: int = 2
    samples_per_class: int = 300
    cluster_separation: float = 6.0
    noise_sigma: float = 1.0
    seed: int = 0
    test_fraction: float = 1.0 / 3.0
    dimension: int = 20
    class_count: int | None = None

    def __post_init__(self):
        if self.generator not in ("gaussian-clusters", "file"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.task_count < 1 or self.classes_per_task < 1:
            raise ConfigError("task_count and classes_per_task must be >= 1")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2 to allow a split")
        if self.cluster_separation <= 0 or self.noise_sigma <= 0:
            raise ConfigError("cluster_separation and noise_sigma must be > 0")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError(f"test_fraction must be in (0,1), got {self.test_fraction}")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        k = self.resolved_class_count
        if self.task_count * self.classes_per_task > k:
            raise ConfigError(
                f"{self.task_count} tasks x {self.classes_per_task} classes "
                f"exceed class_count {k}"
            )

    @property
    def resolved_class_count(self) -> int:
        return self.class_count or self.task_count * self.classes_per_task


def default_stream_config(seed: int = 0) -> StreamConfig:
    """The default benchmark: d=20, K=10, 5 tasks of 2 classes,
    200 train + 100 test samples per class, separation 6, noise 1."""
    return StreamConfig(seed=seed)


def _class_means(k: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    if k <= d:
        # scaled basis vectors: every pair sits exactly `separation` apart
        means = np.zeros((k, d))
        means[np.arange(k), np.arange(k)] = separation / math.sqrt(2.0)
        return means
    radius = separation
    for _ in range(200):
        pts = rng.standard_normal((k, d))
        pts *= radius / np.linalg.norm(pts, axis=1, keepdims=True)
        dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= separation:
            return pts
        radius *= 1.25
    raise ConfigError(f"could not place {k} means at separation {separation} in {d} dims")


def generate_gaussian_cil(config: StreamConfig) -> TaskStream:
    """Isotropic Gaussian clusters around well-separated class means,
    partitioned into tasks in label order. Deterministic in the seed."""
    if config.generator != "gaussian-clusters":
        raise ConfigError(f"generator is {config.generator!r}, not gaussian-clusters")
    k = config.resolved_class_count
    d = config.dimension
    n = config.samples_per_class
    n_test = round(n * config.test_fraction)
    if not (1 <= n_test < n):
        raise ConfigError(f"test_fraction {config.test_fraction} leaves no usable split of {n}")
    rng = np.random.default_rng(config.seed)
    means = _class_means(k, d, config.cluster_separation, rng)

    tasks = []
    for t in range(config.task_count):
        labels = range(t * config.classes_per_task + 1, (t + 1) * config.classes_per_task + 1)
        train_parts, test_parts = [], []
        for label in labels:
            pts = means[label - 1] + config.noise_sigma * rng.standard_normal((n, d))
            ys = np.full(n, label, dtype=np.int64)
            train_parts.append(LabeledBatch(pts[: n - n_test], ys[: n - n_test]))
            test_parts.append(LabeledBatch(pts[n - n_test :], ys[n - n_test :]))
        train = concat_batches(train_parts)
        # shuffle within the task so it is i.i.d. in arrival order
        perm = rng.permutation(len(train))
        train = train.subset(perm)
        tasks.append(
            Task(train=train, test=concat_batches(test_parts), label_set=frozenset(labels))
        )
    return TaskStream(tasks=tuple(tasks), mode="CIL", dimension=d, class_count=k)


def to_tfcl(stream: TaskStream, batch_size: int) -> TaskStream:
    """Re-chunk a CIL stream into size-``batch_size`` micro-tasks in arrival
    order (last chunk may be short). Task identities are dropped; the
    original test splits ride along for evaluation only."""
    if stream.mode != "CIL":
        raise ConfigError("to_tfcl expects a CIL stream")
    data = concat_batches([t.train for t in stream.tasks])
    total = len(data)
    if not (1 <= batch_size <= total):
        raise ConfigError(f"micro batch size {batch_size} not in 1..{total}")
    micro = []
    for start in range(0, total, batch_size):
        chunk = LabeledBatch(data.x[start : start + batch_size], data.y[start : start + batch_size])
        micro.append(Task(train=chunk, test=None, label_set=frozenset(np.unique(chunk.y))))
    sizes = np.cumsum([len(t.train) for t in stream.tasks])
    boundaries = tuple(int(math.ceil(c / batch_size)) for c in sizes)
    eval_tests = tuple(t.test for t in stream.tasks) if all(
        t.test is not None for t in stream.tasks
    ) else None
    return TaskStream(
        tasks=tuple(micro),
        mode="TFCL",
        dimension=stream.dimension,
        class_count=stream.class_count,
        eval_tests=eval_tests,
        eval_boundaries=boundaries,
    )


# ---------------------------------------------------------------------------
# CSV ingestion / emission
#
# Row format: feature_1,...,feature_d,label[,task_id]
# CIL rows carry task_id; TFCL rows do not (identities are the point).
# Train and test splits live in separate files of the same row format.
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CsvSchema:
    dimension: int
    mode: str = "CIL"
    micro_batch: int | None = None  # TFCL chunk size
    test_path: str | Path | None = None
    class_count: int | None = None  # defaults to the max label seen

    def __post_init__(self):
        if self.mode not in STREAM_MODES:
            raise ConfigError(f"mode must be one of {STREAM_MODES}, got {self.mode!r}")
        if self.mode == "TFCL" and (self.micro_batch is None or self.micro_batch < 1):
            raise ConfigError("TFCL ingestion needs micro_batch >= 1")


def _parse_rows(path: str | Path, dimension: int, with_task_id: bool):
    expected = dimension + (2 if with_task_id else 1)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != expected:
                raise ParseError(
                    f"expected {expected} comma-separated values, got {len(parts)}", lineno
                )
            try:
                feats = np.array([float(v) for v in parts[:dimension]])
                label = int(parts[dimension])
                task_id = int(parts[dimension + 1]) if with_task_id else None
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if label < 1:
                raise ParseError(f"label must be >= 1, got {label}", lineno)
            rows.append((feats, label, task_id))
    if not rows:
        raise ParseError(f"{path} contains no data rows")
    return rows


def _group_by_task(rows):
    groups: dict[int, list] = {}
    for feats, label, task_id in rows:
        groups.setdefault(task_id, []).append((feats, label))
    out = {}
    for tid, pairs in groups.items():
        out[tid] = LabeledBatch(
            np.stack([f for f, _ in pairs]), np.array([l for _, l in pairs], dtype=np.int64)
        )
    return out


def load_stream_csv(path: str | Path, schema: CsvSchema) -> TaskStream:
    """Load a stream from CSV. CIL rows are grouped by task_id (ascending);
    TFCL rows are chunked by arrival order into ``micro_batch``-sized tasks."""
    if schema.mode == "CIL":
        train_groups = _group_by_task(_parse_rows(path, schema.dimension, with_task_id=True))
        test_groups = {}
        if schema.test_path is not None:
            test_groups = _group_by_task(
                _parse_rows(schema.test_path, schema.dimension, with_task_id=True)
            )
            unknown = set(test_groups) - set(train_groups)
            if unknown:
                raise ConfigError(f"test file has task ids {sorted(unknown)} absent from train")
        max_label = max(int(b.y.max()) for b in train_groups.values())
        if test_groups:
            max_label = max(max_label, max(int(b.y.max()) for b in test_groups.values()))
        k = schema.class_count or max_label
        tasks = []
        for tid in sorted(train_groups):
            train = train_groups[tid]
            test = test_groups.get(tid)
            labels = set(np.unique(train.y))
            if test is not None:
                labels |= set(np.unique(test.y))
            tasks.append(Task(train=train, test=test, label_set=frozenset(labels)))
        return TaskStream(
            tasks=tuple(tasks), mode="CIL", dimension=schema.dimension, class_count=k
        )

    rows = _parse_rows(path, schema.dimension, with_task_id=False)
    data = LabeledBatch(
        np.stack([f for f, _, _ in rows]), np.array([l for _, l, _ in rows], dtype=np.int64)
    )
    k = schema.class_count or int(data.y.max())
    b = schema.micro_batch
    micro = []
    for start in range(0, len(data), b):
        chunk = LabeledBatch(data.x[start : start + b], data.y[start : start + b])
        micro.append(Task(train=chunk, test=None, label_set=frozenset(np.unique(chunk.y))))
    return TaskStream(
        tasks=tuple(micro), mode="TFCL", dimension=schema.dimension, class_count=k
    )


def _write_rows(fh, batch: LabeledBatch, task_id: int | None):
    for i in range(len(batch)):
        cells = [repr(float(v)) for v in batch.x[i]]
        cells.append(str(int(batch.y[i])))
        if task_id is not None:
            cells.append(str(task_id))
        fh.write(",".join(cells) + "\n")


def save_stream_csv(
    stream: TaskStream, path: str | Path, test_path: str | Path | None = None
) -> None:
    """Write a stream in the ingestion row format. Float features are written
    via repr, so a load after save reproduces the stream exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid, task in enumerate(stream.tasks, start=1):
            _write_rows(fh, task.train, tid if stream.mode == "CIL" else None)
    if test_path is not None:
        if stream.mode != "CIL":
            raise ConfigError("test split files apply to CIL streams only")
        with open(test_path, "w", encoding="utf-8") as fh:
            for tid, task in enumerate(stream.tasks, start=1):
                if task.test is not None:
                    _write_rows(fh, task.test, tid)
