"""Desk-scale trainable tasks and the training loop that drives the interpreter.

Two dataset sources are supported: synthetic Gaussian blobs on the unit
circle, and MNIST-style IDX image/label files parsed byte-exactly. Models
are one-hidden-layer ReLU MLPs with analytically computed gradients, so the
whole pipeline is framework-free and deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .genome import Genome
from .interpreter import DivergenceError, ScheduleContext, init_state, step

REASON_NAN_INF = "nan_inf"
REASON_LOSS_EXCEEDED = "loss_exceeded_50"
REASON_NUMERIC_ERROR = "numeric_error"
DIVERGENCE_REASONS = frozenset({REASON_NAN_INF, REASON_LOSS_EXCEEDED, REASON_NUMERIC_ERROR})

LOSS_DIVERGENCE_LIMIT = 50.0
TRAIN_FRACTION = 0.8


class IdxFormatError(ValueError):
    """Raised when an IDX file does not follow the format."""


@dataclass(frozen=True)
class Dataset:
    """Feature/label arrays with a train/test split."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    d: int
    C: int


@dataclass(frozen=True)
class MlpModel:
    """One-hidden-layer ReLU MLP: x @ W1 + b1 -> relu -> @ W2 + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def h(self) -> int:
        return self.W1.shape[1]


@dataclass(frozen=True)
class BlobsSource:
    """Parameters of a synthetic Gaussian-blob classification dataset."""

    seed: int
    n_per_class: int
    d: int
    classes: int
    sigma: float


@dataclass(frozen=True)
class IdxSource:
    """Paths to one train and one test IDX image/label file pair."""

    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class TaskSpec:
    """A trainable task: dataset source plus model and training protocol."""

    name: str
    source: BlobsSource | IdxSource
    hidden_width: int
    batch_size: int
    steps: int
    subset_size: int | None = None
    subset_seed: int = 0


@dataclass(frozen=True)
class TrainRun:
    """Outcome of one training run."""

    loss_trace: tuple[float, ...]
    test_accuracy: float | None
    diverged: bool
    divergence_reason: str | None = None


def make_blobs(seed: int, n_per_class: int, d: int, C: int, sigma: float) -> Dataset:
    """Gaussian blobs around C class means equally spaced on the unit circle
    (first two coordinates; zero elsewhere), split 80/20 per class."""
    if n_per_class < 2 or d < 2 or C < 2 or sigma <= 0:
        raise ValueError("need n_per_class >= 2, d >= 2, C >= 2, sigma > 0")
    rng = np.random.default_rng(seed)
    n_train = int(TRAIN_FRACTION * n_per_class)
    train_parts, test_parts = [], []
    train_labels, test_labels = [], []
    for c in range(C):
        angle = 2.0 * np.pi * c / C
        mean = np.zeros(d)
        mean[0] = np.cos(angle)
        mean[1] = np.sin(angle)
        points = mean + sigma * rng.standard_normal((n_per_class, d))
        train_parts.append(points[:n_train])
        test_parts.append(points[n_train:])
        train_labels.append(np.full(n_train, c, dtype=np.int64))
        test_labels.append(np.full(n_per_class - n_train, c, dtype=np.int64))
    return Dataset(
        train_x=np.concatenate(train_parts),
        train_y=np.concatenate(train_labels),
        test_x=np.concatenate(test_parts),
        test_y=np.concatenate(test_labels),
        d=d,
        C=C,
    )


_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


def _read_exact(data: bytes, offset: int, count: int, path: str, what: str) -> bytes:
    if offset + count > len(data):
        raise IdxFormatError(f"{path}: truncated file while reading {what}")
    return data[offset:offset + count]


def load_idx(images_path: str, labels_path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label file pair.

    Returns (features, labels): features are row-flattened pixels scaled to
    [0, 1] by dividing by 255, labels are int64.
    """
    with open(images_path, "rb") as f:
        img_data = f.read()
    with open(labels_path, "rb") as f:
        lbl_data = f.read()

    magic, n_images, rows, cols = struct.unpack(
        ">IIII", _read_exact(img_data, 0, 16, images_path, "image header")
    )
    if magic != _IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08X}, expected 0x{_IMAGES_MAGIC:08X}"
        )
    n_pixels = n_images * rows * cols
    pixels = _read_exact(img_data, 16, n_pixels, images_path, "pixel data")
    if len(img_data) != 16 + n_pixels:
        raise IdxFormatError(f"{images_path}: {len(img_data) - 16 - n_pixels} trailing bytes")

    magic, n_labels = struct.unpack(
        ">II", _read_exact(lbl_data, 0, 8, labels_path, "label header")
    )
    if magic != _LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{magic:08X}, expected 0x{_LABELS_MAGIC:08X}"
        )
    label_bytes = _read_exact(lbl_data, 8, n_labels, labels_path, "label data")
    if len(lbl_data) != 8 + n_labels:
        raise IdxFormatError(f"{labels_path}: {len(lbl_data) - 8 - n_labels} trailing bytes")

    if n_images != n_labels:
        raise IdxFormatError(
            f"count mismatch: {n_images} images in {images_path} "
            f"vs {n_labels} labels in {labels_path}"
        )
    features = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(n_images, rows * cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return features, labels


def load_idx_dataset(source: IdxSource) -> Dataset:
    """Load train and test IDX pairs into one Dataset."""
    train_x, train_y = load_idx(source.train_images, source.train_labels)
    test_x, test_y = load_idx(source.test_images, source.test_labels)
    if train_x.shape[1] != test_x.shape[1]:
        raise IdxFormatError(
            f"feature size mismatch: train {train_x.shape[1]} vs test {test_x.shape[1]}"
        )
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    return Dataset(train_x, train_y, test_x, test_y, d=train_x.shape[1], C=n_classes)


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Fixed random subset of n training examples; test split unchanged."""
    n_train = dataset.train_x.shape[0]
    if n > n_train:
        raise ValueError(f"cannot subsample {n} of {n_train} training examples")
    idx = np.random.default_rng(seed).permutation(n_train)[:n]
    return Dataset(
        train_x=dataset.train_x[idx],
        train_y=dataset.train_y[idx],
        test_x=dataset.test_x,
        test_y=dataset.test_y,
        d=dataset.d,
        C=dataset.C,
    )


def init_mlp(seed, d: int, h: int, C: int) -> MlpModel:
    """Uniform init scaled by 1/sqrt(fan_in) per layer; zero biases."""
    if d < 1 or h < 1 or C < 1:
        raise ValueError("d, h, C must all be >= 1")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(3.0 / d)
    lim2 = np.sqrt(3.0 / h)
    return MlpModel(
        W1=rng.uniform(-lim1, lim1, size=(d, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-lim2, lim2, size=(h, C)),
        b2=np.zeros(C),
    )


def flatten_params(model: MlpModel) -> np.ndarray:
    """Row-major concatenation in the fixed layout W1, b1, W2, b2."""
    return np.concatenate([model.W1.ravel(), model.b1, model.W2.ravel(), model.b2])


def unflatten_params(vec: np.ndarray, d: int, h: int, C: int) -> MlpModel:
    """Inverse of flatten_params; returns views into vec."""
    sizes = (d * h, h, h * C, C)
    if vec.shape != (sum(sizes),):
        raise ValueError(f"expected a vector of {sum(sizes)} parameters, got {vec.shape}")
    i1 = sizes[0]
    i2 = i1 + sizes[1]
    i3 = i2 + sizes[2]
    return MlpModel(
        W1=vec[:i1].reshape(d, h),
        b1=vec[i1:i2],
        W2=vec[i2:i3].reshape(h, C),
        b2=vec[i3:],
    )


def param_count(d: int, h: int, C: int) -> int:
    return d * h + h + h * C + C


def _forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = x @ model.W1 + model.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ model.W2 + model.b2
    return pre, hidden, logits


def forward_loss(model: MlpModel, batch_x: np.ndarray, batch_y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (max-subtraction stabilized) and the logits."""
    if not np.all(np.isfinite(batch_x)):
        raise ValueError("non-finite batch features")
    # Exploding models drive logits to inf/nan; the loss carries that out as
    # data (the training loop treats it as divergence), so keep numpy quiet.
    with np.errstate(over="ignore", invalid="ignore"):
        _, _, logits = _forward(model, batch_x)
        z = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = float(np.mean(log_norm[:, 0] - z[np.arange(batch_x.shape[0]), batch_y]))
    return loss, logits


def backward(model: MlpModel, batch_x: np.ndarray, batch_y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. all parameters, flattened
    in the same layout as flatten_params. ReLU derivative at 0 is 0."""
    if not np.all(np.isfinite(batch_x)):
        raise ValueError("non-finite batch features")
    n = batch_x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        pre, hidden, logits = _forward(model, batch_x)
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), batch_y] -= 1.0
        dlogits = p / n
        dW2 = hidden.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dhidden = dlogits @ model.W2.T
        dhidden = np.where(pre > 0.0, dhidden, 0.0)
        dW1 = batch_x.T @ dhidden
        db1 = dhidden.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


def accuracy(model: MlpModel, test_x: np.ndarray, test_y: np.ndarray) -> float:
    """Fraction of argmax-correct test examples; argmax ties go to the
    smallest class index."""
    if test_x.shape[0] == 0:
        raise ValueError("empty test set")
    _, _, logits = _forward(model, test_x)
    return float(np.mean(np.argmax(logits, axis=1) == test_y))


_DATASET_CACHE: dict[tuple, Dataset] = {}


def materialize(task: TaskSpec) -> Dataset:
    """Build (and cache) the dataset a task trains on, subsampling applied."""
    key = (task.source, task.subset_size, task.subset_seed)
    cached = _DATASET_CACHE.get(key)
    if cached is not None:
        return cached
    if isinstance(task.source, BlobsSource):
        s = task.source
        dataset = make_blobs(s.seed, s.n_per_class, s.d, s.classes, s.sigma)
    elif isinstance(task.source, IdxSource):
        dataset = load_idx_dataset(task.source)
    else:
        raise TypeError(f"unknown task source {task.source!r}")
    if task.subset_size is not None:
        dataset = subsample(dataset, task.subset_size, task.subset_seed)
    _DATASET_CACHE[key] = dataset
    return dataset


def train(genome: Genome, task: TaskSpec, seed: int) -> TrainRun:
    """Train the task's MLP under the genome for task.steps mini-batch steps.

    Pure function of (genome, task, seed): model init and the per-epoch batch
    shuffle both derive from seed. The loss is recorded before each update.
    Divergence (non-finite loss, loss above 50, non-finite parameters, or a
    numeric failure inside the optimizer) ends the run early and is reported
    as data, not as an exception.
    """
    dataset = materialize(task)
    n = dataset.train_x.shape[0]
    if task.batch_size > n:
        raise ValueError(f"batch_size {task.batch_size} exceeds {n} training examples")
    if task.steps < 1:
        raise ValueError("steps must be >= 1")

    model = init_mlp(seed, dataset.d, task.hidden_width, dataset.C)
    params = flatten_params(model)
    state = init_state(genome, params.size)
    ctx = ScheduleContext(total_steps=task.steps)
    shuffle_rng = np.random.default_rng((seed, 1))

    trace: list[float] = []
    perm = shuffle_rng.permutation(n)
    pos = 0
    for _ in range(task.steps):
        if pos + task.batch_size > n:
            perm = shuffle_rng.permutation(n)
            pos = 0
        idx = perm[pos:pos + task.batch_size]
        pos += task.batch_size
        batch_x = dataset.train_x[idx]
        batch_y = dataset.train_y[idx]

        view = unflatten_params(params, dataset.d, task.hidden_width, dataset.C)
        loss, _ = forward_loss(view, batch_x, batch_y)
        trace.append(loss)
        if not np.isfinite(loss):
            return TrainRun(tuple(trace), None, True, REASON_NAN_INF)
        if loss > LOSS_DIVERGENCE_LIMIT:
            return TrainRun(tuple(trace), None, True, REASON_LOSS_EXCEEDED)

        grads = backward(view, batch_x, batch_y)
        try:
            params, state = step(genome, state, params, grads, ctx)
        except DivergenceError:
            return TrainRun(tuple(trace), None, True, REASON_NUMERIC_ERROR)
        if not np.all(np.isfinite(params)):
            return TrainRun(tuple(trace), None, True, REASON_NAN_INF)

    final = unflatten_params(params, dataset.d, task.hidden_width, dataset.C)
    acc = accuracy(final, dataset.test_x, dataset.test_y)
    return TrainRun(tuple(trace), acc, False, None)
