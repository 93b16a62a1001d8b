"""Seedable synthetic datasets and minibatch sampling.

Randomness comes from numpy's counter-based Philox generator. Each consumer
gets its own stream, keyed by ``(seed, stream_id, *extra)`` through a
``SeedSequence``, so drawing from one stream never shifts another: the model
initialization does not depend on how many samples were generated, and the
minibatch at step ``t`` depends only on ``(seed, t)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .models import Batch

DATA_STREAM = 0
INIT_STREAM = 1
SAMPLING_STREAM = 2
SPLIT_STREAM = 3

DATASET_KINDS = ("grf_regression", "linear_regression", "gaussian_blobs")
SCHEDULES = ("constant", "sqrt_t", "linear_t", "full")


def stream(seed: int, stream_id: int, *extra: int) -> np.random.Generator:
    """Independent Philox generator for one named purpose."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream_id, *extra])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DatasetSpec:
    kind: str = "grf_regression"
    n_samples: int = 2000
    d_in: int = 20
    d_out: int = 20
    seed: int = 0
    kernel_lengthscale: float | None = None  # None: sqrt(d_in)
    n_features: int = 512
    test_fraction: float = 0.1
    class_sep: float = 1.0  # blob centers ~ N(0, class_sep^2 I)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.n_samples < 2:
            raise ConfigurationError("need at least one train and one test sample")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        if self.d_in < 1 or self.d_out < 1 or self.n_features < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.kernel_lengthscale is not None and not self.kernel_lengthscale > 0:
            raise ConfigurationError("kernel_lengthscale must be positive")

    @property
    def lengthscale(self) -> float:
        return self.kernel_lengthscale if self.kernel_lengthscale is not None else math.sqrt(self.d_in)

    @property
    def n_test(self) -> int:
        return min(self.n_samples - 1, max(1, round(self.n_samples * self.test_fraction)))

    @property
    def n_train(self) -> int:
        return self.n_samples - self.n_test

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplitDataset:
    train: Batch
    test: Batch
    spec: DatasetSpec
    extras: dict = field(default_factory=dict)


def _split(spec: DatasetSpec, x: np.ndarray, y: np.ndarray) -> SplitDataset:
    perm = stream(spec.seed, SPLIT_STREAM).permutation(spec.n_samples)
    test_idx = np.sort(perm[: spec.n_test])
    train_idx = np.sort(perm[spec.n_test :])
    return SplitDataset(Batch(x[train_idx], y[train_idx]), Batch(x[test_idx], y[test_idx]), spec)


def sample_rff_function(rng: np.random.Generator, d_in: int, d_out: int, n_features: int, lengthscale: float):
    """Draw ``f: R^d_in -> R^d_out`` whose outputs approximate independent GP
    samples with kernel ``exp(-|x - x'|^2 / (2 lengthscale^2))``."""
    omega = rng.normal(0.0, 1.0 / lengthscale, size=(n_features, d_in))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    weights = rng.standard_normal((d_out, n_features))
    norm = math.sqrt(2.0 / n_features)

    def f(x):
        feats = np.cos(np.asarray(x, dtype=np.float64) @ omega.T + phase)
        return norm * feats @ weights.T

    return f


def generate_grf(spec: DatasetSpec) -> SplitDataset:
    if spec.kind != "grf_regression":
        raise ConfigurationError("generate_grf needs kind='grf_regression'")
    rng = stream(spec.seed, DATA_STREAM)
    x = rng.standard_normal((spec.n_samples, spec.d_in))
    f = sample_rff_function(rng, spec.d_in, spec.d_out, spec.n_features, spec.lengthscale)
    return _split(spec, x, f(x))


def generate_linear(spec: DatasetSpec, max_retries: int = 10):
    """Realizable linear data ``y = W_star x``.

    Returns ``(dataset, W_star, X)`` with ``X`` the (d_in, J) matrix of
    training inputs, redrawn until its smallest singular value exceeds 1e-8.
    """
    if spec.kind != "linear_regression":
        raise ConfigurationError("generate_linear needs kind='linear_regression'")
    if spec.n_train < spec.d_in:
        raise ConfigurationError("need at least d_in training samples for a full-rank X")
    for attempt in range(max_retries):
        rng = stream(spec.seed, DATA_STREAM, attempt)
        w_star = rng.standard_normal((spec.d_out, spec.d_in))
        x = rng.standard_normal((spec.n_samples, spec.d_in))
        ds = _split(spec, x, x @ w_star.T)
        big_x = ds.train.inputs.T.copy()
        if np.linalg.svd(big_x, compute_uv=False)[-1] > 1e-8:
            ds.extras = {"W_star": w_star, "X": big_x}
            return ds, w_star, big_x
    raise InvalidInputError("could not draw a full-rank input matrix")


def generate_blobs(spec: DatasetSpec) -> SplitDataset:
    """Gaussian class clusters; ``d_out`` is the number of classes."""
    if spec.kind != "gaussian_blobs":
        raise ConfigurationError("generate_blobs needs kind='gaussian_blobs'")
    rng = stream(spec.seed, DATA_STREAM)
    centers = spec.class_sep * rng.standard_normal((spec.d_out, spec.d_in))
    labels = rng.integers(0, spec.d_out, spec.n_samples)
    x = centers[labels] + rng.standard_normal((spec.n_samples, spec.d_in))
    return _split(spec, x, labels)


def generate(spec: DatasetSpec) -> SplitDataset:
    if spec.kind == "grf_regression":
        return generate_grf(spec)
    if spec.kind == "linear_regression":
        return generate_linear(spec)[0]
    return generate_blobs(spec)


@dataclass(frozen=True)
class BatchSchedule:
    kind: str = "constant"
    b: int = 128

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigurationError(f"unknown batch schedule {self.kind!r}")
        if self.kind == "constant" and self.b < 1:
            raise ConfigurationError("constant batch size must be positive")

    def size(self, t: int, n: int) -> int:
        if self.kind == "full":
            return n
        if self.kind == "constant":
            raw = self.b
        elif self.kind == "sqrt_t":
            raw = math.ceil(math.sqrt(t))
        else:
            raw = t
        return max(1, min(n, raw))

    @classmethod
    def parse(cls, text: str) -> "BatchSchedule":
        """``'full'``, ``'sqrt_t'``, ``'linear_t'`` or an integer batch size."""
        if text in ("full", "sqrt_t", "linear_t"):
            return cls(text, 0)
        return cls("constant", int(text))

    def __str__(self) -> str:
        return str(self.b) if self.kind == "constant" else self.kind


def minibatch_sampler(dataset: SplitDataset, schedule: BatchSchedule, seed: int, t: int) -> Batch:
    """Batch for step ``t`` (1-based), drawn without replacement.

    The returned batch carries ``scale = n_train / b`` so summed losses give
    an unbiased estimate of the full training loss.
    """
    train = dataset.train
    n = len(train)
    b = schedule.size(t, n)
    if b == n:
        return Batch(train.inputs, train.targets, 1.0)
    idx = stream(seed, SAMPLING_STREAM, t).choice(n, size=b, replace=False)
    return Batch(train.inputs[idx], train.targets[idx], n / b)


def save_dataset(dataset: SplitDataset, path) -> None:
    """CSV with a one-line ``# {json spec}`` header, then a ``split`` column."""
    path = Path(path)
    spec = dataset.spec
    classify = dataset.train.targets.ndim == 1
    d_in = dataset.train.inputs.shape[1]
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(spec.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        ycols = ["label"] if classify else [f"y{k}" for k in range(dataset.train.targets.shape[1])]
        w.writerow(["split", *[f"x{k}" for k in range(d_in)], *ycols])
        for split, batch in (("train", dataset.train), ("test", dataset.test)):
            for xi, yi in zip(batch.inputs, batch.targets):
                ys = [str(int(yi))] if classify else [repr(float(v)) for v in yi]
                w.writerow([split, *[repr(float(v)) for v in xi], *ys])


def load_dataset(path) -> SplitDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise InvalidInputError("dataset CSV must start with a '# {json}' header line")
        spec = DatasetSpec(**json.loads(first[2:]))
        reader = csv.reader(fh)
        header = next(reader)
        d_in = sum(1 for h in header if h.startswith("x"))
        classify = header[-1] == "label"
        rows = {"train": ([], []), "test": ([], [])}
        for row in reader:
            xs, ys = rows[row[0]]
            xs.append([float(v) for v in row[1 : 1 + d_in]])
            ys.append(int(row[-1]) if classify else [float(v) for v in row[1 + d_in :]])

    def mk(split):
        xs, ys = rows[split]
        return Batch(np.array(xs), np.array(ys, dtype=np.int64 if classify else np.float64))
    return SplitDataset(mk("train"), mk("test"), spec)
