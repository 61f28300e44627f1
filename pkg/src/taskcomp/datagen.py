"""Seeded synthetic data sources: rank-controlled linear maps, Gaussian
cluster classification, and 3-class sensor-timeseries anomaly windows.

Every generator is a pure function of (parameters, seed): identical calls
return byte-identical arrays.
"""

from dataclasses import dataclass

import csv

import numpy as np

from .errors import BadRank, ShapeMismatch
from .linalg import as_matrix

CLASSIFICATION = "classification"
REGRESSION = "regression"

# Timeseries channel layout and class semantics.
CHANNELS = ("light", "temperature", "pressure", "humidity")
CLASS_TAMPER, CLASS_SPIKE, CLASS_NORMAL = 0, 1, 2

# Signal shape constants, in units of the natural slow-variation amplitude.
# Chosen so the classes separate exactly at noise 0 and get harder near 1.
_TAMPER_AMPLITUDE = 3.0
_TAMPER_PERIOD = 4
_SPIKE_HEIGHT = 5.0
_DRIFT_AMPLITUDE = (0.25, 0.75)


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray       # N x n
    targets: np.ndarray      # N ints, or N x m reals
    task_kind: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeMismatch("inputs/targets row counts differ")
        overlap = np.intersect1d(self.train_idx, self.test_idx)
        if overlap.size:
            raise ValueError("train/test split overlaps")
        if len(self.train_idx) + len(self.test_idx) != self.inputs.shape[0]:
            raise ValueError("split does not cover the dataset")

    @property
    def n(self):
        return self.inputs.shape[1]

    @property
    def train_inputs(self):
        return self.inputs[self.train_idx]

    @property
    def test_inputs(self):
        return self.inputs[self.test_idx]

    @property
    def train_targets(self):
        return self.targets[self.train_idx]

    @property
    def test_targets(self):
        return self.targets[self.test_idx]

    @property
    def num_classes(self):
        if self.task_kind != CLASSIFICATION:
            raise ValueError("not a classification dataset")
        return int(self.targets.max()) + 1


def _split_indices(n_total, train_fraction=0.8):
    n_train = int(round(n_total * train_fraction))
    return np.arange(n_train), np.arange(n_train, n_total)


def _balanced_labels(n_total, classes):
    counts = [n_total // classes + (1 if i < n_total % classes else 0)
              for i in range(classes)]
    return np.repeat(np.arange(classes), counts)


def gen_linear_task(n, m, r, seed):
    """Rank-r task matrix K = U0 diag(sigma) V0' with log-spaced sigma in [1, 3]."""
    if r > min(m, n):
        raise BadRank(f"rank {r} exceeds min({m}, {n})")
    if r < 0:
        raise BadRank("rank must be nonnegative")
    if r == 0:
        return np.zeros((m, n))
    rng = np.random.default_rng(seed)
    u0, _ = np.linalg.qr(rng.standard_normal((m, r)))
    v0, _ = np.linalg.qr(rng.standard_normal((n, r)))
    sigma = np.geomspace(3.0, 1.0, r)
    return (u0 * sigma) @ v0.T


def gen_gaussian_regression(k, samples, seed):
    """Regression dataset y = K x with standard Gaussian inputs."""
    k = as_matrix(k, "k")
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((samples, k.shape[1]))
    train_idx, test_idx = _split_indices(samples)
    return LabeledDataset(inputs=xs, targets=xs @ k.T, task_kind=REGRESSION,
                          train_idx=train_idx, test_idx=test_idx, seed=seed)


def gen_cluster_classification(n, classes, samples, separation, seed):
    """Unit-covariance Gaussian clusters with centers at mutual distance >= separation.

    Centers sit at separation/sqrt(2) along seeded orthonormal directions,
    which puts every pair exactly *separation* apart.  Labels are balanced
    within one sample; the 80/20 split follows a seeded shuffle.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if classes > n:
        raise ValueError("orthogonal center construction needs classes <= n")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, classes)))
    centers = (separation / np.sqrt(2.0)) * q.T
    labels = _balanced_labels(samples, classes)
    inputs = centers[labels] + rng.standard_normal((samples, n))
    perm = rng.permutation(samples)
    inputs, labels = inputs[perm], labels[perm]
    train_idx, test_idx = _split_indices(samples)
    return LabeledDataset(inputs=inputs, targets=labels, task_kind=CLASSIFICATION,
                          train_idx=train_idx, test_idx=test_idx, seed=seed)


@dataclass(frozen=True)
class TimeseriesWindowSpec:
    window: int = 16
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.window < _TAMPER_PERIOD:
            raise ValueError(f"window must be >= {_TAMPER_PERIOD}")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")

    @property
    def channels(self):
        return len(CHANNELS)

    @property
    def flat_dim(self):
        return self.channels * self.window


def gen_timeseries_windows(spec: TimeseriesWindowSpec, samples):
    """Windows of 4-channel sensor traces in three conditions.

    Class 0 (tamper): high-frequency oscillation on the light and humidity
    channels.  Class 1 (spike): ramp-and-hold bump on the temperature
    channel, ramping over window/4 steps.  Class 2 (normal): slow drift
    plus noise only.  Rows are (channels, window) blocks flattened
    channel-major, so the input dimension is 4 * window.
    """
    if samples < 3:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(spec.seed)
    w = spec.window
    t = np.arange(w)
    labels = _balanced_labels(samples, 3)
    windows = np.empty((samples, spec.channels, w))

    for i, label in enumerate(labels):
        amp = rng.uniform(*_DRIFT_AMPLITUDE, size=spec.channels)
        freq = rng.uniform(0.5, 1.5, size=spec.channels)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.channels)
        drift = amp[:, None] * np.sin(2.0 * np.pi * freq[:, None] * t / w + phase[:, None])
        trace = drift + spec.noise * rng.standard_normal((spec.channels, w))
        if label == CLASS_TAMPER:
            osc_phase = rng.uniform(0.0, 2.0 * np.pi)
            osc = _TAMPER_AMPLITUDE * np.sin(2.0 * np.pi * t / _TAMPER_PERIOD + osc_phase)
            trace[0] += osc
            trace[3] += osc
        elif label == CLASS_SPIKE:
            ramp_len = max(1, w // 4)
            start = rng.integers(0, w - ramp_len + 1)
            bump = np.zeros(w)
            bump[start:start + ramp_len] = np.linspace(0.0, _SPIKE_HEIGHT, ramp_len)
            bump[start + ramp_len:] = _SPIKE_HEIGHT
            trace[1] += bump
        windows[i] = trace

    inputs = windows.reshape(samples, spec.flat_dim)
    perm = rng.permutation(samples)
    inputs, labels = inputs[perm], labels[perm]
    train_idx, test_idx = _split_indices(samples)
    return LabeledDataset(inputs=inputs, targets=labels, task_kind=CLASSIFICATION,
                          train_idx=train_idx, test_idx=test_idx, seed=spec.seed)


def dataset_to_csv(ds: LabeledDataset, path):
    """One row per sample, inputs first, label/target columns last."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for i in range(ds.inputs.shape[0]):
            row = [repr(v) for v in ds.inputs[i]]
            target = ds.targets[i]
            if ds.task_kind == CLASSIFICATION:
                row.append(str(int(target)))
            else:
                row.extend(repr(v) for v in np.atleast_1d(target))
            writer.writerow(row)
