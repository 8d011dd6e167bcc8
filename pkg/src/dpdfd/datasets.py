"""Desk-scale data: Gaussian-blob classification sets, a plain-text grid
loader, and non-private teacher pretraining."""

import math
import os
from dataclasses import dataclass

import numpy as np

from .backend import softmax_rows
from .errors import NumericalError, ValidationError
from .nnkit import accuracy, backward, forward, init_mlp, sgd_step

PIXEL_MAX = 255.0


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs scaled to [-1, 1] with integer labels in [0, class_count)."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "all"

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValidationError("inputs must be a 2-d array")
        if labels.shape != (inputs.shape[0],):
            raise ValidationError("one label per input row required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValidationError("labels must lie in [0, class_count)")
        if inputs.size and (inputs.min() < -1.0 - 1e-12 or inputs.max() > 1.0 + 1e-12):
            raise ValidationError("inputs must lie in [-1, 1]")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.inputs.shape[0]

    def manifest(self):
        return {
            "k": self.class_count,
            "d": int(self.inputs.shape[1]),
            "N": len(self),
            "split": self.split,
        }


def make_blobs(classes, per_class, dim, spread, seed, center_range=0.5,
               min_separation=0.0, train_fraction=0.8):
    """Seeded Gaussian clusters, stratified 80/20 into (train, test).

    Centers are drawn uniformly in [-center_range, center_range]^dim and
    redrawn (up to 200 times) until every pair is at least
    min_separation apart. If any point ends up outside [-1, 1], the
    whole cloud is scaled down by the largest magnitude, which preserves
    the geometry; with spread 0 every point sits exactly on its center.
    """
    if classes < 2:
        raise ValidationError("need at least two classes")
    if dim < 2:
        raise ValidationError("need at least two input dimensions")
    if per_class < 2:
        raise ValidationError("need at least two points per class")
    if spread < 0:
        raise ValidationError("spread must be nonnegative")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    centers = None
    for _ in range(200):
        candidate = rng.uniform(-center_range, center_range, size=(classes, dim))
        gaps = [
            np.linalg.norm(candidate[i] - candidate[j])
            for i in range(classes)
            for j in range(i + 1, classes)
        ]
        if min(gaps) >= min_separation:
            centers = candidate
            break
    if centers is None:
        raise ValidationError(
            f"could not place {classes} centers {min_separation} apart in "
            f"[-{center_range}, {center_range}]^{dim}"
        )
    points = np.concatenate([
        centers[c] + spread * rng.standard_normal((per_class, dim))
        for c in range(classes)
    ])
    labels = np.repeat(np.arange(classes), per_class)
    peak = np.abs(points).max()
    if peak > 1.0:
        points = points / peak

    train_idx, test_idx = [], []
    cut = int(round(train_fraction * per_class))
    for c in range(classes):
        order = rng.permutation(per_class) + c * per_class
        train_idx.extend(order[:cut])
        test_idx.extend(order[cut:])
    train_idx = np.array(train_idx)[rng.permutation(len(train_idx))]
    test_idx = np.array(test_idx)[rng.permutation(len(test_idx))]
    train = LabeledDataset(points[train_idx], labels[train_idx], classes, "train")
    test = LabeledDataset(points[test_idx], labels[test_idx], classes, "test")
    return train, test


def load_grid_csv(path, pixel_max=PIXEL_MAX):
    """Read `label,p1,...,pd` rows; pixels in [0, pixel_max] map to [-1, 1].

    Malformed rows are rejected with their line number.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ValidationError(f"grid file not found: {path}") from None
    rows, labels = [], []
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            label = int(parts[0])
            pixels = [float(p) for p in parts[1:]]
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: not a label,pixels row") from None
        if label < 0:
            raise ValidationError(f"{path}:{lineno}: label {label} out of range")
        if not pixels:
            raise ValidationError(f"{path}:{lineno}: row has no pixel values")
        if width is None:
            width = len(pixels)
        elif len(pixels) != width:
            raise ValidationError(
                f"{path}:{lineno}: expected {width} pixels, found {len(pixels)}"
            )
        if min(pixels) < 0 or max(pixels) > pixel_max:
            raise ValidationError(f"{path}:{lineno}: pixel outside [0, {pixel_max}]")
        rows.append(pixels)
        labels.append(label)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    inputs = np.array(rows, dtype=np.float64) / (pixel_max / 2.0) - 1.0
    labels = np.array(labels)
    return LabeledDataset(inputs, labels, int(labels.max()) + 1, "all")


def save_grid_csv(dataset, path, pixel_max=PIXEL_MAX):
    """Inverse of load_grid_csv, written with full float precision."""
    pixels = (dataset.inputs + 1.0) * (pixel_max / 2.0)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(dataset.labels, pixels):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def pretrain_teacher(dataset, hidden=(64, 64), steps=2000, lr=0.1, batch_size=64,
                     seed=0, eval_set=None):
    """Plain minibatch SGD with cross-entropy; no privacy machinery.

    Returns (model, metrics). The result is the sensitive artifact the
    rest of the package exists to convert.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot pretrain on an empty dataset")
    k = dataset.class_count
    dims = [dataset.inputs.shape[1], *hidden, k]
    activations = ["relu"] * len(hidden) + ["identity"]
    model = init_mlp(dims, activations, seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(9,))))
    eye = np.eye(k)
    n = len(dataset)
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        xb = dataset.inputs[idx]
        yb = dataset.labels[idx]
        trace = forward(model, xb)
        probs = softmax_rows(trace.logits)
        grad = (probs - eye[yb]) / len(idx)
        loss = float(-np.log(probs[np.arange(len(idx)), yb] + 1e-300).mean())
        if not math.isfinite(loss):
            raise NumericalError(f"teacher pretraining diverged at step {step}")
        grads, _ = backward(model, trace, grad)
        model = sgd_step(model, grads, lr)
    metrics = {
        "steps": steps,
        "train_accuracy": accuracy(model, dataset.inputs, dataset.labels),
    }
    if eval_set is not None:
        metrics["test_accuracy"] = accuracy(model, eval_set.inputs, eval_set.labels)
    return model, metrics
