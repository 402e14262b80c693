"""Synthetic domain-shift datasets and the labelled-feature CSV format.

CSV layout: a header ``label,f0,f1,...`` then one row per sample. Labels are
integers, ``-1`` marking an unlabelled sample. Floats are written with 17
significant digits so a write/read round trip is bit-exact.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import make_rng
from ._validation import check_labels, check_positive
from .exceptions import InputError, ParseError

UNLABELED = -1


@dataclass(eq=False)
class LabeledDataset:
    """Samples with integer labels (``-1`` = unlabelled) and provenance."""

    features: np.ndarray
    labels: np.ndarray
    domain_tag: str = ""
    seed: int = None
    class_count: int = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise InputError("features must be a 2-D array")
        y = check_labels(self.labels, self.class_count, allow_unlabeled=True)
        if y.shape[0] != X.shape[0]:
            raise InputError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        self.features = X
        self.labels = y

    def __len__(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def is_labeled(self):
        return len(self) > 0 and bool(np.all(self.labels >= 0))

    def unlabeled(self):
        return LabeledDataset(self.features, np.full(len(self), UNLABELED),
                              self.domain_tag, self.seed, self.class_count)


def _rotate(points, rotation_deg):
    theta = np.deg2rad(rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return points @ R.T


def gen_moons(n, noise_sigma=0.1, rotation_deg=0.0, seed=0, domain_tag="moons"):
    """Two interleaved half-circles, Gaussian noise, then rotation about the origin.

    Class 0 lies on ``(cos t, sin t)`` and class 1 on ``(1 - cos t, 0.5 - sin t)``
    with ``t`` evenly spaced on ``[0, pi]``; ``n / 2`` points per class.
    """
    if int(n) != n or n < 2 or n % 2:
        raise InputError(f"n must be an even integer >= 2, got {n}")
    n = int(n)
    noise_sigma = check_positive(noise_sigma, "noise_sigma", strict=False)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([outer, inner])
    y = np.repeat([0, 1], half)
    if noise_sigma > 0:
        X = X + noise_sigma * make_rng(seed).standard_normal(X.shape)
    if rotation_deg:
        X = _rotate(X, rotation_deg)
    return LabeledDataset(X, y, domain_tag, seed, 2)


def class_counts(n, n_classes):
    """Per-class sizes ``n // C``, remainder assigned to the lowest class indices."""
    base, rem = divmod(int(n), int(n_classes))
    return [base + (1 if c < rem else 0) for c in range(n_classes)]


def gen_gaussians(n, means, shared_sigma=1.0, shift_vector=None, seed=0):
    """Isotropic Gaussian classes; the target translates every mean by ``shift_vector``.

    Returns
    -------
    source, target : LabeledDataset
        Independent draws from two seeded streams of ``seed``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    n_classes, dim = means.shape
    if n_classes < 2:
        raise InputError("gen_gaussians needs at least 2 class means")
    shift = np.zeros(dim) if shift_vector is None else np.asarray(shift_vector, dtype=np.float64).reshape(-1)
    if shift.size != dim:
        raise InputError(f"shift has dimension {shift.size}, means have {dim}")
    sigma = check_positive(shared_sigma, "shared_sigma", strict=False)
    counts = class_counts(n, n_classes)
    y = np.repeat(np.arange(n_classes), counts)

    def draw(offset, stream, tag):
        rng = make_rng(seed, stream)
        X = means[y] + offset + sigma * rng.standard_normal((y.size, dim))
        return LabeledDataset(X, y.copy(), tag, seed, n_classes)

    return draw(0.0, 0, "source"), draw(shift, 1, "target")


def format_float(x):
    return format(float(x), ".17g")


def dumps_csv(dataset):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", *(f"f{j}" for j in range(dataset.n_features))])
    for label, row in zip(dataset.labels, dataset.features):
        writer.writerow([str(int(label)), *(format_float(v) for v in row)])
    return buf.getvalue()


def write_csv(dataset, path):
    Path(path).write_text(dumps_csv(dataset), encoding="utf-8", newline="\n")


def write_features_csv(features, path, labels=None):
    features = np.asarray(features, dtype=np.float64)
    if labels is None:
        labels = np.full(features.shape[0], UNLABELED)
    write_csv(LabeledDataset(features, labels), path)


def read_csv(path, class_count=None):
    """Parse a labelled-feature CSV; errors name the offending line (1-based)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError("empty file", path=path, line=1) from None
    if not header or header[0].strip() != "label":
        raise ParseError("header must start with 'label'", path=path, line=1)
    width = len(header) - 1
    expected = [f"f{j}" for j in range(width)]
    if [h.strip() for h in header[1:]] != expected:
        raise ParseError("feature columns must be named f0, f1, ...", path=path, line=1)
    labels, feats = [], []
    for row in rows:
        line = rows.line_num
        if not row:
            continue
        if len(row) != width + 1:
            raise ParseError(f"expected {width + 1} columns, found {len(row)}", path=path, line=line)
        try:
            label = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"malformed value: {exc}", path=path, line=line) from None
        if label < UNLABELED:
            raise ParseError(f"label {label} is below -1", path=path, line=line)
        if class_count is not None and label >= class_count:
            raise ParseError(f"label {label} outside [0, {class_count})", path=path, line=line)
        labels.append(label)
        feats.append(values)
    X = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    return LabeledDataset(X, np.array(labels, dtype=np.int64), path.stem, None, class_count)
