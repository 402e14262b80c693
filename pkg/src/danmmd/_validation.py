"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import InputError, ParameterError


def as_samples(X, name="X", min_samples=1):
    """Return ``X`` as a finite float64 array of shape (n_samples, n_features).

    1-D input is read as ``n`` one-dimensional samples.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D (n_samples, n_features), got ndim={arr.ndim}")
    if arr.shape[0] < min_samples:
        raise InputError(f"{name} needs at least {min_samples} samples, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_vector(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def check_same_width(*arrays, names=None):
    widths = {a.shape[-1] for a in arrays}
    if len(widths) > 1:
        label = ", ".join(names) if names else "inputs"
        raise InputError(f"dimension mismatch between {label}: widths {sorted(widths)}")


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ParameterError(f"{name} must be a finite real, got {value!r}")
    if (strict and value <= 0) or (not strict and value < 0):
        raise ParameterError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value!r}")
    return float(value)


def check_labels(y, n_classes=None, allow_unlabeled=False, name="y"):
    y = np.asarray(y)
    if y.ndim != 1:
        raise InputError(f"{name} must be 1-D")
    if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
        raise InputError(f"{name} must hold integer class indices")
    y = y.astype(np.int64)
    low = -1 if allow_unlabeled else 0
    if y.size and y.min() < low:
        raise InputError(f"{name} has label {y.min()} below {low}")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise InputError(f"{name} has label {y.max()} outside [0, {n_classes})")
    return y
