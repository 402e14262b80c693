"""Gaussian kernels, convex multi-kernel combinations and bandwidth selection.

A Gaussian base kernel here is ``k(x, y) = exp(-||x - y||^2 / gamma)``: the
bandwidth ``gamma`` is expressed in squared-distance units, so it can be read
directly off a median of squared pairwise distances.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_samples, as_vector, check_positive, check_same_width
from .exceptions import DegenerateInputError, InputError, ParameterError

WEIGHT_SUM_TOL = 1e-9
MAX_MEDIAN_PAIRS = 10**6


def _frozen(values):
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """A convex combination ``sum_u weights[u] * k_{bandwidths[u]}``.

    Parameters
    ----------
    bandwidths : array-like of shape (m,)
        Positive Gaussian bandwidths (squared-distance units).
    weights : array-like of shape (m,), optional
        Non-negative weights summing to one. Uniform when omitted.
    """

    bandwidths: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        bw = _frozen(self.bandwidths)
        if bw.size < 1:
            raise ParameterError("a kernel family needs at least one bandwidth")
        if not np.all(np.isfinite(bw)) or np.any(bw <= 0):
            raise ParameterError(f"bandwidths must be finite and > 0, got {bw}")
        if self.weights is None:
            w = _frozen(np.full(bw.size, 1.0 / bw.size))
        else:
            w = _frozen(self.weights)
        if w.shape != bw.shape:
            raise ParameterError(f"{w.size} weights for {bw.size} bandwidths")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParameterError(f"weights must be finite and >= 0, got {w}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ParameterError(f"weights must sum to 1, got sum {w.sum()!r}")
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.bandwidths.size

    def with_weights(self, weights):
        """Return a copy with new weights (renormalized to sum to one)."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise ParameterError("weights must have a positive sum")
        return KernelFamily(self.bandwidths, w / total)

    def base(self, u):
        """The single-kernel family holding only bandwidth ``u``."""
        return KernelFamily([self.bandwidths[u]], [1.0])

    def __eq__(self, other):
        if not isinstance(other, KernelFamily):
            return NotImplemented
        return (np.array_equal(self.bandwidths, other.bandwidths)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.bandwidths.tobytes(), self.weights.tobytes()))

    def __repr__(self):
        return f"KernelFamily(m={self.size}, bandwidths={self.bandwidths!r}, weights={self.weights!r})"


def eval_gaussian(x, y, gamma):
    """Evaluate ``exp(-||x - y||^2 / gamma)`` for two vectors."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.size} vs {y.size}")
    gamma = check_positive(gamma, "gamma")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / gamma))


def eval_multi(x, y, family):
    """Evaluate the multi-kernel ``sum_u beta_u k_u(x, y)``."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.size} vs {y.size}")
    diff = x - y
    sq = np.dot(diff, diff)
    return float(np.dot(family.weights, np.exp(-sq / family.bandwidths)))


def sq_distances(X, Y):
    """Squared Euclidean distance matrix between the rows of X and Y."""
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def gram(X, Y, family):
    """Gram matrix of the multi-kernel between row samples X and Y."""
    X = as_samples(X, "X")
    Y = as_samples(Y, "Y")
    check_same_width(X, Y, names=("X", "Y"))
    sq = sq_distances(X, Y)
    out = np.zeros_like(sq)
    for gamma, beta in zip(family.bandwidths, family.weights):
        if beta != 0.0:
            out += beta * np.exp(-sq / gamma)
    return out


def median_heuristic(samples, max_pairs=MAX_MEDIAN_PAIRS, seed=0):
    """Median squared pairwise distance over unordered distinct pairs.

    For an even number of pairs the lower-middle value is returned, so the
    result is always a distance that was actually observed. Above
    ``max_pairs`` pairs a seeded uniform subsample of ``max_pairs`` pairs is
    used instead.

    Raises
    ------
    DegenerateInputError
        Fewer than two samples, or at least half of the pairwise distances
        are zero (the median would not be a usable bandwidth).
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateInputError("median heuristic needs at least 2 samples")
    n = X.shape[0]
    n_pairs = n * (n - 1) // 2
    if n_pairs <= max_pairs:
        iu, ju = np.triu_indices(n, k=1)
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        iu = rng.integers(0, n, size=max_pairs)
        ju = rng.integers(0, n - 1, size=max_pairs)
        ju = ju + (ju >= iu)  # uniform over j != i
    diff = X[iu] - X[ju]
    sq = np.einsum("ij,ij->i", diff, diff)
    if not np.any(sq > 0):
        raise DegenerateInputError("all pairwise distances are zero")
    sq.sort()
    median = float(sq[(sq.size - 1) // 2])
    if median == 0.0:
        raise DegenerateInputError("median pairwise distance is zero")
    return median


def build_family(gamma_base, span_exponent=8.0, step_exponent=0.5):
    """Geometric bandwidth grid ``gamma_base * 2**e`` for ``e`` in ``[-span, span]``.

    The default arguments give 33 bandwidths from ``2**-8`` to ``2**8`` times
    the base, spaced by a factor ``sqrt(2)``. Weights start uniform.
    """
    gamma_base = check_positive(gamma_base, "gamma_base")
    span = check_positive(span_exponent, "span_exponent", strict=False)
    step = check_positive(step_exponent, "step_exponent")
    ratio = span / step
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > 1e-9:
        raise ParameterError(f"span_exponent {span} is not a multiple of step_exponent {step}")
    exponents = -span + step * np.arange(2 * n_steps + 1)
    return KernelFamily(gamma_base * np.exp2(exponents))


def single_kernel(gamma):
    """Family holding one Gaussian kernel with weight one."""
    return KernelFamily([check_positive(gamma, "gamma")], [1.0])
