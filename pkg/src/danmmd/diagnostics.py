"""Two-sample diagnostics: an MK-MMD permutation test and the proxy A-distance."""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._rng import make_rng
from ._validation import as_samples, check_same_width
from .exceptions import InfeasibleDirectionError, InputError, ParameterError
from .kernels import build_family, gram, median_heuristic, single_kernel
from .mmd import make_quads, per_kernel_stats
from .selection import DEFAULT_EPSILON, normalize_beta, solve_beta

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    p_value: float
    reject: bool
    n_permutations: int
    alpha: float
    seed: int

    def to_dict(self):
        return asdict(self)


def _assignment_stats(K, diag, masks, n_s, n_t):
    """U-statistics for every row of ``masks`` (True = source) over a pooled Gram matrix."""
    A = masks.astype(np.float64)
    B = 1.0 - A
    KA = A @ K
    ss = np.einsum("ij,ij->i", KA, A) - A @ diag
    st = np.einsum("ij,ij->i", KA, B)
    KB = B @ K
    tt = np.einsum("ij,ij->i", KB, B) - B @ diag
    return ss / (n_s * (n_s - 1)) + tt / (n_t * (n_t - 1)) - 2.0 * st / (n_s * n_t)


def permutation_test(source, target, family, n_permutations=1000, alpha=0.05, seed=0,
                     chunk=128):
    """Permutation two-sample test with the unbiased quadratic MK-MMD statistic.

    The p-value is ``(1 + #{permuted >= observed}) / (1 + n_permutations)``
    and the null is rejected iff ``p <= alpha``.
    """
    S = as_samples(source, "source")
    T = as_samples(target, "target")
    check_same_width(S, T, names=("source", "target"))
    if n_permutations < 100:
        raise ParameterError("n_permutations must be >= 100")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    n_s, n_t = S.shape[0], T.shape[0]
    if n_s < 2 or n_t < 2:
        raise InputError("permutation test needs at least 2 samples per domain")
    pooled = np.vstack([S, T])
    N = n_s + n_t
    K = gram(pooled, pooled, family)
    diag = np.diag(K).copy()
    observed_mask = np.zeros((1, N), dtype=bool)
    observed_mask[0, :n_s] = True
    observed = float(_assignment_stats(K, diag, observed_mask, n_s, n_t)[0])

    rng = make_rng(seed)
    exceed = 0
    done = 0
    while done < n_permutations:
        size = min(chunk, n_permutations - done)
        masks = np.zeros((size, N), dtype=bool)
        for r in range(size):
            masks[r, rng.permutation(N)[:n_s]] = True
        exceed += int(np.sum(_assignment_stats(K, diag, masks, n_s, n_t) >= observed))
        done += size
    p_value = (1.0 + exceed) / (1.0 + n_permutations)
    return PermutationResult(observed, p_value, bool(p_value <= alpha), n_permutations, alpha, seed)


class TwoSampleLogistic(ClassifierMixin, BaseEstimator):
    """L2-regularized logistic regression fitted by full-batch gradient descent.

    Features are standardized with training statistics. The step size is
    ``1 / L`` with ``L`` the Lipschitz constant of the loss gradient.
    """

    def __init__(self, reg=1e-3, n_iter=2000):
        self.reg = reg
        self.n_iter = n_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise InputError("two-sample classifier needs exactly two classes")
        t = (y == self.classes_[1]).astype(np.float64)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Z = np.column_stack([(X - self.mean_) / self.scale_, np.ones(len(X))])
        n = len(Z)
        lipschitz = 0.25 * np.linalg.norm(Z, 2) ** 2 / n + self.reg
        step = 1.0 / lipschitz
        w = np.zeros(Z.shape[1])
        penal = np.ones_like(w)
        penal[-1] = 0.0  # bias is not regularized
        for _ in range(self.n_iter):
            p = 0.5 * (1.0 + np.tanh(0.5 * (Z @ w)))
            grad = Z.T @ (p - t) / n + self.reg * penal * w
            w -= step * grad
        self.coef_ = w[:-1]
        self.intercept_ = w[-1]
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


def _split_halves(n, rng):
    perm = rng.permutation(n)
    return perm[: n // 2], perm[n // 2:]


def two_sample_error(features_source, features_target, seed=0, reg=1e-3, n_iter=2000):
    """Held-out error of a linear domain classifier on a seeded 50/50 split."""
    S = as_samples(features_source, "features_source")
    T = as_samples(features_target, "features_target")
    check_same_width(S, T, names=("features_source", "features_target"))
    if S.shape[0] < 20 or T.shape[0] < 20:
        raise InputError("a_distance needs at least 20 samples per domain")
    rng = make_rng(seed)
    s_train, s_test = _split_halves(S.shape[0], rng)
    t_train, t_test = _split_halves(T.shape[0], rng)
    X_train = np.vstack([S[s_train], T[t_train]])
    y_train = np.concatenate([np.zeros(len(s_train)), np.ones(len(t_train))])
    X_test = np.vstack([S[s_test], T[t_test]])
    y_test = np.concatenate([np.zeros(len(s_test)), np.ones(len(t_test))])
    clf = TwoSampleLogistic(reg, n_iter).fit(X_train, y_train)
    return float(np.mean(clf.predict(X_test) != y_test))


def a_distance(features_source, features_target, seed=0):
    """Proxy A-distance ``2 (1 - 2 err)`` of a two-sample classifier, clamped to [0, 2]."""
    err = two_sample_error(features_source, features_target, seed)
    return float(min(2.0, max(0.0, 2.0 * (1.0 - 2.0 * err))))


def a_distance_summary(features_source, features_target, seeds):
    values = [a_distance(features_source, features_target, s) for s in seeds]
    return {"mean": float(np.mean(values)), "std": float(np.std(values)),
            "values": values, "seeds": list(seeds)}


def kernel_family_for(source, target, kernels="median"):
    """Median-heuristic kernel (``"median"``) or the 33-kernel grid around it (``"grid"``)."""
    pooled = np.vstack([as_samples(source, "source"), as_samples(target, "target")])
    gamma = median_heuristic(pooled)
    if kernels == "median":
        return single_kernel(gamma)
    if kernels == "grid":
        return build_family(gamma, 8.0, 0.5)
    raise ParameterError(f"unknown kernel choice {kernels!r}")


class MKMMDTest(BaseEstimator):
    """Two-sample test ``p == q`` with an MK-MMD permutation test.

    With ``select_beta=True`` each sample is split in half (seeded): kernel
    weights are chosen on the first halves by the test-power QP and the
    permutation test runs on the second halves, so selection does not bias
    the test.

    Attributes
    ----------
    family_ : KernelFamily
    result_ : PermutationResult
    report_ : MmdReport or None
        Per-kernel statistics on the selection halves.
    beta_raw_ : ndarray or None
        QP solution before rescaling (``report_.per_kernel_d @ beta_raw_ == 1``).
    """

    def __init__(self, kernels="median", select_beta=False, n_permutations=1000, alpha=0.05,
                 epsilon=DEFAULT_EPSILON, seed=0):
        self.kernels = kernels
        self.select_beta = select_beta
        self.n_permutations = n_permutations
        self.alpha = alpha
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, X_source, X_target):
        S = as_samples(X_source, "X_source")
        T = as_samples(X_target, "X_target")
        check_same_width(S, T, names=("X_source", "X_target"))
        family = kernel_family_for(S, T, self.kernels)
        self.report_ = None
        self.beta_raw_ = None
        if self.select_beta:
            rng = make_rng(self.seed, 1)
            s_sel, s_test = _split_halves(S.shape[0], rng)
            t_sel, t_test = _split_halves(T.shape[0], rng)
            self.report_ = per_kernel_stats(make_quads(S[s_sel], T[t_sel]), family)
            try:
                self.beta_raw_ = solve_beta(self.report_.per_kernel_d, self.report_.covariance_q,
                                            self.epsilon)
                family = family.with_weights(normalize_beta(self.beta_raw_))
            except InfeasibleDirectionError as exc:
                logger.warning("kernel selection infeasible, keeping uniform weights: %s", exc)
            S, T = S[s_test], T[t_test]
        self.family_ = family
        self.result_ = permutation_test(S, T, family, self.n_permutations, self.alpha, self.seed)
        self.statistic_ = self.result_.statistic
        self.p_value_ = self.result_.p_value
        self.reject_ = self.result_.reject
        return self

    def to_dict(self):
        check_is_fitted(self, "result_")
        out = {
            "schema_version": SCHEMA_VERSION,
            "statistic": self.result_.statistic,
            "p_value": self.result_.p_value,
            "reject": self.result_.reject,
            "alpha": self.alpha,
            "n_permutations": self.n_permutations,
            "seed": self.seed,
            "kernels": self.kernels,
            "bandwidths": self.family_.bandwidths.tolist(),
            "beta": self.family_.weights.tolist(),
            "select_beta": bool(self.select_beta),
        }
        if self.report_ is not None:
            out["per_kernel_d"] = self.report_.per_kernel_d.tolist()
            out["beta_raw"] = None if self.beta_raw_ is None else self.beta_raw_.tolist()
            out["d_dot_beta_raw"] = (None if self.beta_raw_ is None
                                     else float(self.report_.per_kernel_d @ self.beta_raw_))
        return out

