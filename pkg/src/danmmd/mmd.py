"""Unbiased MK-MMD estimators.

Two estimators of the squared MK-MMD are provided:

* :func:`mmd2_quadratic_unbiased` -- the O(n^2) U-statistic, used as the
  reference;
* :func:`mmd2_linear` -- the O(n) estimator that averages ``g_k`` over
  quad-tuples of consecutive samples.

:func:`per_kernel_stats` returns the per-kernel means ``d`` and the covariance
``Q`` consumed by the kernel-weight QP.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_samples, as_vector, check_same_width
from .exceptions import InputError
from .kernels import gram


@dataclass(frozen=True)
class QuadTuple:
    """Two consecutive source points and two consecutive target points."""

    s1: np.ndarray
    s2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray

    def __post_init__(self):
        vecs = [as_vector(getattr(self, f), f) for f in ("s1", "s2", "t1", "t2")]
        if len({v.size for v in vecs}) != 1:
            raise InputError("quad-tuple members must share one dimension")
        for name, v in zip(("s1", "s2", "t1", "t2"), vecs):
            object.__setattr__(self, name, v)

    def as_array(self):
        return np.stack([self.s1, self.s2, self.t1, self.t2])


@dataclass(frozen=True)
class MmdReport:
    """Per-kernel statistics on a set of quad-tuples.

    Attributes
    ----------
    per_kernel_d : ndarray of shape (m,)
        Linear-time MMD estimate under each base kernel alone.
    covariance_q : ndarray of shape (m, m)
        Covariance estimate built from differences of consecutive ``g`` values.
    combined_mmd2 : float
        ``beta @ per_kernel_d`` for the family's current weights. May be negative.
    variance : float
        ``beta @ covariance_q @ beta`` clamped at zero.
    """

    per_kernel_d: np.ndarray
    covariance_q: np.ndarray
    combined_mmd2: float
    variance: float

    def to_dict(self):
        return {
            "per_kernel_d": self.per_kernel_d.tolist(),
            "covariance_q": self.covariance_q.tolist(),
            "combined_mmd2": self.combined_mmd2,
            "variance": self.variance,
        }


def truncate_pair(source, target):
    """Truncate both samples to their largest common even length."""
    n = min(len(source), len(target))
    n -= n % 2
    return source[:n], target[:n]


def make_quads(source, target):
    """Stack consecutive samples into quad-tuples.

    Returns
    -------
    ndarray of shape (n_quads, 4, n_features)
        Rows ordered ``(s_{2i-1}, s_{2i}, t_{2i-1}, t_{2i})``.
    """
    S = as_samples(source, "source")
    T = as_samples(target, "target")
    check_same_width(S, T, names=("source", "target"))
    S, T = truncate_pair(S, T)
    n_q = S.shape[0] // 2
    return np.stack([S[0::2], S[1::2], T[0::2], T[1::2]], axis=1)[:n_q]


def _as_quad_array(quads):
    if isinstance(quads, np.ndarray):
        arr = np.asarray(quads, dtype=np.float64)
    else:
        quads = list(quads)
        if not quads:
            return np.empty((0, 4, 0))
        arr = np.stack([q.as_array() if isinstance(q, QuadTuple) else QuadTuple(*q).as_array()
                        for q in quads])
    if arr.ndim != 3 or arr.shape[1] != 4:
        raise InputError(f"quads must have shape (n, 4, d), got {arr.shape}")
    return arr


def _quad_sq_dists(Z):
    """Squared distances of the four kernel pairs of each quad, shape (n, 4)."""
    s1, s2, t1, t2 = Z[:, 0], Z[:, 1], Z[:, 2], Z[:, 3]
    pairs = (s1 - s2, t1 - t2, s1 - t2, s2 - t1)
    return np.stack([np.einsum("ij,ij->i", p, p) for p in pairs], axis=1)


_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])


def per_kernel_g(quads, family):
    """``g_{k_u}(z_i)`` for every quad ``i`` and base kernel ``u``, shape (n, m)."""
    Z = _as_quad_array(quads)
    sq = _quad_sq_dists(Z)
    K = np.exp(-sq[:, :, None] / family.bandwidths[None, None, :])
    return np.einsum("j,ijk->ik", _SIGNS, K)


def g_k(quad, family):
    """``k(s1,s2) + k(t1,t2) - k(s1,t2) - k(s2,t1)`` for one quad-tuple."""
    if not isinstance(quad, QuadTuple):
        quad = QuadTuple(*quad)
    return float(per_kernel_g(quad.as_array()[None], family)[0] @ family.weights)


def mmd2_linear(source, target, family):
    """Linear-time unbiased squared MK-MMD.

    Consecutive samples (in the given order) form quad-tuples after both
    samples are truncated to their largest common even length; the estimate
    is the mean of ``g_k`` over the quad-tuples.
    """
    Z = make_quads(source, target)
    if Z.shape[0] < 2:
        raise InputError("the linear estimator needs at least 4 usable samples per domain")
    return float(np.mean(per_kernel_g(Z, family) @ family.weights))


def mmd2_quadratic_unbiased(source, target, family):
    """Quadratic-time U-statistic of the squared MK-MMD."""
    S = as_samples(source, "source")
    T = as_samples(target, "target")
    check_same_width(S, T, names=("source", "target"))
    ns, nt = S.shape[0], T.shape[0]
    if ns < 2 or nt < 2:
        raise InputError("the U-statistic needs at least 2 samples per domain")
    Kss = gram(S, S, family)
    Ktt = gram(T, T, family)
    Kst = gram(S, T, family)
    within_s = (Kss.sum() - np.trace(Kss)) / (ns * (ns - 1))
    within_t = (Ktt.sum() - np.trace(Ktt)) / (nt * (nt - 1))
    return float(within_s + within_t - 2.0 * Kst.mean())


def per_kernel_stats(quads, family):
    """Per-kernel MMD vector ``d`` and covariance ``Q`` on a list of quad-tuples.

    Quads are truncated to an even count; consecutive quads ``(z_{2i-1}, z_{2i})``
    give the differences ``g_u(z_{2i-1}) - g_u(z_{2i})`` whose outer products,
    averaged, form ``Q``.
    """
    Z = _as_quad_array(quads)
    n_q = Z.shape[0] - Z.shape[0] % 2
    if n_q < 2:
        raise InputError("per-kernel statistics need at least 2 quad-tuples")
    G = per_kernel_g(Z[:n_q], family)
    d = G.mean(axis=0)
    delta = G[0::2] - G[1::2]
    # (4/n_s) * sum over n_s/4 pairs, with n_s = 2 * n_q
    Q = (2.0 / n_q) * (delta.T @ delta)
    beta = family.weights
    return MmdReport(
        per_kernel_d=d,
        covariance_q=Q,
        combined_mmd2=float(beta @ d),
        variance=max(float(beta @ Q @ beta), 0.0),
    )


def mmd2_linear_grad(source, target, family):
    """Linear-time estimate and its gradient w.r.t. every sample.

    The samples are used in the given order and must already have equal even
    length (at least one quad-tuple).

    Returns
    -------
    value : float
    grad_source, grad_target : ndarray
        Same shapes as ``source`` and ``target``.
    """
    S = np.asarray(source, dtype=np.float64)
    T = np.asarray(target, dtype=np.float64)
    if S.shape != T.shape or S.shape[0] % 2 or S.shape[0] < 2:
        raise InputError("gradient path needs equal, even, non-empty samples")
    n_q = S.shape[0] // 2
    s1, s2, t1, t2 = S[0::2], S[1::2], T[0::2], T[1::2]
    coef = family.weights / family.bandwidths

    def term(a, b):
        diff = a - b
        sq = np.einsum("ij,ij->i", diff, diff)
        K = np.exp(-sq[:, None] / family.bandwidths[None, :])
        value = K @ family.weights
        # d k(a, b) / d a = -2 * sum_u (beta_u / gamma_u) k_u(a, b) (a - b)
        scale = -2.0 * (K @ coef)
        return value, scale[:, None] * diff

    v_ss, d_ss = term(s1, s2)
    v_tt, d_tt = term(t1, t2)
    v_st, d_st = term(s1, t2)
    v_ts, d_ts = term(s2, t1)
    value = float(np.mean(v_ss + v_tt - v_st - v_ts))

    gS = np.empty_like(S)
    gT = np.empty_like(T)
    gS[0::2] = d_ss - d_st
    gS[1::2] = -d_ss - d_ts
    gT[0::2] = d_tt + d_ts
    gT[1::2] = -d_tt + d_st
    gS /= n_q
    gT /= n_q
    return value, gS, gT
