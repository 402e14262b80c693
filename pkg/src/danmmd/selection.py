"""Kernel-weight selection by maximizing the test-power ratio.

Maximizing ``(d @ beta)**2 / (beta @ (Q + eps I) @ beta)`` over ``beta >= 0``
is equivalent to the QP::

    minimize    beta @ (Q + eps I) @ beta
    subject to  d @ beta = 1,  beta >= 0

which is solved here by accelerated projected gradient with an exact
active-set polish. The returned ``beta`` satisfies ``d @ beta = 1``; callers
that need simplex weights rescale with :func:`normalize_beta`.
"""

import logging

import numpy as np

from .exceptions import InfeasibleDirectionError, InputError, ParameterError, SolverError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3


def project_affine_orthant(v, d):
    """Euclidean projection of ``v`` onto ``{b : b >= 0, d @ b = 1}``.

    The projection is ``max(0, v + tau * d)`` for the unique ``tau`` making
    the constraint hold; ``d @ max(0, v + tau d)`` is piecewise linear and
    non-decreasing in ``tau``, so ``tau`` is found exactly from the breakpoints.
    Requires at least one positive entry in ``d``.
    """
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    nz = d != 0
    bps = np.unique(-v[nz] / d[nz])

    def exact(tau_probe):
        active = (v + tau_probe * d > 0) & nz
        slope = d[active] @ d[active]
        if slope == 0:
            raise SolverError("degenerate projection segment")
        return (1.0 - d[active] @ v[active]) / slope

    values = d @ np.maximum(0.0, v[:, None] + d[:, None] * bps[None, :])
    above = np.nonzero(values >= 1.0)[0]
    if above.size == 0:
        tau = exact(bps[-1] + 1.0)
    else:
        k = above[0]
        if values[k] == 1.0:
            tau = bps[k]
        elif k == 0:
            tau = exact(bps[0] - 1.0)
        else:
            tau = exact(0.5 * (bps[k - 1] + bps[k]))
    return np.maximum(0.0, v + tau * d)


def _largest_eigenvalue(A, n_iter=200, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = A @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        lam_new = x @ y
        x = y / norm
        if abs(lam_new - lam) <= 1e-12 * max(abs(lam_new), 1.0):
            lam = lam_new
            break
        lam = lam_new
    # power iteration approaches from below
    return max(lam, np.linalg.norm(A @ x)) * 1.05


def kkt_residual(beta, d, q, epsilon=DEFAULT_EPSILON):
    """Norm of the projected-gradient step ``beta - P(beta - grad)``."""
    grad = 2.0 * (np.asarray(q, dtype=np.float64) @ beta + epsilon * beta)
    return float(np.linalg.norm(beta - project_affine_orthant(beta - grad, d)))


def objective(beta, q, epsilon=DEFAULT_EPSILON):
    beta = np.asarray(beta, dtype=np.float64)
    return float(beta @ np.asarray(q, dtype=np.float64) @ beta + epsilon * (beta @ beta))


def _polish(beta, d, A):
    support = beta > 1e-12
    if not support.any():
        return None
    A_s = A[np.ix_(support, support)]
    try:
        x = np.linalg.solve(A_s, d[support])
    except np.linalg.LinAlgError:
        return None
    denom = d[support] @ x
    if denom <= 0:
        return None
    out = np.zeros_like(beta)
    out[support] = x / denom
    if np.any(out < 0):
        return None
    return out


def solve_beta(d, q, epsilon=DEFAULT_EPSILON, tol=1e-8, max_iter=10_000):
    """Solve ``min beta (Q + eps I) beta  s.t.  d @ beta = 1, beta >= 0``.

    Parameters
    ----------
    d : array-like of shape (m,)
        Per-kernel MMD estimates. Negative entries are kept in the constraint.
    q : array-like of shape (m, m)
        Symmetric covariance estimate.
    epsilon : float
        Ridge added to ``q``.

    Returns
    -------
    ndarray of shape (m,)
        Non-negative ``beta`` with ``d @ beta = 1`` (not rescaled).

    Raises
    ------
    InfeasibleDirectionError
        If no entry of ``d`` is positive.
    SolverError
        If the KKT residual stays above ``1e-6``.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    Q = np.asarray(q, dtype=np.float64)
    m = d.size
    if m < 1 or Q.shape != (m, m):
        raise InputError(f"q must be {m}x{m}, got {Q.shape}")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(Q))):
        raise InputError("d and q must be finite")
    if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-9:
        raise InputError("q must be symmetric")
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    if not np.any(d > 0):
        raise InfeasibleDirectionError("every per-kernel MMD estimate is <= 0")

    A = 0.5 * (Q + Q.T) + epsilon * np.eye(m)
    L = 2.0 * _largest_eigenvalue(A)
    if L <= 0:
        raise SolverError("Q + eps I is not positive definite; increase epsilon")
    step = 1.0 / L

    pos = np.maximum(d, 0.0)
    beta = pos / (pos @ pos)
    y = beta.copy()
    t = 1.0
    it = 0
    f_beta = beta @ A @ beta
    for it in range(1, max_iter + 1):
        beta_new = project_affine_orthant(y - step * (2.0 * A @ y), d)
        f_new = beta_new @ A @ beta_new
        # adaptive restart keeps the accelerated iteration monotone
        if f_new > f_beta:
            t = 1.0
            beta_new = project_affine_orthant(beta - step * (2.0 * A @ beta), d)
            f_new = beta_new @ A @ beta_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = beta_new + ((t - 1.0) / t_new) * (beta_new - beta)
        beta, t, f_beta = beta_new, t_new, f_new
        if it % 10 == 0:
            residual = L * np.linalg.norm(
                beta - project_affine_orthant(beta - step * (2.0 * A @ beta), d))
            if residual <= tol:
                break
            polished = _polish(beta, d, A)
            if polished is not None and kkt_residual(polished, d, A, 0.0) <= tol:
                beta = polished
                break

    polished = _polish(beta, d, A)
    if polished is not None and objective(polished, A, 0.0) <= objective(beta, A, 0.0) + 1e-15:
        if kkt_residual(polished, d, A, 0.0) <= kkt_residual(beta, d, A, 0.0):
            beta = polished
    beta = np.where(np.abs(beta) <= 1e-12, 0.0, beta)
    final = kkt_residual(beta, d, A, 0.0)
    if final > 1e-6 or np.any(beta < 0):
        raise SolverError(
            f"kernel-weight QP did not converge: residual={final:.3e} after {it} iterations, "
            f"m={m}, L={L:.3e}, min(beta)={beta.min():.3e}"
        )
    return beta


def normalize_beta(beta):
    """Rescale non-negative weights to sum to one."""
    beta = np.asarray(beta, dtype=np.float64)
    total = beta.sum()
    if total <= 0:
        raise ParameterError("cannot normalize weights with non-positive sum")
    return beta / total


def power_ratio(beta, d, q, epsilon=DEFAULT_EPSILON):
    """``(d @ beta)**2 / (beta @ (Q + eps I) @ beta)``; invariant to rescaling beta."""
    beta = np.asarray(beta, dtype=np.float64)
    num = float(np.asarray(d) @ beta) ** 2
    return num / objective(beta, q, epsilon)
