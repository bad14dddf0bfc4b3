"""Binary linear classifiers on vector covariates: DWD and soft-margin SVM.

Covariate matrices are ``n x d`` (one sample per row).  Labels are +-1.

The two objectives use opposite intercept conventions and both are kept:
DWD scores ``x.b + beta``, SVM scores ``x.b - beta``.  :func:`score` hides
the difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class DwdConfig:
    C: float = 100.0
    tolerance: float = 1e-6
    max_iterations: int = 200

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"DWD penalty C must be positive, got {self.C}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SvmConfig:
    lam: float = 0.0125
    tolerance: float = 1e-6
    max_iterations: int = 100_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"SVM penalty lambda must be positive, got {self.lam}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class LinearModel:
    b: np.ndarray
    beta: float
    objective_value: float
    solver: str  # "dwd" | "svm"
    diagnostics: dict = field(default_factory=dict)

    @property
    def intercept_sign(self) -> float:
        return 1.0 if self.solver == "dwd" else -1.0

    def score(self, x) -> np.ndarray:
        return score(self, x)

    def predict(self, x) -> np.ndarray:
        return predict(self, x)


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array (n samples x d features)")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[1] < 1:
        raise ValueError("need at least one covariate")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both classes must be present")
    return np.ascontiguousarray(X), y


def _sample_basis(X):
    """Coordinates of the samples in an orthonormal basis of their span.

    Returns ``(Z, Q)`` with ``X = Z Q^T``; ``Q`` is None when no reduction
    is needed.  Both objectives see ``X`` only through ``X b`` and ``|b|``,
    and the optimal ``b`` lies in the row span of ``X``.
    """
    n, d = X.shape
    if d <= n:
        return X, None
    Q, R = np.linalg.qr(X.T)
    return np.ascontiguousarray(R.T), Q


def dwd_objective(X, y, b, beta, C) -> float:
    u = np.asarray(y) * (np.asarray(X) @ np.asarray(b) + beta)
    return float(np.sum(kernels.dwd_loss(u, float(C))))


def svm_objective(X, y, b, beta, lam) -> float:
    u = np.asarray(y) * (np.asarray(X) @ np.asarray(b) - beta)
    return float(np.mean(np.maximum(0.0, 1.0 - u)) + lam * np.dot(b, b))


def dwd_fit(X, y, config: DwdConfig = DwdConfig()) -> LinearModel:
    """Fit ``min sum 1/r_i + C 1'xi`` s.t. ``r = Y X b + beta y + xi >= 0``,
    ``|b| <= 1``, ``xi >= 0``.

    The slack is eliminated in closed form (``xi_i = max(0, C^-1/2 - u_i)``)
    and the remaining ball-constrained problem is solved by a log-barrier
    Newton method in the span of the samples.
    """
    X, y = _check_xy(X, y)
    Z, Q = _sample_basis(X)
    a, beta, _, steps, gap, converged = kernels.dwd_barrier_newton(
        Z, y, float(config.C), float(config.tolerance), int(config.max_iterations))
    b = a if Q is None else Q @ a
    beta = _center_flat_intercept(X @ b, y, beta, config.C)
    obj = dwd_objective(X, y, b, beta, config.C)
    u = y * (X @ b + beta)
    diag = dict(iterations=int(steps), residual=float(gap), converged=bool(converged),
                C=float(config.C),
                min_residual=float(np.min(u + kernels.dwd_slack(u, float(config.C)))))
    return LinearModel(b=b, beta=float(beta), objective_value=obj, solver="dwd",
                       diagnostics=diag)


def _center_flat_intercept(s, y, beta, C):
    """Midpoint of the optimal intercept interval when the loss is flat in beta.

    With balanced classes and every margin on the linear branch
    (``u_i <= C^-1/2``) the objective does not depend on beta anywhere in
    ``[max_neg(-tau - s_j), min_pos(tau - s_i)]``; any solver returns an
    arbitrary point there, so take the centre.
    """
    tau = 1.0 / np.sqrt(C)
    u = y * (s + beta)
    if np.sum(y) != 0 or np.any(u > tau * (1 + 1e-9)):
        return float(beta)
    lo = np.max(-tau - s[y < 0])
    hi = np.min(tau - s[y > 0])
    return float(0.5 * (lo + hi)) if hi >= lo else float(beta)


def _best_intercept(s, y, rho):
    """Exact minimizer of ``sum max(0, 1 - y (s - beta))`` over beta."""
    cand = np.append(s - y, rho)
    loss = np.maximum(0.0, 1.0 - y[None, :] * (s[None, :] - cand[:, None])).sum(axis=1)
    best = np.flatnonzero(loss <= loss.min() * (1 + 1e-12) + 1e-15)
    return float(cand[best[np.argmin(np.abs(cand[best] - rho))]])


def svm_fit(X, y, config: SvmConfig = SvmConfig()) -> LinearModel:
    """Fit ``min (1/n) sum max(0, 1 - y_i (x_i.b - beta)) + lam |b|^2``.

    Solved through the dual (box ``C = 1 / (2 n lam)``) by SMO; the intercept
    is then re-optimized exactly for the recovered ``b``.
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    K = X @ X.T
    cbox = 1.0 / (2.0 * n * config.lam)
    alpha, rho, iters, gap, converged = kernels.svm_smo(
        np.ascontiguousarray(K), y, cbox, float(config.tolerance),
        int(config.max_iterations))
    b = X.T @ (alpha * y)
    beta = _best_intercept(X @ b, y, rho)
    obj = svm_objective(X, y, b, beta, config.lam)
    diag = dict(iterations=int(iters), residual=float(gap), converged=bool(converged),
                lam=float(config.lam), n_support=int(np.sum(alpha > 0)))
    return LinearModel(b=b, beta=beta, objective_value=obj, solver="svm",
                       diagnostics=diag)


def dwd_penalty_from_distance(d_w: float, D: float) -> float:
    """DWD penalty for a reduced dataset: ``100 d_w^2 / D^2``."""
    if not (d_w > 0 and D > 0):
        raise ValueError(f"distances must be positive, got d_w={d_w}, D={D}")
    return 100.0 * d_w ** 2 / D ** 2


def median_pairwise_distance(X, y) -> float:
    """Median of the Euclidean distances over all cross-class pairs."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x d with one label per row")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both classes must be present")
    dist = kernels.cross_class_distances(np.ascontiguousarray(X[y > 0]),
                                         np.ascontiguousarray(X[y < 0]))
    return float(np.median(dist))


def score(model: LinearModel, x) -> np.ndarray:
    """``x.b + beta`` (DWD) or ``x.b - beta`` (SVM); ``x`` is one row or many."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.b.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} covariates, model has {model.b.shape[0]}")
    return x @ model.b + model.intercept_sign * model.beta


def predict(model: LinearModel, x) -> np.ndarray:
    """Sign of the score; a score of exactly zero predicts +1."""
    return sign_tie_positive(score(model, x))


def sign_tie_positive(s):
    return np.where(np.asarray(s) >= 0, 1.0, -1.0)
