"""Multi-way linear classification with low-rank coefficient matrices.

A sample is a ``p x m`` matrix ``X_i``; the classifier scores
``<B, X_i> + beta`` with ``B = W V^T`` of rank ``r`` (or unconstrained for the
full model).  ``W`` and ``V`` are estimated by alternating convex search:
each half-step fixes one factor, contracts the data against it, and fits an
ordinary DWD or SVM on the reduced covariates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from .classifiers import (DwdConfig, LinearModel, SvmConfig, dwd_fit, dwd_objective,
                          dwd_penalty_from_distance, median_pairwise_distance,
                          sign_tie_positive, svm_fit, svm_objective)
from .tensor import (DimensionError, LabeledDataset, Tensor3, stacked_mode1,
                     stacked_mode2, thin_svd, unvectorize)

log = logging.getLogger(__name__)

FULL = "full"
SOLVERS = ("dwd", "svm")
PENALTY_RULES = ("median_ratio", "literal")

Rank = Union[int, str]


def parse_rank(rank) -> Rank:
    if isinstance(rank, str):
        if rank.strip().lower() == FULL:
            return FULL
        rank = int(rank)
    rank = int(rank)
    if rank < 1:
        raise ValueError(f"rank must be >= 1 or 'full', got {rank}")
    return rank


@dataclass(frozen=True)
class FitOptions:
    """Settings for one multi-way fit.

    The DWD tuning value of a half-step is ``100 d^2 / D^2`` with ``d`` the
    median cross-class distance of its reduced covariates and ``D`` that of
    the vectorized data.  ``penalty_rule="median_ratio"`` (default) treats it
    as a penalty on the median-distance scale, so the program penalty is
    ``tuning / d^2 = 100 / D^2``; ``"literal"`` plugs the tuning value in as
    ``C`` directly.  ``svm_lambda=None`` means ``1 / (2 n)``.
    """
    solver: str = "dwd"
    rank: Rank = 1
    epsilon: float = 1e-5
    max_acs_iterations: int = 100
    restarts: Optional[int] = None
    seed: int = 0
    svm_lambda: Optional[float] = None
    penalty_rule: str = "median_ratio"
    standardize: bool = False
    inner_tolerance: float = 1e-6
    inner_max_iterations: Optional[int] = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        object.__setattr__(self, "rank", parse_rank(self.rank))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_acs_iterations < 1:
            raise ValueError("max_acs_iterations must be >= 1")
        if self.restarts is not None and self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.svm_lambda is not None and not self.svm_lambda > 0:
            raise ValueError("svm_lambda must be positive")
        if self.penalty_rule not in PENALTY_RULES:
            raise ValueError(f"penalty_rule must be one of {PENALTY_RULES}")

    @property
    def n_restarts(self) -> int:
        if self.restarts is not None:
            return self.restarts
        return 1 if self.solver == "dwd" else 5

    def resolved(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["restarts"] = self.n_restarts
        return out


@dataclass
class FitTrace:
    """Per-run record of an ACS fit.

    ``half_steps`` holds one dict per half-step with the inner objective
    after the solve (``objective``), the objective of the incoming iterate
    under the same inner program (``objective_before``), and the penalty.
    """
    half_steps: List[dict] = field(default_factory=list)
    delta_B: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    raw_W: Optional[np.ndarray] = None
    raw_V: Optional[np.ndarray] = None
    restart_objectives: List[float] = field(default_factory=list)
    restart_converged: List[bool] = field(default_factory=list)
    chosen_restart: int = 0
    D: float = float("nan")

    @property
    def objectives(self) -> np.ndarray:
        return np.array([h["objective"] for h in self.half_steps])


@dataclass
class MultiwayModel:
    rank: Rank
    B: np.ndarray
    beta: float
    solver: str
    W: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    objective_value: float = float("nan")
    fit_trace: FitTrace = field(default_factory=FitTrace)
    options: Optional[FitOptions] = None
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    dim1_names: Optional[tuple] = None
    dim2_names: Optional[tuple] = None

    @property
    def p(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def converged(self) -> bool:
        return self.fit_trace.converged

    @property
    def intercept_sign(self) -> float:
        return 1.0 if self.solver == "dwd" else -1.0

    def score(self, x) -> np.ndarray:
        return predict_multiway(self, x)[0]

    def predict(self, x) -> np.ndarray:
        return predict_multiway(self, x)[1]


def predict_multiway(model: MultiwayModel, x):
    """Scores ``<B, x> +- beta`` and labels (tie -> +1).

    ``x`` is one ``p x m`` matrix or an ``n x p x m`` stack.
    """
    vals = x.values if isinstance(x, Tensor3) else np.asarray(x, dtype=np.float64)
    if vals.shape[-2:] != model.B.shape:
        raise DimensionError(f"input slices are {vals.shape[-2:]}, model expects {model.B.shape}")
    if model.center is not None:
        vals = (vals - model.center) / model.scale
    s = np.tensordot(vals, model.B, axes=([-2, -1], [0, 1])) + model.intercept_sign * model.beta
    return s, sign_tie_positive(s)


# ------------------------------------------------------------------ helpers

def _standardize(X):
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1:])
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale


def _unit(a):
    nrm = np.linalg.norm(a)
    return a / nrm if nrm > 0 else a


def _svm_lambda(opts: FitOptions, n: int) -> float:
    return opts.svm_lambda if opts.svm_lambda is not None else 1.0 / (2.0 * n)


class _Inner:
    """Runs the inner solver on reduced covariates and reports its program."""

    def __init__(self, y, opts: FitOptions, D: float):
        self.y = y
        self.opts = opts
        self.D = D
        self.lam = _svm_lambda(opts, y.shape[0])

    def penalty(self, Xr):
        """Inner penalty for reduced covariates ``Xr``: ``(param, fallback)``.

        The tuning value is ``100 d^2 / D^2``.  Under ``median_ratio`` it is
        read on the median-distance scale (program ``C = tuning / d^2``, i.e.
        ``100 / D^2`` for every half-step); ``literal`` uses it as ``C``.
        """
        if self.opts.solver != "dwd":
            return self.lam, False
        d = median_pairwise_distance(Xr, self.y)
        if not (d > 0 and self.D > 0):
            return self.full_penalty(), True
        tuning = dwd_penalty_from_distance(d, self.D)
        if self.opts.penalty_rule == "literal":
            return tuning, False
        return tuning / d ** 2, False

    def full_penalty(self):
        if self.opts.solver != "dwd":
            return self.lam
        if self.opts.penalty_rule == "literal" or not self.D > 0:
            return 100.0
        return 100.0 / self.D ** 2

    def fit(self, Xr, param) -> LinearModel:
        kw = {}
        if self.opts.inner_max_iterations is not None:
            kw["max_iterations"] = self.opts.inner_max_iterations
        if self.opts.solver == "dwd":
            return dwd_fit(Xr, self.y, DwdConfig(C=param, tolerance=self.opts.inner_tolerance, **kw))
        return svm_fit(Xr, self.y, SvmConfig(lam=param, tolerance=self.opts.inner_tolerance, **kw))

    def objective(self, Xr, b, beta, param) -> float:
        if self.opts.solver == "dwd":
            return dwd_objective(Xr, self.y, b, beta, param)
        return svm_objective(Xr, self.y, b, beta, param)


def _prepare(data: LabeledDataset, opts: FitOptions):
    data.require_both_classes()
    if data.n < 2:
        raise ValueError("need at least two samples")
    X = data.X
    center = scale = None
    if opts.standardize:
        X, center, scale = _standardize(X)
    y = np.asarray(data.labels, dtype=np.float64)
    Xvec = np.ascontiguousarray(X.transpose(0, 2, 1)).reshape(X.shape[0], -1)
    D = median_pairwise_distance(Xvec, y)
    return X, Xvec, y, D, center, scale


def _finish(data, opts, rank, B, beta, obj, trace, center, scale, W=None, V=None):
    return MultiwayModel(rank=rank, B=B, beta=float(beta), solver=opts.solver, W=W, V=V,
                         objective_value=float(obj), fit_trace=trace, options=opts,
                         center=center, scale=scale, dim1_names=data.dim1_names,
                         dim2_names=data.dim2_names)


def normalize_factors(B, r):
    """Identifiable factors of ``B``: unit-norm ``V`` columns (sign
    convention of :func:`thin_svd`), singular values absorbed into ``W``."""
    U, S, V = thin_svd(B, r)
    return U * S, V


# ------------------------------------------------------------------ full model

def fit_full(data: LabeledDataset, opts: FitOptions = FitOptions(rank=FULL)) -> MultiwayModel:
    """One inner fit on the ``pm`` vectorized covariates."""
    X, Xvec, y, D, center, scale = _prepare(data, opts)
    inner = _Inner(y, opts, D)
    param = inner.full_penalty()
    model = inner.fit(Xvec, param)
    trace = FitTrace(converged=bool(model.diagnostics["converged"]), iterations=1, D=D,
                     restart_objectives=[model.objective_value],
                     restart_converged=[bool(model.diagnostics["converged"])])
    trace.half_steps.append(dict(iteration=1, half="full", objective=model.objective_value,
                                 objective_before=float("nan"), penalty=param,
                                 inner_converged=model.diagnostics["converged"],
                                 penalty_fallback=False))
    B = unvectorize(model.b, data.p, data.m)
    return _finish(data, opts, FULL, B, model.beta, model.objective_value, trace, center, scale)


# ------------------------------------------------------------------ ACS

def _restart_rngs(opts: FitOptions):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(opts.seed).spawn(opts.n_restarts)]


def _acs_rank1(X, y, D, opts: FitOptions, rng):
    p, m = X.shape[1], X.shape[2]
    inner = _Inner(y, opts, D)
    svm = opts.solver == "svm"
    w = rng.uniform(0.0, 1.0, size=p)
    v = rng.uniform(0.0, 1.0, size=m)
    w, v = _unit(w), _unit(v)
    beta = 0.0
    B_prev = _unit(np.outer(w, v))
    trace = FitTrace(D=D)
    last = None
    for it in range(1, opts.max_acs_iterations + 1):
        if svm:
            nv = np.linalg.norm(v)
            if nv > 0:
                w, v = w * nv, v / nv
        Xw = X @ v
        param, fallback = inner.penalty(Xw)
        before = inner.objective(Xw, w, beta, param)
        mw = inner.fit(Xw, param)
        w, beta = mw.b, mw.beta
        trace.half_steps.append(dict(iteration=it, half="w", objective=mw.objective_value,
                                     objective_before=before, penalty=param,
                                     inner_converged=mw.diagnostics["converged"],
                                     penalty_fallback=fallback))
        if svm:
            nw = np.linalg.norm(w)
            if nw > 0:
                w, v = w / nw, v * nw
        Xv = np.einsum("ijk,j->ik", X, w)
        param, fallback = inner.penalty(Xv)
        before = inner.objective(Xv, v, beta, param)
        mv = inner.fit(Xv, param)
        v, beta = mv.b, mv.beta
        trace.half_steps.append(dict(iteration=it, half="v", objective=mv.objective_value,
                                     objective_before=before, penalty=param,
                                     inner_converged=mv.diagnostics["converged"],
                                     penalty_fallback=fallback))
        last = mv
        B_cur = _unit(np.outer(w, v))
        delta = float(np.linalg.norm(B_cur - B_prev))
        trace.delta_B.append(delta)
        trace.iterations = it
        B_prev = B_cur
        if delta < opts.epsilon:
            trace.converged = True
            break
    trace.raw_W = w.reshape(-1, 1).copy()
    trace.raw_V = v.reshape(-1, 1).copy()
    return np.outer(w, v), beta, last.objective_value, trace


def _acs_rankr(X, y, D, opts: FitOptions, rng, r: int):
    n, p, m = X.shape
    inner = _Inner(y, opts, D)
    W0 = rng.uniform(0.0, 1.0, size=(p, r))
    V0 = rng.uniform(0.0, 1.0, size=(m, r))
    B_v = _unit(W0 @ V0.T)
    beta = 0.0
    B_prev = _unit(B_v)
    trace = FitTrace(D=D)
    last = None
    Wfix = None
    for it in range(1, opts.max_acs_iterations + 1):
        _, _, Vfix = thin_svd(B_v, r)
        Xw = stacked_mode2(X, Vfix)
        param, fallback = inner.penalty(Xw)
        # B_v = (B_v Vfix) Vfix^T since Vfix spans the row space of B_v
        w_before = (B_v @ Vfix).T.ravel()
        before = inner.objective(Xw, w_before, beta, param)
        mw = inner.fit(Xw, param)
        beta = mw.beta
        B_w = mw.b.reshape(r, p).T @ Vfix.T
        trace.half_steps.append(dict(iteration=it, half="w", objective=mw.objective_value,
                                     objective_before=before, penalty=param,
                                     inner_converged=mw.diagnostics["converged"],
                                     penalty_fallback=fallback))
        Wfix, _, _ = thin_svd(B_w, r)
        Xv = stacked_mode1(X, Wfix)
        param, fallback = inner.penalty(Xv)
        v_before = (B_w.T @ Wfix).T.ravel()
        before = inner.objective(Xv, v_before, beta, param)
        mv = inner.fit(Xv, param)
        beta = mv.beta
        Vt = mv.b.reshape(r, m).T
        B_v = Wfix @ Vt.T
        trace.half_steps.append(dict(iteration=it, half="v", objective=mv.objective_value,
                                     objective_before=before, penalty=param,
                                     inner_converged=mv.diagnostics["converged"],
                                     penalty_fallback=fallback))
        last = mv
        B_cur = _unit(B_v)
        delta = float(np.linalg.norm(B_cur - B_prev))
        trace.delta_B.append(delta)
        trace.iterations = it
        B_prev = B_cur
        if delta < opts.epsilon:
            trace.converged = True
            break
    trace.raw_W = Wfix.copy()
    trace.raw_V = Vt.copy()
    return B_v, beta, last.objective_value, trace


def _best_run(runs):
    """Lowest final inner objective, preferring converged runs; ties by order."""
    pool = [i for i, run in enumerate(runs) if run[3].converged] or list(range(len(runs)))
    return min(pool, key=lambda i: (runs[i][2], i))


def _fit_lowrank(data: LabeledDataset, opts: FitOptions, r: int, rank1_path: bool):
    X, _, y, D, center, scale = _prepare(data, opts)
    runs = []
    for rng in _restart_rngs(opts):
        if rank1_path:
            runs.append(_acs_rank1(X, y, D, opts, rng))
        else:
            runs.append(_acs_rankr(X, y, D, opts, rng, r))
    k = _best_run(runs)
    B, beta, obj, trace = runs[k]
    trace.restart_objectives = [run[2] for run in runs]
    trace.restart_converged = [run[3].converged for run in runs]
    trace.chosen_restart = k
    if not trace.converged:
        log.warning("ACS did not converge in %d iterations (last |dB| = %.3g)",
                    opts.max_acs_iterations, trace.delta_B[-1])
    W, V = normalize_factors(B, r)
    return _finish(data, opts, r, W @ V.T, beta, obj, trace, center, scale, W=W, V=V)


def fit_rank1(data: LabeledDataset, opts: FitOptions = FitOptions()) -> MultiwayModel:
    """Rank-1 model ``B = w v^T``."""
    if opts.rank != 1:
        opts = replace(opts, rank=1)
    return _fit_lowrank(data, opts, 1, rank1_path=True)


def fit_rankr(data: LabeledDataset, opts: FitOptions) -> MultiwayModel:
    """Rank-``r`` model ``B = sum_z w_z v_z^T`` with SVD re-orthonormalization
    of the fixed factor at every half-step."""
    r = opts.rank
    if r == FULL:
        raise ValueError("fit_rankr needs an integer rank")
    if not 1 <= r <= min(data.p, data.m):
        raise ValueError(f"rank {r} outside [1, {min(data.p, data.m)}] for a {data.p}x{data.m} array")
    return _fit_lowrank(data, opts, r, rank1_path=False)


def fit(data: LabeledDataset, opts: FitOptions = FitOptions()) -> MultiwayModel:
    """Dispatch on ``opts.rank``: ``"full"``, 1, or r > 1."""
    if opts.rank == FULL:
        return fit_full(data, opts)
    if opts.rank == 1:
        return fit_rank1(data, opts)
    return fit_rankr(data, opts)
