"""Model assessment: leave-one-out CV, t-statistics on discriminant scores,
stratified bootstrap intervals for the factor weights, and rank selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .classifiers import sign_tie_positive
from .multiway import FULL, FitOptions, MultiwayModel, fit, parse_rank
from .parallel import map_tasks
from .tensor import LabeledDataset

log = logging.getLogger(__name__)


def task_seed(seed: int, index: int) -> int:
    """Independent integer seed for task ``index`` of a run seeded by ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def t_statistic(scores, labels) -> float:
    """Welch two-sample t of the +1 scores against the -1 scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels > 0], scores[labels < 0]
    if pos.size < 2 or neg.size < 2:
        raise ValueError("t statistic needs at least two samples per class")
    diff = pos.mean() - neg.mean()
    se2 = pos.var(ddof=1) / pos.size + neg.var(ddof=1) / neg.size
    if se2 == 0:
        if diff == 0:
            return 0.0
        raise ValueError("both classes have zero score variance; t is undefined")
    return float(diff / np.sqrt(se2))


@dataclass
class EvalReport:
    per_sample_scores: np.ndarray
    labels: np.ndarray
    misclassification_rate: float
    t_statistic: float
    per_fold_convergence: np.ndarray
    fold_errors: List[str] = field(default_factory=list)
    options: Optional[dict] = None

    @property
    def n_failed(self) -> int:
        return sum(1 for e in self.fold_errors if e)


def _fold_task(args):
    data, opts, train_idx, test_idx, seed = args
    train = data.subset(train_idx)
    assert not np.intersect1d(train_idx, test_idx).size
    try:
        model = fit(train, replace(opts, seed=seed))
    except Exception as exc:
        return np.full(len(test_idx), np.nan), False, repr(exc)
    return model.score(data.tensor.values[test_idx]), bool(model.converged), ""


def _loo_folds(n):
    idx = np.arange(n)
    return [(np.delete(idx, i), np.array([i])) for i in range(n)]


def stratified_kfold(labels, k: int, seed: int):
    """Seeded stratified partition into ``k`` folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=int)
    for cls in (-1, 1):
        members = rng.permutation(np.flatnonzero(labels == cls))
        fold_of[members] = np.arange(members.size) % k
    idx = np.arange(labels.size)
    return [(idx[fold_of != f], idx[fold_of == f]) for f in range(k)]


def cross_validate(data: LabeledDataset, opts: FitOptions, folds=None, workers: int = 1) -> EvalReport:
    """Score every sample with a model fit on the other folds.

    ``folds`` defaults to leave-one-out.  Fold ``i`` fits with its own seed
    derived from ``(opts.seed, i)``.  A failed fold leaves NaN scores and counts
    its samples as errors.
    """
    n = data.n
    if folds is None:
        if n < 3:
            raise ValueError("leave-one-out needs n >= 3")
        pos, neg = data.class_counts()
        if min(pos, neg) < 2:
            raise ValueError("leaving out the only sample of a class would leave one class; "
                             "each class needs at least two samples")
        folds = _loo_folds(n)
    tasks = []
    for i, (tr, te) in enumerate(folds):
        if np.intersect1d(tr, te).size:
            raise ValueError(f"fold {i} trains on a held-out sample")
        ytr = data.labels[tr]
        if not (np.any(ytr > 0) and np.any(ytr < 0)):
            raise ValueError(f"fold {i} training set lacks a class")
        tasks.append((data, opts, tr, te, task_seed(opts.seed, i)))
    results = map_tasks(_fold_task, tasks, workers)
    scores = np.full(n, np.nan)
    conv = np.zeros(len(folds), dtype=bool)
    errors = []
    for i, ((_, te), (s, ok, err)) in enumerate(zip(folds, results)):
        scores[te] = s
        conv[i] = ok
        errors.append(err)
        if err:
            log.warning("fold %d failed: %s", i, err)
    y = data.labels
    wrong = np.where(np.isfinite(scores), sign_tie_positive(np.nan_to_num(scores)) != y, True)
    ok = np.isfinite(scores)
    try:
        t = t_statistic(scores[ok], y[ok])
    except ValueError:
        t = float("nan")
    return EvalReport(per_sample_scores=scores, labels=np.array(y),
                      misclassification_rate=float(np.mean(wrong)), t_statistic=t,
                      per_fold_convergence=conv, fold_errors=errors, options=opts.resolved())


def loocv(data: LabeledDataset, opts: FitOptions, workers: int = 1) -> EvalReport:
    """Leave-one-out cross-validation; t is computed on the held-out scores."""
    return cross_validate(data, opts, None, workers)


# ------------------------------------------------------------------ bootstrap

@dataclass
class BootstrapReport:
    n_boot: int
    rank: object
    point_W: Optional[np.ndarray]
    point_V: Optional[np.ndarray]
    point_B: np.ndarray
    W_samples: Optional[np.ndarray]
    V_samples: Optional[np.ndarray]
    B_samples: np.ndarray
    resample_seeds: np.ndarray
    n_failed: int = 0
    failures: List[str] = field(default_factory=list)
    lower95: dict = field(default_factory=dict)
    upper95: dict = field(default_factory=dict)

    def intervals(self, level: float = 0.95) -> dict:
        """Percentile intervals (linear interpolation between order statistics)."""
        a = (1.0 - level) / 2.0
        out = {}
        for key, arr in (("W", self.W_samples), ("V", self.V_samples), ("B", self.B_samples)):
            if arr is not None and arr.shape[0]:
                lo, hi = np.quantile(arr, [a, 1.0 - a], axis=0, method="linear")
                out[key] = (lo, hi)
        return out


def stratified_resample(labels, rng) -> np.ndarray:
    """Indices drawn with replacement within each class, class counts kept."""
    labels = np.asarray(labels)
    parts = []
    for cls in (-1, 1):
        members = np.flatnonzero(labels == cls)
        parts.append(rng.choice(members, size=members.size, replace=True))
    return np.sort(np.concatenate(parts))


def _align(W, V, V_ref):
    """Flip each (w_z, v_z) pair whose v_z points away from the reference."""
    signs = np.where(np.sum(V * V_ref, axis=0) < 0, -1.0, 1.0)
    return W * signs, V * signs


def _boot_task(args):
    data, opts, seed = args
    rng = np.random.default_rng(seed)
    idx = stratified_resample(data.labels, rng)
    try:
        model = fit(data.subset(idx), replace(opts, seed=seed))
    except Exception as exc:
        return None, repr(exc)
    return (model.W, model.V, model.B), ""


def bootstrap_weights(data: LabeledDataset, opts: FitOptions, n_boot: int = 5000,
                      workers: int = 1, point: Optional[MultiwayModel] = None) -> BootstrapReport:
    """Stratified bootstrap of the fitted weights.

    Each resample redraws every class with replacement at its original size,
    refits, aligns factor signs to the point estimate, and the 2.5% / 97.5%
    percentiles across resamples give the 95% intervals.
    """
    if n_boot < 2:
        raise ValueError("n_boot must be >= 2")
    data.require_both_classes()
    if point is None:
        point = fit(data, opts)
    seeds = np.array([task_seed(opts.seed, 10_000_000 + b) for b in range(n_boot)], dtype=np.int64)
    results = map_tasks(_boot_task, [(data, opts, int(s)) for s in seeds], workers)
    Ws, Vs, Bs, failures = [], [], [], []
    for res, err in results:
        if res is None:
            failures.append(err)
            continue
        W, V, B = res
        if W is not None:
            W, V = _align(W, V, point.V)
            Ws.append(W)
            Vs.append(V)
        Bs.append(B)
    if failures:
        log.warning("%d of %d bootstrap fits failed and were excluded", len(failures), n_boot)
    report = BootstrapReport(
        n_boot=n_boot, rank=point.rank, point_W=point.W, point_V=point.V, point_B=point.B,
        W_samples=np.array(Ws) if Ws else None, V_samples=np.array(Vs) if Vs else None,
        B_samples=np.array(Bs), resample_seeds=seeds, n_failed=len(failures), failures=failures)
    for key, (lo, hi) in report.intervals(0.95).items():
        report.lower95[key] = lo
        report.upper95[key] = hi
    return report


# ------------------------------------------------------------------ rank selection

def _rank_key(rank):
    return float("inf") if rank == FULL else rank


def rank_selection(data: LabeledDataset, ranks: Sequence, opts: FitOptions = FitOptions(),
                   solver: Optional[str] = None, workers: int = 1) -> List[dict]:
    """LOOCV for every rank on the same folds; flags the selected row.

    Selection: lowest misclassification, then larger |t|, then smaller rank.
    """
    ranks = [parse_rank(r) for r in ranks]
    if not ranks:
        raise ValueError("no ranks given")
    for r in ranks:
        if r != FULL and r > min(data.p, data.m):
            raise ValueError(f"rank {r} invalid for a {data.p}x{data.m} array")
    if solver is not None:
        opts = replace(opts, solver=solver)
    rows = []
    for r in ranks:
        rep = loocv(data, replace(opts, rank=r), workers)
        rows.append(dict(rank=r, misclassification=rep.misclassification_rate,
                         t_statistic=rep.t_statistic,
                         converged_folds=int(rep.per_fold_convergence.sum()),
                         failed_folds=rep.n_failed, report=rep, selected=False))
    best = min(rows, key=lambda row: (row["misclassification"],
                                      -abs(np.nan_to_num(row["t_statistic"])),
                                      _rank_key(row["rank"])))
    best["selected"] = True
    return rows
