"""Gaussian two-class simulations with structured mean differences.

Class 0 (label -1) samples are ``N(mu0, sigma_e0^2 I)`` and class 1 (label
+1) samples ``N(mu1, sigma_e1^2 I)`` on the ``pm`` vectorized cells.  The mean
structure is one of

* ``"full"``: ``mu0 = 0``, ``mu1 ~ N(0, sigma_s^2 I)``;
* rank 1: ``mu0 = 0``, ``mu1 = v (x) w``;
* rank 2: ``mu0 = v0 (x) w0``, ``mu1 = v1 (x) w1``;
* rank r > 2: ``mu0 = 0``, ``mu1 = sum_z v_z (x) w_z``.

All factor draws are Gaussian with the standard deviations in
``Scenario.signal_sds``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .classifiers import sign_tie_positive
from .multiway import FULL, FitOptions, fit, parse_rank
from .parallel import map_tasks
from .tensor import LabeledDataset, Tensor3

log = logging.getLogger(__name__)

Structure = Union[int, str]

# stream indices inside one replicate's SeedSequence
_MEANS, _TRAIN0, _TRAIN1, _TEST0, _TEST1 = range(5)


def signal_sds_for(structure: Structure, scale: float) -> Dict[str, float]:
    """Factor SDs giving a mean difference proportional to ``scale``."""
    structure = parse_rank(structure)
    if structure == FULL:
        return {"sigma_s": scale}
    root = math.sqrt(scale)
    if structure == 2:
        return {"sigma_w0": root, "sigma_v0": root, "sigma_w1": root, "sigma_v1": root}
    return {"sigma_w": root, "sigma_v": root}


@dataclass(frozen=True)
class Scenario:
    p: int
    m: int
    n_train: int = 40
    n_test_per_class: int = 50
    structure: Structure = 1
    sigma_e0: float = 1.0
    sigma_e1: float = 1.0
    signal_sds: Optional[Dict[str, float]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "structure", parse_rank(self.structure))
        if self.p < 1 or self.m < 1:
            raise ValueError("p and m must be positive")
        if self.n_train < 2 or self.n_train % 2:
            raise ValueError("n_train must be even and >= 2 (equal class sizes)")
        if self.n_test_per_class < 1:
            raise ValueError("n_test_per_class must be positive")
        if self.structure != FULL and self.structure > min(self.p, self.m):
            raise ValueError(f"rank {self.structure} exceeds min(p, m)")
        if not (self.sigma_e0 > 0 and self.sigma_e1 > 0):
            raise ValueError("noise SDs must be positive")
        sds = self.signal_sds if self.signal_sds is not None else signal_sds_for(self.structure, 1.0)
        expected = set(signal_sds_for(self.structure, 1.0))
        if set(sds) != expected:
            raise ValueError(f"signal_sds for structure {self.structure!r} needs keys {sorted(expected)}")
        if any(not s >= 0 for s in sds.values()):
            raise ValueError("signal SDs must be non-negative")
        object.__setattr__(self, "signal_sds", dict(sds))

    def with_signal_scale(self, scale: float) -> "Scenario":
        return replace(self, signal_sds=signal_sds_for(self.structure, scale))


@dataclass
class GeneratedExperiment:
    train: LabeledDataset
    test: LabeledDataset
    true_mu0: np.ndarray
    true_mu1: np.ndarray
    sigma_e0: float
    sigma_e1: float

    @property
    def bayes_direction(self) -> np.ndarray:
        return self.true_mu1 - self.true_mu0


def _streams(scenario: Scenario, replicate: int):
    ss = np.random.SeedSequence([scenario.seed, replicate])
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def _means(scenario: Scenario, rng) -> Tuple[np.ndarray, np.ndarray]:
    p, m, sds = scenario.p, scenario.m, scenario.signal_sds
    s = scenario.structure
    zero = np.zeros(p * m)
    if s == FULL:
        return zero, sds["sigma_s"] * rng.standard_normal(p * m)
    if s == 2:
        w0 = sds["sigma_w0"] * rng.standard_normal(p)
        v0 = sds["sigma_v0"] * rng.standard_normal(m)
        w1 = sds["sigma_w1"] * rng.standard_normal(p)
        v1 = sds["sigma_v1"] * rng.standard_normal(m)
        return np.kron(v0, w0), np.kron(v1, w1)
    W = sds["sigma_w"] * rng.standard_normal((p, s))
    V = sds["sigma_v"] * rng.standard_normal((m, s))
    return zero, (W @ V.T).ravel(order="F")


def _draw(rng, mu, sigma, count, p, m):
    vec = mu + sigma * rng.standard_normal((count, mu.shape[0]))
    return vec.reshape(count, m, p).transpose(0, 2, 1)


def generate(scenario: Scenario, replicate: int = 0) -> GeneratedExperiment:
    """Draw one training/test pair; deterministic in ``(scenario.seed, replicate)``.

    Training samples come class 0 first, then class 1, ``n_train / 2`` each.
    """
    rngs = _streams(scenario, replicate)
    mu0, mu1 = _means(scenario, rngs[_MEANS])
    p, m = scenario.p, scenario.m
    half = scenario.n_train // 2
    nt = scenario.n_test_per_class

    def dataset(r0, r1, count):
        x0 = _draw(r0, mu0, scenario.sigma_e0, count, p, m)
        x1 = _draw(r1, mu1, scenario.sigma_e1, count, p, m)
        y = np.concatenate([-np.ones(count), np.ones(count)])
        return LabeledDataset(Tensor3(np.concatenate([x0, x1])), y)

    return GeneratedExperiment(
        train=dataset(rngs[_TRAIN0], rngs[_TRAIN1], half),
        test=dataset(rngs[_TEST0], rngs[_TEST1], nt),
        true_mu0=mu0, true_mu1=mu1,
        sigma_e0=scenario.sigma_e0, sigma_e1=scenario.sigma_e1)


def bayes_score(exp: GeneratedExperiment, x) -> np.ndarray:
    if exp.sigma_e0 != exp.sigma_e1:
        raise ValueError("the linear Bayes rule needs equal class noise SDs; "
                         "unequal variances give a quadratic rule, which is not supported")
    x = np.asarray(x, dtype=np.float64)
    return (x - 0.5 * (exp.true_mu0 + exp.true_mu1)) @ exp.bayes_direction


def bayes_classify(exp: GeneratedExperiment, x) -> np.ndarray:
    """Oracle label ``sign(<mu1 - mu0, x - (mu0 + mu1)/2>)``, tie -> +1.

    ``x`` is a vectorized sample (length ``pm``) or a stack of them.
    """
    return sign_tie_positive(bayes_score(exp, x))


def bayes_error(exp: GeneratedExperiment) -> float:
    """Closed-form error of the oracle rule for equal isotropic noise."""
    if exp.sigma_e0 != exp.sigma_e1:
        raise ValueError("closed form needs equal class noise SDs")
    return float(norm.cdf(-np.linalg.norm(exp.bayes_direction) / (2.0 * exp.sigma_e0)))


# ------------------------------------------------------------------ experiments

@dataclass(frozen=True)
class ModelSpec:
    name: str
    options: FitOptions


def model_specs(names: Sequence[str], base: FitOptions = FitOptions()) -> List[ModelSpec]:
    """Parse names like ``rank1``, ``rank2``, ``full``, ``svm-rank1``."""
    specs = []
    for name in names:
        solver = base.solver
        label = name.strip()
        key = label.lower()
        if key.startswith(("svm-", "dwd-")):
            solver, key = key[:3], key[4:]
        if key == FULL:
            rank = FULL
        elif key.startswith("rank"):
            rank = int(key[4:])
        else:
            raise ValueError(f"unknown model {name!r}; use rankK, full, or svm-/dwd- prefixed")
        restarts = base.restarts if solver == base.solver else None
        specs.append(ModelSpec(label, replace(base, solver=solver, rank=rank, restarts=restarts)))
    return specs


def _correlation(a, b) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _one_replicate(args):
    scenario, models, replicate = args
    exp = generate(scenario, replicate)
    rows = []
    xtest = exp.test.tensor.vectorized()
    ytest = exp.test.labels
    bayes = bayes_classify(exp, xtest)
    rows.append(dict(replicate=replicate, model="bayes", mis=float(np.mean(bayes != ytest)),
                     cor=1.0, converged=True, error=""))
    for spec in models:
        opts = replace(spec.options, seed=spec.options.seed + replicate)
        try:
            model = fit(exp.train, opts)
        except Exception as exc:  # a failed replicate is recorded, not fatal
            rows.append(dict(replicate=replicate, model=spec.name, mis=float("nan"),
                             cor=float("nan"), converged=False, error=repr(exc)))
            continue
        labels = model.predict(exp.test.tensor)
        cor = _correlation(model.B.ravel(order="F"), exp.bayes_direction)
        if opts.solver == "svm":
            cor = abs(cor)
        rows.append(dict(replicate=replicate, model=spec.name,
                         mis=float(np.mean(labels != ytest)), cor=cor,
                         converged=bool(model.converged), error=""))
    return rows


@dataclass
class ReplicateTable:
    rows: List[dict]
    n_replicates: int
    scenario: Scenario
    models: List[str] = field(default_factory=list)

    def per_model(self, name: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["model"] == name], dtype=float)

    def summary(self) -> List[dict]:
        """Mean and standard error (SD / sqrt(count)) per model."""
        out = []
        for name in ["bayes"] + list(self.models):
            row = {"model": name}
            for key, label in (("mis", "Mis"), ("cor", "Cor")):
                vals = self.per_model(name, key)
                vals = vals[np.isfinite(vals)]
                k = vals.size
                row[label] = float(vals.mean()) if k else float("nan")
                row[f"SE({label})"] = float(vals.std(ddof=1) / math.sqrt(k)) if k > 1 else float("nan")
            row["converged"] = int(sum(bool(r["converged"]) for r in self.rows if r["model"] == name))
            row["failed"] = int(sum(bool(r["error"]) for r in self.rows if r["model"] == name))
            row["replicates"] = self.n_replicates
            out.append(row)
        return out


def run_experiment(scenario: Scenario, models: Sequence[ModelSpec], n_replicates: int,
                   workers: int = 1, first_replicate: int = 0) -> ReplicateTable:
    """Fit every model on ``n_replicates`` independent draws of ``scenario``."""
    if n_replicates < 2:
        raise ValueError("n_replicates must be >= 2")
    models = list(models)
    tasks = [(scenario, models, first_replicate + k) for k in range(n_replicates)]
    rows = [row for chunk in map_tasks(_one_replicate, tasks, workers) for row in chunk]
    return ReplicateTable(rows, n_replicates, scenario, [s.name for s in models])


# ------------------------------------------------------------------ calibration

@dataclass
class Calibration:
    signal_sds: Dict[str, float]
    scale: float
    achieved: float
    history: List[Tuple[float, float]]


# calibration replicates are drawn from a seed disjoint from experiment seeds
_CALIBRATION_SEED_OFFSET = 7_919


def full_model_error(scenario: Scenario, scale: float, n_reps: int, workers: int = 1,
                     solver: str = "dwd") -> float:
    """Mean test misclassification of the full model at a given signal scale."""
    sc = replace(scenario.with_signal_scale(scale), seed=scenario.seed + _CALIBRATION_SEED_OFFSET)
    spec = [ModelSpec("full", FitOptions(solver=solver, rank=FULL))]
    table = run_experiment(sc, spec, max(n_reps, 2), workers=workers)
    return float(np.nanmean(table.per_model("full", "mis")))


def calibrate_signal(p: int, m: int, structure: Structure, sigma_e: float = 1.0,
                     target_full_mis: float = 0.2, n_reps: int = 50, n_train: int = 40,
                     tol: float = 0.005, n_test_per_class: int = 50, seed: int = 0,
                     bracket: Tuple[float, float] = (1e-4, 1e3), max_steps: int = 40,
                     workers: int = 1) -> Calibration:
    """Bisect a signal scale until the full model's mean test error is within
    ``tol`` of the target.

    Every evaluation reuses the same replicate seeds, so the error is a
    deterministic, (empirically) decreasing function of the scale.
    """
    if not 0 < target_full_mis < 0.5:
        if target_full_mis == 0.5:
            return Calibration(signal_sds_for(structure, 0.0), 0.0, 0.5, [])
        raise ValueError("target must lie in (0, 0.5]")
    base = Scenario(p=p, m=m, n_train=n_train, n_test_per_class=n_test_per_class,
                    structure=structure, sigma_e0=sigma_e, sigma_e1=sigma_e, seed=seed)
    history = []

    def err(scale):
        e = full_model_error(base, scale, n_reps, workers)
        history.append((scale, e))
        log.info("calibrate %s %dx%d: scale=%.5g full mis=%.4f", structure, p, m, scale, e)
        return e

    lo, hi = bracket
    e_lo, e_hi = err(lo), err(hi)
    if not (e_hi <= target_full_mis <= e_lo):
        raise ValueError(f"target {target_full_mis} not bracketed: error {e_lo:.3f} at "
                         f"scale {lo:g}, {e_hi:.3f} at scale {hi:g}")
    best = (lo, e_lo) if abs(e_lo - target_full_mis) < abs(e_hi - target_full_mis) else (hi, e_hi)
    for _ in range(max_steps):
        if abs(best[1] - target_full_mis) <= tol:
            break
        mid = math.sqrt(lo * hi)
        e = err(mid)
        if abs(e - target_full_mis) < abs(best[1] - target_full_mis):
            best = (mid, e)
        if e > target_full_mis:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target_full_mis) > tol:
        raise ValueError(f"calibration stalled: best error {best[1]:.3f} at scale {best[0]:g}; "
                         f"bracket [{lo:g}, {hi:g}]")
    return Calibration(signal_sds_for(structure, best[0]), best[0], best[1], history)
