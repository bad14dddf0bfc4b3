import math

import numpy as np
import pytest
from scipy.stats import norm

from mwclass.multiway import FULL, FitOptions
from mwclass.simulation import (ModelSpec, Scenario, bayes_classify, bayes_error,
                                calibrate_signal, full_model_error, generate, model_specs,
                                run_experiment)
from mwclass.tensor import unvectorize


def numerical_rank(vec, p, m):
    sv = np.linalg.svd(unvectorize(vec, p, m), compute_uv=False)
    return int(np.sum(sv > 1e-10 * max(sv[0], 1e-300)))


class TestGenerate:
    def test_reproducible(self):
        sc = Scenario(p=5, m=3, structure=2, seed=4).with_signal_scale(1.3)
        a, b = generate(sc, 7), generate(sc, 7)
        np.testing.assert_array_equal(a.train.X, b.train.X)
        np.testing.assert_array_equal(a.test.X, b.test.X)
        np.testing.assert_array_equal(a.true_mu1, b.true_mu1)
        assert not np.array_equal(generate(sc, 8).train.X, a.train.X)

    def test_shapes_and_labels(self):
        exp = generate(Scenario(p=4, m=3, n_train=10, n_test_per_class=7))
        assert exp.train.X.shape == (10, 4, 3) and exp.test.X.shape == (14, 4, 3)
        assert exp.train.class_counts() == (5, 5) and exp.test.class_counts() == (7, 7)
        np.testing.assert_array_equal(exp.bayes_direction, exp.true_mu1 - exp.true_mu0)

    @pytest.mark.parametrize("structure,bound", [(1, 1), (2, 2), (3, 3), (5, 5)])
    def test_mean_difference_rank(self, structure, bound):
        for rep in range(5):
            sc = Scenario(p=8, m=6, structure=structure, seed=rep).with_signal_scale(2.0)
            exp = generate(sc)
            assert numerical_rank(exp.bayes_direction, 8, 6) <= bound
            if structure != 2:
                assert np.all(exp.true_mu0 == 0)

    def test_full_structure_mean(self):
        exp = generate(Scenario(p=4, m=3, structure=FULL).with_signal_scale(1.0))
        assert np.all(exp.true_mu0 == 0) and np.any(exp.true_mu1 != 0)

    def test_vanishing_signal(self):
        exp = generate(Scenario(p=4, m=3, structure=FULL).with_signal_scale(1e-12))
        assert bayes_error(exp) == pytest.approx(0.5, abs=1e-9)

    def test_law_of_large_numbers(self):
        sc = Scenario(p=3, m=2, n_train=2, n_test_per_class=10_000, sigma_e0=1.5,
                      sigma_e1=1.5).with_signal_scale(2.0)
        exp = generate(sc)
        x1 = exp.test.tensor.vectorized()[exp.test.labels > 0]
        assert np.all(np.abs(x1.mean(axis=0) - exp.true_mu1) <= 4 * 1.5 / math.sqrt(10_000))

    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(p=3, m=2, n_train=5)
        with pytest.raises(ValueError):
            Scenario(p=3, m=2, structure=3)
        with pytest.raises(ValueError):
            Scenario(p=3, m=2, sigma_e0=0.0)
        with pytest.raises(ValueError):
            Scenario(p=3, m=2, structure=1, signal_sds={"sigma_s": 1.0})


class TestBayes:
    def setup_method(self):
        self.exp = generate(Scenario(p=4, m=3, structure=2, seed=1).with_signal_scale(1.0))

    def test_means_to_own_class(self):
        assert bayes_classify(self.exp, self.exp.true_mu1) == 1
        assert bayes_classify(self.exp, self.exp.true_mu0) == -1

    def test_midpoint_tie(self):
        mid = 0.5 * (self.exp.true_mu0 + self.exp.true_mu1)
        assert bayes_classify(self.exp, mid) == 1

    def test_unequal_noise_rejected(self):
        exp = generate(Scenario(p=2, m=2, sigma_e0=1.0, sigma_e1=2.0))
        with pytest.raises(ValueError, match="quadratic"):
            bayes_classify(exp, np.zeros(4))

    def test_monte_carlo_error(self):
        sc = Scenario(p=6, m=4, n_train=2, n_test_per_class=20_000, structure=FULL,
                      seed=3).with_signal_scale(0.35)
        exp = generate(sc)
        pred = bayes_classify(exp, exp.test.tensor.vectorized())
        mc = float(np.mean(pred != exp.test.labels))
        closed = float(norm.cdf(-np.linalg.norm(exp.bayes_direction) / 2.0))
        assert closed == pytest.approx(bayes_error(exp))
        se = math.sqrt(closed * (1 - closed) / exp.test.n)
        assert abs(mc - closed) <= max(3 * se, 1e-12)
        assert abs(mc - closed) <= 0.01


class TestExperiments:
    def test_model_specs(self):
        specs = model_specs(["rank1", "full", "svm-rank2"])
        assert [s.options.rank for s in specs] == [1, FULL, 2]
        assert specs[2].options.solver == "svm" and specs[2].options.n_restarts == 5
        with pytest.raises(ValueError):
            model_specs(["lda"])

    def test_table_statistics(self):
        sc = Scenario(p=5, m=3, n_train=20, structure=1, seed=2).with_signal_scale(1.5)
        table = run_experiment(sc, model_specs(["rank1", "full"]), 6)
        summary = {r["model"]: r for r in table.summary()}
        assert summary["bayes"]["Cor"] == 1.0
        for name in ("rank1", "full"):
            mis = table.per_model(name, "mis")
            assert mis.size == 6
            assert summary[name]["Mis"] == pytest.approx(mis.mean())
            assert summary[name]["SE(Mis)"] == pytest.approx(mis.std(ddof=1) / math.sqrt(6))
            cor = table.per_model(name, "cor")
            assert summary[name]["SE(Cor)"] == pytest.approx(cor.std(ddof=1) / math.sqrt(6))

    def test_models_do_not_perturb_data(self):
        sc = Scenario(p=5, m=3, n_train=20, seed=2).with_signal_scale(1.5)
        a = run_experiment(sc, model_specs(["rank1"]), 3)
        b = run_experiment(sc, model_specs(["full", "rank1"]), 3)
        np.testing.assert_array_equal(a.per_model("rank1", "mis"), b.per_model("rank1", "mis"))

    def test_parallel_matches_serial(self):
        sc = Scenario(p=5, m=3, n_train=20, seed=5).with_signal_scale(1.5)
        a = run_experiment(sc, model_specs(["rank1"]), 4, workers=1)
        b = run_experiment(sc, model_specs(["rank1"]), 4, workers=2)
        np.testing.assert_array_equal(a.per_model("rank1", "mis"), b.per_model("rank1", "mis"))

    def test_failed_replicate_recorded(self):
        sc = Scenario(p=5, m=3, n_train=20)
        bad = ModelSpec("rank9", FitOptions(rank=9))
        table = run_experiment(sc, [bad], 2)
        rows = [r for r in table.rows if r["model"] == "rank9"]
        assert len(rows) == 2 and all(r["error"] for r in rows)
        assert table.summary()[1]["failed"] == 2

    def test_needs_two_replicates(self):
        with pytest.raises(ValueError):
            run_experiment(Scenario(p=2, m=2), model_specs(["full"]), 1)


class TestCalibration:
    def test_chance_target(self):
        cal = calibrate_signal(4, 3, FULL, target_full_mis=0.5)
        assert cal.scale == 0.0

    def test_monotone_in_scale(self):
        sc = Scenario(p=6, m=4, n_train=20, structure=FULL)
        errs = [full_model_error(sc, s, 8) for s in (0.1, 0.4, 1.6)]
        assert errs[0] > errs[1] > errs[2]

    def test_bad_target(self):
        with pytest.raises(ValueError):
            calibrate_signal(4, 3, FULL, target_full_mis=0.7)

    def test_unreachable_bracket(self):
        with pytest.raises(ValueError, match="bracket"):
            calibrate_signal(4, 3, FULL, target_full_mis=0.2, n_reps=4, bracket=(1e-4, 1e-3))

    @pytest.mark.slow
    def test_full_15x4_hits_target(self):
        cal = calibrate_signal(15, 4, FULL, target_full_mis=0.2)
        sc = Scenario(p=15, m=4, structure=FULL).with_signal_scale(cal.scale)
        table = run_experiment(sc, model_specs(["full"]), 100)
        assert 0.18 <= float(np.mean(table.per_model("full", "mis"))) <= 0.22
