import csv
import json
import os
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from mwclass import io
from mwclass.cli import SCENARIOS, load_scenario, main
from mwclass.multiway import FULL, FitOptions, fit
from mwclass.tensor import LabeledDataset, Tensor3

TOY = resources.files("mwclass") / "data"
TOY_TENSOR, TOY_LABELS = str(TOY / "toy_tensor.csv"), str(TOY / "toy_labels.csv")


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def tensor_text(X, ids=None):
    n, p, m = X.shape
    ids = ids or [f"s{i}" for i in range(n)]
    rows = ["sample_id,dim1,dim2,value"]
    for i in range(n):
        for j in range(p):
            for k in range(m):
                rows.append(f"{ids[i]},a{j},b{k},{io.fmt(X[i, j, k])}")
    return rows


def run_cli(*args, env=None):
    full_env = dict(os.environ, MWCLASS_WORKERS="1", **(env or {}))
    return subprocess.run([sys.executable, "-m", "mwclass", *args], capture_output=True, text=True,
                          env=full_env, timeout=600)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestTensorCsv:
    def test_ingest_2x2x2(self, tmp_path):
        X = np.arange(8, dtype=float).reshape(2, 2, 2)
        t = write(tmp_path / "t.csv", "\n".join(tensor_text(X)))
        lab = write(tmp_path / "l.csv", "sample_id,label\ns0,1\ns1,-1\n")
        data = io.ingest(t, lab)
        np.testing.assert_array_equal(data.X, X)
        np.testing.assert_array_equal(data.labels, [1, -1])
        assert list(data.dim1_names) == ["a0", "a1"]

    def test_duplicate_cell_named(self, tmp_path):
        rows = tensor_text(np.zeros((1, 2, 1))) + ["s0,a1,b0,3.0"]
        with pytest.raises(io.FormatError, match=r"duplicate cell \(s0, a1, b0\)"):
            io.read_tensor_csv(write(tmp_path / "t.csv", "\n".join(rows)))

    def test_incomplete_grid_lists_gaps(self, tmp_path):
        rows = tensor_text(np.zeros((2, 2, 2)))
        del rows[1 + 4 + 3]  # s1, a1, b1
        with pytest.raises(io.FormatError, match=r"1 missing.*\(s1, a1, b1\)"):
            io.read_tensor_csv(write(tmp_path / "t.csv", "\n".join(rows)))

    def test_gap_list_capped(self, tmp_path):
        rows = ["sample_id,dim1,dim2,value"] + [f"s0,a{j},b0,0" for j in range(6)]
        rows += [f"s0,a0,b{k},0" for k in range(1, 6)]
        with pytest.raises(io.FormatError) as err:
            io.read_tensor_csv(write(tmp_path / "t.csv", "\n".join(rows)))
        assert str(err.value).count("(s0,") == 10

    def test_non_numeric_row_number(self, tmp_path):
        rows = tensor_text(np.zeros((1, 2, 2)))
        rows[3] = "s0,a1,b0,abc"
        with pytest.raises(io.FormatError, match=r"t\.csv:4: non-numeric"):
            io.read_tensor_csv(write(tmp_path / "t.csv", "\n".join(rows)))

    def test_non_finite(self, tmp_path):
        rows = tensor_text(np.zeros((1, 1, 2)))
        rows[2] = "s0,a0,b1,nan"
        with pytest.raises(io.FormatError, match="non-finite"):
            io.read_tensor_csv(write(tmp_path / "t.csv", "\n".join(rows)))

    def test_missing_column(self, tmp_path):
        with pytest.raises(io.FormatError, match="missing columns"):
            io.read_tensor_csv(write(tmp_path / "t.csv", "sample_id,dim1,value\ns,a,1\n"))

    def test_row_order_does_not_matter(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3, 4, 2))
        rows = tensor_text(X)
        body = rows[1:]
        # keep each level's first appearance in the same relative order
        shuffled = [body[0]] + list(rng.permutation(body[1:]))
        a = io.read_tensor_csv(write(tmp_path / "a.csv", "\n".join(rows)))
        b = io.read_tensor_csv(write(tmp_path / "b.csv", "\n".join([rows[0]] + shuffled)))
        order1 = [b[2].index(f"a{j}") for j in range(4)]
        order2 = [b[3].index(f"b{k}") for k in range(2)]
        order0 = [b[1].index(f"s{i}") for i in range(3)]
        np.testing.assert_array_equal(b[0].values[np.ix_(order0, order1, order2)], a[0].values)

    def test_permuted_rows_same_grid_when_first_row_kept(self, tmp_path):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(2, 2, 2))
        rows = tensor_text(X)
        # levels first seen in canonical order even after swapping later rows
        swapped = rows[:2] + [rows[3], rows[2]] + rows[4:]
        a = io.read_tensor_csv(write(tmp_path / "a.csv", "\n".join(rows)))
        b = io.read_tensor_csv(write(tmp_path / "b.csv", "\n".join(swapped)))
        np.testing.assert_array_equal(a[0].values, b[0].values)


class TestLabels:
    def test_zero_one_mapping(self, tmp_path):
        lab = io.read_labels_csv(write(tmp_path / "l.csv", "sample_id,label\na,0\nb,1\nc,-1\n"))
        assert lab == {"a": -1.0, "b": 1.0, "c": -1.0}

    def test_bad_label(self, tmp_path):
        with pytest.raises(io.FormatError, match="l.csv:3"):
            io.read_labels_csv(write(tmp_path / "l.csv", "sample_id,label\na,1\nb,2\n"))

    def test_unknown_sample(self, tmp_path):
        t = write(tmp_path / "t.csv", "\n".join(tensor_text(np.zeros((2, 1, 1)))))
        lab = write(tmp_path / "l.csv", "sample_id,label\ns0,1\ns1,-1\nghost,1\n")
        with pytest.raises(io.FormatError, match="ghost"):
            io.ingest(t, lab)

    def test_missing_label(self, tmp_path):
        t = write(tmp_path / "t.csv", "\n".join(tensor_text(np.zeros((2, 1, 1)))))
        lab = write(tmp_path / "l.csv", "sample_id,label\ns0,1\n")
        with pytest.raises(io.FormatError, match="s1"):
            io.ingest(t, lab)


class TestExportRoundTrip:
    def test_random_grids(self, tmp_path):
        rng = np.random.default_rng(2)
        for trial in range(25):
            n, p, m = rng.integers(1, 5, size=3)
            X = rng.normal(size=(n, p, m)) * 10.0 ** rng.integers(-8, 8)
            y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            data = LabeledDataset(Tensor3(X), y)
            tp, lp = tmp_path / f"t{trial}.csv", tmp_path / f"l{trial}.csv"
            io.export_tensor_csv(data, tp)
            io.export_labels_csv(data, lp)
            back = io.ingest(tp, lp)
            np.testing.assert_array_equal(back.X, X)
            np.testing.assert_array_equal(back.labels, y)


class TestModelFile:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        base = fit(LabeledDataset(Tensor3(rng.normal(size=(8, 3, 2))), [1, -1] * 4), FitOptions())
        path = tmp_path / "m.json"
        for _ in range(1000):
            p, m = base.B.shape
            W = rng.normal(size=(p, 1)) * 10.0 ** rng.integers(-30, 30)
            V = rng.normal(size=(m, 1))
            model = type(base)(rank=1, B=W @ V.T, W=W, V=V, beta=float(rng.normal() * 1e-7),
                               solver="dwd", objective_value=float(rng.random()),
                               fit_trace=base.fit_trace, options=base.options)
            io.save_model(model, path)
            back = io.load_model(path)
            for name in ("B", "W", "V"):
                assert np.array_equal(getattr(back, name), getattr(model, name))
            assert back.beta == model.beta and back.objective_value == model.objective_value
            x = rng.normal(size=(p, m))
            assert back.score(x) == model.score(x)

    def test_full_model_and_metadata(self, tmp_path):
        data = LabeledDataset(Tensor3(np.random.default_rng(4).normal(size=(8, 3, 2))), [1, -1] * 4,
                              ["x", "y", "z"], ["u", "v"])
        model = fit(data, FitOptions(rank=FULL))
        io.save_model(model, tmp_path / "m.json")
        back = io.load_model(tmp_path / "m.json")
        assert back.rank == FULL and back.W is None
        assert tuple(back.dim1_names) == ("x", "y", "z")
        assert back.options.resolved() == model.options.resolved()

    def test_schema_version_checked(self, tmp_path):
        with pytest.raises(io.FormatError):
            io.model_from_dict({"schema_version": 99})


class TestScenarios:
    def test_named(self):
        cfg = load_scenario("table1_15x4_rank1")
        assert (cfg["p"], cfg["m"], cfg["structure"], cfg["n_train"]) == (15, 4, 1, 40)
        assert SCENARIOS["fig1_500x30_full"]["structure"] == FULL

    def test_file(self, tmp_path):
        cfg = load_scenario(write(tmp_path / "s.cfg", "# tiny\np = 4\nm=3\nstructure = full\nsignal_scale = 1.5\n"))
        assert cfg["structure"] == FULL and cfg["signal_scale"] == 1.5 and cfg["n_train"] == 40

    def test_bad_key(self, tmp_path):
        with pytest.raises(io.FormatError, match="s.cfg:2"):
            load_scenario(write(tmp_path / "s.cfg", "p=4\ncolour=red\nm=2\n"))


class TestCommands:
    def test_fit_toy(self, tmp_path):
        out = tmp_path / "m.json"
        assert main(["fit", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(np.ravel(doc["B"])) == 5 * 3
        assert doc["fit_trace"]["converged"] is True
        assert doc["options"]["restarts"] == 1

    def test_predict_and_axis_mismatch(self, tmp_path, capsys):
        model = tmp_path / "m.json"
        main(["fit", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--out", str(model)])
        pred = tmp_path / "p.csv"
        assert main(["predict", "--model", str(model), "--tensor", TOY_TENSOR, "--out", str(pred)]) == 0
        rows = read_csv(pred)
        assert len(rows) == 20 and set(rows[0]) == {"sample_id", "score", "predicted"}
        other = write(tmp_path / "o.csv", "\n".join(tensor_text(np.zeros((2, 5, 3)))))
        capsys.readouterr()
        assert main(["predict", "--model", str(model), "--tensor", other, "--out", str(pred)]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "axis_mismatch"

    def test_cv_outputs(self, tmp_path):
        rep, sc = tmp_path / "r.json", tmp_path / "s.csv"
        assert main(["cv", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--out", f"{rep},{sc}"]) == 0
        summary = json.loads(rep.read_text())
        assert summary["scheme"] == "loo" and summary["folds"] == 20
        assert 0.0 <= summary["misclassification_rate"] <= 1.0
        assert len(read_csv(sc)) == 20

    def test_simulate_config_file(self, tmp_path):
        cfg = write(tmp_path / "s.cfg", "p = 4\nm = 3\nstructure = 1\nn_train = 12\n"
                                        "n_test_per_class = 10\nsignal_scale = 1.0\n")
        out = tmp_path / "sim.csv"
        assert main(["simulate", "--scenario", cfg, "--reps", "3", "--models", "rank1,full",
                     "--out", str(out)]) == 0
        rows = read_csv(out)
        assert [r["model"] for r in rows] == ["bayes", "rank1", "full"]
        for col in ("Mis", "SE(Mis)", "Cor", "SE(Cor)"):
            assert col in rows[0]
        assert all(float(r["signal_scale"]) == 1.0 for r in rows)


class TestErrors:
    def test_invalid_flag_is_usage_error(self, capsys):
        assert main(["fit", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--out", "x",
                     "--solver", "lda"]) == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "usage" and "solver" in err["message"]

    def test_missing_required(self, capsys):
        assert main(["cv", "--tensor", TOY_TENSOR, "--out", "a,b"]) == 2
        assert "--labels" in json.loads(capsys.readouterr().err.strip())["message"]

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["fit", "--tensor", str(tmp_path / "nope.csv"), "--labels", TOY_LABELS,
                   "--out", str(tmp_path / "m.json")])
        assert rc == 1
        line = capsys.readouterr().err.strip().splitlines()[-1]
        assert json.loads(line)["error"] == "FileNotFoundError"

    def test_rank_too_large(self, tmp_path, capsys):
        rc = main(["fit", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--rank", "9",
                   "--out", str(tmp_path / "m.json")])
        assert rc == 1


class TestSubprocess:
    def test_config_rerun_reproduces(self, tmp_path):
        first = tmp_path / "a.json"
        res = run_cli("fit", "--tensor", TOY_TENSOR, "--labels", TOY_LABELS, "--rank", "2",
                      "--seed", "5", "--out", str(first))
        assert res.returncode == 0, res.stderr
        line = next(l for l in res.stderr.splitlines() if "resolved config:" in l)
        cfg = json.loads(line.split("resolved config:", 1)[1])
        assert cfg["rank"] == 2 and cfg["seed"] == 5 and cfg["restarts"] == 1
        second = tmp_path / "b.json"
        cfg["out"] = str(second)
        cfg_path = write(tmp_path / "cfg.json", json.dumps(cfg))
        res = run_cli("fit", "--config", cfg_path)
        assert res.returncode == 0, res.stderr
        a, b = json.loads(first.read_text()), json.loads(second.read_text())
        assert a["B"] == b["B"] and a["beta"] == b["beta"]

    def test_single_line_json_error(self):
        res = run_cli("fit", "--tensor", TOY_TENSOR, "--epsilon", "-1")
        assert res.returncode == 2
        lines = res.stderr.strip().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["error"] == "usage"

    def test_late_error_ends_with_json_line(self):
        res = run_cli("simulate", "--scenario", "no_such_scenario", "--out", "x.csv")
        assert res.returncode == 2
        err = json.loads(res.stderr.strip().splitlines()[-1])
        assert err["error"] == "usage" and "table1_15x4_full" in err["message"]
