import csv
import json

import numpy as np
import pytest

from reachkit.cli import agreement, main
from reachkit.datasets import save_point_cloud
from reachkit.manifolds import Circle, FlatAffine, QuadraticSurface


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def circle_model(tmp_path):
    return write_json(tmp_path / "circle.json", Circle(1.0).to_dict())


def small_config(tmp_path, **kw):
    doc = {
        "pretrain_epochs": 2,
        "batch_size": 16,
        "hidden": [8, 8],
        "report_every": 1,
        "report_subsample": 10,
        "sampler": {"batch_size": 10, "num_batches": 2},
    }
    doc.update(kw)
    return write_json(tmp_path / "cfg.json", doc)


class TestGenData:
    def test_circle(self, tmp_path):
        out = tmp_path / "c.csv"
        assert main(["gen-data", "circle", "--seed", "2", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "x0,x1" and len(rows) == 401

    def test_quadratic_with_model(self, tmp_path):
        out, model = tmp_path / "q.csv", tmp_path / "q.json"
        assert main(["gen-data", "quadratic", "--ambient-dim", "5", "--n-points", "50", "--out", str(out), "--model-out", str(model)]) == 0
        assert json.loads(model.read_text())["kind"] == "quadratic"


class TestAnalyze:
    def test_flat_all_within(self, tmp_path):
        model = write_json(tmp_path / "flat.json", FlatAffine([[1.0], [0.0]]).to_dict())
        data = tmp_path / "d.csv"
        save_point_cloud(data, np.random.default_rng(0).standard_normal((20, 2)))
        out = tmp_path / "o.csv"
        assert main(["analyze", "--model", model, "--data", str(data), "--out", str(out), "--num-batches", "2"]) == 0
        rows = read_rows(out)
        assert len(rows) == 20 and all(r["within_reach"] == "1" and r["r_hat"] == "inf" for r in rows)

    def test_circle_center(self, tmp_path, circle_model):
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, 0.0], [0.5, 0.0]])
        out = tmp_path / "o.csv"
        assert main(["analyze", "--model", circle_model, "--data", str(data), "--out", str(out)]) == 0
        assert [r["within_reach"] for r in read_rows(out)] == ["0", "1"]

    def test_rows_in_input_order(self, tmp_path, circle_model):
        data = tmp_path / "d.csv"
        save_point_cloud(data, np.random.default_rng(1).standard_normal((15, 2)))
        out = tmp_path / "o.csv"
        main(["analyze", "--model", circle_model, "--data", str(data), "--out", str(out)])
        assert [int(r["index"]) for r in read_rows(out)] == list(range(15))

    def test_dimension_mismatch(self, tmp_path, circle_model):
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, 0.0, 1.0]])
        assert main(["analyze", "--model", circle_model, "--data", str(data)]) == 2

    def test_missing_file(self, tmp_path, circle_model):
        assert main(["analyze", "--model", circle_model, "--data", str(tmp_path / "nope.csv")]) == 2

    def test_bad_model(self, tmp_path):
        model = write_json(tmp_path / "m.json", {"type": "nonsense"})
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, 0.0]])
        assert main(["analyze", "--model", model, "--data", str(data)]) == 2

    def test_rank_deficient_majority(self, tmp_path):
        model = write_json(tmp_path / "m.json", {"type": "analytic", "kind": "flat", "basis": [[0.0], [0.0]]})
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, 1.0], [1.0, 0.0]])
        assert main(["analyze", "--model", model, "--data", str(data), "--num-batches", "1"]) == 3


class TestVerifyUniqueness:
    def test_circle(self, tmp_path, circle_model):
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, 0.0], [0.5, 0.2], [1.3, -0.4]])
        out = tmp_path / "o.csv"
        assert main(["verify-uniqueness", "--model", circle_model, "--data", str(data), "--out", str(out), "--restarts", "16"]) == 0
        rows = read_rows(out)
        assert (rows[0]["within_reach"], rows[0]["oracle_unique"], rows[0]["agreement"]) == ("0", "0", "confirmed")
        assert rows[0]["reach_class"] == "provably outside reach"
        for r in rows[1:]:
            assert (r["within_reach"], r["oracle_unique"], r["reach_class"]) == ("1", "1", "not flagged")

    def test_parabola_conservative_warning(self, tmp_path):
        model = write_json(tmp_path / "p.json", QuadraticSurface(2, 1).to_dict())
        data = tmp_path / "d.csv"
        save_point_cloud(data, [[0.0, -2.0]])
        out = tmp_path / "o.csv"
        assert main(["verify-uniqueness", "--model", model, "--data", str(data), "--out", str(out)]) == 0
        row = read_rows(out)[0]
        assert (row["within_reach"], row["oracle_unique"], row["agreement"]) == ("0", "1", "conservative warning")

    def test_agreement_classes(self):
        assert agreement(True, True) == "consistent"
        assert agreement(True, False) == "missed"
        assert agreement(False, True) == "conservative warning"
        assert agreement(False, False) == "confirmed"


class TestSweep:
    def test_trend_and_bound(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["sweep-dim", "--dims", "3", "50", "--trials", "100", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert float(rows[1]["mean_overestimation"]) < float(rows[0]["mean_overestimation"])
        assert all(float(r["min_estimate"]) >= 0.5 for r in rows)

    def test_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            main(["sweep-dim", "--dims", "4", "--trials", "1", "--seed", "3", "--out", str(p)])
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_low_dim(self):
        assert main(["sweep-dim", "--dims", "2"]) == 2


class TestTraining:
    @pytest.fixture
    def data(self, tmp_path):
        path = tmp_path / "d.csv"
        main(["gen-data", "circle", "--n-points", "40", "--radius", "3", "--out", str(path)])
        return str(path)

    def test_train_and_regularize(self, tmp_path, data):
        m1, r1 = tmp_path / "m1.json", tmp_path / "r1.csv"
        assert main(["train", "--data", data, "--config", small_config(tmp_path), "--model-out", str(m1), "--out", str(r1)]) == 0
        assert json.loads(m1.read_text())["epochs_trained"] == 2
        reg_cfg = small_config(tmp_path, regularized_iterations=2)
        m2, r2 = tmp_path / "m2.json", tmp_path / "r2.csv"
        code = main(["regularize", "--data", data, "--config", reg_cfg, "--model", str(m1), "--lambda", "1.0",
                     "--model-out", str(m2), "--out", str(r2)])
        assert code == 0
        rows = read_rows(r2)
        assert rows[0]["epoch"] == "3"
        assert json.loads(m2.read_text())["epochs_trained"] == 3

    def test_byte_identical_rerun(self, tmp_path, data):
        cfg = small_config(tmp_path)
        outs = []
        for k in range(2):
            m, r = tmp_path / f"m{k}.json", tmp_path / f"r{k}.csv"
            main(["train", "--data", data, "--config", cfg, "--seed", "5", "--model-out", str(m), "--out", str(r)])
            outs.append((m.read_bytes(), r.read_bytes()))
        assert outs[0] == outs[1]

    def test_config_error(self, tmp_path, data):
        cfg = write_json(tmp_path / "bad.json", {"lambda": -1})
        assert main(["train", "--data", data, "--config", cfg, "--model-out", str(tmp_path / "m.json")]) == 2

    def test_nonfinite_exit_code(self, tmp_path, data):
        cfg = small_config(tmp_path, learning_rate=1e300)
        assert main(["train", "--data", data, "--config", cfg, "--model-out", str(tmp_path / "m.json")]) == 3

    def test_regularize_requires_lambda(self, tmp_path, data):
        with pytest.raises(SystemExit):
            main(["regularize", "--data", data, "--model", "m.json", "--model-out", "o.json"])


class TestExport:
    def test_circle_grid(self, tmp_path, circle_model):
        out = tmp_path / "g.csv"
        assert main(["export-manifold", "--model", circle_model, "--grid", "5", "--range", "0", "1", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert len(rows) == 5 and list(rows[0]) == ["z0", "x0", "x1"]
        assert float(rows[0]["x0"]) == 1.0

    def test_surface_grid(self, tmp_path):
        model = write_json(tmp_path / "q.json", QuadraticSurface(3, 2).to_dict())
        out = tmp_path / "g.csv"
        assert main(["export-manifold", "--model", model, "--grid", "4", "--out", str(out)]) == 0
        assert len(read_rows(out)) == 16
