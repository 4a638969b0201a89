import json
import math

import numpy as np
import pytest

from reachkit.datasets import CircleArcConfig, gen_circle_arc
from reachkit.errors import ConfigError, NonFiniteLoss
from reachkit.manifolds import Circle, FlatAffine
from reachkit.network import Autoencoder, softplus
from reachkit.sampling import SamplerConfig
from reachkit.training import Adam, TrainingConfig, reach_penalty, train, write_reports_csv


def small_cfg(**kw):
    base = dict(pretrain_epochs=3, batch_size=16, hidden=(8, 8), report_every=1, report_subsample=20,
                sampler=SamplerConfig(batch_size=20, num_batches=2))
    base.update(kw)
    return TrainingConfig(**base)


@pytest.fixture(scope="module")
def toy():
    return gen_circle_arc(CircleArcConfig(n_points=60, radius=3.0, seed=1))


class TestSoftplus:
    def test_values(self):
        assert softplus(0.0) == pytest.approx(math.log(2.0), rel=1e-15)
        assert softplus(3.0) == pytest.approx(math.log1p(math.exp(3.0)), rel=1e-15)
        assert softplus(3.0) == pytest.approx(3.0486, abs=1e-4)
        assert softplus(-np.inf) == 0.0
        assert softplus(800.0) == 800.0


class TestReachPenalty:
    def test_flat_decoder_no_penalty(self):
        flat = FlatAffine([[1.0], [0.0]])
        assert reach_penalty(np.array([0.3, 2.0]), flat, SamplerConfig(num_batches=2)) == 0.0

    def test_circle_center_margin_zero(self):
        # distance 1, reach 1 -> softplus(0)
        p = reach_penalty(np.zeros(2), Circle(1.0), SamplerConfig(num_batches=2))
        assert p == pytest.approx(math.log(2.0), rel=1e-8)

    def test_circle_outside_margin_three(self):
        # x at distance 4 from a unit circle, on the far side the reach is 1
        p = reach_penalty(np.array([-5.0, 0.0]), Circle(1.0), SamplerConfig(num_batches=3))
        assert p == pytest.approx(float(softplus(3.0)), rel=1e-8)


class TestConfig:
    @pytest.mark.parametrize(
        "field,kw",
        [("learning_rate", {"learning_rate": 0.0}), ("lambda", {"lam": -1.0}), ("batch_size", {"batch_size": 0}),
         ("pretrain_epochs", {"pretrain_epochs": -1}), ("seed", {"seed": -2})],
    )
    def test_field_errors(self, field, kw):
        with pytest.raises(ConfigError) as err:
            TrainingConfig(**kw)
        assert err.value.field == field

    def test_dict_round_trip(self):
        cfg = TrainingConfig(lam=0.5, regularized_iterations=10, sampler=SamplerConfig(r0=0.2, num_batches=4))
        doc = json.loads(json.dumps(cfg.to_dict()))
        assert doc["lambda"] == 0.5
        back = TrainingConfig.from_dict(doc)
        assert back == cfg and back.digest() == cfg.digest()

    @pytest.mark.parametrize(
        "doc,field",
        [({"lambda": -1}, "lambda"), ({"bogus": 1}, "bogus"), ({"batch_size": "8"}, "batch_size"),
         ({"schema_version": 7}, "schema_version"), ({"sampler": {"num_batches": 0}}, "sampler"),
         ({"sampler": {"what": 1}}, "sampler"), ({"seed": True}, "seed")],
    )
    def test_from_dict_errors(self, doc, field):
        with pytest.raises(ConfigError) as err:
            TrainingConfig.from_dict(doc)
        assert err.value.field == field

    def test_digest_changes(self):
        assert TrainingConfig(seed=1).digest() != TrainingConfig(seed=2).digest()


class TestAdam:
    def test_minimises_quadratic(self):
        p = np.array([3.0, -2.0])
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.step([2 * p])
        assert np.linalg.norm(p) < 1e-2

    def test_first_step_is_lr_times_sign(self):
        p = np.array([1.0, 1.0])
        Adam([p], lr=0.01).step([np.array([5.0, -0.1])])
        np.testing.assert_allclose(p, [0.99, 1.01], rtol=1e-6)


class TestTrain:
    def test_pretrain_reduces_loss(self, toy):
        model, reports = train(toy, small_cfg(pretrain_epochs=20, report_every=19))
        assert reports[0].recon_loss_train > reports[-1].recon_loss_train
        assert reports[-1].epoch == 20 and reports[-1].lam == 0.0
        assert all(0 <= r.pct_within_reach <= 100 for r in reports)

    def test_bit_reproducible(self, toy, tmp_path):
        cfg = small_cfg(regularized_epochs=2)
        a, ra = train(toy, cfg)
        b, rb = train(toy, cfg)
        assert a.decoder.get_flat().tobytes() == b.decoder.get_flat().tobytes()
        write_reports_csv(ra, tmp_path / "a.csv")
        write_reports_csv(rb, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_csv_columns(self, toy, tmp_path):
        _, reports = train(toy, small_cfg(pretrain_epochs=1), X_test=toy[:10])
        write_reports_csv(reports, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "epoch,recon_train,recon_test,reach_loss,pct_within_reach"
        assert len(lines) == 2 and lines[1].startswith("1,")

    def test_lambda_zero_equals_plain_training(self, toy):
        plain, _ = train(toy, small_cfg(pretrain_epochs=4))
        zero, _ = train(toy, small_cfg(pretrain_epochs=2, regularized_epochs=2, lam=0.0))
        assert plain.decoder.get_flat().tobytes() == zero.decoder.get_flat().tobytes()

    def test_penalty_changes_decoder(self, toy):
        base, _ = train(toy, small_cfg(pretrain_epochs=2))
        a, _ = train(toy, small_cfg(pretrain_epochs=0, regularized_epochs=1, lam=0.0), model=base.copy())
        b, _ = train(toy, small_cfg(pretrain_epochs=0, regularized_epochs=1, lam=5.0), model=base.copy())
        assert not np.array_equal(a.decoder.get_flat(), b.decoder.get_flat())

    def test_regularized_iterations_counter(self, toy):
        _, reports = train(toy, small_cfg(pretrain_epochs=1, regularized_iterations=3, report_every=100))
        assert reports[-1].lam == 1.0
        # 60 points in batches of 16 -> 4 steps per epoch; 3 regularized steps fit in one epoch
        assert reports[-1].epoch == 2

    def test_dimension_mismatch(self, toy):
        with pytest.raises(ValueError):
            train(toy, small_cfg(), model=Autoencoder.create(3, 1, hidden=(4,)))

    def test_nonfinite_rolls_back(self, toy):
        cfg = small_cfg(pretrain_epochs=3, learning_rate=1e300)
        with pytest.raises(NonFiniteLoss) as err:
            train(toy, cfg)
        assert err.value.model is not None
        for p in err.value.model.decoder.params:
            assert np.all(np.isfinite(p))
