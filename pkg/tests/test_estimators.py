import json

import numpy as np
import pytest
from scipy.special import expit

import maintcause.estimators as est_mod
from maintcause.domain import TreatmentGrid, ValidationError
from maintcause.estimators import (
    EnsembleOutcomeEstimator,
    MlpOutcomeEstimator,
    OutcomeEstimator,
    SciganConfig,
    SearchSpace,
    SupervisedConfig,
    _derived_seed,
    average_effect_estimator,
    estimator_from_doc,
    fit_scigan,
    fit_supervised,
    search_supervised,
)
from maintcause.nncore import DivergenceError, Gradients, TrainConfig


def toy_data(n=600, seed=0, eps_sd=0.25):
    """Single-feature population with a smooth decreasing dose-response."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (n, 1))
    t = rng.uniform(0.0, 20.0, n)
    eps = eps_sd * rng.standard_normal(n)
    y = 5.0 * expit(1.0 + X[:, 0] - 0.12 * t + eps)
    k = n * 2 // 3
    return (X[:k], t[:k], y[:k]), (X[k:], t[k:], y[k:])


def true_curve(x_value, t):
    return 5.0 * expit(1.0 + x_value - 0.12 * np.asarray(t))


TOY_TRAIN = TrainConfig(
    learning_rate=0.05, batch_size=64, epochs=150, patience=15, seed=3
)


@pytest.fixture(scope="module")
def supervised_fit():
    tr, va = toy_data()
    cfg = SupervisedConfig(hidden=(32, 32), train=TOY_TRAIN)
    return tr, va, fit_supervised(tr, va, "overhauls", cfg)


@pytest.fixture(scope="module")
def scigan_fit():
    tr, va = toy_data()
    cfg = SciganConfig(
        gen_hidden=(32, 32),
        disc_hidden=(32, 32),
        inference_hidden=(32, 32),
        gan_epochs=150,
        gan_batch_size=64,
        gan_learning_rate=1e-3,
        train=TOY_TRAIN,
    )
    return tr, va, fit_scigan(tr, va, "overhauls", cfg)


class TestSupervised:
    def test_learns_dose_response(self, supervised_fit):
        _, va, est = supervised_fit
        X_va, t_va, y_va = va
        mse = float(np.mean((est.predict(X_va, t_va) - y_va) ** 2))
        assert mse < 0.2
        grid = np.linspace(0.0, 20.0, 201)
        pred = est.predict(np.zeros((201, 1)), grid)
        assert np.max(np.abs(pred - true_curve(0.0, grid))) < 0.8

    def test_constant_outcome(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1.0, 1.0, (300, 2))
        t = rng.uniform(0.0, 20.0, 300)
        y = np.full(300, 2.5)
        cfg = SupervisedConfig(
            hidden=(16, 16),
            train=TrainConfig(
                learning_rate=0.01,
                batch_size=64,
                epochs=3000,
                patience=3000,
                seed=0,
                optimizer="adam",
            ),
        )
        est = fit_supervised((X[:200], t[:200], y[:200]), (X[200:], t[200:], y[200:]), "failures", cfg)
        probe = est.predict(X, t)
        assert np.max(np.abs(probe - 2.5)) < 1e-2

    def test_refit_bit_identical(self):
        tr, va = toy_data(n=240)
        cfg = SupervisedConfig(
            hidden=(16,), train=TrainConfig(epochs=30, patience=30, seed=5)
        )
        a = fit_supervised(tr, va, "overhauls", cfg)
        b = fit_supervised(tr, va, "overhauls", cfg)
        X_va = va[0]
        np.testing.assert_array_equal(a.predict(X_va, 7.0), b.predict(X_va, 7.0))

    def test_prediction_deterministic(self, supervised_fit):
        _, va, est = supervised_fit
        X_va = va[0]
        np.testing.assert_array_equal(est.predict(X_va, 3.0), est.predict(X_va, 3.0))

    def test_predict_shapes(self, supervised_fit):
        _, va, est = supervised_fit
        X_va, t_va, _ = va
        assert isinstance(est.predict(X_va[0], 5.0), float)
        assert est.predict(X_va, 5.0).shape == (len(X_va),)
        assert est.predict(X_va, t_va).shape == (len(X_va),)
        with pytest.raises(ValidationError):
            est.predict(X_va, t_va[:-1])
        with pytest.raises(ValidationError):
            est.predict(X_va, -1.0)

    def test_predict_curve_shape(self, supervised_fit):
        _, va, est = supervised_fit
        grid = TreatmentGrid.default()
        curves = est.predict_curve(va[0][:7], grid)
        assert curves.shape == (7, 201)
        assert np.isfinite(curves).all()

    def test_input_validation(self):
        tr, va = toy_data(n=60)
        with pytest.raises(ValidationError):
            fit_supervised(tr, va, "breakdowns")
        with pytest.raises(ValidationError):
            fit_supervised((tr[0][:0], tr[1][:0], tr[2][:0]), va, "overhauls")
        with pytest.raises(ValidationError):
            fit_supervised((tr[0], tr[1][:-1], tr[2]), va, "overhauls")


class TestScigan:
    def test_discriminator_at_equilibrium(self, scigan_fit):
        _, _, est = scigan_fit
        tail = np.mean(est.components.disc_loss[-5:])
        assert tail > 0.8 * np.log(6.0)

    def test_discriminator_accuracy_near_chance(self, scigan_fit):
        tr, _, est = scigan_fit
        c = est.components
        X, t, y = tr
        D = 6
        rng = np.random.default_rng(123)
        ts, ys = t / 20.0, y / est.y_scale
        b = len(X)
        dos = rng.uniform(0.0, 1.0, (b, D - 1))
        pos = rng.integers(0, D, b)
        z = rng.standard_normal((b, 10))
        rep = np.repeat(np.column_stack([X, ts, ys]), D - 1, axis=0)
        gen_in = np.column_stack([rep, np.repeat(z, D - 1, axis=0), dos.reshape(-1, 1)])
        y_cf = c.generator.forward(gen_in)[:, 0].reshape(b, D - 1)
        mask = np.ones((b, D), dtype=bool)
        mask[np.arange(b), pos] = False
        dosage_mat = np.empty((b, D))
        dosage_mat[mask] = dos.ravel()
        dosage_mat[np.arange(b), pos] = ts
        y_mat = np.empty((b, D))
        y_mat[mask] = y_cf.ravel()
        y_mat[np.arange(b), pos] = ys
        disc_in = np.empty((b, 1 + 2 * D))
        disc_in[:, :1] = X
        disc_in[:, 1::2] = dosage_mat
        disc_in[:, 2::2] = y_mat
        accuracy = float(np.mean(c.discriminator.forward(disc_in).argmax(axis=1) == pos))
        assert accuracy < 0.35

    def test_factual_reconstruction(self, scigan_fit):
        tr, _, est = scigan_fit
        mse = est.components.factual_reconstruction(*tr, est.y_scale)
        assert mse < 0.05

    def test_augmentation_preserves_factual_fit(self, scigan_fit, supervised_fit):
        _, va, scigan = scigan_fit
        _, _, supervised = supervised_fit
        X_va, t_va, y_va = va
        mse_scigan = float(np.mean((scigan.predict(X_va, t_va) - y_va) ** 2))
        mse_supervised = float(np.mean((supervised.predict(X_va, t_va) - y_va) ** 2))
        assert mse_scigan <= 1.5 * mse_supervised

    def test_learns_curve(self, scigan_fit):
        _, _, est = scigan_fit
        grid = np.linspace(0.0, 20.0, 201)
        for x_value in (-0.5, 0.0, 0.5):
            pred = est.predict(np.full((201, 1), x_value), grid)
            assert np.mean(np.abs(pred - true_curve(x_value, grid))) < 0.6

    def test_envelope_roundtrip(self, scigan_fit):
        _, va, est = scigan_fit
        doc = json.loads(json.dumps(est.to_doc()))
        back = estimator_from_doc(doc)
        assert isinstance(back, EnsembleOutcomeEstimator)
        assert back.estimator == "scigan"
        assert back.kind == "overhauls"
        assert back.components is None
        assert len(back.nets) == len(est.nets)
        X_va = va[0]
        np.testing.assert_array_equal(back.predict(X_va, 4.2), est.predict(X_va, 4.2))

    def test_ensemble_sizes_match_config(self, scigan_fit):
        _, _, est = scigan_fit
        assert len(est.nets) == est.config["inference_count"]
        c = est.components
        assert len(c.generators) == est.config["generator_count"]
        assert len(c.discriminators) == len(c.generators)
        assert len(c.inference_nets) == len(est.nets)
        assert c.generator is c.generators[0]
        assert c.inference is c.inference_nets[0]

    def test_prediction_is_member_mean(self, scigan_fit):
        _, va, est = scigan_fit
        X_va = va[0][:8]
        inp = np.column_stack([X_va, np.full(8, 4.0 / 20.0)])
        manual = np.mean([net.forward(inp)[:, 0] for net in est.nets], axis=0)
        np.testing.assert_allclose(est.predict(X_va, 4.0), manual * est.y_scale, rtol=1e-12)

    def test_refit_bit_identical(self):
        tr, va = toy_data(n=240)
        cfg = SciganConfig(
            gen_hidden=(16,),
            disc_hidden=(16,),
            inference_hidden=(16,),
            gan_epochs=20,
            gan_batch_size=64,
            train=TrainConfig(epochs=20, patience=20, seed=8),
        )
        a = fit_scigan(tr, va, "failures", cfg)
        b = fit_scigan(tr, va, "failures", cfg)
        X_va = va[0]
        np.testing.assert_array_equal(a.predict(X_va, 9.0), b.predict(X_va, 9.0))

    def test_divergence_guard(self, monkeypatch):
        # freeze the generator (backprop drives only generator updates), so
        # the discriminator wins and the persistent-win guard must abort
        monkeypatch.setattr(
            est_mod,
            "backprop",
            lambda m, batch, delta, with_inputs=False: Gradients(
                [np.zeros_like(w) for w in m.weights],
                [np.zeros_like(b) for b in m.biases],
            ),
        )
        rng = np.random.default_rng(0)
        n = 300
        X = rng.uniform(-1.0, 1.0, (n, 1))
        t = rng.uniform(0.0, 20.0, n)
        y = np.where(X[:, 0] > 0, 4.8, 0.2)
        k = 200
        tr = (X[:k], t[:k], y[:k])
        va = (X[k:], t[k:], y[k:])
        cfg = SciganConfig(
            gen_hidden=(16,),
            disc_hidden=(32, 32),
            inference_hidden=(16,),
            gan_epochs=80,
            gan_batch_size=32,
            gan_learning_rate=3e-3,
            train=TrainConfig(epochs=20, patience=5, seed=1),
        )
        with pytest.raises(DivergenceError, match="learning rate"):
            fit_scigan(tr, va, "overhauls", cfg)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            SciganConfig(dosage_set_size=1)
        with pytest.raises(ValidationError):
            SciganConfig(recon_weight=-0.1)
        with pytest.raises(ValidationError):
            SciganConfig(augmentation_per_contract=0)


class TestAverageEffect:
    def test_identical_population_equals_individual(self, supervised_fit):
        _, va, est = supervised_fit
        row = va[0][0]
        pop = np.repeat(row[None, :], 9, axis=0)
        curve = average_effect_estimator(est, pop)
        for t in (0.0, 5.0, 12.5, 20.0):
            assert curve(t) == pytest.approx(est.predict(row, t), rel=1e-12)

    def test_mean_within_individual_bounds(self, supervised_fit):
        _, va, est = supervised_fit
        pop = va[0][:40]
        curve = average_effect_estimator(est, pop)
        for t in (0.0, 7.0, 20.0):
            each = est.predict(pop, t)
            assert each.min() - 1e-12 <= curve(t) <= each.max() + 1e-12

    def test_array_argument(self, supervised_fit):
        _, va, est = supervised_fit
        curve = average_effect_estimator(est, va[0][:10])
        t = np.array([0.0, 10.0, 20.0])
        out = curve(t)
        assert out.shape == (3,)
        np.testing.assert_allclose(out[1], curve(10.0))

    def test_empty_population_rejected(self, supervised_fit):
        _, _, est = supervised_fit
        with pytest.raises(ValidationError):
            average_effect_estimator(est, np.zeros((0, 1)))

    def test_untrained_rejected(self):
        with pytest.raises(ValidationError):
            average_effect_estimator(OutcomeEstimator(), np.zeros((3, 1)))


class TestContinuity:
    def test_lipschitz_bound_on_grid(self, supervised_fit):
        # the network's own operator norms bound how fast predictions can
        # move in t, so grid steps can never jump more than L * step
        _, va, est = supervised_fit
        lipschitz = est.y_scale * 0.25 / 20.0
        for w in est.net.weights:
            lipschitz *= np.linalg.svd(w, compute_uv=False)[0]
        grid = TreatmentGrid.default()
        curves = est.predict_curve(va[0][:20], grid)
        max_jump = float(np.max(np.abs(np.diff(curves, axis=1))))
        assert max_jump <= lipschitz * grid.step + 1e-9


class TestSeeds:
    def test_derived_seeds_distinct(self):
        seeds = {
            _derived_seed(7, kind, role)
            for kind in ("overhauls", "failures")
            for role in range(4)
        }
        assert len(seeds) == 8

    def test_outcome_kinds_train_distinct_models(self):
        tr, va = toy_data(n=240)
        cfg = SupervisedConfig(hidden=(16,), train=TrainConfig(epochs=10, patience=10, seed=2))
        a = fit_supervised(tr, va, "overhauls", cfg)
        b = fit_supervised(tr, va, "failures", cfg)
        assert not np.allclose(a.net.weights[0], b.net.weights[0])


class TestSearch:
    def test_grid_search_selects_on_validation(self):
        tr, va = toy_data(n=300)
        base = SupervisedConfig(
            hidden=(16,), train=TrainConfig(epochs=40, patience=40, seed=4)
        )
        space = SearchSpace(learning_rates=(0.005, 0.05), hidden_widths=(8, 24))
        best = search_supervised(tr, va, "overhauls", space, base)
        assert best.trained
        candidates = []
        for lr in space.learning_rates:
            for width in space.hidden_widths:
                cfg = SupervisedConfig(
                    hidden=(width,),
                    train=TrainConfig(epochs=40, patience=40, seed=4, learning_rate=lr),
                )
                candidates.append(
                    fit_supervised(tr, va, "overhauls", cfg).history.best_valid_loss
                )
        assert best.history.best_valid_loss == pytest.approx(min(candidates))

    def test_empty_space_rejected(self):
        with pytest.raises(ValidationError):
            SearchSpace(learning_rates=())
