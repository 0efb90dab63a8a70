import numpy as np
import pytest
from scipy.special import expit

from maintcause.datagen import (
    BiasModel,
    TrueOutcomeModel,
    assign_treatments,
    bias_diagnostics,
    delta_quartile_wasserstein,
    generate_dataset,
    ks_uniform_statistic,
    sample_covariates,
    scaled_beta_mean,
    true_failures,
    true_overhauls,
)
from maintcause.domain import FEATURE_DIM, TreatmentGrid, ValidationError


class TestCovariateSampling:
    def test_ranges_and_determinism(self):
        rows = sample_covariates(200, seed=7)
        again = sample_covariates(200, seed=7)
        assert [r.machine_type for r in rows] == [r.machine_type for r in again]
        assert [r.age_at_start for r in rows] == [r.age_at_start for r in again]
        assert all(1 <= r.machine_type <= 7 for r in rows)
        assert all(r.contract_type in (1, 2) for r in rows)
        assert all(0.0 <= r.age_at_start <= 39.0 for r in rows)

    def test_prefix_stability(self):
        # per-contract streams: row i does not depend on how many rows follow
        short = sample_covariates(5, seed=3)
        long = sample_covariates(50, seed=3)
        assert short == long[:5]

    def test_all_categories_reached(self):
        rows = sample_covariates(500, seed=1)
        assert {r.machine_type for r in rows} == set(range(1, 8))
        assert {r.contract_type for r in rows} == {1, 2}


class TestOutcomeModel:
    def setup_method(self):
        self.model = TrueOutcomeModel.from_seed(11)
        rng = np.random.default_rng(0)
        self.x = rng.normal(size=FEATURE_DIM)

    def test_closed_form_matches(self):
        eps = 0.3
        t = 4.0
        z = self.x @ self.model.v_o - 0.1 * expit(self.x @ self.model.w_o) * t + eps
        np.testing.assert_allclose(
            true_overhauls(self.model, self.x, eps, t), 7.0 * expit(z), rtol=1e-12
        )
        zf = self.x @ self.model.v_f - 0.1 * expit(self.x @ self.model.w_f) * t + eps
        np.testing.assert_allclose(
            true_failures(self.model, self.x, eps, t), 9.0 * expit(zf), rtol=1e-12
        )

    def test_monotone_decreasing_and_bounded(self):
        grid = TreatmentGrid.default().points
        rng = np.random.default_rng(5)
        X = rng.normal(size=(50, FEATURE_DIM))
        eps = rng.standard_normal(50)
        o = true_overhauls(self.model, X, eps, grid)
        f = true_failures(self.model, X, eps, grid)
        assert o.shape == (50, 201)
        assert np.all(np.diff(o, axis=1) < 0.0)
        assert np.all(np.diff(f, axis=1) < 0.0)
        assert np.all((o > 0.0) & (o < 7.0))
        assert np.all((f > 0.0) & (f < 9.0))

    def test_per_contract_treatments(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(4, FEATURE_DIM))
        eps = rng.standard_normal(4)
        t = np.array([0.0, 5.0, 10.0, 20.0])
        got = true_overhauls(self.model, X, eps, t)
        assert got.shape == (4,)
        for i in range(4):
            np.testing.assert_allclose(
                got[i], true_overhauls(self.model, X[i], eps[i], t[i]), rtol=1e-12
            )

    def test_negative_t_rejected(self):
        with pytest.raises(ValidationError):
            true_overhauls(self.model, self.x, 0.0, -1.0)

    def test_weights_in_unit_cube(self):
        for w in (self.model.v_o, self.model.w_o, self.model.v_f, self.model.w_f):
            assert w.shape == (FEATURE_DIM,)
            assert np.all((w > 0.0) & (w < 1.0))


class TestBiasModel:
    def test_uniform_at_zero_bias(self):
        bias = BiasModel.from_seed(2, bias_level=0.0)
        alpha, beta = bias.beta_params(np.array([0.1, 0.9]))
        np.testing.assert_allclose(alpha, 1.0)
        np.testing.assert_allclose(beta, 1.0)

    def test_analytic_mean(self):
        # lam = 30, delta = 1: mean = 20 * 4 / (4 + 31)
        np.testing.assert_allclose(scaled_beta_mean(30.0, 1.0), 80.0 / 35.0, rtol=1e-15)
        np.testing.assert_allclose(scaled_beta_mean(0.0, 0.5), 10.0)

    def test_empirical_mean_matches_analytic(self):
        bias = BiasModel.from_seed(4, bias_level=30.0)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(4000, FEATURE_DIM))
        t = assign_treatments(bias, X, seed=4)
        d = bias.delta(X)
        want = scaled_beta_mean(30.0, d).mean()
        assert abs(t.mean() - want) < 0.1

    def test_negative_bias_rejected(self):
        with pytest.raises(ValidationError):
            BiasModel.from_seed(2, bias_level=-1.0)

    def test_distinct_from_outcome_weights(self):
        model = TrueOutcomeModel.from_seed(9)
        bias = BiasModel.from_seed(9, bias_level=10.0)
        assert not np.allclose(bias.w_b, model.v_o)
        assert not np.allclose(bias.w_b, model.w_f)


class TestGenerateDataset:
    def test_shapes_splits_and_consistency(self):
        ds, oracle = generate_dataset(n=80, bias_level=10.0, seed=13)
        assert len(ds.contracts) == 80
        assert ds.metadata.split_counts == {"train": 40, "valid": 20, "test": 20}
        # observed outcomes lie on the oracle's curves at the assigned frequency
        ids = ds.ids()
        o, f = oracle.outcomes_at(ids, ds.treatments())
        np.testing.assert_allclose(ds.outcomes("overhauls"), o, rtol=1e-12)
        np.testing.assert_allclose(ds.outcomes("failures"), f, rtol=1e-12)

    def test_byte_determinism(self):
        a, _ = generate_dataset(n=60, bias_level=20.0, seed=5)
        b, _ = generate_dataset(n=60, bias_level=20.0, seed=5)
        np.testing.assert_array_equal(a.feature_matrix(), b.feature_matrix())
        np.testing.assert_array_equal(a.treatments(), b.treatments())
        np.testing.assert_array_equal(a.outcomes("overhauls"), b.outcomes("overhauls"))

    def test_seed_changes_everything(self):
        a, _ = generate_dataset(n=60, bias_level=20.0, seed=5)
        c, _ = generate_dataset(n=60, bias_level=20.0, seed=6)
        assert not np.allclose(a.treatments(), c.treatments())

    def test_oracle_curves(self):
        ds, oracle = generate_dataset(n=40, bias_level=0.0, seed=21)
        curves = oracle.overhaul_curves(oracle.test_ids)
        assert curves.shape == (10, 201)
        assert np.all(np.diff(curves, axis=1) < 0.0)
        assert np.all((curves > 0.0) & (curves < 7.0))
        fail = oracle.failure_curves([0], t=np.array([0.0, 20.0]))
        assert fail.shape == (1, 2)
        with pytest.raises(ValidationError):
            oracle.overhaul_curves([99999])

    def test_standardization_from_train_split_only(self):
        ds, _ = generate_dataset(n=80, bias_level=0.0, seed=2)
        numeric = ds.feature_matrix("train")[:, 9:]
        np.testing.assert_allclose(numeric.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(numeric.std(axis=0), 1.0, atol=1e-9)
        test_numeric = ds.feature_matrix("test")[:, 9:]
        assert not np.allclose(test_numeric.mean(axis=0), 0.0, atol=1e-3)


class TestBiasDiagnostics:
    def test_ks_small_without_bias(self):
        ds, _ = generate_dataset(n=4000, bias_level=0.0, seed=17)
        assert ks_uniform_statistic(ds.treatments()) < 0.05

    def test_ks_large_with_bias(self):
        ds, _ = generate_dataset(n=4000, bias_level=30.0, seed=17)
        assert ks_uniform_statistic(ds.treatments()) > 0.2

    def test_wasserstein_monotone_in_bias(self):
        dist = []
        for lam in (0.0, 10.0, 20.0, 30.0):
            ds, oracle = generate_dataset(n=2000, bias_level=lam, seed=23)
            d = oracle.bias.delta(ds.feature_matrix())
            dist.append(delta_quartile_wasserstein(d, ds.treatments()))
        assert all(a <= b for a, b in zip(dist, dist[1:]))

    def test_diagnostics_dict(self):
        ds, oracle = generate_dataset(n=200, bias_level=10.0, seed=3)
        diag = bias_diagnostics(ds, oracle)
        assert set(diag) >= {"bias_level", "ks_vs_uniform", "delta_quartile_wasserstein"}
        assert 0.0 <= diag["treatment_range"][0] <= diag["treatment_range"][1] <= 20.0
