"""Prescription policies: cost curves, grid argmin, tie-breaking."""

import numpy as np
import pytest

from maintcause.datagen import generate_dataset
from maintcause.domain import CostParams, TreatmentGrid, ValidationError, total_cost
from maintcause.estimators import OutcomeEstimator
from maintcause.policy import (
    TIE_TOLERANCE,
    CostCurve,
    Prescription,
    cost_curve,
    prescribe_ate,
    prescribe_ite,
    prescribe_oracle,
)

GRID = TreatmentGrid.default()


class StubEstimator(OutcomeEstimator):
    """Closed-form estimator so policy math can be checked exactly."""

    def __init__(self, kind, fn, family="supervised", grid=GRID, trained=True):
        self.kind = kind
        self.trained = trained
        self.estimator = family
        self.grid = grid
        self._fn = fn

    def predict(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        t_arr = np.asarray(t, dtype=float)
        tt = np.full(len(X), float(t_arr)) if t_arr.ndim == 0 else t_arr
        out = np.asarray(self._fn(X, tt), dtype=float)
        return float(out[0]) if single else out


def constant_pair(o=1.0, f=1.0, family="supervised"):
    eo = StubEstimator("overhauls", lambda X, tt: np.full(len(X), o), family)
    ef = StubEstimator("failures", lambda X, tt: np.full(len(X), f), family)
    return eo, ef


def curved_pair(family="supervised"):
    """Stubs whose argmin location depends on the feature vector."""

    def o_fn(X, tt):
        return 4.0 / (1.0 + np.exp(-(2.0 + X[:, 0] - 0.4 * tt)))

    def f_fn(X, tt):
        return 5.0 / (1.0 + np.exp(-(1.0 + 0.5 * X[:, 1] - 0.3 * tt)))

    return (
        StubEstimator("overhauls", o_fn, family),
        StubEstimator("failures", f_fn, family),
    )


def oracle_pair(oracle):
    """Estimators that reproduce the oracle's curves, keyed by feature row."""
    lookup = {row.tobytes(): int(cid) for row, cid in zip(oracle.features, oracle.ids)}

    def make(kind, pick):
        def fn(X, tt):
            ids = [lookup[np.ascontiguousarray(row).tobytes()] for row in X]
            return pick(oracle.outcomes_at(ids, tt))

        return StubEstimator(kind, fn, family="oracle")

    return make("overhauls", lambda of: of[0]), make("failures", lambda of: of[1])


@pytest.fixture(scope="module")
def small_population():
    dataset, oracle = generate_dataset(n=200, bias_level=10.0, seed=11)
    return dataset, oracle


class TestCostCurve:
    def test_constant_predictors_linear_curve(self):
        eo, ef = constant_pair()
        curve = cost_curve(eo, ef, np.zeros(3), CostParams.table1(), GRID)
        expected = 73.0 * GRID.points + 311.0
        assert np.allclose(curve.costs, expected, rtol=0.0, atol=1e-9)
        assert curve.argmin_t == 0.0
        assert curve.argmin_index == 0
        assert curve.argmin_cost == pytest.approx(311.0)

    def test_near_zero_costs_tie_breaks_to_smallest_t(self):
        eo, ef = constant_pair()
        tiny = CostParams(c_pm=1e-12, c_overhaul=1e-12, c_failure=1e-12)
        curve = cost_curve(eo, ef, np.zeros(3), tiny, GRID)
        assert np.ptp(curve.costs) < TIE_TOLERANCE
        assert curve.argmin_t == 0.0

    def test_oracle_predictors_match_direct_substitution(self, small_population):
        dataset, oracle = small_population
        eo, ef = oracle_pair(oracle)
        cp = CostParams.table1()
        contract = dataset.subset("test")[0]
        curve = cost_curve(eo, ef, contract.features, cp, GRID)
        o_true = oracle.overhaul_curves([contract.id], GRID.points)[0]
        f_true = oracle.failure_curves([contract.id], GRID.points)[0]
        expected = cp.c_pm * GRID.points + cp.c_overhaul * o_true + cp.c_failure * f_true
        assert np.max(np.abs(curve.costs - expected)) <= 1e-12

    def test_non_finite_prediction_names_the_estimator(self):
        def bad_fn(X, tt):
            out = np.full(len(X), 1.0)
            return np.where(tt > 10.0, np.inf, out)

        eo = StubEstimator("overhauls", bad_fn)
        _, ef = constant_pair()
        with pytest.raises(ValidationError, match="overhaul estimator"):
            cost_curve(eo, ef, np.zeros(3), CostParams.table1(), GRID)

    def test_argmin_fields_consistent(self):
        rng = np.random.default_rng(5)
        costs = rng.uniform(100.0, 200.0, GRID.n_points)
        curve = CostCurve(grid=GRID, costs=costs)
        assert curve.argmin_cost == costs[curve.argmin_index]
        assert curve.argmin_t == GRID.points[curve.argmin_index]
        assert not np.any(costs[: curve.argmin_index] <= costs.min() + TIE_TOLERANCE)

    def test_misaligned_costs_rejected(self):
        with pytest.raises(ValidationError, match="align"):
            CostCurve(grid=GRID, costs=np.zeros(GRID.n_points - 1))

    def test_untrained_estimator_rejected(self):
        eo = StubEstimator("overhauls", lambda X, tt: np.ones(len(X)), trained=False)
        _, ef = constant_pair()
        with pytest.raises(ValidationError, match="not trained"):
            cost_curve(eo, ef, np.zeros(3), CostParams.table1(), GRID)

    def test_swapped_outcome_kinds_rejected(self):
        eo, ef = constant_pair()
        with pytest.raises(ValidationError, match="must predict"):
            cost_curve(ef, eo, np.zeros(3), CostParams.table1(), GRID)

    def test_mismatched_fit_ranges_rejected(self):
        short = TreatmentGrid(t_min=0.0, t_max=10.0, step=0.1)
        eo = StubEstimator("overhauls", lambda X, tt: np.ones(len(X)), grid=short)
        _, ef = constant_pair()
        with pytest.raises(ValidationError, match="different frequency ranges"):
            cost_curve(eo, ef, np.zeros(3), CostParams.table1(), GRID)


class TestPrescription:
    def test_validation(self):
        with pytest.raises(ValidationError, match="policy"):
            Prescription(id=0, policy="greedy", prescribed_t=1.0, estimated_cost=1.0)
        with pytest.raises(ValidationError, match="prescribed_t"):
            Prescription(id=0, policy="oracle", prescribed_t=20.1, estimated_cost=1.0)
        with pytest.raises(ValidationError, match="estimated_cost"):
            Prescription(
                id=0, policy="oracle", prescribed_t=1.0, estimated_cost=np.nan
            )

    def test_with_true_cost(self):
        p = Prescription(id=3, policy="mlp-ite", prescribed_t=2.0, estimated_cost=9.0)
        assert p.true_cost is None
        filled = p.with_true_cost(11.5)
        assert filled.true_cost == 11.5
        assert filled.id == 3 and p.true_cost is None


class TestPrescribeIte:
    def test_identical_contracts_identical_prescriptions(self, small_population):
        dataset, _ = small_population
        base = dataset.subset("test")[0]
        population = [
            type(base)(
                id=1000 + k,
                covariates=base.covariates,
                features=base.features,
                pm_freq=base.pm_freq,
                overhauls=base.overhauls,
                failures=base.failures,
            )
            for k in range(5)
        ]
        eo, ef = curved_pair()
        pres = prescribe_ite(eo, ef, population, CostParams.table1(), GRID)
        assert len({p.prescribed_t for p in pres}) == 1
        assert len({p.estimated_cost for p in pres}) == 1
        assert {p.policy for p in pres} == {"mlp-ite"}

    def test_prescriptions_on_grid(self, small_population):
        dataset, _ = small_population
        eo, ef = curved_pair()
        pres = prescribe_ite(
            eo, ef, dataset.subset("test"), CostParams.table1(), GRID
        )
        ts = np.array([p.prescribed_t for p in pres])
        assert np.all((ts >= 0.0) & (ts <= 20.0))
        GRID.index_of(ts)

    def test_matches_per_contract_cost_curve(self, small_population):
        dataset, _ = small_population
        eo, ef = curved_pair()
        cp = CostParams.table1()
        population = dataset.subset("test")[:10]
        pres = prescribe_ite(eo, ef, population, cp, GRID)
        for contract, p in zip(population, pres):
            curve = cost_curve(eo, ef, contract.features, cp, GRID)
            assert p.prescribed_t == curve.argmin_t
            assert p.estimated_cost == pytest.approx(curve.argmin_cost, abs=1e-9)

    def test_family_naming_and_mixing(self, small_population):
        dataset, _ = small_population
        population = dataset.subset("test")[:4]
        cp = CostParams.table1()
        eo_s, ef_s = curved_pair(family="scigan")
        pres = prescribe_ite(eo_s, ef_s, population, cp, GRID)
        assert {p.policy for p in pres} == {"scigan-ite"}
        eo_m, _ = curved_pair(family="supervised")
        with pytest.raises(ValidationError, match="different families"):
            prescribe_ite(eo_m, ef_s, population, cp, GRID)

    def test_empty_population_rejected(self):
        eo, ef = constant_pair()
        with pytest.raises(ValidationError, match="nonempty"):
            prescribe_ite(eo, ef, [], CostParams.table1(), GRID)


class TestPrescribeAte:
    def test_single_shared_frequency(self, small_population):
        dataset, _ = small_population
        eo, ef = curved_pair()
        pres = prescribe_ate(
            eo, ef, dataset.subset("test"), CostParams.table1(), GRID
        )
        assert len({p.prescribed_t for p in pres}) == 1
        assert {p.policy for p in pres} == {"mlp-ate"}

    def test_minimizes_population_mean_curve(self, small_population):
        dataset, _ = small_population
        eo, ef = curved_pair()
        cp = CostParams.table1()
        population = dataset.subset("test")
        pres = prescribe_ate(eo, ef, population, cp, GRID)
        curves = np.stack(
            [cost_curve(eo, ef, c.features, cp, GRID).costs for c in population]
        )
        mean_curve = curves.mean(axis=0)
        k = int(np.argmax(mean_curve <= mean_curve.min() + TIE_TOLERANCE))
        assert pres[0].prescribed_t == GRID.points[k]

    def test_homogeneous_population_equals_ite(self, small_population):
        dataset, _ = small_population
        base = dataset.subset("test")[0]
        population = [
            type(base)(
                id=2000 + k,
                covariates=base.covariates,
                features=base.features,
                pm_freq=base.pm_freq,
                overhauls=base.overhauls,
                failures=base.failures,
            )
            for k in range(3)
        ]
        eo, ef = curved_pair()
        cp = CostParams.table1()
        ite = prescribe_ite(eo, ef, population, cp, GRID)
        ate = prescribe_ate(eo, ef, population, cp, GRID)
        for a, b in zip(ite, ate):
            assert a.prescribed_t == b.prescribed_t
            assert a.estimated_cost == pytest.approx(b.estimated_cost, abs=1e-9)

    def test_mean_true_cost_dominated_by_oracle_ite(self, small_population):
        dataset, oracle = small_population
        eo, ef = oracle_pair(oracle)
        cp = CostParams(c_pm=20.0, c_overhaul=207.0, c_failure=104.0)
        population = dataset.subset("test")
        ids = [c.id for c in population]

        def mean_true_cost(pres):
            ts = np.array([p.prescribed_t for p in pres])
            o, f = oracle.outcomes_at(ids, ts)
            return float(np.mean(total_cost(ts, o, f, cp)))

        ate = prescribe_ate(eo, ef, population, cp, GRID)
        ite = prescribe_ite(eo, ef, population, cp, GRID)
        assert mean_true_cost(ate) >= mean_true_cost(ite) - 1e-12


class TestPrescribeOracle:
    def test_restricted_to_test_split(self, small_population):
        dataset, oracle = small_population
        with pytest.raises(ValidationError, match="test split"):
            prescribe_oracle(
                oracle, dataset.subset("train")[:3], CostParams.table1(), GRID
            )

    def test_equals_ite_with_oracle_estimators(self, small_population):
        dataset, oracle = small_population
        cp = CostParams(c_pm=20.0, c_overhaul=207.0, c_failure=104.0)
        population = dataset.subset("test")
        direct = prescribe_oracle(oracle, population, cp, GRID)
        eo, ef = oracle_pair(oracle)
        via_ite = prescribe_ite(eo, ef, population, cp, GRID)
        assert {p.policy for p in direct} == {"oracle"}
        assert {p.policy for p in via_ite} == {"oracle-ite"}
        for a, b in zip(direct, via_ite):
            assert a.prescribed_t == b.prescribed_t
            assert a.estimated_cost == pytest.approx(b.estimated_cost, abs=1e-9)

    def test_cheaper_pm_never_lowers_frequency(self, small_population):
        dataset, oracle = small_population
        population = dataset.subset("test")[:100]
        ids = [c.id for c in population]
        pres = prescribe_oracle(oracle, population, CostParams.table1(), GRID)
        overhauls = oracle.overhaul_curves(ids, GRID.points)
        failures = oracle.failure_curves(ids, GRID.points)
        for i, p in enumerate(pres):
            free_pm = CostCurve(
                grid=GRID, costs=207.0 * overhauls[i] + 104.0 * failures[i]
            )
            assert free_pm.argmin_t >= p.prescribed_t

    def test_scale_invariance(self, small_population):
        dataset, oracle = small_population
        population = dataset.subset("test")
        cp = CostParams(c_pm=20.0, c_overhaul=207.0, c_failure=104.0)
        scaled = CostParams(
            c_pm=cp.c_pm * 3.7, c_overhaul=cp.c_overhaul * 3.7, c_failure=cp.c_failure * 3.7
        )
        base = prescribe_oracle(oracle, population, cp, GRID)
        alt = prescribe_oracle(oracle, population, scaled, GRID)
        assert [p.prescribed_t for p in base] == [p.prescribed_t for p in alt]

    def test_deterministic(self, small_population):
        dataset, oracle = small_population
        population = dataset.subset("test")[:20]
        cp = CostParams.table1()
        assert prescribe_oracle(oracle, population, cp, GRID) == prescribe_oracle(
            oracle, population, cp, GRID
        )
