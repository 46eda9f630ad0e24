import json

import numpy as np
import pytest

from mvlss.boosting import BoostedModel, FitConfig, dirichlet_mle, fit, fit_offsets, stabilize
from mvlss.boosting.offsets import refine_mle
from mvlss.diff import grad_hess_batch
from mvlss.data import Dataset, SimulationSpec, simulate
from mvlss.distributions import DistributionSpec, Family, covariance, link_apply, nll_batch, sample
from mvlss.errors import DataError, FeatureMismatch, SingularCovariance

GC = Family.GAUSSIAN_CHOLESKY
QUICK = FitConfig(n_rounds=20, learning_rate=0.1, max_depth=3, min_child_weight=20.0, stabilization="none",
                  early_stopping_rounds=0)


@pytest.fixture(scope="module")
def gaussian_sim():
    return simulate(SimulationSpec(GC, 2000, seed=5, noise_features=1))[0]


class TestOffsets:
    def test_standard_normal(self):
        spec = DistributionSpec(GC, 2)
        y = sample(spec, np.zeros(5), 10_000, seed=0)
        raw = fit_offsets(spec, y)
        assert np.max(np.abs(raw[:2])) < 0.05
        assert np.max(np.abs(covariance(spec, raw) - np.eye(2))) < 0.05

    def test_matches_sample_moments(self):
        spec = DistributionSpec(GC, 3)
        y = np.random.default_rng(1).normal(size=(500, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0.2, -0.3, 2]])
        raw = fit_offsets(spec, y)
        np.testing.assert_allclose(covariance(spec, raw), np.cov(y, rowvar=False, bias=True), atol=1e-10)

    def test_duplicate_columns(self):
        y = np.random.default_rng(2).normal(size=(100, 1))
        with pytest.raises(SingularCovariance):
            fit_offsets(DistributionSpec(GC, 2), np.hstack([y, y]))

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            fit_offsets(DistributionSpec(GC, 3), np.zeros((3, 3)))

    def test_dirichlet_recovery(self):
        alpha = np.array([2.0, 3.0, 4.0])
        y = sample(DistributionSpec(Family.DIRICHLET, 3), np.log(alpha), 10_000, seed=4)
        est = dirichlet_mle(y)
        assert np.all(np.abs(est / alpha - 1) < 0.05)
        np.testing.assert_allclose(fit_offsets(DistributionSpec(Family.DIRICHLET, 3), y), np.log(est))

    @pytest.mark.parametrize("spec", [DistributionSpec(Family.STUDENT_T, 2), DistributionSpec(Family.GAUSSIAN_LOWRANK, 3, 1)])
    def test_refined_offsets_improve_on_start(self, spec):
        rng = np.random.default_rng(6)
        y = rng.standard_t(5, size=(2000, spec.dim)) @ np.triu(np.ones((spec.dim, spec.dim)))
        raw = fit_offsets(spec, y)
        start = raw + 0.3
        assert nll_batch(spec, np.tile(raw, (2000, 1)), y).mean() <= nll_batch(spec, np.tile(start, (2000, 1)), y).mean()
        eta, f, _ = refine_mle(spec, y, raw)
        assert f == pytest.approx(nll_batch(spec, np.tile(raw, (2000, 1)), y).mean(), abs=1e-9)
        assert np.max(np.abs(grad_hess_batch(spec, np.tile(raw, (2000, 1)), y).grad.mean(axis=0))) < 1e-5

    def test_student_recovers_nu(self):
        spec = DistributionSpec(Family.STUDENT_T, 2)
        y = sample(spec, np.r_[0, 0, 0, 0, 0, np.log(4.0)], 20_000, seed=8)
        nu = link_apply(spec, fit_offsets(spec, y)).nu
        assert 4.5 < nu < 7.5


class TestStabilize:
    def test_zero_column(self):
        g, h = stabilize(np.zeros(5), np.zeros(5), "mad")
        assert np.all(g == 0) and np.all(h == 0)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(0)
        g, h = rng.normal(size=50), rng.uniform(1, 2, 50)
        a = stabilize(g, h, "mad")
        b = stabilize(1000 * g, h, "mad")
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12)

    def test_unit_mad_after(self):
        rng = np.random.default_rng(1)
        for scale in (1e-3, 1.0, 1e4):
            g = rng.normal(size=101) * scale
            out, _ = stabilize(g, np.ones(101), "mad")
            mad = np.median(np.abs(out - np.median(out)))
            assert abs(mad - 1.0) < 1e-12

    def test_l2_and_none(self):
        g = np.array([3.0, 4.0])
        out, _ = stabilize(g, np.ones(2), "l2")
        np.testing.assert_allclose(out, g / np.sqrt(12.5))
        assert stabilize(g, np.ones(2), "none")[0] is g
        with pytest.raises(ValueError):
            stabilize(g, g, "max")


class TestConfig:
    def test_defaults(self):
        c = FitConfig()
        assert (c.learning_rate, c.max_depth, c.n_rounds, c.early_stopping_rounds, c.stabilization) == (0.1, 6, 500, 2, "mad")

    @pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(max_depth=11), dict(subsample=0.0), dict(colsample=1.1),
                                     dict(gamma=-1), dict(min_child_weight=-1), dict(n_rounds=0), dict(stabilization="x")])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            FitConfig(**bad)

    def test_round_trip(self):
        c = FitConfig(learning_rate=0.3, subsample=0.7)
        assert FitConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ValueError):
            FitConfig.from_dict({"eta": 0.1})


class TestFit:
    def test_determinism(self, gaussian_sim):
        cfg = QUICK.replace(subsample=0.7, colsample=0.5, n_rounds=10)
        a = fit(gaussian_sim, DistributionSpec(GC, 3), cfg).dumps()
        b = fit(gaussian_sim, DistributionSpec(GC, 3), cfg).dumps()
        assert a == b
        c = fit(gaussian_sim, DistributionSpec(GC, 3), cfg.replace(seed=1)).dumps()
        assert a != c

    def test_monotone_train_nll(self, gaussian_sim):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK.replace(learning_rate=0.3, min_child_weight=0))
        assert np.all(np.diff(m.train_nll) <= 1e-10)

    def test_improves_on_intercept(self, gaussian_sim):
        train, test = gaussian_sim.subset(np.arange(1500)), gaussian_sim.subset(np.arange(1500, 2000))
        bivariate = [0, 1]
        train, test = train.select_responses(bivariate), test.select_responses(bivariate)
        spec = DistributionSpec(GC, 2)
        m = fit(train, spec, QUICK.replace(n_rounds=60))
        intercept = nll_batch(spec, np.tile(m.offsets, (test.n, 1)), test.responses).mean()
        assert m.nll(test).mean() < intercept

    def test_zero_features(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(300, 2))
        ds = Dataset(np.zeros((300, 0)), y, [], ["a", "b"])
        spec = DistributionSpec(GC, 2)
        m = fit(ds, spec, QUICK)
        np.testing.assert_allclose(m.predict_raw(np.zeros((3, 0))), np.tile(m.offsets, (3, 1)), atol=1e-12)
        assert m.train_nll[-1] == pytest.approx(m.train_nll[0], abs=1e-9)

    def test_constant_features(self):
        y = np.random.default_rng(1).normal(size=(100, 2))
        ds = Dataset(np.ones((100, 2)), y, ["c1", "c2"], ["a", "b"])
        m = fit(ds, DistributionSpec(GC, 2), QUICK)
        assert all(t.n_nodes == 1 for trees in m.rounds for t in trees)

    def test_zero_rounds_predicts_offsets(self, gaussian_sim):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK)
        np.testing.assert_array_equal(m.predict_raw(gaussian_sim.features[:4], n_rounds=0), np.tile(m.offsets, (4, 1)))

    def test_bookkeeping(self, gaussian_sim):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK)
        assert m.nll(gaussian_sim).mean() == pytest.approx(m.train_nll[-1], abs=1e-9)

    def test_early_stopping(self, gaussian_sim):
        train, valid = gaussian_sim.subset(np.arange(1000)), gaussian_sim.subset(np.arange(1000, 2000))
        cfg = QUICK.replace(n_rounds=400, learning_rate=0.5, min_child_weight=0, max_depth=6, early_stopping_rounds=2)
        m = fit(train, DistributionSpec(GC, 3), cfg, valid)
        assert len(m.rounds) < 400
        assert len(m.rounds) - m.best_round == 2
        assert m.valid_nll[m.best_round] == min(m.valid_nll)
        assert m.nll(valid).mean() == pytest.approx(m.valid_nll[m.best_round], abs=1e-9)

    @pytest.mark.parametrize("spec", [DistributionSpec(Family.GAUSSIAN_LOWRANK, 3, 2), DistributionSpec(Family.STUDENT_T, 3)])
    def test_other_families_train(self, gaussian_sim, spec):
        m = fit(gaussian_sim, spec, QUICK.replace(n_rounds=10))
        assert m.train_nll[-1] < m.train_nll[0]

    def test_stabilized_modes_run(self, gaussian_sim):
        for mode in ("mad", "l2"):
            m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK.replace(n_rounds=5, stabilization=mode))
            assert np.isfinite(m.train_nll[-1])

    def test_feature_mismatch(self, gaussian_sim):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK.replace(n_rounds=2))
        with pytest.raises(FeatureMismatch):
            m.predict_raw(np.zeros((2, 5)))

    def test_serialization_round_trip(self, gaussian_sim, tmp_path):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK.replace(n_rounds=5))
        path = tmp_path / "model.json"
        m.save(path)
        back = BoostedModel.load(path)
        assert back.dumps() == m.dumps()
        np.testing.assert_array_equal(back.predict_raw(gaussian_sim.features), m.predict_raw(gaussian_sim.features))
        doc = json.loads(path.read_text())
        assert doc["schema"] == "mvlss.model/1" and doc["feature_names"] == ["x", "noise_1"]

    def test_predict_dist(self, gaussian_sim):
        m = fit(gaussian_sim, DistributionSpec(GC, 3), QUICK.replace(n_rounds=5))
        pred = m.predict_dist(gaussian_sim.features[:10])
        assert pred.covariance.shape == (10, 3, 3)
        np.testing.assert_array_equal(pred.mean, pred.params.mu)
