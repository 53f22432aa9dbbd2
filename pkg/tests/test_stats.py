import csv
import io
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from hecop import freeprob as fp
from hecop import stats
from hecop.errors import InvalidArgumentError
from hecop.rootsys import Family, RootCase
from hecop.sde import SchemeConfig, run_ensemble
from hecop.stats import EmpiricalReport, Recipe, Transform


def report(moments, stderr, k=1.0, target=None):
    moments = np.asarray(moments, dtype=float)
    return EmpiricalReport("A_3", k, 3, 0.5, "tilde", "exp2", 0.1, moments, np.asarray(stderr, dtype=float),
                           moments if target is None else np.asarray(target, dtype=float), 4, 0)


class TestEmpiricalMoments:
    def test_pooled_equals_mean_of_replicas(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 5))
        est = stats.empirical_moments(x, Transform.IDENT, 4)
        for l in range(1, 5):
            assert est.values[l - 1] == pytest.approx(np.mean(x**l))
            per = np.mean(x**l, axis=1)
            assert est.stderr[l - 1] == pytest.approx(per.std(ddof=1) / math.sqrt(7))

    def test_transforms(self):
        x = np.array([[-1.0, 0.5]])
        np.testing.assert_allclose(stats.empirical_moments(x, Transform.ABS, 2).values, [0.75, 0.625])
        np.testing.assert_allclose(stats.empirical_moments(x, Transform.EXP2, 1).values,
                                   [(math.exp(-2) + math.e) / 2])
        assert np.all(np.isnan(stats.empirical_moments(x, "ident", 2).stderr))

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            stats.empirical_moments([], Transform.IDENT, 2)
        with pytest.raises(InvalidArgumentError):
            stats.empirical_moments([[1.0, 2.0], [1.0]], Transform.IDENT, 2)
        with pytest.raises(InvalidArgumentError):
            stats.empirical_moments([[1.0]], Transform.IDENT, 17)


class TestKs:
    def test_identical_samples(self):
        x = np.random.default_rng(1).normal(size=300)
        res = stats.ks_two_sample(x, x.copy())
        assert res.statistic == 0.0 and not res.reject_5

    def test_shifted_normals_rejected(self):
        rng = np.random.default_rng(2)
        res = stats.ks_two_sample(rng.normal(size=2000), rng.normal(0.5, 1.0, size=2000))
        assert res.reject_1 and res.pvalue < 1e-6

    def test_critical_value(self):
        assert stats.ks_critical(2000, 2000, 0.01) == pytest.approx(1.6276 * math.sqrt(1e-3), rel=1e-4)

    def test_small_samples_refused(self):
        with pytest.raises(InvalidArgumentError):
            stats.ks_two_sample(np.zeros(50), np.zeros(200))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=30),
           st.lists(st.floats(-5, 5), min_size=1, max_size=30))
    def test_statistic_matches_scipy(self, a, b):
        assert stats.ks_statistic(a, b) == pytest.approx(sps.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)

    @pytest.mark.parametrize("n,m", [(4, 4), (5, 6), (6, 6)])
    def test_exhaustive_null_distribution(self, n, m):
        # under the null every interleaving of the two samples is equally likely
        ds, reps = [], {}
        for pos in itertools.combinations(range(n + m), n):
            a = np.array(pos, dtype=float)
            b = np.array(sorted(set(range(n + m)) - set(pos)), dtype=float)
            d = round(stats.ks_statistic(a, b), 12)
            ds.append(d)
            reps.setdefault(d, (a, b))
        ds = np.array(ds)
        for d, (a, b) in reps.items():
            tail = np.mean(ds >= d - 1e-12)
            assert tail == pytest.approx(sps.ks_2samp(a, b, method="exact").pvalue, abs=1e-9)


class TestBookkeeping:
    def test_horizons(self):
        assert stats.horizon(Recipe.ADDITIVE, 0.5, 100) == pytest.approx(0.005)
        assert stats.horizon(Recipe.EXP2, 0.5, 100) == pytest.approx(0.0025)
        assert stats.horizon("abs", 1.0, 4) == pytest.approx(0.125)

    def test_default_recipe(self):
        assert stats.default_recipe(RootCase(Family.A, 3)) is Recipe.EXP2
        for fam in (Family.B, Family.C, Family.D):
            assert stats.default_recipe(RootCase(fam, 3)) is Recipe.ABS

    def test_targets(self):
        np.testing.assert_array_equal(stats.target_moments(Recipe.EXP2, 0.5, 4).values,
                                      fp.mult_bm_moments(fp.moments_delta(1.0, 4), 0.5).values)
        add = fp.free_add_convolve(fp.moments_uniform(0.5, 4), fp.moments_semicircle(2 * math.sqrt(0.5), 4))
        np.testing.assert_allclose(stats.target_moments(Recipe.ADDITIVE, 0.5, 4).values, add.values,
                                   rtol=1e-13, atol=1e-15)
        ab = stats.target_moments(Recipe.ABS, 0.5, 4).values
        np.testing.assert_allclose(ab[[1, 3]], add.values[[1, 3]], rtol=1e-13)
        assert 0 < ab[0] < math.sqrt(ab[1])

    @pytest.mark.parametrize("recipe", list(Recipe))
    def test_target_cdf_is_a_cdf(self, recipe):
        cdf = stats.target_cdf(recipe, 0.5)
        lo, hi = {Recipe.EXP2: (1e-3, 1e3), Recipe.ABS: (0.0, 10.0), Recipe.ADDITIVE: (-10.0, 10.0)}[recipe]
        y = np.linspace(lo, hi, 2001)
        v = cdf(y)
        assert np.all(np.diff(v) >= -1e-15)
        assert v[0] == pytest.approx(0.0, abs=1e-9) and v[-1] == pytest.approx(1.0, abs=1e-9)

    def test_finite_n_prediction_limits(self):
        big = stats.finite_n_exp2_moments(10**9, 1.0, 0.5, 4, steps=4000)
        np.testing.assert_allclose(big, fp.mult_bm_moments(fp.moments_delta(1.0, 4), 0.5).values, rtol=1e-6)
        # at k = 1 the finite-N correction cancels exactly
        np.testing.assert_allclose(stats.finite_n_exp2_moments(7, 1.0, 0.5, 4, steps=4000), big, rtol=1e-6)
        assert stats.finite_n_exp2_moments(50, 0.5, 0.5, 4)[3] > big[3]


class TestReports:
    def test_rel_error_and_within(self):
        r = report([1.02, 0.0, 2.0], [0.001, 0.1, 0.2], target=[1.0, 0.1, 1.0])
        np.testing.assert_allclose(r.rel_error(), [0.02, -1.0, 1.0])
        assert r.within([1]) and r.within([2], rel=0.0) and not r.within([3])
        z = report([1.0], [0.0], target=[0.0])
        assert z.rel_error()[0] == 1.0

    def test_mutual_consistency(self):
        a = report([1.0, 2.0], [0.1, 0.1])
        b = report([1.2, 2.1], [0.1, 0.1])
        ok, z = stats.mutual_consistency([a, b], [1, 2])
        assert ok and z == pytest.approx(0.2 / math.sqrt(0.02))
        c = report([2.0, 2.0], [0.1, 0.1])
        assert not stats.mutual_consistency([a, c], [1])[0]
        # two deterministic reports that differ cannot be consistent
        assert stats.mutual_consistency([report([1.0], [0.0]), report([1.1], [0.0])], [1]) == (False, math.inf)

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            report(np.ones(17), np.zeros(17))
        with pytest.raises(InvalidArgumentError):
            report([1.0], [-0.1])

    def test_csv(self, tmp_path):
        r = report([1.0, 1 / 3], [0.0, 0.25], k=math.inf)
        text = stats.reports_to_csv([r], tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_bytes().count(b"\r\n") == 3
        rows = list(csv.DictReader(io.StringIO(text)))
        assert rows[1]["k"] == "inf" and rows[1]["estimate"] == "0.33333333333333331"
        assert float(rows[1]["estimate"]) == 1 / 3

    def test_json(self):
        r = report([1.0, 2.0], [0.1, 0.2], k=math.inf)
        doc = json.loads(stats.reports_to_json([r], meta={"x": 1}))
        assert doc["schema_version"] == 1 and doc["reports"][0]["k"] == "inf"
        assert doc["reports"][0]["moments"] == [1.0, 2.0]


class TestSweep:
    def test_run_cell(self):
        case = RootCase(Family.A, 4)
        r = stats.run_cell(case, 1.0, 0.5, 3, 8, seed=3, with_ks=True)
        assert r.t_sim == pytest.approx(0.5 / 8) and r.recipe == "exp2"
        assert r.finite_n is not None and r.ks_statistic is not None
        assert np.all(r.stderr > 0)
        ens = run_ensemble(case, 1.0, r.t_sim, stats.default_scheme(4, r.t_sim), 8, seed=3)
        want = stats.empirical_moments(ens.terminal_states, Transform.EXP2, 3).values
        np.testing.assert_array_equal(r.moments, want)

    def test_infinite_k_has_zero_error_bars(self):
        r = stats.run_cell(RootCase(Family.B, 3), math.inf, 0.5, 2, 3, seed=0)
        assert r.recipe == "abs" and np.all(r.stderr == 0)

    def test_sweep_shape_and_determinism(self):
        cfg = lambda N, t: SchemeConfig(dt_base=t / 50)  # noqa: E731
        a = stats.convergence_sweep("A", [1.0, math.inf], [3, 5], 0.3, 2, 4, seed=1, cfg_for=cfg)
        b = stats.convergence_sweep("A", [1.0, math.inf], [3, 5], 0.3, 2, 4, seed=1, cfg_for=cfg)
        assert [(r.N, r.k) for r in a] == [(3, 1.0), (3, math.inf), (5, 1.0), (5, math.inf)]
        assert stats.reports_to_csv(a) == stats.reports_to_csv(b)
        trend = stats.error_trend(a, ls=(1, 2))
        assert list(trend) == [3, 5]

    def test_sweep_validation(self):
        with pytest.raises(InvalidArgumentError):
            stats.convergence_sweep("A", [0.3], [3], 0.3, 2, 2, seed=0)
        with pytest.raises(InvalidArgumentError):
            stats.convergence_sweep("A", [1.0], [5, 3], 0.3, 2, 2, seed=0)
