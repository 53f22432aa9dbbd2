import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy import integrate

from hecop import density as dn
from hecop import matmodel, rootsys
from hecop.density import ChamberDensity, Variant
from hecop.errors import InvalidArgumentError, UnreliableEstimateError
from hecop.rootsys import Family, RootCase

A2, A3 = RootCase(Family.A, 2), RootCase(Family.A, 3)
B2, C2, D2 = RootCase(Family.B, 2), RootCase(Family.C, 2), RootCase(Family.D, 2)

# constants computed independently in 30-digit mpmath from the product formulas
C_B = {2: 0.10610329539459689, 3: 0.00070548484371378855, 4: 1.1168560807135998e-7}
C_D = {2: 0.15915494309189534, 3: 0.0052911363278534141, 4: 5.8634944237463988e-6}


def interior(case, rng, scale=1.0):
    while True:
        p = rootsys.chamber_project(case, rng.normal(scale=scale, size=case.rank)).coords
        if rootsys.in_open_chamber(case, p):
            return np.array(p)


class TestConstants:
    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_b_and_d_constants(self, n):
        assert math.exp(dn.norm_const_flat(RootCase(Family.B, n))) == pytest.approx(C_B[n], rel=1e-13)
        assert math.exp(dn.norm_const_flat(RootCase(Family.C, n))) == pytest.approx(C_B[n], rel=1e-13)
        assert math.exp(dn.norm_const_flat(RootCase(Family.D, n))) == pytest.approx(C_D[n], rel=1e-13)

    def test_a_prefactor(self):
        assert math.exp(dn.norm_const_flat(A2)) == pytest.approx(1 / (2 * math.pi))
        assert math.exp(dn.norm_const_flat(A3)) == pytest.approx(1 / ((2 * math.pi) ** 1.5 * 2))

    def test_large_rank_is_finite(self):
        for fam in Family:
            assert math.isfinite(dn.norm_const_flat(RootCase(fam, 64)))


class TestLogDensity:
    def test_gue_value(self):
        d = ChamberDensity(A2, 1.0, Variant.GUE)
        assert dn.log_density(d, [-1.0, 1.0]) == pytest.approx(math.log(2 / math.pi) - 1, rel=1e-14)

    def test_drift_c_small_c_limit(self):
        rng = np.random.default_rng(1)
        g = ChamberDensity(A3, 0.7, Variant.GUE)
        d = ChamberDensity(A3, 0.7, Variant.DRIFT_C, c=1e-6)
        for _ in range(10):
            x = interior(A3, rng)
            assert math.exp(dn.log_density(d, x) - dn.log_density(g, x)) == pytest.approx(1, rel=1e-4)

    def test_b_drift_uses_rho_norm(self):
        d = ChamberDensity(B2, 1.0, Variant.B_DRIFT)
        flat = ChamberDensity(B2, 1.0, Variant.B_FLAT)
        x = np.array([0.4, 1.1])
        extra = (np.log(np.sinh(x[1] - x[0]) * np.sinh(x[1] + x[0]) / (x[1] ** 2 - x[0] ** 2))
                 + np.sum(np.log(np.sinh(x) / x)))
        assert dn.log_density(d, x) - dn.log_density(flat, x) == pytest.approx(-10 / 2 + extra, rel=1e-12)

    def test_boundary_is_minus_inf(self):
        assert dn.log_density(ChamberDensity(A3, 1, Variant.GUE), [0, 0, 1]) == -math.inf
        assert dn.log_density(ChamberDensity(B2, 1, Variant.B_DRIFT), [0, 1]) == -math.inf
        assert dn.log_density(ChamberDensity(C2, 1, Variant.C_DRIFT), [1, 1]) == -math.inf
        assert dn.log_density(ChamberDensity(D2, 1, Variant.D_DRIFT), [-1, 1]) == -math.inf
        # x1 = 0 is interior for D
        assert math.isfinite(dn.log_density(ChamberDensity(D2, 1, Variant.D_DRIFT), [0, 1]))
        lam = ChamberDensity(A3, 1, Variant.DRIFT_LAMBDA, lam=(-1.0, 0.2, 0.8))
        assert dn.log_density(lam, [0.5, 0.5, 1.0]) == -math.inf

    def test_huge_arguments_do_not_overflow(self):
        d = ChamberDensity(A2, 1e4, Variant.DRIFT_C, c=1.0)
        assert math.isfinite(dn.log_density(d, [-2000.0, 2000.0]))

    def test_variant_case_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ChamberDensity(B2, 1.0, Variant.GUE)
        with pytest.raises(InvalidArgumentError):
            ChamberDensity(A3, 1.0, Variant.DRIFT_C)
        with pytest.raises(InvalidArgumentError):
            ChamberDensity(A3, 1.0, Variant.DRIFT_LAMBDA, lam=(1.0, 2.0, 3.0))
        with pytest.raises(InvalidArgumentError):
            ChamberDensity(A3, 1.0, Variant.DRIFT_LAMBDA, lam=(-1.0, -1.0, 2.0))
        with pytest.raises(InvalidArgumentError):
            ChamberDensity(A3, -1.0, Variant.GUE)

    def test_outside_chamber_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dn.log_density(ChamberDensity(A2, 1.0, Variant.GUE), [1.0, -1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 5), st.floats(0.2, 2.0), st.floats(0.1, 2.0), st.integers(0, 2**31))
    @example(5, 1.0, 0.125, 0)  # small c: the alternating sum cancels to ~1e-7 of its terms
    def test_lambda_c_rho_agree(self, n, t, c, seed):
        case = RootCase(Family.A, n)
        x = interior(case, np.random.default_rng(seed))
        a = ChamberDensity(case, t, Variant.DRIFT_C, c=c)
        b = ChamberDensity(case, t, Variant.DRIFT_LAMBDA, lam=tuple(c * rootsys.rho(case)))
        assert dn.log_density(a, x) - dn.log_density(b, x) == pytest.approx(0.0, abs=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 6), st.floats(0.2, 2.0), st.floats(0.1, 2.0), st.integers(0, 2**31))
    def test_drift_is_flat_times_weyl_product(self, n, t, c, seed):
        case = RootCase(Family.A, n)
        x = interior(case, np.random.default_rng(seed))
        d = ChamberDensity(case, t, Variant.DRIFT_C, c=c)
        g = ChamberDensity(case, t, Variant.GUE)
        lhs = dn.log_density(d, x) - dn.log_density(g, x) - rootsys.log_psi_weyl(case, c * x)
        assert lhs == pytest.approx(-c * c * rootsys.rho_norm_sq(case) * t / 2, rel=1e-10, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from([Variant.GUE, Variant.B_DRIFT, Variant.C_DRIFT, Variant.D_DRIFT, Variant.B_FLAT]),
           st.integers(2, 4), st.integers(0, 2**31))
    def test_weyl_invariance(self, variant, n, seed):
        fam = {Variant.GUE: Family.A, Variant.B_DRIFT: Family.B, Variant.B_FLAT: Family.B,
               Variant.C_DRIFT: Family.C, Variant.D_DRIFT: Family.D}[variant]
        case = RootCase(fam, n)
        rng = np.random.default_rng(seed)
        x = interior(case, rng)
        d = ChamberDensity(case, 0.8, variant)
        for y in rootsys.weyl_images(case, x)[rng.integers(0, case.weyl_order, 5)]:
            back = rootsys.chamber_project(case, y).coords
            assert dn.log_density(d, back) == pytest.approx(dn.log_density(d, x), rel=1e-12)


def quad_mass(d, lo_of_x2):
    f = lambda x1, x2: math.exp(dn.log_density(d, [x1, x2])) if x1 < x2 else 0.0
    hi = 12 * math.sqrt(d.t) + 3 * d.t * float(np.abs(d.drift).max())
    val, _ = integrate.dblquad(f, 0, hi, lo_of_x2, lambda x2: x2, epsabs=1e-10)
    return val


class TestQuadratureNormalisation:
    """Rank-2 laws integrate to one by deterministic quadrature."""

    @pytest.mark.parametrize("variant,case", [(Variant.B_FLAT, B2), (Variant.B_DRIFT, B2),
                                              (Variant.C_DRIFT, C2)])
    def test_b_and_c(self, variant, case):
        assert quad_mass(ChamberDensity(case, 0.5, variant), lambda x2: 0.0) == pytest.approx(1, abs=1e-6)

    @pytest.mark.parametrize("variant", [Variant.D_FLAT, Variant.D_DRIFT])
    def test_d(self, variant):
        assert quad_mass(ChamberDensity(D2, 0.5, variant), lambda x2: -x2) == pytest.approx(1, abs=1e-6)

    def test_a(self):
        d = ChamberDensity(A2, 0.6, Variant.DRIFT_C, c=1.3)
        f = lambda x1, x2: math.exp(dn.log_density(d, [x1, x2])) if x1 < x2 else 0.0
        val, _ = integrate.dblquad(f, -10, 10, -10, lambda x2: x2, epsabs=1e-10)
        assert val == pytest.approx(1, abs=1e-6)


class TestMonteCarlo:
    @pytest.mark.parametrize("d", [
        ChamberDensity(A2, 1.0, Variant.GUE),
        ChamberDensity(A3, 0.5, Variant.DRIFT_C, c=1.0),
        ChamberDensity(A3, 0.7, Variant.DRIFT_LAMBDA, lam=(-1.0, 0.3, 0.7)),
        ChamberDensity(RootCase(Family.D, 3), 0.5, Variant.D_DRIFT),
    ], ids=lambda d: d.variant.value)
    def test_normalisation(self, d):
        est = dn.mc_normalization(d, draws=50_000, seed=3)
        assert abs(est.value - 1) < max(0.02, 4 * est.stderr)
        assert est.ess > 1000

    def test_deterministic(self):
        d = ChamberDensity(B2, 0.5, Variant.B_DRIFT)
        assert dn.mc_normalization(d, draws=5000, seed=9) == dn.mc_normalization(d, draws=5000, seed=9)

    def test_bad_proposal_is_unreliable(self):
        d = ChamberDensity(A3, 0.5, Variant.DRIFT_C, c=1.0)
        with pytest.raises(UnreliableEstimateError):
            dn.mc_normalization(d, proposal_sigma=1e-3, draws=2000, seed=0)

    def test_draws_minimum(self):
        with pytest.raises(InvalidArgumentError):
            dn.mc_normalization(ChamberDensity(A2, 1.0, Variant.GUE), draws=10)


class TestKsHarness:
    @pytest.fixture(autouse=True)
    def _cache(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HECOP_CACHE_DIR", str(tmp_path))

    def test_matrix_model_passes(self):
        d = ChamberDensity(A3, 0.5, Variant.DRIFT_C, c=1.0)
        r = dn.density_vs_sample_ks(d, matmodel.hermitian_spectra(3, 0.5, 1.0, seed=11, draws=1000))
        assert r.passed_1
        assert r.tabulation_error < r.critical_1 / 5

    def test_wrong_time_fails(self):
        d = ChamberDensity(A3, 0.75, Variant.DRIFT_C, c=1.0)
        r = dn.density_vs_sample_ks(d, matmodel.hermitian_spectra(3, 0.5, 1.0, seed=11, draws=1000))
        assert not r.passed_1

    def test_skew_models_pass(self):
        s = matmodel.skew_spectra(Family.B, 2, 0.5, seed=4, draws=800)
        assert dn.density_vs_sample_ks(ChamberDensity(B2, 0.5, Variant.B_DRIFT), s).passed_1
        s = matmodel.skew_spectra(Family.D, 3, 0.5, seed=4, draws=800)
        d3 = ChamberDensity(RootCase(Family.D, 3), 0.5, Variant.D_DRIFT)
        assert dn.density_vs_sample_ks(d3, s).passed_1

    def test_cache_round_trip(self, tmp_path):
        d = ChamberDensity(B2, 0.5, Variant.B_FLAT)
        first = dn.tabulate_marginals(d, draws=20_000)
        assert len(list(tmp_path.glob("marginals-*.npz"))) == 1
        again = dn.tabulate_marginals(d, draws=20_000)
        np.testing.assert_array_equal(first.nodes, again.nodes)

    def test_sample_size_minimum(self):
        d = ChamberDensity(A2, 1.0, Variant.GUE)
        with pytest.raises(InvalidArgumentError):
            dn.density_vs_sample_ks(d, np.tile([-1.0, 1.0], (10, 1)))
