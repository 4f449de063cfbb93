import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from waterfall_opt.errors import EstimationError, FormatError
from waterfall_opt.valuation import (BetaParams, DrawKey, EstimationConfig, Provenance, ValuationMatrix,
                                     estimate_matrix, fit_beta, global_params, load_matrix, sample_valuation,
                                     save_matrix)

BENCHMARK_BETAS = [(1, 6), (2, 6), (10, 5), (6, 1)]
# vectors below hold per-impression money; x1000 gives eCPM, /scale gives [0, 1]
UNIT = EstimationConfig(price_multiplier=1.0, price_scale=1.0)


class TestFitBeta:
    def test_uniform_moments(self):
        # two-point sample with mean 1/2 and variance 1/12
        d = np.sqrt(1 / 12)
        bp = fit_beta([0.5 - d, 0.5 + d])
        assert bp.alpha == pytest.approx(1.0) and bp.beta == pytest.approx(1.0)

    def test_beta_6_1_recovery(self):
        x = np.random.default_rng(2021).beta(6, 1, 100_000)
        bp = fit_beta(x)
        assert 5.7 <= bp.alpha <= 6.3 and 0.95 <= bp.beta <= 1.05

    @pytest.mark.parametrize("a,b", BENCHMARK_BETAS)
    @pytest.mark.parametrize("n", [10_000, 100_000])
    def test_benchmark_betas_within_five_percent(self, a, b, n):
        bp = fit_beta(np.random.default_rng(n + a).beta(a, b, n))
        assert abs(bp.alpha / a - 1) < 0.05 and abs(bp.beta / b - 1) < 0.05

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @pytest.mark.parametrize("a,b", BENCHMARK_BETAS)
    def test_matches_scipy_moment_fit(self, a, b):
        x = np.random.default_rng(5).beta(a, b, 5000)
        ra, rb, _, _ = stats.beta.fit(x, method="MM", floc=0, fscale=1)
        bp = fit_beta(x)
        assert bp.alpha == pytest.approx(ra, rel=1e-3) and bp.beta == pytest.approx(rb, rel=1e-3)

    def test_constant_samples_hit_variance_floor(self):
        bp = fit_beta([0.3] * 50)
        assert np.isfinite(bp.alpha) and np.isfinite(bp.beta)
        assert bp.mean == pytest.approx(0.3, abs=1e-6)
        # m(1-m)/floor - 1
        assert bp.alpha + bp.beta == pytest.approx(0.21 / 1e-6 - 1)

    def test_non_positive_concentration_falls_back(self):
        # a floor above m(1-m) forces nu <= 0
        bp = fit_beta([0.4, 0.6], EstimationConfig(variance_floor=0.3))
        assert bp.alpha + bp.beta == pytest.approx(2.0)
        assert bp.mean == pytest.approx(0.5)

    def test_clamps_support(self):
        bp = fit_beta([0.0, 1.0, 0.5, 0.5])
        assert bp.alpha > 0 and bp.beta > 0

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_beta([])

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_always_positive(self, xs):
        bp = fit_beta(xs)
        assert bp.alpha > 0 and bp.beta > 0


class TestGlobalParams:
    def test_single_user_equals_direct(self):
        v = {("u1", "G"): np.array([0.2, 0.4, 0.35, 0.1])}
        g = global_params(v, "G", UNIT)
        d = fit_beta(v[("u1", "G")])
        assert (g.alpha, g.beta, g.provenance) == (pytest.approx(d.alpha), pytest.approx(d.beta), Provenance.GLOBAL)

    def test_duplicate_users_invariant(self):
        s = np.array([0.2, 0.4, 0.35, 0.1])
        one = global_params({("a", "G"): s}, "G", UNIT)
        two = global_params({("a", "G"): s, ("b", "G"): s.copy()}, "G", UNIT)
        assert two.alpha == pytest.approx(one.alpha) and two.beta == pytest.approx(one.beta)

    def test_pooled_oracle(self):
        gen = np.random.default_rng(9)
        v = {(f"u{i}", "G"): gen.beta(2, 5, gen.integers(1, 30)) for i in range(40)}
        pooled = np.concatenate([v[k] for k in sorted(v)])
        m, var = pooled.mean(), pooled.var()
        nu = m * (1 - m) / var - 1
        g = global_params(v, "G", UNIT)
        assert g.alpha == pytest.approx(m * nu) and g.beta == pytest.approx((1 - m) * nu)

    def test_no_samples(self):
        with pytest.raises(EstimationError):
            global_params({("u", "F"): np.array([0.1])}, "G", UNIT)


def _vectors():
    gen = np.random.default_rng(4)
    v = {}
    # rich user: all four networks; pooled user: 3 other networks; sparse user: one network
    for k in "GFUA":
        v[("rich", k)] = gen.beta(2, 6, 40) * 0.03
    for k in "FUA":
        v[("pooler", k)] = gen.beta(3, 3, 20) * 0.03
    v[("sparse", "G")] = gen.beta(1, 4, 10) * 0.03
    return v


class TestEstimateMatrix:
    def test_provenance_paths(self):
        v = _vectors()
        m = estimate_matrix(v, ["rich", "pooler", "sparse", "newbie"], list("GFUA"))
        prov = {(u, k): m.params(u, k).provenance for u in m.users for k in m.networks}
        assert all(prov[("rich", k)] == Provenance.DIRECT for k in "GFUA")
        assert prov[("pooler", "G")] == Provenance.POOLED
        assert prov[("sparse", "G")] == Provenance.DIRECT
        assert all(prov[("sparse", k)] == Provenance.GLOBAL for k in "FUA")
        assert all(prov[("newbie", k)] == Provenance.GLOBAL for k in "GFUA")
        for (u, k), p in prov.items():
            assert (p == Provenance.DIRECT) == ((u, k) in v)

    def test_pooled_fit_concatenates_other_networks(self):
        v = _vectors()
        cfg = EstimationConfig()
        m = estimate_matrix(v, ["pooler"], list("GFUA"), cfg)
        raw = np.concatenate([v[("pooler", k)] for k in "FUA"]) * 1000 / m.price_scale
        expect = fit_beta(raw, cfg)
        assert m.params("pooler", "G").alpha == pytest.approx(expect.alpha)

    def test_pooling_threshold(self):
        v = _vectors()
        m = estimate_matrix(v, ["pooler"], list("GFUA"), EstimationConfig(min_other_networks=4))
        assert m.params("pooler", "G").provenance == Provenance.GLOBAL

    def test_complete_and_positive(self):
        m = estimate_matrix(_vectors(), ["rich", "pooler", "sparse"], list("GFUA"))
        assert m.shape == (3, 4) and np.all(m.alpha > 0) and np.all(m.beta > 0)

    def test_price_scale_default(self):
        v = _vectors()
        peak = max(x.max() for x in v.values())
        assert estimate_matrix(v, ["rich"], ["G"]).price_scale == pytest.approx(peak * 1000 * 1.05)

    def test_sample_free_network(self):
        with pytest.raises(EstimationError):
            estimate_matrix(_vectors(), ["sparse"], ["G", "Z"])

    @pytest.mark.parametrize("threads", [2, 3, 8])
    def test_thread_partitioning_is_exact(self, threads):
        v = _vectors()
        users = ["rich", "pooler", "sparse", "newbie", "x", "y", "z"]
        a = estimate_matrix(v, users, list("GFUA"))
        b = estimate_matrix(v, users, list("GFUA"), threads=threads)
        assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.provenance, b.provenance)

    def test_user_order_independent(self):
        v = _vectors()
        a = estimate_matrix(v, ["rich", "pooler", "sparse"], list("GFUA"))
        b = estimate_matrix(v, ["sparse", "rich", "pooler"], list("GFUA"))
        for u in a.users:
            assert a.params(u, "G") == b.params(u, "G")

    def test_matrix_is_read_only(self):
        m = estimate_matrix(_vectors(), ["rich"], ["G"])
        with pytest.raises(ValueError):
            m.alpha[0, 0] = 1.0


class TestSampling:
    def matrix(self, a=6.0, b=1.0, scale=30.0):
        return ValuationMatrix.homogeneous(["u"], {"G": BetaParams(a, b)}, scale)

    def test_concentrated_upper_support(self):
        v = sample_valuation(self.matrix(1e6, 1), DrawKey("u", "G"))
        assert v == pytest.approx(30, rel=1e-3)

    def test_same_key_same_value(self):
        m = self.matrix()
        assert sample_valuation(m, DrawKey("u", "G", 2), seed=5) == sample_valuation(m, DrawKey("u", "G", 2), seed=5)
        assert sample_valuation(m, DrawKey("u", "G", 2), seed=5) != sample_valuation(m, DrawKey("u", "G", 3), seed=5)

    def test_zeta_is_multiplicative(self):
        m = self.matrix()
        for occ in range(20):
            base = sample_valuation(m, DrawKey("u", "G", occ), seed=1)
            assert sample_valuation(m, DrawKey("u", "G", occ), {"G": 1.1}, seed=1) == pytest.approx(1.1 * base,
                                                                                                   rel=1e-15)

    @pytest.mark.parametrize("a,b", BENCHMARK_BETAS)
    def test_sampling_mean(self, a, b):
        users = [f"u{i}" for i in range(100_000)]
        m = ValuationMatrix.homogeneous(users, {"G": BetaParams(a, b)}, 30.0)
        x = m.unit_draws(np.arange(len(users)), 0, 0, 0, seed=11) * 30 * 1.2
        assert x.mean() == pytest.approx(1.2 * 30 * a / (a + b), rel=0.01)
        assert stats.kstest(x / 36, stats.beta(a, b).cdf).pvalue > 1e-3

    def test_unknown_cell(self):
        with pytest.raises(KeyError):
            sample_valuation(self.matrix(), DrawKey("nobody", "G"))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        m = estimate_matrix(_vectors(), ["rich", "pooler", "sparse", "ünï"], list("GFUA"))
        save_matrix(m, tmp_path / "m.wfm", seed=3, cfg=EstimationConfig())
        back = load_matrix(tmp_path / "m.wfm")
        assert back.users == m.users and back.networks == m.networks and back.price_scale == m.price_scale
        assert np.array_equal(back.alpha, m.alpha) and np.array_equal(back.provenance, m.provenance)
        import json
        meta = json.loads((tmp_path / "m.wfm.json").read_text())
        assert meta["seed"] == 3 and len(meta["config_hash"]) == 16
        assert sum(meta["provenance_counts"].values()) == 16

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"nope")
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "bad")
        m = estimate_matrix(_vectors(), ["rich"], ["G"])
        save_matrix(m, tmp_path / "m.wfm")
        (tmp_path / "m.wfm").write_bytes((tmp_path / "m.wfm").read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "m.wfm")


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from(["a", "b", "c"]), st.sampled_from("GFUA")),
                       st.lists(st.floats(0.001, 0.05), min_size=1, max_size=8), min_size=1))
def test_provenance_invariants(cells):
    v = {k: np.array(x) for k, x in cells.items()}
    nets = sorted({k for _, k in v})
    m = estimate_matrix(v, ["a", "b", "c", "d"], nets)
    for u in m.users:
        have = {k for (uu, k) in v if uu == u}
        for k in nets:
            p = m.params(u, k).provenance
            assert (p == Provenance.DIRECT) == (k in have)
            if p == Provenance.POOLED:
                assert len(have - {k}) >= 3
