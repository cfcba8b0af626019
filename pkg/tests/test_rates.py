"""Closed-form rate checks against oracles recomputed inline with math.*."""

import math

import pytest
from hypothesis import given, strategies as st

from cowqkd.rates import (
    FiniteSizeInputs,
    McCounts,
    RateInputs,
    binary_entropy,
    compare,
    composite_efficiency,
    count_interval,
    dark_probability_per_gate,
    gate_mean_photon,
    p_backflash,
    p_err,
    p_learn,
    p_sec,
    p_sec_finite,
    p_sift_holdoff,
    p_sift_simple,
)

MU, ETA, PD = 0.4, 0.2, 3.2e-8
N0, THOLD = 31.25e6, 10e-6


class TestSiftAndError:
    def test_sift_simple_oracle(self):
        want = 1.0 - math.exp(-MU * ETA) * (1.0 - PD)
        assert p_sift_simple(MU, ETA, PD) == pytest.approx(want)
        assert p_sift_simple(MU, ETA, PD) == pytest.approx(0.0768837, abs=1e-6)

    def test_sift_zero_signal_is_dark_only(self):
        assert p_sift_simple(0.0, 0.5, 1e-3) == pytest.approx(1e-3)

    def test_holdoff_oracle(self):
        q = 1.0 - math.exp(-MU * ETA) * (1.0 - PD)
        want = q / (1.0 + N0 * q * THOLD)
        got = p_sift_holdoff(MU, ETA, PD, N0, THOLD)
        assert got == pytest.approx(want)
        assert got == pytest.approx(0.0030721, abs=1e-6)

    def test_holdoff_zero_matches_simple(self):
        assert p_sift_holdoff(MU, ETA, PD, N0, 0.0) == p_sift_simple(MU, ETA, PD)

    @given(st.floats(min_value=0.0, max_value=1e-4),
           st.floats(min_value=0.0, max_value=1e-4))
    def test_holdoff_monotone_decreasing(self, t1, t2):
        lo, hi = sorted([t1, t2])
        assert p_sift_holdoff(MU, ETA, PD, N0, hi) <= p_sift_holdoff(MU, ETA, PD, N0, lo)

    def test_err_oracle(self):
        q = 1.0 - math.exp(-MU * ETA) * (1.0 - PD)
        want = math.exp(-MU * ETA) * (1.0 - PD) * PD / q
        assert p_err(MU, ETA, PD, q) == pytest.approx(want)

    def test_err_no_darks_no_errors(self):
        assert p_err(MU, ETA, 0.0, p_sift_simple(MU, ETA, 0.0)) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            p_sift_simple(-0.1, ETA, PD)
        with pytest.raises(ValueError):
            p_sift_simple(MU, ETA, 1.5)
        with pytest.raises(ValueError):
            p_sift_holdoff(MU, ETA, PD, -1.0, THOLD)
        with pytest.raises(ValueError):
            p_err(MU, ETA, PD, 0.0)


class TestLeakage:
    def test_backflash_reference_counts(self):
        assert p_backflash(1598, 18000) == pytest.approx(1598 / 18000)
        assert round(p_backflash(1598, 18000), 5) == 0.08878

    def test_backflash_validation(self):
        with pytest.raises(ValueError):
            p_backflash(5, 0)
        with pytest.raises(ValueError):
            p_backflash(11, 10)
        with pytest.raises(ValueError):
            p_backflash(-1, 10)

    def test_learn_is_product(self):
        assert p_learn(0.08878, 0.0030721) == pytest.approx(0.08878 * 0.0030721)

    def test_learn_validation(self):
        with pytest.raises(ValueError):
            p_learn(1.2, 0.5)


class TestEntropy:
    def test_endpoints_and_max(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0
        assert binary_entropy(0.5) == 1.0

    def test_frozen_value(self):
        e = 0.11
        want = -e * math.log2(e) - (1 - e) * math.log2(1 - e)
        assert binary_entropy(0.11) == pytest.approx(want)
        assert binary_entropy(0.11) == pytest.approx(0.499916, abs=1e-6)

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_symmetry(self, e):
        assert binary_entropy(e) == pytest.approx(binary_entropy(1.0 - e), abs=1e-12)

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_bounded_by_one(self, e):
        assert 0.0 <= binary_entropy(e) <= 1.0

    @given(st.floats(min_value=1e-6, max_value=0.5), st.floats(min_value=1e-6, max_value=0.5))
    def test_monotone_below_half(self, a, b):
        lo, hi = sorted([a, b])
        assert binary_entropy(lo) <= binary_entropy(hi) + 1e-12

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            binary_entropy(-0.01)


class TestSecureRate:
    def test_zero_qber_ratio(self):
        rate, insecure = p_sec(0.003, 0.0888, 0.0)
        assert not insecure
        assert rate / 0.003 == pytest.approx(1.0 - 0.0888)

    def test_oracle_with_qber(self):
        e, pb, f, ps = 0.005, 0.089, 1.15, 0.0030721
        h = -e * math.log2(e) - (1 - e) * math.log2(1 - e)
        want = ps * (1.0 - pb - f * h)
        rate, insecure = p_sec(ps, pb, e, f)
        assert rate == pytest.approx(want)
        assert not insecure

    def test_clamps_to_zero_and_flags(self):
        rate, insecure = p_sec(0.01, 0.1, 0.25)
        assert rate == 0.0
        assert insecure

    def test_inefficiency_below_one_rejected(self):
        with pytest.raises(ValueError):
            p_sec(0.01, 0.1, 0.01, reconciliation_inefficiency=0.9)

    def test_finite_default_leak_matches_asymptotic_shape(self):
        e, ps = 0.02, 0.5
        h = -e * math.log2(e) - (1 - e) * math.log2(1 - e)
        rate, insecure = p_sec_finite(ps, e)
        want = ps * (1.0 - 1.15 * h - 1e-10 - 1e-10)
        assert rate == pytest.approx(want)
        assert not insecure

    def test_finite_leak_override(self):
        rate, _ = p_sec_finite(1.0, 0.3, FiniteSizeInputs(leak_ec=0.25))
        assert rate == pytest.approx(1.0 - 0.25 - 2e-10)

    def test_finite_clamp(self):
        rate, insecure = p_sec_finite(1.0, 0.0, FiniteSizeInputs(leak_ec=2.0))
        assert rate == 0.0
        assert insecure

    def test_finite_negative_terms_rejected(self):
        with pytest.raises(ValueError):
            p_sec_finite(1.0, 0.0, FiniteSizeInputs(beta_ec=-1e-3))


class TestConversions:
    def test_dark_probability_per_gate(self):
        assert dark_probability_per_gate(100.0, 4000) == pytest.approx(100.0 * 4000e-12)

    def test_composite_efficiency(self):
        assert composite_efficiency(0.5, 0.2) == 0.1

    def test_gate_mean_photon(self):
        assert gate_mean_photon(0.2, 2) == pytest.approx(0.4)


class TestCountInterval:
    def test_against_brute_force_cdf(self):
        n, p = 40, 0.3
        pmf = [math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(n + 1)]
        lo = next(i for i in range(n + 1) if sum(pmf[: i + 1]) >= 0.00135)
        hi = next(i for i in range(n + 1) if sum(pmf[: i + 1]) >= 0.99865)
        assert count_interval(n, p) == (lo, hi)

    def test_degenerate(self):
        assert count_interval(0, 0.3) == (0, 0)
        assert count_interval(100, 0.0) == (0, 0)

    def test_p_capped_at_one(self):
        lo, hi = count_interval(10, 1.5)
        assert lo == hi == 10

    def test_contains_mean_at_large_n(self):
        lo, hi = count_interval(10_000, 0.1)
        assert lo < 1000 < hi


class TestCompare:
    def make_inputs(self, **kw):
        return RateInputs(mu=MU, eta=ETA, p_dark=PD, **kw)

    def expected_sift(self):
        q = 1.0 - math.exp(-MU * ETA) * (1.0 - PD)
        return q / (1.0 + N0 * q * THOLD)

    def test_consistent_counts_pass(self):
        n = 1_000_000
        sift = self.expected_sift()
        mc = McCounts(n_frames=n, n_sift=round(n * sift), n_err=0,
                      n_retained=18000, n_eve_backflash=1598,
                      n_eve_backflash_blocks=round(n * 0.0888 * sift), n_frames_covered=n)
        report = compare(mc, self.make_inputs())
        assert report.all_ok()
        assert not report.insecure

    def test_outlier_flagged(self):
        n = 1_000_000
        mc = McCounts(n_frames=n, n_sift=round(n * self.expected_sift() * 1.5), n_err=0)
        report = compare(mc, self.make_inputs())
        assert not report.row("p_sift").ok

    def test_zero_denominator_rows_pass_vacuously(self):
        report = compare(McCounts(n_frames=0, n_sift=0, n_err=0), self.make_inputs())
        assert report.all_ok()
        assert report.row("p_sift").empirical is None

    def test_qber_override_reaches_secure_rate(self):
        base = compare(McCounts(0, 0, 0), self.make_inputs(qber=0.0))
        hot = compare(McCounts(0, 0, 0), self.make_inputs(qber=0.05))
        assert hot.row("p_sec").analytic < base.row("p_sec").analytic

    def test_insecure_flag_propagates(self):
        report = compare(McCounts(0, 0, 0), self.make_inputs(qber=0.3))
        assert report.insecure
        assert report.insecure_finite

    def test_covered_denominator_used_for_learning(self):
        n = 100_000
        sift = self.expected_sift()
        leaks = round(n // 2 * 0.0888 * sift)
        mc = McCounts(n_frames=n, n_sift=round(n * sift), n_err=0,
                      n_retained=1000, n_eve_backflash=89,
                      n_eve_backflash_blocks=leaks, n_frames_covered=n // 2)
        row = compare(mc, self.make_inputs()).row("p_learn")
        assert row.empirical == pytest.approx(leaks / (n // 2))
        assert row.ok

    def test_row_lookup_raises(self):
        report = compare(McCounts(0, 0, 0), self.make_inputs())
        with pytest.raises(KeyError):
            report.row("nonsense")

    def test_as_dict_shape(self):
        d = compare(McCounts(0, 0, 0), self.make_inputs()).as_dict()
        assert {"rows", "insecure", "insecure_finite"} <= d.keys()
        assert d["rows"][0]["name"] == "p_sift"
