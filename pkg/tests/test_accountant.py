import math

import numpy as np
import pytest

from dpdfd import (
    AccountingParams,
    InfeasibleBudgetError,
    PrivacyLedger,
    ValidationError,
    calibrate_sigma,
    compose,
    default_lambda_grid,
    max_iterations,
    optimal_epsilon,
    rdp_per_query,
    rdp_to_dp,
    sensitivity,
)

# Frozen from a 50-digit mpmath evaluation of the closed form at
# C=1e-3, n=10, B=256, T=1, sigma=100, delta=1e-5, lambda=32.
GOLDEN_EPS_LAMBDA_32 = 0.2278544457554359
GOLDEN_PARAMS = dict(C=1e-3, n=10, B=256, T=1, sigma=100.0, delta=1e-5)


def params(**overrides):
    merged = {**GOLDEN_PARAMS, **overrides}
    return AccountingParams(**merged)


class TestSensitivity:
    def test_unit(self):
        assert sensitivity(1.0, 1) == 2.0

    def test_sqrt_scaling(self):
        assert sensitivity(1.0, 4) == 4.0

    def test_derived_value(self):
        assert sensitivity(1e-3, 10) == pytest.approx(6.32455532e-3, rel=1e-8)

    def test_domain(self):
        with pytest.raises(ValidationError):
            sensitivity(0.0, 3)
        with pytest.raises(ValidationError):
            sensitivity(1.0, 0)


class TestPerQuery:
    def test_plug_in(self):
        p = params(C=1.0, n=1, sigma=2.0)
        assert rdp_per_query(p, 2.0) == pytest.approx(1.0)

    def test_decays_in_sigma(self):
        values = [rdp_per_query(params(sigma=s), 8.0) for s in (10, 100, 1000, 10000)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-10

    def test_derived_value(self):
        assert rdp_per_query(params(), 32.0) == pytest.approx(6.4e-8, rel=1e-12)

    def test_lambda_domain(self):
        with pytest.raises(ValidationError):
            rdp_per_query(params(), 1.0)

    def test_modes_differ_by_c_squared(self):
        p = params()
        paper = rdp_per_query(p, 4.0, mode="paper")
        consistent = rdp_per_query(p, 4.0, mode="consistent")
        assert paper / consistent == pytest.approx(p.C**2, rel=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            rdp_per_query(params(), 4.0, mode="exact")


class TestCompose:
    def test_zero_iterations(self):
        assert compose(0.5, 256, 0) == 0.0

    def test_derived_value(self):
        assert compose(6.4e-8, 256, 1) == pytest.approx(1.6384e-5, rel=1e-12)

    def test_doubling_linearity(self):
        assert compose(0.37, 8, 10) * 2 == compose(0.37, 8, 20)

    def test_additivity_exact(self):
        for pq, b, t1, t2 in [(1e-7, 256, 3, 9), (0.25, 16, 100, 1), (3.5, 1, 0, 5)]:
            assert compose(pq, b, t1) + compose(pq, b, t2) == compose(pq, b, t1 + t2)


class TestConversion:
    def test_golden_value(self):
        eps_rdp = compose(rdp_per_query(params(), 32.0), 256, 1)
        assert rdp_to_dp(eps_rdp, 32.0, 1e-5) == pytest.approx(GOLDEN_EPS_LAMBDA_32, rel=1e-12)

    def test_matches_high_precision_on_random_inputs(self):
        import mpmath as mp

        mp.mp.dps = 40
        rng = np.random.default_rng(0)
        for _ in range(1000):
            eps_rdp = float(rng.uniform(0, 10))
            lam = float(rng.uniform(1.0001, 2000))
            delta = float(10 ** rng.uniform(-12, -0.05))
            got = rdp_to_dp(eps_rdp, lam, delta)
            lam_mp, delta_mp = mp.mpf(lam), mp.mpf(delta)
            want = mp.mpf(eps_rdp) + mp.log((lam_mp - 1) / lam_mp) - (
                mp.log(delta_mp) + mp.log(lam_mp)) / (lam_mp - 1)
            assert abs(got - float(want)) <= 1e-10 * max(1.0, abs(float(want)))

    def test_monotone_decrease_toward_zero_at_zero_rdp(self):
        # strictly decreasing toward 0 over the practical range; at very
        # large lambda the closed form dips below 0, which is exactly
        # what the reporting clamp handles
        grid = [2.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0]
        values = [rdp_to_dp(0.0, lam, 1e-5) for lam in grid]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert 0 < values[-1] < 1e-3
        assert rdp_to_dp(0.0, 10**6, 1e-5) < 0

    def test_domain_enforcement(self):
        with pytest.raises(ValidationError):
            rdp_to_dp(0.1, 1.0, 1e-5)
        with pytest.raises(ValidationError):
            rdp_to_dp(0.1, 32.0, 1.0)
        with pytest.raises(ValidationError):
            rdp_to_dp(-0.1, 32.0, 1e-5)


class TestOptimalEpsilon:
    def test_single_point_grid_is_exact(self):
        report = optimal_epsilon(params(), lambda_grid=[32.0])
        assert report.epsilon == pytest.approx(GOLDEN_EPS_LAMBDA_32, rel=1e-12)
        assert report.lambda_star == 32.0
        assert not report.clamped

    def test_superset_never_increases(self):
        base = [8.0, 32.0, 128.0]
        small = optimal_epsilon(params(T=50), lambda_grid=base).epsilon
        big = optimal_epsilon(params(T=50), lambda_grid=base + [2.0, 512.0, 64.0]).epsilon
        assert big <= small + 1e-15

    def test_default_grid_finite_with_reported_minimizer(self):
        p = params(C=5e-3, sigma=100.0, delta=1e-5)
        report = optimal_epsilon(p)
        assert math.isfinite(report.epsilon)
        assert report.epsilon > 0
        assert report.lambda_star > 1
        # independent scan over the same documented grid
        coeff = 2 * p.C**2 * p.n / p.sigma**2
        brute = min(
            rdp_to_dp(coeff * p.B * p.T * lam, lam, p.delta) for lam in default_lambda_grid()
        )
        assert report.epsilon <= brute + 1e-15

    def test_zero_iterations_spend_nothing(self):
        assert optimal_epsilon(params(T=0)).epsilon == 0.0

    def test_clamp_flag(self):
        # with delta close to 1 the conversion dips below zero at big lambda
        report = optimal_epsilon(params(C=1e-9, delta=0.99))
        assert report.epsilon == 0.0
        assert report.clamped

    def test_empty_grid_rejected(self):
        with pytest.raises(ValidationError):
            optimal_epsilon(params(), lambda_grid=[])
        with pytest.raises(ValidationError):
            optimal_epsilon(params(), lambda_grid=[0.5, 2.0])


class TestMonotonicityLaws:
    def test_randomized_parameter_grid(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            c = float(10 ** rng.uniform(-4, -1))
            n = int(rng.integers(1, 20))
            b = int(rng.integers(1, 512))
            t = int(rng.integers(1, 2000))
            sigma = float(10 ** rng.uniform(0.5, 3))
            delta = float(10 ** rng.uniform(-8, -2))
            base = AccountingParams(C=c, n=n, B=b, T=t, sigma=sigma, delta=delta)
            eps = optimal_epsilon(base).epsilon

            assert optimal_epsilon(params(
                C=c, n=n, B=b, T=t + 7, sigma=sigma, delta=delta)).epsilon >= eps - 1e-12
            assert optimal_epsilon(params(
                C=c, n=n, B=b + 32, T=t, sigma=sigma, delta=delta)).epsilon >= eps - 1e-12
            assert optimal_epsilon(params(
                C=c * 2, n=n, B=b, T=t, sigma=sigma, delta=delta)).epsilon >= eps - 1e-12
            assert optimal_epsilon(params(
                C=c, n=n + 3, B=b, T=t, sigma=sigma, delta=delta)).epsilon >= eps - 1e-12
            assert optimal_epsilon(params(
                C=c, n=n, B=b, T=t, sigma=sigma * 2, delta=delta)).epsilon <= eps + 1e-12


class TestCalibrateSigma:
    def test_self_consistency(self):
        p = params(sigma=50.0, T=100)
        target = optimal_epsilon(p).epsilon
        sigma = calibrate_sigma(target, p.C, p.n, p.B, p.T, p.delta)
        achieved = optimal_epsilon(params(sigma=sigma, T=100)).epsilon
        assert achieved <= target
        assert sigma <= 50.0 * (1 + 1e-3)

    def test_huge_target_returns_lower_bound(self):
        sigma = calibrate_sigma(1e9, 1e-3, 10, 1, 1, 1e-5, sigma_low=1e-6)
        assert sigma == 1e-6

    def test_bracket_descends_below_initial_guess(self):
        # the answer must not get stuck near the first feasible probe
        target = 1e6
        sigma = calibrate_sigma(target, 1e-3, 10, 256, 1, 1e-5, sigma_low=1e-6)
        assert sigma < 1e-2
        achieved = optimal_epsilon(
            AccountingParams(C=1e-3, n=10, B=256, T=1, sigma=sigma, delta=1e-5)
        ).epsilon
        assert achieved <= target

    def test_halving_target_never_decreases_sigma(self):
        target = 0.5
        s1 = calibrate_sigma(target, 1e-3, 10, 256, 100, 1e-5)
        s2 = calibrate_sigma(target / 2, 1e-3, 10, 256, 100, 1e-5)
        assert s2 >= s1

    def test_guarantee_holds(self):
        for target in (0.1, 1.0, 7.5):
            sigma = calibrate_sigma(target, 5e-3, 3, 64, 500, 1e-5)
            achieved = optimal_epsilon(
                AccountingParams(C=5e-3, n=3, B=64, T=500, sigma=sigma, delta=1e-5)
            ).epsilon
            assert achieved <= target

    def test_domain(self):
        with pytest.raises(ValidationError):
            calibrate_sigma(0.0, 1e-3, 10, 256, 1, 1e-5)


class TestMaxIterations:
    def test_infeasible_budget(self):
        with pytest.raises(InfeasibleBudgetError):
            max_iterations(1e-4, 1e-5, 1.0, 1.0, 10, 256)

    def test_matches_linear_search(self):
        budget, delta, sigma, c, n, b = 0.8, 1e-5, 10.0, 5e-3, 3, 64

        def eps(t):
            return optimal_epsilon(
                AccountingParams(C=c, n=n, B=b, T=t, sigma=sigma, delta=delta)
            ).epsilon

        got = max_iterations(budget, delta, sigma, c, n, b)
        t = 1
        while eps(t + 1) <= budget:
            t += 1
        assert got == t
        assert eps(got) <= budget < eps(got + 1)

    def test_doubling_sigma_never_decreases_t(self):
        t1 = max_iterations(1.0, 1e-5, 10.0, 5e-3, 3, 16)
        t2 = max_iterations(1.0, 1e-5, 20.0, 5e-3, 3, 16)
        assert t2 >= t1


class TestLedger:
    def test_charges_accumulate(self):
        ledger = PrivacyLedger.for_mechanism(5e-3, 3, 10.0)
        assert ledger.epsilon(1e-5).epsilon == 0.0
        ledger.charge(16)
        e1 = ledger.epsilon(1e-5).epsilon
        ledger.charge(16)
        e2 = ledger.epsilon(1e-5).epsilon
        assert 0 < e1 <= e2

    def test_matches_optimal_epsilon(self):
        ledger = PrivacyLedger.for_mechanism(5e-3, 3, 10.0)
        ledger.charge(16 * 100)
        direct = optimal_epsilon(
            AccountingParams(C=5e-3, n=3, B=16, T=100, sigma=10.0, delta=1e-5)
        )
        assert ledger.epsilon(1e-5).epsilon == direct.epsilon

    def test_grid_validation(self):
        with pytest.raises(ValidationError):
            PrivacyLedger(per_query_rdp_coefficient=1.0, lambda_grid=(1.0, 2.0))
        with pytest.raises(ValidationError):
            PrivacyLedger(per_query_rdp_coefficient=-1.0)

    def test_negative_charge_rejected(self):
        ledger = PrivacyLedger.for_mechanism(5e-3, 3, 10.0)
        with pytest.raises(ValidationError):
            ledger.charge(-1)


class TestPurity:
    def test_same_inputs_same_outputs(self):
        p = params(T=123)
        a = optimal_epsilon(p)
        b = optimal_epsilon(p)
        assert a == b

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            AccountingParams(C=-1.0, n=10, B=1, T=1, sigma=1.0, delta=1e-5)
        with pytest.raises(ValidationError):
            AccountingParams(C=1.0, n=0, B=1, T=1, sigma=1.0, delta=1e-5)
        with pytest.raises(ValidationError):
            AccountingParams(C=1.0, n=1, B=1, T=1, sigma=0.0, delta=1e-5)
        with pytest.raises(ValidationError):
            AccountingParams(C=1.0, n=1, B=1, T=1, sigma=1.0, delta=1.5)
