import math

import numpy as np
import pytest

from core.heralding import ProtocolParams
from core.keyrate import (CLASSICAL_WIN, TSIRELSON_WIN, KeyRateReport, bisect_threshold, direct_transmission_rate,
                          ec_cost, entropy_bound_parity_chsh, key_rate, max_secure_distance, optimize_q,
                          parity_chsh_win, scenario1_pipeline, scenario2_pipeline, search_displacements)
from core.measurements import behavior, scenario1_config, product_behavior
from core.npa import EntropyBound
from core.sdp import SdpSolution, SolverError


def report(raw: float) -> KeyRateReport:
    return KeyRateReport(p_success=1.0, p_win=None, entropy_bound=max(raw, 0.0), ec_cost=0.0, raw_rate=raw,
                         provenance="parity-CHSH")


def test_ideal_state_reaches_tsirelson_winning_probability(ideal_rho):
    assert parity_chsh_win(behavior(ideal_rho, scenario1_config(4))) == pytest.approx(TSIRELSON_WIN, abs=1e-9)


def test_uniform_behavior_wins_half_the_time():
    uniform = [(np.array([0.5, 0.5]), np.array([0.5, 0.5]))] * 4
    assert parity_chsh_win(product_behavior(4, uniform)) == pytest.approx(0.5)


def test_entropy_bound_endpoints():
    assert entropy_bound_parity_chsh(CLASSICAL_WIN) == 0.0
    assert entropy_bound_parity_chsh(0.6) == 0.0
    assert entropy_bound_parity_chsh(TSIRELSON_WIN) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        entropy_bound_parity_chsh(1.5)


def test_entropy_bound_interior_value():
    p = 0.5 + 0.5 * math.sqrt(0.44)
    expected = 1 + p * math.log2(p) + (1 - p) * math.log2(1 - p)
    assert entropy_bound_parity_chsh(0.8) == pytest.approx(expected, abs=1e-12)
    assert entropy_bound_parity_chsh(0.8) == pytest.approx(0.346, abs=1e-3)


def test_entropy_bound_is_monotone():
    values = [entropy_bound_parity_chsh(p) for p in np.linspace(0.75, TSIRELSON_WIN, 20)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_ec_cost():
    anticorrelated = np.zeros((2, 2, 2))
    anticorrelated[0, 1, 0] = anticorrelated[1, 0, 1] = 0.5
    assert ec_cost(anticorrelated) == pytest.approx(0.0)
    assert ec_cost(np.full((2, 2, 2), 1 / 8)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ec_cost(np.array([0.5, 0.5]))


def test_key_rate_floors_at_zero():
    rate = key_rate(0.01, 0.2, 0.5)
    assert rate.raw_rate == pytest.approx(-0.003)
    assert rate.key_rate == 0.0
    assert rate.as_dict()["key_rate"] == 0.0
    with pytest.raises(ValueError):
        key_rate(float("nan"), 0.2, 0.1)


def test_scenario1_ideal_rate_is_success_probability(ideal_params):
    result = scenario1_pipeline(ideal_params)
    q = ideal_params.q
    assert result.p_win == pytest.approx(TSIRELSON_WIN, abs=1e-9)
    assert result.ec_cost == pytest.approx(0.0, abs=1e-12)
    assert result.key_rate == pytest.approx(q ** 2 * (1 - q) ** 2 / 2, rel=1e-9)


def test_scenario1_positive_at_high_efficiency_and_zero_below_threshold():
    assert scenario1_pipeline(ProtocolParams(parties=4, eta_e=0.97)).key_rate > 0
    assert scenario1_pipeline(ProtocolParams(parties=4, eta_e=0.90)).key_rate == 0.0


def test_scenario1_six_parties_ideal():
    params = ProtocolParams(parties=6, transmissivity=1.0, eta_e=1.0, p_dc=0.0, p_dc_e=0.0)
    result = scenario1_pipeline(params)
    assert result.key_rate == pytest.approx(result.p_success, rel=1e-9)


def test_direct_transmission_baseline():
    assert direct_transmission_rate(4, 0.0, 1.0, 0.0).key_rate == pytest.approx(1.0, abs=1e-9)
    assert 0.3 < direct_transmission_rate(4, 0.0, 0.97, 1e-6).key_rate < 0.45
    assert direct_transmission_rate(4, 1.0, 0.97, 1e-6).key_rate == 0.0
    with pytest.raises(ValueError):
        direct_transmission_rate(4, -1.0, 0.97, 1e-6)


def test_max_secure_distance_on_linear_rate():
    distance = max_secure_distance(lambda d: report(5.0 - d), resolution=0.01)
    assert 4.99 <= distance < 5.0
    assert max_secure_distance(lambda d: report(-1.0)) == 0.0


def test_max_secure_distance_respects_search_limit():
    assert max_secure_distance(lambda d: report(1.0), limit=64.0) == 64.0


def test_bisect_threshold():
    value = bisect_threshold(lambda x: x - 0.3, 0.0, 1.0, tol=1e-4)
    assert 0.3 <= value <= 0.3 + 1e-4
    with pytest.raises(ValueError, match="No sign change"):
        bisect_threshold(lambda x: -1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        bisect_threshold(lambda x: x, 1.0, 0.0)


def test_optimize_q_prefers_first_of_ties():
    params = ProtocolParams(parties=4)
    q, best = optimize_q(params, [0.6, 0.7, 0.8, 0.9], lambda p: report(-abs(p.q - 0.7)))
    assert q == 0.7
    assert best.raw_rate == pytest.approx(0.0)
    q, _ = optimize_q(params, [0.6, 0.7], lambda p: report(0.1))
    assert q == 0.6
    with pytest.raises(ValueError):
        optimize_q(params, [], lambda p: report(0.1))


def test_displacement_search_finds_smooth_maximum():
    params = ProtocolParams(parties=4)
    target = np.array([0.3, -0.2, 0.5, 0.1, -0.4])
    search = search_displacements(params, objective=lambda v: report(-float(np.sum((v - target) ** 2))),
                                  samples=4, restarts=1, seed=3)
    np.testing.assert_allclose(search.displacements, target, atol=1e-3)
    assert search.evaluations > 5


def test_displacement_search_is_seeded():
    params = ProtocolParams(parties=4)
    objective = lambda v: report(-float(np.sum(np.abs(v))))
    first = search_displacements(params, objective=objective, samples=3, restarts=1, seed=7, max_iter=50)
    second = search_displacements(params, objective=objective, samples=3, restarts=1, seed=7, max_iter=50)
    np.testing.assert_array_equal(first.displacements, second.displacements)


def test_displacement_search_validates_inputs():
    params = ProtocolParams(parties=4)
    with pytest.raises(ValueError):
        search_displacements(params, objective=lambda v: report(0.0), alpha_max=0.0)
    with pytest.raises(ValueError):
        search_displacements(params, objective=lambda v: report(0.0), initial=[0.1, 0.2])


@pytest.mark.slow
def test_scenario2_certifies_a_key_at_97_percent_efficiency():
    params = ProtocolParams(parties=4, q=0.95, eta_e=0.97, p_dc=1e-6)
    search = search_displacements(params, samples=8, restarts=2, seed=0, m=4)
    assert search.report.key_rate > 0
    assert search.report.provenance == "BFF-SDP"
    assert search.report.key_rate < scenario1_pipeline(params).key_rate


@pytest.mark.slow
def test_scenario2_finds_no_key_at_95_percent_efficiency():
    params = ProtocolParams(parties=4, q=0.95, eta_e=0.95, p_dc=1e-6)
    search = search_displacements(params, samples=8, restarts=1, seed=0, m=4)
    assert search.report.key_rate == 0.0


@pytest.mark.slow
def test_scenario1_reaches_tens_of_kilometers():
    def rate(distance: float) -> KeyRateReport:
        return scenario1_pipeline(ProtocolParams(parties=4, q=0.95, eta_e=0.97, distance_km=distance))

    assert rate(10.0).key_rate > 0
    assert 10.0 <= max_secure_distance(rate) <= 100.0
    rates = [rate(d).key_rate for d in (0.0, 5.0, 10.0)]
    assert rates[0] > rates[1] > rates[2]


@pytest.mark.slow
def test_more_parties_lower_the_rate():
    four = scenario1_pipeline(ProtocolParams(parties=4, eta_e=0.97))
    six = scenario1_pipeline(ProtocolParams(parties=6, eta_e=0.97))
    assert 0 < six.key_rate < four.key_rate


# --- Displacement search scoring ---

def failed_solve() -> SolverError:
    solution = SdpSolution("max-iterations", 0.0, 0.0, np.zeros(1), np.zeros((1, 1)), 1.0, 1.0, 1.0, 200)
    return SolverError("SDP solve failed with status max-iterations", solution)


def sdp_report(entropy_raw: float, ec: float = 0.1) -> KeyRateReport:
    return key_rate(1.0, min(max(entropy_raw, 0.0), 1.0), ec, "BFF-SDP", entropy_raw=entropy_raw)


def test_search_score_uses_the_unclamped_bound():
    rate = key_rate(0.5, 0.0, 0.2, "BFF-SDP", entropy_raw=-0.1)
    assert rate.raw_rate == pytest.approx(-0.1)
    assert rate.search_score == pytest.approx(-0.15)
    assert key_rate(0.5, 0.3, 0.2).search_score == pytest.approx(0.05)


def test_displacement_search_follows_the_unclamped_bound():
    params = ProtocolParams(parties=4)
    target = np.full(5, -1.0)
    search = search_displacements(params, objective=lambda v: sdp_report(-float(np.sum((v - target) ** 2))),
                                  initial=np.full(5, 0.5), samples=0, restarts=1)
    np.testing.assert_allclose(search.displacements, target, atol=1e-3)
    assert search.report.key_rate == 0.0
    assert search.report.search_score == pytest.approx(-0.1, abs=1e-5)


def test_displacement_search_skips_failed_solves():
    params = ProtocolParams(parties=4)
    target = np.array([-0.3, -0.2, -0.5, -0.1, -0.4])

    def objective(v: np.ndarray) -> KeyRateReport:
        if v[0] > 0:
            raise failed_solve()
        return report(-float(np.sum((v - target) ** 2)))

    search = search_displacements(params, objective=objective, initial=np.full(5, -0.5), samples=4, restarts=1,
                                  seed=1)
    assert search.displacements[0] <= 0
    np.testing.assert_allclose(search.displacements, target, atol=1e-2)


def test_displacement_search_raises_when_every_solve_fails():
    def objective(v: np.ndarray) -> KeyRateReport:
        raise failed_solve()

    with pytest.raises(SolverError):
        search_displacements(ProtocolParams(parties=4), objective=objective, samples=2, restarts=1, max_iter=5)
    with pytest.raises(ValueError):
        search_displacements(ProtocolParams(parties=4), objective=lambda v: report(0.0), samples=0)


def test_symmetric_start_keeps_swappable_bobs_equal():
    params = ProtocolParams(parties=4)

    def objective(v: np.ndarray) -> KeyRateReport:
        # Invariant under swapping the last two displacements.
        spread = float(np.sum((v[:3] - 0.2) ** 2) + (v[3] + v[4] - 0.8) ** 2 + 0.5 * (v[3] - v[4]) ** 2)
        return report(-spread)

    search = search_displacements(params, objective=objective, initial=[0.1, 0.1, 0.1, 0.7, 0.7], samples=0,
                                  restarts=1)
    assert search.displacements[3] == pytest.approx(search.displacements[4], abs=1e-3)


@pytest.mark.parametrize("certified, provenance", [(True, "BFF-SDP"), (False, "BFF-SDP-uncertified")])
def test_scenario2_provenance_records_certification(monkeypatch, certified, provenance):
    bound = EntropyBound(value=0.5, raw=0.5, solutions=(), values=(0.5,), certified=certified)
    monkeypatch.setattr("core.keyrate.bff_entropy_details", lambda *args, **kwargs: bound)
    result = scenario2_pipeline(ProtocolParams(parties=4, eta_e=0.99), [0.3, 0.4, -0.4, 0.6, 0.6], m=2)
    assert result.provenance == provenance
    assert result.entropy_bound == 0.5
    assert result.entropy_raw == 0.5


# --- Physical trends ---

def test_scenario1_rate_falls_with_dark_counts_and_rises_with_efficiency():
    by_pdc = [scenario1_pipeline(ProtocolParams(parties=4, p_dc=p)).key_rate for p in (0.0, 1e-6, 1e-4, 1e-3)]
    assert all(b <= a + 1e-15 for a, b in zip(by_pdc, by_pdc[1:]))
    assert by_pdc[0] > by_pdc[-1]
    by_eta = [scenario1_pipeline(ProtocolParams(parties=4, eta_e=e)).key_rate for e in (0.93, 0.95, 0.97, 0.99)]
    assert all(b >= a - 1e-15 for a, b in zip(by_eta, by_eta[1:]))
    assert by_eta[-1] > by_eta[0]


def test_scenario1_threshold_at_fixed_q():
    def rate_at(eta_e: float) -> float:
        return scenario1_pipeline(ProtocolParams(parties=4, q=0.95, eta_e=eta_e, p_dc=1e-6)).raw_rate

    assert 0.92 <= bisect_threshold(rate_at, 0.85, 1.0, tol=1e-3) <= 0.94


@pytest.mark.slow
def test_low_q_trades_distance_for_rate():
    def rate(q: float):
        return lambda d: scenario1_pipeline(ProtocolParams(parties=4, q=q, eta_e=0.97, p_dc=1e-6, distance_km=d))

    assert rate(0.6)(0.0).key_rate > rate(0.95)(0.0).key_rate
    assert max_secure_distance(rate(0.95)) > max_secure_distance(rate(0.6))
