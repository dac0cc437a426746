import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from core.fock import fidelity, trace_distance
from core.heralding import (PATTERN_STATES, ClickPattern, ProtocolParams, branch_weights, brute_force_herald,
                            channel_transmissivity, compose_n6, herald, heralded_ensemble, ideal_pattern_state,
                            interferometer_unitary, six_party_ghz, station_click_povm)


def ideal(parties: int = 4, q: float = 0.95) -> ProtocolParams:
    return ProtocolParams(parties=parties, q=q, transmissivity=1.0, eta_d=1.0, eta_e=1.0, p_dc=0.0, p_dc_e=0.0)


def test_channel_transmissivity():
    assert channel_transmissivity(0.0) == 1.0
    assert channel_transmissivity(50.0) == pytest.approx(0.1)


def test_params_reject_odd_party_count():
    with pytest.raises(ValidationError):
        ProtocolParams(parties=5)
    with pytest.raises(ValueError):
        ProtocolParams(parties=4, q=1.2)


def test_click_pattern_parsing():
    assert ClickPattern.parse("D3,D1").detectors == (1, 3)
    assert str(ClickPattern((2, 4))) == "D2,D4"
    with pytest.raises(ValueError):
        ClickPattern((1, 1))
    with pytest.raises(ValueError):
        ClickPattern((1, 5))


def test_interferometer_is_unitary():
    u = interferometer_unitary().matrix
    np.testing.assert_allclose(u @ u.conj().T, np.eye(4), atol=1e-12)
    with pytest.raises(ValueError):
        interferometer_unitary(6)


def test_branch_weights():
    assert branch_weights(0.0) == (1.0, 0.0, 0.0, 0.0)
    p = 0.1
    both, first, second, neither = branch_weights(p)
    assert both == pytest.approx(0.81)
    assert first == second == pytest.approx(0.081)
    assert neither == pytest.approx(0.0081)


def test_station_povm_is_diagonal_click_pattern():
    povm = station_click_povm(ClickPattern((1, 2)), 0.0)
    diagonal = np.real(np.diag(povm.matrix))
    assert diagonal.sum() == pytest.approx(1.0)
    assert diagonal[povm.registry.basis_index((1, 1, 0, 0))] == 1.0


@pytest.mark.parametrize("detectors", sorted(PATTERN_STATES))
def test_ideal_herald_reproduces_table_states(detectors):
    pattern = ClickPattern(detectors)
    ensemble = heralded_ensemble(ideal(), pattern)
    assert fidelity(ensemble.rho_x, ideal_pattern_state(pattern)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", [0.5, 0.8, 0.95])
def test_ideal_success_probability(q):
    ensemble = herald(ideal(q=q))
    assert ensemble.p_success == pytest.approx(q ** 2 * (1 - q) ** 2 / 2, rel=1e-12)


def test_aggregated_patterns_scale_success_probability():
    single = herald(ideal())
    aggregated = herald(ideal().model_copy(update={"aggregate_patterns": True}))
    assert aggregated.p_success == pytest.approx(6 * single.p_success)


def test_heralded_state_is_valid(lossy_params):
    ensemble = herald(lossy_params)
    ensemble.rho_x.check()
    assert 0 < ensemble.p_success < 1
    assert fidelity(ensemble.rho_x, ideal_pattern_state()) < 1.0


def test_success_probability_decreases_with_distance():
    values = [herald(ProtocolParams(parties=4, distance_km=d, p_dc=0.0)).p_success for d in (0.0, 10.0, 20.0)]
    assert values[0] > values[1] > values[2] > 0


def test_zero_probability_event_has_no_state():
    ensemble = herald(ideal(q=1.0))
    assert ensemble.p_success == 0.0
    assert ensemble.rho_x is None


@pytest.mark.parametrize("q, eta, eta_e, p_dc", [(0.95, 1.0, 1.0, 0.0), (0.7, 0.6, 0.9, 0.05)])
def test_closed_form_matches_brute_force(q, eta, eta_e, p_dc):
    params = ProtocolParams(parties=4, q=q, transmissivity=eta, eta_e=eta_e, p_dc=p_dc)
    closed, oracle = heralded_ensemble(params), brute_force_herald(params)
    assert trace_distance(closed.rho_x, oracle.rho_x) <= 1e-10
    assert closed.p_success == pytest.approx(oracle.p_success, rel=1e-10)


@pytest.mark.slow
def test_closed_form_matches_brute_force_on_grid():
    for q, eta, eta_e, p_dc in itertools.product((0.6, 0.8, 0.95), (0.3, 0.7, 1.0), (0.85, 0.95, 1.0), (0.0, 0.01)):
        params = ProtocolParams(parties=4, q=q, transmissivity=eta, eta_e=eta_e, p_dc=p_dc)
        closed, oracle = heralded_ensemble(params), brute_force_herald(params)
        assert trace_distance(closed.rho_x, oracle.rho_x) <= 1e-10
        assert closed.p_success == pytest.approx(oracle.p_success, rel=1e-10)


def test_six_parties_single_bell_outcome():
    ensemble = compose_n6(ideal(parties=6))
    assert fidelity(ensemble.rho_x, six_party_ghz()) == pytest.approx(1.0, abs=1e-12)
    assert ensemble.bell_probability == pytest.approx(0.25)
    click = ensemble.copies[0].p_success * ensemble.copies[1].p_success
    assert ensemble.p_success == pytest.approx(click / 4)


def test_six_parties_corrected_convention_keeps_every_outcome():
    ensemble = compose_n6(ideal(parties=6), convention="corrected")
    assert fidelity(ensemble.rho_x, six_party_ghz()) == pytest.approx(1.0, abs=1e-12)
    assert ensemble.bell_probability == pytest.approx(1.0)


def test_six_parties_rejects_bad_inputs():
    with pytest.raises(ValueError):
        compose_n6(ideal(parties=4))
    with pytest.raises(ValueError):
        compose_n6(ideal(parties=6), bell_projector=np.array([1.0, 1.0, 0.0, 0.0]))


@pytest.mark.slow
def test_six_party_composition_matches_brute_force():
    params = ProtocolParams(parties=6, q=0.9, transmissivity=0.8, eta_e=0.95, p_dc=0.01)
    closed, oracle = compose_n6(params), brute_force_herald(params)
    assert trace_distance(closed.rho_x, oracle.rho_x) <= 1e-10
    assert closed.p_success == pytest.approx(oracle.p_success, rel=1e-10)


def permute_parties(matrix: np.ndarray, order) -> np.ndarray:
    n = len(order)
    axes = list(order) + [n + k for k in order]
    return matrix.reshape((2,) * (2 * n)).transpose(axes).reshape(2 ** n, 2 ** n)


def test_party_swap_maps_the_ensemble_to_itself(lossy_params):
    rho = herald(lossy_params).rho_x.matrix
    np.testing.assert_allclose(permute_parties(rho, (2, 3, 0, 1)), rho, atol=1e-12)


@pytest.mark.parametrize("detectors", sorted(PATTERN_STATES))
def test_closed_form_matches_brute_force_on_every_pattern(detectors):
    params = ProtocolParams(parties=4, q=0.8, transmissivity=0.7, eta_e=0.95, p_dc=0.01)
    pattern = ClickPattern(detectors)
    closed, oracle = heralded_ensemble(params, pattern), brute_force_herald(params, pattern)
    assert trace_distance(closed.rho_x, oracle.rho_x) <= 1e-10
    assert closed.p_success == pytest.approx(oracle.p_success, rel=1e-10)
