import itertools
import math

import numpy as np
import pytest

from conftest import chsh_problem
from core.bff import MomentProblem, party_letters
from core.npa import (IDENTITY, adjoint, canonical, class_key, is_self_adjoint, level_monomials, moment_matrix,
                      monomial_basis, operator, operator_norms, parse_level, projector, relax,
                      strategy_moment_matrix, support_monomials)
from core.sdp import solve_sdp

A0, A1, B0, B1 = party_letters(2)


def test_canonical_sorts_commuting_parties():
    assert canonical((B0, A0)) == (A0, B0)
    assert canonical((B1, A1, B0)) == (A1, B1, B0)


def test_canonical_projector_algebra():
    a0_one = projector(0, 0, outcome=1)
    assert canonical((A0, A0)) == (A0,)
    assert canonical((A0, a0_one)) is None
    assert canonical((A0, A1, A0)) == (A0, A1, A0)


@pytest.mark.parametrize("word", list(itertools.product([A0, A1, B0, B1], repeat=3)))
def test_canonical_is_confluent(word):
    # Any reordering across parties reaches the same normal form, and the form is a fixed point.
    form = canonical(word)
    swapped = tuple(sorted(word, key=lambda l: -l.party))
    assert canonical(swapped) == form
    if form is not None:
        assert canonical(form) == form


def test_eve_letters_do_not_commute_with_their_adjoint():
    z = operator(2, 0, 0)
    word = (z.dagger(), z)
    assert canonical(word) == word
    assert adjoint((z,)) == (z.dagger(),)
    assert is_self_adjoint(word)
    assert not is_self_adjoint((z, z))
    assert class_key((z,)) == class_key((z.dagger(),))


def test_parse_level():
    assert parse_level(2) == (2, ())
    assert parse_level("1+AB+AZ") == (1, ("AB", "AZ"))
    with pytest.raises(ValueError, match="Unknown extra-monomial"):
        parse_level("1+XY")
    with pytest.raises(ValueError):
        parse_level("AB")


def test_level_monomials():
    depth, basis = level_monomials([A0, A1, B0, B1], "1+AB")
    assert depth == 1
    assert basis[0] == IDENTITY
    assert len(basis) == 1 + 4 + 4
    assert len(monomial_basis([A0, A1, B0, B1], 2)) == 1 + 4 + 8


def test_support_monomials_add_missing_words():
    basis = monomial_basis([A0, A1, B0, B1], 1)
    extended = support_monomials(basis, [(A0, A1, B0)])
    spec = moment_matrix(extended)
    assert class_key((A0, A1, B0)) in spec.classes


def test_moment_matrix_fixes_identity_and_checks_equalities():
    basis = monomial_basis([A0, A1, B0, B1], 1)
    spec = moment_matrix(basis, [((A0,), 0.5), ((A0, B0), 0.25)])
    assert spec.fixed[IDENTITY] == 1.0
    assert spec.fixed[(A0,)] == 0.5
    with pytest.raises(ValueError, match="Conflicting"):
        moment_matrix(basis, [((A0,), 0.5), ((A0, A0), 0.4)])
    with pytest.raises(ValueError):
        moment_matrix(basis, [((A0, projector(0, 0, outcome=1)), 0.3)])
    spec = moment_matrix(basis, [((A0, A1, B0, B1), 0.1)])
    assert spec.dropped == [(A0, A1, B0, B1)]


def test_strategy_moment_matrix_is_consistent(qubit_strategy):
    operators, state = qubit_strategy
    basis = monomial_basis([A0, A1, B0, B1], 2)
    gamma = strategy_moment_matrix(basis, operators, state)
    assert np.linalg.eigvalsh((gamma + gamma.conj().T) / 2)[0] >= -1e-12
    spec = moment_matrix(basis)
    for key, cells in spec.classes.items():
        values = [gamma[i, j] if spec.cells[(i, j)] == key else np.conj(gamma[i, j]) for i, j in cells]
        np.testing.assert_allclose(values, values[0], atol=1e-12)
    for (i, j), word in spec.cells.items():
        if word is None:
            assert abs(gamma[i, j]) < 1e-12


@pytest.mark.parametrize("real_moments", [True, False])
def test_chsh_relaxation_reaches_tsirelson_bound(real_moments):
    relaxation = relax(chsh_problem(), "1+AB", real_moments=real_moments)
    assert relaxation.real_moments is real_moments
    solution = solve_sdp(relaxation.sdp)
    assert solution.status == "optimal"
    assert -solution.dual_objective == pytest.approx(2 * math.sqrt(2), abs=1e-5)
    assert -solution.primal_objective == pytest.approx(2 * math.sqrt(2), abs=1e-5)


def test_realified_blocks_double_in_size():
    real = relax(chsh_problem(), 1, real_moments=True)
    complex_ = relax(chsh_problem(), 1, real_moments=False)
    assert complex_.sdp.block_sizes[0] == 2 * real.sdp.block_sizes[0]


def test_nonquantum_behavior_is_detected():
    # PR box: perfect correlation except for x = y = 1, uniform marginals.
    equalities = [((A0,), 0.5), ((A1,), 0.5), ((B0,), 0.5), ((B1,), 0.5),
                  ((A0, B0), 0.5), ((A0, B1), 0.5), ((A1, B0), 0.5), ((A1, B1), 0.0)]
    problem = MomentProblem(letters=(A0, A1, B0, B1), objective={(A0, A1): 0.0}, equalities=tuple(equalities))
    solution = solve_sdp(relax(problem, 1).sdp)
    assert solution.status in ("infeasible", "max-iterations")


def test_complex_objective_is_rejected():
    with pytest.raises(ValueError):
        MomentProblem(letters=(A0, A1), objective={(A0, A1): 1j})


def test_cross_products_span_every_party_group():
    letters = party_letters(3)
    a0, _, b0, _, c = letters
    _, basis = level_monomials(letters, "1+AB")
    assert len(basis) == 1 + 5 + 8 + 4
    assert (a0, b0, c) in basis


def test_operator_norms_come_from_localizing_constraints():
    z = operator(2, 0, 0)
    problem = MomentProblem(letters=(A0, B0, z, z.dagger()), objective={(A0,): 1.0},
                            inequalities=({(): 4.0, (z.dagger(), z): -1.0},))
    norms = operator_norms(problem)
    assert norms[A0] == 1.0
    assert norms[z] == norms[z.dagger()] == 2.0
    relaxation = relax(problem, 1)
    assert relaxation.bounds.shape == (relaxation.sdp.m,)
    assert relaxation.bounds.max() == 4.0
    free = MomentProblem(letters=(A0, z, z.dagger()), objective={(A0,): 1.0})
    assert operator_norms(free)[z] == np.inf


def test_slack_turns_equalities_into_windows():
    equalities = [((A0,), 0.5), ((B0,), 0.5), ((A0, B0), 0.4)]
    problem = MomentProblem(letters=(A0, A1, B0, B1), objective={(A1, B1): 1.0}, equalities=tuple(equalities))
    exact = relax(problem, "1+AB")
    widened = relax(problem, "1+AB", slack=1e-3)
    assert widened.slack == 1e-3
    assert widened.sdp.block_sizes[:-1] == exact.sdp.block_sizes
    assert widened.sdp.block_sizes[-1] == 2 * len(equalities)
    assert widened.sdp.m == exact.sdp.m + len(equalities)
    tight, loose = solve_sdp(exact.sdp), solve_sdp(widened.sdp)
    assert loose.dual_objective <= tight.dual_objective + 1e-6
    with pytest.raises(ValueError):
        relax(problem, 1, slack=-1.0)
