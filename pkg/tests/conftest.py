import math
import os
import tempfile

# Must be set before `config` is imported by any test module.
os.environ.setdefault("DICKA_LOG_FILE", os.path.join(tempfile.gettempdir(), "dicka-tests.log"))

import numpy as np
import pytest

from core.bff import MomentProblem, party_letters
from core.heralding import ProtocolParams, herald


def chsh_problem() -> MomentProblem:
    """Minimize -CHSH over two parties, written with outcome-0 projectors."""
    a0, a1, b0, b1 = party_letters(2)
    objective = {
        (a0, b0): -4.0, (a0, b1): -4.0, (a1, b0): -4.0, (a1, b1): 4.0,
        (a0,): 4.0, (b0,): 4.0,
    }
    return MomentProblem(letters=(a0, a1, b0, b1), objective=objective, constant=-2.0)


@pytest.fixture
def ideal_params() -> ProtocolParams:
    return ProtocolParams(parties=4, q=0.95, transmissivity=1.0, eta_d=1.0, eta_e=1.0, p_dc=0.0, p_dc_e=0.0)


@pytest.fixture
def lossy_params() -> ProtocolParams:
    return ProtocolParams(parties=4, q=0.9, distance_km=5.0, eta_d=0.95, eta_e=0.97, p_dc=1e-3, p_dc_e=1e-3)


@pytest.fixture
def ideal_rho(ideal_params):
    return herald(ideal_params).rho_x


@pytest.fixture
def qubit_strategy():
    """Tsirelson-optimal CHSH strategy on |phi+>, as outcome-0 projectors."""
    def plus(theta: float) -> np.ndarray:
        observable = np.array([[math.cos(theta), math.sin(theta)], [math.sin(theta), -math.cos(theta)]])
        return (np.eye(2) + observable) / 2

    a0, a1, b0, b1 = party_letters(2)
    eye = np.eye(2)
    operators = {
        a0: np.kron(plus(0.0), eye), a1: np.kron(plus(math.pi / 2), eye),
        b0: np.kron(eye, plus(math.pi / 4)), b1: np.kron(eye, plus(-math.pi / 4)),
    }
    state = np.array([1.0, 0.0, 0.0, 1.0]) / math.sqrt(2)
    return operators, state
