import numpy as np
import pytest

from conftest import chsh_problem
from core.npa import relax
from core.sdp import SdpProblem, solve_sdp
from utils.sdpa import export_sdpa, format_number, parse_sdpa, read_sdpa, render_sdpa

TOY = SdpProblem.from_entries((2,), [1.0], [(0, 0, 0, 0, -1.0), (0, 0, 1, 1, -2.0), (1, 0, 0, 0, 1.0),
                                            (1, 0, 1, 1, 1.0)], constant=0.125)

TOY_TEXT = """\
* toy
* constant: 0.125
1 = mDIM
1 = nBLOCK
2 = bLOCKsTRUCT
1
0 1 1 1 -1
0 1 2 2 -2
1 1 1 1 1
1 1 2 2 1
"""


def test_format_number_is_lossless():
    assert format_number(0.1) == "0.10000000000000001"
    assert float(format_number(1 / 3)) == 1 / 3


def test_render_matches_reference_text():
    assert render_sdpa(TOY, title="toy") == TOY_TEXT


def test_parse_reference_text():
    problem = parse_sdpa(TOY_TEXT)
    assert problem.block_sizes == (2,)
    assert problem.constant == 0.125
    np.testing.assert_array_equal(problem.c, [1.0])
    assert problem.entries() == TOY.entries()


def test_parse_accepts_sdpa_punctuation():
    text = '"from another tool"\n1 =mdim\n2 =nblocks\n{2, -1}\n{3.5}\n0 1 1 1 -1.0\n1 1 1 2 0.5\n1 2 1 1 1\n'
    problem = parse_sdpa(text)
    assert problem.block_sizes == (2, 1)
    assert problem.c[0] == 3.5
    assert problem.constant == 0.0
    assert (1, 0, 0, 1, 0.5) in problem.entries()


def test_parse_rejects_malformed_input():
    with pytest.raises(ValueError):
        parse_sdpa("1 = mDIM\n")
    with pytest.raises(ValueError):
        parse_sdpa(TOY_TEXT + "1 1 1\n")


def test_exported_relaxation_solves_to_the_same_value(tmp_path):
    relaxation = relax(chsh_problem(), 1)
    path = tmp_path / "chsh.dat-s"
    export_sdpa(relaxation.sdp, path)
    restored = read_sdpa(path)
    assert restored.entries() == relaxation.sdp.entries()
    assert restored.constant == relaxation.sdp.constant
    assert solve_sdp(restored).dual_objective == pytest.approx(solve_sdp(relaxation.sdp).dual_objective, abs=1e-9)
