import os
import re
from typing import List, Union

import numpy as np

from config import get_logger
from core.sdp import SdpProblem

logger = get_logger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

_CONSTANT_TAG = "* constant:"
_SEPARATORS = re.compile(r"[,{}()]")


def format_number(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return f"{float(value):.17g}"


def render_sdpa(problem: SdpProblem, title: str = "dicka relaxation") -> str:
    """SDPA sparse (.dat-s) text of a problem. Indices are written 1-based."""
    lines: List[str] = [f"* {title}", f"{_CONSTANT_TAG} {format_number(problem.constant)}"]
    lines.append(f"{problem.m} = mDIM")
    lines.append(f"{len(problem.block_sizes)} = nBLOCK")
    lines.append(" ".join(str(s) for s in problem.block_sizes) + " = bLOCKsTRUCT")
    lines.append(" ".join(format_number(v) for v in problem.c))
    for mat, blk, i, j, v in problem.entries():
        lines.append(f"{mat} {blk + 1} {i + 1} {j + 1} {format_number(v)}")
    return "\n".join(lines) + "\n"


def export_sdpa(problem: SdpProblem, path: PathLike, title: str = "dicka relaxation") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(render_sdpa(problem, title))
    logger.info(f"Wrote SDPA file {path} ({problem.m} variables, blocks {list(problem.block_sizes)})")


def _numbers(line: str) -> List[str]:
    out = []
    for token in _SEPARATORS.sub(" ", line).split():
        if token.startswith("="):
            break
        try:
            float(token)
        except ValueError:
            break
        out.append(token)
    return out


def parse_sdpa(text: str) -> SdpProblem:
    """
    Parses SDPA sparse text. Comment lines start with '*' or '"'; the
    objective constant, when present, is read from a '* constant:' comment.
    Negative block sizes (diagonal blocks) are read as ordinary blocks.
    """
    constant = 0.0
    header: List[str] = []
    body: List[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(_CONSTANT_TAG):
            constant = float(line[len(_CONSTANT_TAG):].strip())
            continue
        if line[0] in "*\"":
            continue
        body.append(line)

    if len(body) < 3:
        raise ValueError("SDPA input is missing its header lines.")
    try:
        m = int(_numbers(body[0])[0])
        nblocks = int(_numbers(body[1])[0])
        cursor = 2
        while len(header) < nblocks + m:
            if cursor >= len(body):
                raise ValueError("SDPA input ends inside the block structure or cost vector.")
            header.extend(_numbers(body[cursor]))
            cursor += 1
        sizes = [abs(int(float(s))) for s in header[:nblocks]]
        c = np.array([float(v) for v in header[nblocks:nblocks + m]])
        entries = []
        for line in body[cursor:]:
            fields = _numbers(line)
            if len(fields) != 5:
                raise ValueError(f"Malformed SDPA entry line: {line!r}")
            mat, blk, i, j = (int(float(f)) for f in fields[:4])
            entries.append((mat, blk - 1, i - 1, j - 1, float(fields[4])))
    except (IndexError, ValueError) as e:
        raise ValueError(f"Could not parse SDPA input: {e}") from e
    return SdpProblem.from_entries(sizes, c, entries, constant=constant)


def read_sdpa(path: PathLike) -> SdpProblem:
    with open(path, "r", encoding="utf-8") as handle:
        problem = parse_sdpa(handle.read())
    logger.debug(f"Read SDPA file {path}: {problem.m} variables, blocks {list(problem.block_sizes)}")
    return problem
