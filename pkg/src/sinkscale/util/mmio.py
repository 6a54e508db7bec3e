"""Input and output
==============
Readers and writers for the plain-text formats used on the command line:

* Matrix Market ``coordinate`` files (``real``, ``integer`` or ``pattern``
  fields, ``general`` symmetry, 1-based indices).
* Target vector files, one float per line.
* Bipartite edge lists: a ``n_left n_right`` header followed by one
  ``left right`` pair of 1-based integers per line.

Parsing errors carry the offending file and 1-based line number.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Iterator

import numpy as np
from scipy import io as spio

from sinkscale import exc
from sinkscale.core import FloatArray, SparseNonnegMatrix
from sinkscale.matching import BipartiteGraph

LOGGER = logging.getLogger(__name__)

PathLike = str | os.PathLike[str]

_SUPPORTED_FIELDS = ("real", "integer", "pattern")


def _numbered_lines(path: PathLike) -> Iterator[tuple[int, str]]:
    """Yield ``(line number, stripped text)`` for every line that is not
    blank and not a ``%`` or ``#`` comment."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith(("%", "#")):
                continue
            yield lineno, text


def read_matrix_market(path: PathLike) -> SparseNonnegMatrix:
    """Read a Matrix Market coordinate file.

    Parameters
    ----------
    path : str or os.PathLike
        File to read.

    Returns
    -------
    SparseNonnegMatrix
        Entries in file order, converted to 0-based indices.

    Raises
    ------
    exc.MatrixMarketError
        On a malformed header, a bad entry line, an index out of range, a
        repeated entry, a non-positive value or a wrong entry count.
    """
    name = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
    if (
        len(header) != 5
        or header[0] != "%%MatrixMarket"
        or header[1].lower() != "matrix"
        or header[2].lower() != "coordinate"
    ):
        raise exc.MatrixMarketError(
            name, 1, "expected '%%MatrixMarket matrix coordinate ...' header"
        )
    field, symmetry = header[3].lower(), header[4].lower()
    if field not in _SUPPORTED_FIELDS:
        raise exc.MatrixMarketError(name, 1, f"unsupported field '{field}'")
    if symmetry != "general":
        raise exc.MatrixMarketError(
            name, 1, f"unsupported symmetry '{symmetry}'"
        )

    lines = _numbered_lines(path)
    try:
        lineno, text = next(lines)
    except StopIteration:
        raise exc.MatrixMarketError(name, None, "missing size line")
    try:
        n_rows, n_cols, nnz = (int(tok) for tok in text.split())
    except ValueError:
        raise exc.MatrixMarketError(
            name, lineno, f"expected 'rows cols nnz', got '{text}'"
        )
    if n_rows < 1 or n_cols < 1 or nnz < 0:
        raise exc.MatrixMarketError(name, lineno, "invalid size line")

    width = 2 if field == "pattern" else 3
    rows: list[int] = []
    cols: list[int] = []
    values: list[float] = []
    seen: dict[tuple[int, int], int] = {}
    for lineno, text in lines:
        tokens = text.split()
        if len(tokens) != width:
            raise exc.MatrixMarketError(
                name, lineno, f"expected {width} fields, got {len(tokens)}"
            )
        try:
            i, j = int(tokens[0]), int(tokens[1])
            value = 1.0 if field == "pattern" else float(tokens[2])
        except ValueError:
            raise exc.MatrixMarketError(
                name, lineno, f"cannot parse entry '{text}'"
            )
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise exc.MatrixMarketError(
                name, lineno, f"index ({i}, {j}) out of range"
            )
        if not (math.isfinite(value) and value > 0):
            raise exc.MatrixMarketError(
                name, lineno, f"stored value {value!r} is not positive"
            )
        if (i, j) in seen:
            raise exc.MatrixMarketError(
                name,
                lineno,
                f"entry ({i}, {j}) repeats line {seen[(i, j)]}",
            )
        seen[(i, j)] = lineno
        rows.append(i - 1)
        cols.append(j - 1)
        values.append(value)

    if len(values) != nnz:
        raise exc.MatrixMarketError(
            name,
            None,
            f"size line announces {nnz} entries, found {len(values)}",
        )
    LOGGER.debug(f"Read {n_rows}x{n_cols} matrix with {nnz} entries")
    return SparseNonnegMatrix(n_rows, n_cols, rows, cols, values)


def write_matrix_market(A: SparseNonnegMatrix, path: PathLike) -> None:
    """Write ``A`` as a ``coordinate real general`` file in entry-list
    order, with enough digits for the values to read back identically."""
    with open(path, "wb") as fh:
        spio.mmwrite(
            fh, A.to_coo(), field="real", precision=17, symmetry="general"
        )


def read_vector(path: PathLike) -> FloatArray:
    """Read one float per line.

    Raises
    ------
    exc.VectorFileError
        If a line does not hold exactly one float or the file is empty.
    """
    name = os.fspath(path)
    values: list[float] = []
    for lineno, text in _numbered_lines(path):
        try:
            values.append(float(text))
        except ValueError:
            raise exc.VectorFileError(
                name, lineno, f"expected one float, got '{text}'"
            )
    if not values:
        raise exc.VectorFileError(name, None, "no values found")
    return np.asarray(values, dtype=np.float64)


def read_edge_list(path: PathLike) -> BipartiteGraph:
    """Read a bipartite edge list.

    The first line is ``n_left n_right``; every following line holds one
    1-based ``left right`` pair.

    Raises
    ------
    exc.EdgeListError
        On a malformed header or edge line, an index out of range or a
        repeated edge.
    """
    name = os.fspath(path)
    lines = _numbered_lines(path)
    try:
        lineno, text = next(lines)
    except StopIteration:
        raise exc.EdgeListError(name, None, "missing 'n m' header")
    try:
        n_left, n_right = (int(tok) for tok in text.split())
    except ValueError:
        raise exc.EdgeListError(
            name, lineno, f"expected 'n m' header, got '{text}'"
        )
    if n_left < 1 or n_right < 1:
        raise exc.EdgeListError(name, lineno, "vertex counts must be positive")

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, text in lines:
        try:
            i, j = (int(tok) for tok in text.split())
        except ValueError:
            raise exc.EdgeListError(
                name, lineno, f"expected two integers, got '{text}'"
            )
        if not (1 <= i <= n_left and 1 <= j <= n_right):
            raise exc.EdgeListError(
                name, lineno, f"edge ({i}, {j}) out of range"
            )
        if (i, j) in seen:
            raise exc.EdgeListError(name, lineno, f"edge ({i}, {j}) repeated")
        seen.add((i, j))
        edges.append((i - 1, j - 1))
    return BipartiteGraph(n_left=n_left, n_right=n_right, edges=tuple(edges))
