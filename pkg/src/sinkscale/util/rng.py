"""Random numbers
==============
Every random draw in sinkscale, in the library, the test generators and the
command line, comes from a single integer seed through :func:`make_rng`.

The generator family is fixed: NumPy's ``Philox`` bit generator
(Philox-4x64-10, a counter-based generator) wrapped in a
:class:`numpy.random.Generator`. Two runs with the same seed draw the same
stream on every platform NumPy supports.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | None) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``.

    Parameters
    ----------
    seed : int or None
        Non-negative integer seed. ``None`` draws fresh OS entropy and is
        only meant for interactive use.

    Returns
    -------
    numpy.random.Generator
    """
    return np.random.Generator(np.random.Philox(seed))
