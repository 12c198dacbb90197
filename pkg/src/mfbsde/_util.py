"""Small shared helpers: exact step rounding and atomic file writes."""
from __future__ import annotations

import math
import os
import tempfile


def exact_step(h: float, max_mult: int) -> float:
    """Return sqrt(h) rounded so that k * result is an exact float.

    The result carries 53 - bit_length(max_mult) significant bits, hence the
    product with any integer k with \\|k\\| <= max_mult is exactly
    representable.  This makes node values, spacings and walk increments
    reproduce bit for bit instead of drifting by one ulp per arithmetic
    path.  The relative perturbation of the step is at most
    2**(bit_length(max_mult) - 53), orders of magnitude below every
    tolerance used in this package.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    s = math.sqrt(h)
    t = 53 - max(int(max_mult), 1).bit_length()
    m, e = math.frexp(s)  # s = m * 2**e with 0.5 <= m < 1
    quantum = math.ldexp(1.0, e - t)
    return round(s / quantum) * quantum


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write text to path via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used by every CSV writer."""
    return repr(float(x))
