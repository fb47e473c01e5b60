"""spinsense: simulation and analysis toolkit for chip-based spin quantum sensing.

Subpackages cover the chip thermal plant and its PID loop (``thermal``), the
microwave delivery line and spin-drive conversion (``field``), resonance
spectrum fitting and thermometry (``odmr``), particle-tracking viability
(``tracking``), and worm morphometry (``morphometry``). ``cli`` ties them
together behind deterministic, file-based subcommands.
"""

from . import config, errors, field, morphometry, odmr, pgm, thermal, tracking

__all__ = [
    "config",
    "errors",
    "field",
    "morphometry",
    "odmr",
    "pgm",
    "thermal",
    "tracking",
]

__version__ = "0.1.0"
