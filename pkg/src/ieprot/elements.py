"""Per-element physical constants used as atom input features.

Covalent radii follow Cordero et al. (2008), van der Waals radii Bondi
(1964) with the usual extensions, masses the IUPAC standard atomic
weights. The table covers the elements that occur in protein heavy-atom
structures; it can be replaced at runtime via :func:`load_element_table`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnknownElementError


@dataclass(frozen=True)
class ElementProps:
    covalent_radius: float  # angstrom
    vdw_radius: float  # angstrom
    mass: float  # dalton
    embed_index: int


# Symbol -> (covalent radius, vdW radius, mass). Order fixes embed_index.
_DEFAULT_ROWS = (
    ("H", 0.31, 1.20, 1.008),
    ("C", 0.76, 1.70, 12.011),
    ("N", 0.71, 1.55, 14.007),
    ("O", 0.66, 1.52, 15.999),
    ("S", 1.05, 1.80, 32.06),
    ("SE", 1.20, 1.90, 78.971),
    ("P", 1.07, 1.80, 30.974),
)

DEFAULT_TABLE: dict[str, ElementProps] = {
    sym: ElementProps(cov, vdw, mass, i)
    for i, (sym, cov, vdw, mass) in enumerate(_DEFAULT_ROWS)
}

NUM_ELEMENTS = len(DEFAULT_TABLE)

# Standardization constants for the three physical features are frozen
# against the default table so preprocessing never depends on the model
# or on a user-supplied override table.
_vals = np.array([[r[1], r[2], r[3]] for r in _DEFAULT_ROWS], dtype=np.float64)
FEATURE_MEAN = _vals.mean(axis=0)
FEATURE_STD = _vals.std(axis=0)
del _vals


def element_properties(symbol: str, table: dict[str, ElementProps] | None = None) -> ElementProps:
    """Look up the constants for an element symbol (case-insensitive)."""
    table = DEFAULT_TABLE if table is None else table
    props = table.get(symbol.upper())
    if props is None:
        raise UnknownElementError(f"element {symbol!r} not in table")
    return props


def standardized_features(symbol: str, table: dict[str, ElementProps] | None = None) -> np.ndarray:
    """Return (covalent radius, vdW radius, mass) standardized with the frozen constants."""
    p = element_properties(symbol, table)
    raw = np.array([p.covalent_radius, p.vdw_radius, p.mass], dtype=np.float64)
    return (raw - FEATURE_MEAN) / FEATURE_STD


def load_element_table(path: str | Path) -> dict[str, ElementProps]:
    """Read an override table: one element per line, `symbol cov vdw mass`.

    Blank lines and lines starting with `#` are skipped. Embed indices
    are assigned in file order.
    """
    table: dict[str, ElementProps] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected `symbol cov vdw mass`, got {line!r}", lineno)
        sym = parts[0].upper()
        try:
            cov, vdw, mass = (float(p) for p in parts[1:])
        except ValueError:
            raise ParseError(f"bad number in {line!r}", lineno) from None
        if cov <= 0 or vdw <= 0 or mass <= 0:
            raise ParseError(f"radii and mass must be positive in {line!r}", lineno)
        table[sym] = ElementProps(cov, vdw, mass, len(table))
    if not table:
        raise ParseError(f"element table {path} is empty")
    return table
