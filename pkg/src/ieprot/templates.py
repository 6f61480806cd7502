"""Canonical heavy-atom connectivity for the 20 standard amino acids.

Pooling assignments for complete canonical residues are computed once
on these graphs and reused across proteins, keyed by atom name, which
also makes the clustering independent of atom order in the input file.
Connectivity is stored directly instead of ideal coordinates: the
clustering consumes only the bond graph.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_BACKBONE = "N-CA CA-C C-O"

# atom order follows the standard PDB ordering per residue
_TEMPLATES = {
    "GLY": ("N CA C O", ""),
    "ALA": ("N CA C O CB", "CA-CB"),
    "SER": ("N CA C O CB OG", "CA-CB CB-OG"),
    "CYS": ("N CA C O CB SG", "CA-CB CB-SG"),
    "THR": ("N CA C O CB OG1 CG2", "CA-CB CB-OG1 CB-CG2"),
    "VAL": ("N CA C O CB CG1 CG2", "CA-CB CB-CG1 CB-CG2"),
    "LEU": ("N CA C O CB CG CD1 CD2", "CA-CB CB-CG CG-CD1 CG-CD2"),
    "ILE": ("N CA C O CB CG1 CG2 CD1", "CA-CB CB-CG1 CB-CG2 CG1-CD1"),
    "PRO": ("N CA C O CB CG CD", "CA-CB CB-CG CG-CD CD-N"),
    "MET": ("N CA C O CB CG SD CE", "CA-CB CB-CG CG-SD SD-CE"),
    "PHE": (
        "N CA C O CB CG CD1 CD2 CE1 CE2 CZ",
        "CA-CB CB-CG CG-CD1 CG-CD2 CD1-CE1 CD2-CE2 CE1-CZ CE2-CZ",
    ),
    "TYR": (
        "N CA C O CB CG CD1 CD2 CE1 CE2 CZ OH",
        "CA-CB CB-CG CG-CD1 CG-CD2 CD1-CE1 CD2-CE2 CE1-CZ CE2-CZ CZ-OH",
    ),
    "TRP": (
        "N CA C O CB CG CD1 CD2 NE1 CE2 CE3 CZ2 CZ3 CH2",
        "CA-CB CB-CG CG-CD1 CG-CD2 CD1-NE1 NE1-CE2 CD2-CE2 CD2-CE3 "
        "CE2-CZ2 CE3-CZ3 CZ2-CH2 CZ3-CH2",
    ),
    "ASP": ("N CA C O CB CG OD1 OD2", "CA-CB CB-CG CG-OD1 CG-OD2"),
    "GLU": ("N CA C O CB CG CD OE1 OE2", "CA-CB CB-CG CG-CD CD-OE1 CD-OE2"),
    "ASN": ("N CA C O CB CG OD1 ND2", "CA-CB CB-CG CG-OD1 CG-ND2"),
    "GLN": ("N CA C O CB CG CD OE1 NE2", "CA-CB CB-CG CG-CD CD-OE1 CD-NE2"),
    "LYS": ("N CA C O CB CG CD CE NZ", "CA-CB CB-CG CG-CD CD-CE CE-NZ"),
    "ARG": (
        "N CA C O CB CG CD NE CZ NH1 NH2",
        "CA-CB CB-CG CG-CD CD-NE NE-CZ CZ-NH1 CZ-NH2",
    ),
    "HIS": (
        "N CA C O CB CG ND1 CD2 CE1 NE2",
        "CA-CB CB-CG CG-ND1 CG-CD2 ND1-CE1 CD2-NE2 CE1-NE2",
    ),
}

CANONICAL_RESIDUES = tuple(sorted(_TEMPLATES))


def residue_atom_names(code: str) -> tuple[str, ...] | None:
    entry = _TEMPLATES.get(code)
    return tuple(entry[0].split()) if entry else None


def residue_bonds(code: str) -> tuple[tuple[str, str], ...] | None:
    entry = _TEMPLATES.get(code)
    if entry is None:
        return None
    side = entry[1].split()
    return tuple(tuple(b.split("-")) for b in (_BACKBONE.split() + side))


def residue_graph(code: str) -> tuple[tuple[str, ...], sp.csr_matrix] | None:
    """Atom names and the covalent adjacency of an ideal residue."""
    names = residue_atom_names(code)
    if names is None:
        return None
    index = {name: i for i, name in enumerate(names)}
    n = len(names)
    rows, cols = [], []
    for a, b in residue_bonds(code):
        i, j = index[a], index[b]
        rows += [i, j]
        cols += [j, i]
    adj = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float32), (rows, cols)), shape=(n, n)
    )
    return names, adj
