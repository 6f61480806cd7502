"""PDB fixed-column parser producing a canonical heavy-atom structure.

Only ATOM records of the first MODEL are consumed. HETATM records,
waters, nucleic acids and hydrogens are skipped; alternate locations are
resolved to the highest-occupancy variant (ties to the lowest altLoc
character). Column layout per the PDB format description:

    name 13-16, altLoc 17, resName 18-20, chainID 22, resSeq 23-26,
    iCode 27, x/y/z 31-54, occupancy 55-60, element 77-78.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elements import DEFAULT_TABLE, ElementProps
from .errors import EmptyStructureError, ParseError, UnknownElementError

_WATER_RES = {"HOH", "WAT", "DOD", "H2O"}
_NUCLEIC_RES = {"A", "C", "G", "U", "I", "T", "DA", "DC", "DG", "DT", "DU", "DI"}


@dataclass
class Atom:
    serial: int
    name: str
    element: str
    position: np.ndarray  # (3,) float64, angstrom
    alt_loc: str = ""
    occupancy: float = 1.0

    def __repr__(self):
        x, y, z = self.position
        return f"<atom {self.name} {self.element} ({x:.3f}, {y:.3f}, {z:.3f})>"


@dataclass
class Residue:
    chain_id: str
    seq_num: int
    insertion_code: str
    res_name: str
    atoms: list[Atom] = field(default_factory=list)

    @property
    def key(self):
        return (self.chain_id, self.seq_num, self.insertion_code)

    def atom_by_name(self, name: str) -> Atom | None:
        for a in self.atoms:
            if a.name == name:
                return a
        return None

    def __repr__(self):
        return f"<residue {self.res_name} {self.chain_id}{self.seq_num}{self.insertion_code}>"


@dataclass
class ProteinStructure:
    residues: list[Residue]
    source_id: str = ""

    @property
    def num_atoms(self) -> int:
        return sum(len(r.atoms) for r in self.residues)

    def iter_atoms(self):
        """Yield (global atom index, residue ordinal, atom) in canonical order."""
        idx = 0
        for ri, res in enumerate(self.residues):
            for atom in res.atoms:
                yield idx, ri, atom
                idx += 1

    def positions(self) -> np.ndarray:
        out = np.empty((self.num_atoms, 3), dtype=np.float64)
        for i, _, atom in self.iter_atoms():
            out[i] = atom.position
        return out

    def atom_residue_ordinals(self) -> np.ndarray:
        out = np.empty(self.num_atoms, dtype=np.int64)
        for i, ri, _ in self.iter_atoms():
            out[i] = ri
        return out

    def __repr__(self):
        return f"<structure {self.source_id or '?'}: {len(self.residues)} residues, {self.num_atoms} atoms>"


def _infer_element(name: str) -> str:
    """Element from the atom-name column when columns 77-78 are blank."""
    stripped = name.strip().upper()
    if stripped.startswith("SE") and len(stripped) <= 3:
        return "SE"
    for ch in stripped:
        if ch.isalpha():
            return ch
    return ""


def _parse_float(line: str, lo: int, hi: int, what: str, lineno: int) -> float:
    text = line[lo:hi]
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"malformed {what} field {text.strip()!r}", lineno) from None


def parse_pdb(
    data: str | bytes,
    source_id: str = "",
    element_table: dict[str, ElementProps] | None = None,
    keep_hydrogens: bool = False,
) -> ProteinStructure:
    """Parse PDB text into a ProteinStructure.

    Raises ParseError on malformed coordinates, EmptyStructureError when
    no ATOM record survives the filters, UnknownElementError when an
    element is neither given nor inferable (or absent from the table).
    """
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")
    table = DEFAULT_TABLE if element_table is None else element_table

    residues: list[Residue] = []
    by_key: dict[tuple, Residue] = {}
    first_model: int | None = None
    in_later_model = False

    for lineno, line in enumerate(data.splitlines(), start=1):
        rec = line[:6]
        if rec.startswith("MODEL"):
            try:
                num = int(line[10:14])
            except ValueError:
                num = lineno  # treat unparseable model ids as distinct
            if first_model is None:
                first_model = num
            in_later_model = num != first_model
            continue
        if rec.startswith("ENDMDL") and first_model is not None:
            in_later_model = True  # anything after the first ENDMDL is ignored
            continue
        if rec != "ATOM  " or in_later_model:
            continue

        res_name = line[17:20].strip()
        if res_name in _WATER_RES or res_name in _NUCLEIC_RES:
            continue

        name = line[12:16].strip()
        element = line[76:78].strip().upper() if len(line) >= 78 else ""
        if not element:
            element = _infer_element(line[12:16])
            if not element:
                raise ParseError(f"cannot infer element for atom {name!r}", lineno)
        if element in ("H", "D") and not keep_hydrogens:
            continue
        if element not in table:
            raise UnknownElementError(f"line {lineno}: element {element!r} not in table")

        x = _parse_float(line, 30, 38, "x coordinate", lineno)
        y = _parse_float(line, 38, 46, "y coordinate", lineno)
        z = _parse_float(line, 46, 54, "z coordinate", lineno)
        if not np.isfinite((x, y, z)).all():
            raise ParseError("non-finite coordinate", lineno)

        occ_text = line[54:60].strip()
        occupancy = 1.0
        if occ_text:
            try:
                occupancy = min(1.0, max(0.0, float(occ_text)))
            except ValueError:
                raise ParseError(f"malformed occupancy field {occ_text!r}", lineno) from None

        try:
            serial = int(line[6:11])
        except ValueError:
            serial = 0
        chain_id = line[21] if len(line) > 21 else " "
        try:
            seq_num = int(line[22:26])
        except ValueError:
            raise ParseError(f"malformed residue number {line[22:26].strip()!r}", lineno) from None
        icode = line[26].strip() if len(line) > 26 else ""
        alt_loc = line[16].strip() if len(line) > 16 else ""

        key = (chain_id, seq_num, icode)
        res = by_key.get(key)
        if res is None:
            res = Residue(chain_id, seq_num, icode, res_name)
            by_key[key] = res
            residues.append(res)

        atom = Atom(serial, name, element, np.array([x, y, z]), alt_loc, occupancy)
        existing = res.atom_by_name(name)
        if existing is not None and (existing.alt_loc or atom.alt_loc):
            # altLoc policy: highest occupancy wins, ties to lowest character
            if (atom.occupancy, _alt_rank(atom.alt_loc)) > (
                existing.occupancy,
                _alt_rank(existing.alt_loc),
            ):
                res.atoms[res.atoms.index(existing)] = atom
            continue
        res.atoms.append(atom)

    residues = [r for r in residues if r.atoms]
    if not residues:
        raise EmptyStructureError(f"no ATOM records in {source_id or 'input'}")
    return ProteinStructure(residues, source_id)


def _alt_rank(alt_loc: str) -> int:
    # Higher rank = preferred on occupancy ties; '' sorts before 'A'.
    return -ord(alt_loc) if alt_loc else 1


def parse_pdb_file(path: str | Path, element_table=None) -> ProteinStructure:
    path = Path(path)
    return parse_pdb(path.read_bytes(), source_id=path.stem, element_table=element_table)
