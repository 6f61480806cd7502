"""Covalent-bond inference and backbone hydrogen-bond detection.

Covalent bonds come from a geometric rule: two atoms are bonded when
their distance is at most the sum of covalent radii plus a 0.45 A
tolerance, searched over same-residue pairs, the C(i)-N(i+1) peptide
candidate along each chain, and cross-residue SG-SG pairs (disulfides).
Hydrogen bonds use the DSSP electrostatic energy with the -0.5 kcal/mol
cutoff after placing amide hydrogens 1 A from the backbone N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .elements import DEFAULT_TABLE, ElementProps
from .pdb import ProteinStructure

COVALENT_TOLERANCE = 0.45  # angstrom
DISULFIDE_SEARCH_RADIUS = 2.5  # angstrom, SG-SG candidate screen
NH_BOND_LENGTH = 1.0  # angstrom
DSSP_COUPLING = 27.888  # kcal/mol * angstrom, = 0.084 * 332
HBOND_ENERGY_CUTOFF = -0.5  # kcal/mol
O_CANDIDATE_RADIUS = 5.2  # angstrom around the donor N
DEGENERATE_DISTANCE = 0.5  # angstrom, below this the pair is rejected


@dataclass
class BondList:
    edges: list[tuple[int, int]]
    kind: str  # "covalent" or "hydrogen"

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


def _chain_positions(structure: ProteinStructure) -> tuple[list[str], list[int]]:
    """Chain id and within-chain ordinal for every residue, in file order."""
    chains: list[str] = []
    positions: list[int] = []
    seen: dict[str, int] = {}
    for res in structure.residues:
        pos = seen.get(res.chain_id, 0)
        chains.append(res.chain_id)
        positions.append(pos)
        seen[res.chain_id] = pos + 1
    return chains, positions


def infer_covalent_bonds(
    structure: ProteinStructure,
    element_table: dict[str, ElementProps] | None = None,
) -> BondList:
    table = DEFAULT_TABLE if element_table is None else element_table
    atoms = list(structure.iter_atoms())
    positions = structure.positions()
    radii = np.array([table[a.element].covalent_radius for _, _, a in atoms])

    edges: set[tuple[int, int]] = set()

    def try_bond(i: int, j: int):
        if i == j:
            return
        dist = np.linalg.norm(positions[i] - positions[j])
        if dist <= radii[i] + radii[j] + COVALENT_TOLERANCE:
            edges.add((i, j) if i < j else (j, i))

    # same-residue pairs
    start = 0
    residue_spans = []
    for res in structure.residues:
        residue_spans.append((start, start + len(res.atoms)))
        start += len(res.atoms)
    for lo, hi in residue_spans:
        for i in range(lo, hi):
            for j in range(i + 1, hi):
                try_bond(i, j)

    # peptide candidates: C of residue k to N of the next residue in the chain
    chains, _ = _chain_positions(structure)
    prev_in_chain: dict[str, int] = {}
    for ri, res in enumerate(structure.residues):
        prev = prev_in_chain.get(chains[ri])
        if prev is not None:
            c_atom = _atom_index(structure, residue_spans, prev, "C")
            n_atom = _atom_index(structure, residue_spans, ri, "N")
            if c_atom is not None and n_atom is not None:
                try_bond(c_atom, n_atom)
        prev_in_chain[chains[ri]] = ri

    # disulfide candidates: all cross-residue SG pairs within the screen radius
    sg = [
        i
        for i, _, a in atoms
        if a.element == "S" and a.name == "SG"
    ]
    res_of = structure.atom_residue_ordinals()
    for ii, i in enumerate(sg):
        for j in sg[ii + 1 :]:
            if res_of[i] == res_of[j]:
                continue
            if np.linalg.norm(positions[i] - positions[j]) <= DISULFIDE_SEARCH_RADIUS:
                try_bond(i, j)

    return BondList(sorted(edges), "covalent")


def _atom_index(structure, residue_spans, ri: int, name: str) -> int | None:
    lo, hi = residue_spans[ri]
    res = structure.residues[ri]
    for k, atom in enumerate(res.atoms):
        if atom.name == name:
            return lo + k
    return None


def place_amide_hydrogens(
    structure: ProteinStructure,
) -> tuple[dict[int, np.ndarray], list[int]]:
    """Position of the backbone amide H per residue ordinal.

    H(i) = N(i) + 1 A along the previous residue's C-O direction.
    Prolines and chain-initial residues get none; residues missing a
    required backbone atom land in the returned skip list.
    """
    hydrogens: dict[int, np.ndarray] = {}
    skipped: list[int] = []
    chains, _ = _chain_positions(structure)
    prev_in_chain: dict[str, int] = {}
    for ri, res in enumerate(structure.residues):
        prev = prev_in_chain.get(chains[ri])
        prev_in_chain[chains[ri]] = ri
        if prev is None or res.res_name == "PRO":
            continue
        n = res.atom_by_name("N")
        c_prev = structure.residues[prev].atom_by_name("C")
        o_prev = structure.residues[prev].atom_by_name("O")
        if n is None or c_prev is None or o_prev is None:
            skipped.append(ri)
            continue
        direction = c_prev.position - o_prev.position
        norm = np.linalg.norm(direction)
        if norm < 1e-9:
            skipped.append(ri)
            continue
        hydrogens[ri] = n.position + NH_BOND_LENGTH * direction / norm
    return hydrogens, skipped


def hbond_energy(o: np.ndarray, c: np.ndarray, n: np.ndarray, h: np.ndarray) -> float:
    """DSSP electrostatic energy in kcal/mol; +inf when geometry degenerates."""
    d_on = np.linalg.norm(o - n)
    d_ch = np.linalg.norm(c - h)
    d_oh = np.linalg.norm(o - h)
    d_cn = np.linalg.norm(c - n)
    if min(d_on, d_ch, d_oh, d_cn) < DEGENERATE_DISTANCE:
        return float("inf")
    return DSSP_COUPLING * (1.0 / d_on + 1.0 / d_ch - 1.0 / d_oh - 1.0 / d_cn)


def detect_hydrogen_bonds(
    structure: ProteinStructure,
    hydrogens: dict[int, np.ndarray],
    include_inter_chain: bool = True,
) -> BondList:
    """Backbone N-H...O=C bonds by the DSSP criterion.

    Emits (donor N atom, acceptor O atom) edges for donor/acceptor pairs
    at least two residues apart in chain order, or on different chains
    when enabled. Acceptor candidates come from a radius query of
    backbone O atoms around each donor N.
    """
    residue_spans = []
    start = 0
    for res in structure.residues:
        residue_spans.append((start, start + len(res.atoms)))
        start += len(res.atoms)

    chains, chain_pos = _chain_positions(structure)

    o_atoms: list[tuple[int, int]] = []  # (residue ordinal, atom index)
    o_coords = []
    for ri in range(len(structure.residues)):
        oi = _atom_index(structure, residue_spans, ri, "O")
        ci = _atom_index(structure, residue_spans, ri, "C")
        if oi is None or ci is None:
            continue
        o_atoms.append((ri, oi))
        o_coords.append(structure.residues[ri].atom_by_name("O").position)
    if not o_atoms or not hydrogens:
        return BondList([], "hydrogen")
    tree = cKDTree(np.asarray(o_coords))

    edges: set[tuple[int, int]] = set()
    for donor, h_pos in hydrogens.items():
        n_idx = _atom_index(structure, residue_spans, donor, "N")
        if n_idx is None:
            continue
        n_pos = structure.residues[donor].atom_by_name("N").position
        for k in sorted(tree.query_ball_point(n_pos, O_CANDIDATE_RADIUS)):
            acceptor, o_idx = o_atoms[k]
            if chains[acceptor] == chains[donor]:
                if abs(chain_pos[acceptor] - chain_pos[donor]) < 2:
                    continue
            elif not include_inter_chain:
                continue
            res = structure.residues[acceptor]
            o_pos = res.atom_by_name("O").position
            c_pos = res.atom_by_name("C").position
            if hbond_energy(o_pos, c_pos, n_pos, h_pos) < HBOND_ENERGY_CUTOFF:
                edges.add((n_idx, o_idx) if n_idx < o_idx else (o_idx, n_idx))

    return BondList(sorted(edges), "hydrogen")
