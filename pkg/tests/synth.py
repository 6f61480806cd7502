"""Synthetic protein structures with controllable geometry.

Backbones are grown atom by atom from internal coordinates (bond
length, bond angle, torsion), so ideal helices, strands, and random
coils all come out self-avoiding with correct covalent distances.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ieprot.pdb import Atom, ProteinStructure, Residue

# standard backbone internal coordinates, angstrom / degrees
BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
BOND_C_O = 1.231
BOND_CA_CB = 1.53
ANGLE_N_CA_C = 111.2
ANGLE_CA_C_N = 116.2
ANGLE_C_N_CA = 121.7
ANGLE_CA_C_O = 120.8
ANGLE_N_CA_CB = 110.5

HELIX = (-57.0, -47.0)
STRAND = (-135.0, 135.0)


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def place_atom(a, b, c, bond: float, angle_deg: float, torsion_deg: float) -> np.ndarray:
    """Point d with |cd| = bond, angle(b,c,d) = angle, torsion(a,b,c,d) = torsion."""
    theta = np.radians(angle_deg)
    phi = -np.radians(torsion_deg)
    bc = unit(c - b)
    n = unit(np.cross(b - a, bc))
    m = np.cross(n, bc)
    d = np.array(
        [
            -bond * np.cos(theta),
            bond * np.sin(theta) * np.cos(phi),
            bond * np.sin(theta) * np.sin(phi),
        ]
    )
    return c + d[0] * bc + d[1] * m + d[2] * n


def make_backbone(
    torsions,
    chain_id: str = "A",
    res_name: str = "GLY",
    with_cb: bool = False,
    start_seq: int = 1,
    start_serial: int = 1,
    origin=(0.0, 0.0, 0.0),
) -> ProteinStructure:
    """Chain of identical residues with the given (phi, psi) per residue.

    The first residue's phi is unused (no preceding C). Residues carry
    N, CA, C, O and optionally CB.
    """
    torsions = list(torsions)
    origin = np.asarray(origin, dtype=np.float64)
    name = "ALA" if with_cb and res_name == "GLY" else res_name

    n_pos = origin + np.array([0.0, 0.0, 0.0])
    ca_pos = n_pos + np.array([BOND_N_CA, 0.0, 0.0])
    theta = np.radians(ANGLE_N_CA_C)
    c_pos = ca_pos + BOND_CA_C * np.array([-np.cos(theta), np.sin(theta), 0.0])

    residues = []
    serial = start_serial
    backbone = []  # (n, ca, c) per residue, to chain the torsions
    for i, (phi, psi) in enumerate(torsions):
        if i > 0:
            prev_n, prev_ca, prev_c = backbone[-1]
            n_pos = place_atom(prev_n, prev_ca, prev_c, BOND_C_N, ANGLE_CA_C_N, psi_prev)
            ca_pos = place_atom(prev_ca, prev_c, n_pos, BOND_N_CA, ANGLE_C_N_CA, 180.0)
            c_pos = place_atom(prev_c, n_pos, ca_pos, BOND_CA_C, ANGLE_N_CA_C, phi)
        backbone.append((n_pos, ca_pos, c_pos))
        psi_prev = psi

        atoms = [
            Atom(serial, "N", "N", n_pos.copy()),
            Atom(serial + 1, "CA", "C", ca_pos.copy()),
            Atom(serial + 2, "C", "C", c_pos.copy()),
        ]
        serial += 3
        if with_cb:
            cb = place_atom(c_pos, n_pos, ca_pos, BOND_CA_CB, ANGLE_N_CA_CB, -120.0)
            atoms.append(Atom(serial, "CB", "C", cb))
            serial += 1
        residues.append(Residue(chain_id, start_seq + i, "", name, atoms))

    # carbonyl O needs the next residue's N (anti to it); the last one
    # uses its own psi directly
    for i, res in enumerate(residues):
        n_pos, ca_pos, c_pos = backbone[i]
        psi = torsions[i][1]
        o_pos = place_atom(n_pos, ca_pos, c_pos, BOND_C_O, ANGLE_CA_C_O, psi - 180.0)
        res.atoms.insert(3, Atom(0, "O", "O", o_pos))

    serial = start_serial
    for res in residues:
        for atom in res.atoms:
            atom.serial = serial
            serial += 1
    return ProteinStructure(residues, source_id="synthetic")


def coil_torsions(rng: np.random.Generator, count: int):
    """Random-coil torsions biased to the broad beta region (self-avoiding)."""
    phi = rng.uniform(-160.0, -60.0, size=count)
    psi = rng.uniform(60.0, 170.0, size=count)
    return list(zip(phi, psi))


def helix_structure(num_residues: int, **kw) -> ProteinStructure:
    return make_backbone([HELIX] * num_residues, **kw)


def strand_structure(num_residues: int, **kw) -> ProteinStructure:
    return make_backbone([STRAND] * num_residues, **kw)


def coil_structure(rng: np.random.Generator, num_residues: int, **kw) -> ProteinStructure:
    return make_backbone(coil_torsions(rng, num_residues), **kw)


# ---------------------------------------------------------------------------
# hand-placed single alanine: exactly the bonds N-CA, CA-C, C-O, CA-CB


ALA_COORDS = {
    "N": (0.00, 0.00, 0.00),
    "CA": (1.46, 0.00, 0.00),
    "C": (2.20, 1.33, 0.00),
    "O": (3.43, 1.33, 0.00),
    "CB": (1.46, -1.53, 0.00),
}


def ala_structure() -> ProteinStructure:
    atoms = [
        Atom(i + 1, name, name[0], np.array(pos, dtype=np.float64))
        for i, (name, pos) in enumerate(ALA_COORDS.items())
    ]
    return ProteinStructure([Residue("A", 1, "", "ALA", atoms)], source_id="ala")


def structure_to_pdb(structure: ProteinStructure) -> str:
    """Render a structure as minimal ATOM records (parser round trips)."""
    lines = []
    serial = 1
    for res in structure.residues:
        for atom in res.atoms:
            x, y, z = atom.position
            name = atom.name if len(atom.name) == 4 else f" {atom.name:<3s}"
            lines.append(
                f"ATOM  {serial:5d} {name}{'':1s}{res.res_name:>3s} {res.chain_id}"
                f"{res.seq_num:4d}{res.insertion_code:1s}   "
                f"{x:8.3f}{y:8.3f}{z:8.3f}{atom.occupancy:6.2f}{0.0:6.2f}"
                f"          {atom.element:>2s}"
            )
            serial += 1
    lines.append("END")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# random graphs for distance / pooling oracles


def random_connected_adjacency(rng: np.random.Generator, n: int, extra_edges: int = 0):
    """Symmetric 0/1 CSR adjacency: a random spanning tree plus extras."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        j = order[k]
        i = order[rng.integers(0, k)]
        edges.add((min(i, j), max(i, j)))
    for _ in range(extra_edges):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges.add((min(i, j), max(i, j)))
    rows = np.array([e[0] for e in edges] + [e[1] for e in edges])
    cols = np.array([e[1] for e in edges] + [e[0] for e in edges])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0
    return adj


def random_adjacency(rng: np.random.Generator, n: int, p: float = 0.2):
    """Symmetric 0/1 CSR adjacency, possibly disconnected, no self loops."""
    dense = (rng.random((n, n)) < p).astype(np.float64)
    dense = np.triu(dense, k=1)
    dense = dense + dense.T
    return sp.csr_matrix(dense)


def floyd_warshall_hops(adjacency, cap: int) -> np.ndarray:
    """Dense all-pairs hop counts; entries beyond cap collapse to cap + 1."""
    dense = np.asarray(adjacency.todense()) != 0
    n = dense.shape[0]
    big = n + 10
    dist = np.full((n, n), big, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    dist[dense] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return np.minimum(dist, cap + 1)


# ---------------------------------------------------------------------------
# bead bundles: multi-chain "fold" classes with purely topological labels


BUNDLE_STRANDS = 6
BUNDLE_GAPS = (3.6, 3.8, 4.0, 4.2, 4.4)  # asymmetric: no mirror degeneracy
BUNDLE_CLASSES = (
    (0, 1), (0, 2), (0, 3), (0, 4), (1, 2),
    (1, 3), (1, 4), (2, 3), (2, 4), (3, 4),
)


def bead_bundle(rng: np.random.Generator, linked_pairs, beads_per_strand: int = 20,
                beads_per_residue: int = 5, jitter: float = 0.15):
    """Parallel bead strands whose class is which adjacent pair is bridged.

    Every class shares one point cloud (up to jitter) and one local bond
    pattern; only the end-to-start bridges differ. A bridge spans the
    full strand length, so every atom pair whose hop count depends on the
    class sits farther apart than the largest convolution radius: models
    that read atom-level neighborhoods are blind to the label by
    construction, while pooled levels collapse each strand far enough for
    the bridge topology to land inside a coarse receptive field.
    """
    from ieprot.multigraph import NUM_FEATURES, ProteinGraph, edges_to_adjacency
    from ieprot.pooling import build_hierarchy

    num_strands = BUNDLE_STRANDS
    spacing = 1.5
    xs = np.concatenate([[0.0], np.cumsum(BUNDLE_GAPS)])
    n = num_strands * beads_per_strand
    positions = np.zeros((n, 3))
    for s in range(num_strands):
        base = s * beads_per_strand
        positions[base : base + beads_per_strand, 0] = xs[s]
        positions[base : base + beads_per_strand, 1] = (
            np.arange(beads_per_strand) * spacing
        )
    positions += rng.normal(0.0, jitter, size=positions.shape)

    edges = []
    for s in range(num_strands):
        base = s * beads_per_strand
        edges += [(base + k, base + k + 1) for k in range(beads_per_strand - 1)]
    for i in linked_pairs:
        edges.append(
            (i * beads_per_strand + beads_per_strand - 1, (i + 1) * beads_per_strand)
        )
    adj = edges_to_adjacency(edges, n)

    residues_per_strand = beads_per_strand // beads_per_residue
    residue_of = np.repeat(
        np.arange(num_strands * residues_per_strand, dtype=np.int64), beads_per_residue
    )
    chain_of = np.repeat(np.arange(num_strands, dtype=np.int64), beads_per_strand)
    graph = ProteinGraph(
        positions=positions.astype(np.float32),
        features=np.zeros((n, NUM_FEATURES), dtype=np.float32),
        adj_A=adj,
        adj_B=adj.copy(),
        residue_of=residue_of,
        ca_index=np.full(num_strands * residues_per_strand, -1, dtype=np.int64),
        chain_of=chain_of,
        elem_idx=np.zeros(n, dtype=np.int64),
    )
    graph.validate()
    return build_hierarchy(graph)
