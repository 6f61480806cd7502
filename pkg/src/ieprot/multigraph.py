"""Protein multi-graph: positions, features, dual adjacencies, distances.

The graph couples one extrinsic geometry (3D positions) with two
intrinsic ones: hop distance over the covalent adjacency A and over the
covalent-plus-hydrogen adjacency B. Neighbor tables pair every atom
inside a Euclidean ball with its normalized (extrinsic, intrinsic,
intrinsic) distance triple, the raw input of the convolution kernel.
"""

from __future__ import annotations

import struct
import zlib
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .chemistry import BondList
from .elements import DEFAULT_TABLE, ElementProps, NUM_ELEMENTS, standardized_features
from .errors import GraphFormatError, ShapeError
from .pdb import ProteinStructure

GRAPH_MAGIC = b"IECG"
GRAPH_VERSION = 1
CA_ABSENT = 0xFFFFFFFF
NUM_FEATURES = 6  # 3 standardized physical + 3 atom-embedding columns

# above this node count, hop lookup tables are not materialized and
# neighbor assembly falls back to per-center searches
_DENSE_LIMIT = 4096


@dataclass
class ProteinGraph:
    positions: np.ndarray  # (n, 3) float32, angstrom
    features: np.ndarray  # (n, t) float32
    adj_A: sp.csr_matrix  # covalent, binary symmetric, zero diagonal
    adj_B: sp.csr_matrix  # covalent + hydrogen
    residue_of: np.ndarray | None = None  # (n,) int64, atom -> residue ordinal
    ca_index: np.ndarray | None = None  # (R,) int64, -1 when the residue has no CA
    chain_of: np.ndarray | None = None  # (n,) int64, node -> chain ordinal
    elem_idx: np.ndarray | None = None  # (n,) int64, atom -> embedding row

    @property
    def num_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def num_residues(self) -> int:
        return 0 if self.ca_index is None else len(self.ca_index)

    def validate(self):
        n = self.num_nodes
        if self.features.shape[0] != n:
            raise ShapeError(f"feature rows {self.features.shape[0]} != node count {n}")
        for name, adj in (("A", self.adj_A), ("B", self.adj_B)):
            if adj.shape != (n, n):
                raise ShapeError(f"adjacency {name} shape {adj.shape} != ({n}, {n})")
            if (adj != adj.T).nnz != 0:
                raise ShapeError(f"adjacency {name} not symmetric")
            if adj.diagonal().any():
                raise ShapeError(f"adjacency {name} has diagonal entries")
        if (self.adj_B - self.adj_A).min() < 0:
            raise ShapeError("covalent edges missing from adjacency B")


def edges_to_adjacency(edges, n: int) -> sp.csr_matrix:
    """Symmetric binary CSR matrix from (i, j) pairs, i != j."""
    if len(edges) == 0:
        return sp.csr_matrix((n, n), dtype=np.float32)
    arr = np.asarray(list(edges), dtype=np.int64)
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    data = np.ones(len(rows), dtype=np.float32)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0  # collapse duplicates
    return adj


def adjacency_to_edges(adj: sp.spmatrix) -> np.ndarray:
    """Upper-triangle edge pairs, lexicographically sorted, (m, 2) int64."""
    coo = sp.triu(adj, k=1).tocoo()
    pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def build_multigraph(
    structure: ProteinStructure,
    covalent: BondList,
    hydrogen: BondList,
    embedding: np.ndarray | None = None,
    element_table: dict[str, ElementProps] | None = None,
) -> ProteinGraph:
    """Assemble the multi-graph from a parsed structure and its bond lists.

    Feature columns: standardized covalent radius, vdW radius, mass,
    then the 3 embedding-table values for the element. The embedding
    columns are a materialized snapshot; models gather live values
    through elem_idx instead.
    """
    table = DEFAULT_TABLE if element_table is None else element_table
    if embedding is None:
        embedding = np.zeros((len(table), 3), dtype=np.float32)
    n = structure.num_atoms
    positions = structure.positions().astype(np.float32)
    features = np.empty((n, NUM_FEATURES), dtype=np.float32)
    elem_idx = np.empty(n, dtype=np.int64)
    for i, _, atom in structure.iter_atoms():
        features[i, :3] = standardized_features(atom.element, table)
        elem_idx[i] = table[atom.element].embed_index
    features[:, 3:] = embedding[elem_idx]

    adj_a = edges_to_adjacency(covalent.edges, n)
    adj_b = edges_to_adjacency(list(covalent.edges) + list(hydrogen.edges), n)

    residue_of = structure.atom_residue_ordinals()
    num_res = len(structure.residues)
    ca_index = np.full(num_res, -1, dtype=np.int64)
    spans_start = 0
    chain_ids: dict[str, int] = {}
    chain_of_res = np.empty(num_res, dtype=np.int64)
    for ri, res in enumerate(structure.residues):
        chain_of_res[ri] = chain_ids.setdefault(res.chain_id, len(chain_ids))
        for k, atom in enumerate(res.atoms):
            if atom.name == "CA":
                ca_index[ri] = spans_start + k
                break
        spans_start += len(res.atoms)

    graph = ProteinGraph(
        positions, features, adj_a, adj_b, residue_of, ca_index, chain_of_res[residue_of], elem_idx
    )
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# spatial queries


class SpatialGrid:
    """Uniform hash grid with cell size equal to the query radius."""

    def __init__(self, positions: np.ndarray, radius: float):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.positions = np.asarray(positions, dtype=np.float64)
        self.radius = float(radius)
        cells = np.floor(self.positions / self.radius).astype(np.int64)
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        for i, key in enumerate(map(tuple, cells)):
            self._cells.setdefault(key, []).append(i)

    def query(self, center) -> np.ndarray:
        """Indices with euclidean distance <= radius, ascending."""
        center = np.asarray(center, dtype=np.float64)
        cx, cy, cz = np.floor(center / self.radius).astype(np.int64)
        candidates: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = self._cells.get((cx + dx, cy + dy, cz + dz))
                    if bucket:
                        candidates.extend(bucket)
        if not candidates:
            return np.empty(0, dtype=np.int64)
        idx = np.array(sorted(candidates), dtype=np.int64)
        delta = self.positions[idx] - center
        d2 = (delta * delta).sum(axis=1)
        return idx[d2 <= self.radius * self.radius]


def ball_query(positions: np.ndarray, center, radius: float) -> np.ndarray:
    return SpatialGrid(positions, radius).query(center)


# ---------------------------------------------------------------------------
# intrinsic distances


def hop_distances(adjacency: sp.spmatrix, source: int, cap: int) -> dict[int, int]:
    """Breadth-first hop counts from source, truncated at cap.

    Nodes farther than cap hops are absent; downstream code reads
    absence as distance = cap.
    """
    adjacency = adjacency.tocsr()
    indptr, indices = adjacency.indptr, adjacency.indices
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        d = dist[node]
        if d >= cap:
            continue
        for nbr in indices[indptr[node] : indptr[node + 1]]:
            nbr = int(nbr)
            if nbr not in dist:
                dist[nbr] = d + 1
                queue.append(nbr)
    return dist


def capped_hop_matrix(adjacency: sp.spmatrix, cap: int) -> np.ndarray:
    """Per-center capped BFS collected into an (n, n) int16 table.

    Entry [s, v] is the hop count when it is at most cap; everything
    farther, including unreachable pairs, holds cap + 1. Kernel inputs
    saturate with min(entry, cap); neighborhood membership tests use
    entry <= cap.
    """
    adjacency = adjacency.tocsr()
    n = adjacency.shape[0]
    indptr, indices = adjacency.indptr, adjacency.indices
    out = np.full((n, n), cap + 1, dtype=np.int16)
    visited = np.zeros(n, dtype=bool)
    for s in range(n):
        row = out[s]
        row[s] = 0
        visited[:] = False
        visited[s] = True
        frontier = [s]
        for d in range(1, cap + 1):
            nxt: list[int] = []
            for f in frontier:
                block = indices[indptr[f] : indptr[f + 1]]
                fresh = block[~visited[block]]
                if fresh.size:
                    visited[fresh] = True
                    row[fresh] = d
                    nxt.extend(fresh.tolist())
            if not nxt:
                break
            frontier = nxt
    return out


# ---------------------------------------------------------------------------
# neighbor tables


@dataclass
class NeighborTable:
    """All (center, neighbor) pairs within the ball radius, center-major.

    kernel_inputs rows are (de/me, min(di1, m1)/m1, min(di2, m2)/m2),
    each clamped to [0, 1]; the center itself appears with (0, 0, 0).
    rel_offsets carries (neighbor - center)/me when position offsets
    were requested.
    """

    offsets: np.ndarray  # (n+1,) int64 CSR pointers into the pair arrays
    centers: np.ndarray  # (E,) int32
    neighbors: np.ndarray  # (E,) int32
    kernel_inputs: np.ndarray  # (E, 3) float32
    radius: float
    cap_1: int
    cap_2: int
    rel_offsets: np.ndarray | None = None  # (E, 3) float32

    @property
    def num_centers(self) -> int:
        return len(self.offsets) - 1

    def neighbors_of(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[x], self.offsets[x + 1]
        return self.neighbors[lo:hi], self.kernel_inputs[lo:hi]


def _ball_pairs(positions: np.ndarray, radius: float):
    """(centers, neighbors, distances) for all pairs with d <= radius."""
    n = len(positions)
    pos = np.asarray(positions, dtype=np.float64)
    if n <= _DENSE_LIMIT:
        delta = pos[:, None, :] - pos[None, :, :]
        d2 = (delta * delta).sum(axis=2)
        mask = d2 <= radius * radius
        centers, neighbors = np.nonzero(mask)
        return centers, neighbors, np.sqrt(d2[centers, neighbors])
    grid = SpatialGrid(pos, radius)
    centers_l, neighbors_l, dist_l = [], [], []
    for x in range(n):
        idx = grid.query(pos[x])
        centers_l.append(np.full(idx.shape, x, dtype=np.int64))
        neighbors_l.append(idx)
        delta = pos[idx] - pos[x]
        dist_l.append(np.sqrt((delta * delta).sum(axis=1)))
    return np.concatenate(centers_l), np.concatenate(neighbors_l), np.concatenate(dist_l)


class NeighborTableBuilder:
    """Rebuilds neighbor tables cheaply as positions change.

    Hop distances depend only on the adjacencies, so the capped
    per-center searches run once up front; each build then only redoes
    the Euclidean part. Beyond the dense size limit the hop tables are
    not cached and every build searches per center.
    """

    def __init__(self, adj_a: sp.spmatrix, adj_b: sp.spmatrix, cap_1: int, cap_2: int):
        self.adj_a = adj_a.tocsr()
        self.adj_b = adj_b.tocsr()
        self.cap_1 = int(cap_1)
        self.cap_2 = int(cap_2)
        n = self.adj_a.shape[0]
        if n <= _DENSE_LIMIT:
            self._lut_a = capped_hop_matrix(self.adj_a, self.cap_1)
            self._lut_b = capped_hop_matrix(self.adj_b, self.cap_2)
        else:
            self._lut_a = self._lut_b = None

    def _hops(self, lut, adj, cap, centers, neighbors):
        if lut is not None:
            return lut[centers, neighbors].astype(np.float64)
        out = np.empty(len(centers), dtype=np.float64)
        bounds = np.searchsorted(centers, np.arange(adj.shape[0] + 1))
        for x in range(adj.shape[0]):
            lo, hi = bounds[x], bounds[x + 1]
            if lo == hi:
                continue
            dist = hop_distances(adj, x, cap)
            out[lo:hi] = [dist.get(int(v), cap + 1) for v in neighbors[lo:hi]]
        return out

    def _hop_pairs(self, adj, cap, lut):
        """All (center, neighbor) pairs within cap hops, center-major."""
        if lut is not None:
            centers, neighbors = np.nonzero(lut <= cap)
            return centers, neighbors
        n = adj.shape[0]
        centers_l, neighbors_l = [], []
        for x in range(n):
            reach = np.array(sorted(hop_distances(adj, x, cap)), dtype=np.int64)
            centers_l.append(np.full(reach.shape, x, dtype=np.int64))
            neighbors_l.append(reach)
        return np.concatenate(centers_l), np.concatenate(neighbors_l)

    def build(
        self,
        positions: np.ndarray,
        radius: float,
        with_offsets: bool = False,
        neighborhood: str = "euclidean",
    ) -> NeighborTable:
        """Neighbor pairs plus kernel inputs for the current positions.

        neighborhood selects how pairs are found: "euclidean" takes the
        closed ball of the given radius, "covalent" and "hydrogen" take
        everything within the hop cap on the corresponding adjacency
        (the ablation neighborhoods); kernel inputs are computed the
        same way in all cases.
        """
        if radius <= 0:
            raise ValueError("radius must be positive")
        pos = np.asarray(positions, dtype=np.float64)
        if neighborhood == "euclidean":
            centers, neighbors, dists = _ball_pairs(pos, radius)
        elif neighborhood in ("covalent", "hydrogen"):
            if neighborhood == "covalent":
                centers, neighbors = self._hop_pairs(self.adj_a, self.cap_1, self._lut_a)
            else:
                centers, neighbors = self._hop_pairs(self.adj_b, self.cap_2, self._lut_b)
            delta = pos[neighbors] - pos[centers]
            dists = np.sqrt((delta * delta).sum(axis=1))
        else:
            raise ValueError(f"unknown neighborhood {neighborhood!r}")
        n = len(pos)
        de = np.clip(dists / radius, 0.0, 1.0)
        hops1 = self._hops(self._lut_a, self.adj_a, self.cap_1, centers, neighbors)
        hops2 = self._hops(self._lut_b, self.adj_b, self.cap_2, centers, neighbors)
        di1 = np.minimum(hops1, self.cap_1) / self.cap_1
        di2 = np.minimum(hops2, self.cap_2) / self.cap_2
        kinputs = np.stack([de, di1, di2], axis=1).astype(np.float32)
        offsets = np.searchsorted(centers, np.arange(n + 1))
        rel = None
        if with_offsets:
            rel = ((pos[neighbors] - pos[centers]) / radius).astype(np.float32)
        return NeighborTable(
            offsets,
            centers.astype(np.int32),
            neighbors.astype(np.int32),
            kinputs,
            float(radius),
            self.cap_1,
            self.cap_2,
            rel,
        )


def build_neighbor_table(
    graph: ProteinGraph,
    m_e: float,
    m_1: int,
    m_2: int,
    with_offsets: bool = False,
) -> NeighborTable:
    if m_1 < 1 or m_2 < 1:
        raise ValueError("hop caps must be >= 1")
    builder = NeighborTableBuilder(graph.adj_A, graph.adj_B, m_1, m_2)
    return builder.build(graph.positions, m_e, with_offsets)


# ---------------------------------------------------------------------------
# serialization


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def array(self, arr: np.ndarray, dtype: str):
        self.parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def finish(self) -> bytes:
        payload = b"".join(self.parts)
        return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise GraphFormatError("truncated graph data")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise GraphFormatError("truncated graph data")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out


def _write_edges(w: _Writer, adj: sp.spmatrix):
    pairs = adjacency_to_edges(adj)
    w.pack("I", len(pairs))
    w.array(pairs.reshape(-1), "<u4")


def _read_edges(r: _Reader, n: int) -> sp.csr_matrix:
    count = r.unpack("I")
    pairs = r.array("<u4", 2 * count).reshape(-1, 2).astype(np.int64)
    if count and pairs.max() >= n:
        raise GraphFormatError("edge index out of range")
    return edges_to_adjacency(pairs, n)


def _write_base_graph(w: _Writer, graph: ProteinGraph):
    n = graph.num_nodes
    t = graph.features.shape[1]
    w.pack("IH", n, t)
    w.array(graph.positions, "<f4")
    w.array(graph.features, "<f4")
    _write_edges(w, graph.adj_A)
    _write_edges(w, graph.adj_B)
    w.array(graph.residue_of, "<u4")
    ca = np.where(graph.ca_index < 0, CA_ABSENT, graph.ca_index)
    w.array(ca, "<u4")
    chain_of_res = np.zeros(len(graph.ca_index), dtype=np.int64)
    chain_of_res[graph.residue_of] = graph.chain_of  # constant within a residue
    w.array(chain_of_res, "<u4")
    w.array(graph.elem_idx, "<u4")


def _read_base_graph(r: _Reader) -> ProteinGraph:
    n, t = r.unpack("IH")
    positions = r.array("<f4", 3 * n).reshape(n, 3)
    features = r.array("<f4", t * n).reshape(n, t)
    adj_a = _read_edges(r, n)
    adj_b = _read_edges(r, n)
    residue_of = r.array("<u4", n).astype(np.int64)
    num_res = int(residue_of.max()) + 1 if n else 0
    ca = r.array("<u4", num_res).astype(np.int64)
    ca[ca == CA_ABSENT] = -1
    chain_of_res = r.array("<u4", num_res).astype(np.int64)
    elem_idx = r.array("<u4", n).astype(np.int64)
    return ProteinGraph(
        positions, features, adj_a, adj_b, residue_of, ca, chain_of_res[residue_of], elem_idx
    )


def _check_envelope(data: bytes) -> _Reader:
    if len(data) < 10:
        raise GraphFormatError("not a graph file: too short")
    if data[:4] != GRAPH_MAGIC:
        raise GraphFormatError(f"bad magic {data[:4]!r}")
    (stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored:
        raise GraphFormatError("checksum mismatch")
    r = _Reader(data[:-4])
    r.pos = 4
    version = r.unpack("H")
    if version != GRAPH_VERSION:
        raise GraphFormatError(f"unsupported graph format version {version}")
    return r


def serialize_graph(graph: ProteinGraph) -> bytes:
    """Single-level graph file; hierarchies extend the same container."""
    w = _Writer()
    w.parts.append(GRAPH_MAGIC)
    w.pack("H", GRAPH_VERSION)
    _write_base_graph(w, graph)
    w.pack("H", 1)  # level count
    return w.finish()


def deserialize_graph(data: bytes) -> ProteinGraph:
    """Base-level graph from a graph or hierarchy file."""
    r = _check_envelope(data)
    return _read_base_graph(r)
