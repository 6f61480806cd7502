"""Graph coarsening: cluster assignments and the 5-level hierarchy.

Levels: atoms, spectrally halved atoms within each residue, one node
per residue at the alpha carbon, then two rounds of pairwise backbone
merging per chain. Each pooling step is a binary assignment matrix P
with cluster sizes D; positions and features pool as D^-1 P^T X and
adjacencies as the binarized P^T A P with a zeroed diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import templates
from .errors import DisconnectedGraphError, GraphFormatError, ShapeError
from .multigraph import (
    CA_ABSENT,
    GRAPH_MAGIC,
    GRAPH_VERSION,
    ProteinGraph,
    _check_envelope,
    _read_base_graph,
    _read_edges,
    _write_base_graph,
    _write_edges,
    _Writer,
)
from .pdb import ProteinStructure

_UNDEFINED = 0xFFFFFFFF


@dataclass
class PoolingMatrix:
    """Binary assignment of fine nodes to clusters, one cluster per node."""

    assignment: np.ndarray  # (n,) int64 cluster id per fine node
    num_clusters: int
    positions_mode: str = "average"  # or "explicit"
    explicit_src: np.ndarray | None = None  # (m,) int64 atom-level index, -1 = average

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        sizes = np.bincount(self.assignment, minlength=self.num_clusters)
        if self.assignment.min(initial=0) < 0 or (
            self.assignment.size and self.assignment.max() >= self.num_clusters
        ):
            raise ShapeError("cluster id out of range")
        if (sizes == 0).any():
            raise ShapeError("empty cluster in pooling matrix")

    @property
    def matrix(self) -> sp.csr_matrix:
        n = len(self.assignment)
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n), self.assignment)),
            shape=(n, self.num_clusters),
        )

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)


@dataclass
class GraphHierarchy:
    levels: list[ProteinGraph]
    pools: list[PoolingMatrix]

    def validate(self):
        if len(self.pools) != len(self.levels) - 1:
            raise ShapeError("pool count must be level count minus one")
        for k, pool in enumerate(self.pools):
            if len(pool.assignment) != self.levels[k].num_nodes:
                raise ShapeError(f"pool {k} rows != level {k} nodes")
            if pool.num_clusters != self.levels[k + 1].num_nodes:
                raise ShapeError(f"pool {k} clusters != level {k + 1} nodes")

    @property
    def level_sizes(self) -> list[int]:
        return [g.num_nodes for g in self.levels]


# ---------------------------------------------------------------------------
# spectral clustering


def _kmeans(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100, restarts: int = 10
):
    """Best of several k-means++ seeded Lloyd runs, by within-cluster SSE.

    All restarts draw from the one generator, so the result is a pure
    function of (points, k, seed). Ties go to the earliest restart; the
    assignment argmin already breaks point ties toward the lowest index.
    """
    best_assign = None
    best_sse = np.inf
    for _ in range(restarts):
        assign = _lloyd(points, k, rng, max_iter)
        centers = np.stack([points[assign == c].mean(axis=0) for c in range(k)])
        sse = ((points - centers[assign]) ** 2).sum()
        if sse < best_sse:
            best_sse = sse
            best_assign = assign
    return best_assign


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            taken = set(chosen)
            chosen.append(next(i for i in range(n) if i not in taken))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, ((points - points[chosen[-1]]) ** 2).sum(axis=1))

    centers = points[chosen].astype(np.float64).copy()
    assign = None
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist, axis=1)
        for c in range(k):
            if (new_assign == c).any():
                continue
            # split the largest cluster at its farthest member
            sizes = np.bincount(new_assign, minlength=k)
            big = int(np.argmax(sizes))
            members = np.nonzero(new_assign == big)[0]
            far = members[int(np.argmax(dist[members, big]))]
            new_assign[far] = c
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
    return assign


def spectral_cluster(adjacency: sp.spmatrix, num_clusters: int) -> np.ndarray:
    """Cluster ids from the unnormalized Laplacian embedding.

    Deterministic: k-means runs from a fixed seed with lowest-index tie
    breaking. Disconnected graphs are rejected; cluster components
    separately instead.
    """
    adjacency = sp.csr_matrix(adjacency)
    n = adjacency.shape[0]
    if not 1 <= num_clusters <= n:
        raise ValueError(f"num_clusters {num_clusters} outside [1, {n}]")
    pieces, _ = connected_components(adjacency, directed=False)
    if pieces > 1:
        raise DisconnectedGraphError(f"{pieces} components; cluster them separately")
    if num_clusters == 1:
        return np.zeros(n, dtype=np.int64)
    if num_clusters == n:
        return np.arange(n, dtype=np.int64)
    dense = adjacency.toarray().astype(np.float64)
    laplacian = np.diag(dense.sum(axis=1)) - dense
    _, vecs = np.linalg.eigh(laplacian)
    embedding = vecs[:, :num_clusters]
    return _kmeans(embedding, num_clusters, np.random.default_rng(0)).astype(np.int64)


def _cluster_halving(adjacency: sp.spmatrix) -> np.ndarray:
    """ceil(k/2) clusters per connected component, ids by first appearance."""
    adjacency = sp.csr_matrix(adjacency)
    n = adjacency.shape[0]
    pieces, labels = connected_components(adjacency, directed=False)
    if pieces == 1:
        return spectral_cluster(adjacency, -(-n // 2))
    assign = np.full(n, -1, dtype=np.int64)
    offset = 0
    for comp in _by_first_appearance(labels):
        members = np.nonzero(labels == comp)[0]
        sub = adjacency[members][:, members]
        local = spectral_cluster(sub, -(-len(members) // 2))
        assign[members] = local + offset
        offset += int(local.max()) + 1
    return assign


def _by_first_appearance(labels: np.ndarray) -> list[int]:
    seen: dict[int, None] = {}
    for v in labels.tolist():
        seen.setdefault(v, None)
    return list(seen)


_template_cache: dict[str, tuple[tuple[str, ...], PoolingMatrix]] = {}


def residue_template_pooling(code: str) -> tuple[tuple[str, ...], PoolingMatrix] | None:
    """Memoized halving assignment on the ideal residue graph."""
    if code in _template_cache:
        return _template_cache[code]
    built = templates.residue_graph(code)
    if built is None:
        return None
    names, adj = built
    assignment = _cluster_halving(adj)
    entry = (names, PoolingMatrix(assignment, int(assignment.max()) + 1))
    _template_cache[code] = entry
    return entry


def amino_pool_matrix(
    subgraph: sp.spmatrix,
    res_code: str | None = None,
    atom_names: list[str] | None = None,
) -> PoolingMatrix:
    """Halving assignment for one residue's covalent subgraph.

    Complete canonical residues reuse the cached template assignment,
    mapped by atom name; anything else is clustered from the graph it
    actually has.
    """
    if res_code is not None and atom_names is not None:
        cached = residue_template_pooling(res_code)
        if cached is not None:
            names, pool = cached
            if sorted(names) == sorted(atom_names):
                order = {name: i for i, name in enumerate(names)}
                mapped = pool.assignment[[order[a] for a in atom_names]]
                return PoolingMatrix(_renumber(mapped), pool.num_clusters)
    assignment = _cluster_halving(subgraph)
    return PoolingMatrix(assignment, int(assignment.max()) + 1)


def _renumber(assignment: np.ndarray) -> np.ndarray:
    """Relabel cluster ids to consecutive ints by first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty_like(assignment)
    for i, v in enumerate(assignment.tolist()):
        out[i] = mapping.setdefault(v, len(mapping))
    return out


# ---------------------------------------------------------------------------
# applying a pooling step


def apply_pooling(
    graph: ProteinGraph,
    pool: PoolingMatrix,
    explicit_positions: np.ndarray | None = None,
) -> ProteinGraph:
    """Coarsen a graph: averaged positions/features, binarized adjacency."""
    n = graph.num_nodes
    if len(pool.assignment) != n:
        raise ShapeError(f"pooling rows {len(pool.assignment)} != graph nodes {n}")
    p64 = sp.csr_matrix(
        (np.ones(n, dtype=np.float64), (np.arange(n), pool.assignment)),
        shape=(n, pool.num_clusters),
    )
    sizes = pool.cluster_sizes.astype(np.float64)[:, None]

    positions = (p64.T @ graph.positions.astype(np.float64)) / sizes
    if explicit_positions is not None:
        positions = np.asarray(explicit_positions, dtype=np.float64)
    features = (p64.T @ graph.features.astype(np.float64)) / sizes

    def coarsen(adj):
        out = (p64.T @ adj.astype(np.float64) @ p64).tocsr()
        out.setdiag(0)
        out.eliminate_zeros()
        out.data = np.ones_like(out.data)
        return out.astype(np.float32)

    return ProteinGraph(
        positions.astype(np.float32),
        features.astype(np.float32),
        coarsen(graph.adj_A),
        coarsen(graph.adj_B),
    )


# ---------------------------------------------------------------------------
# the four hierarchy steps


def amino_pool(
    graph: ProteinGraph, structure: ProteinStructure | None = None
) -> tuple[PoolingMatrix, ProteinGraph]:
    """Halve within every residue; clusters inherit the residue ordinal."""
    if graph.residue_of is None:
        raise ShapeError("amino pooling needs residue_of")
    num_res = graph.num_residues
    assignment = np.full(graph.num_nodes, -1, dtype=np.int64)
    cluster_res: list[int] = []
    offset = 0
    for r in range(num_res):
        members = np.nonzero(graph.residue_of == r)[0]
        sub = graph.adj_A[members][:, members]
        code = names = None
        if structure is not None:
            res = structure.residues[r]
            code = res.res_name
            names = [a.name for a in res.atoms]
        local = amino_pool_matrix(sub, code, names)
        assignment[members] = local.assignment + offset
        cluster_res.extend([r] * local.num_clusters)
        offset += local.num_clusters

    pool = PoolingMatrix(assignment, offset)
    pooled = apply_pooling(graph, pool)
    pooled.residue_of = np.asarray(cluster_res, dtype=np.int64)
    if graph.chain_of is not None:
        chain_of_res = np.zeros(num_res, dtype=np.int64)
        chain_of_res[graph.residue_of] = graph.chain_of
        pooled.chain_of = chain_of_res[pooled.residue_of]
    return pool, pooled


def alpha_carbon_pool(
    graph: ProteinGraph,
    atom_positions: np.ndarray | None = None,
    ca_atom_index: np.ndarray | None = None,
) -> tuple[PoolingMatrix, ProteinGraph]:
    """One cluster per residue, positioned at its alpha carbon.

    atom_positions/ca_atom_index locate the CA coordinates at the atom
    level; they default to the graph's own fields. Residues without a
    CA fall back to the averaged member position.
    """
    if graph.residue_of is None:
        raise ShapeError("alpha-carbon pooling needs residue_of")
    if atom_positions is None:
        atom_positions = graph.positions
    if ca_atom_index is None:
        ca_atom_index = graph.ca_index
    num_res = int(graph.residue_of.max()) + 1
    src = np.asarray(ca_atom_index, dtype=np.int64).copy()
    pool = PoolingMatrix(graph.residue_of.copy(), num_res, "explicit", src)

    averaged = apply_pooling(graph, pool)
    positions = averaged.positions.copy()
    has_ca = src >= 0
    positions[has_ca] = np.asarray(atom_positions, dtype=np.float32)[src[has_ca]]
    averaged.positions = positions
    averaged.residue_of = np.arange(num_res, dtype=np.int64)
    if graph.chain_of is not None:
        chain_of_res = np.zeros(num_res, dtype=np.int64)
        chain_of_res[graph.residue_of] = graph.chain_of
        averaged.chain_of = chain_of_res
    return pool, averaged


def backbone_pool(graph: ProteinGraph) -> tuple[PoolingMatrix, ProteinGraph]:
    """Merge consecutive node pairs within each chain; odd tails stay single."""
    if graph.chain_of is None:
        raise ShapeError("backbone pooling needs per-node chain ids")
    chain_of = graph.chain_of
    assignment = np.empty(graph.num_nodes, dtype=np.int64)
    cluster_ids: dict[tuple[int, int], int] = {}
    cluster_chain: list[int] = []
    counters: dict[int, int] = {}
    for i in range(graph.num_nodes):
        chain = int(chain_of[i])
        pos = counters.get(chain, 0)
        counters[chain] = pos + 1
        key = (chain, pos // 2)
        if key not in cluster_ids:
            cluster_ids[key] = len(cluster_ids)
            cluster_chain.append(chain)
        assignment[i] = cluster_ids[key]

    pool = PoolingMatrix(assignment, len(cluster_ids))
    pooled = apply_pooling(graph, pool)
    pooled.chain_of = np.asarray(cluster_chain, dtype=np.int64)
    return pool, pooled


def build_hierarchy(
    graph: ProteinGraph, structure: ProteinStructure | None = None
) -> GraphHierarchy:
    """Atoms -> halved atoms -> alpha carbons -> backbone/2 -> backbone/4."""
    base = graph
    if base.chain_of is None or base.residue_of is None or base.ca_index is None:
        raise ShapeError("hierarchy needs residue_of, ca_index and chain_of")
    p1, lvl1 = amino_pool(base, structure)
    p2, lvl2 = alpha_carbon_pool(lvl1, base.positions, base.ca_index)
    p3, lvl3 = backbone_pool(lvl2)
    p4, lvl4 = backbone_pool(lvl3)
    hierarchy = GraphHierarchy([base, lvl1, lvl2, lvl3, lvl4], [p1, p2, p3, p4])
    hierarchy.validate()
    return hierarchy


def recompute_positions(hierarchy: GraphHierarchy, atom_positions: np.ndarray):
    """Propagate new atom coordinates up the hierarchy in place.

    Used after train-time geometric augmentation; adjacencies and
    assignments are conformation-independent and stay untouched.
    """
    pos = np.asarray(atom_positions, dtype=np.float64)
    hierarchy.levels[0].positions = pos.astype(np.float32)
    base = pos
    for pool, level in zip(hierarchy.pools, hierarchy.levels[1:]):
        sizes = pool.cluster_sizes.astype(np.float64)[:, None]
        summed = np.zeros((pool.num_clusters, 3), dtype=np.float64)
        np.add.at(summed, pool.assignment, pos)
        nxt = summed / sizes
        if pool.positions_mode == "explicit":
            has_src = pool.explicit_src >= 0
            nxt[has_src] = base[pool.explicit_src[has_src]]
        level.positions = nxt.astype(np.float32)
        pos = nxt


# ---------------------------------------------------------------------------
# hierarchy serialization (shares the graph container)


def serialize_hierarchy(hierarchy: GraphHierarchy) -> bytes:
    hierarchy.validate()
    w = _Writer()
    w.parts.append(GRAPH_MAGIC)
    w.pack("H", GRAPH_VERSION)
    _write_base_graph(w, hierarchy.levels[0])
    w.pack("H", len(hierarchy.levels))
    for pool, level in zip(hierarchy.pools, hierarchy.levels[1:]):
        w.pack("I", len(pool.assignment))
        w.array(pool.assignment, "<u4")
        w.pack("B", 1 if pool.positions_mode == "explicit" else 0)
        if pool.positions_mode == "explicit":
            src = np.where(pool.explicit_src < 0, _UNDEFINED, pool.explicit_src)
            w.array(src, "<u4")
        n = level.num_nodes
        t = level.features.shape[1]
        w.pack("IH", n, t)
        w.array(level.positions, "<f4")
        w.array(level.features, "<f4")
        _write_edges(w, level.adj_A)
        _write_edges(w, level.adj_B)
        ro = level.residue_of if level.residue_of is not None else np.full(n, -1)
        w.array(np.where(np.asarray(ro) < 0, _UNDEFINED, ro), "<u4")
        co = level.chain_of if level.chain_of is not None else np.full(n, -1)
        w.array(np.where(np.asarray(co) < 0, _UNDEFINED, co), "<u4")
    return w.finish()


def deserialize_hierarchy(data: bytes) -> GraphHierarchy:
    r = _check_envelope(data)
    base = _read_base_graph(r)
    level_count = r.unpack("H")
    if level_count < 1:
        raise GraphFormatError("level count must be at least 1")
    levels = [base]
    pools = []
    for _ in range(level_count - 1):
        rows = r.unpack("I")
        assignment = r.array("<u4", rows).astype(np.int64)
        mode = r.unpack("B")
        num_clusters = int(assignment.max()) + 1 if rows else 0
        explicit_src = None
        if mode == 1:
            explicit_src = r.array("<u4", num_clusters).astype(np.int64)
            explicit_src[explicit_src == _UNDEFINED] = -1
        pools.append(
            PoolingMatrix(
                assignment,
                num_clusters,
                "explicit" if mode == 1 else "average",
                explicit_src,
            )
        )
        n, t = r.unpack("IH")
        positions = r.array("<f4", 3 * n).reshape(n, 3)
        features = r.array("<f4", t * n).reshape(n, t)
        adj_a = _read_edges(r, n)
        adj_b = _read_edges(r, n)
        residue_of = r.array("<u4", n).astype(np.int64)
        chain_of = r.array("<u4", n).astype(np.int64)
        residue_of[residue_of == _UNDEFINED] = -1
        chain_of[chain_of == _UNDEFINED] = -1
        levels.append(
            ProteinGraph(
                positions,
                features,
                adj_a,
                adj_b,
                residue_of if (residue_of >= 0).all() else None,
                None,
                chain_of if (chain_of >= 0).all() else None,
                None,
            )
        )
    hierarchy = GraphHierarchy(levels, pools)
    hierarchy.validate()
    return hierarchy
