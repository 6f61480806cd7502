import struct
import zlib

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_array_equal

import ieprot.multigraph as mg
from ieprot.chemistry import BondList, infer_covalent_bonds
from ieprot.elements import DEFAULT_TABLE, standardized_features
from ieprot.errors import GraphFormatError, ShapeError
from ieprot.multigraph import (
    NeighborTableBuilder,
    ProteinGraph,
    adjacency_to_edges,
    ball_query,
    build_multigraph,
    build_neighbor_table,
    capped_hop_matrix,
    deserialize_graph,
    edges_to_adjacency,
    hop_distances,
    serialize_graph,
)
from ieprot.pdb import Atom, ProteinStructure, Residue

from synth import floyd_warshall_hops, random_adjacency, random_connected_adjacency


def structure_of(*residue_specs):
    """ProteinStructure from (chain, seq, name, [(atom, element, xyz), ...])."""
    residues = []
    serial = 1
    for chain, seq, name, atoms in residue_specs:
        built = []
        for an, el, pos in atoms:
            built.append(Atom(serial, an, el, np.array(pos, dtype=np.float64)))
            serial += 1
        residues.append(Residue(chain, seq, "", name, built))
    return ProteinStructure(residues)


def superset_adjacency(rng, base):
    """base plus extra random symmetric edges, as binary CSR."""
    extra = random_adjacency(rng, base.shape[0], p=0.1)
    return sp.csr_matrix(((base + extra) != 0).astype(np.float32))


class TestBallQuery:
    def test_line_of_atoms(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]], dtype=float)
        assert_array_equal(ball_query(pos, (0, 0, 0), 2.5), [0, 1, 2])

    def test_radius_below_min_spacing_returns_center_only(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]], dtype=float)
        assert_array_equal(ball_query(pos, (1, 0, 0), 0.5), [1])

    def test_closed_ball_includes_boundary(self):
        pos = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        assert_array_equal(ball_query(pos, (0, 0, 0), 3.0), [0, 1])

    def test_matches_linear_scan(self):
        # 200 atoms in a 20 A box; negative coordinates exercise the
        # floor-based cell hashing on both sides of zero
        rng = np.random.default_rng(3)
        pos = rng.uniform(-10.0, 10.0, size=(200, 3))
        radius = 6.0
        centers = list(pos[rng.integers(0, 200, size=10)]) + list(
            rng.uniform(-12.0, 12.0, size=(10, 3))
        )
        for center in centers:
            expected = np.nonzero(np.linalg.norm(pos - center, axis=1) <= radius)[0]
            assert_array_equal(ball_query(pos, center, radius), expected)

    def test_permutation_relabels_result(self):
        rng = np.random.default_rng(4)
        pos = rng.uniform(0.0, 10.0, size=(60, 3))
        perm = rng.permutation(60)
        inverse = np.argsort(perm)
        center = pos[17]
        base = ball_query(pos, center, 4.0)
        shuffled = ball_query(pos[perm], center, 4.0)
        assert_array_equal(shuffled, np.sort(inverse[base]))

    def test_rejects_nonpositive_radius(self):
        pos = np.zeros((1, 3))
        with pytest.raises(ValueError):
            ball_query(pos, (0, 0, 0), 0.0)


class TestHopDistances:
    def path3(self):
        return edges_to_adjacency([(0, 1), (1, 2)], 3)

    def test_path_graph(self):
        assert hop_distances(self.path3(), 0, 6) == {0: 0, 1: 1, 2: 2}

    def test_cap_truncates(self):
        assert hop_distances(self.path3(), 0, 1) == {0: 0, 1: 1}

    def test_cap_zero_keeps_source_only(self):
        assert hop_distances(self.path3(), 1, 0) == {1: 0}

    def test_matches_floyd_warshall_at_full_cap(self):
        rng = np.random.default_rng(5)
        for trial in range(30):
            n = int(rng.integers(2, 51))
            if trial % 2:
                adj = random_connected_adjacency(rng, n, extra_edges=n // 2)
            else:
                adj = random_adjacency(rng, n, p=0.15)
            oracle = floyd_warshall_hops(adj, n)
            for source in range(n):
                dist = hop_distances(adj, source, n)
                row = np.full(n, n + 1, dtype=np.int64)
                row[list(dist)] = list(dist.values())
                assert_array_equal(row, oracle[source])

    def test_truncation_keeps_exactly_reachable_within_cap(self):
        rng = np.random.default_rng(6)
        adj = random_connected_adjacency(rng, 25, extra_edges=5)
        full = floyd_warshall_hops(adj, 25)
        for cap in (1, 2, 3, 4):
            for source in (0, 12, 24):
                dist = hop_distances(adj, source, cap)
                expected = {v: int(full[source, v]) for v in range(25) if full[source, v] <= cap}
                assert dist == expected

    def test_triangle_inequality_on_sampled_triples(self):
        rng = np.random.default_rng(7)
        adj = random_connected_adjacency(rng, 30, extra_edges=10)
        rows = [hop_distances(adj, s, 30) for s in range(30)]
        for a, b, c in rng.integers(0, 30, size=(100, 3)):
            assert rows[a][c] <= rows[a][b] + rows[b][c]


class TestCappedHopMatrix:
    def test_matches_floyd_warshall(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            n = int(rng.integers(2, 41))
            if trial % 2:
                adj = random_connected_adjacency(rng, n, extra_edges=n)
            else:
                adj = random_adjacency(rng, n, p=0.1)
            for cap in (1, 3, 6, n):
                assert_array_equal(capped_hop_matrix(adj, cap), floyd_warshall_hops(adj, cap))

    def test_unreachable_holds_sentinel(self):
        # two disjoint edges; cross-component entries read cap + 1
        adj = edges_to_adjacency([(0, 1), (2, 3)], 4)
        table = capped_hop_matrix(adj, 6)
        assert table.dtype == np.int16
        assert table[0, 2] == table[1, 3] == 7
        assert table[0, 1] == 1

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        adj = random_adjacency(rng, 30, p=0.1)
        table = capped_hop_matrix(adj, 4)
        assert_array_equal(table, table.T)


class TestEdgeConversion:
    def test_round_trip_sorted_unique(self):
        pairs = [(3, 1), (0, 2), (0, 1), (4, 3)]
        adj = edges_to_adjacency(pairs, 5)
        expected = np.array(sorted((min(i, j), max(i, j)) for i, j in pairs))
        assert_array_equal(adjacency_to_edges(adj), expected)

    def test_duplicates_and_orientations_collapse(self):
        adj = edges_to_adjacency([(0, 1), (1, 0), (0, 1)], 2)
        assert adj.nnz == 2
        assert adj.max() == 1.0

    def test_empty(self):
        adj = edges_to_adjacency([], 3)
        assert adj.shape == (3, 3) and adj.nnz == 0
        assert adjacency_to_edges(adj).shape == (0, 2)


class TestGraphValidation:
    def graph(self, **overrides):
        fields = dict(
            positions=np.zeros((2, 3), dtype=np.float32),
            features=np.zeros((2, 6), dtype=np.float32),
            adj_A=edges_to_adjacency([(0, 1)], 2),
            adj_B=edges_to_adjacency([(0, 1)], 2),
            residue_of=np.zeros(2, dtype=np.int64),
            ca_index=np.array([-1], dtype=np.int64),
            chain_of=np.zeros(2, dtype=np.int64),
            elem_idx=np.zeros(2, dtype=np.int64),
        )
        fields.update(overrides)
        return ProteinGraph(**fields)

    def test_valid_graph_passes(self):
        self.graph().validate()

    def test_rejects_asymmetric_adjacency(self):
        bad = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=np.float32))
        with pytest.raises(ShapeError, match="symmetric"):
            self.graph(adj_A=bad).validate()

    def test_rejects_diagonal_entries(self):
        bad = sp.csr_matrix(np.eye(2, dtype=np.float32))
        with pytest.raises(ShapeError, match="diagonal"):
            self.graph(adj_B=bad).validate()

    def test_rejects_b_missing_covalent_edge(self):
        with pytest.raises(ShapeError, match="missing"):
            self.graph(adj_B=edges_to_adjacency([], 2)).validate()

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(ShapeError, match="feature rows"):
            self.graph(features=np.zeros((3, 6), dtype=np.float32)).validate()


NO_HBONDS = BondList([], "hydrogen")


class TestBuildMultigraph:
    def test_single_atom(self):
        s = structure_of(("A", 1, "UNK", [("C1", "C", (0, 0, 0))]))
        g = build_multigraph(s, BondList([], "covalent"), NO_HBONDS)
        assert g.positions.shape == (1, 3)
        assert g.features.shape == (1, 6)
        assert g.adj_A.nnz == 0 and g.adj_B.nnz == 0

    def test_no_hbonds_means_equal_adjacencies(self, ala):
        g = build_multigraph(ala, infer_covalent_bonds(ala), NO_HBONDS)
        assert g.adj_A.nnz == 8  # 4 bonds, symmetric
        assert (g.adj_A != g.adj_B).nnz == 0

    def test_standardized_physical_features(self, ala):
        g = build_multigraph(ala, infer_covalent_bonds(ala), NO_HBONDS)
        for i, _, atom in ala.iter_atoms():
            expected = np.asarray(standardized_features(atom.element), dtype=np.float32)
            assert_array_equal(g.features[i, :3], expected)
            assert g.elem_idx[i] == DEFAULT_TABLE[atom.element].embed_index

    def test_embedding_columns_copied_per_element(self, ala):
        embedding = np.arange(3 * len(DEFAULT_TABLE), dtype=np.float32).reshape(-1, 3)
        g = build_multigraph(ala, infer_covalent_bonds(ala), NO_HBONDS, embedding=embedding)
        for i, _, atom in ala.iter_atoms():
            assert_array_equal(g.features[i, 3:], embedding[DEFAULT_TABLE[atom.element].embed_index])

    def test_default_embedding_is_zero(self, ala):
        g = build_multigraph(ala, infer_covalent_bonds(ala), NO_HBONDS)
        assert not g.features[:, 3:].any()

    def test_residue_and_chain_maps(self, dipeptide):
        g = build_multigraph(dipeptide, infer_covalent_bonds(dipeptide), NO_HBONDS)
        assert_array_equal(g.residue_of, [0, 0, 0, 0, 1, 1, 1, 1])
        assert_array_equal(g.ca_index, [1, 5])  # atom order N, CA, C, O
        assert_array_equal(g.chain_of, np.zeros(8))

    def test_chain_ordinals_by_first_appearance(self):
        s = structure_of(
            ("B", 1, "GLY", [("N", "N", (0, 0, 0))]),
            ("A", 1, "GLY", [("N", "N", (10, 0, 0))]),
            ("B", 2, "GLY", [("N", "N", (20, 0, 0))]),
        )
        g = build_multigraph(s, BondList([], "covalent"), NO_HBONDS)
        assert_array_equal(g.chain_of, [0, 1, 0])

    def test_missing_ca_marked_absent(self):
        s = structure_of(
            ("A", 1, "GLY", [("N", "N", (0, 0, 0)), ("CA", "C", (1.5, 0, 0))]),
            ("A", 2, "GLY", [("N", "N", (3, 0, 0))]),
        )
        g = build_multigraph(s, infer_covalent_bonds(s), NO_HBONDS)
        assert_array_equal(g.ca_index, [1, -1])

    def test_hydrogen_bonds_extend_b_only(self, helix):
        from conftest import pipeline

        g, _ = pipeline(helix)
        # the ideal helix carries the 8 i -> i+4 amide bonds
        assert g.adj_B.nnz - g.adj_A.nnz == 16
        assert (g.adj_B - g.adj_A).min() >= 0
        g.validate()


def oracle_pairs(pos, radius):
    """All (x, v) with euclidean distance <= radius, row-major, plus distances."""
    pos = np.asarray(pos, dtype=np.float64)
    delta = pos[:, None, :] - pos[None, :, :]
    d2 = (delta * delta).sum(axis=2)
    mask = d2 <= radius * radius
    centers, neighbors = np.nonzero(mask)
    return centers, neighbors, np.sqrt(d2[centers, neighbors])


def oracle_kernel_inputs(centers, neighbors, dists, adj_a, adj_b, cap1, cap2, radius):
    hops1 = floyd_warshall_hops(adj_a, cap1)[centers, neighbors]
    hops2 = floyd_warshall_hops(adj_b, cap2)[centers, neighbors]
    de = np.clip(dists / radius, 0.0, 1.0)
    di1 = np.minimum(hops1, cap1) / cap1
    di2 = np.minimum(hops2, cap2) / cap2
    return np.stack([de, di1, di2], axis=1).astype(np.float32)


def random_case(rng):
    n = int(rng.integers(5, 31))
    pos = rng.uniform(0.0, 8.0, size=(n, 3))
    adj_a = random_connected_adjacency(rng, n, extra_edges=n // 3)
    adj_b = superset_adjacency(rng, adj_a)
    cap1 = int(rng.integers(1, 7))
    cap2 = int(rng.integers(1, 7))
    return pos, adj_a, adj_b, cap1, cap2


class TestNeighborTable:
    def test_bonded_pair_arithmetic(self):
        pos = np.array([[0.0, 0.0, 0.0], [1.5, 0.0, 0.0]])
        adj = edges_to_adjacency([(0, 1)], 2)
        table = NeighborTableBuilder(adj, adj, 6, 6).build(pos, 3.0)
        nbrs, kin = table.neighbors_of(0)
        assert_array_equal(nbrs, [0, 1])
        assert_array_equal(kin[1], np.array([0.5, 1 / 6, 1 / 6], dtype=np.float32))

    def test_self_row_is_zero_triple(self):
        rng = np.random.default_rng(10)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, 5.0)
        self_rows = table.centers == table.neighbors
        assert self_rows.sum() == len(pos)
        assert not table.kernel_inputs[self_rows].any()

    def test_unreachable_pair_normalizes_to_one(self):
        # two singleton components 2 A apart, well inside the ball
        pos = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        empty = edges_to_adjacency([], 2)
        table = NeighborTableBuilder(empty, empty, 6, 6).build(pos, 4.0)
        nbrs, kin = table.neighbors_of(0)
        assert_array_equal(nbrs, [0, 1])
        assert_array_equal(kin[1], np.array([0.5, 1.0, 1.0], dtype=np.float32))

    def test_matches_all_pairs_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
            radius = float(rng.uniform(2.0, 6.0))
            table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, radius)
            centers, neighbors, dists = oracle_pairs(pos, radius)
            assert_array_equal(table.centers, centers)
            assert_array_equal(table.neighbors, neighbors)
            expected = oracle_kernel_inputs(
                centers, neighbors, dists, adj_a, adj_b, cap1, cap2, radius
            )
            assert_array_equal(table.kernel_inputs, expected)

    def test_layout_and_offsets(self):
        rng = np.random.default_rng(12)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, 5.0)
        assert table.num_centers == len(pos)
        assert (np.diff(table.centers) >= 0).all()
        for x in range(len(pos)):
            nbrs, kin = table.neighbors_of(x)
            sel = table.centers == x
            assert_array_equal(nbrs, table.neighbors[sel])
            assert_array_equal(kin, table.kernel_inputs[sel])

    def test_intrinsic_columns_ordered(self):
        # adj_A is a subgraph of adj_B, so B-hops never exceed A-hops
        rng = np.random.default_rng(13)
        for _ in range(5):
            pos, adj_a, adj_b, cap, _ = random_case(rng)
            table = NeighborTableBuilder(adj_a, adj_b, cap, cap).build(pos, 5.0)
            assert (table.kernel_inputs[:, 1] >= table.kernel_inputs[:, 2]).all()

    def test_rigid_motion_preserves_kernel_inputs(self):
        rng = np.random.default_rng(14)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        builder = NeighborTableBuilder(adj_a, adj_b, cap1, cap2)
        base = builder.build(pos, 5.0)
        theta = 0.83
        rot = np.array(
            [
                [np.cos(theta), -np.sin(theta), 0],
                [np.sin(theta), np.cos(theta), 0],
                [0, 0, 1],
            ]
        )
        moved = builder.build(pos @ rot.T + np.array([3.0, -2.0, 7.0]), 5.0)
        assert_array_equal(moved.centers, base.centers)
        assert_array_equal(moved.neighbors, base.neighbors)
        assert_array_equal(moved.kernel_inputs[:, 1:], base.kernel_inputs[:, 1:])
        np.testing.assert_allclose(
            moved.kernel_inputs[:, 0], base.kernel_inputs[:, 0], atol=1e-6
        )

    def test_rel_offsets(self):
        rng = np.random.default_rng(15)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        radius = 5.0
        table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(
            pos, radius, with_offsets=True
        )
        expected = ((pos[table.neighbors] - pos[table.centers]) / radius).astype(np.float32)
        assert_array_equal(table.rel_offsets, expected)
        plain = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, radius)
        assert plain.rel_offsets is None

    def test_covalent_neighborhood_selects_by_hops(self):
        rng = np.random.default_rng(16)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        radius = 4.0
        table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(
            pos, radius, neighborhood="covalent"
        )
        hops = floyd_warshall_hops(adj_a, cap1)
        centers, neighbors = np.nonzero(hops <= cap1)
        assert_array_equal(table.centers, centers)
        assert_array_equal(table.neighbors, neighbors)
        delta = pos[neighbors].astype(np.float64) - pos[centers].astype(np.float64)
        dists = np.sqrt((delta * delta).sum(axis=1))
        expected = oracle_kernel_inputs(
            centers, neighbors, dists, adj_a, adj_b, cap1, cap2, radius
        )
        assert_array_equal(table.kernel_inputs, expected)
        # pairs beyond the radius stay, with the extrinsic column clamped
        assert (dists > radius).any()
        assert table.kernel_inputs[:, 0].max() == 1.0

    def test_hydrogen_neighborhood_selects_on_b(self):
        rng = np.random.default_rng(17)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        table = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(
            pos, 4.0, neighborhood="hydrogen"
        )
        hops = floyd_warshall_hops(adj_b, cap2)
        centers, neighbors = np.nonzero(hops <= cap2)
        assert_array_equal(table.centers, centers)
        assert_array_equal(table.neighbors, neighbors)

    def test_unknown_neighborhood_rejected(self):
        adj = edges_to_adjacency([(0, 1)], 2)
        builder = NeighborTableBuilder(adj, adj, 6, 6)
        with pytest.raises(ValueError, match="neighborhood"):
            builder.build(np.zeros((2, 3)), 3.0, neighborhood="geodesic")

    def test_parameter_validation(self):
        s = structure_of(("A", 1, "UNK", [("C1", "C", (0, 0, 0))]))
        g = build_multigraph(s, BondList([], "covalent"), NO_HBONDS)
        with pytest.raises(ValueError):
            build_neighbor_table(g, 3.0, 0, 6)
        with pytest.raises(ValueError):
            build_neighbor_table(g, -1.0, 6, 6)

    def test_per_center_fallback_matches_dense_path(self, monkeypatch):
        rng = np.random.default_rng(18)
        pos, adj_a, adj_b, cap1, cap2 = random_case(rng)
        dense = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, 5.0)
        monkeypatch.setattr(mg, "_DENSE_LIMIT", 2)
        sparse = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(pos, 5.0)
        assert_array_equal(sparse.centers, dense.centers)
        assert_array_equal(sparse.neighbors, dense.neighbors)
        assert_array_equal(sparse.kernel_inputs, dense.kernel_inputs)
        for hood in ("covalent", "hydrogen"):
            a = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(
                pos, 5.0, neighborhood=hood
            )
            monkeypatch.undo()
            b = NeighborTableBuilder(adj_a, adj_b, cap1, cap2).build(
                pos, 5.0, neighborhood=hood
            )
            monkeypatch.setattr(mg, "_DENSE_LIMIT", 2)
            assert_array_equal(a.centers, b.centers)
            assert_array_equal(a.kernel_inputs, b.kernel_inputs)


class TestSerialization:
    def sample_graph(self):
        s = structure_of(
            ("A", 1, "GLY", [("N", "N", (0, 0, 0)), ("CA", "C", (1.46, 0, 0))]),
            ("A", 2, "GLY", [("N", "N", (2.8, 0.5, 0))]),
            ("B", 1, "CYS", [("SG", "S", (5, 5, 5))]),
        )
        covalent = infer_covalent_bonds(s)
        hydrogen = BondList([(1, 3)], "hydrogen")
        return build_multigraph(s, covalent, hydrogen)

    def test_round_trip_bit_identical(self, helix):
        from conftest import pipeline

        for g in (self.sample_graph(), pipeline(helix)[0]):
            back = deserialize_graph(serialize_graph(g))
            assert_array_equal(back.positions, g.positions)
            assert_array_equal(back.features, g.features)
            assert (back.adj_A != g.adj_A).nnz == 0
            assert (back.adj_B != g.adj_B).nnz == 0
            assert_array_equal(back.residue_of, g.residue_of)
            assert_array_equal(back.ca_index, g.ca_index)
            assert_array_equal(back.chain_of, g.chain_of)
            assert_array_equal(back.elem_idx, g.elem_idx)

    def test_absent_ca_survives_round_trip(self):
        g = self.sample_graph()
        assert (g.ca_index == -1).any()  # res 2 of chain A and the CYS have no CA
        back = deserialize_graph(serialize_graph(g))
        assert_array_equal(back.ca_index, g.ca_index)

    def test_serialization_is_deterministic(self):
        g = self.sample_graph()
        data = serialize_graph(g)
        assert serialize_graph(g) == data
        assert serialize_graph(deserialize_graph(data)) == data

    def test_empty_stream_rejected(self):
        with pytest.raises(GraphFormatError, match="too short"):
            deserialize_graph(b"")

    def test_bad_magic_rejected(self):
        data = bytearray(serialize_graph(self.sample_graph()))
        data[:4] = b"NOPE"
        with pytest.raises(GraphFormatError, match="magic"):
            deserialize_graph(bytes(data))

    def test_flipped_payload_byte_fails_checksum(self):
        data = bytearray(serialize_graph(self.sample_graph()))
        data[len(data) // 2] ^= 0xFF
        with pytest.raises(GraphFormatError, match="checksum"):
            deserialize_graph(bytes(data))

    def test_truncation_detected_behind_valid_checksum(self):
        payload = serialize_graph(self.sample_graph())[:-4][:20]
        data = payload + struct.pack("<I", zlib.crc32(payload))
        with pytest.raises(GraphFormatError, match="truncated"):
            deserialize_graph(data)

    def test_unsupported_version_rejected(self):
        payload = bytearray(serialize_graph(self.sample_graph())[:-4])
        payload[4:6] = struct.pack("<H", 99)
        data = bytes(payload) + struct.pack("<I", zlib.crc32(bytes(payload)))
        with pytest.raises(GraphFormatError, match="version 99"):
            deserialize_graph(data)
