"""Tests for residue and atom feature construction."""

import numpy as np
import pytest

from cdrgen.autodiff import Tensor
from cdrgen.features import (
    AtomGraph,
    FeatureConfig,
    FeatureError,
    OFF_CHAIN_BUCKET,
    atom_embedding,
    build_atom_graph,
    build_features,
    build_pair_set,
    complex_view,
    dihedral_features,
    feature_param_shapes,
    knn_pairs,
    relative_orientation,
    residue_pair_features,
    residue_single_features,
    separation_bucket,
    timestep_encoding,
)
from cdrgen.geometry import exp_rotvec, gaussian_rbf_centers, random_rotation
from cdrgen.structure import (
    AA1_TO_INDEX,
    ATOM_VOCAB,
    ComplexInstance,
    Residue,
    ideal_backbone,
)
from cdrgen.synthetic import make_toy_complex


def small_config() -> FeatureConfig:
    return FeatureConfig(
        residue_width=16,
        pair_width=16,
        atom_width=8,
        type_embed_width=4,
        time_embed_width=4,
        k_neighbors=8,
        atom_rbf_count=8,
        pair_rbf_count=8,
    )


def make_params(config: FeatureConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return {
        name: Tensor(rng.normal(0.0, 0.1, shape), requires_grad=True)
        for name, shape in feature_param_shapes(config).items()
    }


def lone_residue(aa: str, ca, frame=None, chain: str = "H",
                 resseq: int = 1) -> Residue:
    frame = np.eye(3) if frame is None else frame
    atoms = ideal_backbone(np.asarray(ca, dtype=np.float64), frame)
    return Residue(
        aa=AA1_TO_INDEX[aa],
        chain=chain,
        resseq=resseq,
        icode="",
        atoms=atoms,
        frame=frame,
        cb_virtual=aa == "G",
    )


def instance_from_residues(residues, cdr_start=0, cdr_length=1,
                           roles=None) -> ComplexInstance:
    roles = roles if roles is not None else {"H": "heavy"}
    return ComplexInstance(
        complex_id="toy",
        residues=list(residues),
        chain_roles=roles,
        cdr_tag="H3",
        cdr_start=cdr_start,
        cdr_length=cdr_length,
    )


class FakeState:
    def __init__(self, types, ca, frames, t):
        self.types = types
        self.ca = ca
        self.frames = frames
        self.t = t


class TestComplexView:
    def test_clean_view_matches_instance(self):
        inst = make_toy_complex("t", seed=1)
        view = complex_view(inst)
        assert view.size == len(inst)
        np.testing.assert_array_equal(view.types, inst.aa_array())
        np.testing.assert_allclose(view.ca, inst.ca_array())
        assert view.timestep == 0

    def test_normalization_applied(self):
        inst = make_toy_complex("t", seed=1)
        origin = inst.ca_array().mean(axis=0)
        view = complex_view(inst, origin=origin, scale=10.0)
        np.testing.assert_allclose(
            view.ca, (inst.ca_array() - origin) / 10.0, atol=1e-12
        )
        assert view.scale == 10.0

    def test_noised_state_overrides_cdr(self):
        inst = make_toy_complex("t", seed=1)
        idx = inst.cdr_indices
        m = idx.size
        rng = np.random.default_rng(5)
        state = FakeState(
            types=np.full(m, AA1_TO_INDEX["G"], dtype=np.int64),
            ca=rng.normal(size=(m, 3)),
            frames=random_rotation(rng, size=m),
            t=40,
        )
        view = complex_view(inst, scale=10.0, state=state)
        assert view.timestep == 40
        np.testing.assert_array_equal(view.types[idx], state.types)
        np.testing.assert_allclose(view.ca[idx], state.ca, atol=1e-12)
        np.testing.assert_allclose(view.frames[idx], state.frames, atol=1e-12)
        # CA slot of the rebuilt backbone sits exactly at the noised CA.
        np.testing.assert_allclose(view.atoms[idx, 1, :], state.ca, atol=1e-12)
        assert view.cb_virtual[idx].all()
        context = np.setdiff1d(np.arange(len(inst)), idx)
        np.testing.assert_array_equal(view.types[context],
                                      inst.aa_array()[context])

    def test_state_shape_mismatch_rejected(self):
        inst = make_toy_complex("t", seed=1)
        m = inst.cdr_indices.size
        state = FakeState(
            types=np.zeros(m + 1, dtype=np.int64),
            ca=np.zeros((m + 1, 3)),
            frames=np.stack([np.eye(3)] * (m + 1)),
            t=3,
        )
        with pytest.raises(FeatureError):
            complex_view(inst, state=state)

    def test_bad_scale_rejected(self):
        inst = make_toy_complex("t", seed=1)
        with pytest.raises(FeatureError):
            complex_view(inst, scale=0.0)


class TestSingleFeatures:
    def test_terminal_residues_get_sentinel_dihedrals(self):
        inst = make_toy_complex("t", seed=2)
        view = complex_view(inst)
        d = dihedral_features(view)
        first_heavy = 0
        assert d[first_heavy, 2] == 0.0  # phi validity
        assert d[first_heavy, 0] == 0.0 and d[first_heavy, 1] == 0.0
        assert d[first_heavy, 5] == 1.0  # psi validity
        last = view.size - 1
        assert d[last, 5] == 0.0

    def test_interior_dihedrals_match_construction(self):
        inst = make_toy_complex("t", seed=2)
        view = complex_view(inst)
        d = dihedral_features(view)
        omega = np.arctan2(d[:, 6], d[:, 7])[d[:, 8] == 1.0]
        np.testing.assert_allclose(np.abs(omega), np.pi, atol=1e-8)

    def test_identical_local_geometry_gives_identical_rows(self):
        res_a = lone_residue("A", (0.0, 0.0, 0.0), resseq=1)
        res_b = lone_residue("A", (30.0, 0.0, 0.0), resseq=2)
        inst = instance_from_residues([res_a, res_b], cdr_start=0,
                                      cdr_length=2)
        config = small_config()
        data = build_features(complex_view(inst), config)
        params = make_params(config)
        e = residue_single_features(data, params).data
        np.testing.assert_allclose(e[0], e[1], atol=1e-12)

    def test_rigid_invariance(self):
        inst = make_toy_complex("t", seed=3)
        rng = np.random.default_rng(7)
        moved = inst.transformed(random_rotation(rng), rng.normal(size=3))
        config = small_config()
        params = make_params(config)
        e0 = residue_single_features(
            build_features(complex_view(inst), config), params
        ).data
        e1 = residue_single_features(
            build_features(complex_view(moved), config), params
        ).data
        np.testing.assert_allclose(e0, e1, atol=1e-8)


class TestPairFeatures:
    def test_sequence_separation_example(self):
        inst = make_toy_complex("t", seed=1)
        view = complex_view(inst)
        bucket = separation_bucket(
            view, np.array([5]), np.array([12]), max_separation=32
        )
        assert bucket[0] == 7 + 32

    def test_off_chain_bucket(self):
        inst = make_toy_complex("t", seed=1)
        view = complex_view(inst)
        heavy = np.array([0])
        antigen = np.array([np.nonzero(view.fragment == 0)[0][0]])
        bucket = separation_bucket(view, heavy, antigen, max_separation=32)
        assert bucket[0] == OFF_CHAIN_BUCKET

    def test_separation_clipped(self):
        residues = [
            lone_residue("A", (3.9 * i, 0.0, 0.0), resseq=i + 1)
            for i in range(40)
        ]
        inst = instance_from_residues(residues)
        view = complex_view(inst)
        bucket = separation_bucket(
            view, np.array([0, 39]), np.array([39, 0]), max_separation=32
        )
        assert bucket[0] == 64 and bucket[1] == 0

    def test_pair_distance_encoding_peaks_at_center(self):
        config = small_config()
        centers, _ = gaussian_rbf_centers(0.0, config.pair_rbf_max,
                                          config.pair_rbf_count)
        target = float(centers[3])
        res_a = lone_residue("A", (0.0, 0.0, 0.0), resseq=1)
        res_b = lone_residue("C", (target, 0.0, 0.0), resseq=9)
        inst = instance_from_residues([res_a, res_b])
        pairs = build_pair_set(complex_view(inst), config)
        row = np.nonzero((pairs.src == 0) & (pairs.dst == 1))[0][0]
        assert pairs.distance_enc[row, 3] == pytest.approx(1.0, abs=1e-12)

    def test_knn_symmetric_with_self_pairs(self):
        inst = make_toy_complex("t", seed=4)
        view = complex_view(inst)
        src, dst = knn_pairs(view, k=4)
        edges = set(zip(src.tolist(), dst.tolist()))
        for i in range(view.size):
            assert (i, i) in edges
        for i, j in edges:
            assert (j, i) in edges

    def test_relative_orientation_components(self):
        inst = make_toy_complex("t", seed=1)
        view = complex_view(inst)
        view.frames[0] = np.eye(3)
        view.frames[1] = exp_rotvec(np.array([0.7, 0.0, 0.0]))
        enc = relative_orientation(view, np.array([0]), np.array([1]))
        np.testing.assert_allclose(
            enc[0, :9], view.frames[1].reshape(-1), atol=1e-12
        )
        # rotation vector (0.7, 0, 0): azimuth 0, polar pi/2
        np.testing.assert_allclose(enc[0, 9:], [0.0, 1.0, 1.0, 0.0],
                                   atol=1e-10)

    def test_relative_orientation_identity_sentinel(self):
        inst = make_toy_complex("t", seed=1)
        view = complex_view(inst)
        enc = relative_orientation(view, np.array([0]), np.array([0]))
        np.testing.assert_allclose(enc[0, :9], np.eye(3).reshape(-1),
                                   atol=1e-12)
        np.testing.assert_allclose(enc[0, 9:], [0.0, 1.0, 0.0, 1.0],
                                   atol=1e-12)

    def test_rigid_invariance(self):
        inst = make_toy_complex("t", seed=3)
        rng = np.random.default_rng(11)
        moved = inst.transformed(random_rotation(rng), rng.normal(size=3))
        config = small_config()
        params = make_params(config)
        z0 = residue_pair_features(
            build_features(complex_view(inst), config), params
        ).data
        z1 = residue_pair_features(
            build_features(complex_view(moved), config), params
        ).data
        np.testing.assert_allclose(z0, z1, atol=1e-8)


class TestAtomGraph:
    def test_single_alanine_edge_count(self):
        res = lone_residue("A", (0.0, 0.0, 0.0))
        inst = instance_from_residues([res])
        view = complex_view(inst)
        graph = build_atom_graph(view, cutoff=5.0)
        assert graph.atom_count == 5
        # brute-force oracle on the same coordinates
        pos = view.atoms.reshape(5, 3)
        close = 0
        for i in range(5):
            for j in range(i + 1, 5):
                if np.linalg.norm(pos[i] - pos[j]) <= 5.0:
                    close += 1
        assert close == 10
        assert graph.edge_count == 20

    def test_tiny_cutoff_gives_empty_graph(self):
        res = lone_residue("A", (0.0, 0.0, 0.0))
        inst = instance_from_residues([res])
        graph = build_atom_graph(complex_view(inst), cutoff=0.5)
        assert graph.edge_count == 0
        assert graph.atom_count == 5

    def test_edge_symmetry_and_cutoff(self):
        inst = make_toy_complex("t", seed=5)
        graph = build_atom_graph(complex_view(inst), cutoff=5.0)
        edges = set(zip(graph.edge_src.tolist(), graph.edge_dst.tolist()))
        for i, j in edges:
            assert (j, i) in edges
            assert i != j
        assert graph.edge_dist.max() <= 5.0

    def test_normalized_coordinates_keep_angstrom_cutoff(self):
        inst = make_toy_complex("t", seed=5)
        plain = build_atom_graph(complex_view(inst), cutoff=5.0)
        scaled = build_atom_graph(complex_view(inst, scale=10.0), cutoff=5.0)
        assert plain.edge_count == scaled.edge_count
        np.testing.assert_allclose(
            np.sort(plain.edge_dist), np.sort(scaled.edge_dist), atol=1e-9
        )

    def test_glycine_cb_marked_virtual(self):
        res = lone_residue("G", (0.0, 0.0, 0.0))
        inst = instance_from_residues([res])
        graph = build_atom_graph(complex_view(inst), cutoff=5.0)
        assert graph.vocab[4] == ATOM_VOCAB["CB_VIRTUAL"]
        assert graph.vocab[1] == ATOM_VOCAB["CA"]

    def test_rotation_equivariance(self):
        inst = make_toy_complex("t", seed=6)
        rng = np.random.default_rng(3)
        rotation = random_rotation(rng)
        moved = inst.transformed(rotation, np.zeros(3))
        g0 = build_atom_graph(complex_view(inst), cutoff=5.0)
        g1 = build_atom_graph(complex_view(moved), cutoff=5.0)
        np.testing.assert_array_equal(g0.edge_src, g1.edge_src)
        np.testing.assert_allclose(g0.edge_dist, g1.edge_dist, atol=1e-10)
        np.testing.assert_allclose(
            g1.edge_unit, g0.edge_unit @ rotation.T, atol=1e-10
        )

    def test_bad_cutoff_rejected(self):
        inst = make_toy_complex("t", seed=1)
        with pytest.raises(FeatureError):
            build_atom_graph(complex_view(inst), cutoff=0.0)


class TestAtomEmbedding:
    def test_v0_exactly_zero(self):
        config = small_config()
        inst = make_toy_complex("t", seed=1)
        graph = build_atom_graph(complex_view(inst), config.atom_cutoff)
        _, _, v0 = atom_embedding(graph, make_params(config), config)
        assert not v0.data.any()
        assert v0.data.shape == (graph.atom_count, 3, config.atom_width)

    def test_f0_peaks_at_rbf_center(self):
        config = small_config()
        centers, _ = gaussian_rbf_centers(0.0, config.atom_cutoff,
                                          config.atom_rbf_count)
        graph = AtomGraph(
            positions=np.zeros((2, 3)),
            vocab=np.array([0, 1]),
            residue_of=np.array([0, 0]),
            edge_src=np.array([0, 1]),
            edge_dst=np.array([1, 0]),
            edge_dist=np.array([centers[2], centers[2]]),
            edge_unit=np.array([[1.0, 0, 0], [-1.0, 0, 0]]),
        )
        _, f0, _ = atom_embedding(graph, make_params(config), config)
        assert f0.data[0, 2] == pytest.approx(1.0, abs=1e-12)

    def test_same_vocab_isolated_atoms_share_h0(self):
        config = small_config()
        graph = AtomGraph(
            positions=np.array([[0.0, 0, 0], [50.0, 0, 0]]),
            vocab=np.array([2, 2]),
            residue_of=np.array([0, 1]),
            edge_src=np.zeros(0, dtype=np.int64),
            edge_dst=np.zeros(0, dtype=np.int64),
            edge_dist=np.zeros(0),
            edge_unit=np.zeros((0, 3)),
        )
        h0, _, _ = atom_embedding(graph, make_params(config), config)
        np.testing.assert_array_equal(h0.data[0], h0.data[1])

    def test_unknown_vocabulary_rejected(self):
        config = small_config()
        graph = AtomGraph(
            positions=np.zeros((1, 3)),
            vocab=np.array([17]),
            residue_of=np.array([0]),
            edge_src=np.zeros(0, dtype=np.int64),
            edge_dst=np.zeros(0, dtype=np.int64),
            edge_dist=np.zeros(0),
            edge_unit=np.zeros((0, 3)),
        )
        with pytest.raises(FeatureError):
            atom_embedding(graph, make_params(config), config)


class TestTimestepEncoding:
    def test_clean_state_encoding(self):
        enc = timestep_encoding(0, 8, 100)
        np.testing.assert_allclose(enc[:4], 0.0, atol=1e-12)
        np.testing.assert_allclose(enc[4:], 1.0, atol=1e-12)

    def test_shape_and_range(self):
        enc = timestep_encoding(57, 8, 100)
        assert enc.shape == (8,)
        assert np.abs(enc).max() <= 1.0

    def test_distinct_timesteps_distinct_codes(self):
        a = timestep_encoding(3, 8, 100)
        b = timestep_encoding(4, 8, 100)
        assert np.abs(a - b).max() > 1e-6

    def test_odd_width_rejected(self):
        with pytest.raises(FeatureError):
            timestep_encoding(1, 7, 100)


class TestBuildFeatures:
    def test_full_bundle_finite_and_deterministic(self):
        config = small_config()
        inst = make_toy_complex("t", seed=8)
        a = build_features(complex_view(inst), config)
        b = build_features(complex_view(inst), config)
        assert np.isfinite(a.single_geometry).all()
        assert np.isfinite(a.pairs.orientation).all()
        np.testing.assert_array_equal(a.single_geometry, b.single_geometry)
        np.testing.assert_array_equal(a.pairs.distance_enc,
                                      b.pairs.distance_enc)

    def test_noised_view_features_finite(self):
        config = small_config()
        inst = make_toy_complex("t", seed=8)
        idx = inst.cdr_indices
        rng = np.random.default_rng(0)
        state = FakeState(
            types=rng.integers(0, 20, idx.size),
            ca=rng.normal(size=(idx.size, 3)),
            frames=random_rotation(rng, size=idx.size),
            t=77,
        )
        origin = inst.ca_array().mean(axis=0)
        data = build_features(
            complex_view(inst, origin=origin, scale=10.0, state=state), config
        )
        params = make_params(config)
        e = residue_single_features(data, params).data
        z = residue_pair_features(data, params).data
        assert np.isfinite(e).all() and np.isfinite(z).all()

    def test_config_validation(self):
        with pytest.raises(FeatureError):
            FeatureConfig(atom_cutoff=-1.0).validate()
        with pytest.raises(FeatureError):
            FeatureConfig(k_neighbors=0).validate()
