"""Residue and atom feature construction for the denoising network.

Residue-level features come in two flavors: per-residue vectors e built
from type, local backbone geometry, dihedrals, and fragment identity;
and per-pair vectors z built from joint types, sequence separation,
distance encodings, and relative orientation. Atom-level features cover
the heavy-atom graph (N, CA, C, O, CB with a virtual CB for glycine)
under a distance cutoff.

Everything geometric is computed with plain numpy and treated as a
constant by the autodiff tape; only the learned encoders (embedding
tables and MLPs) run on the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, gather_rows, matmul, segment_sum, silu
from .geometry import (
    GeometryError,
    dihedral,
    gaussian_rbf_centers,
    gaussian_rbf_encode,
    log_rotvec,
)
from .structure import (
    ATOM_VOCAB,
    BACKBONE_SLOTS,
    ComplexInstance,
    ideal_backbone,
)

PEPTIDE_BOND_MAX = 2.0  # angstroms, C(i) to N(i+1)

FRAGMENT_COUNT = 4
SEPARATION_BUCKETS = 66  # signed -32..32 plus one off-chain bucket
OFF_CHAIN_BUCKET = 65

DIHEDRAL_DIM = 9  # (sin, cos, valid) for phi, psi, omega
LOCAL_GEOMETRY_DIM = 15  # frame-relative offsets of the five backbone atoms
ORIENTATION_PAIR_DIM = 13  # flattened relative rotation + two angle encodings


class FeatureError(ValueError):
    """Raised when feature construction preconditions are violated."""


@dataclass
class FeatureConfig:
    """Widths and graph-construction knobs for the feature encoders."""

    residue_width: int = 128
    pair_width: int = 128
    atom_width: int = 64
    type_embed_width: int = 16
    time_embed_width: int = 8
    k_neighbors: int = 32
    atom_cutoff: float = 5.0
    atom_rbf_count: int = 32
    pair_rbf_count: int = 64
    pair_rbf_max: float = 20.0
    max_separation: int = 32

    def validate(self) -> None:
        for name in ("residue_width", "pair_width", "atom_width",
                     "type_embed_width", "time_embed_width", "k_neighbors",
                     "atom_rbf_count", "pair_rbf_count", "max_separation"):
            if int(getattr(self, name)) < 1:
                raise FeatureError(f"{name} must be a positive integer")
        if self.atom_cutoff <= 0:
            raise FeatureError("atom_cutoff must be positive")
        if self.pair_rbf_max <= 0:
            raise FeatureError("pair_rbf_max must be positive")


@dataclass
class ComplexView:
    """A complex merged with the current diffusion state of its CDR.

    Coordinates are stored in normalized units ((x - origin) / scale);
    ``scale`` converts normalized distances back to angstroms. Context
    residues carry ground truth; at diffusion time t the CDR residues
    carry their noised types, positions, and orientations, with backbone
    atoms rebuilt from the ideal template around the noised frame.
    """

    types: np.ndarray  # (N,) int amino-acid indices
    ca: np.ndarray  # (N, 3) normalized coordinates
    frames: np.ndarray  # (N, 3, 3) rotation matrices
    atoms: np.ndarray  # (N, 5, 3) normalized coordinates, slot order N CA C O CB
    cb_virtual: np.ndarray  # (N,) bool
    fragment: np.ndarray  # (N,) int in [0, 3]
    chain_index: np.ndarray  # (N,) int chain ordinal
    position: np.ndarray  # (N,) int position within the chain
    cdr_mask: np.ndarray  # (N,) bool
    bonded: np.ndarray  # (N-1,) bool, residue i bonded to i+1
    scale: float  # angstroms per normalized unit
    timestep: int = 0

    @property
    def size(self) -> int:
        return int(self.types.shape[0])


@dataclass
class AtomGraph:
    """Heavy-atom graph with directed edges under a distance cutoff."""

    positions: np.ndarray  # (A, 3) normalized coordinates
    vocab: np.ndarray  # (A,) int indices into ATOM_VOCAB
    residue_of: np.ndarray  # (A,) int owning residue
    edge_src: np.ndarray  # (E,) int
    edge_dst: np.ndarray  # (E,) int
    edge_dist: np.ndarray  # (E,) float, angstroms
    edge_unit: np.ndarray  # (E, 3) unit vectors src -> dst

    @property
    def atom_count(self) -> int:
        return int(self.vocab.shape[0])

    @property
    def edge_count(self) -> int:
        return int(self.edge_src.shape[0])


@dataclass
class PairSet:
    """Directed residue pairs: self pairs plus a symmetrized kNN set."""

    src: np.ndarray  # (P,) int
    dst: np.ndarray  # (P,) int
    pair_type: np.ndarray  # (P,) int joint type index, 20 * type_i + type_j
    separation: np.ndarray  # (P,) int bucket index
    distance_enc: np.ndarray  # (P, pair_rbf_count)
    orientation: np.ndarray  # (P, 13)


@dataclass
class FeatureData:
    """All tape-constant feature arrays for one complex at one timestep."""

    view: ComplexView
    single_geometry: np.ndarray  # (N, 15 + 9 + 4)
    pairs: PairSet
    graph: AtomGraph
    time_encoding: np.ndarray  # (time_embed_width,)
    config: FeatureConfig = field(repr=False, default_factory=FeatureConfig)


def complex_view(
    instance: ComplexInstance,
    origin: np.ndarray | None = None,
    scale: float = 1.0,
    state=None,
) -> ComplexView:
    """Assemble the featurization view of a complex.

    ``origin`` and ``scale`` define the normalized coordinate system.
    ``state`` is an optional diffusion state object carrying ``types``
    (m,), ``ca`` (m, 3) in normalized coordinates, ``frames`` (m, 3, 3),
    and ``t``; when given, CDR residues take their noised values and the
    CDR backbone is rebuilt from the ideal template.
    """
    if scale <= 0:
        raise FeatureError("scale must be positive")
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    if origin.shape != (3,):
        raise FeatureError("origin must be a 3-vector")

    types = instance.aa_array().copy()
    ca = (instance.ca_array() - origin) / scale
    frames = instance.frame_array().copy()
    atoms = (instance.atom_array() - origin) / scale
    cb_virtual = instance.cb_virtual_array().copy()
    cdr = np.zeros(len(instance), dtype=bool)
    cdr[instance.cdr_indices] = True

    # Peptide bonds from the clean structure so graph topology is stable
    # across diffusion time: same chain, consecutive, C-N within range.
    chain_index = instance.chain_ordinals()
    c_atoms = instance.atom_array()[:, BACKBONE_SLOTS.index("C"), :]
    n_atoms = instance.atom_array()[:, BACKBONE_SLOTS.index("N"), :]
    gaps = np.linalg.norm(n_atoms[1:] - c_atoms[:-1], axis=-1)
    bonded = (chain_index[1:] == chain_index[:-1]) & (gaps <= PEPTIDE_BOND_MAX)

    timestep = 0
    if state is not None:
        idx = instance.cdr_indices
        noised_types = np.asarray(state.types, dtype=np.int64)
        noised_ca = np.asarray(state.ca, dtype=np.float64)
        noised_frames = np.asarray(state.frames, dtype=np.float64)
        if noised_types.shape != (idx.size,):
            raise FeatureError("state types must match the CDR length")
        if noised_ca.shape != (idx.size, 3):
            raise FeatureError("state ca must match the CDR length")
        if noised_frames.shape != (idx.size, 3, 3):
            raise FeatureError("state frames must match the CDR length")
        types[idx] = noised_types
        ca[idx] = noised_ca
        frames[idx] = noised_frames
        for row, i in enumerate(idx):
            rebuilt = ideal_backbone(noised_ca[row] * scale, noised_frames[row])
            for slot_pos, slot in enumerate(BACKBONE_SLOTS):
                atoms[i, slot_pos] = rebuilt[slot] / scale
        # Glycine lacks a real CB; mark the template CB virtual for it.
        cb_virtual[idx] = noised_types == 7
        timestep = int(state.t)

    return ComplexView(
        types=types,
        ca=ca,
        frames=frames,
        atoms=atoms,
        cb_virtual=cb_virtual,
        fragment=instance.fragment_types(),
        chain_index=chain_index,
        position=instance.position_in_chain(),
        cdr_mask=cdr,
        bonded=bonded,
        scale=float(scale),
        timestep=timestep,
    )


def dihedral_features(view: ComplexView) -> np.ndarray:
    """Per-residue (sin, cos, valid) encodings of phi, psi, omega.

    Chain termini and degenerate geometry fall back to the sentinel
    (0, 0) with validity 0.
    """
    n = view.size
    out = np.zeros((n, DIHEDRAL_DIM), dtype=np.float64)
    atoms = view.atoms
    slot_n = BACKBONE_SLOTS.index("N")
    slot_ca = BACKBONE_SLOTS.index("CA")
    slot_c = BACKBONE_SLOTS.index("C")

    def encode(row: int, col: int, points) -> None:
        try:
            angle = dihedral(*points)
        except GeometryError:
            return
        out[row, col] = math.sin(angle)
        out[row, col + 1] = math.cos(angle)
        out[row, col + 2] = 1.0

    for i in range(n):
        prev_ok = i > 0 and view.bonded[i - 1]
        next_ok = i + 1 < n and view.bonded[i]
        if prev_ok:  # phi: C(i-1), N(i), CA(i), C(i)
            encode(i, 0, (atoms[i - 1, slot_c], atoms[i, slot_n],
                          atoms[i, slot_ca], atoms[i, slot_c]))
        if next_ok:  # psi: N(i), CA(i), C(i), N(i+1)
            encode(i, 3, (atoms[i, slot_n], atoms[i, slot_ca],
                          atoms[i, slot_c], atoms[i + 1, slot_n]))
        if prev_ok:  # omega: CA(i-1), C(i-1), N(i), CA(i)
            encode(i, 6, (atoms[i - 1, slot_ca], atoms[i - 1, slot_c],
                          atoms[i, slot_n], atoms[i, slot_ca]))
    return out


def local_geometry_features(view: ComplexView) -> np.ndarray:
    """Backbone atom offsets expressed in each residue's own frame.

    Offsets are reported in angstroms so the numbers do not depend on
    the normalization scale. The CA column is identically zero and kept
    for a fixed slot layout.
    """
    offsets = (view.atoms - view.ca[:, None, :]) * view.scale
    local = np.einsum("nji,nkj->nki", view.frames, offsets)
    return local.reshape(view.size, LOCAL_GEOMETRY_DIM)


def fragment_onehot(view: ComplexView) -> np.ndarray:
    out = np.zeros((view.size, FRAGMENT_COUNT), dtype=np.float64)
    out[np.arange(view.size), view.fragment] = 1.0
    return out


def single_geometry(view: ComplexView) -> np.ndarray:
    """Concatenated invariant per-residue geometry [g; d; f]."""
    return np.concatenate(
        [
            local_geometry_features(view),
            dihedral_features(view),
            fragment_onehot(view),
        ],
        axis=1,
    )


def separation_bucket(view: ComplexView, src: np.ndarray, dst: np.ndarray,
                      max_separation: int) -> np.ndarray:
    """Signed sequence separation clipped to a bucket index.

    Same-chain pairs map dst - src clipped to [-max, max] onto buckets
    [0, 2 * max]; cross-chain pairs share the off-chain bucket.
    """
    delta = view.position[dst] - view.position[src]
    clipped = np.clip(delta, -max_separation, max_separation) + max_separation
    same = view.chain_index[src] == view.chain_index[dst]
    return np.where(same, clipped, OFF_CHAIN_BUCKET).astype(np.int64)


def relative_orientation(view: ComplexView, src: np.ndarray,
                         dst: np.ndarray) -> np.ndarray:
    """13-dim relative orientation encoding for each directed pair.

    The relative rotation O_i^T O_j is flattened to nine entries, then
    augmented with sine/cosine of the azimuthal and polar angles of its
    rotation vector (already expressed in residue i's frame). Near the
    identity the axis is undefined and the encoding falls back to the
    sentinel (0, 1, 0, 1).
    """
    rel = np.einsum("pji,pjk->pik", view.frames[src], view.frames[dst])
    flat = rel.reshape(-1, 9)
    vec = log_rotvec(rel)
    norm = np.linalg.norm(vec, axis=-1)
    angles = np.zeros((rel.shape[0], 4), dtype=np.float64)
    angles[:, 1] = 1.0
    angles[:, 3] = 1.0
    ok = norm > 1e-8
    if np.any(ok):
        azimuth = np.arctan2(vec[ok, 1], vec[ok, 0])
        polar = np.arccos(np.clip(vec[ok, 2] / norm[ok], -1.0, 1.0))
        angles[ok, 0] = np.sin(azimuth)
        angles[ok, 1] = np.cos(azimuth)
        angles[ok, 2] = np.sin(polar)
        angles[ok, 3] = np.cos(polar)
    return np.concatenate([flat, angles], axis=1)


def knn_pairs(view: ComplexView, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Directed residue pairs: self pairs plus symmetrized kNN edges.

    Every residue pairs with itself and with its k nearest neighbors by
    CA distance; the relation is symmetrized so (i, j) present implies
    (j, i) present.
    """
    n = view.size
    if n == 0:
        raise FeatureError("cannot build pairs for an empty complex")
    diff = view.ca[:, None, :] - view.ca[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    neighbor_count = min(k, n - 1)
    adjacency = np.zeros((n, n), dtype=bool)
    if neighbor_count > 0:
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :neighbor_count]
        rows = np.repeat(np.arange(n), neighbor_count)
        adjacency[rows, nearest.reshape(-1)] = True
        adjacency |= adjacency.T
    np.fill_diagonal(adjacency, True)
    src, dst = np.nonzero(adjacency)
    return src.astype(np.int64), dst.astype(np.int64)


def build_pair_set(view: ComplexView, config: FeatureConfig) -> PairSet:
    src, dst = knn_pairs(view, config.k_neighbors)
    centers, width = gaussian_rbf_centers(0.0, config.pair_rbf_max,
                                          config.pair_rbf_count)
    dist = np.linalg.norm(view.ca[dst] - view.ca[src], axis=-1) * view.scale
    return PairSet(
        src=src,
        dst=dst,
        pair_type=(view.types[src] * 20 + view.types[dst]).astype(np.int64),
        separation=separation_bucket(view, src, dst, config.max_separation),
        distance_enc=gaussian_rbf_encode(dist, centers, width),
        orientation=relative_orientation(view, src, dst),
    )


def build_atom_graph(view: ComplexView, cutoff: float) -> AtomGraph:
    """Heavy-atom graph with all directed edges within ``cutoff`` angstroms.

    Distances are measured in angstroms (normalized separation times the
    view scale); stored positions stay in normalized coordinates.
    """
    if cutoff <= 0:
        raise FeatureError("cutoff must be positive")
    n = view.size
    if n == 0:
        raise FeatureError("cannot build an atom graph with zero atoms")
    positions = view.atoms.reshape(n * 5, 3)
    vocab = np.tile(
        np.array([ATOM_VOCAB[s] for s in BACKBONE_SLOTS], dtype=np.int64), n
    )
    virtual_rows = np.nonzero(view.cb_virtual)[0] * 5 + BACKBONE_SLOTS.index("CB")
    vocab[virtual_rows] = ATOM_VOCAB["CB_VIRTUAL"]
    residue_of = np.repeat(np.arange(n, dtype=np.int64), 5)

    diff = positions[None, :, :] - positions[:, None, :]
    dist = np.linalg.norm(diff, axis=-1) * view.scale
    within = dist <= cutoff
    np.fill_diagonal(within, False)
    src, dst = np.nonzero(within)
    edge_dist = dist[src, dst]
    separation = positions[dst] - positions[src]
    edge_unit = separation / np.linalg.norm(separation, axis=-1, keepdims=True)
    return AtomGraph(
        positions=positions,
        vocab=vocab,
        residue_of=residue_of,
        edge_src=src.astype(np.int64),
        edge_dst=dst.astype(np.int64),
        edge_dist=edge_dist,
        edge_unit=edge_unit,
    )


def timestep_encoding(t: int, width: int, total_steps: int) -> np.ndarray:
    """Sinusoidal encoding of the diffusion timestep.

    Frequencies follow a geometric ladder from 1 down to 1/total_steps
    over width/2 bands; t = 0 denotes the clean state.
    """
    if width % 2 != 0:
        raise FeatureError("time_embed_width must be even")
    half = width // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-np.log(float(total_steps)) * np.arange(half) / (half - 1))
    phases = float(t) * freqs
    return np.concatenate([np.sin(phases), np.cos(phases)])


def build_features(
    view: ComplexView,
    config: FeatureConfig,
    total_steps: int = 100,
) -> FeatureData:
    """All tape-constant feature arrays for one complex view."""
    config.validate()
    return FeatureData(
        view=view,
        single_geometry=single_geometry(view),
        pairs=build_pair_set(view, config),
        graph=build_atom_graph(view, config.atom_cutoff),
        time_encoding=timestep_encoding(view.timestep, config.time_embed_width,
                                        total_steps),
        config=config,
    )


# ---------------------------------------------------------------------------
# Learned encoders (autodiff tape side)
# ---------------------------------------------------------------------------


def linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    """Affine layer reading weights ``name.w`` and bias ``name.b``."""
    return matmul(x, params[name + ".w"]) + params[name + ".b"]


def mlp2(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    """Two-layer MLP with SiLU activation between the linear maps."""
    return linear(silu(linear(x, params, name + ".0")), params, name + ".1")


def linear_shapes(name: str, fan_in: int, fan_out: int) -> dict[str, tuple]:
    return {name + ".w": (fan_in, fan_out), name + ".b": (fan_out,)}


def mlp2_shapes(name: str, fan_in: int, hidden: int,
                fan_out: int) -> dict[str, tuple]:
    shapes = linear_shapes(name + ".0", fan_in, hidden)
    shapes.update(linear_shapes(name + ".1", hidden, fan_out))
    return shapes


def single_input_width(config: FeatureConfig) -> int:
    return (config.type_embed_width + LOCAL_GEOMETRY_DIM + DIHEDRAL_DIM
            + FRAGMENT_COUNT + config.time_embed_width)


def pair_input_width(config: FeatureConfig) -> int:
    return (config.type_embed_width + config.type_embed_width
            + config.pair_rbf_count + ORIENTATION_PAIR_DIM)


def feature_param_shapes(config: FeatureConfig) -> dict[str, tuple]:
    """Shapes of every learned parameter owned by the feature encoders."""
    shapes: dict[str, tuple] = {
        "feat.type_table": (20, config.type_embed_width),
        "feat.pair_type_table": (400, config.type_embed_width),
        "feat.separation_table": (SEPARATION_BUCKETS, config.type_embed_width),
        "feat.atom_table": (len(ATOM_VOCAB), config.atom_width),
    }
    shapes.update(mlp2_shapes("feat.single", single_input_width(config),
                              config.residue_width, config.residue_width))
    shapes.update(mlp2_shapes("feat.pair", pair_input_width(config),
                              config.pair_width, config.pair_width))
    shapes.update(linear_shapes("feat.atom_summary", config.atom_rbf_count,
                                config.atom_width))
    return shapes


def residue_single_features(data: FeatureData,
                            params: dict[str, Tensor]) -> Tensor:
    """Per-residue feature rows e, shape (N, residue_width)."""
    n = data.view.size
    type_rows = gather_rows(params["feat.type_table"], data.view.types)
    time_rows = Tensor(np.tile(data.time_encoding, (n, 1)))
    stacked = concat([type_rows, Tensor(data.single_geometry), time_rows],
                     axis=1)
    return mlp2(stacked, params, "feat.single")


def residue_pair_features(data: FeatureData,
                          params: dict[str, Tensor]) -> Tensor:
    """Per-pair feature rows z, shape (P, pair_width)."""
    pairs = data.pairs
    stacked = concat(
        [
            gather_rows(params["feat.pair_type_table"], pairs.pair_type),
            gather_rows(params["feat.separation_table"], pairs.separation),
            Tensor(pairs.distance_enc),
            Tensor(pairs.orientation),
        ],
        axis=1,
    )
    return mlp2(stacked, params, "feat.pair")


def atom_embedding(
    graph: AtomGraph,
    params: dict[str, Tensor],
    config: FeatureConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Initial atom states (h0, f0, v0) for the atom encoder.

    f0 is the raw RBF encoding of edge distance on [0, cutoff] angstroms
    so an edge exactly at a center peaks at 1. h0 combines the vocabulary
    table with a mean summary of incident edge encodings; v0 is zero.
    """
    if graph.vocab.size and int(graph.vocab.max()) >= len(ATOM_VOCAB):
        raise FeatureError("unknown atom vocabulary index")
    centers, width = gaussian_rbf_centers(0.0, config.atom_cutoff,
                                          config.atom_rbf_count)
    f0 = Tensor(gaussian_rbf_encode(graph.edge_dist, centers, width))
    table_rows = gather_rows(params["feat.atom_table"], graph.vocab)
    degree = np.bincount(graph.edge_src, minlength=graph.atom_count)
    inv_degree = 1.0 / np.maximum(degree, 1)
    pooled = segment_sum(f0, graph.edge_src, graph.atom_count)
    summary = linear(pooled * Tensor(inv_degree[:, None]), params,
                     "feat.atom_summary")
    h0 = table_rows + summary
    v0 = Tensor(np.zeros((graph.atom_count, 3, config.atom_width)))
    return h0, f0, v0
