"""The denoising network: atom-level message passing, residue fusion, heads.

The atom track runs stacked vector-scalar message-passing blocks over the
heavy-atom graph, carrying invariant scalar channels alongside equivariant
3-vector channels. The residue track fuses pooled atom states with the
residue features through invariant point attention. Three heads read the
fused CDR rows: amino-acid type distributions, position noise vectors in
the global normalized frame, and denoised orientations.

Invariance and equivariance are architectural: scalars only ever see
distances, inner products, and frame-relative quantities, while vector
channels are built from edge directions and other vectors under invariant
gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    cross3,
    dot_last,
    gather_rows,
    matmul,
    no_grad,
    normalize_rows,
    segment_softmax,
    segment_sum,
    softmax,
    softplus,
    tsum,
)
from .features import (
    AtomGraph,
    FeatureConfig,
    FeatureData,
    atom_embedding,
    build_features,
    complex_view,
    feature_param_shapes,
    linear,
    linear_shapes,
    mlp2,
    mlp2_shapes,
    residue_pair_features,
    residue_single_features,
)


class NetworkError(ValueError):
    """Raised when network preconditions are violated."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the denoiser."""

    features: FeatureConfig = field(default_factory=FeatureConfig)
    vismp_blocks: int = 4
    ipa_blocks: int = 2
    ipa_heads: int = 4
    ipa_channel: int = 16
    ipa_points: int = 4
    pos_blocks: int = 2
    pos_readout: int = 4
    total_steps: int = 100

    def validate(self) -> None:
        self.features.validate()
        for name in ("ipa_blocks", "ipa_heads", "ipa_channel", "ipa_points",
                     "pos_blocks", "pos_readout", "total_steps"):
            if int(getattr(self, name)) < 1:
                raise NetworkError(f"{name} must be a positive integer")
        if self.vismp_blocks < 0:
            raise NetworkError("vismp_blocks must be non-negative")

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "features"}
        out["features"] = dict(self.features.__dict__)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        payload = dict(payload)
        features = FeatureConfig(**payload.pop("features", {}))
        return cls(features=features, **payload)


@dataclass
class DenoiseOutput:
    """Detached head outputs for the CDR residues."""

    type_probs: np.ndarray  # (m, 20) rows on the simplex
    position_noise: np.ndarray  # (m, 3) in normalized global coordinates
    orientations: np.ndarray  # (m, 3, 3) valid rotations


def network_param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Shapes of every learned parameter outside the feature encoders."""
    fc = config.features
    atom_k = fc.atom_width
    edge_k = fc.atom_rbf_count
    d_res = fc.residue_width
    d_pair = fc.pair_width
    shapes: dict[str, tuple] = {}
    for b in range(config.vismp_blocks):
        p = f"net.vismp{b}."
        shapes.update(mlp2_shapes(p + "msg_s", 2 * atom_k + edge_k, atom_k,
                                  atom_k))
        shapes.update(mlp2_shapes(p + "msg_v", 2 * atom_k + edge_k, atom_k,
                                  2 * atom_k))
        shapes.update(mlp2_shapes(p + "upd_s", 3 * atom_k, atom_k, atom_k))
        shapes.update(mlp2_shapes(p + "upd_e", edge_k + atom_k, atom_k,
                                  edge_k))
        shapes.update(mlp2_shapes(p + "upd_v", atom_k, atom_k, 2 * atom_k))
        shapes[p + "mix_u"] = (atom_k, atom_k)
        shapes[p + "mix_w"] = (atom_k, atom_k)
        shapes[p + "mix_v"] = (atom_k, atom_k)
    shapes.update(linear_shapes("net.fuse", d_res + 4 * atom_k, d_res))
    heads = config.ipa_heads
    width = heads * config.ipa_channel
    points = heads * config.ipa_points * 3
    for b in range(config.ipa_blocks):
        p = f"net.ipa{b}."
        shapes.update(linear_shapes(p + "q", d_res, width))
        shapes.update(linear_shapes(p + "k", d_res, width))
        shapes.update(linear_shapes(p + "v", d_res, width))
        shapes.update(linear_shapes(p + "bias", d_pair, heads))
        shapes.update(linear_shapes(p + "zv", d_pair, width))
        shapes.update(linear_shapes(p + "qp", d_res, points))
        shapes.update(linear_shapes(p + "kp", d_res, points))
        shapes.update(linear_shapes(p + "vp", d_res, points))
        shapes.update(linear_shapes(p + "out", 2 * width + points, d_res))
        shapes[p + "gamma"] = (heads,)
        shapes.update(mlp2_shapes(p + "trans", d_res, d_res, d_res))
    head_in = d_res + fc.time_embed_width
    shapes.update(mlp2_shapes("net.head_type", head_in, d_res, 20))
    shapes.update(mlp2_shapes("net.head_ori", head_in, d_res, 6))
    readout = config.pos_readout
    shapes.update(linear_shapes("net.pos_frame", head_in, 3))
    shapes.update(mlp2_shapes("net.pos_att", 2 * d_res + d_pair, d_res,
                              readout))
    shapes.update(linear_shapes("net.pos_points", d_res, readout * 3))
    shapes.update(linear_shapes("net.pos_gate", head_in, readout))
    for b in range(config.pos_blocks):
        p = f"net.pos{b}."
        shapes.update(mlp2_shapes(p + "gate", head_in + atom_k, atom_k,
                                  2 * atom_k))
        shapes[p + "mix"] = (atom_k, atom_k)
    shapes["net.pos_out"] = (atom_k, 1)
    return shapes


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = feature_param_shapes(config.features)
    shapes.update(network_param_shapes(config))
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Draw a full parameter set; weights scale with 1/sqrt(fan-in)."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            std = 1.0 / np.sqrt(shape[0])
        else:
            std = 0.02
        params[name] = rng.normal(0.0, std, shape)
    return params


def as_tensors(params: dict[str, np.ndarray],
               requires_grad: bool = False) -> dict[str, Tensor]:
    return {
        k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()
    }


def channel_mix(v: Tensor, weight: Tensor) -> Tensor:
    """Mix vector channels: (..., 3, K) times (K, M) -> (..., 3, M)."""
    lead = v.data.shape[:-1]
    flat = v.reshape(-1, v.data.shape[-1])
    return matmul(flat, weight).reshape(*lead, weight.data.shape[-1])


def vismp_block(
    h: Tensor,
    v: Tensor,
    f: Tensor,
    graph: AtomGraph,
    params: dict[str, Tensor],
    prefix: str,
) -> tuple[Tensor, Tensor, Tensor]:
    """One vector-scalar message-passing block with residual connections.

    In order: scalar message aggregation, vector message aggregation
    mixing edge directions with neighbor vectors, scalar node update from
    channel-wise vector inner products, edge update from rejected-vector
    inner products, and the gated vector node update.
    """
    atoms = graph.atom_count
    edges = graph.edge_count
    k = h.data.shape[1]
    unit = Tensor(graph.edge_unit.reshape(edges, 3, 1))
    degree = np.bincount(graph.edge_src, minlength=atoms).astype(np.float64)
    inv_degree = 1.0 / np.maximum(degree, 1.0)

    h_src = gather_rows(h, graph.edge_src)
    h_dst = gather_rows(h, graph.edge_dst)
    edge_in = concat([h_src, h_dst, f], axis=1)

    scalar_msgs = mlp2(edge_in, params, prefix + "msg_s")
    m_scalar = segment_sum(scalar_msgs, graph.edge_src, atoms) * Tensor(
        inv_degree[:, None]
    )

    gates = mlp2(edge_in, params, prefix + "msg_v")
    v_dst = gather_rows(v, graph.edge_dst)
    vec_msgs = unit * gates[:, :k].reshape(edges, 1, k)
    vec_msgs = vec_msgs + v_dst * gates[:, k:].reshape(edges, 1, k)
    m_vector = segment_sum(vec_msgs, graph.edge_src, atoms) * Tensor(
        inv_degree[:, None, None]
    )

    mixed_u = channel_mix(v, params[prefix + "mix_u"])
    mixed_w = channel_mix(v, params[prefix + "mix_w"])
    inner = tsum(mixed_u * mixed_w, axis=1)
    h_new = h + mlp2(concat([h, m_scalar, inner], axis=1), params,
                     prefix + "upd_s")

    v_src = gather_rows(v, graph.edge_src)
    along_src = tsum(v_src * unit, axis=1).reshape(edges, 1, k)
    along_dst = tsum(v_dst * unit, axis=1).reshape(edges, 1, k)
    rej_src = v_src - unit * along_src
    rej_dst = v_dst - unit * along_dst
    rej_inner = tsum(rej_src * rej_dst, axis=1)
    f_new = f + mlp2(concat([f, rej_inner], axis=1), params, prefix + "upd_e")

    v_gates = mlp2(h_new, params, prefix + "upd_v")
    v_new = v + m_vector * v_gates[:, :k].reshape(atoms, 1, k)
    v_new = v_new + channel_mix(v, params[prefix + "mix_v"]) * (
        v_gates[:, k:].reshape(atoms, 1, k)
    )
    return h_new, v_new, f_new


def atom_encoder(
    data: FeatureData,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Embed the atom graph and apply the message-passing stack."""
    h, f, v = atom_embedding(data.graph, params, config.features)
    for b in range(config.vismp_blocks):
        h, v, f = vismp_block(h, v, f, data.graph, params, f"net.vismp{b}.")
    return h, v, f


def pool_atom_scalars(h: Tensor, graph: AtomGraph, n_res: int) -> Tensor:
    return segment_sum(h, graph.residue_of, n_res) * 0.2


def pool_atom_vectors(v: Tensor, graph: AtomGraph, n_res: int) -> Tensor:
    """Mean atom vector per residue, kept in the global frame."""
    return segment_sum(v, graph.residue_of, n_res) * 0.2


def ipa_block(
    h_res: Tensor,
    z: Tensor,
    data: FeatureData,
    params: dict[str, Tensor],
    prefix: str,
    config: ModelConfig,
) -> Tensor:
    """Invariant point attention over the sparse residue pair list."""
    view = data.view
    pairs = data.pairs
    n = view.size
    p = pairs.src.shape[0]
    heads = config.ipa_heads
    ch = config.ipa_channel
    pts = config.ipa_points
    frames = view.frames
    frames_t = np.swapaxes(frames, 1, 2)
    ca = view.ca

    q = gather_rows(linear(h_res, params, prefix + "q"), pairs.src)
    k = gather_rows(linear(h_res, params, prefix + "k"), pairs.dst)
    qk = tsum((q * k).reshape(p, heads, ch), axis=2) * (1.0 / np.sqrt(ch))
    bias = linear(z, params, prefix + "bias")

    def global_points(name: str) -> Tensor:
        local = linear(h_res, params, prefix + name).reshape(n, heads * pts, 3)
        return matmul(local, Tensor(frames_t)) + Tensor(ca[:, None, :])

    q_points = gather_rows(global_points("qp"), pairs.src)
    k_points = gather_rows(global_points("kp"), pairs.dst)
    delta = q_points - k_points
    sq_dist = tsum((delta * delta).reshape(p, heads, pts, 3), axis=(2, 3))
    gamma = softplus(params[prefix + "gamma"]).reshape(1, heads)
    logits = qk + bias - gamma * sq_dist * (0.5 / pts)

    attn = segment_softmax(logits, pairs.src, n)
    attn_col = attn.reshape(p, heads, 1)

    values = gather_rows(linear(h_res, params, prefix + "v"), pairs.dst)
    out_scalar = segment_sum(
        values.reshape(p, heads, ch) * attn_col, pairs.src, n
    ).reshape(n, heads * ch)

    pair_values = linear(z, params, prefix + "zv").reshape(p, heads, ch)
    out_pair = segment_sum(pair_values * attn_col, pairs.src, n).reshape(
        n, heads * ch
    )

    v_points = gather_rows(global_points("vp"), pairs.dst)
    attended = segment_sum(
        v_points.reshape(p, heads, pts, 3) * attn.reshape(p, heads, 1, 1),
        pairs.src,
        n,
    ).reshape(n, heads * pts, 3)
    local_points = matmul(attended - Tensor(ca[:, None, :]), Tensor(frames))
    out_points = local_points.reshape(n, heads * pts * 3)

    fused = concat([out_scalar, out_pair, out_points], axis=1)
    h_res = h_res + linear(fused, params, prefix + "out")
    return h_res + mlp2(h_res, params, prefix + "trans")


def ipa_fuse(
    e: Tensor,
    z: Tensor,
    atom_state: tuple[Tensor, Tensor, Tensor],
    data: FeatureData,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Fuse residue features with pooled atom states, then attend.

    Atom scalars are mean-pooled per residue; atom vectors are rotated
    into the owning residue's local frame before pooling so the summary
    is invariant. The fused rows pass through the point-attention stack.
    """
    view = data.view
    graph = data.graph
    n = view.size
    counts = np.bincount(graph.residue_of, minlength=n)
    if counts.min() == 0:
        raise NetworkError("residue owns zero atoms")
    h_atoms, v_atoms, _ = atom_state
    pooled_h = pool_atom_scalars(h_atoms, graph, n)
    frames_t_per_atom = np.swapaxes(view.frames, 1, 2)[graph.residue_of]
    v_local = matmul(Tensor(frames_t_per_atom), v_atoms)
    pooled_v = pool_atom_vectors(v_local, graph, n)
    pooled_v_flat = pooled_v.reshape(n, 3 * v_atoms.data.shape[-1])
    h_res = linear(concat([e, pooled_h, pooled_v_flat], axis=1), params,
                   "net.fuse")
    for b in range(config.ipa_blocks):
        h_res = ipa_block(h_res, z, data, params, f"net.ipa{b}.", config)
    return h_res


def gram_schmidt_6d(a: Tensor, b: Tensor) -> Tensor:
    """Map two 3-vectors per row to a rotation matrix (columns a, b, c)."""
    m = a.data.shape[0]
    a_n = normalize_rows(a)
    b_perp = b - a_n * dot_last(a_n, b, keepdims=True)
    b_n = normalize_rows(b_perp)
    c = cross3(a_n, b_n)
    return concat(
        [a_n.reshape(m, 3, 1), b_n.reshape(m, 3, 1), c.reshape(m, 3, 1)],
        axis=2,
    )


def denoise_features(
    data: FeatureData,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the full denoiser on featurized inputs.

    Returns per-CDR-residue type distributions (m, 20), position noise
    predictions (m, 3) in normalized global coordinates, and denoised
    orientations (m, 3, 3). The orientation head refines the current
    noisy frame: its two output vectors are anchored at the first two
    frame columns, so small head outputs keep the frame unchanged.
    """
    view = data.view
    if not 1 <= view.timestep <= config.total_steps:
        raise NetworkError(
            f"timestep {view.timestep} outside [1, {config.total_steps}]"
        )
    cdr = np.nonzero(view.cdr_mask)[0]
    if cdr.size == 0:
        raise NetworkError("view has no CDR residues")
    m = cdr.size

    e = residue_single_features(data, params)
    z = residue_pair_features(data, params)
    atom_state = atom_encoder(data, params, config)
    h_res = ipa_fuse(e, z, atom_state, data, params, config)

    time_rows = Tensor(np.tile(data.time_encoding, (m, 1)))
    h_cdr = gather_rows(h_res, cdr)
    head_in = concat([h_cdr, time_rows], axis=1)

    type_probs = softmax(mlp2(head_in, params, "net.head_type"))

    six = mlp2(head_in, params, "net.head_ori")
    anchor_a = Tensor(np.tile([1.0, 0.0, 0.0], (m, 1)))
    anchor_b = Tensor(np.tile([0.0, 1.0, 0.0], (m, 1)))
    local_rot = gram_schmidt_6d(six[:, :3] + anchor_a, six[:, 3:] + anchor_b)
    orientations = matmul(Tensor(view.frames[cdr]), local_rot)

    position_noise = _position_head(h_res, z, atom_state, data, cdr, head_in,
                                    params, config)

    return type_probs, position_noise, orientations


def _position_head(
    h_res: Tensor,
    z: Tensor,
    atom_state: tuple[Tensor, Tensor, Tensor],
    data: FeatureData,
    cdr: np.ndarray,
    head_in: Tensor,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Equivariant position-noise readout for the CDR residues.

    Three terms: a vector expressed in the residue's own noisy frame, an
    attention-weighted sum of displacement vectors toward (learned offsets
    from) neighboring residues, and a gated collapse of the pooled atom
    vector channels. Coefficients, weights, and gates are all invariant,
    so each term rotates with the complex and ignores translation.
    """
    view = data.view
    pairs = data.pairs
    m = cdr.size
    n = view.size
    readout = config.pos_readout

    own = linear(head_in, params, "net.pos_frame")
    term_frame = matmul(Tensor(view.frames[cdr]),
                        own.reshape(m, 3, 1)).reshape(m, 3)

    rows = np.nonzero(view.cdr_mask[pairs.src])[0]
    src = pairs.src[rows]
    dst = pairs.dst[rows]
    cdr_local = np.full(n, -1, dtype=np.int64)
    cdr_local[cdr] = np.arange(m)
    seg = cdr_local[src]
    att_in = concat(
        [gather_rows(h_res, src), gather_rows(h_res, dst),
         gather_rows(z, rows)],
        axis=1,
    )
    logits = mlp2(att_in, params, "net.pos_att")
    attention = segment_softmax(logits, seg, m).reshape(rows.size, readout, 1)
    offsets = linear(h_res, params, "net.pos_points").reshape(n, readout, 3)
    offsets_global = matmul(offsets, Tensor(np.swapaxes(view.frames, 1, 2)))
    displacement = Tensor((view.ca[dst] - view.ca[src])[:, None, :])
    values = displacement + gather_rows(offsets_global, dst)
    pointed = segment_sum(values * attention, seg, m)
    gates = linear(head_in, params, "net.pos_gate")
    term_readout = tsum(pointed * gates.reshape(m, readout, 1), axis=1)

    _, v_atoms, _ = atom_state
    pooled = pool_atom_vectors(v_atoms, data.graph, n)
    vectors = gather_rows(pooled, cdr)
    atom_k = vectors.data.shape[-1]
    for b in range(config.pos_blocks):
        prefix = f"net.pos{b}."
        squared = tsum(vectors * vectors, axis=1)
        bounded = squared / (squared + 1.0)
        gate_pair = mlp2(concat([head_in, bounded], axis=1), params,
                         prefix + "gate")
        vectors = vectors * gate_pair[:, :atom_k].reshape(m, 1, atom_k)
        vectors = vectors + channel_mix(vectors, params[prefix + "mix"]) * (
            gate_pair[:, atom_k:].reshape(m, 1, atom_k)
        )
    term_atoms = channel_mix(vectors, params["net.pos_out"]).reshape(m, 3)

    return term_frame + term_readout + term_atoms


@dataclass
class DenoiserModel:
    """A parameter set bound to its architecture configuration."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "DenoiserModel":
        return cls(config=config, params=init_params(config, seed))

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def denoise(
        self,
        instance,
        state,
        origin: np.ndarray,
        scale: float,
    ) -> DenoiseOutput:
        """Featurize one noised complex and run the denoiser, detached."""
        view = complex_view(instance, origin=origin, scale=scale, state=state)
        data = build_features(view, self.config.features,
                              total_steps=self.config.total_steps)
        with no_grad():
            tensors = as_tensors(self.params)
            probs, noise, rots = denoise_features(data, tensors, self.config)
        return DenoiseOutput(
            type_probs=probs.data.copy(),
            position_noise=noise.data.copy(),
            orientations=rots.data.copy(),
        )
