"""Classification network built on the intrinsic-extrinsic convolution.

One trunk level per hierarchy level: width projection, two bottleneck
blocks whose spatial operator is the kernel-MLP convolution, then
average pooling into the next level. Batch normalization and a leaky
ReLU precede every convolution; the residual branch ends in a
zero-initialized projection so blocks start as identities. Readout is
a per-protein mean followed by a one-hidden-layer MLP.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tape, Tensor
from .elements import NUM_ELEMENTS
from .errors import GraphFormatError, ShapeError
from .multigraph import NUM_FEATURES, NeighborTable, NeighborTableBuilder
from .pooling import GraphHierarchy

CONV_VARIANTS = ("Ours", "ExConv", "InConvC", "InConvH", "InConvCH", "Ours3DCH")
NEIGHBORHOOD_VARIANTS = ("Euclidean", "CovHops", "HydHops")
CHECKPOINT_MAGIC = b"IECK"
CHECKPOINT_VERSION = 1

_NEIGHBORHOOD_MODES = {"Euclidean": "euclidean", "CovHops": "covalent", "HydHops": "hydrogen"}


@dataclass
class ModelConfig:
    num_classes: int
    level_radii: tuple = (3.0, 6.0, 8.0, 12.0, 16.0)
    level_widths: tuple = (64, 128, 256, 512, 1024)
    kernel_hidden: int = 16
    conv_variant: str = "Ours"
    neighborhood_variant: str = "Euclidean"
    pooling_enabled: bool = True
    width_scale: float = 1.0
    head_hidden: int = 1024
    hop_cap_1: int = 6
    hop_cap_2: int = 6
    dropout_conv: float = 0.2
    dropout_head: float = 0.5
    bn_momentum: float = 0.9
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.level_radii = tuple(float(r) for r in self.level_radii)
        self.level_widths = tuple(int(w) for w in self.level_widths)
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if len(self.level_radii) != 5 or len(self.level_widths) != 5:
            raise ValueError("exactly 5 level radii and widths")
        if any(r <= 0 for r in self.level_radii) or list(self.level_radii) != sorted(self.level_radii):
            raise ValueError("level radii must be positive and ascending")
        if any(w <= 0 for w in self.level_widths):
            raise ValueError("level widths must be positive")
        if self.conv_variant not in CONV_VARIANTS:
            raise ValueError(f"unknown conv variant {self.conv_variant!r}")
        if self.neighborhood_variant not in NEIGHBORHOOD_VARIANTS:
            raise ValueError(f"unknown neighborhood variant {self.neighborhood_variant!r}")

    def _scaled(self, width: int) -> int:
        return max(4, int(round(width * self.width_scale / 4)) * 4)

    @property
    def scaled_widths(self) -> tuple[int, ...]:
        return tuple(self._scaled(w) for w in self.level_widths)

    @property
    def scaled_head_hidden(self) -> int:
        return self._scaled(self.head_hidden)

    @property
    def kernel_input_dim(self) -> int:
        return 5 if self.conv_variant == "Ours3DCH" else 3

    @property
    def needs_offsets(self) -> bool:
        return self.conv_variant == "Ours3DCH"


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor]
    bn_states: dict[str, BatchNormState]

    @property
    def dtype(self):
        return self.tensors["head.w1"].values.dtype

    def trainable(self) -> list[tuple[str, Tensor]]:
        return sorted(self.tensors.items())

    def l2_names(self) -> list[str]:
        # batch-norm scale/shift and the embedding stay unregularized
        return [n for n, _ in self.trainable() if ".bn." not in n and n != "embed"]

    def num_parameters(self) -> int:
        return sum(t.values.size for t in self.tensors.values())


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    slope = config.leaky_slope
    tensors: dict[str, Tensor] = {}
    states: dict[str, BatchNormState] = {}

    def param(name, values):
        tensors[name] = Tensor(np.asarray(values, dtype=dtype), requires_grad=True)

    def he(shape, fan_in):
        std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
        return rng.normal(0.0, std, shape)

    def norm(name, width):
        param(name + ".g", np.ones((1, width)))
        param(name + ".b", np.zeros((1, width)))
        states[name] = BatchNormState.create(width, dtype)

    param("embed", rng.normal(0.0, 1.0, (NUM_ELEMENTS, 3)))
    kd = config.kernel_input_dim
    hidden = config.kernel_hidden
    in_width = NUM_FEATURES
    for level, width in enumerate(config.scaled_widths):
        d4 = width // 4
        norm(f"l{level}.proj.bn", in_width)
        param(f"l{level}.proj.w", he((in_width, width), in_width))
        for b in range(2):
            p = f"l{level}.b{b}"
            norm(p + ".bn1", width)
            param(p + ".down.w", he((width, d4), width))
            norm(p + ".bn2", d4)
            param(p + ".kern.w1", he((kd, hidden), kd))
            param(p + ".kern.b1", np.zeros((1, hidden)))
            param(p + ".kern.w2", he((hidden, d4 * d4), hidden))
            param(p + ".kern.b2", np.zeros((1, d4 * d4)))
            norm(p + ".bn3", d4)
            param(p + ".up.w", np.zeros((d4, width)))
        in_width = width
    norm("final.bn", in_width)
    hh = config.scaled_head_hidden
    param("head.w1", he((in_width, hh), in_width))
    param("head.b1", np.zeros((1, hh)))
    param("head.w2", he((hh, config.num_classes), hh))
    param("head.b2", np.zeros((1, config.num_classes)))
    return ModelParams(config, tensors, states)


# ---------------------------------------------------------------------------
# batching


@dataclass
class LevelConv:
    centers: np.ndarray  # (E,) int64, batch-global
    neighbors: np.ndarray  # (E,) int64
    kernel_inputs: np.ndarray  # (E, 3) float32
    rel_offsets: np.ndarray | None  # (E, 3) float32


@dataclass
class BatchData:
    physical: np.ndarray  # (n0, 3)
    elem_idx: np.ndarray  # (n0,)
    level_nodes: list[int]
    conv: list[LevelConv]
    pool_assign: list[np.ndarray]
    pool_sizes: list[np.ndarray]
    protein_of: np.ndarray  # protein id per readout-level node
    num_proteins: int
    labels: np.ndarray | None = None
    ids: list[str] = field(default_factory=list)


def protein_tables(
    hierarchy: GraphHierarchy,
    config: ModelConfig,
    builders: list[NeighborTableBuilder] | None = None,
) -> list[NeighborTable]:
    """Per-level neighbor tables for one protein under a model config.

    Pass cached builders to skip re-running the hop searches when only
    positions changed. With pooling disabled every level reads the
    atom-level graph.
    """
    levels = hierarchy.levels if config.pooling_enabled else [hierarchy.levels[0]] * 5
    if builders is None:
        builders = make_builders(hierarchy, config)
    mode = _NEIGHBORHOOD_MODES[config.neighborhood_variant]
    return [
        builders[l].build(levels[l].positions, config.level_radii[l], config.needs_offsets, mode)
        for l in range(5)
    ]


def make_builders(hierarchy: GraphHierarchy, config: ModelConfig) -> list[NeighborTableBuilder]:
    levels = hierarchy.levels if config.pooling_enabled else [hierarchy.levels[0]] * 5
    out = []
    seen: dict[int, NeighborTableBuilder] = {}
    for g in levels:
        key = id(g)
        if key not in seen:
            seen[key] = NeighborTableBuilder(g.adj_A, g.adj_B, config.hop_cap_1, config.hop_cap_2)
        out.append(seen[key])
    return out


def build_batch(
    entries: list[tuple[GraphHierarchy, list[NeighborTable]]],
    config: ModelConfig,
    labels: np.ndarray | None = None,
    ids: list[str] | None = None,
) -> BatchData:
    """Disjoint union of proteins with batch-global indices per level."""
    pooled = config.pooling_enabled
    num_levels = 5
    offsets = np.zeros(num_levels, dtype=np.int64)
    physical, elem_idx = [], []
    conv_parts: list[list] = [[] for _ in range(num_levels)]
    pool_parts: list[list] = [[] for _ in range(num_levels - 1)]
    protein_of = []
    for pid, (hierarchy, tables) in enumerate(entries):
        levels = hierarchy.levels if pooled else [hierarchy.levels[0]] * num_levels
        base = hierarchy.levels[0]
        physical.append(base.features[:, :3])
        elem_idx.append(base.elem_idx)
        for l in range(num_levels):
            table = tables[l]
            if table.num_centers != levels[l].num_nodes:
                raise ShapeError(
                    f"level {l} table built for {table.num_centers} nodes, graph has {levels[l].num_nodes}"
                )
            conv_parts[l].append(
                (
                    table.centers.astype(np.int64) + offsets[l],
                    table.neighbors.astype(np.int64) + offsets[l],
                    table.kernel_inputs,
                    table.rel_offsets,
                )
            )
        if pooled:
            for l, pool in enumerate(hierarchy.pools):
                pool_parts[l].append(pool.assignment + offsets[l + 1])
        protein_of.append(np.full(levels[-1].num_nodes, pid, dtype=np.int64))
        for l in range(num_levels):
            offsets[l] += levels[l].num_nodes

    conv = []
    for l in range(num_levels):
        centers = np.concatenate([p[0] for p in conv_parts[l]])
        neighbors = np.concatenate([p[1] for p in conv_parts[l]])
        kinputs = np.concatenate([p[2] for p in conv_parts[l]])
        rel = None
        if config.needs_offsets:
            rel = np.concatenate([p[3] for p in conv_parts[l]])
        conv.append(LevelConv(centers, neighbors, kinputs, rel))
    pool_assign, pool_sizes = [], []
    if pooled:
        for l in range(num_levels - 1):
            assign = np.concatenate(pool_parts[l])
            pool_assign.append(assign)
            pool_sizes.append(np.bincount(assign, minlength=offsets[l + 1]))
    return BatchData(
        np.concatenate(physical),
        np.concatenate(elem_idx),
        list(offsets),
        conv,
        pool_assign,
        pool_sizes,
        np.concatenate(protein_of),
        len(entries),
        None if labels is None else np.asarray(labels, dtype=np.int64),
        ids or [],
    )


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class ForwardContext:
    train: bool = False
    rng: np.random.Generator | None = None
    noise_sigma: float = 0.0
    atom_dropout_p: float = 0.0
    noise_every_conv: bool = True


_VARIANT_MASKS = {
    "Ours": (1.0, 1.0, 1.0),
    "ExConv": (1.0, 0.0, 0.0),
    "InConvC": (0.0, 1.0, 0.0),
    "InConvH": (0.0, 0.0, 1.0),
    "InConvCH": (0.0, 1.0, 1.0),
}


def _variant_inputs(level: LevelConv, config: ModelConfig, dtype) -> np.ndarray:
    if config.conv_variant == "Ours3DCH":
        return np.concatenate([level.rel_offsets, level.kernel_inputs[:, 1:3]], axis=1).astype(dtype)
    mask = np.asarray(_VARIANT_MASKS[config.conv_variant], dtype=dtype)
    return level.kernel_inputs.astype(dtype) * mask


def _noise(tape, x, ctx: ForwardContext, dtype):
    if ctx.train and ctx.noise_sigma > 0.0 and ctx.rng is not None:
        bump = ctx.rng.normal(0.0, ctx.noise_sigma, x.shape).astype(dtype)
        return ad.add(tape, x, Tensor(bump))
    return x


def _pre(tape, x, params: ModelParams, name: str, ctx: ForwardContext):
    cfg = params.config
    x = ad.batch_norm(
        tape,
        x,
        params.tensors[name + ".g"],
        params.tensors[name + ".b"],
        params.bn_states[name],
        ctx.train,
        momentum=cfg.bn_momentum,
    )
    return ad.leaky_relu(tape, x, cfg.leaky_slope)


def _ieconv(tape, x, params, prefix, kin: np.ndarray, conv: LevelConv, n_out, ctx):
    cfg = params.config
    t = params.tensors
    h = ad.add(tape, ad.matmul(tape, Tensor(kin), t[prefix + ".w1"]), t[prefix + ".b1"])
    h = ad.leaky_relu(tape, h, cfg.leaky_slope)
    kernels = ad.add(tape, ad.matmul(tape, h, t[prefix + ".w2"]), t[prefix + ".b2"])
    width = x.shape[1]
    kernels = ad.reshape(tape, kernels, (kin.shape[0], width, width))
    gathered = ad.gather_rows(tape, x, conv.neighbors)
    contributions = ad.row_vecmat(tape, gathered, kernels)
    return ad.segment_sum(tape, contributions, conv.centers, n_out)


def _block(tape, x, params, prefix, kin, conv, n_out, ctx):
    cfg = params.config
    dtype = params.dtype
    h = _pre(tape, x, params, prefix + ".bn1", ctx)
    h = ad.dropout(tape, h, cfg.dropout_conv, ctx.rng, ctx.train)
    if ctx.noise_every_conv:
        h = _noise(tape, h, ctx, dtype)
    h = ad.matmul(tape, h, params.tensors[prefix + ".down.w"])

    h = _pre(tape, h, params, prefix + ".bn2", ctx)
    h = _noise(tape, h, ctx, dtype)
    if ctx.train and ctx.atom_dropout_p > 0.0 and ctx.rng is not None:
        keep = (ctx.rng.random(h.shape[0]) >= ctx.atom_dropout_p).astype(dtype)
        h = ad.scale_rows(tape, h, keep)
    h = _ieconv(tape, h, params, prefix + ".kern", kin, conv, n_out, ctx)

    h = _pre(tape, h, params, prefix + ".bn3", ctx)
    h = ad.dropout(tape, h, cfg.dropout_conv, ctx.rng, ctx.train)
    if ctx.noise_every_conv:
        h = _noise(tape, h, ctx, dtype)
    h = ad.matmul(tape, h, params.tensors[prefix + ".up.w"])
    return ad.add(tape, x, h)


def _trunk(tape, params: ModelParams, batch: BatchData, ctx: ForwardContext):
    cfg = params.config
    dtype = params.dtype
    physical = Tensor(batch.physical.astype(dtype))
    embedded = ad.gather_rows(tape, params.tensors["embed"], batch.elem_idx)
    x = ad.concat_cols(tape, physical, embedded)
    for level in range(5):
        kin = _variant_inputs(batch.conv[level], cfg, dtype)
        n_level = batch.level_nodes[level]
        x = _pre(tape, x, params, f"l{level}.proj.bn", ctx)
        if ctx.noise_every_conv:
            x = _noise(tape, x, ctx, dtype)
        x = ad.matmul(tape, x, params.tensors[f"l{level}.proj.w"])
        for b in range(2):
            x = _block(tape, x, params, f"l{level}.b{b}", kin, batch.conv[level], n_level, ctx)
        if cfg.pooling_enabled and level < 4:
            x = ad.segment_sum(tape, x, batch.pool_assign[level], batch.level_nodes[level + 1])
            x = ad.scale_rows(tape, x, 1.0 / batch.pool_sizes[level].astype(np.float64))
    x = _pre(tape, x, params, "final.bn", ctx)
    return ad.segment_mean(tape, x, batch.protein_of, batch.num_proteins)


def model_forward(params: ModelParams, batch: BatchData, ctx: ForwardContext, tape: Tape | None = None) -> Tensor:
    """Class scores, one row per protein in the batch."""
    pooled = _trunk(tape, params, batch, ctx)
    t = params.tensors
    h = ad.add(tape, ad.matmul(tape, pooled, t["head.w1"]), t["head.b1"])
    h = ad.leaky_relu(tape, h, params.config.leaky_slope)
    h = ad.dropout(tape, h, params.config.dropout_head, ctx.rng, ctx.train)
    return ad.add(tape, ad.matmul(tape, h, t["head.w2"]), t["head.b2"])


def embed_proteins(params: ModelParams, batch: BatchData) -> np.ndarray:
    """Per-protein global feature vectors, the input of the head MLP."""
    pooled = _trunk(None, params, batch, ForwardContext(train=False))
    return pooled.values.copy()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    config_blob = json.dumps(asdict(params.config), sort_keys=True).encode()
    parts.append(struct.pack("<I", len(config_blob)))
    parts.append(config_blob)

    entries: list[tuple[str, np.ndarray]] = [(n, t.values) for n, t in params.tensors.items()]
    for name, state in params.bn_states.items():
        entries.append((f"state:{name}.mean", state.mean))
        entries.append((f"state:{name}.var", state.var))
    entries.sort(key=lambda e: e[0])

    parts.append(struct.pack("<I", len(entries)))
    for name, values in entries:
        blob = name.encode()
        parts.append(struct.pack("<H", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<B", values.ndim))
        for dim in values.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def load_checkpoint(data: bytes) -> ModelParams:
    if len(data) < 10 or data[:4] != CHECKPOINT_MAGIC:
        raise GraphFormatError("not a checkpoint file")
    (stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored:
        raise GraphFormatError("checkpoint checksum mismatch")
    pos = 4
    (version,) = struct.unpack_from("<H", data, pos)
    pos += 2
    if version != CHECKPOINT_VERSION:
        raise GraphFormatError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = ModelConfig(**json.loads(data[pos : pos + config_len].decode()))
    pos += config_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos) if ndim else ()
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
        arrays[name] = values

    reference = init_params(config)
    tensors: dict[str, Tensor] = {}
    for name in reference.tensors:
        if name not in arrays:
            raise GraphFormatError(f"checkpoint missing tensor {name}")
        if arrays[name].shape != reference.tensors[name].values.shape:
            raise GraphFormatError(f"checkpoint tensor {name} has wrong shape")
        tensors[name] = Tensor(arrays[name], requires_grad=True)
    states: dict[str, BatchNormState] = {}
    for name in reference.bn_states:
        try:
            states[name] = BatchNormState(arrays[f"state:{name}.mean"], arrays[f"state:{name}.var"])
        except KeyError as missing:
            raise GraphFormatError(f"checkpoint missing {missing.args[0]}") from None
    return ModelParams(config, tensors, states)
