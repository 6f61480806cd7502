"""Training loop: momentum descent with the full regularization recipe.

Heavy-ball momentum at 0.98, learning rate halved every 50 epochs down
to a floor, L2 on the convolution and head weights, global gradient
clipping, and three stochastic defenses: geometric augmentation of the
coordinates, Gaussian feature noise before convolutions, and whole-atom
feature dropout. All randomness flows from one seed through one
generator, so a fixed seed reproduces a run byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import NumericError, ParseError
from .multigraph import NeighborTableBuilder
from .network import (
    BatchData,
    ForwardContext,
    ModelConfig,
    ModelParams,
    build_batch,
    init_params,
    make_builders,
    model_forward,
    protein_tables,
    save_checkpoint,
)
from .pooling import GraphHierarchy, deserialize_hierarchy, recompute_positions

SPLITS = ("train", "valid", "test")


@dataclass
class TrainConfig:
    epochs: int = 600
    momentum: float = 0.98
    lr0: float = 0.001
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    lr_min: float = 1e-6
    l2: float = 0.001
    grad_clip_norm: float = 10.0
    batch_size: int = 8
    coord_noise_sigma: float = 0.1
    axis_scale_range: tuple = (0.9, 1.1)
    feature_noise_sigma: float = 0.025
    atom_feature_dropout_p: float = 0.05
    noise_every_conv: bool = True
    use_class_weights: bool = False
    atom_budget: int = 200000
    seed: int = 0

    def __post_init__(self):
        self.axis_scale_range = tuple(float(v) for v in self.axis_scale_range)
        for name in ("momentum", "lr0", "lr_decay", "lr_min", "l2", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return max(self.lr_min, self.lr0 * self.lr_decay ** (epoch // self.lr_decay_every))


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    label_names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        if self.label_names:
            return len(self.label_names)
        return max(e.label for e in self.entries) + 1

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def validate(self):
        classes = self.num_classes
        for e in self.entries:
            if e.split not in SPLITS:
                raise ParseError(f"unknown split {e.split!r}")
            if not 0 <= e.label < classes:
                raise ParseError(f"label {e.label} out of range for {classes} classes")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected path<TAB>label<TAB>split", lineno)
            try:
                label = int(parts[1])
            except ValueError:
                raise ParseError(f"malformed label {parts[1]!r}", lineno) from None
            entries.append(ManifestEntry(parts[0], label, parts[2]))
        labels_path = path.with_suffix(path.suffix + ".labels")
        names = []
        if labels_path.exists():
            names = [l for l in labels_path.read_text().splitlines() if l.strip()]
        manifest = cls(entries, names)
        manifest.validate()
        return manifest

    def save(self, path: str | Path):
        path = Path(path)
        lines = [f"{e.path}\t{e.label}\t{e.split}" for e in self.entries]
        path.write_text("\n".join(lines) + "\n")
        if self.label_names:
            labels_path = path.with_suffix(path.suffix + ".labels")
            labels_path.write_text("\n".join(self.label_names) + "\n")


@dataclass
class ProteinRecord:
    protein_id: str
    hierarchy: GraphHierarchy
    label: int
    builders: list[NeighborTableBuilder]
    base_tables: list
    base_positions: np.ndarray  # (n, 3) float64, unaugmented

    @property
    def num_atoms(self) -> int:
        return self.hierarchy.levels[0].num_nodes


def make_record(
    protein_id: str, hierarchy: GraphHierarchy, label: int, config: ModelConfig
) -> ProteinRecord:
    builders = make_builders(hierarchy, config)
    tables = protein_tables(hierarchy, config, builders)
    base = hierarchy.levels[0].positions.astype(np.float64)
    return ProteinRecord(protein_id, hierarchy, label, builders, tables, base)


def load_records(
    manifest: DatasetManifest, config: ModelConfig, split: str, root: str | Path = "."
) -> list[ProteinRecord]:
    records = []
    for entry in manifest.split(split):
        path = Path(root) / entry.path
        hierarchy = deserialize_hierarchy(path.read_bytes())
        records.append(make_record(path.stem, hierarchy, entry.label, config))
    return records


# ---------------------------------------------------------------------------
# augmentation


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via a normalized quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def augment_positions(
    positions: np.ndarray,
    rng: np.random.Generator,
    coord_noise_sigma: float = 0.1,
    axis_scale_range: tuple = (0.9, 1.1),
    rotate: bool = True,
) -> np.ndarray:
    """Random rotation, per-axis scaling and coordinate jitter.

    Bond topology is untouched, so only positions (and with them the
    extrinsic kernel inputs) change.
    """
    pos = np.asarray(positions, dtype=np.float64)
    lo, hi = axis_scale_range
    scales = rng.uniform(lo, hi, size=3)
    out = pos * scales
    if rotate:
        out = out @ random_rotation(rng).T
    if coord_noise_sigma > 0.0:
        out = out + rng.normal(0.0, coord_noise_sigma, size=out.shape)
    return out


# ---------------------------------------------------------------------------
# optimization


class MomentumOptimizer:
    """Classical heavy-ball update with global-norm gradient clipping."""

    def __init__(self, params: ModelParams, momentum: float, clip_norm: float):
        self.params = params
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {
            name: np.zeros_like(t.values) for name, t in params.trainable()
        }

    def step(self, lr: float):
        tensors = [t for _, t in self.params.trainable()]
        norm = ad.global_grad_norm(tensors)
        factor = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        for name, tensor in self.params.trainable():
            if tensor.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += tensor.grad * factor
            tensor.values -= lr * v
            tensor.grad = None


def clip_factor(norm: float, clip_norm: float) -> float:
    return 1.0 if norm <= clip_norm else clip_norm / norm


def batch_loss(
    params: ModelParams,
    batch: BatchData,
    ctx: ForwardContext,
    l2: float,
    tape: Tape | None,
    class_weights: np.ndarray | None = None,
):
    scores = model_forward(params, batch, ctx, tape)
    weights = None if class_weights is None else class_weights[batch.labels]
    loss = ad.softmax_cross_entropy(tape, scores, batch.labels, weights)
    if l2 > 0.0 and ctx.train:
        reg = None
        for name in params.l2_names():
            term = ad.sum_squares(tape, params.tensors[name])
            reg = term if reg is None else ad.add_scalars(tape, reg, term)
        if reg is not None:
            loss = ad.add_scalars(tape, loss, ad.scale(tape, reg, 0.5 * l2))
    return loss, scores


def _pack_batches(order: np.ndarray, records: list[ProteinRecord], batch_size: int, atom_budget: int):
    batches, current, atoms = [], [], 0
    for idx in order:
        rec = records[int(idx)]
        if current and (len(current) >= batch_size or atoms + rec.num_atoms > atom_budget):
            batches.append(current)
            current, atoms = [], 0
        current.append(rec)
        atoms += rec.num_atoms
    if current:
        batches.append(current)
    return batches


def _eval_batches(records: list[ProteinRecord], batch_size: int):
    return [records[i : i + batch_size] for i in range(0, len(records), batch_size)]


def _records_batch(records: list[ProteinRecord], config: ModelConfig, tables=None) -> BatchData:
    entries = [
        (rec.hierarchy, rec.base_tables if tables is None else tables[k])
        for k, rec in enumerate(records)
    ]
    labels = np.array([rec.label for rec in records], dtype=np.int64)
    ids = [rec.protein_id for rec in records]
    return build_batch(entries, config, labels, ids)


def evaluate(params: ModelParams, records: list[ProteinRecord], batch_size: int = 8) -> dict:
    """Eval-mode metrics: mean accuracy, per-class accuracy, loss."""
    config = params.config
    ctx = ForwardContext(train=False)
    total_loss = 0.0
    correct = np.zeros(config.num_classes, dtype=np.int64)
    seen = np.zeros(config.num_classes, dtype=np.int64)
    for chunk in _eval_batches(records, batch_size):
        batch = _records_batch(chunk, config)
        loss, scores = batch_loss(params, batch, ctx, 0.0, None)
        total_loss += float(loss.values) * len(chunk)
        predicted = scores.values.argmax(axis=1)
        for label, pred in zip(batch.labels, predicted):
            seen[label] += 1
            correct[label] += int(pred == label)
    per_class = np.divide(correct, seen, out=np.zeros(len(seen)), where=seen > 0)
    return {
        "accuracy": float(correct.sum() / max(1, seen.sum())),
        "per_class_accuracy": per_class.tolist(),
        "loss": total_loss / max(1, len(records)),
    }


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    best_checkpoint: bytes
    best_accuracy: float
    best_epoch: int


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_records: list[ProteinRecord],
    valid_records: list[ProteinRecord] | None = None,
    params: ModelParams | None = None,
    log_fn=None,
    eval_train: bool = False,
    stop_fn=None,
) -> TrainResult:
    """Run the optimization loop and return final plus best parameters.

    Best is by validation accuracy when a validation set exists (final
    parameters otherwise). stop_fn(entry) may end training early; it
    sees each epoch's logged record.
    """
    if not train_records:
        raise ValueError("no training records")
    tc = train_config
    mc = model_config
    rng = np.random.default_rng(tc.seed)
    if params is None:
        params = init_params(mc, seed=tc.seed)
    optimizer = MomentumOptimizer(params, tc.momentum, tc.grad_clip_norm)

    class_weights = None
    if tc.use_class_weights:
        counts = np.bincount([r.label for r in train_records], minlength=mc.num_classes)
        class_weights = counts.sum() / np.maximum(1, counts * mc.num_classes)

    history: list[dict] = []
    best = (-1.0, -1, save_checkpoint(params))
    step = 0
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        order = rng.permutation(len(train_records))
        epoch_loss, epoch_correct, epoch_seen = 0.0, 0, 0
        for chunk in _pack_batches(order, train_records, tc.batch_size, tc.atom_budget):
            tables = []
            for rec in chunk:
                augmented = augment_positions(
                    rec.base_positions, rng, tc.coord_noise_sigma, tc.axis_scale_range
                )
                recompute_positions(rec.hierarchy, augmented)
                tables.append(protein_tables(rec.hierarchy, mc, rec.builders))
            batch = _records_batch(chunk, mc, tables)
            ctx = ForwardContext(
                train=True,
                rng=rng,
                noise_sigma=tc.feature_noise_sigma,
                atom_dropout_p=tc.atom_feature_dropout_p,
                noise_every_conv=tc.noise_every_conv,
            )
            tape = Tape()
            loss, scores = batch_loss(params, batch, ctx, tc.l2, tape, class_weights)
            if not np.isfinite(loss.values):
                ids = ",".join(batch.ids)
                raise NumericError(f"non-finite loss at step {step} on batch [{ids}]")
            tape.backward(loss)
            optimizer.step(lr)
            step += 1
            epoch_loss += float(loss.values) * len(chunk)
            epoch_correct += int((scores.values.argmax(axis=1) == batch.labels).sum())
            epoch_seen += len(chunk)

        entry = {
            "epoch": epoch,
            "step": step,
            "loss": epoch_loss / max(1, epoch_seen),
            "lr": lr,
            "accuracy": epoch_correct / max(1, epoch_seen),
        }
        if eval_train:
            entry["train_eval_accuracy"] = evaluate(params, train_records, tc.batch_size)["accuracy"]
        if valid_records:
            metrics = evaluate(params, valid_records, tc.batch_size)
            entry["valid_accuracy"] = metrics["accuracy"]
            entry["valid_loss"] = metrics["loss"]
            if metrics["accuracy"] > best[0]:
                best = (metrics["accuracy"], epoch, save_checkpoint(params))
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if stop_fn is not None and stop_fn(entry):
            break

    for rec in train_records:
        recompute_positions(rec.hierarchy, rec.base_positions)
    if valid_records:
        best_acc, best_epoch, best_ckpt = best
    else:
        best_acc = history[-1]["accuracy"] if history else 0.0
        best_epoch = len(history) - 1
        best_ckpt = save_checkpoint(params)
    return TrainResult(params, history, best_ckpt, best_acc, best_epoch)


def format_log_entry(entry: dict) -> str:
    parts = [f"epoch={entry['epoch']}", f"step={entry['step']}"]
    parts.append(f"loss={entry['loss']:.6f}")
    parts.append(f"lr={entry['lr']:.8f}")
    parts.append(f"accuracy={entry['accuracy']:.4f}")
    for key in ("train_eval_accuracy", "valid_accuracy", "valid_loss"):
        if key in entry:
            parts.append(f"{key}={entry[key]:.4f}")
    return " ".join(parts)
