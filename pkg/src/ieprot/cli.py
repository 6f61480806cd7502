"""Command-line front end: preprocess, train, eval, embed, inspect.

Every command prints its fully resolved configuration before doing work,
so a captured stdout is a complete run record. Exit codes: 0 success,
2 usage or configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import dataclasses
import struct
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from .chemistry import detect_hydrogen_bonds, infer_covalent_bonds, place_amide_hydrogens
from .errors import GraphFormatError, IEProtError, NumericError, ParseError
from .multigraph import _Reader, _Writer, adjacency_to_edges, build_multigraph
from .network import (
    CONV_VARIANTS,
    NEIGHBORHOOD_VARIANTS,
    ModelConfig,
    embed_proteins,
    load_checkpoint,
    save_checkpoint,
)
from .pdb import parse_pdb_file
from .pooling import GraphHierarchy, build_hierarchy, deserialize_hierarchy, serialize_hierarchy
from .training import (
    DatasetManifest,
    ManifestEntry,
    TrainConfig,
    _records_batch,
    evaluate,
    format_log_entry,
    load_records,
    train,
)

EMBED_MAGIC = b"IEEM"
EMBED_VERSION = 1

_EXIT_USAGE = 2
_EXIT_DATA = 3
_EXIT_NUMERIC = 4


def _die(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _print_config(values: dict):
    click.echo("resolved config:")
    for key in sorted(values):
        click.echo(f"  {key} = {values[key]}")


# ---------------------------------------------------------------------------
# config file handling


def read_config_file(path: str | Path) -> dict[str, str]:
    """key = value lines; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, text: str, default):
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        kind = type(default[0])
        return tuple(kind(p) for p in parts)
    return text


def resolve_configs(
    num_classes: int, file_values: dict[str, str], overrides: dict
) -> tuple[ModelConfig, TrainConfig]:
    """Defaults <- config file <- explicit flags, split over both configs.

    Unknown keys are usage errors and name the offending key.
    """
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    model_kw: dict = {}
    train_kw: dict = {}

    def defaults_of(f):
        if f.default is not dataclasses.MISSING:
            return f.default
        return f.default_factory()

    for key, text in file_values.items():
        if key == "num_classes":
            raise click.UsageError("config key num_classes is derived from the manifest")
        if key not in model_fields and key not in train_fields:
            raise click.UsageError(f"unknown config key {key!r}")
        target, fields = (
            (model_kw, model_fields) if key in model_fields else (train_kw, train_fields)
        )
        try:
            target[key] = _coerce(key, text, defaults_of(fields[key]))
        except ValueError as exc:
            raise click.UsageError(str(exc)) from exc

    for key, value in overrides.items():
        if value is None:
            continue
        if key in model_fields:
            model_kw[key] = value
        elif key in train_fields:
            train_kw[key] = value
        else:  # pragma: no cover - flags are declared against known keys
            raise click.UsageError(f"unknown config key {key!r}")

    try:
        model = ModelConfig(num_classes=num_classes, **model_kw)
        training = TrainConfig(**train_kw)
    except (ValueError, TypeError) as exc:
        raise click.UsageError(str(exc)) from exc
    return model, training


def _config_dict(model: ModelConfig, training: TrainConfig) -> dict:
    out = dataclasses.asdict(model)
    out.update(dataclasses.asdict(training))
    return out


# ---------------------------------------------------------------------------
# pdb -> hierarchy pipeline


def hierarchy_from_pdb(path: str | Path, include_inter_chain: bool = True) -> GraphHierarchy:
    """Full ingestion pipeline for one PDB file."""
    structure = parse_pdb_file(path)
    covalent = infer_covalent_bonds(structure)
    hydrogens, _ = place_amide_hydrogens(structure)
    hbonds = detect_hydrogen_bonds(structure, hydrogens, include_inter_chain)
    graph = build_multigraph(structure, covalent, hbonds)
    return build_hierarchy(graph, structure)


def _convert_one(args) -> tuple[str, bytes | None, str]:
    path, include_inter_chain = args
    try:
        data = serialize_hierarchy(hierarchy_from_pdb(path, include_inter_chain))
        return (Path(path).stem, data, "")
    except (IEProtError, OSError) as exc:
        return (Path(path).stem, None, str(exc))


# ---------------------------------------------------------------------------
# embedding file


def write_embeddings(path: str | Path, ids: list[str], vectors: np.ndarray):
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
        raise ValueError("need one id per embedding row")
    w = _Writer()
    w.parts.append(EMBED_MAGIC)
    w.pack("H", EMBED_VERSION)
    w.pack("IH", vectors.shape[0], vectors.shape[1])
    for pid, row in zip(ids, vectors):
        encoded = pid.encode("utf-8")
        w.pack("H", len(encoded))
        w.parts.append(encoded)
        w.array(row, "<f4")
    Path(path).write_bytes(w.finish())


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != EMBED_MAGIC:
        raise GraphFormatError("not an embedding file")
    (stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored:
        raise GraphFormatError("checksum mismatch")
    r = _Reader(data[:-4])
    r.pos = 4
    version = r.unpack("H")
    if version != EMBED_VERSION:
        raise GraphFormatError(f"unsupported embedding format version {version}")
    count, dim = r.unpack("IH")
    ids = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        length = r.unpack("H")
        raw = r.array("<u1", length)
        ids.append(raw.tobytes().decode("utf-8"))
        rows[i] = r.array("<f4", dim)
    return ids, rows


# ---------------------------------------------------------------------------
# shared loaders with the exit-code policy applied


def _load_manifest(path: str) -> DatasetManifest:
    # a malformed manifest is a configuration problem, not a data problem
    try:
        return DatasetManifest.load(path)
    except ParseError as exc:
        _die(_EXIT_USAGE, f"manifest {path}: {exc}")
    except OSError as exc:
        _die(_EXIT_USAGE, f"manifest {path}: {exc}")


def _load_split(manifest: DatasetManifest, config: ModelConfig, split: str, root: Path):
    try:
        return load_records(manifest, config, split, root)
    except (IEProtError, OSError) as exc:
        _die(_EXIT_DATA, str(exc))


def _load_params(path: str):
    try:
        return load_checkpoint(Path(path).read_bytes())
    except (IEProtError, OSError) as exc:
        _die(_EXIT_DATA, f"checkpoint {path}: {exc}")


# ---------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Intrinsic-extrinsic protein graph learning pipeline."""


@main.command("preprocess")
@click.option("--in", "in_dir", required=True, type=click.Path(), help="Directory of PDB files.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for graph files.")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(), help="Manifest skeleton to write.")
@click.option("--no-interchain-hbonds", is_flag=True, help="Restrict hydrogen bonds to within-chain pairs.")
@click.option("--jobs", default=1, show_default=True, help="Parallel worker processes.")
def cmd_preprocess(in_dir, out_dir, manifest_path, no_interchain_hbonds, jobs):
    """Convert a directory of PDB files into graph hierarchy files."""
    _print_config(
        {
            "in": in_dir,
            "out": out_dir,
            "manifest": manifest_path,
            "interchain_hbonds": not no_interchain_hbonds,
            "jobs": jobs,
        }
    )
    src = Path(in_dir)
    if not src.is_dir():
        _die(_EXIT_USAGE, f"input directory {in_dir} is not readable")
    try:
        files = sorted(p for p in src.iterdir() if p.is_file())
    except OSError as exc:
        _die(_EXIT_USAGE, f"input directory {in_dir}: {exc}")
    dest = Path(out_dir)
    dest.mkdir(parents=True, exist_ok=True)

    tasks = [(str(p), not no_interchain_hbonds) for p in files]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_convert_one, tasks))
    else:
        results = [_convert_one(t) for t in tasks]

    manifest_file = Path(manifest_path)
    manifest_file.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    skipped = 0
    for (stem, data, message), path in zip(results, files):
        if data is None:
            skipped += 1
            click.echo(f"skip {path.name}: {message}", err=True)
            continue
        graph_path = dest / f"{stem}.iecg"
        graph_path.write_bytes(data)
        rel = graph_path.resolve().relative_to(manifest_file.resolve().parent)
        entries.append(ManifestEntry(str(rel), 0, "train"))
        click.echo(f"wrote {graph_path}")

    click.echo(f"parsed = {len(entries)}")
    click.echo(f"skipped = {skipped}")
    if not entries:
        _die(_EXIT_DATA, "no input file produced a graph")
    DatasetManifest(entries, ["unlabeled"]).save(manifest_file)
    click.echo(f"manifest = {manifest_file}")


@main.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), help="key = value config file.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Checkpoint directory.")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr0", type=float, default=None)
@click.option("--width-scale", type=float, default=None)
@click.option("--conv-variant", type=click.Choice(CONV_VARIANTS), default=None)
@click.option("--neighborhood-variant", type=click.Choice(NEIGHBORHOOD_VARIANTS), default=None)
@click.option("--pooling/--no-pooling", "pooling_enabled", default=None)
@click.option("--class-weights/--no-class-weights", "use_class_weights", default=None)
def cmd_train(manifest_path, config_path, out_dir, **overrides):
    """Train a classifier from a manifest of graph files."""
    manifest = _load_manifest(manifest_path)
    file_values = {}
    if config_path:
        try:
            file_values = read_config_file(config_path)
        except ParseError as exc:
            _die(_EXIT_USAGE, f"config {config_path}: {exc}")
        except OSError as exc:
            _die(_EXIT_USAGE, f"config {config_path}: {exc}")
    if manifest.num_classes < 2:
        _die(_EXIT_USAGE, "manifest defines fewer than 2 classes")
    model_config, train_config = resolve_configs(manifest.num_classes, file_values, overrides)
    _print_config(_config_dict(model_config, train_config))

    root = Path(manifest_path).resolve().parent
    train_records = _load_split(manifest, model_config, "train", root)
    valid_records = _load_split(manifest, model_config, "valid", root)
    if not train_records:
        _die(_EXIT_DATA, "manifest has no train rows")
    click.echo(f"train proteins = {len(train_records)}")
    click.echo(f"valid proteins = {len(valid_records)}")

    dest = Path(out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    log_path = dest / "train.log"
    with log_path.open("w") as log:

        def log_fn(entry):
            line = format_log_entry(entry)
            log.write(line + "\n")
            log.flush()
            click.echo(line)

        try:
            result = train(
                model_config,
                train_config,
                train_records,
                valid_records or None,
                log_fn=log_fn,
            )
        except NumericError as exc:
            _die(_EXIT_NUMERIC, str(exc))

    (dest / "best.ieck").write_bytes(result.best_checkpoint)
    (dest / "last.ieck").write_bytes(save_checkpoint(result.params))
    click.echo(f"best epoch = {result.best_epoch}")
    click.echo(f"best accuracy = {result.best_accuracy:.4f}")
    click.echo(f"checkpoints = {dest / 'best.ieck'}, {dest / 'last.ieck'}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True, type=click.Choice(("train", "valid", "test")))
@click.option("--batch-size", default=8, show_default=True, type=int)
def cmd_eval(manifest_path, checkpoint_path, split, batch_size):
    """Report accuracy and loss on one manifest split."""
    _print_config(
        {
            "manifest": manifest_path,
            "checkpoint": checkpoint_path,
            "split": split,
            "batch_size": batch_size,
        }
    )
    manifest = _load_manifest(manifest_path)
    params = _load_params(checkpoint_path)
    root = Path(manifest_path).resolve().parent
    records = _load_split(manifest, params.config, split, root)
    if not records:
        _die(_EXIT_DATA, f"manifest has no {split} rows")
    metrics = evaluate(params, records, batch_size)
    click.echo(f"split = {split}")
    click.echo(f"proteins = {len(records)}")
    click.echo(f"loss = {metrics['loss']:.6f}")
    click.echo(f"accuracy = {metrics['accuracy']:.4f}")
    per_class = metrics["per_class_accuracy"]
    click.echo(f"mean per-class accuracy = {float(np.mean(per_class)):.4f}")
    for label, acc in enumerate(per_class):
        name = manifest.label_names[label] if label < len(manifest.label_names) else str(label)
        click.echo(f"class {label} ({name}) accuracy = {acc:.4f}")


@main.command("embed")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", default=None, type=click.Choice(("train", "valid", "test")), help="Restrict to one split (default: all rows).")
@click.option("--batch-size", default=8, show_default=True, type=int)
def cmd_embed(manifest_path, checkpoint_path, out_path, split, batch_size):
    """Write per-protein global feature vectors for manifest rows."""
    _print_config(
        {
            "manifest": manifest_path,
            "checkpoint": checkpoint_path,
            "out": out_path,
            "split": split or "all",
            "batch_size": batch_size,
        }
    )
    manifest = _load_manifest(manifest_path)
    params = _load_params(checkpoint_path)
    root = Path(manifest_path).resolve().parent
    if split is None:
        records = []
        for tag in ("train", "valid", "test"):
            records.extend(_load_split(manifest, params.config, tag, root))
    else:
        records = _load_split(manifest, params.config, split, root)
    if not records:
        _die(_EXIT_DATA, "manifest selects no proteins")

    ids = []
    chunks = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = _records_batch(chunk, params.config)
        chunks.append(embed_proteins(params, batch))
        ids.extend(rec.protein_id for rec in chunk)
    vectors = np.concatenate(chunks)
    write_embeddings(out_path, ids, vectors)
    click.echo(f"proteins = {len(ids)}")
    click.echo(f"dimension = {vectors.shape[1]}")
    click.echo(f"embeddings = {out_path}")


@main.command("inspect")
@click.option("--graph", "graph_path", required=True, type=click.Path())
def cmd_inspect(graph_path):
    """Summarize a graph or hierarchy file."""
    try:
        hierarchy = deserialize_hierarchy(Path(graph_path).read_bytes())
    except (IEProtError, OSError) as exc:
        _die(_EXIT_DATA, f"{graph_path}: {exc}")
    base = hierarchy.levels[0]
    click.echo(f"file = {graph_path}")
    click.echo(f"levels = {len(hierarchy.levels)}")
    click.echo(f"atoms = {base.num_nodes}")
    click.echo(f"residues = {base.num_residues}")
    click.echo(f"features per node = {base.features.shape[1]}")
    click.echo(f"level sizes = {' '.join(str(s) for s in hierarchy.level_sizes)}")
    for k, level in enumerate(hierarchy.levels, start=1):
        cov = len(adjacency_to_edges(level.adj_A))
        both = len(adjacency_to_edges(level.adj_B))
        click.echo(f"level {k}: nodes = {level.num_nodes}  covalent edges = {cov}  covalent+hbond edges = {both}")
    defaults = ModelConfig(num_classes=2)
    click.echo(f"default hop caps = {defaults.hop_cap_1} (covalent), {defaults.hop_cap_2} (covalent+hbond)")


if __name__ == "__main__":
    main()
