"""JSONL serialization of datasets, one query group per line after a schema header."""

import gzip
import io
import json
import logging
from collections.abc import Iterator
from contextlib import ExitStack, contextmanager
from pathlib import Path
from typing import IO, Any

import numpy as np
from pydantic import ValidationError

from permurank.datagen.models import SPLITS, Dataset, QueryGroup, SyntheticWorldConfig
from permurank.errors import SchemaError

log = logging.getLogger(__name__)

DATASET_SCHEMA = "permurank.dataset"
DATASET_VERSION = 1

_ARRAY_FIELDS = {
    "q": np.float64,
    "context": np.float64,
    "items": np.float64,
    "brands": np.int64,
    "colors": np.int64,
    "rel_logits": np.float64,
    "logged_order": np.int64,
    "clicks": np.int64,
}
_KNOWN_FIELDS = {*QueryGroup.model_fields, "split"}


@contextmanager
def open_text(path: Path, mode: str) -> Iterator[IO[str]]:
    """Open a text file, gzip-compressed when the name ends in .gz.

    Compressed output carries neither a timestamp nor the file name, so equal content
    gives equal bytes. Every handle opened here is closed on exit.
    """
    with ExitStack() as stack:
        if path.suffix != ".gz":
            yield stack.enter_context(open(path, mode, encoding="utf-8"))
        elif "w" in mode:
            raw = stack.enter_context(open(path, "wb"))
            compressed = stack.enter_context(gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0))
            yield stack.enter_context(io.TextIOWrapper(compressed, encoding="utf-8"))
        else:
            yield stack.enter_context(gzip.open(path, "rt", encoding="utf-8"))


def group_record(group: QueryGroup, split: str) -> dict[str, Any]:
    """JSON-ready record of one group."""
    record: dict[str, Any] = {"split": split}
    for name in QueryGroup.model_fields:
        value = getattr(group, name)
        record[name] = value.tolist() if isinstance(value, np.ndarray) else value
    return record


def _group_from_record(record: dict[str, Any]) -> QueryGroup:
    values = {name: record[name] for name in QueryGroup.model_fields}
    for name, dtype in _ARRAY_FIELDS.items():
        values[name] = np.asarray(values[name], dtype=dtype)
    if values["items"].ndim != 2:
        values["items"] = values["items"].reshape(values["logged_order"].size, -1)
    return QueryGroup(**values)


def save_dataset(dataset: Dataset, path: Path | str) -> Path:
    """Write a dataset as JSONL.

    Args:
        dataset: Dataset to write.
        path: Target file; a .gz suffix selects gzip compression.

    Returns:
        Path: The written file.

    Notes:
        1. The first line is a header with the schema name, version and world config.
        2. Every following line holds one group and the split it belongs to.
        3. Floats are written in their shortest round-trip form, so load reproduces them exactly.

    """
    _msg = f"save_dataset starting for {path}"
    log.debug(_msg)

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema": DATASET_SCHEMA, "version": DATASET_VERSION, "world": dataset.world.model_dump()}
    with open_text(target, "w") as handle:
        handle.write(json.dumps(header) + "\n")
        for split in SPLITS:
            for group in dataset.split(split):
                handle.write(json.dumps(group_record(group, split)) + "\n")

    _msg = f"save_dataset returning {target}"
    log.debug(_msg)
    return target


def _lines(path: Path) -> Iterator[tuple[int, str]]:
    with open_text(path, "r") as handle:
        for number, line in enumerate(handle, start=1):
            if line.strip():
                yield number, line


def _parse(path: Path, number: int, line: str) -> dict[str, Any]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        _msg = f"{path}: line {number} is truncated or not valid JSON ({e.msg})"
        raise SchemaError(_msg) from e
    if not isinstance(record, dict):
        _msg = f"{path}: line {number} is not a JSON object"
        raise SchemaError(_msg)
    return record


def check_header(path: Path, record: dict[str, Any], schema: str, version: int) -> None:
    """Refuse files whose header names another schema or version."""
    if record.get("schema") != schema:
        _msg = f"{path}: expected schema {schema!r}, found {record.get('schema')!r}"
        raise SchemaError(_msg)
    if record.get("version") != version:
        _msg = f"{path}: schema version {record.get('version')} is not supported (this build reads version {version})"
        raise SchemaError(_msg)


def load_dataset(path: Path | str) -> Dataset:
    """Read a dataset written by save_dataset.

    Args:
        path: JSONL file, optionally gzip-compressed.

    Returns:
        Dataset: Groups in their stored splits and order.

    Notes:
        1. An empty file or a header with another schema or version is refused.
        2. A line that is not valid JSON is reported with its line number.
        3. Unknown fields are ignored with a warning so newer files stay readable.

    """
    _msg = f"load_dataset starting for {path}"
    log.debug(_msg)

    source = Path(path)
    if not source.exists():
        _msg = f"dataset not found: {source}"
        raise SchemaError(_msg)
    lines = _lines(source)
    first = next(lines, None)
    if first is None:
        _msg = f"{source}: file is empty"
        raise SchemaError(_msg)
    header = _parse(source, *first)
    check_header(source, header, DATASET_SCHEMA, DATASET_VERSION)
    try:
        world = SyntheticWorldConfig.model_validate(header.get("world", {}))
    except ValidationError as e:
        _msg = f"{source}: invalid world config in header: {e}"
        raise SchemaError(_msg) from e

    splits: dict[str, list[QueryGroup]] = {name: [] for name in SPLITS}
    unknown: set[str] = set()
    for number, line in lines:
        record = _parse(source, number, line)
        unknown.update(set(record) - _KNOWN_FIELDS)
        split = record.get("split")
        if split not in splits:
            _msg = f"{source}: line {number} has unknown split {split!r}"
            raise SchemaError(_msg)
        try:
            splits[split].append(_group_from_record(record))
        except (KeyError, ValueError, ValidationError) as e:
            _msg = f"{source}: line {number} is not a valid group: {e}"
            raise SchemaError(_msg) from e

    if unknown:
        _msg = f"{source}: ignoring unknown fields {sorted(unknown)}"
        log.warning(_msg)
    dataset = Dataset(world=world, **splits)

    _msg = f"load_dataset returning {len(dataset.all_groups())} groups"
    log.debug(_msg)
    return dataset


def save_splits(dataset: Dataset, directory: Path | str, suffix: str = ".jsonl") -> dict[str, Path]:
    """Write one dataset file per split: train.jsonl, val.jsonl and test.jsonl."""
    target = Path(directory)
    written: dict[str, Path] = {}
    for split in SPLITS:
        part = Dataset(world=dataset.world, **{split: dataset.split(split)})
        written[split] = save_dataset(part, target / f"{split}{suffix}")
    return written


def read_data(path: Path | str) -> Dataset:
    """Load a dataset file, or a directory written by save_splits.

    Args:
        path: A JSONL file, or a directory holding per-split files.

    Returns:
        Dataset: Every split found; the world config comes from the first file.

    """
    source = Path(path)
    if not source.is_dir():
        return load_dataset(source)

    parts: dict[str, list[QueryGroup]] = {name: [] for name in SPLITS}
    world: SyntheticWorldConfig | None = None
    for split in SPLITS:
        candidates = [source / f"{split}.jsonl", source / f"{split}.jsonl.gz"]
        found = next((c for c in candidates if c.exists()), None)
        if found is None:
            continue
        part = load_dataset(found)
        world = world or part.world
        for name in SPLITS:
            parts[name].extend(part.split(name))
    if world is None:
        _msg = f"{source}: no train/val/test dataset files found"
        raise SchemaError(_msg)
    return Dataset(world=world, **parts)
