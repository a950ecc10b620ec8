"""JSON checkpoints for reward and ranker parameters."""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from permurank.errors import SchemaError
from permurank.models.params import EncoderConfig, ModelParams, RankerParams, RewardParams

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "permurank.checkpoint"
CHECKPOINT_VERSION = 1

_KINDS: dict[str, type[ModelParams]] = {"reward": RewardParams, "ranker": RankerParams}


def checkpoint_document(params: ModelParams) -> dict[str, Any]:
    """Build the JSON-ready document for a parameter set."""
    return {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "encoder": params.encoder.model_dump(),
        "dims": {"query_dim": params.query_dim, "item_dim": params.item_dim, "max_len": params.max_len},
        "arrays": {
            name: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for name, value in params.arrays.items()
        },
    }


def save_checkpoint(params: ModelParams, path: Path | str) -> Path:
    """Write a checkpoint; floats keep their shortest round-trip representation.

    Args:
        params: Reward or ranker parameters.
        path: Destination file, parent directories are created.

    Returns:
        Path: The written file.

    """
    _msg = f"save_checkpoint starting for {params.kind} at {path}"
    log.debug(_msg)

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(checkpoint_document(params)))

    _msg = f"save_checkpoint returning {target}"
    log.debug(_msg)
    return target


def params_from_document(document: dict[str, Any], source: str = "<memory>") -> ModelParams:
    """Rebuild parameters from a checkpoint document.

    Args:
        document: Parsed checkpoint JSON.
        source: Name used in error messages.

    Returns:
        ModelParams: RewardParams or RankerParams, depending on the stored kind.

    Notes:
        1. Check the schema name and version; a mismatch names both versions.
        2. Validate the encoder section with EncoderConfig.
        3. Rebuild every array from its flat value list and shape.

    """
    if document.get("schema") != CHECKPOINT_SCHEMA:
        _msg = f"{source}: not a checkpoint (schema={document.get('schema')!r})"
        raise SchemaError(_msg)
    if document.get("version") != CHECKPOINT_VERSION:
        _msg = f"{source}: checkpoint version {document.get('version')} is not supported (expected {CHECKPOINT_VERSION})"
        raise SchemaError(_msg)
    kind = document.get("kind")
    if kind not in _KINDS:
        _msg = f"{source}: unknown checkpoint kind {kind!r}"
        raise SchemaError(_msg)

    try:
        encoder = EncoderConfig.model_validate(document["encoder"])
        dims = document["dims"]
        arrays = {
            name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in document["arrays"].items()
        }
        return _KINDS[kind](
            kind=kind,
            encoder=encoder,
            query_dim=int(dims["query_dim"]),
            item_dim=int(dims["item_dim"]),
            max_len=int(dims["max_len"]),
            arrays=arrays,
        )
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        _msg = f"{source}: malformed checkpoint: {e}"
        raise SchemaError(_msg) from e


def load_checkpoint(path: Path | str, expected_kind: str | None = None) -> ModelParams:
    """Read a checkpoint written by save_checkpoint; arrays come back bit-exact."""
    _msg = f"load_checkpoint starting for {path}"
    log.debug(_msg)

    source = Path(path)
    try:
        document = json.loads(source.read_text())
    except FileNotFoundError as e:
        _msg = f"checkpoint not found: {source}"
        raise SchemaError(_msg) from e
    except json.JSONDecodeError as e:
        _msg = f"{source}: invalid JSON at line {e.lineno}: {e.msg}"
        raise SchemaError(_msg) from e
    if not isinstance(document, dict):
        _msg = f"{source}: checkpoint must be a JSON object"
        raise SchemaError(_msg)

    params = params_from_document(document, str(source))
    if expected_kind is not None and params.kind != expected_kind:
        _msg = f"{source}: expected a {expected_kind} checkpoint, found {params.kind}"
        raise SchemaError(_msg)

    _msg = f"load_checkpoint returning {params.kind} with {params.size()} parameters"
    log.debug(_msg)
    return params
