"""Packaged defaults and the resolved per-run configuration."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from permurank.baselines.models import BaselineConfig
from permurank.datagen.models import SyntheticWorldConfig
from permurank.errors import SchemaError
from permurank.models.params import EncoderConfig
from permurank.oracles.behavioral import BehavioralUserConfig
from permurank.oracles.ips import DEFAULT_EXAMINATION, IpsOracle, check_examination
from permurank.training.models import TrainConfig

log = logging.getLogger(__name__)

APP_CONFIG_PATH = Path(__file__).parent / "app_config.yml"
SEED_ENV_VAR = "PERMURANK_SEED"


def load_app_config(path: Path = APP_CONFIG_PATH) -> dict:
    """Load the packaged YAML defaults.

    Args:
        path: YAML file to read; the file shipped next to this module by default.

    Returns:
        dict: Parsed configuration, or an empty dict when the file is missing or invalid.

    """
    _msg = "load_app_config starting"
    log.debug(_msg)

    try:
        with open(path, encoding="utf-8") as file:
            config = yaml.safe_load(file) or {}
    except FileNotFoundError:
        _msg = f"App config file not found at {path}, returning empty dict"
        log.warning(_msg)
        config = {}
    except yaml.YAMLError as e:
        _msg = f"Error parsing app config YAML: {e}"
        log.exception(_msg)
        config = {}

    _msg = "load_app_config returning"
    log.debug(_msg)
    return config


class EvalConfig(BaseModel):
    """Evaluation settings."""

    model_config = ConfigDict(extra="forbid")

    ndcg_k: int = Field(default=8, ge=1)
    """Cutoff of NDCG_rel in KD-Eval."""

    dcg_ks: list[int] = [5, 10]
    """Cutoffs of the logged-click DCG."""

    lau_cutoffs: list[float] = [0.8, 0.6, 0.4]
    """Thresholds c of LAU-Eval."""

    exponential_gains: bool = False
    """Use 2^g - 1 NDCG gains."""

    split: Literal["train", "val", "test"] = "test"
    """Split that is evaluated."""


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; written next to its outputs as config.json."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    """Seed of the run; copied into the world and train sections."""

    workers: int | None = Field(default=None, ge=1)
    """Parallel evaluation chunks; None means every available core."""

    groups: int = Field(default=5000, ge=1)
    """Logged impressions generated by gen-data."""

    lams: list[float] = [0.0, 0.1, 0.5, 1.0]
    """λ grid of the paper-kd preset."""

    method: str | None = None
    """Trainer or reranker the run is about."""

    protocol: str | None = None
    """Evaluation protocol of the run."""

    world: SyntheticWorldConfig = SyntheticWorldConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    baselines: BaselineConfig = BaselineConfig()
    evaluation: EvalConfig = EvalConfig()
    behavior: BehavioralUserConfig = BehavioralUserConfig()
    examination: tuple[float, ...] = DEFAULT_EXAMINATION

    @field_validator("examination")
    @classmethod
    def _check_examination(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        return check_examination(values)

    @model_validator(mode="after")
    def _check_tables_cover_lists(self) -> "RunConfig":
        size = self.world.list_size
        if size > len(self.examination):
            _msg = f"world.list_size {size} exceeds the examination table ({len(self.examination)} positions); supply a longer examination"
            raise ValueError(_msg)
        if size > len(self.behavior.position_scores):
            _msg = (
                f"world.list_size {size} exceeds behavior.position_scores ({len(self.behavior.position_scores)} positions); "
                "supply longer position_scores"
            )
            raise ValueError(_msg)
        return self

    def oracle(self) -> IpsOracle:
        """Click model with this run's examination table."""
        return IpsOracle(examination=self.examination)

    def worker_count(self) -> int:
        """Resolved worker count."""
        return self.workers or os.cpu_count() or 1


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: Path | str) -> dict[str, Any]:
    """Read a JSON or YAML config document (YAML is a superset of JSON)."""
    source = Path(path)
    try:
        document = yaml.safe_load(source.read_text(encoding="utf-8")) or {}
    except FileNotFoundError as e:
        _msg = f"config file not found: {source}"
        raise SchemaError(_msg) from e
    except yaml.YAMLError as e:
        _msg = f"{source}: cannot parse config: {e}"
        raise SchemaError(_msg) from e
    if not isinstance(document, dict):
        _msg = f"{source}: config must be a mapping"
        raise SchemaError(_msg)
    return document


def resolve_run_config(
    config_path: Path | str | None = None,
    overrides: dict[str, Any] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Merge packaged defaults, a config file, flag overrides and the seed.

    Args:
        config_path: Optional JSON or YAML file.
        overrides: Nested dict of flag values; only keys the user actually set.
        seed: The --seed flag, if given.

    Returns:
        RunConfig: Validated configuration.

    Notes:
        1. Start from the "run" section of the packaged app_config.yml.
        2. Merge the config file, then the flag overrides, field by field.
        3. The seed comes from --seed, else PERMURANK_SEED, else the merged document.
        4. The seed is copied into the world and train sections.
        5. Unknown keys and invalid values raise SchemaError.

    """
    _msg = "resolve_run_config starting"
    log.debug(_msg)

    document = load_app_config().get("run", {}) or {}
    if config_path is not None:
        document = _merge(document, read_config_file(config_path))
    if overrides:
        document = _merge(document, overrides)
    if seed is None and os.environ.get(SEED_ENV_VAR):
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError as e:
            _msg = f"{SEED_ENV_VAR} must be an integer, got {os.environ[SEED_ENV_VAR]!r}"
            raise SchemaError(_msg) from e
    if seed is not None:
        document["seed"] = seed
    run_seed = int(document.get("seed", 0))
    document["world"] = {**document.get("world", {}), "seed": run_seed}
    document["train"] = {**document.get("train", {}), "seed": run_seed}

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        _msg = f"invalid run configuration: {e}"
        raise SchemaError(_msg) from e

    _msg = f"resolve_run_config returning seed {config.seed}"
    log.debug(_msg)
    return config


def write_run_config(config: RunConfig, run_dir: Path) -> Path:
    """Write the resolved configuration as run_dir/config.json."""
    run_dir.mkdir(parents=True, exist_ok=True)
    target = run_dir / "config.json"
    target.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True))
    return target
