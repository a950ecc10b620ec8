"""Main entry point for the permurank command-line tool."""

import csv
import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, TypeVar

import click
from rich.console import Console
from rich.table import Table

try:
    from dotenv import load_dotenv

    HAS_DOTENV = True
except ImportError:
    HAS_DOTENV = False

from permurank.baselines.naive import train_naive
from permurank.baselines.pgrank import train_pgrank
from permurank.baselines.urcc import train_urcc
from permurank.config import RunConfig, resolve_run_config, write_run_config
from permurank.datagen.generator import generate
from permurank.datagen.io import read_data, save_splits
from permurank.datagen.models import Dataset, QueryGroup
from permurank.errors import PermurankError, TrainingFailureError
from permurank.evaluation.judge_exchange import judge_exchange_export, judge_exchange_import
from permurank.evaluation.metrics import CSV_COLUMNS, MetricsReport
from permurank.evaluation.protocols import (
    IDEAL,
    LOGGED,
    POLICY_IN_DATA,
    compute_orders,
    dcg_clicks,
    eval_kd,
    eval_lau,
    ranker_reranker,
)
from permurank.gradient_suite import COMPONENTS, GRADCHECK_TOLERANCE, run_gradient_suite
from permurank.logging_config import set_log_level, setup_logging
from permurank.models.checkpoint import load_checkpoint, save_checkpoint
from permurank.models.params import ModelParams, RankerParams, RewardParams
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.training.models import TrainReport
from permurank.training.ranker_trainer import train_ranker
from permurank.training.reward_trainer import train_reward

# Load environment variables (PERMURANK_SEED) from .env file
if HAS_DOTENV:
    load_dotenv()

setup_logging()
log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.csv"

console = Console()
F = TypeVar("F", bound=Callable[..., Any])


@dataclass
class Run:
    """One CLI invocation: its resolved configuration, output directory and timers."""

    command: str
    config: RunConfig
    directory: Path
    metrics: PerformanceMetrics = field(default_factory=PerformanceMetrics)

    def path(self, name: str) -> Path:
        """File inside the run directory."""
        return self.directory / name

    def finish(self, summary: str) -> None:
        """Stop the command timer, save timings and print the one-line summary."""
        self.metrics.stop_timer(self.command)
        self.metrics.save_metrics(self.path("timings.json"))
        click.echo(summary)


def _set(overrides: dict[str, Any], dotted: str, value: Any) -> None:
    if value is None:
        return
    *sections, key = dotted.split(".")
    target = overrides
    for section in sections:
        target = target.setdefault(section, {})
    target[key] = value


def run_directory(out: Path | None, seed: int, command: str) -> Path:
    """--out when given, else runs/<timestamp>-s<seed>-<command>."""
    if out is not None:
        return out
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return Path("runs") / f"{stamp}-s{seed}-{command}"


def start_run(command: str, options: dict[str, Any], overrides: dict[str, Any] | None = None) -> Run:
    """Resolve the configuration, create the run directory and write config.json."""
    overrides = overrides or {}
    _set(overrides, "workers", options.get("workers"))
    config = resolve_run_config(options.get("config_path"), overrides, options.get("seed"))
    directory = run_directory(options.get("out"), config.seed, command)
    write_run_config(config, directory)
    run = Run(command=command, config=config, directory=directory)
    run.metrics.start_timer(command)

    _msg = f"{command} writing to {directory}"
    log.info(_msg)
    return run


def run_options(func: F) -> F:
    """Options shared by every subcommand."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            default=None,
            help="JSON or YAML run configuration; flags override it field by field.",
        ),
        click.option("--seed", type=int, default=None, help="Run seed (overrides PERMURANK_SEED)."),
        click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel evaluation chunks."),
        click.option(
            "--out",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Run directory (default runs/<timestamp>-s<seed>-<command>).",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


data_option = click.option(
    "--data",
    "data_path",
    type=click.Path(exists=True, path_type=Path),
    required=True,
    help="Dataset file or gen-data run directory.",
)


@click.group()
@click.option(
    "--log-level",
    "-l",
    type=click.Choice(LOG_LEVELS),
    default="INFO",
    help="Logging level",
)
def cli(log_level: str) -> None:
    """Counterfactual learning-to-rank with a permutation-aware reward model."""
    set_log_level(log_level)


@cli.command("gen-data")
@run_options
@click.option("--groups", type=click.IntRange(min=1), default=None, help="Logged impressions to generate.")
@click.option("--label-mode", type=click.Choice(["binary_click", "soft_ips", "behavioral"]), default=None)
@click.option("--list-size", type=click.IntRange(min=1), default=None, help="Items per group, L.")
@click.option("--perms-per-group", type=click.IntRange(min=1), default=None, help="Logged orders per query.")
@click.option("--logging-noise", type=float, default=None, help="Noise of the logging policy.")
@click.option("--gzip", "compress", is_flag=True, help="Write .jsonl.gz files.")
def gen_data(
    groups: int | None,
    label_mode: str | None,
    list_size: int | None,
    perms_per_group: int | None,
    logging_noise: float | None,
    compress: bool,
    **options: Any,
) -> None:
    """Generate a synthetic world and write train/val/test JSONL files."""
    overrides: dict[str, Any] = {}
    _set(overrides, "groups", groups)
    _set(overrides, "world.label_mode", label_mode)
    _set(overrides, "world.list_size", list_size)
    _set(overrides, "world.perms_per_group", perms_per_group)
    _set(overrides, "world.logging_noise", logging_noise)
    run = start_run("gen-data", options, overrides)

    dataset = make_dataset(run.config)
    save_splits(dataset, run.directory, ".jsonl.gz" if compress else ".jsonl")

    run.finish(f"gen-data: train={len(dataset.train)} val={len(dataset.val)} test={len(dataset.test)} dir={run.directory}")


def make_dataset(config: RunConfig) -> Dataset:
    """Generate the dataset a run configuration describes."""
    return generate(config.world, config.groups, oracle=config.oracle(), behavior=config.behavior)


def _train_overrides(
    overrides: dict[str, Any],
    epochs: int | None,
    batch_size: int | None,
    learning_rate: float | None,
) -> dict[str, Any]:
    _set(overrides, "train.epochs", epochs)
    _set(overrides, "train.batch_size", batch_size)
    _set(overrides, "train.learning_rate", learning_rate)
    return overrides


def train_options(func: F) -> F:
    """Optimization flags shared by the trainers."""
    options = [
        click.option("--epochs", type=click.IntRange(min=1), default=None),
        click.option("--batch-size", type=click.IntRange(min=1), default=None),
        click.option("--lr", "learning_rate", type=float, default=None, help="AdamW learning rate."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def write_training(run: Run, params: ModelParams, report: TrainReport, name: str) -> Path:
    """Save a checkpoint and its epoch CSV as <name>.json and train_<name>.csv."""
    checkpoint = save_checkpoint(params, run.path(f"{name}.json"))
    report.checkpoint_path = str(checkpoint)
    report.to_csv(run.path(f"train_{name}.csv"))
    return checkpoint


def _best(report: TrainReport) -> str:
    record = next(r for r in report.epochs if r.epoch == report.best_epoch)
    return f"best_epoch={report.best_epoch} val_loss={record.val_loss:.6f} val_mean_reward={record.val_mean_reward:.6f}"


@cli.command("train-reward")
@run_options
@data_option
@train_options
@click.option("--loss", type=click.Choice(["cross_entropy", "squared_error"]), default=None)
def train_reward_command(
    data_path: Path,
    epochs: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    loss: str | None,
    **options: Any,
) -> None:
    """Stage 1: fit the reward model to the logged labels."""
    overrides = _train_overrides({}, epochs, batch_size, learning_rate)
    _set(overrides, "train.loss", loss)
    run = start_run("train-reward", options, overrides)

    dataset = read_data(data_path)
    params, report = train_reward(dataset, run.config.train, run.config.encoder, run.metrics)
    checkpoint = write_training(run, params, report, "reward")

    run.finish(f"train-reward: {_best(report)} checkpoint={checkpoint}")


def _load_reward(path: Path) -> RewardParams:
    params = load_checkpoint(path, expected_kind="reward")
    assert isinstance(params, RewardParams)
    return params


def _load_ranker(path: Path | None) -> RankerParams | None:
    if path is None:
        return None
    params = load_checkpoint(path, expected_kind="ranker")
    assert isinstance(params, RankerParams)
    return params


reward_option = click.option(
    "--reward",
    "reward_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Frozen reward-model checkpoint.",
)
init_option = click.option(
    "--init-from",
    "init_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Ranker checkpoint to start from.",
)


@cli.command("train-ranker")
@run_options
@data_option
@reward_option
@init_option
@train_options
@click.option("--lam", type=click.FloatRange(min=0.0), default=None, help="Misspecification strength λ.")
@click.option("--tau", type=float, default=None, help="SoftSort temperature.")
@click.option("--use-ste/--no-ste", default=None, help="Straight-through hard permutations.")
def train_ranker_command(
    data_path: Path,
    reward_path: Path | None,
    init_path: Path | None,
    epochs: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    lam: float | None,
    tau: float | None,
    use_ste: bool | None,
    **options: Any,
) -> None:
    """Stage 2: train the ranker through SoftSort against the frozen reward model."""
    if reward_path is None:
        _msg = "train-ranker needs --reward"
        raise click.UsageError(_msg)
    overrides = _train_overrides({}, epochs, batch_size, learning_rate)
    _set(overrides, "train.lam", lam)
    _set(overrides, "train.tau", tau)
    _set(overrides, "train.use_ste", use_ste)
    overrides["method"] = "rewardrank"
    run = start_run("train-ranker", options, overrides)

    dataset = read_data(data_path)
    params, report = train_ranker(
        dataset,
        _load_reward(reward_path),
        run.config.train,
        run.config.encoder,
        init=_load_ranker(init_path),
        metrics=run.metrics,
    )
    checkpoint = write_training(run, params, report, "ranker")

    run.finish(f"train-ranker: lam={run.config.train.lam} {_best(report)} checkpoint={checkpoint}")


def fit_baseline(
    method: str,
    config: RunConfig,
    dataset: Dataset,
    metrics: PerformanceMetrics,
    frozen_reward: RewardParams | None = None,
    init: RankerParams | None = None,
) -> tuple[RankerParams, TrainReport]:
    """Train one baseline ranker with the run's settings."""
    if method == "naive":
        return train_naive(dataset, config.train, config.baselines, config.encoder, metrics)
    assert frozen_reward is not None
    if method == "pgrank":
        return train_pgrank(dataset, frozen_reward, config.train, config.baselines, config.encoder, init, metrics)
    return train_urcc(dataset, frozen_reward, config.train, config.baselines, config.encoder, init, metrics)


@cli.command("train-baseline")
@click.argument("method", type=click.Choice(["naive", "pgrank", "urcc"]))
@run_options
@data_option
@reward_option
@init_option
@train_options
@click.option("--samples", type=click.IntRange(min=1), default=None, help="PG-Rank* rankings per group, K.")
@click.option("--temperature", type=float, default=None, help="PG-Rank* Plackett-Luce temperature.")
@click.option("--greedy", is_flag=True, help="PG-Rank* with the deterministic argsort.")
@click.option("--gain-source", type=click.Choice(["relevance", "clicks"]), default=None, help="Naive gains.")
@click.option("--from-scratch", is_flag=True, help="URCC* from fresh weights.")
def train_baseline(
    method: str,
    data_path: Path,
    reward_path: Path | None,
    init_path: Path | None,
    epochs: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    samples: int | None,
    temperature: float | None,
    greedy: bool,
    gain_source: str | None,
    from_scratch: bool,
    **options: Any,
) -> None:
    """Train a comparison ranker: naive, pgrank or urcc."""
    if method != "naive" and reward_path is None:
        _msg = f"train-baseline {method} needs --reward"
        raise click.UsageError(_msg)
    overrides = _train_overrides({}, epochs, batch_size, learning_rate)
    _set(overrides, "baselines.pg_samples", samples)
    _set(overrides, "baselines.pg_temperature", temperature)
    _set(overrides, "baselines.pg_greedy", greedy or None)
    _set(overrides, "baselines.naive_gain", gain_source)
    _set(overrides, "baselines.urcc_from_scratch", from_scratch or None)
    overrides["method"] = method
    run = start_run(f"train-{method}", options, overrides)

    dataset = read_data(data_path)
    frozen = _load_reward(reward_path) if reward_path is not None else None
    init = _load_ranker(init_path)
    if method == "urcc" and init is None and not run.config.baselines.urcc_from_scratch:
        _msg = "train-baseline urcc: no --init-from given, training a Naive ranker to start from"
        log.info(_msg)
        init, naive_report = fit_baseline("naive", run.config, dataset, run.metrics)
        write_training(run, init, naive_report, "naive")
    params, report = fit_baseline(method, run.config, dataset, run.metrics, frozen, init)
    checkpoint = write_training(run, params, report, method)

    run.finish(f"train-baseline {method}: {_best(report)} checkpoint={checkpoint}")


def parse_ranker_specs(specs: tuple[str, ...]) -> list[tuple[str, Path]]:
    """Turn NAME=PATH or PATH into (name, path); a bare path is named after its file stem."""
    parsed: list[tuple[str, Path]] = []
    for spec in specs:
        name, sep, raw = spec.partition("=")
        path = Path(raw) if sep else Path(spec)
        if not sep:
            name = path.stem
        if not path.is_file():
            _msg = f"ranker checkpoint not found: {path}"
            raise click.BadParameter(_msg, param_hint="--ranker")
        parsed.append((name, path))
    return parsed


def parse_cutoffs(raw: str | None) -> list[float] | None:
    """Comma-separated floats, e.g. "0.8,0.6,0.4"."""
    if raw is None:
        return None
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        _msg = f"cannot parse cutoffs {raw!r}"
        raise click.BadParameter(_msg, param_hint="--cutoffs") from e


def evaluate_rankers(
    protocol: str,
    config: RunConfig,
    groups: list[QueryGroup],
    rankers: list[tuple[str, RankerParams]],
) -> MetricsReport:
    """Evaluate several rankers under one protocol; reference rows appear once."""
    evaluation = config.evaluation
    workers = config.worker_count()
    report = MetricsReport()
    for name, params in rankers:
        reranker = ranker_reranker(params)
        if protocol == "kd":
            part = eval_kd(reranker, config.oracle(), groups, evaluation.ndcg_k, name, evaluation.exponential_gains, workers)
        elif protocol == "lau":
            part = eval_lau(reranker, config.behavior, groups, evaluation.lau_cutoffs, name, workers)
        else:
            part = MetricsReport()
            for k in evaluation.dcg_ks:
                part.merge(dcg_clicks(reranker, groups, k, name, workers))
        report.merge(part)
    return report


def headline(report: MetricsReport, protocol: str, config: RunConfig) -> str:
    """Overall mean of the protocol's main metric per method."""
    metric = {"kd": "U_IPS", "lau": "P_purchase", "logged": f"DCG@{config.evaluation.dcg_ks[0]}"}[protocol]
    parts = [f"{row.method}={row.mean:.4f}" for row in report.rows if row.metric == metric and row.cutoff is None]
    return f"{metric} " + " ".join(parts)


@cli.command("eval")
@click.argument("protocol", type=click.Choice(["kd", "lau", "logged"]))
@run_options
@data_option
@click.option("--ranker", "ranker_specs", multiple=True, help="Ranker checkpoint, PATH or NAME=PATH; repeatable.")
@click.option("--split", type=click.Choice(["train", "val", "test"]), default=None)
@click.option("--k", "ndcg_k", type=click.IntRange(min=1), default=None, help="NDCG cutoff for kd.")
@click.option("--cutoffs", default=None, help="LAU cutoffs, comma separated.")
@click.option("--exponential-gains", is_flag=True, help="Use 2^g - 1 NDCG gains.")
@click.option("--judge-export", is_flag=True, help="lau: also write judge request files.")
@click.option(
    "--judge-responses",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="lau: aggregate these judge responses instead of running the simulator.",
)
@click.option("--method", default="judged", help="Row label for --judge-responses.")
def eval_command(
    protocol: str,
    data_path: Path,
    ranker_specs: tuple[str, ...],
    split: str | None,
    ndcg_k: int | None,
    cutoffs: str | None,
    exponential_gains: bool,
    judge_export: bool,
    judge_responses: Path | None,
    method: str,
    **options: Any,
) -> None:
    """Evaluate rankers under kd, lau or logged-click DCG; writes metrics.csv."""
    if judge_responses is None and not ranker_specs:
        _msg = "eval needs at least one --ranker"
        raise click.UsageError(_msg)
    if (judge_export or judge_responses is not None) and protocol != "lau":
        _msg = "--judge-export and --judge-responses apply to eval lau only"
        raise click.UsageError(_msg)
    overrides: dict[str, Any] = {"protocol": protocol}
    _set(overrides, "evaluation.split", split)
    _set(overrides, "evaluation.ndcg_k", ndcg_k)
    _set(overrides, "evaluation.lau_cutoffs", parse_cutoffs(cutoffs))
    _set(overrides, "evaluation.exponential_gains", exponential_gains or None)
    run = start_run(f"eval-{protocol}", options, overrides)

    groups = read_data(data_path).split(run.config.evaluation.split)
    if judge_responses is not None:
        report = judge_exchange_import(judge_responses, groups, run.config.evaluation.lau_cutoffs, method)
    else:
        rankers = [(name, _load_ranker(path)) for name, path in parse_ranker_specs(ranker_specs)]
        report = evaluate_rankers(protocol, run.config, groups, [(n, p) for n, p in rankers if p is not None])
        if judge_export:
            for name, params in rankers:
                assert params is not None
                orders = compute_orders(ranker_reranker(params), groups, run.config.worker_count())
                judge_exchange_export(groups, orders, run.path(f"judge_requests-{name}.jsonl"), name)
    report.to_csv(run.path(METRICS_FILE))
    console.print(report.to_table(title=f"eval {protocol}"))

    run.finish(f"eval {protocol}: {headline(report, protocol, run.config)}")


@cli.command("gradcheck")
@run_options
@click.option("--component", "components", multiple=True, type=click.Choice(list(COMPONENTS)), help="Repeatable.")
@click.pass_context
def gradcheck_command(ctx: click.Context, components: tuple[str, ...], **options: Any) -> None:
    """Compare analytic and finite-difference gradients of every differentiable component."""
    run = start_run("gradcheck", options)

    results = run_gradient_suite(run.config.seed, list(components) or None)
    table = Table(title=f"gradcheck seed={run.config.seed}")
    for column in ("component", "max_rel_error", "checked", "status"):
        table.add_column(column)
    with open(run.path("gradcheck.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["component", "max_rel_error", "checked", "skipped"])
        for name, result in results.items():
            status = "ok" if result.passed(GRADCHECK_TOLERANCE) else "FAIL"
            table.add_row(name, f"{result.max_rel_error:.3e}", str(result.checked), status)
            writer.writerow([name, repr(result.max_rel_error), result.checked, result.skipped])
    console.print(table)

    failed = [name for name, result in results.items() if not result.passed(GRADCHECK_TOLERANCE)]
    worst = max(result.max_rel_error for result in results.values())
    run.finish(f"gradcheck: components={len(results)} failed={len(failed)} max_rel_error={worst:.3e}")
    if failed:
        _msg = f"gradcheck failed for {', '.join(failed)}"
        log.error(_msg)
        ctx.exit(EXIT_NUMERIC)


def collect_run_metrics(run_dirs: list[Path]) -> list[tuple[str, MetricsReport]]:
    """Read metrics.csv from each directory that has one, in the given order."""
    found: list[tuple[str, MetricsReport]] = []
    for directory in run_dirs:
        source = directory / METRICS_FILE
        if source.is_file():
            found.append((directory.name, MetricsReport.from_csv(source)))
    return found


def write_report(found: list[tuple[str, MetricsReport]], target: Path) -> Path:
    """Concatenate run reports into one CSV with a leading run column."""
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["run", *CSV_COLUMNS])
        for run_name, report in found:
            for row in report.rows:
                cutoff = "" if row.cutoff is None else repr(row.cutoff)
                writer.writerow([run_name, row.method, row.metric, cutoff, repr(row.mean), repr(row.se), row.n])
    return target


@cli.command("report")
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--runs-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@run_options
def report_command(run_dirs: tuple[Path, ...], runs_dir: Path | None, **options: Any) -> None:
    """Aggregate stored metrics.csv files into report.csv without recomputing anything."""
    directories = list(run_dirs)
    if runs_dir is not None:
        directories.extend(sorted(p for p in runs_dir.iterdir() if p.is_dir()))
    if not directories:
        _msg = "report needs run directories or --runs-dir"
        raise click.UsageError(_msg)
    run = start_run("report", options)

    found = collect_run_metrics(directories)
    target = write_report(found, run.path(REPORT_FILE))
    for run_name, report in found:
        console.print(report.to_table(title=run_name))

    run.finish(f"report: runs={len(found)} rows={sum(len(r.rows) for _, r in found)} file={target}")


def rewardrank_label(lam: float) -> str:
    """Row label of a RewardRank ranker trained with λ."""
    return f"RewardRank(lam={lam:g})"


@cli.command("paper-kd")
@run_options
@click.option("--groups", type=click.IntRange(min=1), default=None)
@train_options
def paper_kd(groups: int | None, epochs: int | None, batch_size: int | None, learning_rate: float | None, **options: Any) -> None:
    """Full KD-Eval grid: data, reward model, RewardRank over the λ grid, baselines, evaluation."""
    overrides = _train_overrides({"protocol": "kd"}, epochs, batch_size, learning_rate)
    _set(overrides, "groups", groups)
    _set(overrides, "world.label_mode", "soft_ips")
    _set(overrides, "train.loss", "squared_error")
    run = start_run("paper-kd", options, overrides)
    config = run.config

    dataset = make_dataset(config)
    save_splits(dataset, run.path("data"))
    reward, reward_report = train_reward(dataset, config.train, config.encoder, run.metrics)
    write_training(run, reward, reward_report, "reward")

    rankers: list[tuple[str, RankerParams]] = []
    for lam in config.lams:
        cfg = config.train.model_copy(update={"lam": lam})
        params, report = train_ranker(dataset, reward, cfg, config.encoder, metrics=run.metrics)
        write_training(run, params, report, f"rewardrank-lam{lam:g}")
        rankers.append((rewardrank_label(lam), params))

    naive, naive_report = fit_baseline("naive", config, dataset, run.metrics)
    write_training(run, naive, naive_report, "naive")
    rankers.append(("Naive", naive))
    pg, pg_report = fit_baseline("pgrank", config, dataset, run.metrics, reward)
    write_training(run, pg, pg_report, "pgrank")
    rankers.append((f"PG-Rank*(K={config.baselines.pg_samples})", pg))
    urcc, urcc_report = fit_baseline("urcc", config, dataset, run.metrics, reward, naive)
    write_training(run, urcc, urcc_report, "urcc")
    rankers.append(("URCC*", urcc))
    scratch, scratch_report = fit_baseline("urcc", config, dataset, run.metrics, reward)
    write_training(run, scratch, scratch_report, "urcc-scratch")
    rankers.append(("URCC*-scratch", scratch))

    metrics = evaluate_rankers("kd", config, dataset.split(config.evaluation.split), rankers)
    metrics.to_csv(run.path(METRICS_FILE))
    console.print(metrics.to_table(title="paper-kd"))

    best = max((row for row in metrics.rows if row.metric == "U_IPS" and row.method.startswith("RewardRank")), key=lambda r: r.mean)
    ideal = metrics.get(IDEAL, "U_IPS").mean
    logged = metrics.get(LOGGED, "U_IPS").mean
    naive_mean = metrics.get("Naive", "U_IPS").mean
    run.finish(f"paper-kd: U_IPS Ideal={ideal:.4f} {best.method}={best.mean:.4f} Naive={naive_mean:.4f} Logged={logged:.4f}")


@cli.command("paper-lau")
@run_options
@click.option("--groups", type=click.IntRange(min=1), default=None)
@train_options
def paper_lau(groups: int | None, epochs: int | None, batch_size: int | None, learning_rate: float | None, **options: Any) -> None:
    """LAU-Eval chain: behavioral data, reward model, RewardRank (λ=1), Naive, evaluation."""
    overrides = _train_overrides({"protocol": "lau"}, epochs, batch_size, learning_rate)
    _set(overrides, "groups", groups)
    _set(overrides, "world.label_mode", "behavioral")
    _set(overrides, "train.loss", "cross_entropy")
    _set(overrides, "train.lam", 1.0)
    run = start_run("paper-lau", options, overrides)
    config = run.config

    dataset = make_dataset(config)
    save_splits(dataset, run.path("data"))
    reward, reward_report = train_reward(dataset, config.train, config.encoder, run.metrics)
    write_training(run, reward, reward_report, "reward")
    ranker, ranker_report = train_ranker(dataset, reward, config.train, config.encoder, metrics=run.metrics)
    write_training(run, ranker, ranker_report, "rewardrank")
    naive, naive_report = fit_baseline("naive", config, dataset, run.metrics)
    write_training(run, naive, naive_report, "naive")

    rankers = [(rewardrank_label(config.train.lam), ranker), ("Naive", naive)]
    metrics = evaluate_rankers("lau", config, dataset.split(config.evaluation.split), rankers)
    metrics.to_csv(run.path(METRICS_FILE))
    console.print(metrics.to_table(title="paper-lau"))

    parts = [f"{row.method}={row.mean:.4f}" for row in metrics.rows if row.metric == "P_purchase" and row.cutoff is None]
    reference = metrics.get(POLICY_IN_DATA, "P_purchase").mean
    run.finish(f"paper-lau: P_purchase {' '.join(parts)} (policy in data {reference:.4f})")


def main(argv: list[str] | None = None) -> int:
    """Run the CLI and map failures to exit codes.

    Args:
        argv: Arguments without the program name; sys.argv[1:] when omitted.

    Returns:
        int: 0 on success, 1 on a usage error, 2 on a data, schema or contract error,
        3 on a numerical failure or a failed gradient check.

    """
    try:
        result = cli.main(args=argv, prog_name="permurank", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except TrainingFailureError as e:
        _msg = f"training failed at epoch {e.epoch}: {e}"
        log.error(_msg)
        return EXIT_NUMERIC
    except PermurankError as e:
        _msg = f"{type(e).__name__}: {e}"
        log.error(_msg)
        return EXIT_SCHEMA
    if isinstance(result, int):
        return result
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
