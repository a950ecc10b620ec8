"""URCC*: pairwise preferences between a ranking and its single-swap neighbours."""

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.baselines.models import BaselineConfig
from permurank.baselines.plackett_luce import PermutationPair
from permurank.datagen.models import Dataset, GroupBatch, QueryGroup, stack_groups
from permurank.models.params import EncoderConfig, ModelParams, RankerParams, RewardParams, init_ranker_params
from permurank.models.ranker import ranker_forward
from permurank.models.reward import predict_reward
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.sorting.softsort import HardPermutation, hard_orders
from permurank.training.loop import fit, require_groups
from permurank.training.models import TrainConfig, TrainReport
from permurank.training.ranker_trainer import mean_reward_of_ranker

log = logging.getLogger(__name__)


def swap_positions(size: int) -> list[tuple[int, int]]:
    """Every position pair (i, j) with i < j, in lexicographic order.

    Args:
        size: List length L.

    Returns:
        list[tuple[int, int]]: The C(L, 2) position pairs.

    """
    return list(combinations(range(size), 2))


def swap_neighborhood(order: np.ndarray) -> np.ndarray:
    """All rankings that differ from `order` by exchanging two positions.

    Args:
        order: Hard ranking of L items.

    Returns:
        np.ndarray: Neighbours of shape (C(L, 2), L), row r swapping swap_positions(L)[r].

    """
    _msg = f"swap_neighborhood starting for a list of {np.size(order)}"
    log.debug(_msg)

    order = np.asarray(order, dtype=np.int64)
    pairs = swap_positions(order.size)
    neighbours = np.tile(order, (len(pairs), 1))
    for row, (i, j) in enumerate(pairs):
        neighbours[row, [i, j]] = order[[j, i]]

    _msg = f"swap_neighborhood returning {len(neighbours)} neighbours"
    log.debug(_msg)
    return neighbours


def urcc_pair_loss(s_plus: float, s_minus: float) -> float:
    """log(1 + exp(-(s_plus - s_minus)))."""
    return float(np.logaddexp(0.0, -(s_plus - s_minus)))


def urcc_pairs(frozen_reward: RewardParams, group: QueryGroup, order: np.ndarray) -> list[PermutationPair]:
    """Pair the ranking with each swap neighbour, better-rewarded member first.

    Args:
        frozen_reward: Reward model that scores every candidate.
        group: Query group being ranked.
        order: Current hard ranking.

    Returns:
        list[PermutationPair]: One pair per neighbour whose reward differs from the ranking's.

    Notes:
        1. Neighbours with exactly the ranking's reward form no pair.

    """
    _msg = f"urcc_pairs starting for group {group.group_id}"
    log.debug(_msg)

    order = np.asarray(order, dtype=np.int64)
    neighbours = swap_neighborhood(order)
    candidates = np.vstack([order[np.newaxis], neighbours])
    count = candidates.shape[0]
    rewards = predict_reward(
        frozen_reward,
        np.repeat(group.features[np.newaxis], count, axis=0),
        np.repeat(group.items[np.newaxis], count, axis=0),
        candidates,
    )
    current = HardPermutation(order=tuple(int(i) for i in order))
    pairs = []
    for neighbour, reward in zip(neighbours, rewards[1:], strict=True):
        other = HardPermutation(order=tuple(int(i) for i in neighbour))
        if reward > rewards[0]:
            pairs.append(PermutationPair(pi_plus=other, pi_minus=current, s_plus=float(reward), s_minus=float(rewards[0])))
        elif reward < rewards[0]:
            pairs.append(PermutationPair(pi_plus=current, pi_minus=other, s_plus=float(rewards[0]), s_minus=float(reward)))

    _msg = f"urcc_pairs returning {len(pairs)} pairs"
    log.debug(_msg)
    return pairs


@dataclass(frozen=True)
class SwapPreferences:
    """Item-level preferences implied by scoring every swap of the current rankings."""

    preferred: np.ndarray
    """Item that should score higher, shape (B, C)."""

    other: np.ndarray
    """Item that should score lower, shape (B, C)."""

    weights: np.ndarray
    """|g(π+) - g(π-)| per pair, 0 for ties."""

    pair_loss: float
    """Mean urcc_pair_loss over the pairs with a strict preference."""


def swap_preferences(frozen_reward: RewardParams, batch: GroupBatch, orders: np.ndarray) -> SwapPreferences:
    """Score each current ranking and all of its swaps with the frozen reward model.

    Args:
        frozen_reward: Trained reward model.
        batch: Stacked groups.
        orders: Current hard rankings (B, L).

    Returns:
        SwapPreferences: For swap (i, j) of items a = order[i] and b = order[j], b is
        preferred when the swap raises the reward and a when it lowers it.

    Notes:
        1. Ties get weight 0 and leave pair_loss unchanged; with no strict pair
           pair_loss is log 2.

    """
    _msg = f"swap_preferences starting for {len(orders)} rankings"
    log.debug(_msg)

    size = orders.shape[-1]
    pairs = swap_positions(size)
    candidates = np.stack([np.vstack([o[np.newaxis], swap_neighborhood(o)]) for o in orders])
    count = candidates.shape[1]
    rewards = predict_reward(
        frozen_reward,
        np.repeat(batch.q[:, np.newaxis], count, axis=1),
        np.repeat(batch.items[:, np.newaxis], count, axis=1),
        candidates,
    )
    delta = rewards[:, 1:] - rewards[:, :1]
    first = orders[:, [i for i, _ in pairs]]
    second = orders[:, [j for _, j in pairs]]
    swap_better = delta > 0.0
    strict = delta != 0.0
    losses = np.logaddexp(0.0, -np.abs(delta[strict]))
    prefs = SwapPreferences(
        preferred=np.where(swap_better, second, first),
        other=np.where(swap_better, first, second),
        weights=np.abs(delta),
        pair_loss=float(np.mean(losses)) if losses.size else float(np.log(2.0)),
    )

    _msg = f"swap_preferences returning {int(np.count_nonzero(strict))} strict pairs"
    log.debug(_msg)
    return prefs


def pairwise_score_loss(scores: Tensor, prefs: SwapPreferences, tau: float) -> Tensor:
    """Weighted logistic loss on the score gap of every swap pair.

    Args:
        scores: Ranker scores (B, L) on the tape.
        prefs: Preferences from swap_preferences.
        tau: Temperature dividing the score gap.

    Returns:
        Tensor: Mean over groups and pairs of w * softplus(-(s_preferred - s_other) / tau).

    """
    _msg = f"pairwise_score_loss starting with tau={tau}"
    log.debug(_msg)

    gap = ops.sub(ops.take_along(scores, prefs.preferred), ops.take_along(scores, prefs.other))
    terms = ops.mul(ops.softplus(ops.scale(gap, -1.0 / tau)), prefs.weights)
    loss = ops.mean(terms)

    _msg = "pairwise_score_loss returning"
    log.debug(_msg)
    return loss


def train_urcc(
    dataset: Dataset,
    frozen_reward: RewardParams,
    cfg: TrainConfig,
    baseline: BaselineConfig | None = None,
    encoder: EncoderConfig | None = None,
    init: RankerParams | None = None,
    metrics: PerformanceMetrics | None = None,
) -> tuple[RankerParams, TrainReport]:
    """Push item scores towards the better member of every swap pair.

    Args:
        dataset: Groups to train on.
        frozen_reward: Reward model that judges each swap.
        cfg: Optimization settings.
        baseline: urcc_tau and urcc_from_scratch.
        encoder: Encoder shape for a fresh ranker.
        init: Pretrained ranker (normally the Naive baseline); ignored when urcc_from_scratch is set.
        metrics: Timer sink.

    Returns:
        tuple[RankerParams, TrainReport]: Ranker with the best validation reward.

    """
    _msg = "train_urcc starting"
    log.debug(_msg)

    baseline = baseline or BaselineConfig()
    require_groups(dataset.train, "urcc")
    world = dataset.world
    if init is not None and not baseline.urcc_from_scratch:
        params = init.copy()
    else:
        params = init_ranker_params(
            encoder or EncoderConfig(),
            world.features_dim,
            world.item_dim,
            world.list_size,
            np.random.default_rng([cfg.seed, 5]),
        )
    val_batch = stack_groups(dataset.val or dataset.train)

    def step(current: ModelParams, batch: GroupBatch, _groups: list[QueryGroup], _epoch: int) -> tuple[float, dict[str, np.ndarray]]:
        tape = Tape()
        bound = current.bind(tape)
        scores = ranker_forward(bound, batch.q, batch.items)
        prefs = swap_preferences(frozen_reward, batch, hard_orders(scores.value))
        loss = pairwise_score_loss(scores, prefs, baseline.urcc_tau)
        _msg = f"urcc step: mean pair loss {prefs.pair_loss:.6f}"
        log.debug(_msg)
        return loss.item(), tape.backward(loss).collect(bound.tensors)

    def validate(current: ModelParams) -> tuple[float, float]:
        assert isinstance(current, RankerParams)
        value = mean_reward_of_ranker(current, frozen_reward, val_batch)
        return -value, value

    best, report = fit("urcc", params, dataset.train, cfg, step, validate, metrics)

    _msg = f"train_urcc returning best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
