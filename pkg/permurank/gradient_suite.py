"""Gradient checks of every differentiable building block on small random groups."""

import logging
from collections.abc import Callable

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.gradcheck import GradCheckResult, analytic_gradient, grad_check, kink_mask
from permurank.autodiff.tape import Tape, Tensor
from permurank.baselines.naive import relaxed_ndcg_loss
from permurank.baselines.plackett_luce import pl_log_prob_tensor
from permurank.datagen.models import GroupBatch
from permurank.models.params import BoundParams, EncoderConfig, ModelParams, init_ranker_params, init_reward_params
from permurank.models.ranker import ranker_forward
from permurank.models.reward import hard_position_rows, reward_forward, soft_position_rows
from permurank.oracles.ips import IpsOracle, soft_u_ips
from permurank.sorting.softsort import softsort, ste_combine
from permurank.training.models import LossKind, TrainConfig
from permurank.training.ranker_trainer import stage2_objective
from permurank.training.reward_trainer import reward_loss

log = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
GROUP_SIZE = 4
SUITE_ENCODER = EncoderConfig(depth=1, width=4, heads=2, ffn_multiplier=2)
QUERY_DIM = 3
ITEM_DIM = 3

Check = Callable[[np.random.Generator], GradCheckResult]


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, weights))


def _unary(op: Callable[[Tensor], Tensor], *, positive: bool = False, kinks: bool = False) -> Check:
    def check(rng: np.random.Generator) -> GradCheckResult:
        x = rng.uniform(0.5, 2.0, size=(3, 4)) if positive else rng.normal(size=(3, 4))
        weights = rng.normal(size=op(Tape().constant(x)).shape)
        skip = [kink_mask(x)] if kinks else None
        return grad_check(lambda _t, v: _weighted(op(v[0]), weights), [x], skip=skip)

    return check


def _binary(op: Callable[[Tensor, Tensor], Tensor], shape_b: tuple[int, ...] = (3, 4)) -> Check:
    def check(rng: np.random.Generator) -> GradCheckResult:
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=shape_b)
        b = np.where(np.abs(b) < 0.5, np.sign(b) + b, b)
        tape = Tape()
        weights = rng.normal(size=op(tape.constant(a), tape.constant(b)).shape)
        return grad_check(lambda _t, v: _weighted(op(v[0], v[1]), weights), [a, b])

    return check


def _matmul(rng: np.random.Generator) -> GradCheckResult:
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    weights = rng.normal(size=(2, 3, 5))
    return grad_check(lambda _t, v: _weighted(ops.matmul(v[0], v[1]), weights), [a, b])


def _concat(rng: np.random.Generator) -> GradCheckResult:
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 6))
    return grad_check(lambda _t, v: _weighted(ops.concat([v[0], v[1]], axis=-1), weights), [a, b])


def _gathers(rng: np.random.Generator) -> GradCheckResult:
    table = rng.normal(size=(5, 3))
    rows = np.array([[4, 0], [0, 2]])
    mask = np.array([True, False, True, True, False])
    order = np.stack([rng.permutation(3) for _ in range(5)])

    def f(_tape: Tape, v: list[Tensor]) -> Tensor:
        gathered = ops.sum(ops.mul(ops.take_rows(v[0], rows), 1.5))
        kept = ops.sum(ops.mul(ops.select_rows(ops.reshape(v[0], (1, 5, 3)), mask), 0.5))
        along = ops.sum(ops.mul(ops.take_along(v[0], order), np.arange(3.0)))
        return ops.add(ops.add(gathered, kept), along)

    return grad_check(f, [table])


def _logsumexp(rng: np.random.Generator) -> GradCheckResult:
    x = rng.normal(size=(3, 4))
    weights = rng.normal(size=3)
    return grad_check(lambda _t, v: _weighted(ops.logsumexp(v[0], axis=-1), weights), [x])


def spaced_scores(rng: np.random.Generator, size: int = GROUP_SIZE) -> np.ndarray:
    """Scores whose pairwise gaps exceed 0.4, so finite differences never reorder them."""
    return rng.permutation(size).astype(np.float64) + 0.3 * rng.uniform(size=size)


def _softsort(rng: np.random.Generator) -> GradCheckResult:
    scores = spaced_scores(rng)
    weights = rng.normal(size=(GROUP_SIZE, GROUP_SIZE))
    return grad_check(lambda _t, v: _weighted(softsort(v[0], 0.7).matrix, weights), [scores])


def _straight_through(rng: np.random.Generator) -> GradCheckResult:
    """The hard forward pass is flat, so its reverse pass is compared with differences of the soft branch."""
    scores = spaced_scores(rng)
    weights = rng.normal(size=(GROUP_SIZE, GROUP_SIZE))

    def hard(_tape: Tape, v: list[Tensor]) -> Tensor:
        return _weighted(ste_combine(v[0], 0.7).matrix, weights)

    return grad_check(
        lambda _t, v: _weighted(softsort(v[0], 0.7).matrix, weights),
        [scores],
        gradient_fn=lambda arrays: analytic_gradient(hard, arrays),
    )


def _soft_u_ips(rng: np.random.Generator) -> GradCheckResult:
    scores = spaced_scores(rng)
    rel_logits = rng.normal(size=GROUP_SIZE)
    oracle = IpsOracle()
    return grad_check(lambda _t, v: ops.sum(soft_u_ips(oracle, softsort(v[0], 0.5), rel_logits)), [scores])


def _relaxed_ndcg(rng: np.random.Generator) -> GradCheckResult:
    scores = np.stack([spaced_scores(rng) for _ in range(2)])
    gains = rng.uniform(size=(2, GROUP_SIZE))
    return grad_check(lambda _t, v: relaxed_ndcg_loss(v[0], gains, 0.5), [scores])


def _pl_log_prob(rng: np.random.Generator) -> GradCheckResult:
    logits = rng.normal(size=GROUP_SIZE)
    orders = np.stack([rng.permutation(GROUP_SIZE) for _ in range(3)])
    return grad_check(lambda _t, v: ops.sum(pl_log_prob_tensor(v[0], orders)), [logits])


def _reward_loss(kind: LossKind) -> Check:
    def check(rng: np.random.Generator) -> GradCheckResult:
        logits = rng.normal(size=5)
        labels = rng.uniform(size=5)
        return grad_check(lambda _t, v: reward_loss(v[0], labels, kind), [logits])

    return check


def _batch(rng: np.random.Generator, size: int = 2) -> GroupBatch:
    return GroupBatch(
        q=rng.normal(size=(size, QUERY_DIM)),
        items=rng.normal(size=(size, GROUP_SIZE, ITEM_DIM)),
        orders=np.stack([rng.permutation(GROUP_SIZE) for _ in range(size)]),
        labels=rng.uniform(size=size),
        rel_logits=rng.normal(size=(size, GROUP_SIZE)),
    )


def model_check(params: ModelParams, build: Callable[[BoundParams], Tensor]) -> GradCheckResult:
    """Check the gradient of a scalar built from a model with respect to all of its arrays."""
    names = list(params.arrays)

    def f(_tape: Tape, leaves: list[Tensor]) -> Tensor:
        return build(BoundParams(params=params, tensors=dict(zip(names, leaves, strict=True))))

    return grad_check(f, [params.arrays[name] for name in names])


def _ranker_forward(rng: np.random.Generator) -> GradCheckResult:
    params = init_ranker_params(SUITE_ENCODER, QUERY_DIM, ITEM_DIM, GROUP_SIZE, rng)
    batch = _batch(rng)
    weights = rng.normal(size=(2, GROUP_SIZE))
    return model_check(params, lambda bound: _weighted(ranker_forward(bound, batch.q, batch.items), weights))


def _reward_forward_hard(rng: np.random.Generator) -> GradCheckResult:
    params = init_reward_params(SUITE_ENCODER, QUERY_DIM, ITEM_DIM, GROUP_SIZE, rng)
    batch = _batch(rng)

    def build(bound: BoundParams) -> Tensor:
        rows = hard_position_rows(bound, batch.orders)
        return ops.sum(reward_forward(bound, batch.q, batch.items, rows))

    return model_check(params, build)


def _reward_forward_soft(rng: np.random.Generator) -> GradCheckResult:
    params = init_reward_params(SUITE_ENCODER, QUERY_DIM, ITEM_DIM, GROUP_SIZE, rng)
    batch = _batch(rng, size=1)
    scores = spaced_scores(rng)

    def f(tape: Tape, leaves: list[Tensor]) -> Tensor:
        bound = params.bind(tape, trainable=False)
        pi = softsort(ops.reshape(leaves[0], (1, GROUP_SIZE)), 0.5)
        return ops.sum(reward_forward(bound, batch.q, batch.items, soft_position_rows(bound, pi)))

    return grad_check(f, [scores])


def _stage2(rng: np.random.Generator) -> GradCheckResult:
    ranker = init_ranker_params(SUITE_ENCODER, QUERY_DIM, ITEM_DIM, GROUP_SIZE, rng)
    reward = init_reward_params(SUITE_ENCODER, QUERY_DIM, ITEM_DIM, GROUP_SIZE, rng)
    batch = _batch(rng)
    g_factual = rng.uniform(size=2)
    cfg = TrainConfig(lam=0.5, tau=0.5)

    def build(bound: BoundParams) -> Tensor:
        frozen = reward.bind(bound["readout"].tape, trainable=False)
        return stage2_objective(bound, frozen, batch, g_factual, cfg).objective

    return model_check(ranker, build)


COMPONENTS: dict[str, Check] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub, (4,)),
    "mul": _binary(ops.mul, (1, 4)),
    "div": _binary(ops.div),
    "matmul": _matmul,
    "concat": _concat,
    "sum": _unary(lambda x: ops.sum(x, axis=0)),
    "mean": _unary(lambda x: ops.mean(x, axis=-1, keepdims=True)),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, positive=True),
    "abs": _unary(ops.abs, kinks=True),
    "sigmoid": _unary(ops.sigmoid),
    "softplus": _unary(ops.softplus),
    "tanh": _unary(ops.tanh),
    "softmax": _unary(lambda x: ops.softmax(x, axis=-1)),
    "layer_norm": _unary(ops.layer_norm),
    "transpose": _unary(ops.transpose),
    "logsumexp": _logsumexp,
    "gather": _gathers,
    "softsort": _softsort,
    "soft_u_ips": _soft_u_ips,
    "relaxed_ndcg": _relaxed_ndcg,
    "pl_log_prob": _pl_log_prob,
    "reward_loss_ce": _reward_loss("cross_entropy"),
    "reward_loss_se": _reward_loss("squared_error"),
    "ranker_forward": _ranker_forward,
    "reward_forward_hard": _reward_forward_hard,
    "reward_forward_soft": _reward_forward_soft,
    "stage2_objective": _stage2,
    "scale": _unary(lambda x: ops.scale(x, 2.5)),
    "neg": _unary(ops.neg),
    "straight_through": _straight_through,
}


def run_gradient_suite(seed: int, components: list[str] | None = None) -> dict[str, GradCheckResult]:
    """Gradient-check each component on inputs drawn from its own seeded generator.

    Args:
        seed: Base seed; component i uses default_rng([seed, i]).
        components: Subset of COMPONENTS to run, all of them by default.

    Returns:
        dict[str, GradCheckResult]: Result per component, in COMPONENTS order.

    """
    _msg = f"run_gradient_suite starting with seed {seed}"
    log.debug(_msg)

    wanted = components or list(COMPONENTS)
    results: dict[str, GradCheckResult] = {}
    for index, name in enumerate(COMPONENTS):
        if name not in wanted:
            continue
        results[name] = COMPONENTS[name](np.random.default_rng([seed, index]))
        _msg = f"gradcheck {name}: max_rel_error={results[name].max_rel_error:.3e}"
        log.info(_msg)

    _msg = "run_gradient_suite returning"
    log.debug(_msg)
    return results


def suite_passed(results: dict[str, GradCheckResult], tolerance: float = GRADCHECK_TOLERANCE) -> bool:
    """True when every component is below the tolerance."""
    return all(result.passed(tolerance) for result in results.values())

