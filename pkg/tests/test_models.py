import numpy as np
import pytest

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape
from permurank.errors import ContractViolationError
from permurank.gradient_suite import model_check
from permurank.models.encoder import embed_group
from permurank.models.params import EncoderConfig, init_ranker_params, init_reward_params
from permurank.models.ranker import ranker_forward, score_items
from permurank.models.reward import hard_position_rows, predict_reward, reward_forward


@pytest.fixture
def reward_params(tiny_encoder, rng):
    return init_reward_params(tiny_encoder, 3, 3, 5, rng)


@pytest.fixture
def ranker_params(tiny_encoder, rng):
    return init_ranker_params(tiny_encoder, 3, 3, 5, rng)


def test_encoder_config_checks_heads():
    with pytest.raises(ValueError, match="multiple of heads"):
        EncoderConfig(width=10, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(depth=0)


def test_init_is_seeded(tiny_encoder):
    a = init_reward_params(tiny_encoder, 3, 3, 5, np.random.default_rng(7))
    b = init_reward_params(tiny_encoder, 3, 3, 5, np.random.default_rng(7))
    assert a.identical_to(b)
    assert a.arrays["pos"].shape == (5, tiny_encoder.width)
    assert a.all_finite()


def test_ranker_has_no_position_table(ranker_params):
    assert "pos" not in ranker_params.arrays
    assert "cls" not in ranker_params.arrays


def test_zero_projection_gives_zero_embeddings(reward_params, rng):
    params = reward_params.copy()
    params.arrays["proj.w"][:] = 0.0
    params.arrays["proj.b"][:] = 0.0
    tokens = embed_group(rng.normal(size=3), rng.normal(size=(4, 3)), params.bind(Tape()))
    np.testing.assert_array_equal(tokens.value, np.zeros((4, 8)))


def test_embedding_rows_are_independent(reward_params, rng):
    q, items = rng.normal(size=3), rng.normal(size=(4, 3))
    tokens = embed_group(q, items, reward_params.bind(Tape())).value
    for row in range(4):
        single = embed_group(q, items[row : row + 1], reward_params.bind(Tape())).value
        np.testing.assert_allclose(tokens[row], single[0], atol=1e-12)


def test_embed_group_dimension_mismatch(reward_params, rng):
    with pytest.raises(ContractViolationError):
        embed_group(rng.normal(size=4), rng.normal(size=(4, 3)), reward_params.bind(Tape()))


def test_reward_without_positions_is_permutation_invariant(reward_params, rng):
    q, items = rng.normal(size=3), rng.normal(size=(4, 3))
    tape = Tape()
    bound = reward_params.bind(tape, trainable=False)
    zeros = tape.constant(np.zeros((4, 8)))
    base = reward_forward(bound, q, items, zeros).item()
    for _ in range(5):
        perm = rng.permutation(4)
        assert reward_forward(bound, q, items[perm], zeros).item() == pytest.approx(base, abs=1e-12)


def test_reward_depends_on_order(reward_params, rng):
    q, items = rng.normal(size=3), rng.normal(size=(4, 3))
    orders = np.array([[0, 1, 2, 3], [3, 2, 1, 0]])
    values = predict_reward(reward_params, np.stack([q, q]), np.stack([items, items]), orders)
    assert values.shape == (2,)
    assert np.all((values > 0.0) & (values < 1.0))
    assert values[0] != values[1]


def test_reward_batch_matches_single(reward_params, rng):
    q, items = rng.normal(size=(3, 3)), rng.normal(size=(3, 4, 3))
    orders = np.stack([rng.permutation(4) for _ in range(3)])
    batched = predict_reward(reward_params, q, items, orders)
    for b in range(3):
        assert batched[b] == pytest.approx(float(predict_reward(reward_params, q[b], items[b], orders[b])), abs=1e-12)


def test_list_longer_than_position_table(reward_params, rng):
    with pytest.raises(ContractViolationError):
        hard_position_rows(reward_params.bind(Tape()), np.arange(6))


def test_ranker_is_permutation_equivariant(ranker_params, rng):
    q, items = rng.normal(size=3), rng.normal(size=(5, 3))
    scores = score_items(ranker_params, q, items)
    for _ in range(5):
        perm = rng.permutation(5)
        np.testing.assert_allclose(score_items(ranker_params, q, items[perm]), scores[perm], atol=1e-10)


def test_ranker_scores_are_probabilities(ranker_params, rng):
    scores = score_items(ranker_params, rng.normal(size=(2, 3)), rng.normal(size=(2, 4, 3)))
    assert scores.shape == (2, 4)
    assert np.all((scores > 0.0) & (scores < 1.0))


def test_ranker_gradient(tiny_encoder, rng):
    params = init_ranker_params(EncoderConfig(depth=1, width=4, heads=2), 3, 3, 4, rng)
    q, items = rng.normal(size=3), rng.normal(size=(4, 3))
    result = model_check(params, lambda bound: ops.sum(ranker_forward(bound, q, items)))
    assert result.passed(1e-4)


def test_copy_is_independent(ranker_params):
    clone = ranker_params.copy()
    clone.arrays["readout"][0] += 1.0
    assert not clone.identical_to(ranker_params)
    assert clone.size() == ranker_params.size()
