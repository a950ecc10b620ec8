import json

import pytest

from permurank.errors import SchemaError
from permurank.models.checkpoint import CHECKPOINT_VERSION, checkpoint_document, load_checkpoint, save_checkpoint
from permurank.models.params import RankerParams, RewardParams, init_ranker_params, init_reward_params


def test_round_trip_is_exact(tmp_path, tiny_encoder, rng):
    params = init_reward_params(tiny_encoder, 3, 3, 5, rng)
    params.arrays["readout"][0] = 0.1 + 0.2
    path = save_checkpoint(params, tmp_path / "nested" / "reward.json")
    loaded = load_checkpoint(path, expected_kind="reward")
    assert isinstance(loaded, RewardParams)
    assert loaded.identical_to(params)


def test_ranker_round_trip(tmp_path, tiny_encoder, rng):
    params = init_ranker_params(tiny_encoder, 3, 3, 5, rng)
    loaded = load_checkpoint(save_checkpoint(params, tmp_path / "ranker.json"))
    assert isinstance(loaded, RankerParams)
    assert loaded.identical_to(params)


def test_wrong_kind(tmp_path, tiny_encoder, rng):
    path = save_checkpoint(init_ranker_params(tiny_encoder, 3, 3, 5, rng), tmp_path / "ranker.json")
    with pytest.raises(SchemaError, match="expected a reward checkpoint"):
        load_checkpoint(path, expected_kind="reward")


def test_version_mismatch_names_both(tmp_path, tiny_encoder, rng):
    document = checkpoint_document(init_ranker_params(tiny_encoder, 3, 3, 5, rng))
    document["version"] = 99
    path = tmp_path / "future.json"
    path.write_text(json.dumps(document))
    with pytest.raises(SchemaError, match=f"99.*{CHECKPOINT_VERSION}"):
        load_checkpoint(path)


def test_truncated_file(tmp_path, tiny_encoder, rng):
    path = save_checkpoint(init_ranker_params(tiny_encoder, 3, 3, 5, rng), tmp_path / "ranker.json")
    path.write_text(path.read_text()[:200])
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(SchemaError, match="not found"):
        load_checkpoint(tmp_path / "nope.json")


def test_bad_array_shape(tmp_path, tiny_encoder, rng):
    document = checkpoint_document(init_ranker_params(tiny_encoder, 3, 3, 5, rng))
    document["arrays"]["readout"]["shape"] = [3]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(document))
    with pytest.raises(SchemaError, match="malformed"):
        load_checkpoint(path)
