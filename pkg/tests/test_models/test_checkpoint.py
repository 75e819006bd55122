"""Unit test for checkpoints and the model catalog."""

import json
from pathlib import Path
import numpy as np
import pytest
from d4decoder.densities import StateGrid
from d4decoder.models.catalog import build_model
from d4decoder.models.catalog import model_from_dict
from d4decoder.models.checkpoint import Checkpoint
from d4decoder.models.checkpoint import config_hash
from d4decoder.models.checkpoint import load_checkpoint
from d4decoder.models.checkpoint import save_checkpoint
from d4decoder.models.ssm import GaussianObservationSSM
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import IncompatibleCheckpointError


@pytest.fixture
def observations():
    return np.random.default_rng(9).normal(size=(20, 3))


@pytest.mark.parametrize("kind, state_dim", [("d4", 1), ("ddd", 1), ("d4", 2)])
def test_checkpoint_round_trip(tmp_path: Path, observations, kind, state_dim):
    model = build_model(kind, 3, 2, state_dim, seed=1, hidden=(4,))
    model.fit_standardization(observations)
    grid = StateGrid((-1.0,) * state_dim, (1.0,) * state_dim, (10,) * state_dim)
    checkpoint = Checkpoint(
        model,
        LinearGaussianTransition.random_walk(0.1, state_dim),
        grid,
        config_hash({"model": kind}),
        {"algorithm": "greedy"},
    )
    save_checkpoint(tmp_path / "checkpoint.json", checkpoint)
    loaded = load_checkpoint(tmp_path / "checkpoint.json")

    assert loaded.kind == kind
    assert loaded.lag == 2
    assert loaded.grid == grid
    assert loaded.transition == checkpoint.transition
    assert loaded.metadata == {"algorithm": "greedy"}
    assert loaded.denominator == "history"
    np.testing.assert_array_equal(loaded.model.get_params(), model.get_params())
    mu, sigma, _ = model.prediction_params(observations)
    loaded_mu, loaded_sigma, _ = loaded.model.prediction_params(observations)
    np.testing.assert_array_equal(loaded_mu, mu)
    np.testing.assert_array_equal(loaded_sigma, sigma)


def test_checkpoint_ssm(tmp_path: Path, observations):
    states = observations[:, :1] * 2.0
    model = GaussianObservationSSM.fit(states, observations + 0.01 * observations**2)
    checkpoint = Checkpoint(
        model, LinearGaussianTransition(0.9, 0.0, 0.1), StateGrid.default_1d()
    )
    save_checkpoint(tmp_path / "checkpoint.json", checkpoint)
    loaded = load_checkpoint(tmp_path / "checkpoint.json")
    assert loaded.kind == "ssm"
    np.testing.assert_array_equal(loaded.model.loading, model.loading)


def test_checkpoint_version(tmp_path: Path):
    path = tmp_path / "checkpoint.json"
    path.write_text(json.dumps({"format_version": 99}), encoding="utf-8")
    with pytest.raises(IncompatibleCheckpointError, match="version"):
        load_checkpoint(path)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_unknown_model_kind():
    with pytest.raises(ValueError, match="Unknown prediction model"):
        build_model("gru", 3, 1)


def test_unsupported_state_dim():
    with pytest.raises(ValueError, match="Only 1-D and 2-D"):
        build_model("d4", 3, 1, state_dim=3)


def test_unknown_serialized_kind():
    with pytest.raises(ValueError, match="Unknown model kind"):
        model_from_dict({"kind": "gru"})


def test_checkpoint_keeps_denominator(tmp_path: Path):
    checkpoint = Checkpoint(
        build_model("ddd", 3, 0),
        LinearGaussianTransition(0.9, 0.0, 0.1),
        StateGrid.default_1d(),
        metadata={"denominator": "flat"},
    )
    save_checkpoint(tmp_path / "checkpoint.json", checkpoint)
    assert load_checkpoint(tmp_path / "checkpoint.json").denominator == "flat"
