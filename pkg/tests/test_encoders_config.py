import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillplan.config import Config, load_config, parse_config
from skillplan.encoders import (ObservationEncoder, Vocabulary, encode_instruction,
                                encode_observation, tokenize)
from skillplan.numerics import ConfigError, make_rng

from .oracles import matvec


def test_zero_observation_embeds_to_zero():
    enc = ObservationEncoder(16, 32, seed=7)
    assert np.all(encode_observation(np.zeros(16), enc) == 0)


def test_observation_embedding_is_deterministic_and_bounded():
    enc = ObservationEncoder(16, 32, seed=7)
    x = make_rng(0).normal(0, 50, size=(10, 16))
    a, b = encode_observation(x, enc), encode_observation(x, ObservationEncoder(16, 32, seed=7))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1)


def test_observation_embedding_of_basis_vector():
    # the projection is redrawn from its documented seed stream, then multiplied by hand
    proj = make_rng(7, 101).normal(0.0, 1.0 / 4.0, size=(32, 16))
    e3 = [0.0] * 16
    e3[3] = 1.0
    expected = np.tanh(matvec(proj.tolist(), e3))
    got = encode_observation(np.eye(16)[3], ObservationEncoder(16, 32, seed=7))
    assert np.allclose(got, expected, atol=1e-15)


def test_observation_width_mismatch():
    with pytest.raises(ConfigError):
        encode_observation(np.zeros(15), ObservationEncoder(16, 32, seed=7))


def test_encoder_tables_are_read_only():
    enc = ObservationEncoder(16, 32, seed=7)
    with pytest.raises(ValueError):
        enc.projection[0, 0] = 1.0
    vocab = Vocabulary(["a"], 4, 0)
    with pytest.raises(ValueError):
        vocab.table[1, 0] = 1.0


def test_instruction_embedding_examples():
    vocab = Vocabulary(["open", "drawer", "close"], 8, seed=3)
    assert np.array_equal(encode_instruction(["open"], vocab), vocab.table[vocab.lookup("open")])
    assert np.array_equal(encode_instruction(["open", "drawer"], vocab),
                          encode_instruction(["drawer", "open"], vocab))
    assert np.array_equal(encode_instruction(["xyzzy"], vocab), vocab.table[0])
    assert vocab.lookup("xyzzy") == 0
    with pytest.raises(ValueError):
        encode_instruction([], vocab)


@settings(max_examples=40, deadline=None)
@given(st.permutations(["move", "the", "black", "mug", "right", "mug"]))
def test_instruction_embedding_is_order_free(tokens):
    vocab = Vocabulary(["move", "the", "black", "mug", "right"], 16, seed=1)
    ref = encode_instruction(["move", "the", "black", "mug", "right", "mug"], vocab)
    assert np.array_equal(encode_instruction(list(tokens), vocab), ref)


def test_vocabulary_roundtrip(tmp_path):
    vocab = Vocabulary(["b", "a", "c", "a"], 8, seed=11)
    vocab.save(tmp_path / "v.txt")
    back = Vocabulary.load(tmp_path / "v.txt")
    assert back.tokens == vocab.tokens == ["<unk>", "a", "b", "c"]
    assert np.array_equal(back.table, vocab.table)


def test_tokenize_lowercases():
    assert tokenize("Close  the Drawer") == ["close", "the", "drawer"]


# -- config ------------------------------------------------------------------------------

def test_defaults_match_documented_hyperparameters():
    cfg = Config()
    pc, tc = cfg.planner, cfg.train
    assert (pc.skill_set_size, pc.code_dim, pc.horizon, pc.ema_decay) == (20, 16, 8, 0.99)
    assert (pc.predictor_dim, pc.predictor_heads) == (128, 4)
    assert (tc.loss_weight, tc.batch_size, tc.skill_update_period) == (0.01, 64, 10)
    assert (tc.lr_skill, tc.lr_diffuser, tc.lr_invdyn) == (1e-5, 1e-3, 1e-3)


def test_config_text_roundtrip(tmp_path):
    cfg = Config()
    cfg.planner.horizon = 4
    cfg.train.loss_weight = 0.005
    cfg.planner.flat = True
    path = tmp_path / "c.txt"
    path.write_text(cfg.to_text())
    back = load_config(path)
    assert back == cfg


def test_config_parse_comments_and_errors():
    cfg = parse_config("# comment\nhorizon = 4  # trailing\n\nsteps=10\n")
    assert cfg.planner.horizon == 4 and cfg.train.steps == 10
    with pytest.raises(ConfigError):
        parse_config("no_such_key = 1")
    with pytest.raises(ConfigError):
        parse_config("horizon = four")
    with pytest.raises(ConfigError):
        parse_config("plan_len = 18")
    with pytest.raises(ConfigError):
        parse_config("just words")
