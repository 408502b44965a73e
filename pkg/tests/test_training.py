import numpy as np
import pytest

from skillplan.agent import build_agent, load_agent
from skillplan.config import Config
from skillplan.encoders import Vocabulary
from skillplan.numerics import TrainingError, make_rng
from skillplan.toyworld import generate_dataset, write_dataset, Dataset
from skillplan.training import (METRICS_HEADER, InputError, block_starts, config_with,
                                encode_dataset, new_state, run_training, skill_windows, train_step)


def tiny_config(**kw):
    base = dict(unet_channels=8, unet_groups=4, time_embed_dim=8, predictor_dim=16, predictor_heads=2,
                embed_hidden=16, invdyn_hidden=16, denoise_steps=10, batch_size=8, steps=6,
                checkpoint_every=3, skill_set_size=6)
    base.update(kw)
    return config_with(Config(), **base)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny.skdd"
    ds, _ = generate_dataset(24, 20, 0.3, path, make_rng(0))
    return path, ds


def tiny_agent(ds, cfg, seed=0):
    vocab = Vocabulary([w for t in ds.trajectories for w in t.instruction], cfg.planner.lang_dim, 7)
    agent = build_agent(cfg, vocab, seed)
    return agent, encode_dataset(ds, agent)


def test_three_blocks_for_twenty_steps():
    assert block_starts(20, 8) == [0, 8, 16]
    emb = np.arange(21, dtype=float).reshape(1, 21, 1)
    starts, win, mask = skill_windows(emb, 20, 8, 16)
    assert win.shape == (3, 16, 1)
    assert win[2, :5, 0].tolist() == [16, 17, 18, 19, 20] and np.all(win[2, 5:, 0] == 20)
    assert mask[2].sum() == 5 and mask[0].sum() == 16


@pytest.mark.parametrize("flat", [False, True])
def test_optimizer_stores_are_disjoint(tiny_data, flat):
    agent, _ = tiny_agent(tiny_data[1], tiny_config(flat=flat))
    a = set(agent.skill.names()) | set(agent.planner.names())
    b = set(agent.invdyn_store.names())
    assert a and b and not a & b
    assert all(n.startswith("invdyn.") for n in b)


def test_zero_weight_leaves_noise_model_untouched(tiny_data):
    agent, data = tiny_agent(tiny_data[1], tiny_config(loss_weight=0.0))
    before = {n: agent.planner[n].data.copy() for n in agent.planner}
    train_step(agent, data, new_state(agent, 0))
    for n in agent.planner:
        # the skill embedding sits between the codebook and the diffuser, so only L_diff reaches it
        assert np.array_equal(agent.planner[n].data, before[n]), n


def test_thinning_updates_predictor_every_period(tiny_data):
    agent, data = tiny_agent(tiny_data[1], tiny_config(skill_update_period=3))
    state = new_state(agent, 0)
    name = "skill.predictor.out.w"
    changed = []
    for _ in range(6):
        before = agent.skill[name].data.copy()
        train_step(agent, data, state)
        changed.append(not np.array_equal(before, agent.skill[name].data))
    assert changed == [True, False, False, True, False, False]


def test_non_finite_loss_names_the_term(tiny_data):
    agent, data = tiny_agent(tiny_data[1], tiny_config())
    data.actions[:] = np.nan
    with pytest.raises(TrainingError, match="l_inv"):
        train_step(agent, data, new_state(agent, 0))


def test_empty_dataset_writes_nothing(tmp_path):
    write_dataset(Dataset([], 20), tmp_path / "empty.skdd")
    out = tmp_path / "run"
    with pytest.raises(InputError):
        run_training(tmp_path / "empty.skdd", tiny_config(), out)
    assert not out.exists()
    with pytest.raises(InputError):
        run_training(tmp_path / "missing.skdd", tiny_config(), out)


def test_run_writes_log_and_resumes_identically(tiny_data, tmp_path):
    path, _ = tiny_data
    cfg = tiny_config()
    run_training(path, cfg, tmp_path / "a")
    log = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert log[0] == METRICS_HEADER and len(log) == 7
    assert (tmp_path / "a" / "checkpoint_000003.skdf").exists()
    run_training(path, cfg, tmp_path / "a", resume=tmp_path / "a" / "checkpoint_000003.skdf")
    assert (tmp_path / "a" / "metrics.csv").read_text().splitlines() == log
    run_training(path, cfg, tmp_path / "b")
    assert (tmp_path / "b" / "metrics.csv").read_bytes() == (tmp_path / "a" / "metrics.csv").read_bytes()
    assert (tmp_path / "b" / "model.skdf").read_bytes() == (tmp_path / "a" / "model.skdf").read_bytes()


def test_frozen_encoders_survive_training(tiny_data, tmp_path):
    path, ds = tiny_data
    agent = run_training(path, tiny_config(), tmp_path)
    fresh = Vocabulary([w for t in ds.trajectories for w in t.instruction], 32, 7)
    assert np.array_equal(agent.vocab.table, fresh.table)
    back = load_agent(tmp_path / "model.skdf")
    assert np.array_equal(back.obs_encoder.projection, agent.obs_encoder.projection)
    for n in agent.planner:
        assert np.array_equal(back.planner[n].data, agent.planner[n].data)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_losses_descend_and_codes_stay_in_use(seed, tmp_path):
    cfg = config_with(Config(), steps=1000, seed=seed, checkpoint_every=0)
    path = tmp_path / "d.skdd"
    generate_dataset(600, 20, 0.3, path, make_rng(seed, 1))
    run_training(path, cfg, tmp_path / "run")
    rows = np.loadtxt(tmp_path / "run" / "metrics.csv", delimiter=",", skiprows=1)
    head, tail = rows[0], rows[-50:].mean(axis=0)
    assert tail[2] < 0.5 * head[2]
    assert tail[3] < 0.1 * head[3]
    assert rows[-1, 4] >= 4 / 20
