import numpy as np
import pytest

from skillplan.agent import build_agent, flat_hidden_width
from skillplan.cli import main
from skillplan.config import Config
from skillplan.encoders import Vocabulary
from skillplan.evaluation import (EVAL_HEADER, column_normalize, dominant_columns, evaluate,
                                  family_rate, parse_eval_csv, random_policy_rate, skill_heatmap,
                                  top_words)
from skillplan.numerics import make_rng
from skillplan.toyworld import FAMILIES, generate_dataset

from .test_training import tiny_config


def vocab():
    return Vocabulary(["close", "open", "turn", "move", "the", "drawer", "faucet", "mug", "left",
                       "right", "down", "black", "white"], 32, 7)


@pytest.fixture(scope="module")
def agent():
    return build_agent(tiny_config(), vocab(), 0)


# -- evaluation table ------------------------------------------------------------------

def test_zero_episodes_gives_header_only(agent):
    assert evaluate(agent, 0, [0, 1]) == EVAL_HEADER + "\n"


def test_table_shape_rates_and_determinism(agent):
    text = evaluate(agent, 1, [0, 1])
    rows = parse_eval_csv(text)
    assert len(rows) == 6 * len(FAMILIES) * 2 + len(FAMILIES) + 1
    assert all(0.0 <= r["success_rate"] <= 1.0 for r in rows)
    assert rows[0]["task"] == "close drawer" and rows[0]["family"] == "seen" and rows[0]["seed"] == "0"
    assert rows[-1]["task"] == rows[-1]["family"] == "all"
    assert 0.0 <= family_rate(rows, "seen") <= 1.0
    assert evaluate(agent, 1, [0, 1]) == text


def test_random_policy_rarely_succeeds():
    assert random_policy_rate(20, 20, make_rng(0)) < 0.2


# -- ablation fairness -----------------------------------------------------------------------

def test_flat_variant_is_parameter_matched():
    full = build_agent(Config(), vocab(), 0)
    flat_cfg = Config()
    flat_cfg.planner.flat = True
    flat = build_agent(flat_cfg, vocab(), 0)
    assert abs(flat.num_parameters() - full.num_parameters()) <= 0.1 * full.num_parameters()
    assert flat.codebook is None and not flat.skill.names()


def test_flat_variant_ignores_skill_set_size():
    a, b = Config(), Config()
    a.planner.flat = b.planner.flat = True
    b.planner.skill_set_size = 50
    assert flat_hidden_width(a.planner) == flat_hidden_width(b.planner)
    assert build_agent(a, vocab(), 0).num_parameters() == build_agent(b, vocab(), 0).num_parameters()


# -- heatmap -------------------------------------------------------------------------------------

def test_column_normalisation_and_dominance():
    M = np.array([[3.0, 0.0, 1.0], [1.0, 0.0, 1.0]])
    norm = column_normalize(M)
    assert np.allclose(norm[:, 0], [0.75, 0.25]) and np.all(norm[:, 1] == 0)
    assert dominant_columns(norm) == 1
    assert top_words(["a", "b"], norm)[2] == [("a", 0.5), ("b", 0.5)]


def test_heatmap_file(agent, tmp_path):
    ds, _ = generate_dataset(12, 20, 0.3, None, make_rng(0))
    rep = skill_heatmap(agent, ds, tmp_path / "heat.csv")
    norm = rep["normalized"]
    sums = norm.sum(axis=0)
    used = rep["counts"].sum(axis=0) > 0
    assert np.all(np.abs(sums[used] - 1.0) < 1e-9) and np.all(norm[:, ~used] == 0)
    lines = (tmp_path / "heat.csv").read_text().splitlines()
    assert lines[0].split(",")[1:] == [f"skill_{j}" for j in range(6)]
    assert len(lines) == 1 + len(rep["words"])
    assert len((tmp_path / "heat_top_words.txt").read_text().splitlines()) == 6


# -- command line -------------------------------------------------------------------------------

def test_cli_usage_errors(capsys):
    assert main([]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--no-such-flag"])
    assert exc.value.code == 2


def test_cli_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.bin"), "--out", str(tmp_path)]) == 1
    assert "missing.bin" in capsys.readouterr().err


def test_cli_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0


def test_cli_pipeline(tmp_path, capsys):
    out = str(tmp_path)
    sets = [f"--set={k}={v}" for k, v in dict(unet_channels=8, unet_groups=4, time_embed_dim=8,
                                               predictor_dim=16, predictor_heads=2, denoise_steps=10,
                                               batch_size=8).items()]
    assert main(["gen-data", "--out", out, "--num-trajectories", "12", "--seed", "3"]) == 0
    assert main(["train", "--out", out, "--steps", "4", *sets]) == 0
    assert main(["eval", "--out", out, "--episodes", "1", "--seeds", "0"]) == 0
    rows = parse_eval_csv((tmp_path / "eval.csv").read_text())
    assert rows[-1]["episodes"] == 6 * len(FAMILIES)
    assert main(["heatmap", "--out", out]) == 0
    assert (tmp_path / "heatmap.csv").exists()
    flat = tmp_path / "flat"
    assert main(["train", "--flat", "--out", str(flat), "--dataset", str(tmp_path / "dataset.skdd"),
                 "--steps", "2", "--skill-set-size", "40", *sets]) == 0
    assert "skill_set_size = 20" in (flat / "config.txt").read_text()
    assert main(["train", "--out", out, "--set", "horizon=oops"]) == 1
