"""Command line: gen-data, train, eval, heatmap, gradcheck.

Exit codes: 0 success, 1 runtime failure (missing file, bad checkpoint, failed
gradient check), 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .agent import MODEL_FILE, load_agent
from .config import Config, load_config
from .evaluation import evaluate, family_rate, parse_eval_csv, skill_heatmap
from .gradsuite import TOLERANCE, gradient_suite
from .numerics import ConfigError, make_rng
from .toyworld import generate_dataset, read_dataset
from .training import InputError, run_training

DATASET_FILE = "dataset.skdd"
EVAL_FILE = "eval.csv"
HEATMAP_FILE = "heatmap.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d, help="flat 'key = value' config file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config)")
    p.add_argument("--out", default=d if suppress else ".", help="output directory")
    p.add_argument("--flat", action="store_true", default=d if suppress else False,
                   help="use the flat condition map instead of skills")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=d,
                   help="override one config field (repeatable)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skillplan", parents=[_common(False)],
                     description="Skill-conditioned diffusion planner on a toy desk world.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _common(True)

    g = sub.add_parser("gen-data", parents=[common], help="write a demonstration dataset")
    g.add_argument("--num-trajectories", type=int)
    g.add_argument("--noise-scale", type=float)

    t = sub.add_parser("train", parents=[common], help="train from a dataset")
    t.add_argument("--dataset", help=f"dataset file (default <out>/{DATASET_FILE})")
    t.add_argument("--steps", type=int)
    t.add_argument("--skill-set-size", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", parents=[common], help="success rates per task and phrasing")
    e.add_argument("--checkpoint", help=f"model file (default <out>/{MODEL_FILE})")
    e.add_argument("--episodes", type=int, help="episodes per (task, family, seed) cell")
    e.add_argument("--seeds", default="0,1,2", help="comma-separated evaluation seeds")

    h = sub.add_parser("heatmap", parents=[common], help="word frequency per skill code")
    h.add_argument("--checkpoint")
    h.add_argument("--dataset")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.flat:
        cfg.planner.flat = True
    return cfg


def _cmd_gen_data(args, cfg: Config, out: Path) -> int:
    tc = cfg.train
    n = args.num_trajectories if args.num_trajectories is not None else tc.num_trajectories
    noise = args.noise_scale if args.noise_scale is not None else tc.noise_scale
    out.mkdir(parents=True, exist_ok=True)
    path = out / DATASET_FILE
    _, rate = generate_dataset(n, tc.episode_len, noise, path, make_rng(tc.seed, 1), obs_noise=tc.obs_noise)
    print(f"wrote {n} trajectories to {path}; expert success {rate:.3f}")
    return 0


def _cmd_train(args, cfg: Config, out: Path) -> int:
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.skill_set_size is not None and not cfg.planner.flat:
        cfg.planner.skill_set_size = args.skill_set_size
    cfg.validate()
    dataset = Path(args.dataset) if args.dataset else out / DATASET_FILE
    run_training(dataset, cfg, out, resume=args.resume)
    print(f"trained {cfg.train.steps} steps; model in {out / MODEL_FILE}")
    return 0


def _load(args, out: Path):
    ckpt = Path(args.checkpoint) if args.checkpoint else out / MODEL_FILE
    cfg = _config(args) if (args.config or args.set) else None
    return load_agent(ckpt, cfg)


def _cmd_eval(args, cfg: Config, out: Path) -> int:
    agent = _load(args, out)
    episodes = args.episodes if args.episodes is not None else agent.config.train.episodes_per_cell
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    text = evaluate(agent, episodes, seeds)
    out.mkdir(parents=True, exist_ok=True)
    (out / EVAL_FILE).write_text(text)
    if episodes:
        print(f"seen-family success {family_rate(parse_eval_csv(text), 'seen'):.3f}; table in {out / EVAL_FILE}")
    return 0


def _cmd_heatmap(args, cfg: Config, out: Path) -> int:
    agent = _load(args, out)
    ds = read_dataset(Path(args.dataset) if args.dataset else out / DATASET_FILE)
    out.mkdir(parents=True, exist_ok=True)
    rep = skill_heatmap(agent, ds, out / HEATMAP_FILE)
    print(f"{rep['dominant_columns']} skill columns with a dominant word; lists in {rep['ranked_path']}")
    return 0


def _cmd_gradcheck(args, cfg: Config, out: Path) -> int:
    errors = gradient_suite(cfg.train.seed)
    bad = {k: v for k, v in errors.items() if not v < TOLERANCE}
    for k, v in errors.items():
        print(f"{k:18s} {v:.2e} {'FAIL' if k in bad else 'ok'}")
    return 1 if bad else 0


COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train, "eval": _cmd_eval,
            "heatmap": _cmd_heatmap, "gradcheck": _cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg, Path(args.out))
    except (InputError, ConfigError, OSError, ValueError) as exc:
        print(f"skillplan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
