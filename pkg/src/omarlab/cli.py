"""omarlab command line: gen-data, train, eval, sweep, score.

Exit status is 0 on success, 2 on configuration or contract errors, 1 when a
sweep finishes with failed sub-runs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import artifacts as art
from . import experiments as ex
from .config import OUT_ENV_VAR, ConfigError, RunConfig, config_to_yaml, default_config_text, load_config
from .dataset import TIERS, ConfigurationError, DatasetError, ScoreTable
from .nn import CheckpointError, ContractError

USER_ERRORS = (ConfigError, ConfigurationError, DatasetError, CheckpointError, ContractError,
               FileNotFoundError, ValueError, ZeroDivisionError)


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.out:
        cfg = cfg.replace(out_dir=str(args.out))
    if args.seeds:
        cfg = cfg.replace(seeds=tuple(args.seeds))
    if args.strict_actions:
        cfg = cfg.replace(env=dataclasses.replace(cfg.env, strict_actions=True))
    return cfg


def _echo_config(cfg: RunConfig, directory: Path):
    art.atomic_write_text(directory / "resolved_config.yaml", config_to_yaml(cfg))


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    if args.data_seed is not None:
        cfg = cfg.replace(dataset=dataclasses.replace(cfg.dataset, seed=args.data_seed))
    tiers = args.tier or [cfg.dataset.tier]
    if "all" in tiers:
        tiers = list(TIERS)
    bundles = ex.generate_tiers(cfg, tiers, force=args.force, log=_log)
    _echo_config(cfg, ex.data_dir(cfg))
    for t, b in bundles.items():
        print(f"{t}\t{b.path}\t{len(b.dataset)}\t{b.behavior_return!r}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    bundle = ex.dataset_for(cfg, log=_log)  # fails before any training step
    if cfg.train.batch_size > len(bundle.dataset) * cfg.dataset.fraction:
        raise ValueError(f"batch size {cfg.train.batch_size} exceeds dataset size {len(bundle.dataset)}")
    name = args.name or f"train_{cfg.train.actor_mode}"
    _, rep = ex.train_seeds(cfg, name, bundle, log=_log)
    _echo_config(cfg, cfg.output_root() / name)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return 0


def _score_table_from(args, cfg: RunConfig) -> ScoreTable | None:
    if args.score_table:
        raw = json.loads(Path(args.score_table).read_text())
        return ScoreTable(float(raw["score_random"]), float(raw["score_expert"]))
    if args.s_random is not None and args.s_expert is not None:
        return ScoreTable(args.s_random, args.s_expert)
    return None


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    seeds = list(cfg.seeds)
    episodes = args.episodes or cfg.eval.episodes
    table = _score_table_from(args, cfg)
    rep = ex.eval_checkpoint(args.checkpoint, cfg.env, episodes, seeds, table, args.behavior_return)
    out = Path(args.report_dir) if args.report_dir else Path(args.checkpoint).parent
    art.atomic_write_text(out / "eval_report.json", art.dump_json(rep.to_dict()))
    art.write_csv(out / "eval_report.csv", rep.rows(), ("seed", "return", "normalized"))
    _echo_config(cfg, out)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    values = [ex.parse_axis_value(args.axis, v) for v in args.values]
    res = ex.run_sweep(cfg, args.axis, values, name=args.name, workers=args.workers, log=_log)
    root = cfg.output_root() / (args.name or f"sweep_{args.axis}")
    _echo_config(cfg, root)
    sys.stdout.write(art.csv_text(res.aggregate, list(res.aggregate[0].keys())))
    if res.trend is not None:
        print(json.dumps(res.trend, sort_keys=True))
    return 1 if res.failures else 0


def cmd_score(args) -> int:
    cfg = _resolve(args)
    table = _score_table_from(args, cfg)
    if table is None:
        raise ConfigError("score needs --score-table or both --s-random and --s-expert")
    rows = art.read_csv(args.returns)
    if not rows or args.column not in rows[0]:
        raise ConfigError(f"{args.returns}: no column {args.column!r}")
    scored = ex.score_rows(rows, table, args.column)
    fields = list(rows[0].keys()) + ["normalized"]
    text = art.csv_text(scored, fields)
    if args.output:
        art.atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config (unknown keys are rejected)")
    common.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+",
                        help="override the config's seed list")
    common.add_argument("--out", type=Path, help=f"output root (default: config out_dir, ${OUT_ENV_VAR}, ./runs)")
    common.add_argument("--workers", type=int, default=1, help="parallel sub-runs for sweeps")
    common.add_argument("--strict-actions", action="store_true",
                        help="reject out-of-range actions instead of clamping")

    p = argparse.ArgumentParser(prog="omarlab", description=__doc__.splitlines()[0])
    p.add_argument("--print-default-config", action="store_true", help="print the default config and exit")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", parents=[common], help="generate offline datasets")
    g.add_argument("--tier", nargs="+", choices=list(TIERS) + ["all"])
    g.add_argument("--data-seed", type=int, help="dataset generation seed (overrides dataset.seed)")
    g.add_argument("--force", action="store_true", help="regenerate even if an identical dataset exists")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="offline training, one run per seed")
    t.add_argument("--name", help="run directory name under the output root")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint with deterministic policies")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--episodes", type=int)
    e.add_argument("--score-table", type=Path, help="JSON with score_random and score_expert (e.g. a dataset manifest)")
    e.add_argument("--s-random", type=float)
    e.add_argument("--s-expert", type=float)
    e.add_argument("--behavior-return", type=float)
    e.add_argument("--report-dir", type=Path)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="train+eval over one axis")
    s.add_argument("--axis", required=True, choices=ex.SWEEP_AXES)
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--name")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("score", parents=[common], help="normalize a returns CSV")
    c.add_argument("--returns", required=True, type=Path)
    c.add_argument("--column", default="return")
    c.add_argument("--score-table", type=Path)
    c.add_argument("--s-random", type=float)
    c.add_argument("--s-expert", type=float)
    c.add_argument("--output", type=Path)
    c.set_defaults(fn=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        sys.stdout.write(default_config_text())
        return 0
    if not args.command:
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        _log(f"error: {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
