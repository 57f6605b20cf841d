"""Experiment orchestration shared by the CLI, the scripts and the acceptance tests.

Output layout under the output root::

    data/<env_id>/seed<k>/<tier>.bin             dataset
    data/<env_id>/seed<k>/<tier>.manifest.json   seeds, checkpoints, thresholds, scores
    data/<env_id>/seed<k>/behavior/{medium,expert}/   behavior snapshots
    data/<env_id>/seed<k>/behavior/history.csv   online evaluation curve
    <name>/seed<s>/{config.yaml,metrics.csv,timing.csv,returns.csv,checkpoint/}
    <name>/report.json, <name>/summary.csv
"""
from __future__ import annotations

import dataclasses
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from . import artifacts as art
from .algos import METRIC_FIELDS, OnlineResult, TrainConfig, evaluate, online_train_run, train_run
from .config import RunConfig, config_from_dict, config_to_dict, config_to_yaml
from .dataset import (TIERS, ConfigurationError, Dataset, ScoreTable, generate_dataset, load_dataset,
                      normalized_score, random_tier_actors, save_dataset, subsample)
from .envs import EnvConfig

SWEEP_AXES = ("n_agents", "tau", "sampler_variant", "dataset_fraction", "actor_lr", "actor_updates")
RUN_FIELDS = ("value", "seed", "status", "final_return", "final_std", "normalized",
              "improvement_pct", "ms_per_update", "wall_s", "error")


def improvement_pct(s_algo, s_behavior: float):
    """100 * (S_algo - S_behavior) / |S_behavior|."""
    if s_behavior == 0:
        raise ZeroDivisionError("behavior return is zero")
    return 100.0 * (np.asarray(s_algo, dtype=np.float64) - s_behavior) / abs(s_behavior)


# ---------------------------------------------------------------- datasets

@dataclass
class DataBundle:
    dataset: Dataset
    path: Path
    manifest: dict

    @property
    def score_table(self) -> ScoreTable:
        return ScoreTable(self.manifest["score_random"], self.manifest["score_expert"])

    @property
    def behavior_return(self) -> float:
        return float(self.manifest["behavior_eval_return"])


def env_id(env: EnvConfig) -> str:
    return f"{env.variant}-n{env.n_agents}"


def data_dir(cfg: RunConfig) -> Path:
    return cfg.output_root() / "data" / env_id(cfg.env) / f"seed{cfg.dataset.seed}"


def _generation_key(cfg: RunConfig, tier: str) -> dict:
    d = config_to_dict(cfg)
    key = {"env": d["env"], "tier": tier, "seed": cfg.dataset.seed, "hidden": list(cfg.train.hidden),
           "behavior_checkpoint": cfg.dataset.behavior}
    if tier != "random":
        key["behavior"] = d["behavior"]
    if tier in ("random", "medium", "expert"):
        key["size"] = cfg.dataset.size
    return key


def _history_rows(run: OnlineResult) -> list[dict]:
    return [{"env_step": p.env_step, "eval_mean": p.mean, "eval_std": p.std,
             "normalized": run.normalized(p)} for p in run.history]


def behavior_run(cfg: RunConfig, progress=None) -> OnlineResult:
    env = dataclasses.replace(cfg.env, strict_actions=False)
    return online_train_run(env, cfg.behavior.train_config(cfg.train.hidden), cfg.dataset.seed,
                            record=True, progress=progress)


def generate_tiers(cfg: RunConfig, tiers=TIERS, force: bool = False, log=print) -> dict[str, DataBundle]:
    """Write datasets and manifests for the requested tiers.

    One recorded online run serves all non-random tiers. A tier whose file and
    manifest already exist for the same generation key is reused as is.
    """
    out = data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    bundles: dict[str, DataBundle] = {}
    todo = []
    for tier in tiers:
        if tier not in TIERS:
            raise ConfigurationError(f"unknown tier {tier!r}")
        man_path = out / f"{tier}.manifest.json"
        if not force and man_path.exists() and (out / f"{tier}.bin").exists():
            man = json.loads(man_path.read_text())
            if man.get("key") == _generation_key(cfg, tier):
                bundles[tier] = DataBundle(load_dataset(out / f"{tier}.bin"), out / f"{tier}.bin", man)
                continue
        todo.append(tier)
    if not todo:
        return bundles

    run = None
    ext_actors = None
    if cfg.dataset.behavior is not None:
        ext_actors = art.load_networks(cfg.dataset.behavior, "actor")
    # the score table comes from the online run; a random-only request skips it
    needs_run = any(t != "random" for t in todo)
    if needs_run:
        log(f"[gen-data] online behavior run for {env_id(cfg.env)} seed {cfg.dataset.seed}")
        run = behavior_run(cfg)
        bdir = out / "behavior"
        art.save_actors(run.medium_point.actors, bdir / "medium",
                        {"env_step": run.medium_point.env_step, "eval_return": run.medium_point.mean})
        art.save_actors(run.expert_point.actors, bdir / "expert",
                        {"env_step": run.expert_point.env_step, "eval_return": run.expert_point.mean})
        art.write_csv(bdir / "history.csv", _history_rows(run), ("env_step", "eval_mean", "eval_std", "normalized"))
    table = run.score_table if run is not None else None
    env = cfg.env
    for tier in todo:
        checkpoint = None
        if tier == "random":
            d = generate_dataset(env, tier, cfg.dataset.size, cfg.dataset.seed, hidden=cfg.train.hidden)
            actors = random_tier_actors(env, cfg.dataset.seed, cfg.train.hidden)
            beh_ret = float(evaluate(env, actors, cfg.eval.episodes, cfg.dataset.seed).mean())
        elif tier == "medium_replay":
            d = generate_dataset(env, tier, cfg.dataset.size, cfg.dataset.seed, behavior=run)
            beh_ret = run.medium_point.mean
            checkpoint = str(out / "behavior" / "medium")
        else:
            if ext_actors is not None:
                actors, checkpoint = ext_actors, cfg.dataset.behavior
                beh_ret = float(evaluate(env, actors, cfg.eval.episodes, cfg.dataset.seed).mean())
            else:
                point = run.medium_point if tier == "medium" else run.expert_point
                actors, beh_ret = point.actors, point.mean
                checkpoint = str(out / "behavior" / tier)
            d = generate_dataset(env, tier, cfg.dataset.size, cfg.dataset.seed, behavior=actors,
                                 hidden=cfg.train.hidden)
        d.metadata["behavior_eval_return"] = repr(beh_ret)
        path = out / f"{tier}.bin"
        save_dataset(d, path)
        manifest = {"tier": tier, "file": path.name, "n_samples": len(d), "seed": cfg.dataset.seed,
                    "behavior_checkpoint": checkpoint, "behavior_eval_return": beh_ret,
                    "key": _generation_key(cfg, tier)}
        if run is not None:
            manifest.update(score_random=table.s_random, score_expert=table.s_expert,
                            medium_band=list(cfg.behavior.medium_band),
                            medium_step=run.medium_point.env_step,
                            medium_normalized=run.normalized(run.medium_point),
                            expert_step=run.expert_point.env_step)
        art.atomic_write_text(out / f"{tier}.manifest.json", art.dump_json(manifest))
        bundles[tier] = DataBundle(d, path, manifest)
        log(f"[gen-data] {tier}: {len(d)} transitions, behavior return {beh_ret:.3f} -> {path}")
    return bundles


def dataset_for(cfg: RunConfig, log=print) -> DataBundle:
    """The dataset a train run uses: explicit path, or generated/reused under out_dir."""
    if cfg.dataset.path:
        path = Path(cfg.dataset.path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file {path} not found (run gen-data first)")
        man_path = path.with_name(path.name.replace(".bin", "") + ".manifest.json")
        man = json.loads(man_path.read_text()) if man_path.exists() else {}
        d = load_dataset(path)
        man.setdefault("behavior_eval_return", float(d.metadata.get("behavior_eval_return", "nan")))
        for k in ("score_random", "score_expert"):
            if k not in man and f"{k}" in d.metadata:
                man[k] = float(d.metadata[k])
        return DataBundle(d, path, man)
    return generate_tiers(cfg, (cfg.dataset.tier,), log=log)[cfg.dataset.tier]


# ---------------------------------------------------------------- training

@dataclass
class RunRecord:
    seed: int
    final_returns: np.ndarray
    ms_per_update: float
    wall_s: float
    metrics_rows: list[dict] = field(default_factory=list)

    @property
    def final_return(self) -> float:
        return float(np.mean(self.final_returns))


def _train_cfg(cfg: RunConfig) -> TrainConfig:
    return dataclasses.replace(cfg.train, final_eval_episodes=cfg.eval.episodes)


def train_one(cfg: RunConfig, data: Dataset, seed: int, run_dir: Path | None = None,
              progress=None) -> RunRecord:
    """Train one seed; with ``run_dir`` write config, metrics, timing, returns and checkpoint."""
    if cfg.dataset.fraction < 1.0:
        data = subsample(data, cfg.dataset.fraction, seed)
    env = dataclasses.replace(cfg.env, strict_actions=False)
    t0 = time.perf_counter()
    res = train_run(data, _train_cfg(cfg), seed, env=env, progress=progress)
    wall = time.perf_counter() - t0
    rec = RunRecord(seed, res.final_returns, res.mean_ms_per_update, wall, res.metrics.rows)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        art.atomic_write_text(run_dir / "config.yaml", config_to_yaml(dataclasses.replace(cfg, seeds=(seed,))))
        art.write_csv(run_dir / "metrics.csv", res.metrics.rows, METRIC_FIELDS)
        ms = res.metrics.ms_per_update
        timing = []
        for row in res.metrics.rows:
            lo = timing[-1]["step"] if timing else 0
            seg = ms[lo:row["step"]]
            timing.append({"step": row["step"], "ms_per_update": float(np.mean(seg)) if seg else float("nan")})
        art.write_csv(run_dir / "timing.csv", timing, ("step", "ms_per_update"))
        art.write_csv(run_dir / "returns.csv",
                      [{"episode": k, "return": float(r)} for k, r in enumerate(res.final_returns)],
                      ("episode", "return"))
        art.save_learners(res.learners, run_dir / "checkpoint",
                          {"seed": seed, "steps": cfg.train.total_steps, "env": dataclasses.asdict(cfg.env)})
    return rec


@dataclass
class EvalReport:
    seeds: list[int]
    per_seed_returns: list[float]
    episodes: int
    mean: float
    std: float
    normalized: list[float] | None = None
    normalized_mean: float | None = None
    normalized_std: float | None = None
    behavior_return: float | None = None
    improvement_pct: float | None = None
    wall_clock_s: float = 0.0

    @classmethod
    def build(cls, seeds, per_seed, episodes, table: ScoreTable | None = None,
              behavior_return: float | None = None, wall: float = 0.0) -> EvalReport:
        r = np.asarray(per_seed, dtype=np.float64)
        rep = cls(list(map(int, seeds)), [float(x) for x in r], int(episodes), float(r.mean()),
                  float(r.std()), wall_clock_s=float(wall))
        if table is not None:
            ns = table.normalize(r)
            rep.normalized = [float(x) for x in ns]
            rep.normalized_mean, rep.normalized_std = float(ns.mean()), float(ns.std())
        if behavior_return is not None and np.isfinite(behavior_return):
            rep.behavior_return = float(behavior_return)
            rep.improvement_pct = float(improvement_pct(rep.mean, behavior_return))
        return rep

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def rows(self) -> list[dict]:
        out = []
        for k, s in enumerate(self.seeds):
            out.append({"seed": s, "return": self.per_seed_returns[k],
                        "normalized": self.normalized[k] if self.normalized else float("nan")})
        return out


def _table_of(bundle: DataBundle) -> ScoreTable | None:
    m = bundle.manifest
    if "score_random" in m and "score_expert" in m:
        return ScoreTable(float(m["score_random"]), float(m["score_expert"]))
    return None


def train_seeds(cfg: RunConfig, name: str = "train", bundle: DataBundle | None = None,
                log=print) -> tuple[list[RunRecord], EvalReport]:
    bundle = bundle or dataset_for(cfg, log=log)
    if cfg.train.batch_size > len(bundle.dataset) * cfg.dataset.fraction:
        raise ValueError(f"batch size {cfg.train.batch_size} exceeds dataset size")
    root = cfg.output_root() / name
    recs = []
    for s in cfg.seeds:
        rec = train_one(cfg, bundle.dataset, s, root / f"seed{s}")
        log(f"[train] seed {s}: final return {rec.final_return:.3f} ({rec.ms_per_update:.2f} ms/update)")
        recs.append(rec)
    rep = EvalReport.build(cfg.seeds, [r.final_return for r in recs], cfg.eval.episodes,
                           _table_of(bundle), bundle.behavior_return, sum(r.wall_s for r in recs))
    art.atomic_write_text(root / "report.json", art.dump_json(rep.to_dict()))
    art.write_csv(root / "summary.csv", rep.rows(), ("seed", "return", "normalized"))
    art.atomic_write_text(root / "config.yaml", config_to_yaml(cfg))
    return recs, rep


def eval_checkpoint(checkpoint, env: EnvConfig, episodes: int, seeds, table: ScoreTable | None = None,
                    behavior_return: float | None = None) -> EvalReport:
    actors = art.load_networks(checkpoint, "actor")
    if len(actors) != env.n_agents:
        raise ValueError(f"checkpoint has {len(actors)} agents, env has {env.n_agents}")
    if actors[0].spec.input_dim != env.obs_dim or actors[0].spec.output_dim != env.act_dim:
        raise ValueError("checkpoint network shapes do not match the environment")
    t0 = time.perf_counter()
    env = dataclasses.replace(env, strict_actions=False)
    per_seed = [float(evaluate(env, actors, episodes, s).mean()) for s in seeds]
    return EvalReport.build(seeds, per_seed, episodes, table, behavior_return, time.perf_counter() - t0)


# ---------------------------------------------------------------- sweeps

def apply_axis(cfg: RunConfig, axis: str, value) -> RunConfig:
    if axis == "n_agents":
        return cfg.replace(env=dataclasses.replace(cfg.env, n_agents=int(value)))
    if axis == "tau":
        return cfg.with_train(tau=float(value))
    if axis == "sampler_variant":
        return cfg.with_sampler(variant=str(value))
    if axis == "dataset_fraction":
        return cfg.replace(dataset=dataclasses.replace(cfg.dataset, fraction=float(value)))
    if axis == "actor_lr":
        return cfg.with_train(actor_lr=float(value))
    if axis == "actor_updates":
        return cfg.with_train(actor_updates=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def parse_axis_value(axis: str, text: str):
    if axis in ("n_agents", "actor_updates"):
        return int(text)
    if axis == "sampler_variant":
        return text
    return float(text)


@lru_cache(maxsize=8)
def _load_cached(path: str, mtime: float) -> Dataset:
    return load_dataset(path)


def _sweep_job(args):
    cfg_dict, value, seed, data_path, run_dir = args
    cfg = config_from_dict(cfg_dict)
    t0 = time.perf_counter()
    try:
        p = Path(data_path)
        rec = train_one(cfg, _load_cached(str(p), p.stat().st_mtime), seed, Path(run_dir))
        return {"value": value, "seed": seed, "status": "ok", "final_return": rec.final_return,
                "final_std": float(np.std(rec.final_returns)), "ms_per_update": rec.ms_per_update,
                "wall_s": rec.wall_s, "error": ""}
    except Exception as e:  # recorded, the sweep goes on
        return {"value": value, "seed": seed, "status": "failed", "final_return": float("nan"),
                "final_std": float("nan"), "ms_per_update": float("nan"),
                "wall_s": time.perf_counter() - t0,
                "error": f"{type(e).__name__}: {e}".replace("\n", " ")[:500],
                "traceback": traceback.format_exc()}


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


@dataclass
class SweepResult:
    axis: str
    runs: list[dict]
    aggregate: list[dict]
    trend: dict | None = None

    @property
    def failures(self) -> int:
        return sum(r["status"] != "ok" for r in self.runs)


def spearman_trend(xs, ys) -> dict:
    """Spearman rank correlation of y with x plus one-sided p-values."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    ok = np.isfinite(ys)
    if ok.sum() < 3:
        return {"spearman_rho": float("nan"), "p_negative": float("nan"), "p_positive": float("nan"), "n": int(ok.sum())}
    res_less = stats.spearmanr(xs[ok], ys[ok], alternative="less")
    res_greater = stats.spearmanr(xs[ok], ys[ok], alternative="greater")
    return {"spearman_rho": float(res_less.statistic), "p_negative": float(res_less.pvalue),
            "p_positive": float(res_greater.pvalue), "n": int(ok.sum())}


def run_sweep(cfg: RunConfig, axis: str, values, name: str | None = None, workers: int = 1,
              log=print) -> SweepResult:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one value")
    name = name or f"sweep_{axis}"
    root = cfg.output_root() / name
    variants = [(v, apply_axis(cfg, axis, v)) for v in values]  # validates every value up front
    bundles = {}
    for v, c in variants:
        key = env_id(c.env)
        if key not in bundles:
            bundles[key] = dataset_for(c, log=log)
    jobs = []
    for v, c in variants:
        b = bundles[env_id(c.env)]
        for s in c.seeds:
            jobs.append((config_to_dict(dataclasses.replace(c, seeds=(s,))), v, s, str(b.path),
                         str(root / f"{axis}={v}" / f"seed{s}")))
    runs = _map(_sweep_job, jobs, workers)
    agg = []
    for v, c in variants:
        b = bundles[env_id(c.env)]
        table = _table_of(b)
        rows = [r for r in runs if r["value"] == v]
        for r in rows:
            ok = r["status"] == "ok"
            r["normalized"] = float(table.normalize(r["final_return"])) if table and ok else float("nan")
            r["improvement_pct"] = (float(improvement_pct(r["final_return"], b.behavior_return))
                                    if ok and np.isfinite(b.behavior_return) else float("nan"))
        good = [r for r in rows if r["status"] == "ok"]
        fr = np.array([r["final_return"] for r in good])
        imp = np.array([r["improvement_pct"] for r in good])
        nz = np.array([r["normalized"] for r in good])

        def stat(a, f):
            return float(f(a)) if len(a) else float("nan")
        agg.append({"axis": axis, "value": v, "n_seeds": len(good), "failures": len(rows) - len(good),
                    "mean": stat(fr, np.mean), "std": stat(fr, np.std),
                    "sem": stat(fr, lambda a: a.std(ddof=1) / np.sqrt(len(a)) if len(a) > 1 else 0.0),
                    "normalized_mean": stat(nz, np.mean), "normalized_std": stat(nz, np.std),
                    "behavior_return": b.behavior_return,
                    "improvement_pct_mean": stat(imp, np.mean), "improvement_pct_std": stat(imp, np.std)})
    trend = None
    if axis == "n_agents":
        ok = [r for r in runs if r["status"] == "ok"]
        trend = spearman_trend([r["value"] for r in ok], [r["improvement_pct"] for r in ok])
        trend_mean = spearman_trend([a["value"] for a in agg], [a["improvement_pct_mean"] for a in agg])
        trend["spearman_rho_of_means"] = trend_mean["spearman_rho"]
        art.atomic_write_text(root / "trend.json", art.dump_json(trend))
    art.write_csv(root / "runs.csv", runs, RUN_FIELDS)
    art.write_csv(root / "aggregate.csv", agg, list(agg[0].keys()))
    art.atomic_write_text(root / "config.yaml", config_to_yaml(cfg))
    res = SweepResult(axis, runs, agg, trend)
    for r in runs:
        if r["status"] != "ok":
            log(f"[sweep] {axis}={r['value']} seed {r['seed']} failed: {r['error']}")
    return res


def aggregate_from_runs_csv(path) -> dict:
    """Recompute per-value mean/std from a runs.csv, for cross-checking aggregate.csv."""
    rows = [r for r in art.read_csv(path) if r["status"] == "ok"]
    out = {}
    for r in rows:
        out.setdefault(r["value"], []).append(float(r["final_return"]))
    return {v: (float(np.mean(x)), float(np.std(x))) for v, x in out.items()}


def score_rows(rows: list[dict], table: ScoreTable, column: str = "return") -> list[dict]:
    out = []
    for r in rows:
        s = float(r[column])
        out.append(dict(r, normalized=float(normalized_score(s, table.s_random, table.s_expert))))
    return out
