#!/usr/bin/env python3
"""Run the desk-scale Spread replications and write their tables.

    python3 scripts/replicate.py all --root runs/desk
    python3 scripts/replicate.py main --seeds 0 1 2

Finished training runs are cached under ``<root>/<code digest>/runs``, so an
interrupted invocation resumes where it stopped.
"""
import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from omarlab import artifacts as art
from omarlab import replication as rep

EXPERIMENTS = ("main", "sampler", "tau", "scaling", "runtime")


def table(out: Path, name: str, groups: dict):
    rows = rep.summarize({str(k): v for k, v in groups.items()})
    art.write_csv(out / f"{name}.csv", rows, ("group", "n", "mean", "std", "sem", "returns"))
    for r in rows:
        print(f"  {name:8s} {r['group']:>16s}  {r['mean']:9.3f} +- {r['sem']:.3f}  (n={r['n']})")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("experiments", nargs="+", choices=EXPERIMENTS + ("all",))
    ap.add_argument("--root", default="runs/desk", help="cache and report directory")
    ap.add_argument("--seeds", type=int, nargs="+", help="override the per-experiment seed lists")
    ap.add_argument("--main-steps", type=int, help="updates for the OMAR vs MA-CQL comparison")
    ap.add_argument("--ablation-steps", type=int, help="updates for the sampler and tau ablations")
    ap.add_argument("--scaling-steps", type=int, help="updates for the agent-count sweep")
    args = ap.parse_args(argv)

    todo = EXPERIMENTS if "all" in args.experiments else tuple(args.experiments)
    overrides = {k: v for k, v in (("main_steps", args.main_steps), ("ablation_steps", args.ablation_steps),
                                   ("scaling_steps", args.scaling_steps)) if v is not None}
    proto = dataclasses.replace(rep.DeskProtocol(), **overrides)
    root = rep.default_root(Path(args.root))
    out = root / "reports"
    out.mkdir(parents=True, exist_ok=True)

    def seeds(default):
        return args.seeds if args.seeds else default

    if "main" in todo:
        res = rep.omar_vs_macql(proto, root, seeds(range(5)))
        table(out, "main", res)
        om, mc = rep.returns(res["omar"]), rep.returns(res["macql"])
        print(f"  difference {om.mean() - mc.mean():.3f}, pooled SE {rep.pooled_se(om, mc):.3f}")
    if "sampler" in todo:
        table(out, "sampler", rep.sampler_comparison(proto, root, seeds(range(5))))
    if "tau" in todo:
        table(out, "tau", rep.tau_sweep(proto, root, seeds=seeds(range(3))))
    if "scaling" in todo:
        for variant in ("spread1d_coop", "spread1d_independent"):
            res = rep.agent_scaling(proto, root, variant, seeds=seeds(range(3)))
            art.write_csv(out / f"scaling_{variant}.csv", res["points"],
                          ("n_agents", "seed", "score", "behavior_score", "improvement_pct"))
            art.atomic_write_text(out / f"scaling_{variant}_trend.json", art.dump_json(res["trend"]))
            by = {}
            for p in res["points"]:
                by.setdefault(p["n_agents"], []).append(p["improvement_pct"])
            print(f"  {variant}: " + ", ".join(f"n={n} {np.mean(v):+.1f}%" for n, v in sorted(by.items()))
                  + f"; spearman {res['trend']['spearman_rho']:+.3f} (p_neg {res['trend']['p_negative']:.3f})")
    if "runtime" in todo:
        timing = rep.update_timing()
        timing["ratio"] = timing["omar"] / timing["macql"]
        art.atomic_write_text(out / "runtime.json", art.dump_json(timing))
        print("  runtime " + json.dumps({k: round(v, 3) for k, v in timing.items()}))
    print(f"reports in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
