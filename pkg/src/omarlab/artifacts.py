"""On-disk artifacts: learner checkpoints with a manifest, and CSV tables.

A checkpoint is a directory::

    manifest.json           file list, network specs, sha256 of each file
    agent0_actor.bin        nn checkpoint format, one file per network
    agent0_critic1.bin
    ...

Every file is written to a temporary name and renamed into place, and the
manifest is written last, so a directory with a manifest is always complete.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

from .algos import AgentLearner
from .nn import AdamState, CheckpointError, MlpParams, MlpSpec, decode_params, encode_params

MANIFEST = "manifest.json"
CHECKPOINT_FORMAT = "omarlab-checkpoint-1"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _spec_dict(spec: MlpSpec) -> dict:
    return {"input_dim": spec.input_dim, "hidden_dims": list(spec.hidden_dims),
            "output_dim": spec.output_dim, "hidden_activation": spec.hidden_activation,
            "output_activation": spec.output_activation}


def save_learners(learners: list[AgentLearner], directory, extra: dict | None = None) -> Path:
    """Write every network of every agent plus a manifest. Optimizer moments are not saved."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ln in enumerate(learners):
        for name, params in ln.networks().items():
            fname = f"agent{i}_{name}.bin"
            blob = encode_params(params)
            atomic_write_bytes(directory / fname, blob)
            entries.append({"agent": i, "network": name, "file": fname,
                            "sha256": hashlib.sha256(blob).hexdigest(), "spec": _spec_dict(params.spec)})
    manifest = {"format": CHECKPOINT_FORMAT, "n_agents": len(learners), "networks": entries,
                "extra": extra or {}}
    atomic_write_text(directory / MANIFEST, dump_json(manifest))
    return directory


def save_actors(actors: list[MlpParams], directory, extra: dict | None = None) -> Path:
    """Policy-only checkpoint (behavior snapshots); same manifest layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, params in enumerate(actors):
        fname = f"agent{i}_actor.bin"
        blob = encode_params(params)
        atomic_write_bytes(directory / fname, blob)
        entries.append({"agent": i, "network": "actor", "file": fname,
                        "sha256": hashlib.sha256(blob).hexdigest(), "spec": _spec_dict(params.spec)})
    manifest = {"format": CHECKPOINT_FORMAT, "n_agents": len(actors), "networks": entries,
                "extra": extra or {}}
    atomic_write_text(directory / MANIFEST, dump_json(manifest))
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no {MANIFEST} in {directory} (incomplete or missing checkpoint)")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    return manifest


def _load_entry(directory: Path, entry: dict) -> MlpParams:
    blob = (directory / entry["file"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
        raise CheckpointError(f"{entry['file']}: checksum mismatch")
    return decode_params(blob)


def load_networks(directory, network: str = "actor") -> list[MlpParams]:
    """One network per agent, in agent order."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    found = {e["agent"]: e for e in manifest["networks"] if e["network"] == network}
    if sorted(found) != list(range(manifest["n_agents"])):
        raise CheckpointError(f"checkpoint lacks {network!r} for some agents")
    return [_load_entry(directory, found[i]) for i in range(manifest["n_agents"])]


def load_learners(directory) -> list[AgentLearner]:
    """Rebuild learners; Adam moments restart from zero."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    nets: dict[int, dict[str, MlpParams]] = {}
    for e in manifest["networks"]:
        nets.setdefault(e["agent"], {})[e["network"]] = _load_entry(directory, e)
    out = []
    for i in range(manifest["n_agents"]):
        n = nets[i]
        critics = [n["critic1"], n["critic2"]]
        out.append(AgentLearner(n["actor"], n["actor_target"], critics,
                                [n["critic1_target"], n["critic2_target"]],
                                AdamState.zeros(n["actor"].flat.size),
                                [AdamState.zeros(c.flat.size) for c in critics]))
    return out


# ---------------------------------------------------------------- csv

def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(v))  # plain repr, also for np.float64
    return v


def csv_text(rows: list[dict], fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k, "")) for k in fields})
    return buf.getvalue()


def write_csv(path, rows: list[dict], fields) -> None:
    atomic_write_text(path, csv_text(rows, fields))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
