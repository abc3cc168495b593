"""Run configuration: a JSON document whose sections map onto the module
config dataclasses. Unknown keys are errors; module seeds default to the
global seed."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .downstream.qa import QaConfig
from .downstream.recommender import RecConfig
from .downstream.world import WorldSpec
from .perturb import METHODS
from .rl.train import RlTrainConfig
from .scorer import ScorerTrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "world": WorldSpec,
    "scorer": ScorerTrainConfig,
    "recommender": RecConfig,
    "qa": QaConfig,
    "rl": RlTrainConfig,
}

PLAIN_SECTIONS = {
    "data": {"triples": None, "interactions": None, "qa_tasks": None},
    "downstream": {"task": "recommender"},
    "perturb": {"method": "RS", "scale": 1.0, "head_only": False},
    "curve": {"methods": ["RS", "RR", "ER", "ED"], "scales": [0.0, 0.25, 0.5, 0.75, 1.0], "seeds": [0]},
    "rl_run": {"variant": "RL-RR"},
}


@dataclasses.dataclass
class RunConfig:
    seed: int
    out: Path
    world: WorldSpec
    scorer: ScorerTrainConfig
    recommender: RecConfig
    qa: QaConfig
    rl: RlTrainConfig
    data: dict
    downstream: dict
    perturb: dict
    curve: dict
    rl_run: dict

    def to_json(self) -> str:
        doc = {"seed": self.seed, "out": str(self.out)}
        for name in SECTIONS:
            doc[name] = dataclasses.asdict(getattr(self, name))
        for name in PLAIN_SECTIONS:
            doc[name] = getattr(self, name)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def input_path(self, key: str, default_name: str) -> Path:
        value = self.data.get(key)
        return Path(value) if value else self.out / default_name


def _build(cls, raw: dict, seed: int, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    values = dict(raw)
    if "seed" in names and "seed" not in values:
        values["seed"] = seed
    if "split" in values:
        values["split"] = tuple(values["split"])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def resolve_config(raw: dict | None = None, seed: int | None = None, out=None) -> RunConfig:
    """Merge defaults, the config document and command-line overrides."""
    raw = dict(raw or {})
    allowed = {"seed", "out"} | set(SECTIONS) | set(PLAIN_SECTIONS)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    g_seed = int(seed if seed is not None else raw.get("seed", 0))
    if g_seed < 0:
        raise ConfigError("seed must be non-negative")
    out_dir = Path(out if out is not None else raw.get("out", "runs"))
    built = {name: _build(cls, raw.get(name, {}), g_seed, name) for name, cls in SECTIONS.items()}
    plain = {}
    for name, defaults in PLAIN_SECTIONS.items():
        given = raw.get(name, {})
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        plain[name] = {**defaults, **given}
    if plain["downstream"]["task"] not in ("recommender", "qa"):
        raise ConfigError("downstream.task must be 'recommender' or 'qa'")
    if plain["perturb"]["method"] not in METHODS:
        raise ConfigError(f"unknown perturbation method {plain['perturb']['method']!r}")
    if plain["rl_run"]["variant"] not in ("RL-RR", "RL-ER"):
        raise ConfigError("rl_run.variant must be RL-RR or RL-ER")
    bad = [m for m in plain["curve"]["methods"] if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown curve method(s): {bad}")
    return RunConfig(seed=g_seed, out=out_dir, **built, **plain)


def load_config(path=None, seed: int | None = None, out=None) -> RunConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
    return resolve_config(raw, seed, out)
