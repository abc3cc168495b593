"""Command-line entry point: ``kgperturb <command> [--config F] [--seed N] [--out DIR]``.

Every command reads its inputs from the resolved config (defaulting to files
inside ``--out``), writes its artifacts under ``--out`` and saves the fully
resolved configuration next to them as ``<command>.config.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .downstream.noisy import QaEvaluator, RecommenderEvaluator, noisy_baseline_eval
from .downstream.qa import eval_qa, load_qa, save_qa, train_qa
from .downstream.recommender import eval_auc, load_recommender, save_recommender, train_recommender
from .downstream.world import generate_synthetic_world, load_interactions, load_tasks, qa_split, save_world
from .kg import KGError, load_triples, save_triples
from .metrics import REPORT_HEADER, MetricReport, ats, metric_report, sc2d, sd2
from .nn import format_float
from .perturb import PerturbationRecord, perturb_scale, save_edits
from .plot import curve_svg
from .rl.policy import load_policy, save_policy
from .rl.train import greedy_rollout, make_env, train_policy, write_reward_curve
from .scorer import ScorerError, load_scorer, save_scorer, train_scorer

log = logging.getLogger("kgperturb")

CURVE_COLUMNS = ["method", "seed", "scale", "ats", "sc2d", "sd2", "downstream"]
REPORT_COLUMNS = ["method", "downstream", "ats", "sc2d", "sd2"]
REPORT_ROWS = ["w/o KG", "w/ KG", "RS", "RR", "ER", "ED", "RL-RR", "RL-ER"]


class CliError(Exception):
    pass


# -- shared loading ------------------------------------------------------------
def _require(path: Path) -> Path:
    if not path.exists():
        raise CliError(f"missing input file: {path}")
    return path


def load_graph(cfg: RunConfig):
    return load_triples(_require(cfg.input_path("triples", "triples.tsv")))


def load_scorer_ckpt(cfg: RunConfig):
    return load_scorer(_require(cfg.out / "scorer.txt"))


class Downstream:
    """Frozen downstream model plus its data, for whichever task the config selects."""

    def __init__(self, cfg: RunConfig, kg):
        self.task = cfg.downstream["task"]
        self.kg = kg
        if self.task == "recommender":
            self.inter = load_interactions(_require(cfg.input_path("interactions", "interactions.csv")), kg)
            self.model = load_recommender(_require(cfg.out / "recommender.txt"))
            self.baseline = load_recommender(_require(cfg.out / "recommender_l0.txt"))
            self.evaluator = RecommenderEvaluator(self.model, self.inter)
        else:
            split = qa_split(load_tasks(_require(cfg.input_path("qa_tasks", "qa_tasks.txt"))))
            self.tasks = split
            self.model = load_qa(_require(cfg.out / "qa.txt"))
            self.evaluator = QaEvaluator(self.model, split["dev"], split["test"])

    def score(self, kg) -> float:
        return self.evaluator.score(kg)

    def without_kg(self) -> float:
        if self.task == "recommender":
            return eval_auc(self.baseline, self.kg, self.inter)
        return noisy_baseline_eval(self.model, self.kg, "zero-graph-emb", self.tasks["test"])


def _write_config(cfg: RunConfig, name: str) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / f"{name}.config.json").write_text(cfg.to_json(), encoding="utf-8")


def _run_dir(cfg: RunConfig, method: str, seed: int, scale: float) -> Path:
    d = cfg.out / "runs" / f"{method}-seed{seed}-scale{format_float(scale)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_run(d: Path, kg, kg_p, record: PerturbationRecord, scorer) -> None:
    save_triples(kg_p, d / "perturbed.tsv")
    save_edits(kg, record, d / "edits.log")
    if scorer is not None:
        rep = metric_report(scorer, kg, kg_p)
    else:
        rep = MetricReport(float("nan"), sc2d(kg, kg_p), sd2(kg, kg_p))
    (d / "metrics.csv").write_text(f"{REPORT_HEADER}\n{rep.csv_row()}\n", encoding="utf-8")
    meta = {"method": record.method, "seed": record.seed, "scale": format_float(record.scale)}
    (d / "run.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


# -- commands ------------------------------------------------------------------
def cmd_generate(cfg: RunConfig) -> None:
    """Write a synthetic world (triples, interactions, QA tasks) into the output directory."""
    world = generate_synthetic_world(cfg.world)
    paths = save_world(world, cfg.out, cfg.world)
    log.info("world written: %s", ", ".join(str(p) for p in paths.values()))


def cmd_train_scorer(cfg: RunConfig) -> None:
    """Train the triple scorer on the original graph."""
    kg = load_graph(cfg)
    s = train_scorer(kg, cfg.scorer)
    save_scorer(s, cfg.out / "scorer.txt")
    log.info("scorer trained: self-ATS %s", format_float(ats(s, kg)))


def cmd_train_downstream(cfg: RunConfig) -> None:
    """Train and freeze the downstream models (recommender with its no-KG twin, and QA)."""
    kg = load_graph(cfg)
    task = cfg.downstream["task"]
    if task == "recommender":
        inter = load_interactions(_require(cfg.input_path("interactions", "interactions.csv")), kg)
        m = train_recommender(kg, inter, cfg.recommender)
        base_cfg = type(cfg.recommender)(**{**cfg.recommender.__dict__, "hops": 0})
        base = train_recommender(kg, inter, base_cfg)
        save_recommender(m, cfg.out / "recommender.txt")
        save_recommender(base, cfg.out / "recommender_l0.txt")
        log.info("recommender dev AUC %s (no-KG %s)", format_float(eval_auc(m, kg, inter, "dev")),
                 format_float(eval_auc(base, kg, inter, "dev")))
    tasks_path = cfg.input_path("qa_tasks", "qa_tasks.txt")
    if task == "qa" or tasks_path.exists():
        split = qa_split(load_tasks(_require(tasks_path)))
        q = train_qa(kg, split["train"], cfg.qa)
        save_qa(q, cfg.out / "qa.txt")
        log.info("QA test accuracy %s", format_float(eval_qa(q, kg, split["test"])[0]))


def cmd_perturb(cfg: RunConfig) -> None:
    """Apply one perturbation method at one scale; write the perturbed TSV, edit log and metrics."""
    kg = load_graph(cfg)
    method, scale = cfg.perturb["method"], float(cfg.perturb["scale"])
    needs_scorer = method in ("RR", "RL-RR", "RL-ER")
    scorer = load_scorer_ckpt(cfg) if needs_scorer or (cfg.out / "scorer.txt").exists() else None
    d = _run_dir(cfg, method, cfg.seed, scale)
    if method.startswith("RL-"):
        rl_cfg = _rl_cfg(cfg, scale)
        policy = load_policy(_require(d / "policy.txt"))
        kg_p, record = greedy_rollout(policy, make_env(kg, None, scorer, method, rl_cfg), rl_cfg)
    else:
        kg_p, record = perturb_scale(kg, method, scale, scorer=scorer, seed=cfg.seed,
                                     head_only=bool(cfg.perturb["head_only"]))
    _write_run(d, kg, kg_p, record, scorer)
    log.info("%s at scale %s: %d edits, %d skipped -> %s", method, format_float(scale), len(record.edits),
             record.skipped, d)


def _rl_cfg(cfg: RunConfig, scale: float | None = None):
    if scale is None:
        return cfg.rl
    return type(cfg.rl)(**{**cfg.rl.__dict__, "scale": scale})


def cmd_rl_train(cfg: RunConfig) -> None:
    """Train an RL-RR or RL-ER policy and write its checkpoint, reward curve and perturbed graph."""
    kg = load_graph(cfg)
    scorer = load_scorer_ckpt(cfg)
    ds = Downstream(cfg, kg)
    variant = cfg.rl_run["variant"]
    res = train_policy(kg, ds.evaluator, scorer, variant, cfg.rl)
    d = _run_dir(cfg, variant, cfg.rl.seed, cfg.rl.scale)
    save_policy(res.policy, d / "policy.txt")
    write_reward_curve(res.curve, d / "reward_curve.csv")
    # evaluate from the saved checkpoint so reruns from disk reproduce the graph exactly
    policy = load_policy(d / "policy.txt")
    env = make_env(kg, None, scorer, variant, cfg.rl)
    kg_p, record = greedy_rollout(policy, env, cfg.rl)
    _write_run(d, kg, kg_p, record, scorer)
    losses = np.asarray(res.losses)
    log.info("%s trained: %d updates, final loss %s, downstream %s", variant, res.policy.n_updates,
             format_float(float(losses[-1]) if len(losses) else float("nan")), format_float(ds.score(kg_p)))


def _read_curve(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_curve(cfg: RunConfig) -> None:
    """Sweep methods over scales and seeds; resumable CSV plus an SVG chart."""
    kg = load_graph(cfg)
    scorer = load_scorer_ckpt(cfg)
    ds = Downstream(cfg, kg)
    path = cfg.out / "curve.csv"
    rows = _read_curve(path)
    done = {(r["method"], int(r["seed"]), r["scale"]) for r in rows}
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_file:
            w.writerow(CURVE_COLUMNS)
        for method in cfg.curve["methods"]:
            for seed in cfg.curve["seeds"]:
                for scale in cfg.curve["scales"]:
                    key = (method, int(seed), format_float(scale))
                    if key in done:
                        continue
                    if method.startswith("RL-"):
                        rl_cfg = type(cfg.rl)(**{**cfg.rl.__dict__, "scale": float(scale), "seed": int(seed)})
                        kg_p = train_policy(kg, ds.evaluator, scorer, method, rl_cfg).kg
                    else:
                        kg_p, _ = perturb_scale(kg, method, float(scale), scorer=scorer, seed=int(seed))
                    rep = metric_report(scorer, kg, kg_p)
                    row = [method, int(seed), format_float(scale), format_float(rep.ats), format_float(rep.sc2d),
                           format_float(rep.sd2), format_float(ds.score(kg_p))]
                    w.writerow(row)
                    fh.flush()
                    rows.append(dict(zip(CURVE_COLUMNS, [str(x) for x in row])))
                    log.info("curve point %s", ",".join(str(x) for x in row))
    (cfg.out / "curve.svg").write_text(curve_svg(rows), encoding="utf-8")


def cmd_report(cfg: RunConfig) -> None:
    """Summarise completed runs into a method-by-metric table."""
    runs_dir = cfg.out / "runs"
    run_dirs = sorted(p.parent for p in runs_dir.glob("*/run.json")) if runs_dir.exists() else []
    run_dirs = [d for d in run_dirs if (d / "perturbed.tsv").exists() and (d / "metrics.csv").exists()]
    if not run_dirs:
        raise CliError(f"no completed runs under {runs_dir}")
    kg = load_graph(cfg)
    scorer = load_scorer_ckpt(cfg)
    ds = Downstream(cfg, kg)
    per_method: dict[str, list] = {}
    for d in run_dirs:
        meta = json.loads((d / "run.json").read_text(encoding="utf-8"))
        kg_p = load_triples(d / "perturbed.tsv", reference=kg)
        values = (d / "metrics.csv").read_text(encoding="utf-8").splitlines()[1].split(",")
        per_method.setdefault(meta["method"], []).append(
            [ds.score(kg_p), float(values[0]), float(values[1]), float(values[2])])
    table = {"w/o KG": [ds.without_kg(), None, None, None],
             "w/ KG": [ds.score(kg), ats(scorer, kg), 1.0, 1.0]}
    for method, vals in per_method.items():
        table[method] = list(np.mean(np.array(vals), axis=0))
    rows = [[name] + table[name] for name in REPORT_ROWS if name in table]

    def cell(v):
        return "" if v is None else format_float(float(v))

    with open(cfg.out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [cell(v) for v in r[1:]])
    widths = [8] + [12] * 4
    lines = ["".join(h.ljust(wd) for h, wd in zip(REPORT_COLUMNS, widths)).rstrip()]
    for r in rows:
        cells = [r[0]] + [("-" if v is None else f"{float(v):.4f}") for v in r[1:]]
        lines.append("".join(c.ljust(wd) for c, wd in zip(cells, widths)).rstrip())
    (cfg.out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


COMMANDS = {
    "generate": cmd_generate,
    "train_scorer": cmd_train_scorer,
    "train_downstream": cmd_train_downstream,
    "perturb": cmd_perturb,
    "curve": cmd_curve,
    "rl_train": cmd_rl_train,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    parser = argparse.ArgumentParser(prog="kgperturb", description="Knowledge-graph perturbation audits")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        _write_config(cfg, args.command)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handler = logging.FileHandler(cfg.out / f"{args.command}.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        COMMANDS[args.command](cfg)
    except (CliError, KGError, ScorerError, OSError, ValueError, ArithmeticError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
