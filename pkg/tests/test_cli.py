import csv
import hashlib
import json
import shutil
import xml.etree.ElementTree as ET

import pytest

from kgperturb.cli import CURVE_COLUMNS, REPORT_COLUMNS, main
from kgperturb.downstream.qa import load_qa, save_qa
from kgperturb.downstream.recommender import load_recommender, save_recommender
from kgperturb.kg import load_triples, relation_histogram
from kgperturb.metrics import ats
from kgperturb.nn import format_float
from kgperturb.perturb import n_touches
from kgperturb.rl.policy import load_policy, save_policy
from kgperturb.scorer import load_scorer, save_scorer

SVG_NS = "{http://www.w3.org/2000/svg}"

BASE = {
    "world": {"n_entities": 40, "n_relations": 3, "n_triples": 100, "n_users": 15, "n_items": 25,
              "n_interactions": 200, "n_qa": 30, "k": 3},
    "scorer": {"epochs": 100},
    "recommender": {"epochs": 20},
    "qa": {"epochs": 20},
    "rl": {"episodes": 2, "T": 5, "batch_size": 8, "history_window": 8, "hidden": 8, "width": 8},
    "curve": {"methods": ["RR"], "scales": [0, 0.5, 1.0], "seeds": [0]},
}


def write_config(path, **sections):
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in BASE.items()}
    for name, val in sections.items():
        doc[name] = {**doc.get(name, {}), **val}
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def run(cmd, out, cfg, seed=3):
    return main([cmd, "--config", cfg, "--out", str(out), "--seed", str(seed)])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "base.json")
    out = root / "out"
    for cmd in ("generate", "train_scorer", "train_downstream"):
        assert run(cmd, out, cfg) == 0
    return root, out, cfg


@pytest.fixture
def fresh(world, tmp_path):
    """A private copy of the trained workspace."""
    _, out, cfg = world
    dst = tmp_path / "out"
    shutil.copytree(out, dst)
    return dst, cfg


# -- configuration -------------------------------------------------------------
def test_unknown_key_rejected(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"scorer": {"epochz": 3}}), encoding="utf-8")
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "epochz" in capsys.readouterr().err
    p.write_text(json.dumps({"nonsense": 1}), encoding="utf-8")
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_resolved_config_written(world):
    _, out, _ = world
    for cmd in ("generate", "train_scorer", "train_downstream"):
        doc = json.loads((out / f"{cmd}.config.json").read_text())
        assert doc["seed"] == 3
        assert doc["scorer"]["seed"] == 3  # module seeds inherit the global seed
        assert doc["scorer"]["epochs"] == 100
        assert doc["world"]["n_triples"] == 100


def test_missing_triples_names_path(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "empty"
    assert run("train_scorer", out, cfg) != 0
    assert str(out / "triples.tsv") in capsys.readouterr().err


# -- training ------------------------------------------------------------------
@pytest.mark.parametrize("name,load,save", [
    ("scorer.txt", load_scorer, save_scorer),
    ("recommender.txt", load_recommender, save_recommender),
    ("recommender_l0.txt", load_recommender, save_recommender),
    ("qa.txt", load_qa, save_qa),
])
def test_checkpoints_reload_bitwise(world, tmp_path, name, load, save):
    _, out, _ = world
    save(load(out / name), tmp_path / name)
    assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_training_rerun_identical(fresh):
    out, cfg = fresh
    before = {n: digest(out / n) for n in ("scorer.txt", "recommender.txt", "recommender_l0.txt", "qa.txt")}
    for cmd in ("train_scorer", "train_downstream"):
        assert run(cmd, out, cfg) == 0
    assert {n: digest(out / n) for n in before} == before


# -- perturb -------------------------------------------------------------------
def test_perturb_ed_full_scale_empties_graph(fresh, tmp_path):
    out, _ = fresh
    cfg = write_config(tmp_path / "ed.json", perturb={"method": "ED", "scale": 1.0})
    assert run("perturb", out, cfg) == 0
    d = out / "runs" / f"ED-seed3-scale{format_float(1.0)}"
    assert (d / "perturbed.tsv").read_text() == ""
    lines = (d / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0] == "ats,sc2d,sd2,b"


def test_perturb_rs_keeps_histogram_and_is_deterministic(fresh, tmp_path):
    out, _ = fresh
    cfg = write_config(tmp_path / "rs.json", perturb={"method": "RS", "scale": 1.0})
    triples_hash = digest(out / "triples.tsv")
    assert run("perturb", out, cfg) == 0
    d = out / "runs" / f"RS-seed3-scale{format_float(1.0)}"
    kg = load_triples(out / "triples.tsv")
    kg_p = load_triples(d / "perturbed.tsv", reference=kg)
    assert relation_histogram(kg_p) == relation_histogram(kg)
    first = {n: (d / n).read_bytes() for n in ("perturbed.tsv", "edits.log", "metrics.csv")}
    assert run("perturb", out, cfg) == 0
    assert {n: (d / n).read_bytes() for n in first} == first
    assert digest(out / "triples.tsv") == triples_hash


def test_perturb_rr_without_scorer_fails(tmp_path):
    cfg = write_config(tmp_path / "rr.json", perturb={"method": "RR", "scale": 0.5})
    out = tmp_path / "o"
    assert run("generate", out, cfg) == 0
    assert run("perturb", out, cfg) != 0


# -- curve ---------------------------------------------------------------------
def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_curve_rows_and_identity_point(fresh):
    out, cfg = fresh
    assert run("curve", out, cfg) == 0
    lines = (out / "curve.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 4
    rows = read_rows(out / "curve.csv")
    zero = rows[0]
    kg = load_triples(out / "triples.tsv")
    assert float(zero["scale"]) == 0.0
    assert zero["ats"] == format_float(ats(load_scorer(out / "scorer.txt"), kg))
    assert float(zero["sc2d"]) == 1.0 and float(zero["sd2"]) == 1.0


def test_curve_svg_structure(fresh, tmp_path):
    out, _ = fresh
    cfg = write_config(tmp_path / "c.json", curve={"methods": ["RS", "ED"], "scales": [0, 1.0], "seeds": [0, 1]})
    assert run("curve", out, cfg) == 0
    rows = read_rows(out / "curve.csv")
    assert len(rows) == 2 * 2 * 2
    root = ET.parse(out / "curve.svg").getroot()
    methods = {r["method"] for r in rows}
    panels = root.findall(f"{SVG_NS}g[@class='panel']")
    assert len(panels) == 4
    for g in panels:
        series = g.findall(f"{SVG_NS}polyline[@class='series']")
        assert {s.get("data-method") for s in series} == methods
    assert "href" not in (out / "curve.svg").read_text()


def test_curve_resume_skips_completed(fresh, tmp_path):
    out, cfg = fresh
    assert run("curve", out, cfg) == 0
    full = (out / "curve.csv").read_text()
    lines = full.splitlines(keepends=True)
    # drop the last point, as if the run had been interrupted
    (out / "curve.csv").write_text("".join(lines[:-1]))
    assert run("curve", out, cfg) == 0
    assert (out / "curve.csv").read_text() == full
    assert "curve point" in (out / "curve.log").read_text()
    assert (out / "curve.log").read_text().count("curve point") == 1
    assert run("curve", out, cfg) == 0
    assert (out / "curve.csv").read_text() == full


# -- rl_train ------------------------------------------------------------------
def test_rl_train_smoke_and_replay(fresh):
    out, cfg = fresh
    assert run("rl_train", out, cfg) == 0
    d = out / "runs" / f"RL-RR-seed3-scale{format_float(1.0)}"
    for name in ("policy.txt", "reward_curve.csv", "perturbed.tsv", "edits.log", "metrics.csv", "run.json"):
        assert (d / name).exists(), name
    assert "nan" not in (out / "rl_train.log").read_text()
    steps = BASE["rl"]["episodes"] * n_touches(1.0, 100)
    curve = (d / "reward_curve.csv").read_text().splitlines()
    assert curve[0] == "step,raw_reward,scaled_reward,task_statistic"
    assert len(curve) - 1 == steps // BASE["rl"]["T"]
    assert tmp_bytes_roundtrip(d / "policy.txt")
    # eval-mode rerun from the checkpoint reproduces the perturbed graph
    tsv = (d / "perturbed.tsv").read_bytes()
    (d / "perturbed.tsv").unlink()
    pcfg = write_config(out / "p.json", perturb={"method": "RL-RR", "scale": 1.0})
    assert run("perturb", out, pcfg) == 0
    assert (d / "perturbed.tsv").read_bytes() == tsv


def tmp_bytes_roundtrip(path):
    copy = path.with_suffix(".copy")
    save_policy(load_policy(path), copy)
    same = copy.read_bytes() == path.read_bytes()
    copy.unlink()
    return same


def test_rl_train_without_policy_perturb_fails(fresh, tmp_path):
    out, _ = fresh
    cfg = write_config(tmp_path / "p.json", perturb={"method": "RL-ER", "scale": 1.0})
    assert run("perturb", out, cfg) != 0


# -- report --------------------------------------------------------------------
def test_report_table(fresh, tmp_path):
    out, _ = fresh
    for m in ("RS", "ED", "ER"):
        cfg = write_config(tmp_path / f"{m}.json", perturb={"method": m, "scale": 0.5})
        assert run("perturb", out, cfg) == 0
    assert run("report", out, cfg) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "method,downstream,ats,sc2d,sd2"
    assert lines[0].split(",") == REPORT_COLUMNS
    assert [ln.split(",")[0] for ln in lines[1:]] == ["w/o KG", "w/ KG", "RS", "ER", "ED"]
    assert lines[1].endswith(",,,")
    wkg = lines[2].split(",")
    assert wkg[3:] == [format_float(1.0), format_float(1.0)]
    txt = (out / "report.txt").read_text().splitlines()
    assert txt[0].split() == REPORT_COLUMNS
    assert len(txt) == 6


def test_report_empty_directory_fails(fresh, capsys):
    out, cfg = fresh
    assert run("report", out, cfg) != 0
    assert "no completed runs" in capsys.readouterr().err
