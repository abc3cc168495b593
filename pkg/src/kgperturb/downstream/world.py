"""Synthetic desk-scale world: a genre-structured KG, user-item interactions
and multiple-choice QA tasks whose answers follow relation paths."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..kg import KnowledgeGraph, Vocabulary, format_triples, parse_triples

SPLITS = ("train", "dev", "test")


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    n_entities: int = 100
    n_relations: int = 4
    n_triples: int = 400
    n_users: int = 50
    n_items: int = 60
    n_interactions: int = 500
    n_qa: int = 100
    k: int = 4
    genre_signal: float = 0.9
    split: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        sizes = (self.n_entities, self.n_relations, self.n_triples, self.n_users, self.n_items,
                 self.n_interactions, self.n_qa)
        if any(s <= 0 for s in sizes):
            raise WorldError("world sizes must be positive")
        if self.k < 2 or self.n_items < self.k:
            raise WorldError("need k >= 2 and n_items >= k")
        if self.n_items > self.n_entities:
            raise WorldError("items must be a subset of entities")
        if self.n_interactions > self.n_users * self.n_items:
            raise WorldError("more interactions than user-item pairs")
        if self.n_triples < self.n_entities:
            raise WorldError("need at least one triple per entity")
        if not 0.0 <= self.genre_signal <= 1.0:
            raise WorldError("genre_signal must lie in [0, 1]")


@dataclass
class Interactions:
    """Observed (user, item, label) triples with a split tag per row."""

    n_users: int
    items: list[int]
    user: np.ndarray
    item: np.ndarray
    label: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.user = np.asarray(self.user, dtype=np.int64)
        self.item = np.asarray(self.item, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.split == split
        return self.user[m], self.item[m], self.label[m]

    def with_train_fraction(self, fraction: float, seed: int = 0) -> Interactions:
        """Cold-start view: keep only ``fraction`` of the training rows."""
        rng = np.random.default_rng(seed)
        train_idx = np.flatnonzero(self.split == "train")
        keep_n = int(round(fraction * len(train_idx)))
        drop = set(rng.permutation(train_idx)[keep_n:].tolist())
        keep = np.array([i not in drop for i in range(len(self.user))], dtype=bool)
        return Interactions(self.n_users, list(self.items), self.user[keep], self.item[keep],
                            self.label[keep], self.split[keep])

    def __len__(self) -> int:
        return len(self.user)


@dataclass
class QaTask:
    question: tuple[int, ...]
    answers: tuple[tuple[int, ...], ...]
    correct: int

    def __post_init__(self):
        if not 0 <= self.correct < len(self.answers):
            raise WorldError("correct index out of range")


@dataclass
class World:
    kg: KnowledgeGraph
    interactions: Interactions
    tasks: list[QaTask]
    genre: dict[int, int] = field(default_factory=dict)


def qa_split(tasks: list[QaTask], fractions=(0.6, 0.2, 0.2)) -> dict[str, list[QaTask]]:
    """Positional train/dev/test split used everywhere tasks are consumed."""
    n = len(tasks)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return {"train": tasks[:a], "dev": tasks[a:b], "test": tasks[b:]}


def _raw_paths(adj, q, a):
    """Relation sequences of undirected paths of length <= 2 from q to a."""
    out = []
    for r1, m in adj[q]:
        if m == a:
            out.append((r1,))
        elif m != q:
            for r2, x in adj[m]:
                if x == a:
                    out.append((r1, r2))
    return out


def generate_synthetic_world(spec: WorldSpec = WorldSpec()) -> World:
    """Build a world where the KG's relations carry the task signal.

    Entities are split into latent genres (one per relation). With probability
    ``genre_signal`` an edge links two same-genre entities under that genre's
    relation, otherwise it is uniform noise. Users like one genre. A QA answer is
    reachable from the question entity through a path whose relations agree,
    while every distractor is reachable only through mixed-relation paths.
    """
    rng = np.random.default_rng(spec.seed)
    G = spec.n_relations
    n_e, n_i = spec.n_entities, spec.n_items
    labels = [f"item{i:03d}" for i in range(n_i)] + [f"attr{i:03d}" for i in range(n_e - n_i)]
    genre = rng.permutation(np.arange(n_e) % G)
    members = [np.flatnonzero(genre == g) for g in range(G)]
    s = spec.genre_signal

    triples: set[tuple[int, int, int]] = set()

    def draw_edge(h=None):
        while True:
            if rng.random() < s:
                g = int(genre[h]) if h is not None else int(rng.integers(G))
                pool = members[g]
                if len(pool) < 2:
                    continue
                a = h if h is not None else int(rng.choice(pool))
                b = int(rng.choice(pool))
                r = g
            else:
                a = h if h is not None else int(rng.integers(n_e))
                b = int(rng.integers(n_e))
                r = int(rng.integers(G))
            if a == b:
                continue
            tr = (a, r, b) if rng.random() < 0.5 else (b, r, a)
            if tr not in triples:
                return tr

    for e in rng.permutation(n_e):
        triples.add(draw_edge(int(e)))
    while len(triples) < spec.n_triples:
        triples.add(draw_edge())

    raw = KnowledgeGraph(Vocabulary(labels), Vocabulary(f"rel{r}" for r in range(G)), sorted(triples))
    kg = parse_triples(format_triples(raw).splitlines())
    remap = np.array([kg.entity_id(lab) for lab in labels])
    genre_by_id = {int(remap[e]): int(genre[e]) for e in range(n_e)}
    items = [int(remap[i]) for i in range(n_i)]

    # interactions
    pref = rng.integers(G, size=spec.n_users)
    flat = rng.choice(spec.n_users * n_i, size=spec.n_interactions, replace=False)
    users, item_idx = flat // n_i, flat % n_i
    match = genre[item_idx] == pref[users]
    informative = rng.random(spec.n_interactions) < s
    noise = rng.random(spec.n_interactions) < 0.5
    label = np.where(informative, match, noise).astype(np.int64)
    n_tr = int(round(spec.split[0] * spec.n_interactions))
    n_dv = int(round(spec.split[1] * spec.n_interactions))
    split = np.array(["train"] * n_tr + ["dev"] * n_dv + ["test"] * (spec.n_interactions - n_tr - n_dv),
                     dtype=object)
    interactions = Interactions(spec.n_users, items, users, remap[item_idx], label, split)

    tasks = _generate_tasks(kg, spec, rng)
    return World(kg=kg, interactions=interactions, tasks=tasks, genre=genre_by_id)


def _generate_tasks(kg: KnowledgeGraph, spec: WorldSpec, rng: np.random.Generator) -> list[QaTask]:
    adj = {e: kg.incident(e) for e in range(kg.n_entities)}
    correct_slots = rng.permutation(np.arange(spec.n_qa) % spec.k)
    tasks: list[QaTask] = []
    attempts = 0
    while len(tasks) < spec.n_qa:
        attempts += 1
        if attempts > 200 * spec.n_qa:
            raise WorldError("could not generate enough QA tasks; KG too sparse")
        q = int(rng.integers(kg.n_entities))
        reach = {m for _, m in adj[q]} | {x for _, m in adj[q] for _, x in adj[m]}
        reach.discard(q)
        direct = {m for _, m in adj[q]}
        good, bad = [], []
        for a in sorted(reach):
            paths = _raw_paths(adj, q, a)
            if any(len(p) == 1 or p[0] == p[1] for p in paths):
                good.append(a)
            elif a not in direct:
                bad.append(a)
        if not good or len(bad) < spec.k - 1:
            continue
        answer = int(rng.choice(good))
        distractors = [int(x) for x in rng.choice(bad, size=spec.k - 1, replace=False)]
        slot = int(correct_slots[len(tasks)])
        cands = distractors[:slot] + [answer] + distractors[slot:]
        tasks.append(QaTask(question=(q,), answers=tuple((c,) for c in cands), correct=slot))
    return tasks


def save_interactions(inter: Interactions, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "label", "split"])
        for u, i, y, s in zip(inter.user, inter.item, inter.label, inter.split):
            w.writerow([int(u), int(i), int(y), s])


def load_interactions(path, kg: KnowledgeGraph | None = None) -> Interactions:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0].keys()) != ["user", "item", "label", "split"]:
        raise WorldError(f"{path}: expected header user,item,label,split")
    user = np.array([int(r["user"]) for r in rows])
    item = np.array([int(r["item"]) for r in rows])
    label = np.array([int(r["label"]) for r in rows])
    split = np.array([r["split"] for r in rows], dtype=object)
    if not set(split) <= set(SPLITS):
        raise WorldError(f"{path}: unknown split tag")
    if not set(np.unique(label).tolist()) <= {0, 1}:
        raise WorldError(f"{path}: labels must be 0/1")
    if kg is not None and (item.min() < 0 or item.max() >= kg.n_entities):
        raise WorldError(f"{path}: item id outside the KG vocabulary")
    return Interactions(int(user.max()) + 1, sorted(set(item.tolist())), user, item, label, split)


def save_tasks(tasks: list[QaTask], path) -> None:
    def ents(xs):
        return ",".join(str(x) for x in xs)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tasks:
            fh.write("|".join([ents(t.question)] + [ents(a) for a in t.answers] + [str(t.correct)]) + "\n")


def load_tasks(path) -> list[QaTask]:
    tasks = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("|")
        if len(fields) < 4:
            raise WorldError(f"{path}: line {lineno}: need question, >= 2 answers and an index")
        parse = lambda f: tuple(int(x) for x in f.split(",") if x)
        tasks.append(QaTask(parse(fields[0]), tuple(parse(f) for f in fields[1:-1]), int(fields[-1])))
    return tasks


def save_world(world: World, directory, spec: WorldSpec | None = None) -> dict[str, Path]:
    import json

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"triples": d / "triples.tsv", "interactions": d / "interactions.csv", "qa_tasks": d / "qa_tasks.txt"}
    (paths["triples"]).write_text(format_triples(world.kg), encoding="utf-8")
    save_interactions(world.interactions, paths["interactions"])
    save_tasks(world.tasks, paths["qa_tasks"])
    if spec is not None:
        (d / "world.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
