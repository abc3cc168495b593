import numpy as np
import pytest

from kgperturb.kg import n_hop_neighbors, parse_triples, relation_histogram, unlabeled_pairs
from kgperturb.perturb import (
    DeadEnd,
    PerturbError,
    edge_delete,
    edge_rewire,
    load_edits,
    perturb_scale,
    relation_replace,
    relation_swap,
    rewire_candidates,
    save_edits,
)
from kgperturb.scorer import ScorerParams, score_triple


def T(kg, h, r, t):
    return (kg.entity_id(h), kg.relation_id(r), kg.entity_id(t))


def test_relation_swap_example(tiny6):
    a, b = T(tiny6, "A", "r1", "B"), T(tiny6, "A", "r2", "D")
    out, (removed, added) = relation_swap(tiny6, np.random.default_rng(0), pool=[a, b])
    assert T(tiny6, "A", "r2", "B") in out and T(tiny6, "A", "r1", "D") in out
    assert relation_histogram(out) == relation_histogram(tiny6)
    assert set(removed) == {a, b}


def test_relation_swap_same_relation_is_identity(tiny6):
    pool = [T(tiny6, "A", "r1", "B"), T(tiny6, "B", "r1", "C")]
    out, edit = relation_swap(tiny6, np.random.default_rng(0), pool=pool)
    assert out == tiny6 and len(edit[0]) == 2


def test_relation_swap_needs_two(tiny6):
    with pytest.raises(PerturbError):
        relation_swap(tiny6.with_triples([tiny6.triples[0]]), np.random.default_rng(0))


def rr_scorer():
    # r2 scores lowest for every pair
    return ScorerParams(np.ones((6, 1)), np.array([[2.0], [-3.0]]))


def test_relation_replace_example(tiny6):
    s = rr_scorer()
    ab = T(tiny6, "A", "r1", "B")
    out, edit = relation_replace(tiny6, s, np.random.default_rng(0), pool=[ab])
    assert T(tiny6, "A", "r2", "B") in out and ab not in out
    assert score_triple(s, *edit[1][0]) <= score_triple(s, *edit[0][0])


def test_relation_replace_single_relation_identity():
    kg = parse_triples(["a\tr\tb", "b\tr\tc"])
    s = ScorerParams(np.ones((3, 1)), np.ones((1, 1)))
    out, edit = relation_replace(kg, s, np.random.default_rng(0))
    assert out == kg and edit[0] == edit[1]


def test_relation_replace_duplicate_dead_end():
    kg = parse_triples(["a\tr1\tb", "a\tr2\tb"])
    s = ScorerParams(np.ones((2, 1)), np.array([[2.0], [-3.0]]))
    with pytest.raises(DeadEnd):
        relation_replace(kg, s, np.random.default_rng(0), pool=[(0, 0, 1)])


def test_edge_rewire_candidates(tiny6):
    A = tiny6.entity_id("A")
    assert set(rewire_candidates(tiny6, A, tiny6.relation_id("r2"))) == {tiny6.entity_id("E"), tiny6.entity_id("F")}
    assert rewire_candidates(tiny6, A, tiny6.relation_id("r1")) == []
    out, edit = edge_rewire(tiny6, np.random.default_rng(0), pool=[T(tiny6, "A", "r2", "D")])
    assert edit[1][0] in {T(tiny6, "A", "r2", "E"), T(tiny6, "A", "r2", "F")}
    assert relation_histogram(out) == relation_histogram(tiny6)
    with pytest.raises(DeadEnd):
        edge_rewire(tiny6, np.random.default_rng(0), pool=[T(tiny6, "A", "r1", "B")])


def test_edge_delete(tiny6):
    rng = np.random.default_rng(0)
    kg = tiny6
    out, _ = edge_delete(kg, rng)
    assert len(out) == 5
    for _ in range(6):
        kg, _ = edge_delete(kg, rng)
    assert len(kg) == 0
    with pytest.raises(PerturbError):
        edge_delete(kg, rng)


def test_scale_examples(tiny6):
    kg, rec = perturb_scale(tiny6, "ED", 0.5, seed=1)
    assert len(kg) == 3 and len(rec.edits) == 3
    kg, rec = perturb_scale(tiny6, "RS", 0.0, seed=1)
    assert kg == tiny6 and rec.edits == []
    kg, rec = perturb_scale(tiny6, "RS", 1.0, seed=1)
    assert len(rec.edits) + rec.skipped == 3
    assert unlabeled_pairs(kg) == unlabeled_pairs(tiny6)
    with pytest.raises(ValueError):
        perturb_scale(tiny6, "RR", 0.5)


def test_swap_full_scale_touches_every_edge(tiny6):
    _, rec = perturb_scale(tiny6, "RS", 1.0, seed=5)
    touched = [tr for removed, _ in rec.edits for tr in removed]
    assert len(set(touched)) == 6


def test_scale_prefix_property(tiny6):
    s = rr_scorer()
    _, small = perturb_scale(tiny6, "RR", 0.5, scorer=s, seed=3)
    _, big = perturb_scale(tiny6, "RR", 1.0, scorer=s, seed=3)
    assert big.edits[:len(small.edits)] == small.edits


@pytest.mark.parametrize("method", ["RS", "RR", "ER", "ED"])
def test_edit_log_round_trip(tmp_path, tiny6, method):
    s = rr_scorer()
    kg, rec = perturb_scale(tiny6, method, 1.0, scorer=s, seed=2)
    save_edits(tiny6, rec, tmp_path / "e.log")
    assert (tmp_path / "e.log").read_text().startswith(f"kgperturb-edits v1 method={method} seed=2 scale=")
    back = load_edits(tiny6, tmp_path / "e.log")
    assert back.replay(tiny6).triple_set == kg.triple_set
    assert back.skipped == rec.skipped


def test_rewire_new_tail_not_neighbor(rng):
    from conftest import random_kg
    kg = random_kg(rng, 30, 3, 60)
    out, rec = perturb_scale(kg, "ER", 1.0, seed=4)
    cur = kg
    for removed, added in rec.edits:
        h = added[0][0]
        assert added[0][2] not in n_hop_neighbors(cur, h, 1)
        from kgperturb.kg import apply_edits
        cur = apply_edits(cur, removed, added)
    assert cur == out
