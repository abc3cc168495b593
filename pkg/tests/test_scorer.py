import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgperturb.nn import ParamBlock, finite_diff_check
from kgperturb.scorer import (
    NoLegalSubaction,
    ScorerError,
    ScorerParams,
    ScorerTrainConfig,
    argmin_relation,
    corrupt,
    init_params,
    k_lowest_score_candidates,
    load_scorer,
    logistic_loss_and_grads,
    save_scorer,
    score_triple,
    train_scorer,
)


def hand_scorer(ent, rel):
    return ScorerParams(np.array(ent, float), np.array(rel, float))


@pytest.mark.parametrize("h, r, t, expected", [
    ([1, 0], [2, 1], [1, 0], 0.880797),
    ([1, 0], [0, 0], [1, 0], 0.5),
    ([1, 1], [1, 1], [-1, -1], 0.119203),
])
def test_score_triple_hand_values(h, r, t, expected):
    s = hand_scorer([h, t], [r])
    # oracle: direct evaluation of the logistic of the bilinear form
    oracle = 1.0 / (1.0 + np.exp(-np.sum(np.array(h) * np.array(r) * np.array(t))))
    assert score_triple(s, 0, 0, 1) == pytest.approx(oracle, abs=1e-12)
    assert score_triple(s, 0, 0, 1) == pytest.approx(expected, abs=1e-6)


def test_score_out_of_bounds():
    s = hand_scorer([[1, 0]], [[1, 1]])
    with pytest.raises(IndexError):
        score_triple(s, 0, 3, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.1, 30))
def test_score_strictly_inside_unit_interval_and_symmetric(seed, scale):
    rng = np.random.default_rng(seed)
    ent = rng.normal(scale=scale, size=(2, 3))
    rel = rng.normal(scale=scale, size=(1, 3))
    s = hand_scorer(ent, rel)
    v = score_triple(s, 0, 0, 1)
    assert 0.0 < v < 1.0 or abs(np.sum(ent[0] * rel[0] * ent[1])) > 36
    swapped = hand_scorer(ent[::-1], rel)
    assert score_triple(swapped, 0, 0, 1) == pytest.approx(v, rel=1e-14)


def test_argmin_relation():
    s = hand_scorer([[1.0], [1.0]], [[np.log(9.0)], [np.log(0.25)]])
    assert score_triple(s, 0, 0, 1) == pytest.approx(0.9)
    assert score_triple(s, 0, 1, 1) == pytest.approx(0.2)
    assert argmin_relation(s, 0, 1) == 1
    same = hand_scorer([[1.0], [1.0]], [[0.3], [0.3], [0.3]])
    assert argmin_relation(same, 0, 1) == 0
    single = hand_scorer([[1.0], [1.0]], [[-5.0]])
    assert argmin_relation(single, 0, 1) == 0


def test_argmin_is_exhaustive_minimum():
    rng = np.random.default_rng(4)
    s = hand_scorer(rng.normal(size=(5, 4)), rng.normal(size=(6, 4)))
    for h in range(5):
        for t in range(5):
            best = argmin_relation(s, h, t)
            assert all(score_triple(s, h, best, t) <= score_triple(s, h, r, t) for r in range(6))


def test_k_lowest():
    logits = np.log(np.array([0.9, 0.2, 0.5]) / (1 - np.array([0.9, 0.2, 0.5])))
    s = hand_scorer([[1.0], [1.0]], logits[:, None])
    assert k_lowest_score_candidates(s, [0, 1, 2], ("relation", 0, 1), 2) == [1, 2]
    assert k_lowest_score_candidates(s, [0, 1, 2], ("relation", 0, 1), 10) == [1, 2, 0]
    flat = hand_scorer(np.ones((4, 1)), np.ones((1, 1)))
    assert k_lowest_score_candidates(flat, [3, 1, 2], ("tail", 0, 0), 2) == [1, 2]
    with pytest.raises(NoLegalSubaction):
        k_lowest_score_candidates(flat, [], ("tail", 0, 0), 2)


def test_training_separates_true_from_corrupted(tiny6):
    cfg = ScorerTrainConfig(dim=8, epochs=200, seed=7)
    s = train_scorer(tiny6, cfg)
    true = s.score_triples(tiny6.triples).mean()
    rng = np.random.default_rng(99)
    corrupted = corrupt(tiny6, np.asarray(tiny6.triples)[rng.integers(6, size=100)], 1, rng)
    assert true - s.score_triples(corrupted).mean() >= 0.2


def test_zero_lr_keeps_initialisation(tiny6):
    s = train_scorer(tiny6, ScorerTrainConfig(dim=4, epochs=1, lr=0.0, seed=3))
    assert s == init_params(6, 2, 4, 3)


def test_training_deterministic(tiny6):
    cfg = ScorerTrainConfig(dim=6, epochs=30, seed=11)
    a, b = train_scorer(tiny6, cfg), train_scorer(tiny6, cfg)
    assert a.entity_emb.tobytes() == b.entity_emb.tobytes()
    assert a.relation_emb.tobytes() == b.relation_emb.tobytes()


def test_training_rejects_empty(tiny6):
    with pytest.raises(ScorerError):
        train_scorer(tiny6.with_triples([]))


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    ent = ParamBlock("e", rng.normal(size=(4, d)))
    rel = ParamBlock("r", rng.normal(size=(2, d)))
    pos = np.column_stack([rng.integers(4, size=3), rng.integers(2, size=3), rng.integers(4, size=3)])
    neg = np.column_stack([rng.integers(4, size=2), rng.integers(2, size=2), rng.integers(4, size=2)])

    def loss():
        return logistic_loss_and_grads(ScorerParams(ent.value, rel.value), pos, neg)[0]

    _, ent.grad[...], rel.grad[...] = logistic_loss_and_grads(ScorerParams(ent.value, rel.value), pos, neg)
    res = finite_diff_check(loss, [ent, rel], rng=rng)
    assert res.passed, res


def test_checkpoint_round_trip(tmp_path, tiny6):
    s = train_scorer(tiny6, ScorerTrainConfig(dim=4, epochs=10, seed=1))
    save_scorer(s, tmp_path / "a.ckpt")
    text = (tmp_path / "a.ckpt").read_text()
    assert text.splitlines()[0] == "kgperturb-scorer v1 d=4"
    loaded = load_scorer(tmp_path / "a.ckpt")
    save_scorer(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "b.ckpt").read_bytes() == (tmp_path / "a.ckpt").read_bytes()
    assert loaded.entity_emb.shape == (6, 4) and loaded.relation_emb.shape == (2, 4)
