import numpy as np
import pytest
from scipy import stats

from layermask import nn
from layermask.attack import AttackError, build_attack_dataset, materialize_attacker_view, mc_attack
from layermask.config import RunConfig
from layermask.data import aux_indices, vertical_split
from layermask.framework import run
from layermask.selection import estimate_leakage
from layermask.sharing import ShareDomain, share


@pytest.fixture(scope="module")
def passive_block(digits):
    x = np.vstack([vertical_split(digits.x_train, 2)[0], vertical_split(digits.x_test, 2)[0]])
    return x, np.concatenate([digits.y_train, digits.y_test])


def test_known_label_count(passive_block):
    x, y = passive_block
    ds = build_attack_dataset(x, y, 4, np.random.default_rng(0))
    assert len(ds.y_train) == 40
    assert np.array_equal(np.bincount(ds.y_train), [4] * 10)
    assert len(ds.y_test) == len(y) - 40


def test_zero_known_labels_rejected(passive_block):
    x, y = passive_block
    with pytest.raises(AttackError):
        build_attack_dataset(x, y, 0, np.random.default_rng(0))
    with pytest.raises(AttackError):
        build_attack_dataset(x[:12], np.arange(12) % 3, 4, np.random.default_rng(0))


def test_split_is_deterministic(passive_block):
    x, y = passive_block
    a = build_attack_dataset(x, y, 4, np.random.default_rng(9), eval_fraction=0.5)
    b = build_attack_dataset(x, y, 4, np.random.default_rng(9), eval_fraction=0.5)
    assert np.array_equal(a.x_train, b.x_train) and np.array_equal(a.y_test, b.y_test)
    assert len(a.y_test) == round(0.5 * (len(y) - 40))


def test_zero_epochs_scores_zero(passive_block):
    x, y = passive_block
    rng = np.random.default_rng(0)
    ds = build_attack_dataset(x, y, 4, rng)
    res = mc_attack(ds, nn.init_mlp([32, 64, 32, 16], rng), 0, 0.1, rng)
    assert res.best == 0.0 and res.per_epoch == []


def test_random_bottom_is_near_chance(passive_block):
    x, y = passive_block
    accs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ds = build_attack_dataset(x, y, 4, rng)
        accs.append(mc_attack(ds, nn.init_mlp([32, 64, 32, 16], rng), 50, 0.1, rng).best)
    assert abs(np.mean(accs) - 0.1) <= 0.1


def test_refuses_masked_models(rng):
    m = nn.init_mlp([4, 3], rng)
    m.layers[0].masked = True
    ds = build_attack_dataset(rng.normal(size=(20, 4)), np.arange(20) % 2, 2, rng)
    with pytest.raises(AttackError):
        mc_attack(ds, m, 5, 0.1, rng)


def test_trained_shadow_leaks(digits):
    x, y = vertical_split(digits.x_train, 2)[0], digits.y_train
    rng = np.random.default_rng(0)
    ids = aux_indices(y, 0.05, rng, min_per_class=5)
    xa, ya = x[ids], y[ids]
    bottom, head = nn.init_mlp([32, 64, 32, 16], rng), nn.init_mlp([16, 16, 10], rng, nn.TOP)
    acc = 0.0
    while acc < 0.95:
        z, cb = nn.model_forward(bottom, xa)
        logits, ch = nn.model_forward(head, z)
        _, g = nn.softmax_ce(logits, ya)
        gh, gz = nn.model_backward(head, ch, g)
        gb, _ = nn.model_backward(bottom, cb, gz)
        nn.sgd_step(head, gh, 0.1)
        nn.sgd_step(bottom, gb, 0.1)
        acc = nn.accuracy(nn.predict(head, nn.predict(bottom, xa)), ya)
    ds = build_attack_dataset(xa, ya, 4, rng)
    assert estimate_leakage(bottom, ds, 20, 0.1, rng) >= 0.5


def test_vanilla_bottom_beats_random_bottom(digits):
    res = run(RunConfig(mode="vanilla", epochs=10, seed=3), write=False, dataset=digits)
    assert res.summary["attack_final"] >= res.summary["scratch_attack"] + 0.15


def test_view_of_plain_model_is_identical_copy(rng):
    m = nn.init_mlp([4, 5, 3], rng)
    v = materialize_attacker_view(m)
    assert all(a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()
               for a, b in zip(m.layers, v.layers))
    assert v.layers[0].weight is not m.layers[0].weight


def test_ring_share_view_decorrelated_from_weights():
    dom = ShareDomain.ring()
    rng = np.random.default_rng(0)
    theta = nn.init_linear(32, 64, rng).weight
    corrs = []
    for _ in range(200):
        seen = materialize_attacker_view(
            nn.MLP([nn.Linear(share(theta, dom, rng).share_a, np.zeros(64, dtype=np.uint64), True)]), dom)
        corrs.append(np.corrcoef(seen.layers[0].weight.ravel(), theta.ravel())[0, 1])
    assert abs(np.mean(corrs)) <= 0.05 and np.max(np.abs(corrs)) <= 0.1


def test_fully_masked_view_carries_no_information_about_the_model():
    dom = ShareDomain.ring()
    rng = np.random.default_rng(0)
    dims = [8, 16, 8, 4]
    x = rng.normal(size=(1, 8))

    def view_output(model):
        masked = nn.MLP([nn.Linear(share(l.weight, dom, rng).share_a, share(l.bias, dom, rng).share_a, True)
                         for l in model.layers])
        return nn.predict(materialize_attacker_view(masked, dom), x)[0, 0]

    trained = nn.init_mlp(dims, np.random.default_rng(1))
    for l in trained.layers:
        l.weight *= 5.0
    fresh = nn.init_mlp(dims, np.random.default_rng(2))
    a = [view_output(trained) for _ in range(300)]
    b = [view_output(fresh) for _ in range(300)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_more_attack_epochs_never_score_lower(passive_block):
    x, y = passive_block
    bottom = nn.init_mlp([32, 64, 32, 16], np.random.default_rng(1))
    ds = build_attack_dataset(x, y, 4, np.random.default_rng(2))
    scores = [mc_attack(ds, bottom, t, 0.1, np.random.default_rng(3)).best for t in (5, 10, 20, 40)]
    assert scores == sorted(scores)
    again = mc_attack(ds, bottom, 20, 0.1, np.random.default_rng(3))
    assert again.best == scores[2]
