import numpy as np
import pytest

from layermask import nn
from layermask.selection import (
    VMASK,
    VMASK_ALLS,
    VMASK_AS,
    VMASK_RS,
    SelectionError,
    accumulate,
    estimate_leakage,
    layer_order,
    randomize_layers,
    select_layers,
)


def grads_with_norms(norms, shapes=((2, 1), (1, 1), (1, 1))):
    out = []
    for n, (r, c) in zip(norms, shapes):
        w = np.zeros((r, c))
        w.flat[0] = n
        out.append((w, np.zeros(r)))
    return out


def aux(rng, n_per_class=10, n_classes=3, d=4):
    y = np.repeat(np.arange(n_classes), n_per_class)
    return rng.normal(size=(len(y), d)) + y[:, None], y


class StubAttack:
    """Returns a fixed descending sequence of accuracies, one per probe."""

    def __init__(self, values):
        self.values = list(values)
        self.seen = []

    def __call__(self, model, dataset, epochs, lr, rng):
        self.seen.append(model)
        return self.values[len(self.seen) - 1]


def test_accumulate_examples():
    g = np.zeros(3)
    assert np.array_equal(accumulate(g, grads_with_norms([0, 0, 0])), g)
    g1 = accumulate(g, grads_with_norms([3, 1, 2]))
    assert np.array_equal(g1, [3, 1, 2])
    assert np.array_equal(accumulate(g1, grads_with_norms([3, 1, 2])), 2 * g1)
    with pytest.raises(SelectionError):
        accumulate(np.zeros(2), grads_with_norms([1, 2, 3]))


def test_layer_order_descending_with_low_index_ties():
    assert layer_order([10, 1, 5]) == [1, 3, 2]
    assert layer_order([2, 2, 1]) == [1, 2, 3]


def run_select(rng, budget, g=(0, 0, 0), variant=VMASK, u_prev=(), attack=None, norms=(0, 0, 0)):
    x, y = aux(rng)
    shadow = nn.init_mlp([4, 5, 4, 3], rng, nn.SHADOW)
    grads = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in shadow.layers]
    for (gw, _), n in zip(grads, norms):
        gw.flat[0] = n
    kw = {} if attack is None else {"attack": attack}
    return select_layers(x, y, shadow, grads, set(u_prev), budget, np.asarray(g, float), 4, 3, 0.1,
                         variant, rng, **kw)


def test_budget_one_masks_nothing(rng):
    sel = run_select(rng, 1.0)
    assert sel.masked == set() and sel.plain == {1, 2, 3} and sel.n_attacks == 1


def test_budget_zero_masks_everything(rng):
    sel = run_select(rng, 0.0, attack=StubAttack([0.5, 0.4, 0.3, 0.2]))
    assert sel.masked == {1, 2, 3} and sel.plain == set()


def test_stub_attack_picks_top_two_by_norm(rng):
    stub = StubAttack([0.9, 0.6, 0.3])
    sel = run_select(rng, 0.5, g=(10, 1, 5), attack=stub)
    assert sel.masked == {1, 3} and sel.plain == {2}
    assert sel.leakage == 0.3 and sel.n_attacks == 3
    # probes randomize exactly the layers chosen so far
    base = stub.seen[0]
    assert np.array_equal(stub.seen[1].layers[1].weight, base.layers[1].weight)
    assert not np.array_equal(stub.seen[1].layers[0].weight, base.layers[0].weight)


def test_accumulator_includes_this_epochs_gradients(rng):
    sel = run_select(rng, 0.5, g=(0, 0, 0), norms=(1, 3, 2), attack=StubAttack([0.9, 0.3]))
    assert sel.masked == {2}
    assert np.array_equal(sel.g, [1, 3, 2])


def test_accumulative_variant_keeps_previous(rng):
    sel = run_select(rng, 0.5, g=(10, 1, 5), variant=VMASK_AS, u_prev={2},
                     attack=StubAttack([0.9, 0.3]))
    assert sel.masked == {1, 2}


def test_random_variant_matches_count(rng):
    sel = run_select(rng, 0.5, g=(10, 1, 5), variant=VMASK_RS, attack=StubAttack([0.9, 0.6, 0.3]))
    assert len(sel.masked) == 2 == sel.vmask_count
    assert sel.masked | sel.plain == {1, 2, 3}


def test_all_layers_variant(rng):
    sel = run_select(rng, 0.9, variant=VMASK_ALLS)
    assert sel.masked == {1, 2, 3} and sel.n_attacks == 0


def test_invalid_variant(rng):
    with pytest.raises(SelectionError):
        run_select(rng, 0.5, variant="vmask-xl")


def test_randomize_layers_only_touches_selected(rng):
    m = nn.init_mlp([4, 5, 3], rng)
    r = randomize_layers(m, {2}, rng)
    assert np.array_equal(r.layers[0].weight, m.layers[0].weight)
    assert not np.array_equal(r.layers[1].weight, m.layers[1].weight)
    bound = 1 / np.sqrt(5)
    assert np.abs(r.layers[1].weight).max() <= bound


def test_estimate_leakage_zero_epochs(rng):
    from layermask.attack import build_attack_dataset

    x, y = aux(rng)
    ds = build_attack_dataset(x, y, 4, rng)
    assert estimate_leakage(nn.init_mlp([4, 3], rng), ds, 0, 0.1, rng) == 0.0


def test_stops_once_under_budget(rng):
    for budget in (0.7, 0.5):
        stub = StubAttack([0.9, 0.6, 0.4, 0.3])
        sel = run_select(rng, budget, g=(3, 2, 1), attack=stub)
        assert sel.plain and sel.leakage <= budget
        # the previous probe was still over budget, so no layer was masked needlessly
        assert stub.values[sel.n_attacks - 2] > budget
    # the queue runs dry before the budget is met: every layer ends up masked
    sel = run_select(rng, 0.35, g=(3, 2, 1), attack=StubAttack([0.9, 0.6, 0.4]))
    assert sel.masked == {1, 2, 3}


def test_order_is_invariant_to_scaling_the_accumulator():
    g = np.random.default_rng(3).exponential(size=6)
    for c in (1e-3, 1.0, 7.5, 1e6):
        assert layer_order(c * g) == layer_order(g)
        assert list(np.argsort(-c * g, kind="stable") + 1) == layer_order(g)
