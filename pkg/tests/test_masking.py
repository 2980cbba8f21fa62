import numpy as np
import pytest

from layermask import nn
from layermask.masking import MaskState, MaskStateError, NoiseConfig, mask_ratio, mask_transition
from layermask.parties import ActiveParty, PassiveParty, effective_bottom
from layermask.sharing import ShareDomain
from layermask.transport import LAYER_RECONSTRUCT, LAYER_SHARE, Network
from conftest import same_snapshot, snapshot


def make_pair(domain=None, noise_seed=5, dims=(6, 8, 5, 4)):
    domain = domain or ShareDomain.float_()
    net = Network(2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, dims[0]))
    passive = PassiveParty(1, x, nn.init_mlp(dims, rng), domain, np.random.default_rng(1),
                           net.endpoint(1), 2)
    active = ActiveParty(2, x, np.zeros(10, dtype=int), nn.init_mlp(dims, rng),
                         nn.init_mlp([dims[-1], 3], rng, nn.TOP), domain, np.random.default_rng(2),
                         np.random.default_rng(noise_seed), net.endpoint(2))
    return net, passive, active


def test_mask_state_partition_checks():
    s = MaskState.step({1}, {1, 3}, 3)
    assert s.newly_masked == [3] and s.newly_plain == []
    assert s.v_curr == {2}
    s = MaskState.step({1, 2}, {2}, 3)
    assert s.newly_masked == [] and s.newly_plain == [1]
    with pytest.raises(MaskStateError):
        MaskState(frozenset({1}), frozenset(), frozenset({1, 2}), frozenset({1, 2}), 2)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(-0.1)
    assert NoiseConfig().sigma == 0.01


def test_initial_mask_reconstructs_exactly_without_noise():
    net, p, a = make_pair()
    theta = p.model.layers[0].weight.copy(), p.model.layers[0].bias.copy()
    mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(0.0))
    assert p.model.masked_indices == {1} and set(a.shares) == {(1, 1)}
    eff = effective_bottom(p, a).layers[0]
    assert np.allclose(eff.weight, theta[0], rtol=0, atol=1e-12)
    assert np.allclose(eff.bias, theta[1], rtol=0, atol=1e-12)
    # the passive party's half alone says nothing useful about the layer
    assert not np.allclose(p.model.layers[0].weight, theta[0], atol=1.0)
    kinds = [e.kind for e in net.transcript]
    assert kinds == [LAYER_SHARE]


def test_ring_mask_reconstructs_bit_exactly():
    dom = ShareDomain.ring()
    net, p, a = make_pair(dom)
    from layermask.sharing import decode_fixed, encode_fixed

    theta = decode_fixed(encode_fixed(p.model.layers[1].weight, dom), dom)
    mask_transition(MaskState.step(set(), {2}, 3), p, a, NoiseConfig(0.0))
    assert p.model.layers[1].weight.dtype == np.uint64
    assert np.array_equal(effective_bottom(p, a).layers[1].weight, theta)


def test_no_transition_is_a_no_op():
    net, p, a = make_pair()
    mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(0.01))
    before = snapshot(p.model)
    shares = {k: [v.copy() for v in vs] for k, vs in a.shares.items()}
    n_msgs = len(net.transcript)
    mask_transition(MaskState.step({1}, {1}, 3), p, a, NoiseConfig(0.01))
    assert same_snapshot(before, snapshot(p.model))
    assert all(np.array_equal(x, y) for k in shares for x, y in zip(shares[k], a.shares[k]))
    assert len(net.transcript) == n_msgs


def test_round_trip_adds_regenerable_noise():
    sigma = 0.01
    net, p, a = make_pair(noise_seed=99)
    w, b = p.model.layers[1].weight.copy(), p.model.layers[1].bias.copy()
    mask_transition(MaskState.step(set(), {2}, 3), p, a, NoiseConfig(sigma))
    mask_transition(MaskState.step({2}, set(), 3), p, a, NoiseConfig(sigma))
    regen = np.random.default_rng(99)
    n_w1, n_b1 = regen.normal(0, sigma, w.shape), regen.normal(0, sigma, b.shape)
    n_w2, n_b2 = regen.normal(0, sigma, w.shape), regen.normal(0, sigma, b.shape)
    layer = p.model.layers[1]
    assert not layer.masked and (1, 2) not in a.shares
    assert np.allclose(layer.weight, w + n_w1 + n_w2, rtol=0, atol=1e-12)
    assert np.allclose(layer.bias, b + n_b1 + n_b2, rtol=0, atol=1e-12)
    assert [e.kind for e in net.transcript] == [LAYER_SHARE, LAYER_RECONSTRUCT]


def test_swap_masks_new_and_unmasks_old():
    net, p, a = make_pair()
    mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(0.0))
    mask_transition(MaskState.step({1}, {2, 3}, 3), p, a, NoiseConfig(0.0))
    assert p.model.masked_indices == {2, 3}
    assert set(a.shares) == {(1, 2), (1, 3)}


def test_invalid_transitions_rejected():
    net, p, a = make_pair()
    with pytest.raises(MaskStateError):
        mask_transition(MaskState.step({1}, set(), 3), p, a, NoiseConfig(0.0))
    mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(0.0))
    with pytest.raises(MaskStateError):
        mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(0.0))
    with pytest.raises(MaskStateError):
        mask_transition(MaskState.step(set(), {1}, 4), p, a, NoiseConfig(0.0))


def test_mask_ratio_examples():
    assert mask_ratio([3, 3, 3], 3, 3) == 1.0
    assert mask_ratio([0, 0], 2, 3) == 0.0
    assert mask_ratio([1, 2], 2, 3) == 0.5
    with pytest.raises(ValueError):
        mask_ratio([], 0, 3)


def test_noise_drift_has_configured_scale():
    sigma = 0.01
    net, p, a = make_pair(dims=(100, 100, 5, 4))
    w = p.model.layers[0].weight.copy()
    mask_transition(MaskState.step(set(), {1}, 3), p, a, NoiseConfig(sigma))
    drift = effective_bottom(p, a).layers[0].weight - w
    assert w.size == 10_000
    assert abs(drift.std() - sigma) <= 0.1 * sigma


def test_partition_holds_through_random_transitions():
    rng = np.random.default_rng(4)
    net, p, a = make_pair()
    u = set()
    for _ in range(20):
        nxt = {j for j in (1, 2, 3) if rng.random() < 0.5}
        state = MaskState.step(u, nxt, 3)
        mask_transition(state, p, a, NoiseConfig(0.01))
        u = nxt
        assert p.model.masked_indices == state.u_curr
        assert {j for (_, j) in a.shares} == state.u_curr
        assert state.u_curr | state.v_curr == {1, 2, 3} and not state.u_curr & state.v_curr


def test_float_share_is_decorrelated_from_layer():
    rng = np.random.default_rng(8)
    theta = nn.init_linear(32, 64, rng).weight
    from layermask.sharing import share

    corr = [np.corrcoef(share(theta, ShareDomain.float_(), rng).share_a.ravel(), theta.ravel())[0, 1]
            for _ in range(200)]
    assert abs(np.mean(corr)) <= 0.05
