import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from xbodyid.training import (BatchConfigError, MiningRecord, batch_hard_triplet_loss, combined_loss, identity_loss,
                              mining_statistics)

from gradcheck import central_difference, relative_error
from oracles import brute_force_triplet


def lse_oracle(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        total += m + math.log(sum(math.exp(v - m) for v in row)) - row[y]
    return total / len(labels)


def test_identity_loss_uniform():
    assert identity_loss(torch.zeros(3, 4), [0, 1, 3]).item() == pytest.approx(math.log(4))


def test_identity_loss_saturated():
    logits = torch.zeros(2, 5, dtype=torch.float64)
    logits[0, 1] = logits[1, 4] = 30.0
    assert identity_loss(logits, [1, 4]).item() < 1e-9


def test_identity_loss_matches_oracle(rng):
    logits = rng.normal(size=(5, 3)) * 3
    labels = rng.integers(0, 3, size=5)
    got = identity_loss(torch.tensor(logits), labels).item()
    assert got == pytest.approx(lse_oracle(logits.tolist(), labels.tolist()), abs=1e-10)


def test_identity_loss_errors():
    with pytest.raises(ValueError):
        identity_loss(torch.zeros(2, 3), [0, 3])
    with pytest.raises(ValueError):
        identity_loss(torch.zeros(2, 3), [0])


def test_triplet_inactive_hinge():
    # identity 0 at x=0 and x=2, identity 1 at x=7 and x=9 (hard pairs at 2 and 5)
    x = torch.tensor([[0.0], [2.0], [7.0], [9.0]], dtype=torch.float64)
    loss, rec = batch_hard_triplet_loss(x, [0, 0, 1, 1], ["VIS"] * 4, margin=0.0)
    assert loss.item() == 0.0
    np.testing.assert_allclose(rec.pos_dist, [2, 2, 2, 2], atol=1e-9)
    np.testing.assert_allclose(rec.neg_dist, [7, 5, 5, 7], atol=1e-9)


@pytest.mark.parametrize("margin", [0.0, 0.3, 1.0])
def test_triplet_identical_features(margin):
    x = torch.ones(6, 4, dtype=torch.float64)
    loss, _ = batch_hard_triplet_loss(x, [0, 0, 1, 1, 2, 2], ["VIS"] * 6, margin)
    assert loss.item() == pytest.approx(margin, abs=1e-9)


def test_triplet_constructed_batch_matches_brute_force():
    x = [[0.0, 0.0], [1.0, 0.5], [0.2, 2.0], [3.0, 1.0], [2.5, -0.5], [1.2, 1.1]]
    labels = [0, 0, 0, 1, 1, 1]
    loss, rec = batch_hard_triplet_loss(torch.tensor(x, dtype=torch.float64), labels, ["VIS"] * 6, 0.5)
    expect, pos, neg = brute_force_triplet(x, labels, 0.5)
    assert loss.item() == pytest.approx(expect, abs=1e-9)
    assert rec.pos_index.tolist() == pos and rec.neg_index.tolist() == neg


def test_triplet_single_sample_identity():
    with pytest.raises(BatchConfigError):
        batch_hard_triplet_loss(torch.randn(3, 2), [0, 0, 1], ["VIS"] * 3)


def test_combined_loss():
    assert combined_loss(0.5, 0.25, 1.0) == 0.75
    assert combined_loss(0.5, 0.25, 0.0) == 0.5
    assert combined_loss(1.0, 0.5, 2.0) == 2.0
    with pytest.raises(ValueError):
        combined_loss(1.0, 1.0, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.permutations(list(range(8))))
def test_triplet_permutation_invariant(seed, perm):
    g = np.random.default_rng(seed)
    x = torch.tensor(g.normal(size=(8, 5)))
    labels = torch.tensor([0, 0, 1, 1, 2, 2, 3, 3])
    doms = np.array(["VIS", "SWIR", "MWIR", "LWIR"] * 2)
    perm = torch.tensor(perm)
    l1, _ = batch_hard_triplet_loss(x, labels, doms, 0.2)
    l2, _ = batch_hard_triplet_loss(x[perm], labels[perm], doms[perm.numpy()], 0.2)
    assert l1.item() == pytest.approx(l2.item(), abs=1e-12)
    logits = torch.tensor(g.normal(size=(8, 4)))
    per_a = identity_loss(logits, labels)
    per_b = identity_loss(logits[perm], labels[perm])
    assert per_a.item() == pytest.approx(per_b.item(), abs=1e-12)


def _loss_grad_check(which, seed=0):
    g = np.random.default_rng(seed)
    feats = torch.tensor(g.normal(size=(8, 16)), requires_grad=True)
    labels = torch.tensor([0, 0, 1, 1, 2, 2, 3, 3])
    doms = ["VIS", "SWIR"] * 4
    W = torch.tensor(g.normal(size=(16, 4)))

    def f(z):
        l_id = identity_loss(z @ W, labels)
        l_tri, _ = batch_hard_triplet_loss(z, labels, doms, 0.0)
        return {"id": l_id, "tri": l_tri, "combined": combined_loss(l_id, l_tri, 1.0)}[which]

    f(feats).backward()
    coords = range(feats.numel())
    fd = central_difference(lambda z: f(z).item(), feats, coords)
    return relative_error(feats.grad.view(-1).numpy(), fd)


@pytest.mark.parametrize("which", ["id", "tri", "combined"])
def test_loss_gradients_match_finite_differences(which):
    assert _loss_grad_check(which) < 1e-4


def test_zero_weight_means_identity_gradient_only():
    g = np.random.default_rng(2)
    feats = torch.tensor(g.normal(size=(8, 6)), requires_grad=True)
    labels = [0, 0, 1, 1, 2, 2, 3, 3]
    W = torch.tensor(g.normal(size=(6, 4)))
    l_id = identity_loss(feats @ W, labels)
    l_tri, _ = batch_hard_triplet_loss(feats, labels, ["VIS"] * 8, 0.0)
    g_comb = torch.autograd.grad(combined_loss(l_id, l_tri, 0.0), feats, retain_graph=True)[0]
    g_id = torch.autograd.grad(l_id, feats)[0]
    assert torch.equal(g_comb, g_id)


def _rec(anchor, pos, neg):
    n = len(anchor)
    z = np.zeros(n)
    return MiningRecord(np.array(anchor), np.zeros(n, int), np.array(pos), z, np.zeros(n, int), np.array(neg), z)


def test_mining_statistics_examples():
    vis = ["VIS"] * 4
    assert mining_statistics([_rec(vis, vis, vis)]).pct_hard_pos_cross_domain == 0.0
    s = mining_statistics([_rec(vis, ["SWIR", "MWIR", "LWIR", "VIS"], ["VIS", "SWIR", "SWIR", "SWIR"])])
    assert s.pct_hard_pos_cross_domain == 75.0
    assert s.pct_hard_neg_same_domain == 25.0
    assert (s.n_anchors, s.n_pos_cross_domain, s.n_neg_same_domain) == (4, 3, 1)
    with pytest.raises(ValueError):
        mining_statistics([])


@settings(max_examples=50)
@given(st.lists(st.lists(st.tuples(*[st.sampled_from(["VIS", "SWIR", "MWIR", "LWIR"])] * 3), min_size=1,
                         max_size=6), min_size=1, max_size=4))
def test_mining_statistics_bounds_and_order(batches):
    recs = [_rec(*map(list, zip(*b))) for b in batches]
    s = mining_statistics(recs)
    assert 0 <= s.pct_hard_pos_cross_domain <= 100 and 0 <= s.pct_hard_neg_same_domain <= 100
    assert s == mining_statistics(recs[::-1])
    assert s.pct_hard_pos_cross_domain == pytest.approx(100 * s.n_pos_cross_domain / s.n_anchors)
