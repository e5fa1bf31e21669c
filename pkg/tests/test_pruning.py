import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskweave.data import NoiseSpec, gen_spirals
from maskweave.errors import AlignmentError, DomainError
from maskweave.experiment import evaluate
from maskweave.models import build_model, init_weights
from maskweave.nncore import ParamSpace, TrainConfig, WeightVector, train
from maskweave.pruning import (
    PruneMask,
    apply_mask,
    magnitude_prune,
    pruned_count_for,
    random_ticket,
    train_masked,
)
from maskweave.data import BatchStream


def _vec(values, extra_nonprunable=True):
    blocks = [("w", (len(values),), True)]
    vals = list(values)
    if extra_nonprunable:
        blocks.append(("b", (2,), False))
        vals += [0.0, 0.0]
    space = ParamSpace.from_blocks(blocks)
    return WeightVector(np.array(vals, dtype=float), space)


def test_prune_zero_and_one(mlp_weights):
    assert magnitude_prune(mlp_weights, 0.0).bits.all()
    full = magnitude_prune(mlp_weights, 1.0)
    assert not full.bits.any() and full.pruned_count == mlp_weights.space.d_prunable


def test_prune_example_exhaustive_sort():
    w = _vec([0.5, -0.1, 0.3, -0.9])
    # oracle: enumerate all 2-subsets, keep the one with smallest magnitude sum
    best = min(itertools.combinations(range(4), 2),
               key=lambda c: sum(abs(w.values[i]) for i in c))
    expect = [0 if i in best else 1 for i in range(4)]
    assert expect == [1, 0, 0, 1]
    assert magnitude_prune(w, 0.5).bits.astype(int).tolist() == expect


def test_prune_tie_breaks_on_lower_index():
    w = _vec([0.2, 0.2, 0.5, 0.7])
    assert magnitude_prune(w, 0.25).bits.astype(int).tolist() == [0, 1, 1, 1]


def test_prune_domain_errors(mlp_weights):
    for s in (-0.1, 1.1, float("nan")):
        with pytest.raises(DomainError):
            magnitude_prune(mlp_weights, s)


def test_pruned_count_floor():
    assert pruned_count_for(0.5, 1152) == 576
    assert pruned_count_for(0.3, 10) == 3
    assert pruned_count_for(0.29, 100) == 29
    assert pruned_count_for(0.999, 10) == 9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=60),
       st.floats(0, 1))
def test_prune_properties(values, s):
    w = _vec(values)
    m = magnitude_prune(w, s)
    d = len(values)
    assert m.pruned_count == pruned_count_for(s, d)
    bits = m.bits
    mags = np.abs(np.array(values))
    if bits.any() and (~bits).any():
        assert mags[bits].min() >= mags[~bits].max()
        # ties straddling the threshold resolve toward lower indices
        thr = mags[~bits].max()
        tied = np.flatnonzero(mags == thr)
        pruned_tied = [i for i in tied if not bits[i]]
        kept_tied = [i for i in tied if bits[i]]
        if pruned_tied and kept_tied:
            assert max(pruned_tied) < min(kept_tied)
    # non-prunable coordinates untouched
    applied = apply_mask(w, m)
    assert applied.values[d:].tolist() == w.values[d:].tolist()
    assert m == magnitude_prune(w, s)


def test_apply_mask_identity_idempotent_and_oracle(mlp_weights, rng):
    space = mlp_weights.space
    ones = PruneMask.ones(space)
    assert apply_mask(mlp_weights, ones).values.tobytes() == mlp_weights.values.tobytes()
    bits = rng.random(space.d_prunable) < 0.4
    m = PruneMask.from_bits(bits, space)
    once = apply_mask(mlp_weights, m)
    assert apply_mask(once, m) == once
    idx = space.prunable_index
    for j, flat in enumerate(idx):
        expect = 0.0 if not bits[j] else mlp_weights.values[flat]
        assert once.values[flat] == expect
    other = np.setdiff1d(np.arange(space.d_total), idx)
    assert np.array_equal(once.values[other], mlp_weights.values[other])


def test_apply_mask_space_mismatch(mlp_weights):
    with pytest.raises(AlignmentError):
        apply_mask(mlp_weights, PruneMask.ones(_vec([1.0]).space))


def test_mask_packing_roundtrip(rng):
    for d in (1, 7, 8, 63, 64, 65, 200):
        space = ParamSpace.from_blocks([("w", (d,), True)])
        bits = rng.random(d) < 0.5
        m = PruneMask.from_bits(bits, space)
        assert np.array_equal(m.bits, bits)
        assert m.kept_count == bits.sum()
        assert PruneMask.from_packed(np.frombuffer(m.packed(), np.uint8), space) == m


def test_random_ticket_fully_pruned_layer_unchanged(mlp):
    _, space = mlp
    bits = np.ones(space.d_prunable, dtype=bool)
    name, a, b = space.prunable_ranges()[1]
    bits[a:b] = False
    m = PruneMask.from_bits(bits, space)
    rt = random_ticket(m, 0)
    assert not rt.bits[a:b].any()
    assert rt == m


def test_random_ticket_preserves_layer_counts(mlp, rng):
    _, space = mlp
    for seed in range(20):
        m = PruneMask.from_bits(rng.random(space.d_prunable) < rng.random(), space)
        rt = random_ticket(m, seed)
        assert rt.layer_zero_counts() == m.layer_zero_counts()
        assert rt.sparsity == m.sparsity


def test_random_ticket_shuffles(mlp, mlp_weights):
    m = magnitude_prune(mlp_weights, 0.5)
    assert m.d == 1152
    rt = random_ticket(m, 3)
    assert np.count_nonzero(rt.bits != m.bits) >= 1
    assert rt == random_ticket(m, 3)


def test_train_masked_zero_steps_returns_masked_start(mlp, mlp_weights):
    graph, space = mlp
    data, _ = gen_spirals(20, 0.05, 0)
    m = magnitude_prune(mlp_weights, 0.5)
    out = train_masked(graph, mlp_weights, m, TrainConfig(0), NoiseSpec(1, 1), data)
    assert out == apply_mask(mlp_weights, m)


def test_train_masked_all_zero_mask_is_constant_predictor(mlp, mlp_weights):
    graph, space = mlp
    train_set, test_set = gen_spirals(200, 0.05, 0)
    out = train_masked(graph, mlp_weights, PruneMask.zeros(space), TrainConfig(300),
                       NoiseSpec(1, 2, 0.02), train_set)
    assert np.all(out.values[space.prunable_index] == 0.0)
    assert evaluate(out, graph, test_set) == 0.5


def test_train_masked_all_ones_matches_unmasked(mlp, mlp_weights):
    graph, space = mlp
    data, _ = gen_spirals(100, 0.05, 0)
    cfg = TrainConfig(200)
    noise = NoiseSpec(4, 5, 0.02)
    masked = train_masked(graph, mlp_weights, PruneMask.ones(space), cfg, noise, data)
    plain = train(graph, mlp_weights, cfg, BatchStream(data, noise, cfg.batch_size), 0, 200)
    assert masked.values.tobytes() == plain.values.tobytes()


def test_late_rewind_half_sparsity_matches_dense():
    train_set, test_set = gen_spirals(500, 0.05, 0)
    graph, space = build_model("mlp", 2, 2, 32)
    cfg = TrainConfig(4000)
    w0 = init_weights(space, graph, 0)
    stream = BatchStream(train_set, NoiseSpec(1, 2, 0.02), cfg.batch_size)
    w500 = train(graph, w0, cfg, stream, 0, 500)
    dense = train(graph, w500, cfg, stream, 500, 4000)
    dense_acc = evaluate(dense, graph, test_set)
    mask = magnitude_prune(dense, 0.5)
    sparse = train_masked(graph, w500, mask, cfg, NoiseSpec(3, 4, 0.02), train_set,
                          start=500, stop=4000)
    assert abs(evaluate(sparse, graph, test_set) - dense_acc) <= 0.02
