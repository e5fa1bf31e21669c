import math

import numpy as np
import pytest

from helpers import cifar_record, idx_pair, malformed_cifar, malformed_idx
from maskweave.data import (
    MAX_SHIFT,
    SPIRAL_TURNS,
    BatchStream,
    Dataset,
    NoiseSpec,
    augment,
    draw_image_transforms,
    epoch_order,
    gen_bars,
    gen_blobs,
    gen_spirals,
    load_cifar10,
    load_dataset,
    load_idx,
)
from maskweave.errors import FormatError, UsageError
from maskweave.models import build_model, init_weights
from maskweave.nncore import Batch, TrainConfig, seeded_rng, train
from maskweave.experiment import evaluate


def test_noise_free_spirals_lie_on_curves():
    train_set, test_set = gen_spirals(200, 0.0, 9)
    for ds in (train_set, test_set):
        x, y = ds.inputs[:, 0], ds.inputs[:, 1]
        t = np.hypot(x, y)
        angle = np.arctan2(y, x)
        expect = 2 * math.pi * SPIRAL_TURNS * t + math.pi * ds.labels
        diff = np.angle(np.exp(1j * (angle - expect)))
        assert np.max(np.abs(diff)) < 1e-9


def test_spirals_balanced_deterministic_and_split_distinct():
    a_train, a_test = gen_spirals(100, 0.05, 4)
    b_train, b_test = gen_spirals(100, 0.05, 4)
    assert np.array_equal(a_train.inputs, b_train.inputs)
    assert np.array_equal(a_test.inputs, b_test.inputs)
    assert np.bincount(a_train.labels).tolist() == [100, 100]
    assert a_train.split == "train" and a_test.split == "test"
    assert not np.any(np.all(a_train.inputs[:, None, :] == a_test.inputs[None, :, :], axis=2))


def test_spirals_mlp_reaches_95_percent():
    train_set, test_set = gen_spirals(500, 0.05, 0)
    graph, space = build_model("mlp", 2, 2, 32)
    w = init_weights(space, graph, 0)
    cfg = TrainConfig(4000)
    stream = BatchStream(train_set, NoiseSpec(1, 2, 0.02), cfg.batch_size)
    trained = train(graph, w, cfg, stream, 0, cfg.total_iters)
    acc = evaluate(trained, graph, test_set)
    # baseline run measured 0.998 on first verified run
    assert acc >= 0.95


def test_blobs_and_bars_shapes():
    tr, te = gen_blobs(10, 0.2, 0)
    assert tr.inputs.shape == (40, 2) and tr.class_count == 4
    tr, te = gen_bars(5, 0.1, 0, size=6)
    assert tr.inputs.shape == (20, 1, 6, 6) and set(tr.labels.tolist()) == {0, 1, 2, 3}


def test_dataset_invariants():
    with pytest.raises(UsageError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), "train", 2)
    with pytest.raises(UsageError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), "train", 2)
    with pytest.raises(UsageError):
        Dataset(np.zeros((1, 2)), np.zeros(1, dtype=int), "val", 2)


def test_idx_hand_built_pair(tmp_path):
    ip, lp = idx_pair(tmp_path, [[[0, 255], [51, 102]], [[255, 0], [0, 0]]], [7, 3])
    ds = load_idx(ip, lp, class_count=10)
    assert ds.inputs.shape == (2, 2, 2)
    assert ds.labels.tolist() == [7, 3]
    np.testing.assert_array_equal(ds.inputs[0], [[0.0, 1.0], [0.2, 0.4]])


def test_idx_malformed_rejected(tmp_path):
    for name, ip, lp in malformed_idx(tmp_path):
        with pytest.raises(FormatError):
            load_idx(ip, lp)


def test_idx_wrong_magic_names_offset(tmp_path):
    [(_, ip, lp)] = [c for c in malformed_idx(tmp_path) if c[0] == "labels_wrong_magic"]
    with pytest.raises(FormatError, match="offset 0"):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = idx_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1])
    with pytest.raises(FormatError, match="count mismatch"):
        load_idx(ip, lp)


def test_cifar_single_record(tmp_path):
    pixels = np.arange(3072) % 256
    p = tmp_path / "b.bin"
    p.write_bytes(cifar_record(4, pixels))
    ds = load_cifar10([p])
    assert ds.inputs.shape == (1, 3, 32, 32)
    assert ds.labels.tolist() == [4]
    # channel-major: red plane first, row-major within a plane
    assert ds.inputs[0, 0, 0, 1] == pytest.approx(1 / 255)
    assert ds.inputs[0, 1, 0, 0] == pytest.approx((1024 % 256) / 255)


def test_cifar_malformed(tmp_path):
    for name, p in malformed_cifar(tmp_path):
        with pytest.raises(FormatError):
            load_cifar10([p])


def test_cifar_empty_and_divisibility_messages(tmp_path):
    cases = dict((n, p) for n, p in malformed_cifar(tmp_path))
    with pytest.raises(FormatError, match="empty"):
        load_cifar10(cases["empty"])
    with pytest.raises(FormatError, match="multiple of 3073"):
        load_cifar10(cases["short_3072"])


def test_load_dataset_shapes_idx_for_arch(tmp_path):
    tr = idx_pair(tmp_path, np.zeros((4, 3, 3)), [0, 1, 0, 1], "tr")
    te = idx_pair(tmp_path, np.zeros((2, 3, 3)), [0, 1], "te")
    spec = {"name": "idx", "train": [str(p) for p in tr], "test": [str(p) for p in te]}
    a, _ = load_dataset(spec, "mlp")
    b, _ = load_dataset(spec, "microconv")
    assert a.feature_dims == (9,) and b.feature_dims == (1, 3, 3)


def test_epoch_order_properties():
    assert epoch_order(1, 0, 5).tolist() == [0]
    perm = epoch_order(1000, 0, 1)
    assert sorted(perm.tolist()) == list(range(1000))
    assert not np.array_equal(perm, epoch_order(1000, 0, 2))
    assert not np.array_equal(perm, epoch_order(1000, 1, 1))
    assert np.array_equal(perm, epoch_order(1000, 0, 1))


def test_vector_augment_identity_and_determinism():
    rng = np.random.default_rng(0)
    b = Batch(rng.normal(size=(8, 2)), np.zeros(8, dtype=int))
    same = augment(b, 3, 10, 0.0)
    assert same.inputs.tobytes() == b.inputs.tobytes()
    a1 = augment(b, 3, 10, 0.1)
    a2 = augment(b, 3, 10, 0.1)
    assert a1.inputs.tobytes() == a2.inputs.tobytes()
    assert not np.array_equal(a1.inputs, augment(b, 3, 11, 0.1).inputs)
    jitter = augment(Batch(np.zeros((20000, 1)), np.zeros(20000, dtype=int)), 1, 0, 0.3)
    assert jitter.inputs.std() == pytest.approx(0.3, rel=0.03)


def test_image_augment_shift_bound_audit():
    rng = seeded_rng(0, "audit")
    flips, shifts = draw_image_transforms(rng, 10_000)
    assert np.abs(shifts).max() <= MAX_SHIFT
    assert set(np.unique(shifts).tolist()) == set(range(-MAX_SHIFT, MAX_SHIFT + 1))
    assert 0.45 < flips.mean() < 0.55


def test_image_augment_moves_mass_by_at_most_two_pixels():
    img = np.zeros((1, 1, 9, 9))
    img[0, 0, 4, 4] = 1.0
    b = Batch(np.repeat(img, 200, axis=0), np.zeros(200, dtype=int))
    out = augment(b, 5, 0, 1.0).inputs
    ys, xs = np.nonzero(out[:, 0].sum(axis=0))
    assert np.all(np.abs(ys - 4) <= 2) and np.all(np.abs(xs - 4) <= 2)
    assert np.all(out.reshape(200, -1).sum(axis=1) == 1.0)
    assert augment(b, 5, 0, 0.0) is b


def test_noise_specs_control_stream():
    data, _ = gen_spirals(50, 0.05, 0)
    s1 = BatchStream(data, NoiseSpec(1, 2, 0.1), 16)
    s2 = BatchStream(data, NoiseSpec(1, 2, 0.1), 16)
    s3 = BatchStream(data, NoiseSpec(9, 2, 0.1), 16)
    for it in range(10):
        assert s1(it).inputs.tobytes() == s2(it).inputs.tobytes()
    assert not np.array_equal(s1(0).labels, s3(0).labels) or \
        not np.array_equal(s1(0).inputs, s3(0).inputs)


def test_noise_spec_validation():
    with pytest.raises(UsageError):
        NoiseSpec(1, 2, -0.1)
