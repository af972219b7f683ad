import numpy as np
import pytest

from fpd.baselines import fedavg
from fpd.data import LabeledDataset, generate_synthetic
from fpd.errors import EvalError, TrainError
from fpd.model import Architecture, LocalUpdate, Model, apply_global, evaluate, local_train, loss_and_grad


def central_diff(fn, p, h=1e-5):
    g = np.zeros_like(p)
    for i in range(len(p)):
        e = np.zeros_like(p)
        e[i] = h
        g[i] = (fn(p + e) - fn(p - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def test_layout():
    arch = Architecture(3, 4, 2)
    assert arch.size == 3 * 4 + 4 + 4 * 2 + 2
    s = arch.last_layer_slice
    assert (s.start, s.stop) == (16, 24)
    W1, b1, W2, b2 = arch.unpack(np.arange(arch.size, dtype=float))
    assert W1[0, 1] == 1 and b1[0] == 12 and W2[0, 0] == 16 and b2[-1] == arch.size - 1


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    arch = Architecture(3, 4, 3)  # 31 parameters
    X = rng.standard_normal((5, 3))
    y = rng.integers(0, 3, 5)
    for _ in range(20):
        p = rng.standard_normal(arch.size)
        _, g = loss_and_grad(arch, p, X, y)
        num = central_diff(lambda q: loss_and_grad(arch, q, X, y, with_grad=False)[0], p)
        assert np.all((rel_err(g, num) < 1e-4) | (np.abs(g - num) < 1e-9))


def test_softmax_sums_to_one():
    m = Model.create(4, 6, 5, seed=1)
    P = m.predict_proba(np.random.default_rng(2).standard_normal((50, 4)) * 10)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_zero_lr_gives_zero_delta():
    ds = generate_synthetic(40, 2, 3, 0)
    m = Model.create(3, 4, 2, seed=0)
    u = local_train(m, ds, E=2, lr=0.0, seed=1, client_id=7)
    assert u.client_id == 7 and u.claimed_size == 40
    assert np.all(u.delta == 0)


def test_single_sample_step_is_negative_gradient():
    rng = np.random.default_rng(1)
    arch = Architecture(2, 1, 2)  # 9 parameters
    m = Model(arch, rng.standard_normal(arch.size))
    ds = LabeledDataset(rng.standard_normal((1, 2)), [1], 2)
    lr = 0.1
    u = local_train(m, ds, E=1, lr=lr, batch=1, seed=0)
    f = lambda q: loss_and_grad(arch, q, ds.features, ds.labels, with_grad=False)[0]
    num = central_diff(f, m.params)
    np.testing.assert_allclose(u.delta, -lr * num, rtol=1e-4, atol=1e-10)


def test_training_reduces_loss():
    ds = generate_synthetic(300, 4, 5, 3)
    m = Model.create(5, 8, 4, seed=0)
    u = local_train(m, ds, E=3, seed=2)
    after = apply_global(m, u.delta)
    assert after.loss(ds.features, ds.labels) <= m.loss(ds.features, ds.labels)


def test_local_train_deterministic_and_pure():
    ds = generate_synthetic(100, 3, 4, 3)
    m = Model.create(4, 5, 3, seed=0)
    before = m.params.copy()
    a = local_train(m, ds, E=2, seed=5).delta
    b = local_train(m, ds, E=2, seed=5).delta
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(m.params, before)


def test_empty_dataset_raises():
    m = Model.create(2, 3, 2)
    with pytest.raises(TrainError):
        local_train(m, LabeledDataset(np.zeros((0, 2)), [], 2), E=1)


def test_apply_global():
    m = Model.create(2, 3, 2, seed=4)
    assert np.array_equal(apply_global(m, np.zeros_like(m.params)).params, m.params)
    assert np.all(apply_global(m, -m.params).params == 0)
    with pytest.raises(ValueError):
        apply_global(m, np.zeros(3))


def test_fedavg_equal_sizes_is_plain_mean():
    rng = np.random.default_rng(0)
    ups = [LocalUpdate(k, rng.standard_normal(6), 10) for k in range(4)]
    expected = sum(u.delta for u in ups) / 4
    np.testing.assert_allclose(fedavg(ups), expected, atol=1e-15)


def _constant_model(arch, label):
    p = np.zeros(arch.size)
    _, _, _, b2 = arch.unpack(p)
    b2[label] = 1.0
    return Model(arch, p)


def test_evaluate_constant_predictor():
    arch = Architecture(3, 2, 4)
    test = LabeledDataset(np.random.default_rng(0).standard_normal((20, 3)), [2] * 20, 4)
    assert evaluate(_constant_model(arch, 2), test) == 1.0
    assert evaluate(_constant_model(arch, 1), test) == 0.0


def test_evaluate_ties_go_to_lowest_label():
    arch = Architecture(3, 2, 4)
    zero = Model(arch, np.zeros(arch.size))
    test = LabeledDataset(np.ones((5, 3)), [0] * 5, 4)
    assert evaluate(zero, test) == 1.0


def test_evaluate_random_model_near_chance():
    ds = generate_synthetic(1000, 10, 20, 11)
    accs = [evaluate(Model.create(20, 16, 10, seed=s), ds) for s in range(10)]
    assert abs(np.mean(accs) - 0.1) <= 0.05


def test_evaluate_lookup_model_perfect():
    # features are one-hot labels; identity-like weights memorise them
    L = 4
    arch = Architecture(L, L, L)
    X = np.eye(L)[[0, 1, 2, 3, 1, 2]]
    ds = LabeledDataset(X, [0, 1, 2, 3, 1, 2], L)
    p = np.zeros(arch.size)
    W1, _, W2, _ = arch.unpack(p)
    W1[:] = np.eye(L)
    W2[:] = np.eye(L)
    assert evaluate(Model(arch, p), ds) == 1.0


def test_evaluate_empty():
    with pytest.raises(EvalError):
        evaluate(Model.create(2, 2, 2), LabeledDataset(np.zeros((0, 2)), [], 2))
