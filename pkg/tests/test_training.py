import numpy as np
import pytest

from batchensemble.data import Dataset, gen_blobs
from batchensemble.errors import ArgumentError, ConfigError, ShapeError, TrainingError
from batchensemble.gradcheck import check_decay, numeric_grad
from batchensemble.layers import BatchEnsembleLayer
from batchensemble.model import Model, build_mlp
from batchensemble.training import (TrainConfig, assign_subbatches, budget_epochs, decay_gradient,
                                    lr_at, mean_weight_penalty, sgd_momentum_step, softmax_xent, train)


def test_assign_subbatches():
    assert assign_subbatches(8, 4).tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    assert assign_subbatches(6, 1).tolist() == [0] * 6
    with pytest.raises(ConfigError, match="adjust the batch size"):
        assign_subbatches(7, 2)


def test_softmax_xent_examples():
    loss, G = softmax_xent(np.zeros((1, 4)), [2])
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)
    loss, _ = softmax_xent(np.array([[1e3, 0.0, 0.0]]), [0])
    assert loss < 1e-6
    loss, G = softmax_xent(np.array([[0.0, np.log(3.0)]]), [0])
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)
    np.testing.assert_allclose(G, [[-0.75, 0.75]], atol=1e-12)
    with pytest.raises(ArgumentError):
        softmax_xent(np.zeros((1, 2)), [2])


def test_softmax_xent_gradient_matches_finite_differences():
    g = np.random.default_rng(0)
    Z = g.normal(size=(5, 4))
    y = g.integers(0, 4, size=5)
    _, G = softmax_xent(Z, y)
    np.testing.assert_allclose(G, numeric_grad(lambda: softmax_xent(Z, y)[0], Z), rtol=1e-6, atol=1e-9)


def _be_model(M=2, seed=0):
    return build_mlp([3, 4, 2], kind="batch_ensemble", ensemble_size=M, seed=seed, fast_init="gaussian")


def test_decay_zero_coefficient():
    assert decay_gradient(_be_model(), "shared_only", 0.0) == {}
    assert decay_gradient(_be_model(), "mean_weight", 0.0) == {}


def test_decay_shared_only_is_l2_on_slow_weights():
    layer = BatchEnsembleLayer(np.array([[2.0, 0.0], [0.0, 1.0]]), np.ones((1, 2)), np.ones((1, 2)),
                               np.zeros((1, 2)))
    add = decay_gradient(Model([layer]), "shared_only", 1e-4)
    assert add[("layer", 0, "W")][0, 0] == pytest.approx(2e-4, abs=1e-18)
    assert set(add) == {("layer", 0, "W")}


def test_mean_weight_equals_shared_only_for_unit_fast_weights():
    W = np.array([[1.0, -2.0], [0.5, 3.0]])
    layer = BatchEnsembleLayer(W, np.ones((1, 2)), np.ones((1, 2)), np.zeros((1, 2)))
    a = decay_gradient(Model([layer]), "shared_only", 0.3)
    b = decay_gradient(Model([layer]), "mean_weight", 0.3)
    assert np.array_equal(a[("layer", 0, "W")], b[("layer", 0, "W")])


@pytest.mark.parametrize("seed", range(5))
def test_mean_weight_decay_matches_finite_differences(seed):
    errs = check_decay(4, 3, 3, 0.5, "mean_weight", seed)
    assert max(errs.values()) <= 1e-6, errs


def test_mean_weight_penalty_uses_member_average():
    g = np.random.default_rng(3)
    layer = BatchEnsembleLayer(g.normal(size=(3, 2)), g.normal(size=(4, 3)), g.normal(size=(4, 2)),
                               np.zeros((4, 2)))
    Fbar = sum(np.outer(layer.fast_r[i], layer.fast_s[i]) for i in range(4)) / 4
    assert mean_weight_penalty(layer) == pytest.approx(0.5 * np.sum((layer.W * Fbar) ** 2), rel=1e-12)


def test_sgd_momentum_examples():
    p, v = np.array([1.0]), np.zeros(1)
    sgd_momentum_step(p, np.array([1.0]), v, 0.1, 0.9)
    assert p[0] == pytest.approx(0.9, abs=1e-15)
    sgd_momentum_step(p, np.array([1.0]), v, 0.1, 0.9)
    assert p[0] == pytest.approx(0.71, abs=1e-15)

    p, v = np.array([2.0, -1.0]), np.zeros(2)
    sgd_momentum_step(p, np.array([1.0, 1.0]), v, 0.5, 0.0)
    assert p.tolist() == [1.5, -1.5]

    p, v = np.array([3.0]), np.zeros(1)
    for _ in range(5):
        sgd_momentum_step(p, np.zeros(1), v, 0.1, 0.9)
    assert p[0] == 3.0
    with pytest.raises(ShapeError):
        sgd_momentum_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.9)


def test_lr_schedule_steps():
    cfg = TrainConfig(base_lr=0.1)
    assert lr_at(0, cfg, 100) == pytest.approx(0.1)
    assert lr_at(49, cfg, 100) == pytest.approx(0.1)
    assert lr_at(50, cfg, 100) == pytest.approx(0.01)
    assert lr_at(74, cfg, 100) == pytest.approx(0.01)
    assert lr_at(75, cfg, 100) == pytest.approx(0.001)
    assert lr_at(99, cfg, 100) == pytest.approx(0.001)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_milestones=(0.75, 0.5))
    with pytest.raises(ConfigError):
        TrainConfig(weight_decay=-1.0)
    assert budget_epochs(TrainConfig(epochs=10), True) == 15
    assert budget_epochs(TrainConfig(epochs=10), False) == 10


def test_train_zero_epochs_is_noop():
    data = gen_blobs(2, 20, 2, 0.1, 0)
    model = build_mlp([2, 2], seed=0)
    before = model.state()
    _, hist = train(model, data, TrainConfig(epochs=0, batch_size=8))
    assert hist == []
    assert all(np.array_equal(before[k], v) for k, v in model.state().items())


def test_train_separable_blobs():
    data = gen_blobs(2, 50, 2, 0.2, seed=1, center_scale=5.0)
    model = build_mlp([2, 2], seed=0)
    _, hist = train(model, data, TrainConfig(epochs=50, batch_size=10, base_lr=0.1))
    assert hist[-1]["train_acc"] == 1.0
    assert len(hist) == 50


def test_train_is_deterministic():
    data = gen_blobs(3, 30, 4, 1.0, seed=2)
    runs = []
    for _ in range(2):
        model = build_mlp([4, 8, 3], kind="batch_ensemble", ensemble_size=2, seed=5)
        train(model, data, TrainConfig(epochs=3, batch_size=10, ensemble_size=2, seed=9))
        runs.append(model.state())
    assert all(runs[0][k].tobytes() == runs[1][k].tobytes() for k in runs[0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_reports_divergence():
    data = gen_blobs(2, 20, 2, 1.0, seed=0, center_scale=1e150)
    model = build_mlp([2, 2], seed=0)
    with pytest.raises(TrainingError, match="step"):
        train(model, data, TrainConfig(epochs=5, batch_size=8, base_lr=1e10))


def test_train_rejects_indivisible_batch():
    data = gen_blobs(2, 8, 2, 1.0, seed=0)
    model = build_mlp([2, 2], kind="batch_ensemble", ensemble_size=4, seed=0)
    with pytest.raises(ConfigError, match="not divisible"):
        train(model, data, TrainConfig(epochs=1, batch_size=10, ensemble_size=4))
    # one member at a time has no divisibility constraint
    train(model, data, TrainConfig(epochs=1, batch_size=10, ensemble_size=4), member=2)


def test_train_rejects_mismatched_ensemble_size():
    data = gen_blobs(2, 8, 2, 1.0, seed=0)
    model = build_mlp([2, 2], kind="batch_ensemble", ensemble_size=2, seed=0)
    with pytest.raises(ConfigError):
        train(model, data, TrainConfig(epochs=1, batch_size=8, ensemble_size=4))


def test_single_step_decreases_example_loss():
    g = np.random.default_rng(4)
    for seed in range(5):
        model = build_mlp([4, 6, 3], kind="batch_ensemble", ensemble_size=2, seed=seed)
        x = g.normal(size=(1, 4))
        y = np.array([int(g.integers(0, 3))])
        data = Dataset(np.repeat(x, 2, axis=0), np.repeat(y, 2), 3)
        before = softmax_xent(model.forward(x, [0])[0], y)[0]
        train(model, data, TrainConfig(epochs=1, batch_size=2, ensemble_size=2, base_lr=1e-4,
                                       weight_decay=0.0, momentum=0.0))
        after = softmax_xent(model.forward(x, [0])[0], y)[0]
        assert after < before


def _unit_be_from_dense(dense):
    layers = []
    for layer in dense.layers:
        W = layer.params["W"]
        m, n = W.shape
        layers.append(BatchEnsembleLayer(W, np.ones((1, m)), np.ones((1, n)), layer.params["b"][None, :],
                                         activation=layer.activation))
    return Model(layers)


def test_m1_unit_fast_weights_follow_dense_trajectory():
    data = gen_blobs(3, 20, 4, 1.0, seed=3)
    dense = build_mlp([4, 8, 3], seed=1)
    be = _unit_be_from_dense(dense)
    cfg = TrainConfig(epochs=4, batch_size=12, seed=2)
    frozen_fast = {k: None for k in be.param_keys() if k[2] in ("W", "bias")}
    traj_d, traj_b = [], []
    train(dense, data, cfg, on_step=lambda s, m: traj_d.append(m.state()))
    train(be, data, cfg, trainable=frozen_fast, on_step=lambda s, m: traj_b.append(m.state()))
    assert len(traj_d) == len(traj_b) > 0
    for sd, sb in zip(traj_d, traj_b):
        for i in range(2):
            assert np.max(np.abs(sd[("layer", i, "W")] - sb[("layer", i, "W")])) <= 1e-10
            assert np.max(np.abs(sd[("layer", i, "b")] - sb[("layer", i, "bias")][0])) <= 1e-10


def test_shuffle_seed_does_not_touch_initialization():
    a = build_mlp([3, 5, 2], kind="batch_ensemble", ensemble_size=2, seed=4).state()
    b = build_mlp([3, 5, 2], kind="batch_ensemble", ensemble_size=2, seed=4).state()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    data = gen_blobs(2, 10, 3, 1.0, seed=0)
    m1 = build_mlp([3, 5, 2], kind="batch_ensemble", ensemble_size=2, seed=4)
    m2 = build_mlp([3, 5, 2], kind="batch_ensemble", ensemble_size=2, seed=4)
    train(m1, data, TrainConfig(epochs=1, batch_size=4, ensemble_size=2, seed=1))
    train(m2, data, TrainConfig(epochs=1, batch_size=4, ensemble_size=2, seed=2))
    s1, s2 = m1.state(), m2.state()
    assert any(not np.array_equal(s1[k], s2[k]) for k in s1)


def test_row_restricted_training_leaves_other_rows():
    data = gen_blobs(2, 12, 3, 1.0, seed=0)
    model = build_mlp([3, 4, 2], kind="batch_ensemble", ensemble_size=3, seed=0)
    before = model.state()
    trainable = {k: 1 for k in model.param_keys() if k[2] in ("r", "s", "bias")}
    train(model, data, TrainConfig(epochs=2, batch_size=6, ensemble_size=3), member=1, trainable=trainable)
    after = model.state()
    for k in before:
        if k[2] == "W":
            assert np.array_equal(before[k], after[k])
        else:
            assert np.array_equal(before[k][[0, 2]], after[k][[0, 2]])
            assert not np.array_equal(before[k][1], after[k][1])
