import numpy as np
import pytest

from cirsim.buffers import ReplayBuffer
from cirsim.learner import (
    CheckpointError,
    ModelParams,
    TrainConfig,
    TrainingDivergedError,
    accuracy,
    activations,
    init_params,
    load_checkpoint,
    loss_and_grads,
    predict,
    restore,
    save_checkpoint,
    snapshot,
    train_on_experience,
)
from cirsim.slot_generator import SlotConfig, generate_slot_stream
from cirsim.stream import make_synthetic_dataset


def _loss_at(params, x, y):
    loss, _, _ = loss_and_grads(params, x, y)
    return loss


def _finite_difference_grads(params, x, y, eps=1e-6):
    """Oracle: central differences on every parameter entry."""
    grads_w, grads_b = [], []
    for arrays, grads in ((params.weights, grads_w), (params.biases, grads_b)):
        for arr in arrays:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                up = _loss_at(params, x, y)
                arr[idx] = orig - eps
                down = _loss_at(params, x, y)
                arr[idx] = orig
                g[idx] = (up - down) / (2 * eps)
                it.iternext()
            grads.append(g)
    return grads_w, grads_b


def _rel_error(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def test_gradients_match_central_differences():
    rng = np.random.default_rng(0)
    for trial in range(5):
        params = init_params(4, (6,), 3, "tanh" if trial % 2 else "relu", rng)
        x = rng.normal(size=(7, 4))
        y = rng.integers(0, 3, size=7)
        _, gw, gb = loss_and_grads(params, x, y)
        fw, fb = _finite_difference_grads(params, x, y)
        for analytic, numeric in zip(gw + gb, fw + fb):
            assert _rel_error(analytic, numeric) < 1e-4


def test_bias_gradient_at_zero_weights_is_probs_minus_onehot():
    # with zero weights the softmax is uniform: gradient w.r.t. the logits
    # (= bias entries for a single sample) equals 1/C - onehot
    c = 5
    params = ModelParams(weights=[np.zeros((3, c))], biases=[np.zeros(c)])
    x = np.random.default_rng(1).normal(size=(1, 3))
    y = np.array([2])
    _, _, gb = loss_and_grads(params, x, y)
    expected = np.full(c, 1.0 / c)
    expected[2] -= 1.0
    assert np.allclose(gb[0], expected, atol=1e-12)
    fw, fb = _finite_difference_grads(params, x, y)
    assert np.allclose(gb[0], fb[0], atol=1e-5)


def test_predict_zero_weights_uniform():
    params = ModelParams(weights=[np.zeros((4, 10))], biases=[np.zeros(10)])
    _, probs = predict(params, np.random.default_rng(0).normal(size=(6, 4)))
    assert np.allclose(probs, 0.1)


def test_predict_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    params = init_params(8, (12,), 5, "relu", rng)
    _, probs = predict(params, rng.normal(size=(40, 8)))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(probs >= 0)


def test_predict_dimension_mismatch():
    params = init_params(8, (), 3, "relu", np.random.default_rng(0))
    with pytest.raises(ValueError):
        predict(params, np.zeros((2, 5)))


def test_zero_learning_rate_leaves_parameters_unchanged():
    rng = np.random.default_rng(3)
    params = init_params(4, (8,), 3, "relu", rng)
    before = params.copy()
    x, y = rng.normal(size=(20, 4)), rng.integers(0, 3, size=20)
    train_on_experience(params, x, y, TrainConfig(lr=0.0), np.random.default_rng(0))
    for w0, w1 in zip(before.weights, params.weights):
        assert np.array_equal(w0, w1)
    for b0, b1 in zip(before.biases, params.biases):
        assert np.array_equal(b0, b1)


def test_separable_blobs_reach_high_accuracy():
    # oracle: plain full-batch softmax-regression GD written out here
    train, _ = make_synthetic_dataset(2, 60, 4, 0.2, np.random.default_rng(4))
    x, y = train.features, train.labels

    w = np.zeros((4, 2))
    b = np.zeros(2)
    onehot = np.eye(2)[y]
    for _ in range(200):
        logits = x @ w + b
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        delta = (p - onehot) / len(y)
        w -= 1.0 * (x.T @ delta)
        b -= 1.0 * delta.sum(axis=0)
    oracle_acc = float(((x @ w + b).argmax(axis=1) == y).mean())
    assert oracle_acc >= 0.99

    params = init_params(4, (), 2, "relu", np.random.default_rng(5))
    train_on_experience(
        params, x, y, TrainConfig(lr=0.5, epochs_per_experience=20), np.random.default_rng(6)
    )
    assert accuracy(params, x, y) >= 0.99


def test_naive_forgets_on_class_incremental_stream():
    # heavy per-experience training so the two new classes crowd out the old
    train, test = make_synthetic_dataset(10, 40, 8, 0.8, np.random.default_rng(7))
    stream = generate_slot_stream(train, SlotConfig(5, 2, seed=0))
    params = init_params(8, (16,), 10, "relu", np.random.default_rng(8))
    cfg = TrainConfig(lr=1.0, epochs_per_experience=30)
    rng = np.random.default_rng(9)

    exp0 = stream.experiences[0]
    x0, y0 = train.features[exp0.train_instances], train.labels[exp0.train_instances]
    train_on_experience(params, x0, y0, cfg, rng)
    exp0_classes = sorted(exp0.present_classes)
    mask = np.isin(test.labels, exp0_classes)
    acc_before = accuracy(params, test.features[mask], test.labels[mask])
    assert acc_before >= 0.95

    exp1 = stream.experiences[1]
    x1, y1 = train.features[exp1.train_instances], train.labels[exp1.train_instances]
    train_on_experience(params, x1, y1, cfg, rng)
    acc_after = accuracy(params, test.features[mask], test.labels[mask])
    assert acc_after < 0.15  # collapses toward chance


def test_replay_mix_uses_buffer_samples():
    train, test = make_synthetic_dataset(4, 40, 6, 0.3, np.random.default_rng(10))
    idx = train.per_class_index
    buffer = ReplayBuffer(max_size=80, policy="cb")
    rng = np.random.default_rng(11)
    old = np.concatenate([idx[0], idx[1]])
    buffer.update(old, train.labels[old], rng)

    params = init_params(6, (16,), 4, "relu", np.random.default_rng(12))
    new = np.concatenate([idx[2], idx[3]])
    cfg = TrainConfig(lr=0.2, epochs_per_experience=20, replay_mix=0.5)
    train_on_experience(
        params, train.features[new], train.labels[new], cfg, rng,
        buffer=buffer, dataset=train,
    )
    mask_old = np.isin(test.labels, [0, 1])
    assert accuracy(params, test.features[mask_old], test.labels[mask_old]) >= 0.9


def test_training_rejects_empty_data():
    params = init_params(4, (), 2, "relu", np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_on_experience(
            params, np.empty((0, 4)), np.empty(0, dtype=int), TrainConfig(),
            np.random.default_rng(0),
        )


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_diagnostics():
    rng = np.random.default_rng(13)
    params = init_params(4, (8,), 3, "relu", rng)
    x = rng.normal(size=(30, 4)) * 1e4
    y = rng.integers(0, 3, size=30)
    with pytest.raises(TrainingDivergedError, match="lr="):
        train_on_experience(
            params, x, y, TrainConfig(lr=1e6, epochs_per_experience=50), rng
        )


def test_training_is_deterministic_given_seed():
    train, _ = make_synthetic_dataset(5, 30, 6, 0.3, np.random.default_rng(14))
    outs = []
    for _ in range(2):
        params = init_params(6, (12,), 5, "relu", np.random.default_rng(1))
        train_on_experience(
            params, train.features, train.labels,
            TrainConfig(lr=0.1, epochs_per_experience=3), np.random.default_rng(2),
        )
        outs.append(params)
    for w0, w1 in zip(outs[0].weights, outs[1].weights):
        assert np.array_equal(w0, w1)


def test_activations_expose_each_layer():
    rng = np.random.default_rng(15)
    params = init_params(6, (9, 7), 4, "tanh", rng)
    acts = activations(params, rng.normal(size=(10, 6)))
    assert [a.shape for a in acts] == [(10, 9), (10, 7), (10, 4)]


class TestCheckpoints:
    def test_snapshot_restore_bit_identical(self):
        params = init_params(5, (7,), 3, "relu", np.random.default_rng(0))
        ckpt = snapshot(params, 4)
        params.weights[0][0, 0] += 1.0  # mutate after snapshot
        restored = restore(ckpt)
        assert restored.weights[0][0, 0] != params.weights[0][0, 0]
        ckpt2 = snapshot(params, 5)
        again = restore(ckpt2)
        for w0, w1 in zip(params.weights, again.weights):
            assert np.array_equal(w0, w1)

    def test_checkpoints_differ_after_training(self):
        rng = np.random.default_rng(1)
        params = init_params(4, (), 2, "relu", rng)
        before = snapshot(params, 0)
        x, y = rng.normal(size=(20, 4)), rng.integers(0, 2, size=20)
        train_on_experience(params, x, y, TrainConfig(lr=0.5), rng)
        after = snapshot(params, 1)
        assert not np.array_equal(before.params.weights[0], after.params.weights[0])

    def test_file_round_trip(self, tmp_path):
        params = init_params(5, (7,), 3, "tanh", np.random.default_rng(2))
        path = tmp_path / "ckpt.npz"
        save_checkpoint(snapshot(params, 11, note="x"), path)
        loaded = load_checkpoint(path)
        assert loaded.experience_index == 11
        assert loaded.meta == {"note": "x"}
        assert loaded.params.activation == "tanh"
        for w0, w1 in zip(params.weights, loaded.params.weights):
            assert np.array_equal(w0, w1)

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        params = init_params(5, (7,), 3, "relu", np.random.default_rng(3))
        path = tmp_path / "ckpt.npz"
        save_checkpoint(snapshot(params, 0), path)
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        arrays["w0"] = arrays["w0"] + 1e-3  # tamper with a block, keep the header
        with open(path, "wb") as f:
            np.savez(f, **arrays)
        with pytest.raises(CheckpointError, match="digest"):
            load_checkpoint(path)
