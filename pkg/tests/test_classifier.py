import numpy as np
import pytest

from sph_hands.classifier import (
    ArchConfig,
    TrainConfig,
    TrainingError,
    accuracy_report,
    channel_rms,
    cross_entropy,
    ensemble,
    evaluate,
    forward,
    gradient_check,
    init_model,
    load_checkpoint,
    loss_and_grads,
    normalized_adjacency,
    predict_scores,
    save_checkpoint,
    softmax,
    train,
)
from sph_hands.features import FeatureTensor


def _arch(C=3, classes=6, V=8, widths=(8, 8), strides=(1, 2)):
    return ArchConfig(C, classes, V, widths=widths, strides=strides)


def _batch(rng, N=4, M=1, C=3, T=8, V=8):
    return rng.normal(size=(N, M, C, T, V))


def _separable(rng, n=20, T=6, V=5):
    """Two classes whose channel-0 mean has opposite sign."""
    labels = np.arange(n) % 2
    x = rng.normal(scale=0.3, size=(n, 1, 2, T, V))
    x[:, :, 0] += np.where(labels == 1, 1.0, -1.0)[:, None, None, None]
    return FeatureTensor(x, ("a", "b"), labels)


class TestInit:
    def test_zero_forward_finite(self, rng):
        model = init_model(_arch(), rng)
        logits = forward(model, np.zeros((1, 1, 3, 8, 8)))
        assert logits.shape == (1, 6) and np.all(np.isfinite(logits))

    def test_zero_input_equal_logits(self, rng):
        logits = forward(init_model(_arch(), rng), np.zeros((2, 1, 3, 8, 8)))
        assert np.all(logits == logits[0, 0])

    def test_seed_determinism(self):
        a = init_model(_arch(), np.random.default_rng(5))
        b = init_model(_arch(), np.random.default_rng(5))
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_adjacency_offset_zero(self, rng):
        model = init_model(_arch(), rng)
        assert all(np.all(model.params[f"block{i}.A"] == 0) for i in range(2))
        np.testing.assert_allclose(model.adjacency, normalized_adjacency(8))

    @pytest.mark.parametrize("C, classes, V, widths, strides, k", [
        (3, 6, 8, (8, 8), (1, 2), 5),
        (67, 6, 8, (16, 16, 32, 32), (1, 1, 2, 2), 5),
        (3, 60, 25, (4,), (1,), 3),
        (5, 2, 4, (), (), 5),
    ])
    def test_parameter_count_closed_form(self, rng, C, classes, V, widths, strides, k):
        arch = ArchConfig(C, classes, V, widths=widths, strides=strides, kernel=k)
        # hand-expanded sum
        total, cin = 0, C
        for w in widths:
            total += V * V + cin * w + w * w * k + 2 * w + 2 * w
            cin = w
        total += cin * classes + classes
        assert arch.parameter_count() == init_model(arch, rng).parameter_count() == total

    def test_default_parameter_count(self):
        assert ArchConfig(67, 6, 8).parameter_count() == 16502

    @pytest.mark.parametrize("kw", [dict(widths=(4, 4), strides=(1,)), dict(kernel=4), dict(widths=(0,), strides=(1,))])
    def test_bad_arch(self, kw):
        with pytest.raises(ValueError):
            ArchConfig(3, 2, 4, **kw)

    def test_bad_adjacency(self, rng):
        with pytest.raises(ValueError):
            init_model(_arch(), rng, adjacency=np.eye(5))


class TestForward:
    def test_shape_mismatch(self, rng):
        model = init_model(_arch(), rng)
        with pytest.raises(ValueError):
            forward(model, np.zeros((1, 1, 4, 8, 8)))
        with pytest.raises(ValueError):
            forward(model, np.zeros((1, 1, 3, 8, 7)))

    def test_duplicate_sample(self, rng):
        model = init_model(_arch(), rng)
        x = _batch(rng, N=2)
        out = forward(model, np.concatenate([x, x[:1]]))
        np.testing.assert_allclose(out[2], out[0], atol=1e-12)

    def test_permutation(self, rng):
        model = init_model(_arch(), rng)
        x = _batch(rng, N=5)
        perm = rng.permutation(5)
        np.testing.assert_allclose(forward(model, x[perm]), forward(model, x)[perm], atol=1e-12)

    def test_softmax_and_ce(self):
        logits = np.array([[0.0, np.log(3.0)]])
        np.testing.assert_allclose(softmax(logits), [[0.25, 0.75]])
        assert cross_entropy(logits, np.array([1])) == pytest.approx(-np.log(0.75))


class TestGradients:
    def test_head_only_model(self, rng):
        model = init_model(_arch(widths=(), strides=()), rng)
        x, y = _batch(rng), np.array([0, 1, 2, 3])
        assert gradient_check(model, x, y, n_params=200) < 1e-7

    def test_head_only_closed_form(self, rng):
        model = init_model(_arch(widths=(), strides=()), rng)
        x, y = _batch(rng), np.array([0, 1, 2, 3])
        _, grads = loss_and_grads(model, x, y)
        pooled = x.mean(axis=(1, 3, 4))
        d = softmax(pooled @ model.params["head.W"] + model.params["head.b"])
        d[np.arange(4), y] -= 1
        np.testing.assert_allclose(grads["head.W"], pooled.T @ d / 4, atol=1e-14)
        np.testing.assert_allclose(grads["head.b"], d.sum(0) / 4, atol=1e-14)

    def test_two_block_model(self, rng):
        model = init_model(_arch(), rng)
        x, y = _batch(rng), np.array([0, 1, 2, 3])
        assert gradient_check(model, x, y) < 1e-4

    def test_eps_halved_stable(self, rng):
        model = init_model(_arch(), rng)
        x, y = _batch(rng), np.array([0, 1, 2, 3])
        e1 = gradient_check(model, x, y, eps=1e-5, rng=np.random.default_rng(1))
        e2 = gradient_check(model, x, y, eps=5e-6, rng=np.random.default_rng(1))
        assert e2 <= 10 * max(e1, 1e-10)

    def test_multi_body_and_trained_adjacency(self, rng):
        model = init_model(_arch(), rng)
        for i in range(2):
            model.params[f"block{i}.A"] += rng.normal(scale=0.1, size=(8, 8))
        x, y = _batch(rng, N=3, M=2), np.array([0, 5, 2])
        assert gradient_check(model, x, y) < 1e-4


class TestTrain:
    def test_lr_zero_keeps_params(self, rng):
        model = init_model(ArchConfig(2, 2, 5, widths=(4,), strides=(1,)), rng)
        before = {k: v.copy() for k, v in model.params.items()}
        train(model, _separable(rng), cfg=TrainConfig(lr=0.0, epochs=1, warmup_epochs=0, lr_decay_epochs=()))
        assert all(np.array_equal(before[k], model.params[k]) for k in before)

    def test_overfit_separable(self, rng):
        data = _separable(rng)
        model = init_model(ArchConfig(2, 2, 5, widths=(8,), strides=(1,)), rng)
        cfg = TrainConfig(lr=0.1, epochs=50, warmup_epochs=5, lr_decay_epochs=(), batch_size=20)
        _, hist = train(model, data, data, cfg)
        losses = [h.loss for h in hist[:5]]
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert max(h.val_acc for h in hist) == 1.0
        assert evaluate(model, data)["accuracy"] == 1.0

    def test_deterministic_history(self, rng):
        data = _separable(rng)
        arch = ArchConfig(2, 2, 5, widths=(4, 4), strides=(1, 2))
        cfg = TrainConfig(epochs=3, warmup_epochs=1, lr_decay_epochs=(2,), batch_size=6, seed=3)
        runs = []
        for _ in range(2):
            model, hist = train(init_model(arch, np.random.default_rng(0)), data, data, cfg)
            runs.append((model, hist))
        assert runs[0][1] == runs[1][1]
        assert all(np.array_equal(runs[0][0].params[k], runs[1][0].params[k]) for k in runs[0][0].params)

    def test_weight_decay_shrinks_when_gradient_vanishes(self, rng):
        # zero input: every hidden activation sits at zero, so only the (frozen) head sees a gradient
        model = init_model(ArchConfig(2, 2, 5, widths=(4, 4), strides=(1, 1)), rng)
        data = FeatureTensor(np.zeros((4, 1, 2, 6, 5)), ("a", "b"), np.array([0, 1, 0, 1]))
        frozen = ("head.W", "head.b")
        norms = []

        def record(_):
            norms.append(sum(float(np.sum(v ** 2)) for k, v in model.params.items() if k not in frozen))

        _, grads = loss_and_grads(model, data.data, data.labels)
        assert all(np.all(g == 0) for k, g in grads.items() if k not in frozen)
        cfg = TrainConfig(lr=0.05, momentum=0.0, epochs=5, warmup_epochs=0, lr_decay_epochs=(), batch_size=4,
                          standardize=False)
        record(None)
        train(model, data, cfg=cfg, on_epoch=record, frozen=frozen)
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_empty_set(self, rng):
        model = init_model(ArchConfig(2, 2, 5, widths=(4,), strides=(1,)), rng)
        with pytest.raises(TrainingError):
            train(model, FeatureTensor(np.zeros((0, 1, 2, 6, 5)), ("a", "b")), cfg=TrainConfig(epochs=1, lr_decay_epochs=()))

    def test_nan_loss(self, rng):
        model = init_model(ArchConfig(2, 2, 5, widths=(4,), strides=(1,)), rng)
        data = _separable(rng)
        data.data[0, 0, 0, 0, 0] = np.nan
        with pytest.raises(TrainingError):
            train(model, data, cfg=TrainConfig(epochs=1, warmup_epochs=0, lr_decay_epochs=(), standardize=False))

    def test_lr_schedule(self):
        cfg = TrainConfig()
        assert [cfg.lr_at(e) for e in range(5)] == pytest.approx([0.02, 0.04, 0.06, 0.08, 0.1])
        assert cfg.lr_at(34) == pytest.approx(0.1)
        assert cfg.lr_at(35) == pytest.approx(0.01)
        assert cfg.lr_at(64) == pytest.approx(0.001)

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=10, lr_decay_epochs=(10,))

    def test_channel_rms(self):
        x = np.zeros((2, 1, 2, 3, 4))
        x[:, :, 0] = 2.0
        np.testing.assert_array_equal(channel_rms(x), [2.0, 1.0])


class TestEvaluate:
    def test_perfect(self):
        assert accuracy_report(np.array([0, 1, 2]), np.array([0, 1, 2]))["accuracy"] == 1.0

    def test_constant_predictor(self):
        labels = np.repeat(np.arange(6), 5)
        rep = accuracy_report(np.zeros(30, int), labels)
        assert rep["accuracy"] == 5 / 30
        assert rep["per_class"][0] == 1.0 and rep["per_class"][3] == 0.0

    def test_hand_classes_brute_force(self, rng):
        labels = rng.integers(0, 6, 200)
        pred = np.where(rng.random(200) < 0.6, labels, rng.integers(0, 6, 200))
        rep = accuracy_report(pred, labels, hand_classes=[0, 1])
        kept = [(p, l) for p, l in zip(pred, labels) if l in (0, 1)]
        assert rep["hand_accuracy"] == sum(p == l for p, l in kept) / len(kept)

    def test_empty(self, rng):
        model = init_model(ArchConfig(2, 2, 5, widths=(4,), strides=(1,)), rng)
        with pytest.raises(ValueError):
            evaluate(model, FeatureTensor(np.zeros((0, 1, 2, 6, 5)), ("a", "b")))


class TestEnsemble:
    def test_self_ensemble(self, rng):
        s = softmax(rng.normal(size=(30, 4)))
        labels = rng.integers(0, 4, 30)
        acc, pred = ensemble([s, s], labels)
        assert acc == float((s.argmax(1) == labels).mean())
        assert np.array_equal(pred, s.argmax(1))

    def test_weights_select_first(self, rng):
        a, b = softmax(rng.normal(size=(30, 4))), softmax(rng.normal(size=(30, 4)))
        labels = rng.integers(0, 4, 30)
        assert ensemble([a, b], labels, [1, 0])[0] == float((a.argmax(1) == labels).mean())

    def test_complementary_one_hot(self):
        a = np.array([[1.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 1.0], [0.0, 1.0]])
        labels = np.array([0, 1])
        for w in [(1, 1), (2, 1), (1, 2)]:
            fused = [[w[0] * a[i, c] + w[1] * b[i, c] for c in range(2)] for i in range(2)]
            expected = [max(range(2), key=lambda c: (row[c], -c)) for row in fused]  # first max wins
            acc, pred = ensemble([a, b], labels, w)
            assert list(pred) == expected
            assert acc == np.mean([p == l for p, l in zip(expected, labels)])

    @pytest.mark.parametrize("args", [([np.zeros((2, 3)), np.zeros((3, 3))], np.zeros(2, int), None),
                                      ([np.zeros((2, 3))], np.zeros(2, int), [1, 1]),
                                      ([], np.zeros(2, int), None)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            ensemble(*args)


def test_checkpoint_round_trip(tmp_path, rng):
    model = init_model(_arch(), rng)
    model.buffers["input_scale"] = rng.random(3) + 0.5
    save_checkpoint(model, str(tmp_path / "ck"), extra={"seed": 4})
    back, extra = load_checkpoint(str(tmp_path / "ck"))
    assert back.arch == model.arch and extra == {"seed": "4"}
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
    x = FeatureTensor(_batch(rng), ("x", "y", "z"))
    assert np.array_equal(predict_scores(back, x), predict_scores(model, x))
