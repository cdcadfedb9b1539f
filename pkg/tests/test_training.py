import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from laficmil.attention import AttentionConfig
from laficmil.corpus import Bag, generate_correlated_task
from laficmil.errors import NonFiniteError, ShapeError
from laficmil.model import ModelConfig, empty_params, init_params
from laficmil.training import (
    AdamState,
    TrainConfig,
    accuracy,
    adam_step,
    evaluate,
    gradient_check,
    loss,
    micro_f1,
    params_fingerprint,
    train,
)


def small_cfg(task="binary", labels=1):
    return ModelConfig(AttentionConfig(8, 2, 4), 1, 12, labels, task)


class TestLoss:
    def test_binary_zero_logit(self):
        value, grad = loss([0.0], [1], "binary")
        assert value == pytest.approx(math.log(2), abs=1e-12)
        assert grad[0] == pytest.approx(-0.5)

    @pytest.mark.parametrize("k", [2, 3, 7])
    def test_uniform_multiclass(self, k):
        for target in range(k):
            assert loss(np.full(k, 1.3), target, "multiclass")[0] == pytest.approx(math.log(k))

    def test_multilabel_saturating(self):
        value, grad = loss([-5.0, 5.0], [0, 1], "multilabel")
        assert value == pytest.approx(2 * math.log1p(math.exp(-5)), rel=1e-12)
        assert value == pytest.approx(0.0134, abs=5e-5)
        np.testing.assert_allclose(grad, [0.0067, -0.0067], atol=5e-5)

    def test_errors(self):
        with pytest.raises(ValueError):
            loss([0.0, 1.0], 2, "multiclass")
        with pytest.raises(ShapeError):
            loss([0.0, 1.0], [1], "multilabel")
        with pytest.raises(ValueError):
            loss([0.0], [1], "regression")

    def test_large_logits_stay_finite(self):
        value, grad = loss([1e4, -1e4], [0, 1], "multilabel")
        assert value == pytest.approx(2e4)
        np.testing.assert_allclose(grad, [1.0, -1.0])
        assert loss([800.0, 0.0], 0, "multiclass")[0] == pytest.approx(0.0, abs=1e-300)

    @pytest.mark.parametrize("task,target", [("binary", [1]), ("multilabel", [0, 1, 1]),
                                             ("multiclass", 2)])
    def test_gradient_matches_finite_differences(self, task, target):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.normal(size=1 if task == "binary" else 3) * 3
            _, grad = loss(z, target, task)
            h = 1e-6
            for i in range(z.size):
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                fd = (loss(zp, target, task)[0] - loss(zm, target, task)[0]) / (2 * h)
                assert abs(fd - grad[i]) <= 1e-6 * max(abs(fd), abs(grad[i]), 1e-3)

    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.integers(0, 2))
    def test_non_negative(self, z, k):
        assert loss(z, k, "multiclass")[0] >= 0
        assert loss(z, [k % 2, 1, 0], "multilabel")[0] >= 0

    def test_saturation_limit(self):
        assert loss([40.0], [1], "binary")[0] <= 1e-6
        assert loss([40.0, -40.0], 0, "multiclass")[0] <= 1e-6


def scalar_params(w):
    """A ModelParams-shaped container whose only live entry is the MLP bias."""
    p = empty_params(ModelConfig(AttentionConfig(2, 1, 1), 0, 2, 1, "binary"))
    p.mlp_b[...] = w
    return p


class TestAdam:
    def test_zero_gradient(self):
        p = init_params(small_cfg(), 0)
        before = params_fingerprint(p)
        state = AdamState.for_params(p)
        adam_step(p, p.zeros_like(), state, TrainConfig())
        assert params_fingerprint(p) == before and state.step == 1

    def test_first_step(self):
        p = scalar_params(0.0)
        g = p.zeros_like()
        g.mlp_b[...] = 1.0
        adam_step(p, g, AdamState.for_params(p), TrainConfig(learning_rate=1e-3))
        assert p.mlp_b[0] == pytest.approx(-1e-3, rel=1e-7)

    def test_quadratic_reference_recurrence(self):
        p = scalar_params(1.0)
        state = AdamState.for_params(p)
        cfg = TrainConfig(learning_rate=0.1)
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 101):
            g = p.zeros_like()
            g.mlp_b[...] = 2 * p.mlp_b
            adam_step(p, g, state, cfg)
            gw = 2 * w
            m = 0.9 * m + 0.1 * gw
            v = 0.999 * v + 0.001 * gw * gw
            w -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p.mlp_b[0] == pytest.approx(w, abs=1e-12)
        assert abs(w) < 0.1

    def test_sign_flip_symmetry(self):
        rng = np.random.default_rng(1)
        hist = rng.normal(size=30)
        a, b = scalar_params(0.0), scalar_params(0.0)
        sa, sb = AdamState.for_params(a), AdamState.for_params(b)
        for g in hist:
            ga, gb = a.zeros_like(), b.zeros_like()
            ga.mlp_b[...] = g
            gb.mlp_b[...] = -g
            adam_step(a, ga, sa, TrainConfig())
            adam_step(b, gb, sb, TrainConfig())
            assert a.mlp_b[0] == -b.mlp_b[0]

    def test_non_finite_gradient(self):
        p = scalar_params(0.0)
        g = p.zeros_like()
        g.mlp_b[...] = np.nan
        state = AdamState.for_params(p)
        with pytest.raises(NonFiniteError, match="mlp_b"):
            adam_step(p, g, state, TrainConfig())
        assert state.step == 0 and p.mlp_b[0] == 0.0

    @pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(adam_beta1=1.0),
                                    dict(adam_eps=0.0), dict(task="x")])
    def test_config_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestMetrics:
    def test_all_correct(self):
        assert accuracy([1, 0, 1], [1, 0, 1]) == 100.0

    def test_two_of_three(self):
        assert accuracy([1, 0, 0], [1, 0, 1]) == pytest.approx(66.67, abs=0.01)

    def test_empty_multilabel(self):
        assert micro_f1(np.zeros((3, 2)), np.zeros((3, 2))) == 100.0

    def test_no_predicted_positives(self):
        assert micro_f1(np.zeros((2, 2)), [[1, 0], [0, 0]]) == 0.0

    def test_micro_f1_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            shape = (int(rng.integers(1, 5)), int(rng.integers(1, 4)))
            pred, target = rng.integers(0, 2, shape), rng.integers(0, 2, shape)
            tp = fp = fn = 0
            for i, j in product(range(shape[0]), range(shape[1])):
                tp += pred[i, j] and target[i, j]
                fp += pred[i, j] and not target[i, j]
                fn += target[i, j] and not pred[i, j]
            expected = 100.0 if tp + fp + fn == 0 else 100.0 * 2 * tp / (2 * tp + fp + fn)
            assert micro_f1(pred, target) == pytest.approx(expected)

    def test_evaluate_empty(self):
        cfg = small_cfg()
        with pytest.raises(ValueError):
            evaluate([], init_params(cfg, 0), cfg)

    def test_evaluate_bias_only_model(self):
        # zeroed head plus a positive bias predicts 1 for every bag
        cfg = small_cfg()
        p = init_params(cfg, 0)
        p.mlp_w[...] = 0.0
        p.mlp_b[...] = 1.0
        bags = [Bag(str(i), np.ones((2, 8)), y) for i, y in enumerate([1, 1, 0])]
        assert evaluate(bags, p, cfg) == pytest.approx(66.67, abs=0.01)

    def test_evaluate_multilabel(self):
        cfg = small_cfg("multilabel", 2)
        p = init_params(cfg, 0)
        p.mlp_w[...] = 0.0
        p.mlp_b[...] = [1.0, -1.0]
        bags = [Bag("a", np.ones((2, 8)), [1, 0]), Bag("b", np.ones((2, 8)), [1, 1])]
        # tp=2, fn=1
        assert evaluate(bags, p, cfg) == pytest.approx(80.0)


class TestGradientHarness:
    def test_quadratic_probe(self):
        x = np.array([0.3, -1.2, 2.0])
        worst = gradient_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": 2 * x})
        assert worst["x"] <= 1e-9

    def test_zero_both_sides(self):
        x = np.array([1.0, 2.0])
        assert gradient_check(lambda: 5.0, {"x": x}, {"x": np.zeros(2)})["x"] == 0.0


class TestTrain:
    def one_bag(self):
        return [Bag("only", np.random.default_rng(0).normal(size=(4, 8)), 1)]

    def test_zero_learning_rate_constant_loss(self):
        cfg = small_cfg()
        p = init_params(cfg, 0)
        rep = train(self.one_bag(), p, cfg, TrainConfig(learning_rate=0.0, epochs=4))
        assert len({r.mean_loss for r in rep.epochs}) == 1

    def test_memorizes_one_bag(self):
        cfg = small_cfg()
        p = init_params(cfg, 0)
        rep = train(self.one_bag(), p, cfg, TrainConfig(learning_rate=1e-2, epochs=200))
        assert rep.epochs[-1].mean_loss < 0.01

    def test_deterministic(self):
        cfg = small_cfg()
        data = generate_correlated_task(12, 4, 8, seed=3)
        runs = []
        for _ in range(2):
            p = init_params(cfg, 1)
            rep = train(data, p, cfg, TrainConfig(learning_rate=3e-3, epochs=3, seed=5))
            runs.append((params_fingerprint(p), rep.lines()))
        assert runs[0] == runs[1]

    def test_seed_changes_order(self):
        cfg = small_cfg()
        data = generate_correlated_task(12, 4, 8, seed=3)
        prints = []
        for seed in (0, 1):
            p = init_params(cfg, 1)
            train(data, p, cfg, TrainConfig(learning_rate=3e-3, epochs=1, seed=seed))
            prints.append(params_fingerprint(p))
        assert prints[0] != prints[1]

    def test_empty_dataset(self):
        cfg = small_cfg()
        with pytest.raises(ValueError):
            train([], init_params(cfg, 0), cfg, TrainConfig())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_names_bag(self):
        cfg = small_cfg()
        bag = Bag("poisoned", np.full((2, 8), np.inf), 1)
        with pytest.raises(NonFiniteError, match="poisoned"):
            train([bag], init_params(cfg, 0), cfg, TrainConfig(epochs=1))

    def test_report_lines(self):
        cfg = small_cfg()
        rep = train(self.one_bag(), init_params(cfg, 0), cfg, TrainConfig(epochs=2))
        lines = rep.lines().splitlines()
        assert len(lines) == 2 and lines[0].startswith('{"epoch": 0')
        assert rep.summary()["epochs"] == 2
