import pickle

import numpy as np
import pytest

import lossforge.trainer
from lossforge.augment import NO_AUGMENTATION, build_pipeline
from lossforge.data import gaussian_blobs
from lossforge.exceptions import ConfigError
from lossforge.genome import Y, GenomeBuilder, loss
from lossforge.losses import builtin
from lossforge.trainer import (
    MLP, Adam, SGDNesterov, TinyConvNet, TrainConfig, TrainingEvaluator,
    build_model, check_config, early_stop_rule, label_smooth, lr_at,
    record_from_row, train,
)


SMALL = TrainConfig(steps=60, batch_size=32, warmup_steps=6, eval_every=20,
                    early_stop_threshold=0.0)


def test_lr_schedule():
    cfg = TrainConfig(steps=100, warmup_steps=10, peak_lr=1.0)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(5, cfg) == pytest.approx(0.5)
    assert lr_at(10, cfg) == pytest.approx(1.0)
    assert lr_at(55, cfg) == pytest.approx(0.5)
    assert lr_at(100, cfg) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        lr_at(101, cfg)


def test_lr_without_warmup():
    cfg = TrainConfig(steps=10, warmup_steps=0, peak_lr=0.1)
    assert lr_at(0, cfg) == pytest.approx(0.1)


def test_adam_first_step_moves_by_lr():
    params = np.array([1.0, -1.0, 2.0])
    Adam(3).step(params, np.array([0.5, -3.0, 1e-2]), 0.1)
    np.testing.assert_allclose(params, [0.9, -0.9, 1.9], atol=1e-6)


def test_sgd_nesterov_decreases_a_quadratic():
    params = np.array([4.0, -2.0])
    opt = SGDNesterov(2, momentum=0.9)
    for _ in range(100):
        opt.step(params, 2.0 * params, 0.01)
    assert np.linalg.norm(params) < 0.5


def test_zero_weights_give_uniform_output():
    model = MLP((2,), 3)
    probs, _ = model.forward(np.random.default_rng(0).random((5, 2)))
    np.testing.assert_allclose(probs, 1.0 / 3)


def test_single_sample_batch():
    model = build_model('tiny_convnet', (6, 6, 1), 4)
    model.initialize(np.random.default_rng(0))
    probs, _ = model.forward(np.zeros((1, 6, 6, 1)))
    assert probs.shape == (1, 4)
    assert probs.sum() == pytest.approx(1.0)


def test_input_shape_mismatch():
    model = MLP((2,), 3)
    with pytest.raises(ConfigError):
        model.forward(np.zeros((4, 3)))
    with pytest.raises(ConfigError):
        TinyConvNet((16,), 3)
    with pytest.raises(ConfigError):
        build_model('resnet', (2,), 3)


@pytest.mark.parametrize('model', [
    MLP((3,), 4, hidden=5),
    MLP((4, 4, 1), 3, hidden=4),
    TinyConvNet((5, 5, 2), 3, channels=(3, 4)),
])
def test_model_gradients_match_finite_differences(model):
    rng = np.random.default_rng(0)
    model.initialize(rng)
    x = rng.random((4,) + model.input_shape)
    upstream = rng.standard_normal((4, model.classes))

    def objective():
        probs, _ = model.forward(x)
        return np.sum(upstream * probs)

    _, cache = model.forward(x)
    grads = model.backward(cache, upstream)
    h = 1e-6
    for i in rng.choice(model.layout.size, size=20, replace=False):
        saved = model.params[i]
        model.params[i] = saved + h
        up = objective()
        model.params[i] = saved - h
        down = objective()
        model.params[i] = saved
        assert grads[i] == pytest.approx((up - down) / (2 * h), rel=1e-4,
                                         abs=1e-7)


def test_label_smoothing():
    smoothed = label_smooth(np.eye(3), 0.3)
    np.testing.assert_allclose(np.diag(smoothed), 0.8)
    np.testing.assert_allclose(smoothed.sum(axis=1), 1.0)
    labels = np.eye(3)
    assert label_smooth(labels, 0.0) is labels


def test_early_stop_defaults():
    assert early_stop_rule(TrainConfig(), 4) == (500, pytest.approx(0.3))
    cfg = TrainConfig(early_stop_step=7, early_stop_threshold=0.0)
    assert early_stop_rule(cfg, 4) == (7, 0.0)


@pytest.mark.parametrize('changes', [
    {'batch_size': 0},
    {'steps': 0},
    {'warmup_steps': 2000},
    {'label_smoothing': 1.0},
    {'optimizer': 'rmsprop'},
    {'eval_every': 0},
])
def test_bad_train_config(changes):
    with pytest.raises(ConfigError):
        check_config(TrainConfig()._replace(**changes))


def test_training_is_deterministic(ce_genome, tiny_blobs):
    pipeline = build_pipeline(NO_AUGMENTATION)
    a = train(ce_genome, 'mlp', tiny_blobs, pipeline, SMALL, seed=3)
    b = train(ce_genome, 'mlp', tiny_blobs, pipeline, SMALL, seed=3)
    assert a.record == b.record
    assert a.losses == b.losses
    np.testing.assert_array_equal(a.model.params, b.model.params)
    assert len(a.losses) == SMALL.steps
    assert 0.0 <= a.record.best_val_acc <= 1.0


def test_constant_loss_is_early_stopped(constant_genome):
    dataset = gaussian_blobs(120, 3, 2, 0.0, seed=0)
    cfg = SMALL._replace(early_stop_step=10, early_stop_threshold=0.9)
    result = train(constant_genome, 'mlp', dataset,
                   build_pipeline(NO_AUGMENTATION), cfg, seed=0)
    assert result.record.early_stopped
    assert not result.record.degenerate
    assert result.record.best_step == 10
    assert len(result.losses) == 10
    assert all(v == 0.0 for v in result.losses)


def test_overflowing_loss_is_degenerate(tiny_blobs):
    b = GenomeBuilder()
    e = b.add('exp', b.add('reciprocal', Y))
    m = b.add('mul', e, e)
    m = b.add('mul', m, m)
    m = b.add('mul', m, m)
    genome = b.build(b.add('mul', m, m))
    result = train(genome, 'mlp', tiny_blobs, build_pipeline('none'), SMALL,
                   seed=0)
    assert result.record.degenerate
    assert result.record.best_val_acc == 0.0
    assert result.losses == []


def test_missing_validation_split(ce_genome):
    dataset = gaussian_blobs(30, 3, 2, 6.0, seed=0, val_size=0)
    with pytest.raises(ConfigError):
        train(ce_genome, 'mlp', dataset, build_pipeline('none'), SMALL, 0)


def test_test_accuracy_is_reported(ce_genome):
    dataset = gaussian_blobs(150, 3, 2, 6.0, seed=0, test_size=30)
    result = train(ce_genome, 'mlp', dataset, build_pipeline('none'), SMALL,
                   seed=0, evaluate_test=True)
    assert result.record.test_acc is not None


def test_convnet_trains_on_shapes(ce_genome, tiny_shapes):
    cfg = SMALL._replace(steps=6, warmup_steps=1, eval_every=3,
                         batch_size=8, channels=(2, 3))
    record = train(ce_genome, 'auto', tiny_shapes, build_pipeline('base'),
                   cfg, seed=0).record
    assert record.augmentation == 'base'
    assert not record.degenerate


def test_evaluator(ce_genome, tiny_blobs):
    evaluator = TrainingEvaluator(tiny_blobs, build_pipeline('none'), 'mlp',
                                  SMALL)
    clone = pickle.loads(pickle.dumps(evaluator))
    assert clone(ce_genome, 1) == evaluator(ce_genome, 1)
    other = evaluator.with_config(SMALL._replace(steps=30))
    assert other.cache_key(ce_genome) != evaluator.cache_key(ce_genome)
    assert evaluator.augmentation == 'none'


def test_record_from_row():
    row = {
        'genome_hash': 'abc', 'augmentation': 'base', 'seed': '4',
        'best_val_acc': '0.75', 'best_step': '100', 'degenerate': 'False',
        'early_stopped': 'True', 'test_acc': '',
    }
    record = record_from_row(row)
    assert record.seed == 4
    assert record.best_val_acc == 0.75
    assert not record.degenerate
    assert record.early_stopped
    assert record.test_acc is None


@pytest.mark.slow
@pytest.mark.parametrize('name, floor', [('CE', 0.95), ('A2', 0.90)])
def test_builtin_losses_learn_blobs(name, floor, blobs):
    cfg = TrainConfig(steps=600, warmup_steps=60)
    record = train(builtin(name).genome, 'mlp', blobs, build_pipeline('none'),
                   cfg, seed=0).record
    assert record.best_val_acc >= floor


def test_softmax_rows_sum_to_one_during_training(ce_genome, tiny_blobs,
                                                 monkeypatch):
    seen = []

    def recording_loss(genome, y, yhat):
        seen.append(yhat.sum(axis=1))
        return loss(genome, y, yhat)

    monkeypatch.setattr(lossforge.trainer, 'loss', recording_loss)
    train(ce_genome, 'mlp', tiny_blobs, build_pipeline('none'), SMALL, seed=0)
    assert len(seen) == SMALL.steps
    for sums in seen:
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_softmax_rows_sum_to_one_with_large_weights():
    model = MLP((2,), 5, hidden=8)
    model.initialize(np.random.default_rng(0))
    model.params *= 1e4
    probs, _ = model.forward(np.random.default_rng(1).normal(size=(16, 2)))
    assert np.all(np.isfinite(probs))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_smoothed_cross_entropy_grows_with_alpha(ce_genome):
    rng = np.random.default_rng(0)
    labels = np.eye(4)[rng.integers(0, 4, size=10)]
    logits = rng.normal(size=(10, 4)) + 3.0 * labels
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    values = [loss(ce_genome, label_smooth(labels, alpha), probs)
              for alpha in np.linspace(0.0, 0.9, 10)]
    assert np.all(np.diff(values) > 0.0)


@pytest.mark.parametrize('seed', range(3))
def test_cross_entropy_is_never_early_stopped(ce_genome, blobs, seed):
    cfg = TrainConfig(steps=200, warmup_steps=20, eval_every=50,
                      early_stop_threshold=1.0 / 3 + 0.1)
    assert early_stop_rule(cfg, blobs.classes) == (50, pytest.approx(0.4333,
                                                                      abs=1e-4))
    record = train(ce_genome, 'mlp', blobs, build_pipeline('none'), cfg,
                   seed=seed).record
    assert not record.early_stopped
    assert not record.degenerate
