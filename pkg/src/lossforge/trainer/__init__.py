"""Surrogate training: fit a small classifier with a genome as its loss and
score the genome by the best validation accuracy reached.
"""

import collections
import logging

import numpy as np

from ..exceptions import ConfigError, DegenerateLoss
from ..genome import backward, canonical_hash, loss
from ..utils import CSVLedger, derive_seed, make_rng, text_digest
from .models import (
    MODEL_KINDS, MLP, TinyConvNet, build_model, model_backward, model_forward,
    softmax,
)
from .optimizers import OPTIMIZERS, Adam, SGDNesterov, build_optimizer, lr_at


logger = logging.getLogger('lossforge.trainer')


TrainConfig = collections.namedtuple('TrainConfig', [
    'steps', 'batch_size', 'peak_lr', 'warmup_steps', 'optimizer',
    'momentum', 'beta1', 'beta2', 'eval_every', 'early_stop_step',
    'early_stop_threshold', 'label_smoothing', 'hidden', 'channels',
])
TrainConfig.__new__.__defaults__ = (
    2000, 128, 0.005, 200, 'adam',
    0.9, 0.9, 0.999, 100, None,
    None, 0.0, 32, (8, 16),
)

FitnessRecord = collections.namedtuple('FitnessRecord', [
    'genome_hash', 'augmentation', 'seed', 'best_val_acc', 'best_step',
    'degenerate', 'early_stopped', 'test_acc',
])

TrainResult = collections.namedtuple('TrainResult', [
    'record', 'losses', 'model',
])

LEDGER_FIELDS = FitnessRecord._fields


def check_config(cfg):
    if cfg.batch_size < 1:
        raise ConfigError('batch_size must be at least 1')
    if cfg.steps < 1:
        raise ConfigError('steps must be at least 1')
    if not 0 <= cfg.warmup_steps < cfg.steps:
        raise ConfigError('warmup_steps must be in [0, steps)')
    if cfg.eval_every < 1:
        raise ConfigError('eval_every must be at least 1')
    if not 0.0 <= cfg.label_smoothing < 1.0:
        raise ConfigError('label_smoothing must be in [0, 1)')
    if cfg.optimizer not in OPTIMIZERS:
        raise ConfigError('unknown optimizer {!r}'.format(cfg.optimizer))
    return cfg


def early_stop_rule(cfg, classes):
    """The (step, threshold) pair at which slow starters are abandoned.

    Defaults to a quarter of the schedule and chance accuracy plus 0.05.
    A threshold of 0 disables early stopping.
    """
    step = cfg.early_stop_step
    if step is None:
        step = max(1, cfg.steps // 4)
    threshold = cfg.early_stop_threshold
    if threshold is None:
        threshold = 1.0 / classes + 0.05
    return step, threshold


def label_smooth(labels, alpha):
    if not alpha:
        return labels
    classes = labels.shape[1]
    return labels * (1.0 - alpha) + alpha / classes


def accuracy(model, x, labels):
    if len(x) == 0:
        return 0.0
    probs = model.predict(x)
    return float(np.mean(np.argmax(probs, axis=1) == np.argmax(labels, axis=1)))


def resolve_model_kind(kind, dataset):
    if kind in (None, 'auto'):
        return 'tiny_convnet' if dataset.is_image else 'mlp'
    return kind


def config_digest(cfg):
    return text_digest(repr(tuple(cfg)))


def _degenerate(genome_hash, pipeline, seed, losses, model, step):
    logger.debug('genome %s degenerate at step %d', genome_hash, step)
    record = FitnessRecord(genome_hash, pipeline.id, seed, 0.0, 0, True,
                           False, None)
    return TrainResult(record, losses, model)


def train(genome, model_kind, dataset, pipeline, cfg, seed,
          evaluate_test=False):
    """Train a fresh model with `genome` as the loss.

    Returns a `TrainResult` holding the fitness record, the per-step
    training losses and the trained model.
    """
    check_config(cfg)
    if len(dataset.splits['val']) == 0:
        raise ConfigError('dataset {} has no validation split'.format(
            dataset.name,
        ))
    genome_hash = canonical_hash(genome)
    rng = make_rng(derive_seed(seed, genome_hash, pipeline.id))
    model = build_model(
        resolve_model_kind(model_kind, dataset), dataset.input_shape,
        dataset.classes, hidden=cfg.hidden, channels=cfg.channels,
    )
    model.initialize(rng)
    optimizer = build_optimizer(cfg, model.layout.size)
    x_train, y_train = dataset.split('train')
    x_val, y_val = dataset.split('val')
    check_step, threshold = early_stop_rule(cfg, dataset.classes)
    batch = min(cfg.batch_size, len(x_train))

    losses = []
    best_acc, best_step = 0.0, 0
    for step in range(cfg.steps):
        index = rng.choice(len(x_train), size=batch, replace=False)
        xb, yb = pipeline(x_train[index].astype(float), y_train[index], rng)
        yb = label_smooth(yb, cfg.label_smoothing)
        probs, cache = model.forward(xb)
        try:
            losses.append(loss(genome, yb, probs))
            dprobs = backward(genome, yb, probs)
        except DegenerateLoss:
            return _degenerate(genome_hash, pipeline, seed, losses, model, step)
        grads = model.backward(cache, dprobs)
        if not np.all(np.isfinite(grads)):
            return _degenerate(genome_hash, pipeline, seed, losses, model, step)
        optimizer.step(model.params, grads, lr_at(step, cfg))
        if not np.all(np.isfinite(model.params)):
            return _degenerate(genome_hash, pipeline, seed, losses, model, step)

        done = step + 1
        if done % cfg.eval_every and done not in (check_step, cfg.steps):
            continue
        acc = accuracy(model, x_val, y_val)
        if acc > best_acc:
            best_acc, best_step = acc, done
        if done == check_step and acc < threshold:
            logger.debug('genome %s early-stopped at step %d (%.3f < %.3f)',
                         genome_hash, done, acc, threshold)
            record = FitnessRecord(genome_hash, pipeline.id, seed, acc, done,
                                   False, True, None)
            return TrainResult(record, losses, model)

    test_acc = None
    if evaluate_test and len(dataset.splits['test']):
        test_acc = accuracy(model, *dataset.split('test'))
    record = FitnessRecord(genome_hash, pipeline.id, seed, best_acc,
                           best_step, False, False, test_acc)
    logger.debug('genome %s on %s: best val acc %.4f at step %d',
                 genome_hash, pipeline.id, best_acc, best_step)
    return TrainResult(record, losses, model)


def train_and_score(genome, model_kind, dataset, pipeline, cfg, seed):
    return train(genome, model_kind, dataset, pipeline, cfg, seed).record


class TrainingEvaluator(object):
    """Picklable ``evaluator(genome, seed) -> FitnessRecord`` bundling the
    dataset, augmentation pipeline, model kind and trainer config.
    """
    def __init__(self, dataset, pipeline, model_kind, cfg):
        self.dataset = dataset
        self.pipeline = pipeline
        self.model_kind = model_kind
        self.cfg = check_config(cfg)

    def __repr__(self):
        return '<TrainingEvaluator {} {} {}>'.format(
            self.dataset.name, self.pipeline.id, self.model_kind,
        )

    @property
    def augmentation(self):
        return self.pipeline.id

    def cache_key(self, genome):
        return (
            canonical_hash(genome), self.pipeline.id, self.dataset.name,
            config_digest(self.cfg), self.model_kind,
        )

    def with_config(self, cfg):
        return TrainingEvaluator(
            self.dataset, self.pipeline, self.model_kind, cfg,
        )

    def __call__(self, genome, seed):
        return train_and_score(
            genome, self.model_kind, self.dataset, self.pipeline, self.cfg,
            seed,
        )


def fitness_ledger(path):
    return CSVLedger(path, LEDGER_FIELDS)


def record_from_row(row):
    """Rebuild a `FitnessRecord` from a ledger CSV row.
    """
    test_acc = row.get('test_acc')
    return FitnessRecord(
        row['genome_hash'], row['augmentation'], int(row['seed']),
        float(row['best_val_acc']), int(row['best_step']),
        row['degenerate'] in ('1', 'True', 'true'),
        row.get('early_stopped') in ('1', 'True', 'true'),
        float(test_acc) if test_acc not in (None, '') else None,
    )


__all__ = [
    'FitnessRecord', 'LEDGER_FIELDS', 'MODEL_KINDS', 'MLP', 'OPTIMIZERS',
    'Adam', 'SGDNesterov', 'TinyConvNet', 'TrainConfig', 'TrainResult',
    'TrainingEvaluator', 'accuracy', 'build_model', 'check_config',
    'early_stop_rule', 'fitness_ledger', 'label_smooth', 'lr_at',
    'model_backward', 'model_forward', 'record_from_row', 'softmax', 'train',
    'train_and_score',
]
