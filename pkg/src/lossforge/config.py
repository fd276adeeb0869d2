"""Experiment configuration: one TOML file, one namedtuple per block.

Unknown blocks or keys, unreadable files and invalid values all raise
`ConfigError`. Relative paths resolve against the config file's directory.
"""

import collections
import hashlib
import logging
import os
import sys

from .augment import NO_AUGMENTATION, PIPELINE_IDS, AugmentParams
from .evolution import EliminationStage, EvolutionConfig
from .evolution import check_config as check_evolution
from .exceptions import ConfigError
from .trainer import MODEL_KINDS, TrainConfig
from .trainer import check_config as check_trainer

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


logger = logging.getLogger('lossforge.config')


DATASET_KINDS = ('blobs', 'shapes', 'cifar')

DatasetBlock = collections.namedtuple('DatasetBlock', [
    'kind', 'n', 'classes', 'dim', 'separation', 'image_size', 'val_size',
    'test_size', 'path', 'seed',
])
DatasetBlock.__new__.__defaults__ = (
    'blobs', 600, 3, 2, 6.0, 16, None, 0, '', 0,
)

AugmentBlock = collections.namedtuple(
    'AugmentBlock', ('augmentations',) + AugmentParams._fields,
)
AugmentBlock.__new__.__defaults__ = (
    (PIPELINE_IDS,) + AugmentParams.__new__.__defaults__
)

TrainerBlock = collections.namedtuple(
    'TrainerBlock', TrainConfig._fields + ('model_kind', 'runs'),
)
TrainerBlock.__new__.__defaults__ = TrainConfig.__new__.__defaults__ + (
    'auto', 5,
)

EvolutionBlock = collections.namedtuple(
    'EvolutionBlock',
    tuple(f for f in EvolutionConfig._fields if f != 'seed'),
)
EvolutionBlock.__new__.__defaults__ = tuple(
    d for f, d in zip(EvolutionConfig._fields,
                      EvolutionConfig.__new__.__defaults__)
    if f != 'seed'
)

ELIMINATION_STAGES = (
    EliminationStage(24, 1, None),
    EliminationStage(12, 1, None),
    EliminationStage(6, 1, None),
    EliminationStage(3, 1, None),
)

EliminationBlock = collections.namedtuple('EliminationBlock', [
    'augmentation', 'stages', 'candidates',
])
EliminationBlock.__new__.__defaults__ = ('base', ELIMINATION_STAGES, ())

AnalysisBlock = collections.namedtuple('AnalysisBlock', [
    'best_k', 'clusters', 'scatter_x', 'scatter_y', 'ledgers',
])
AnalysisBlock.__new__.__defaults__ = (50, 4, 'base', 'all', ())

ExperimentConfig = collections.namedtuple('ExperimentConfig', [
    'dataset', 'augment', 'trainer', 'evolution', 'elimination', 'analysis',
    'output_dir', 'seed', 'jobs', 'base_dir', 'digest',
])

_BLOCKS = collections.OrderedDict([
    ('dataset', DatasetBlock),
    ('augment', AugmentBlock),
    ('trainer', TrainerBlock),
    ('evolution', EvolutionBlock),
    ('elimination', EliminationBlock),
    ('analysis', AnalysisBlock),
])

_TOP_LEVEL = collections.OrderedDict([
    ('output_dir', 'runs'),
    ('seed', 0),
    ('jobs', 1),
])


def _make_block(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError('[{}] must be a table'.format(name))
    unknown = sorted(set(data) - set(cls._fields))
    if unknown:
        raise ConfigError('unknown key(s) in [{}]: {}'.format(
            name, ', '.join(unknown),
        ))
    return cls(**data)


def _parse_stage(i, data):
    if not isinstance(data, dict):
        raise ConfigError('elimination stage {} must be a table'.format(i))
    unknown = sorted(set(data) - set(EliminationStage._fields))
    if unknown:
        raise ConfigError('unknown key(s) in elimination stage {}: {}'.format(
            i, ', '.join(unknown),
        ))
    if 'top_k' not in data:
        raise ConfigError('elimination stage {} needs top_k'.format(i))
    trainer = data.get('trainer') or None
    if trainer is not None:
        bad = sorted(set(trainer) - set(TrainConfig._fields))
        if bad:
            raise ConfigError('unknown trainer key(s) in elimination stage '
                              '{}: {}'.format(i, ', '.join(bad)))
        if 'channels' in trainer:
            trainer = dict(trainer, channels=tuple(trainer['channels']))
    stage = EliminationStage(data['top_k'], data.get('runs', 1), trainer)
    if stage.top_k < 1 or stage.runs < 1:
        raise ConfigError('elimination stage {} needs top_k and runs of at '
                          'least 1'.format(i))
    return stage


def _resolve(base_dir, path):
    if not path:
        return path
    return os.path.normpath(os.path.join(base_dir, os.path.expanduser(path)))


def _coerce(cfg):
    """Normalize TOML values (lists to tuples, paths) after building.
    """
    augment = cfg['augment']._replace(
        augmentations=tuple(cfg['augment'].augmentations),
    )
    trainer = cfg['trainer']._replace(channels=tuple(cfg['trainer'].channels))
    elimination = cfg['elimination']
    stages = elimination.stages
    if stages and isinstance(stages[0], dict):
        stages = tuple(_parse_stage(i, s) for i, s in enumerate(stages))
    elimination = elimination._replace(
        stages=tuple(stages),
        candidates=tuple(_resolve(cfg['base_dir'], p)
                         for p in elimination.candidates),
    )
    analysis = cfg['analysis']._replace(
        ledgers=tuple(_resolve(cfg['base_dir'], p)
                      for p in cfg['analysis'].ledgers),
    )
    dataset = cfg['dataset']._replace(
        path=_resolve(cfg['base_dir'], cfg['dataset'].path),
    )
    cfg.update(dataset=dataset, augment=augment, trainer=trainer,
               elimination=elimination, analysis=analysis)
    cfg['output_dir'] = _resolve(cfg['base_dir'], cfg['output_dir'])


def validate(cfg):
    d = cfg.dataset
    if d.kind not in DATASET_KINDS:
        raise ConfigError('unknown dataset kind {!r}; choose from {}'.format(
            d.kind, ', '.join(DATASET_KINDS),
        ))
    if d.kind == 'cifar':
        if not d.path:
            raise ConfigError('[dataset] path is required for cifar')
        if not os.path.exists(d.path):
            raise ConfigError('dataset path {} does not exist'.format(d.path))
    for aug in cfg.augment.augmentations:
        if aug not in PIPELINE_IDS + (NO_AUGMENTATION,):
            raise ConfigError('unknown augmentation {!r}'.format(aug))
    if cfg.elimination.augmentation not in PIPELINE_IDS + (NO_AUGMENTATION,):
        raise ConfigError('unknown elimination augmentation {!r}'.format(
            cfg.elimination.augmentation,
        ))
    if cfg.trainer.model_kind not in MODEL_KINDS + ('auto',):
        raise ConfigError('unknown model kind {!r}'.format(
            cfg.trainer.model_kind,
        ))
    if cfg.trainer.runs < 1:
        raise ConfigError('[trainer] runs must be at least 1')
    check_trainer(train_config(cfg))
    check_evolution(evolution_config(cfg))
    for path in cfg.elimination.candidates + cfg.analysis.ledgers:
        if not os.path.exists(path):
            raise ConfigError('{} does not exist'.format(path))
    if cfg.jobs < 1:
        raise ConfigError('jobs must be at least 1')
    return cfg


def _parse_value(text):
    try:
        return tomllib.loads('v = {}'.format(text))['v']
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data, overrides):
    """Apply ``block.key=value`` (or ``key=value``) strings to raw TOML data.
    """
    for item in overrides:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError('override {!r} is not key=value'.format(item))
        parts = key.strip().split('.')
        if len(parts) == 1:
            target, leaf = data, parts[0]
        elif len(parts) == 2:
            target, leaf = data.setdefault(parts[0], {}), parts[1]
        else:
            raise ConfigError('override key {!r} is too deep'.format(key))
        target[leaf] = _parse_value(value.strip())
    return data


def build(data, base_dir='.', digest=''):
    unknown = sorted(set(data) - set(_BLOCKS) - set(_TOP_LEVEL))
    if unknown:
        raise ConfigError('unknown top-level key(s): {}'.format(
            ', '.join(unknown),
        ))
    cfg = {'base_dir': base_dir, 'digest': digest}
    try:
        for name, cls in _BLOCKS.items():
            cfg[name] = _make_block(name, cls, data.get(name, {}))
        for key, default in _TOP_LEVEL.items():
            cfg[key] = data.get(key, default)
        _coerce(cfg)
    except TypeError as e:
        raise ConfigError(str(e))
    return validate(ExperimentConfig(**cfg))


def load_config(path=None, overrides=()):
    """Load and validate a config file; `path=None` gives the defaults.
    """
    raw = b''
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path, 'rb') as f:
                raw = f.read()
        except IOError as e:
            raise ConfigError('cannot read config {}: {}'.format(
                path, e.strerror or e,
            ))
        base_dir = os.path.dirname(os.path.abspath(path))
    try:
        data = tomllib.loads(raw.decode('utf-8'))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError('invalid config {}: {}'.format(path, e))
    apply_overrides(data, overrides)
    h = hashlib.sha256(raw)
    for item in overrides:
        h.update(b'\0' + item.encode('utf-8'))
    cfg = build(data, base_dir, h.hexdigest())
    logger.debug('loaded config %s (%s)', path, cfg.digest[:12])
    return cfg


def train_config(cfg):
    return TrainConfig(**{f: getattr(cfg.trainer, f)
                          for f in TrainConfig._fields})


def evolution_config(cfg):
    values = cfg.evolution._asdict()
    values['seed'] = cfg.seed
    return EvolutionConfig(**values)


def augment_params(cfg):
    return AugmentParams(**{f: getattr(cfg.augment, f)
                            for f in AugmentParams._fields})
