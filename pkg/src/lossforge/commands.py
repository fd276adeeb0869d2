"""Subcommand bodies. Each takes a loaded `ExperimentConfig` (or plain
arguments), writes its artifacts under the output directory and returns
what it produced.
"""

import collections
import logging
import os
import platform

import numpy as np
import scipy

from . import __version__
from .analysis import (
    ScoreTable, best_k_matrix, correlation_matrix, scatter_rows, write_matrix,
    write_stacked_matrices,
)
from .augment import build_pipeline
from .config import augment_params, evolution_config, train_config
from .data import from_config as dataset_from_config
from .evolution import (
    Evaluations, SearchRun, eliminate, load_hall_of_fame, random_pool,
    random_search,
)
from .exceptions import ConfigError, CorruptGenome
from .genome import canonical_hash, dump, expression, load
from .losses import (
    PHENOTYPE_DELTA, PHENOTYPE_SAMPLES, SURFACE_DELTA,
    binary_phenotype, builtin, builtins, curve_rows, difference_surface,
    grid_peak, grid_rows, group_phenotypes, parse_loss_name, surface,
)
from .trainer import (
    FitnessRecord, TrainingEvaluator, fitness_ledger, resolve_model_kind,
    train,
)
from .utils import atomic_write, dump_json, write_csv


logger = logging.getLogger('lossforge.commands')


RANK_RANDOM_DIR = 'rank_random'

SEARCH_DIR = 'search'

ELIMINATION_DIR = 'elimination'

ANALYSIS_DIR = 'analysis'

PHENOTYPE_DIR = 'phenotype'

TRAIN_DIR = 'train'

ResolvedLoss = collections.namedtuple('ResolvedLoss', [
    'label', 'genome', 'label_smoothing',
])

TrainSummary = collections.namedtuple('TrainSummary', [
    'label', 'records', 'val_mean', 'val_std', 'test_mean', 'test_std',
])


def write_manifest(output_dir, cfg, command):
    manifest = {
        'command': command,
        'config_sha256': cfg.digest,
        'jobs': cfg.jobs,
        'lossforge': __version__,
        'numpy': np.__version__,
        'python': platform.python_version(),
        'scipy': scipy.__version__,
        'seed': cfg.seed,
    }
    path = os.path.join(output_dir, 'manifest.json')
    atomic_write(path, dump_json(manifest))
    return path


def build_dataset(cfg):
    try:
        return dataset_from_config(cfg.dataset, cfg.base_dir)
    except (IOError, OSError) as e:
        raise ConfigError('cannot read dataset: {}'.format(e))


def build_evaluator(cfg, dataset, augmentation):
    pipeline = build_pipeline(augmentation, augment_params(cfg))
    model_kind = resolve_model_kind(cfg.trainer.model_kind, dataset)
    return TrainingEvaluator(dataset, pipeline, model_kind, train_config(cfg))


def _record_of(scored, augmentation, seed):
    if scored.record is not None:
        return scored.record
    return FitnessRecord(canonical_hash(scored.genome), augmentation, seed,
                         0.0, 0, True, False, None)


def cmd_rank_random(cfg, pool_size=None):
    """Score one random pool under every configured augmentation.

    Writes ``ledger.csv`` (one fitness record per genome and augmentation),
    the wide ``scores.csv`` and the pool's genomes. Returns the ScoreTable.
    """
    size = cfg.evolution.random_pool_size if pool_size is None else pool_size
    directory = os.path.join(cfg.output_dir, RANK_RANDOM_DIR)
    dataset = build_dataset(cfg)
    pool = random_pool(size, cfg.seed, cfg.evolution.genome_length)
    for g in pool:
        dump(g, os.path.join(directory, 'genomes', canonical_hash(g) + '.json'))

    ledger = fitness_ledger(os.path.join(directory, 'ledger.csv'))
    ledger.reset()
    records = []
    for aug in cfg.augment.augmentations:
        evaluations = Evaluations(build_evaluator(cfg, dataset, aug),
                                  seed=cfg.seed, jobs=cfg.jobs)
        scored = evaluations.evaluate(pool)
        batch = [_record_of(sc, aug, cfg.seed) for sc in scored]
        ledger.append(r._asdict() for r in batch)
        records.extend(batch)
        logger.info('rank-random %s: %d genomes, best %.4f', aug, len(pool),
                    max(sc.fitness for sc in scored) if scored else 0.0)
    table = ScoreTable.from_records(records)
    table.write(os.path.join(directory, 'scores.csv'))
    return table


SearchSummary = collections.namedtuple('SearchSummary', [
    'augmentation', 'iterations', 'best_fitness', 'best_hash', 'expression',
    'random_best',
])


def cmd_search(cfg, iterations=None, resume=True, baseline=False):
    """One regularized-evolution run per configured augmentation.

    With `baseline`, also runs random search with the same number of
    evaluations and reports its best score next to the evolved one.
    """
    dataset = build_dataset(cfg)
    ecfg = evolution_config(cfg)
    summaries = []
    for aug in cfg.augment.augmentations:
        evaluator = build_evaluator(cfg, dataset, aug)
        directory = os.path.join(cfg.output_dir, SEARCH_DIR, aug)
        result = SearchRun(directory, ecfg, evaluator, jobs=cfg.jobs).run(
            iterations, resume=resume,
        )
        best_genome, best_fitness = result.hall_of_fame.best()
        random_best = ''
        if baseline:
            budget = ecfg.random_pool_size + result.iteration
            ranked = random_search(
                budget, Evaluations(evaluator, seed=cfg.seed, jobs=cfg.jobs),
                seed=cfg.seed, length=ecfg.genome_length,
            )
            write_csv(os.path.join(directory, 'random_search.csv'),
                      ('rank', 'genome_hash', 'fitness', 'expression'),
                      ((i, canonical_hash(sc.genome), sc.fitness,
                        expression(sc.genome))
                       for i, sc in enumerate(ranked)))
            random_best = ranked[0].fitness if ranked else 0.0
        summaries.append(SearchSummary(
            aug, result.iteration, best_fitness, canonical_hash(best_genome),
            expression(best_genome), random_best,
        ))
    write_csv(os.path.join(cfg.output_dir, SEARCH_DIR, 'summary.csv'),
              SearchSummary._fields, summaries)
    return summaries


def _load_genome(path):
    try:
        return load(path)
    except (IOError, OSError) as e:
        raise ConfigError('cannot read genome {}: {}'.format(path, e))
    except CorruptGenome as e:
        raise ConfigError('invalid genome {}: {}'.format(path, e))


def collect_candidates(paths):
    """Genomes and incoming scores from run directories or genome files.

    Run directories contribute their hall of fame; bare genome files have
    no incoming score. Duplicates keep their best score. Returns
    ``(genomes, scores)`` ranked best first, with `scores` None when any
    candidate arrived without one.
    """
    best = collections.OrderedDict()
    for path in paths:
        if os.path.isdir(path):
            if not os.path.exists(os.path.join(path, 'hall_of_fame.csv')):
                raise ConfigError('{} has no hall_of_fame.csv'.format(path))
            entries = load_hall_of_fame(path)
        else:
            entries = [(_load_genome(path), None)]
        for g, fitness in entries:
            h = canonical_hash(g)
            if h in best and (fitness is None or (
                    best[h][1] is not None and best[h][1] >= fitness)):
                continue
            best[h] = (g, fitness)
    entries = list(best.values())
    if all(f is not None for _, f in entries):
        entries.sort(key=lambda e: -e[1])
        return [g for g, _ in entries], [f for _, f in entries]
    return [g for g, _ in entries], None


def _default_candidates(cfg):
    paths = []
    for aug in cfg.augment.augmentations:
        directory = os.path.join(cfg.output_dir, SEARCH_DIR, aug)
        if os.path.exists(os.path.join(directory, 'hall_of_fame.csv')):
            paths.append(directory)
    return paths


def cmd_eliminate(cfg, candidates=()):
    """Staged elimination of search results under one augmentation.
    """
    paths = (list(candidates) or list(cfg.elimination.candidates)
             or _default_candidates(cfg))
    if not paths:
        raise ConfigError('no elimination candidates; run search first or '
                          'name candidate files')
    for path in paths:
        if not os.path.exists(path):
            raise ConfigError('{} does not exist'.format(path))
    genomes, incoming = collect_candidates(paths)
    if not genomes:
        raise ConfigError('no elimination candidates found in {}'.format(
            ', '.join(paths),
        ))
    dataset = build_dataset(cfg)
    evaluator = build_evaluator(cfg, dataset, cfg.elimination.augmentation)
    result = eliminate(genomes, cfg.elimination.stages, evaluator,
                       seed=cfg.seed, jobs=cfg.jobs, incoming=incoming)

    directory = os.path.join(cfg.output_dir, ELIMINATION_DIR)
    rows = []
    for rank, s in enumerate(result.survivors):
        h = canonical_hash(s.genome)
        dump(s.genome, os.path.join(directory, 'genomes', h + '.json'))
        rows.append((rank, h, s.mean, ';'.join(repr(v) for v in s.scores),
                     expression(s.genome)))
    write_csv(os.path.join(directory, 'survivors.csv'),
              ('rank', 'genome_hash', 'mean', 'scores', 'expression'), rows)
    write_csv(os.path.join(directory, 'history.csv'),
              ('genome_hash', 'runs', 'scores'),
              ((h, len(scores), ';'.join(repr(v) for v in scores))
               for h, scores in result.history.items()))
    tau = result.transfer_tau
    atomic_write(os.path.join(directory, 'summary.json'), dump_json({
        'augmentation': cfg.elimination.augmentation,
        'candidates': len(genomes),
        'survivors': [canonical_hash(s.genome) for s in result.survivors],
        'transfer_tau': None if tau is None or np.isnan(tau) else tau,
    }))
    return result


AnalysisReport = collections.namedtuple('AnalysisReport', [
    'table', 'augmentations', 'all_matrix', 'best_matrix', 'scatter',
])


def cmd_analyze(cfg, ledgers=()):
    """Correlation matrices, best-k report and clustered scatter from one
    or more fitness ledgers.
    """
    paths = list(ledgers) or list(cfg.analysis.ledgers) or [
        os.path.join(cfg.output_dir, RANK_RANDOM_DIR, 'ledger.csv'),
    ]
    for path in paths:
        if not os.path.exists(path):
            raise ConfigError('ledger {} does not exist'.format(path))
    table = ScoreTable.from_ledger(*paths)
    augs = [a for a in cfg.augment.augmentations if a in table.augmentations]
    augs += [a for a in table.augmentations if a not in augs]
    k = cfg.analysis.best_k

    directory = os.path.join(cfg.output_dir, ANALYSIS_DIR)
    table.write(os.path.join(directory, 'scores.csv'))
    augs, all_m = correlation_matrix(table, augmentations=augs)
    _, best_m = best_k_matrix(table, k, augmentations=augs)
    write_matrix(os.path.join(directory, 'correlation_all.csv'), augs, all_m)
    write_matrix(os.path.join(directory, 'correlation_best{}.csv'.format(k)),
                 augs, best_m)
    write_stacked_matrices(os.path.join(directory, 'correlation_table.csv'),
                           augs, all_m, best_m, k)
    scatter = scatter_rows(table, cfg.analysis.scatter_x,
                           cfg.analysis.scatter_y, cfg.analysis.clusters)
    write_csv(os.path.join(directory, 'scatter.csv'),
              ('genome_hash', cfg.analysis.scatter_x, cfg.analysis.scatter_y,
               'cluster'), scatter)
    return AnalysisReport(table, augs, all_m, best_m, scatter)


def resolve_loss(text, ratio_log='ratio'):
    """A built-in name (``A2``, ``CE_0.10``) or a genome file path.
    """
    if os.path.exists(text):
        label = os.path.splitext(os.path.basename(text))[0]
        return ResolvedLoss(label, _load_genome(text), 0.0)
    try:
        loss, alpha = parse_loss_name(text)
    except (KeyError, ValueError) as e:
        raise ConfigError('{} is neither a genome file nor a built-in loss '
                          '({})'.format(text, e.args[0] if e.args else e))
    genome = builtin(loss.name, ratio_log).genome
    return ResolvedLoss(text.strip().upper(), genome, alpha)


def cmd_phenotype(names, output_dir, diff=False, samples=PHENOTYPE_SAMPLES,
                  group=None, ratio_log='ratio'):
    """Write phenotype CSVs and return their paths.

    By default each loss gets a binary curve and a surface. `diff` takes
    exactly two losses and writes their normalized difference with the
    peak location marked. `group` writes one CSV of a built-in group's
    binary curves against CE.
    """
    directory = os.path.join(output_dir, PHENOTYPE_DIR)
    written = []
    if group is not None:
        try:
            curves = group_phenotypes(group, samples, PHENOTYPE_DELTA)
        except KeyError as e:
            raise ConfigError(e.args[0])
        header = ['yhat']
        for name in curves:
            header += [name + '_raw', name + '_normalized']
        axis = next(iter(curves.values())).yhat
        rows = []
        for j, yhat in enumerate(axis):
            row = [float(yhat)]
            for c in curves.values():
                row += [float(c.raw[j]), float(c.normalized[j])]
            rows.append(row)
        path = os.path.join(directory, 'group_{}.csv'.format(group.upper()))
        write_csv(path, header, rows)
        written.append(path)

    resolved = [resolve_loss(n, ratio_log) for n in names]
    genomes = [r.genome for r in resolved]
    if diff:
        if len(resolved) != 2:
            raise ConfigError('--diff takes exactly two losses')
        grid = difference_surface(genomes[0], genomes[1], samples,
                                  SURFACE_DELTA)
        peak = grid_peak(grid)
        rows = (
            row + (int(row[0] == peak.y and row[1] == peak.yhat),)
            for row in grid_rows(grid)
        )
        path = os.path.join(directory, '{}_minus_{}.csv'.format(
            resolved[0].label, resolved[1].label,
        ))
        write_csv(path, ('y', 'yhat', 'raw', 'normalized', 'is_peak'), rows)
        logger.info('%s - %s peaks at y=%.4f yhat=%.4f: %.4f',
                    resolved[0].label, resolved[1].label, peak.y, peak.yhat,
                    peak.value)
        return written + [path], peak

    for r, g in zip(resolved, genomes):
        path = os.path.join(directory, r.label + '_binary.csv')
        write_csv(path, ('y', 'yhat', 'raw', 'normalized'),
                  curve_rows(binary_phenotype(g, samples, PHENOTYPE_DELTA)))
        written.append(path)
        path = os.path.join(directory, r.label + '_surface.csv')
        write_csv(path, ('y', 'yhat', 'raw', 'normalized'),
                  grid_rows(surface(g, samples, SURFACE_DELTA)))
        written.append(path)
    return written, None


def cmd_losses_list(ratio_log='ratio'):
    """(name, sign, expression) for every built-in loss.
    """
    return [(b.name, b.genome.sign, expression(b.genome))
            for b in builtins(ratio_log)]


def cmd_losses_export(directory, ratio_log='ratio'):
    paths = []
    for b in builtins(ratio_log):
        path = os.path.join(directory, b.name + '.json')
        dump(b.genome, path)
        paths.append(path)
    return paths


def _mean_std(values):
    if not values:
        return None, None
    return float(np.mean(values)), float(np.std(values))


def cmd_train(cfg, loss, runs=None, label_smoothing=None, augmentation=None):
    """Train one loss over independent seeds and report mean and standard
    deviation of validation (and, with a test split, test) accuracy.
    """
    resolved = resolve_loss(loss)
    runs = cfg.trainer.runs if runs is None else runs
    if runs < 1:
        raise ConfigError('runs must be at least 1')
    alpha = label_smoothing
    if alpha is None:
        alpha = resolved.label_smoothing or cfg.trainer.label_smoothing
    augmentation = augmentation or cfg.elimination.augmentation
    dataset = build_dataset(cfg)
    evaluator = build_evaluator(cfg, dataset, augmentation)
    tcfg = evaluator.cfg._replace(label_smoothing=alpha)

    records = []
    for run in range(runs):
        result = train(resolved.genome, evaluator.model_kind, dataset,
                       evaluator.pipeline, tcfg, cfg.seed + run,
                       evaluate_test=True)
        records.append(result.record)
        logger.info('%s run %d: best val acc %.4f', resolved.label, run,
                    result.record.best_val_acc)
    val_mean, val_std = _mean_std([
        0.0 if r.degenerate else r.best_val_acc for r in records
    ])
    test_mean, test_std = _mean_std([
        r.test_acc for r in records if r.test_acc is not None
    ])
    summary = TrainSummary(resolved.label, records, val_mean, val_std,
                           test_mean, test_std)

    directory = os.path.join(cfg.output_dir, TRAIN_DIR)
    stem = '{}_{}'.format(resolved.label, augmentation)
    ledger = fitness_ledger(os.path.join(directory, stem + '.csv'))
    ledger.reset()
    ledger.append(r._asdict() for r in records)
    atomic_write(os.path.join(directory, stem + '.json'), dump_json({
        'augmentation': augmentation,
        'genome_hash': canonical_hash(resolved.genome),
        'label_smoothing': alpha,
        'loss': resolved.label,
        'runs': runs,
        'test_mean': test_mean,
        'test_std': test_std,
        'val_mean': val_mean,
        'val_std': val_std,
    }))
    return summary
