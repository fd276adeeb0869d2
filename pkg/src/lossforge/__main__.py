import argparse
import logging
import os
import sys

from .commands import (
    cmd_analyze, cmd_eliminate, cmd_losses_export, cmd_losses_list,
    cmd_phenotype, cmd_rank_random, cmd_search, cmd_train, write_manifest,
)
from .config import load_config
from .exceptions import ConfigError
from .genome import expression
from .losses import PHENOTYPE_SAMPLES, RATIO_LOGS


logger = logging.getLogger('lossforge')


def _common_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('-c', '--config', default=None,
                        help='experiment TOML file (defaults apply without)')
    parser.add_argument('--set', dest='overrides', action='append',
                        default=[], metavar='BLOCK.KEY=VALUE')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--jobs', type=int, default=None)
    parser.add_argument('--output-dir', default=None)
    parser.add_argument('--verbose', action='store_true', default=False)
    parser.add_argument('--debug', action='store_true', default=False)
    return parser


def parse_args(argv=None):
    common = _common_options()
    parser = argparse.ArgumentParser(prog='lossforge')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    p = commands.add_parser('rank-random', parents=[common],
                            help='score a random pool under every augmentation')
    p.add_argument('--pool', type=int, default=None)

    p = commands.add_parser('search', parents=[common],
                            help='regularized evolution per augmentation')
    p.add_argument('--iterations', type=int, default=None)
    p.add_argument('--no-resume', dest='resume', action='store_false',
                   default=True)
    p.add_argument('--baseline', action='store_true', default=False,
                   help='also run random search with the same budget')

    p = commands.add_parser('eliminate', parents=[common],
                            help='staged re-evaluation of search results')
    p.add_argument('candidates', nargs='*',
                   help='run directories or genome files')

    p = commands.add_parser('analyze', parents=[common],
                            help='rank correlation and clustering reports')
    p.add_argument('ledgers', nargs='*')

    p = commands.add_parser('phenotype', parents=[common],
                            help='phenotype curves and surfaces')
    p.add_argument('names', nargs='*', help='built-in names or genome files')
    p.add_argument('--diff', action='store_true', default=False)
    p.add_argument('--samples', type=int, default=PHENOTYPE_SAMPLES)
    p.add_argument('--group', default=None)
    p.add_argument('--ratio-log', choices=RATIO_LOGS, default='ratio')

    p = commands.add_parser('losses', parents=[common],
                            help='list or export the built-in losses')
    p.add_argument('action', choices=('list', 'export'))
    p.add_argument('directory', nargs='?', default=None)
    p.add_argument('--ratio-log', choices=RATIO_LOGS, default='ratio')

    p = commands.add_parser('train', parents=[common],
                            help='train one loss over several seeds')
    p.add_argument('loss', help='built-in name (e.g. A2_0.10) or genome file')
    p.add_argument('--runs', type=int, default=None)
    p.add_argument('--label-smoothing', type=float, default=None)
    p.add_argument('--augmentation', default=None)

    return parser.parse_args(argv)


def configure_logging(options):
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(
            '%(levelname)s %(name)s: %(message)s',
        ))
        logger.addHandler(handler)
    logger.setLevel(logging.WARNING)
    if options.verbose:
        logger.setLevel(logging.INFO)
    if options.debug:
        logger.setLevel(logging.DEBUG)


def _load(options):
    overrides = list(options.overrides)
    if options.seed is not None:
        overrides.append('seed={}'.format(options.seed))
    if options.jobs is not None:
        overrides.append('jobs={}'.format(options.jobs))
    cfg = load_config(options.config, overrides)
    if options.output_dir is not None:
        cfg = cfg._replace(output_dir=os.path.abspath(options.output_dir))
    return cfg


def run(options):
    cfg = _load(options)
    command = options.command
    if command == 'losses':
        if options.action == 'list':
            for name, sign, text in cmd_losses_list(options.ratio_log):
                print('{:<3} {:+d}  {}'.format(name, sign, text))
            return
        directory = options.directory or os.path.join(cfg.output_dir, 'losses')
        for path in cmd_losses_export(directory, options.ratio_log):
            print(path)
        return

    write_manifest(cfg.output_dir, cfg, command)
    if command == 'rank-random':
        table = cmd_rank_random(cfg, options.pool)
        print('scored {} genomes under {}'.format(
            len(table), ', '.join(table.augmentations),
        ))
    elif command == 'search':
        for s in cmd_search(cfg, options.iterations, options.resume,
                            options.baseline):
            line = '{}: {:.4f} after {} iterations  {}'.format(
                s.augmentation, s.best_fitness, s.iterations, s.expression,
            )
            if s.random_best != '':
                line += '  (random search {:.4f})'.format(s.random_best)
            print(line)
    elif command == 'eliminate':
        result = cmd_eliminate(cfg, options.candidates)
        for s in result.survivors:
            print('{:.4f}  {}'.format(s.mean, expression(s.genome)))
        if result.transfer_tau is not None:
            print('transfer tau: {:.4f}'.format(result.transfer_tau))
    elif command == 'analyze':
        report = cmd_analyze(cfg, options.ledgers)
        print('{} genomes, {} augmentations'.format(
            len(report.table), len(report.augmentations),
        ))
    elif command == 'phenotype':
        if not options.names and options.group is None:
            raise ConfigError('phenotype needs loss names or --group')
        paths, peak = cmd_phenotype(
            options.names, cfg.output_dir, diff=options.diff,
            samples=options.samples, group=options.group,
            ratio_log=options.ratio_log,
        )
        for path in paths:
            print(path)
        if peak is not None:
            print('peak {:.4f} at y={:.4f} yhat={:.4f}'.format(
                peak.value, peak.y, peak.yhat,
            ))
    elif command == 'train':
        s = cmd_train(cfg, options.loss, options.runs,
                      options.label_smoothing, options.augmentation)
        line = '{}: val {:.4f} +- {:.4f}'.format(s.label, s.val_mean,
                                                 s.val_std)
        if s.test_mean is not None:
            line += ', test {:.4f} +- {:.4f}'.format(s.test_mean, s.test_std)
        print(line)


def main(argv=None):
    options = parse_args(argv)
    configure_logging(options)
    try:
        run(options)
    except ConfigError as e:
        print('lossforge: error: {}'.format(e), file=sys.stderr)
        return 2
    except Exception:
        logger.exception('%s failed', options.command)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
