"""Regularized (aging) evolution over loss genomes, random search, and the
staged elimination of the best candidates.

An evaluator is any callable ``evaluator(genome, seed)`` returning either a
`FitnessRecord` or a plain number. Failures count as fitness 0.
"""

import collections
import concurrent.futures
import json
import logging
import os
import warnings

import numpy as np

from .analysis import kendall_tau
from .exceptions import ConfigError
from .genome import (
    GENOME_LENGTH, canonical_hash, expression, from_data, load, mutate,
    random_genome,
)
from .genome import serialize as serialize_genome
from .utils import (
    CSVLedger, atomic_write, derive_seed, dump_json, make_rng, write_csv,
)


logger = logging.getLogger('lossforge.evolution')


EvolutionConfig = collections.namedtuple('EvolutionConfig', [
    'population_size', 'tournament_size', 'iterations', 'random_pool_size',
    'seed', 'hall_size', 'checkpoint_every', 'genome_length',
])
EvolutionConfig.__new__.__defaults__ = (20, 5, 200, 200, 0, 100, 10,
                                        GENOME_LENGTH)

Member = collections.namedtuple('Member', [
    'genome', 'fitness', 'counter', 'degenerate',
])

Scored = collections.namedtuple('Scored', [
    'genome', 'fitness', 'degenerate', 'record',
])

StepOutcome = collections.namedtuple('StepOutcome', [
    'population', 'parent', 'child',
])

EliminationStage = collections.namedtuple('EliminationStage', [
    'top_k', 'runs', 'trainer',
])
EliminationStage.__new__.__defaults__ = (1, None)

Survivor = collections.namedtuple('Survivor', ['genome', 'scores', 'mean'])

EliminationResult = collections.namedtuple('EliminationResult', [
    'survivors', 'history', 'transfer_tau',
])

LEDGER_FIELDS = ('iteration', 'parent_hash', 'child_hash', 'fitness',
                 'degenerate')


def check_config(cfg):
    if cfg.population_size < 1:
        raise ConfigError('population_size must be at least 1')
    if not 1 <= cfg.tournament_size <= cfg.population_size:
        raise ConfigError('tournament_size must be in [1, population_size]')
    if cfg.random_pool_size < cfg.population_size:
        raise ConfigError('random_pool_size must be >= population_size')
    if cfg.iterations < 0:
        raise ConfigError('iterations must be non-negative')
    return cfg


# Evaluation.

def _fitness_of(result):
    record = None
    degenerate = False
    if hasattr(result, 'best_val_acc'):
        record = result
        degenerate = bool(result.degenerate)
        fitness = 0.0 if degenerate else float(result.best_val_acc)
    else:
        fitness = float(result)
    if not np.isfinite(fitness):
        return 0.0, True, record
    return fitness, degenerate, record


def _safe_call(evaluator, genome, seed):
    try:
        return _fitness_of(evaluator(genome, seed))
    except Exception as e:
        logger.warning('evaluation of %s failed: %s', canonical_hash(genome), e)
        return 0.0, True, None


_worker_evaluator = None


def _install_worker(evaluator):
    global _worker_evaluator
    _worker_evaluator = evaluator


def _evaluate_in_worker(task):
    genome, seed = task
    return _safe_call(_worker_evaluator, genome, seed)


class Evaluations(object):
    """Front-end for an evaluator: caching, failure handling, and ordered
    evaluation of many genomes over up to `jobs` worker processes.

    Results are keyed by the evaluator's ``cache_key(genome)`` when it has
    one, else by the canonical genome hash.
    """
    def __init__(self, evaluator, seed=0, jobs=1):
        self.evaluator = evaluator
        self.seed = seed
        self.jobs = max(1, int(jobs))
        self.cache = {}
        self.calls = 0

    def key(self, genome):
        cache_key = getattr(self.evaluator, 'cache_key', None)
        if cache_key is not None:
            return cache_key(genome)
        return canonical_hash(genome)

    def _map(self, tasks):
        if self.jobs == 1 or len(tasks) < 2:
            return [_safe_call(self.evaluator, g, s) for g, s in tasks]
        workers = min(self.jobs, len(tasks))
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=workers, initializer=_install_worker,
                initargs=(self.evaluator,)) as executor:
            # map yields in submission order whatever finishes first.
            return list(executor.map(_evaluate_in_worker, tasks))

    def evaluate(self, genomes, seed=None, cached=True):
        """Score `genomes` in order; duplicates are evaluated once.
        """
        seed = self.seed if seed is None else seed
        keys = [self.key(g) for g in genomes]
        pending = collections.OrderedDict()
        for key, g in zip(keys, genomes):
            if (cached and key in self.cache) or key in pending:
                continue
            pending[key] = g
        results = self._map([(g, seed) for g in pending.values()])
        self.calls += len(results)
        fresh = dict(zip(pending, results))
        if cached:
            self.cache.update(fresh)
        out = []
        for key, g in zip(keys, genomes):
            fitness, degenerate, record = (
                fresh[key] if key in fresh else self.cache[key]
            )
            out.append(Scored(g, fitness, degenerate, record))
        return out


def _as_evaluations(evaluator):
    if isinstance(evaluator, Evaluations):
        return evaluator
    return Evaluations(evaluator)


# Population.

class Population(object):
    """Fixed-capacity queue of members ordered by insertion (age).
    """
    def __init__(self, capacity, members=(), counter=0):
        self.capacity = capacity
        self.members = collections.deque(members)
        self.counter = counter

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __repr__(self):
        return '<Population {}/{} best={}>'.format(
            len(self), self.capacity,
            self.best().fitness if self.members else None,
        )

    def insert(self, genome, fitness, degenerate=False):
        """Append a member, evicting the oldest when full. Returns the
        evicted member or None.
        """
        evicted = None
        if len(self.members) >= self.capacity:
            evicted = self.members.popleft()
        self.members.append(Member(genome, fitness, self.counter, degenerate))
        self.counter += 1
        return evicted

    def best(self):
        return _winner(self.members)

    def tournament(self, rng, size):
        index = rng.choice(len(self.members), size=size, replace=False)
        return _winner([self.members[i] for i in sorted(index)])

    def to_data(self):
        return {
            'capacity': self.capacity,
            'counter': self.counter,
            'members': [{
                'genome': json.loads(serialize_genome(m.genome)),
                'fitness': m.fitness,
                'counter': m.counter,
                'degenerate': m.degenerate,
            } for m in self.members],
        }

    @classmethod
    def from_data(cls, data):
        members = [
            Member(from_data(m['genome']), m['fitness'], m['counter'],
                   m['degenerate'])
            for m in data['members']
        ]
        return cls(data['capacity'], members, data['counter'])


def _winner(members):
    """Highest fitness; the oldest member wins ties.
    """
    return max(members, key=lambda m: (m.fitness, -m.counter))


def _rank(scored):
    """Indexes of `scored` by fitness, best first; earlier entries win ties.
    """
    return sorted(range(len(scored)), key=lambda i: (-scored[i].fitness, i))


def random_pool(size, seed, length=GENOME_LENGTH, stream=0):
    return [random_genome((seed, stream, i), length) for i in range(size)]


def seed_population(pool_size, P, evaluator, seed=0, length=GENOME_LENGTH):
    """Evaluate a random pool and keep its best `P` genomes.

    Returns the population and every scored pool member, in pool order.
    Survivors enter the population in pool order.
    """
    if pool_size < P:
        raise ValueError('pool_size must be at least P')
    evaluations = _as_evaluations(evaluator)
    scored = evaluations.evaluate(random_pool(pool_size, seed, length))
    keep = sorted(_rank(scored)[:P])
    pop = Population(P)
    for i in keep:
        pop.insert(scored[i].genome, scored[i].fitness, scored[i].degenerate)
    logger.info('seeded population of %d from %d random genomes (best %.4f)',
                P, pool_size, pop.best().fitness if P else 0.0)
    return pop, scored


def step(pop, cfg, evaluator, rng):
    """One round of tournament, mutation and replace-oldest.
    """
    evaluations = _as_evaluations(evaluator)
    parent = pop.tournament(rng, cfg.tournament_size)
    child_genome = mutate(parent.genome, rng)
    child, = evaluations.evaluate([child_genome])
    pop.insert(child.genome, child.fitness, child.degenerate)
    return StepOutcome(pop, parent, child)


def evolve_step(pop, cfg, evaluator, rng):
    return step(pop, cfg, evaluator, rng).population


class HallOfFame(object):
    """The best distinct genomes (by canonical hash) seen so far.
    """
    def __init__(self, size=100):
        self.size = size
        self.entries = collections.OrderedDict()
        self.seen = 0

    def __len__(self):
        return len(self.ranked())

    def add(self, genome, fitness):
        key = canonical_hash(genome)
        self.seen += 1
        if key in self.entries and self.entries[key][1] >= fitness:
            return
        order = self.entries[key][2] if key in self.entries else self.seen
        self.entries[key] = (genome, fitness, order)
        if len(self.entries) > 4 * self.size:
            self._prune()

    def _prune(self):
        keep = self.ranked()
        self.entries = collections.OrderedDict(
            (canonical_hash(g), self.entries[canonical_hash(g)])
            for g, _ in keep
        )

    def ranked(self):
        """(genome, fitness) pairs, best first, first-seen wins ties.
        """
        ordered = sorted(self.entries.values(), key=lambda e: (-e[1], e[2]))
        return [(g, f) for g, f, _ in ordered[:self.size]]

    def best(self):
        ranked = self.ranked()
        return ranked[0] if ranked else None

    def to_data(self):
        return {
            'seen': self.seen,
            'entries': [
                {'genome': json.loads(serialize_genome(g)), 'fitness': f,
                 'order': o}
                for g, f, o in self.entries.values()
            ],
        }

    def load_data(self, data):
        self.seen = data['seen']
        self.entries = collections.OrderedDict()
        for entry in data['entries']:
            g = from_data(entry['genome'])
            self.entries[canonical_hash(g)] = (g, entry['fitness'],
                                               entry['order'])


def random_search(budget, evaluator, seed=0, length=GENOME_LENGTH):
    """Score `budget` random genomes; returns them ranked best first.
    """
    evaluations = _as_evaluations(evaluator)
    scored = evaluations.evaluate(random_pool(budget, seed, length, stream=1))
    return [scored[i] for i in _rank(scored)]


# Elimination.

def eliminate(candidates, stages, evaluator, seed=0, jobs=1, incoming=None):
    """Re-evaluate candidates over successive stages, keeping the best.

    Each stage runs every survivor `runs` more times with fresh seeds
    (applying the stage's trainer overrides when the evaluator supports
    ``with_config``), ranks survivors by the mean of every score gathered so
    far and keeps the top `top_k`. `incoming` optionally lists the scores
    the candidates arrived with; the result then carries the Kendall tau
    between those and the first stage's scores.
    """
    candidates = list(candidates)
    history = collections.OrderedDict(
        (canonical_hash(g), (g, [])) for g in candidates
    )
    survivors = list(history)
    transfer_tau = None
    for s, stage in enumerate(stages):
        top_k = stage.top_k
        if top_k > len(survivors):
            warnings.warn('stage {} keeps {} but only {} candidates remain; '
                          'passing all through'.format(s, top_k,
                                                       len(survivors)))
            top_k = len(survivors)
        stage_evaluator = evaluator
        if stage.trainer and hasattr(evaluator, 'with_config'):
            stage_evaluator = evaluator.with_config(
                evaluator.cfg._replace(**stage.trainer),
            )
        evaluations = Evaluations(stage_evaluator, jobs=jobs)
        genomes = [history[h][0] for h in survivors]
        for run in range(stage.runs):
            run_seed = derive_seed(seed, s, run)
            scored = evaluations.evaluate(genomes, seed=run_seed, cached=False)
            for h, sc in zip(survivors, scored):
                history[h][1].append(sc.fitness)
        if (s == 0 and incoming is not None and stage.runs > 0
                and len(survivors) > 1):
            first = [history[h][1][0] for h in survivors]
            transfer_tau = kendall_tau(list(incoming), first)
        order = sorted(
            range(len(survivors)),
            key=lambda i: (-np.mean(history[survivors[i]][1]), i),
        )
        survivors = [survivors[i] for i in order[:top_k]]
        logger.info('elimination stage %d: %d survivors', s, len(survivors))
    result = [
        Survivor(history[h][0], list(history[h][1]),
                 float(np.mean(history[h][1])) if history[h][1] else 0.0)
        for h in survivors
    ]
    full = collections.OrderedDict(
        (h, list(scores)) for h, (_, scores) in history.items()
    )
    return EliminationResult(result, full, transfer_tau)


# Resumable search runs.

SearchResult = collections.namedtuple('SearchResult', [
    'population', 'hall_of_fame', 'iteration',
])


class SearchRun(object):
    """A checkpointed regularized-evolution run writing into `directory`.

    Files: ``ledger.csv`` (one row per evaluation, iteration 0 for the
    random pool), ``checkpoint.json`` and ``hall_of_fame.csv`` plus the
    best genomes under ``genomes/``.
    """
    def __init__(self, directory, cfg, evaluator, jobs=1):
        self.directory = directory
        self.cfg = check_config(cfg)
        self.evaluations = Evaluations(evaluator, seed=cfg.seed, jobs=jobs)
        self.ledger = CSVLedger(os.path.join(directory, 'ledger.csv'),
                                LEDGER_FIELDS)
        self.checkpoint_path = os.path.join(directory, 'checkpoint.json')
        self.hall = HallOfFame(cfg.hall_size)

    def _record(self, iteration, parent_hash, scored):
        self.hall.add(scored.genome, scored.fitness)
        return {
            'iteration': iteration,
            'parent_hash': parent_hash,
            'child_hash': canonical_hash(scored.genome),
            'fitness': scored.fitness,
            'degenerate': scored.degenerate,
        }

    def _checkpoint(self, pop, rng, iteration):
        data = {
            'iteration': iteration,
            'population': pop.to_data(),
            'rng_state': rng.bit_generator.state,
            'hall_of_fame': self.hall.to_data(),
        }
        atomic_write(self.checkpoint_path, dump_json(data))

    def _resume(self):
        with open(self.checkpoint_path) as f:
            data = json.load(f)
        pop = Population.from_data(data['population'])
        rng = make_rng((self.cfg.seed, 7))
        rng.bit_generator.state = data['rng_state']
        self.hall.load_data(data['hall_of_fame'])
        iteration = data['iteration']
        self.ledger.truncate(lambda row: int(row['iteration']) <= iteration)
        logger.info('resuming %s at iteration %d', self.directory, iteration)
        return pop, rng, iteration

    def _seed(self):
        self.ledger.reset()
        pop, scored = seed_population(
            self.cfg.random_pool_size, self.cfg.population_size,
            self.evaluations, seed=self.cfg.seed,
            length=self.cfg.genome_length,
        )
        self.ledger.append(self._record(0, '', sc) for sc in scored)
        rng = make_rng((self.cfg.seed, 7))
        self._checkpoint(pop, rng, 0)
        return pop, rng, 0

    def run(self, iterations=None, resume=True):
        """Run to `iterations` (default: the configured count).
        """
        total = self.cfg.iterations if iterations is None else iterations
        if resume and os.path.exists(self.checkpoint_path):
            pop, rng, iteration = self._resume()
        else:
            pop, rng, iteration = self._seed()
        while iteration < total:
            outcome = step(pop, self.cfg, self.evaluations, rng)
            iteration += 1
            self.ledger.append([self._record(
                iteration, canonical_hash(outcome.parent.genome),
                outcome.child,
            )])
            if iteration % self.cfg.checkpoint_every == 0:
                self._checkpoint(pop, rng, iteration)
        self._checkpoint(pop, rng, iteration)
        self.write_hall_of_fame()
        best = self.hall.best()
        if best is not None:
            logger.info('search %s: best %.4f after %d iterations',
                        self.directory, best[1], iteration)
        return SearchResult(pop, self.hall, iteration)

    def write_hall_of_fame(self):
        genome_dir = os.path.join(self.directory, 'genomes')
        os.makedirs(genome_dir, exist_ok=True)
        rows = []
        for rank, (g, fitness) in enumerate(self.hall.ranked()):
            h = canonical_hash(g)
            with open(os.path.join(genome_dir, h + '.json'), 'w') as f:
                f.write(serialize_genome(g))
            rows.append((rank, h, fitness, expression(g)))
        write_csv(os.path.join(self.directory, 'hall_of_fame.csv'),
                  ('rank', 'genome_hash', 'fitness', 'expression'), rows)


def load_hall_of_fame(directory):
    """Genomes and fitnesses listed in a run's ``hall_of_fame.csv``.
    """
    ledger = CSVLedger(os.path.join(directory, 'hall_of_fame.csv'),
                       ('rank', 'genome_hash', 'fitness', 'expression'))
    out = []
    for row in ledger.read():
        g = load(os.path.join(directory, 'genomes',
                              row['genome_hash'] + '.json'))
        out.append((g, float(row['fitness'])))
    return out
