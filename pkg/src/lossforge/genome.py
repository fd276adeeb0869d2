"""Loss genomes: expression graphs of free-floating hidden state nodes.

A genome is a fixed-length list of nodes. Every node applies one search
space operation to the inputs ``y`` / ``yhat`` or to earlier nodes, so the
graph is acyclic by construction. One node is the root; its elementwise
output is averaged and multiplied by the genome's sign to give the loss.
Nodes that the root does not reach are inactive and carried along untouched.
"""

import collections
import functools
import hashlib
import json
import logging
import os

import numpy as np

from .exceptions import CorruptGenome, DegenerateLoss, GenomeParseError
from .numerics import ALL_OPS, EPS, get_kernel
from .utils import make_rng


logger = logging.getLogger('lossforge.genome')


GENOME_LENGTH = 10

SCHEMA_VERSION = 1

GENOME_CACHE_SIZE = 4096

COMMUTATIVE_OPS = frozenset(['add', 'mul', 'max', 'min'])

MUTATIONS = ('op', 'rewire', 'root', 'sign')


SourceRef = collections.namedtuple('SourceRef', ['kind', 'index'])

Y = SourceRef('y', None)

YHAT = SourceRef('yhat', None)


def node_ref(index):
    return SourceRef('node', int(index))


HiddenStateNode = collections.namedtuple(
    'HiddenStateNode', ['op', 'in_a', 'in_b'],
)


def _check_source(src, position):
    if src.kind in ('y', 'yhat'):
        return
    if src.kind != 'node':
        raise CorruptGenome('node {}: unknown source kind {!r}'.format(
            position, src.kind,
        ))
    if not 0 <= src.index < position:
        raise CorruptGenome('node {} reads node {}; only earlier nodes are '
                            'allowed'.format(position, src.index))


class LossGenome(object):
    """An immutable loss genome.

    `nodes` is a sequence of `HiddenStateNode`, `root` an index into it and
    `sign` either +1 or -1.
    """
    __slots__ = ('nodes', 'root', 'sign')

    def __init__(self, nodes, root, sign):
        nodes = tuple(HiddenStateNode(*n) for n in nodes)
        if len(nodes) < 1:
            raise CorruptGenome('genome has no nodes')
        for i, node in enumerate(nodes):
            kernel = get_kernel(node.op)
            _check_source(node.in_a, i)
            if kernel.arity == 2:
                if node.in_b is None:
                    raise CorruptGenome('node {}: binary {} needs in_b'.format(
                        i, node.op,
                    ))
                _check_source(node.in_b, i)
            elif node.in_b is not None:
                raise CorruptGenome('node {}: unary {} has in_b'.format(
                    i, node.op,
                ))
        if not 0 <= root < len(nodes):
            raise CorruptGenome('root {} out of range'.format(root))
        if sign not in (1, -1):
            raise CorruptGenome('sign must be +1 or -1, got {!r}'.format(sign))
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'root', int(root))
        object.__setattr__(self, 'sign', int(sign))

    def __setattr__(self, name, value):
        raise AttributeError('LossGenome is immutable')

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, LossGenome):
            return NotImplemented
        return (self.nodes, self.root, self.sign) == (
            other.nodes, other.root, other.sign,
        )

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    def __hash__(self):
        return hash((self.nodes, self.root, self.sign))

    def __repr__(self):
        return '<LossGenome {} {}>'.format(canonical_hash(self), expression(self))

    def __reduce__(self):
        return (LossGenome, (self.nodes, self.root, self.sign))

    def replace(self, nodes=None, root=None, sign=None):
        return LossGenome(
            self.nodes if nodes is None else nodes,
            self.root if root is None else root,
            self.sign if sign is None else sign,
        )


def _sources(node):
    if node.in_b is None:
        return (node.in_a,)
    return (node.in_a, node.in_b)


def _legal_sources(position):
    return [Y, YHAT] + [node_ref(j) for j in range(position)]


@functools.lru_cache(maxsize=GENOME_CACHE_SIZE)
def active_nodes(g):
    """Indexes of nodes reachable backward from the root, ascending.
    """
    seen = set()
    stack = [g.root]
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        for src in _sources(g.nodes[i]):
            if src.kind == 'node':
                stack.append(src.index)
    return tuple(sorted(seen))


def _canonical_terms(g):
    terms = {}
    for i in active_nodes(g):
        node = g.nodes[i]
        args = [
            terms[src.index] if src.kind == 'node' else src.kind
            for src in _sources(node)
        ]
        if node.op in COMMUTATIVE_OPS:
            args.sort()
        terms[i] = '{}({})'.format(node.op, ','.join(args))
    return terms


@functools.lru_cache(maxsize=GENOME_CACHE_SIZE)
def canonical_hash(g):
    """Hash of the active subgraph and sign.

    Genomes that differ only in inactive nodes, node numbering or argument
    order of commutative operations share a hash.
    """
    text = '{:+d}*{}'.format(g.sign, _canonical_terms(g)[g.root])
    return hashlib.sha1(text.encode('utf-8')).hexdigest()[:16]


_INFIX = {'add': '+', 'sub': '-', 'mul': '*'}


def expression(g):
    """Render the active subgraph as a readable formula.
    """
    rendered = {}
    for i in active_nodes(g):
        node = g.nodes[i]
        args = [
            rendered[src.index] if src.kind == 'node' else src.kind
            for src in _sources(node)
        ]
        if node.op in _INFIX:
            rendered[i] = '({} {} {})'.format(args[0], _INFIX[node.op], args[1])
        else:
            rendered[i] = '{}({})'.format(node.op, ', '.join(args))
    prefix = '-' if g.sign < 0 else ''
    return '{}mean({})'.format(prefix, rendered[g.root])


def _random_node(rng, position):
    op = ALL_OPS[rng.integers(len(ALL_OPS))]
    sources = _legal_sources(position)
    in_a = sources[rng.integers(len(sources))]
    in_b = None
    if get_kernel(op).arity == 2:
        in_b = sources[rng.integers(len(sources))]
    return HiddenStateNode(op, in_a, in_b)


def random_genome(rng_seed, length=GENOME_LENGTH):
    """Sample a genome uniformly over ops, sources, root and sign.
    """
    if length < 2:
        raise ValueError('genome length must be at least 2')
    rng = make_rng(rng_seed)
    nodes = [_random_node(rng, i) for i in range(length)]
    root = int(rng.integers(length))
    sign = 1 if rng.integers(2) else -1
    return LossGenome(nodes, root, sign)


def _choice_excluding(rng, options, current):
    options = [o for o in options if o != current]
    return options[rng.integers(len(options))]


def _mutate_op(g, rng):
    i = int(rng.integers(len(g)))
    node = g.nodes[i]
    op = _choice_excluding(rng, ALL_OPS, node.op)
    in_b = node.in_b
    if get_kernel(op).arity == 2:
        if in_b is None:
            sources = _legal_sources(i)
            in_b = sources[rng.integers(len(sources))]
    else:
        in_b = None
    nodes = list(g.nodes)
    nodes[i] = HiddenStateNode(op, node.in_a, in_b)
    return g.replace(nodes=nodes)


def _mutate_rewire(g, rng):
    i = int(rng.integers(len(g)))
    node = g.nodes[i]
    field = 'in_a'
    if node.in_b is not None and rng.integers(2):
        field = 'in_b'
    src = _choice_excluding(rng, _legal_sources(i), getattr(node, field))
    nodes = list(g.nodes)
    nodes[i] = node._replace(**{field: src})
    return g.replace(nodes=nodes)


def _mutate_root(g, rng):
    return g.replace(root=_choice_excluding(rng, range(len(g)), g.root))


def _mutate_sign(g, rng):
    return g.replace(sign=-g.sign)


_MUTATORS = {
    'op': _mutate_op,
    'rewire': _mutate_rewire,
    'root': _mutate_root,
    'sign': _mutate_sign,
}


def mutate(g, rng_seed, kind=None):
    """Apply exactly one mutation, chosen uniformly unless `kind` is given.
    """
    rng = make_rng(rng_seed)
    if kind is None:
        kind = MUTATIONS[rng.integers(len(MUTATIONS))]
    try:
        mutator = _MUTATORS[kind]
    except KeyError:
        raise ValueError('unknown mutation {!r}'.format(kind))
    child = mutator(g, rng)
    logger.debug('mutation %s: %s -> %s', kind,
                 canonical_hash(g), canonical_hash(child))
    return child


def _check_inputs(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError('y and yhat differ in shape: {} vs {}'.format(
            y.shape, yhat.shape,
        ))
    return y, yhat


def _evaluate(g, y, yhat):
    """Values of all active nodes, keyed by index.
    """
    values = {}

    def lookup(src):
        if src.kind == 'y':
            return y
        if src.kind == 'yhat':
            return yhat
        return values[src.index]

    with np.errstate(all='ignore'):
        for i in active_nodes(g):
            node = g.nodes[i]
            kernel = get_kernel(node.op)
            values[i] = np.broadcast_to(
                kernel.eval(*(lookup(s) for s in _sources(node))), y.shape,
            )
    return values, lookup


def forward(g, y, yhat):
    """Elementwise loss values (before reduction), shaped like the inputs.
    """
    y, yhat = _check_inputs(y, yhat)
    values, _ = _evaluate(g, y, yhat)
    out = np.array(values[g.root], dtype=float)
    if not np.all(np.isfinite(out)):
        raise DegenerateLoss(canonical_hash(g))
    return out


def reduce(t, sign=1):
    """Mean over every element, times the genome sign.
    """
    return float(sign * np.mean(t))


def loss(g, y, yhat):
    return reduce(forward(g, y, yhat), g.sign)


def backward(g, y, yhat):
    """Gradient of the reduced loss with respect to every element of yhat.
    """
    y, yhat = _check_inputs(y, yhat)
    values, lookup = _evaluate(g, y, yhat)
    if not np.all(np.isfinite(values[g.root])):
        raise DegenerateLoss(canonical_hash(g))

    adjoint = {g.root: np.full(y.shape, g.sign / float(y.size))}
    grad = np.zeros(y.shape)
    with np.errstate(all='ignore'):
        for i in reversed(active_nodes(g)):
            upstream = adjoint.pop(i, None)
            if upstream is None:
                continue
            node = g.nodes[i]
            srcs = _sources(node)
            partials = get_kernel(node.op).grad(*(lookup(s) for s in srcs))
            for src, partial in zip(srcs, partials):
                contribution = upstream * partial
                if src.kind == 'node':
                    if src.index in adjoint:
                        adjoint[src.index] = adjoint[src.index] + contribution
                    else:
                        adjoint[src.index] = contribution
                elif src.kind == 'yhat':
                    grad = grad + contribution
    if not np.all(np.isfinite(grad)):
        raise DegenerateLoss(canonical_hash(g), what='gradient')
    return grad


class GenomeBuilder(object):
    """Assemble a genome node by node, padding it with inactive filler.

    ``add`` returns a `SourceRef` to the new node so calls chain naturally::

        b = GenomeBuilder()
        log_p = b.add('ln', YHAT)
        b.build(b.add('mul', Y, log_p), sign=-1)
    """
    # Inactive filler, cycled in order. Fillers only read the inputs, so
    # they never become reachable from a root placed before them.
    FILLER = (
        HiddenStateNode('abs', Y, None),
        HiddenStateNode('add', Y, YHAT),
        HiddenStateNode('square', YHAT, None),
        HiddenStateNode('sub', YHAT, Y),
    )

    def __init__(self, length=GENOME_LENGTH):
        self.length = length
        self.nodes = []

    def add(self, op, in_a, in_b=None):
        self.nodes.append(HiddenStateNode(op, in_a, in_b))
        return node_ref(len(self.nodes) - 1)

    def build(self, root, sign=1):
        if len(self.nodes) > self.length:
            raise CorruptGenome('{} nodes do not fit a genome of length '
                                '{}'.format(len(self.nodes), self.length))
        nodes = list(self.nodes)
        while len(nodes) < self.length:
            nodes.append(self.FILLER[len(nodes) % len(self.FILLER)])
        if isinstance(root, SourceRef):
            root = root.index
        return LossGenome(nodes, root, sign)


# Serialization.

def _encode_source(src):
    if src.kind == 'node':
        return src.index
    return src.kind


def serialize(g):
    nodes = []
    for node in g.nodes:
        entry = collections.OrderedDict([
            ('op', node.op),
            ('in_a', _encode_source(node.in_a)),
        ])
        if node.in_b is not None:
            entry['in_b'] = _encode_source(node.in_b)
        nodes.append(entry)
    data = collections.OrderedDict([
        ('version', SCHEMA_VERSION),
        ('length', len(g)),
        ('nodes', nodes),
        ('root', g.root),
        ('sign', g.sign),
    ])
    return json.dumps(data, indent=2) + '\n'


def _decode_source(value, path):
    if value in ('y', 'yhat'):
        return SourceRef(value, None)
    if isinstance(value, int) and not isinstance(value, bool):
        return node_ref(value)
    raise GenomeParseError('bad source {!r}'.format(value), path)


def _require(mapping, key, path):
    try:
        return mapping[key]
    except KeyError:
        raise GenomeParseError('missing field {!r}'.format(key), path)
    except TypeError:
        raise GenomeParseError('expected an object', path)


def from_data(data):
    """Build a genome from decoded genome JSON.
    """
    if not isinstance(data, dict):
        raise GenomeParseError('expected an object', '$')
    version = _require(data, 'version', '$')
    if version != SCHEMA_VERSION:
        raise GenomeParseError('unsupported version {!r}'.format(version),
                               '$.version')
    length = _require(data, 'length', '$')
    if not isinstance(length, int) or isinstance(length, bool) or length < 2:
        raise GenomeParseError('length must be an integer of at least 2',
                               '$.length')
    entries = _require(data, 'nodes', '$')
    if not isinstance(entries, list) or len(entries) != length:
        raise GenomeParseError('expected {!r} nodes'.format(length), '$.nodes')
    nodes = []
    for i, entry in enumerate(entries):
        path = '$.nodes[{}]'.format(i)
        op = _require(entry, 'op', path)
        if not isinstance(op, str):
            raise GenomeParseError('bad op {!r}'.format(op), path + '.op')
        in_a = _decode_source(_require(entry, 'in_a', path), path + '.in_a')
        in_b = None
        if 'in_b' in entry:
            in_b = _decode_source(entry['in_b'], path + '.in_b')
        nodes.append(HiddenStateNode(op, in_a, in_b))
    root = _require(data, 'root', '$')
    sign = _require(data, 'sign', '$')
    try:
        return LossGenome(nodes, root, sign)
    except (CorruptGenome, TypeError) as e:
        raise GenomeParseError(str(e), '$')


def parse(text):
    try:
        data = json.loads(text)
    except ValueError as e:
        raise GenomeParseError(getattr(e, 'msg', str(e)), getattr(e, 'pos', 0))
    return from_data(data)


def load(path):
    with open(path) as f:
        return parse(f.read())


def dump(g, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        f.write(serialize(g))


__all__ = [
    'EPS', 'GENOME_LENGTH', 'MUTATIONS', 'Y', 'YHAT', 'GenomeBuilder',
    'HiddenStateNode', 'LossGenome', 'SourceRef', 'active_nodes', 'backward',
    'canonical_hash', 'dump', 'expression', 'forward', 'from_data', 'load',
    'loss', 'mutate', 'node_ref', 'parse', 'random_genome', 'reduce',
    'serialize',
]
