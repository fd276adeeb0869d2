import pickle

import numpy as np
import pytest

from lossforge.exceptions import (
    CorruptGenome, DegenerateLoss, GenomeParseError,
)
from lossforge.genome import (
    GENOME_LENGTH, YHAT, Y, GenomeBuilder, HiddenStateNode, LossGenome,
    active_nodes, backward, canonical_hash, expression, forward, from_data,
    load, dump, loss, mutate, node_ref, parse, random_genome, reduce,
    serialize,
)
from lossforge.losses import builtin
from lossforge.numerics import EPS, UNARY_OPS


def _reachable(g):
    """Active set by recursive descent from the root."""
    out = set()

    def visit(i):
        out.add(i)
        node = g.nodes[i]
        for src in (node.in_a, node.in_b):
            if src is not None and src.kind == 'node':
                visit(src.index)

    visit(g.root)
    return tuple(sorted(out))


def test_builder_pads_to_length(ce_genome):
    assert len(ce_genome) == GENOME_LENGTH
    assert active_nodes(ce_genome) == (0, 1)
    assert ce_genome.sign == -1


def test_ce_forward(ce_genome):
    y = np.array([1.0, 0.0])
    yhat = np.array([0.5, 0.5])
    values = ce_genome.sign * forward(ce_genome, y, yhat)
    np.testing.assert_allclose(values, -y * np.log(0.5 + EPS))


def test_a2_forward_at_one():
    g = builtin('A2').genome
    assert forward(g, np.ones(3), np.ones(3)) == pytest.approx(1.0, rel=1e-6)


def test_y_minus_y_is_zero():
    b = GenomeBuilder()
    g = b.build(b.add('sub', Y, Y))
    y = np.linspace(0, 1, 7)
    np.testing.assert_array_equal(forward(g, y, y), np.zeros(7))


def test_ce_backward(ce_genome):
    n = 4
    grad = backward(ce_genome, np.ones(n), np.full(n, 0.5))
    np.testing.assert_allclose(grad, -1.0 / ((0.5 + EPS) * n))


def test_backward_ignores_unused_yhat():
    b = GenomeBuilder()
    g = b.build(b.add('exp', b.add('abs', Y)))
    grad = backward(g, np.full(5, 0.3), np.full(5, 0.7))
    np.testing.assert_array_equal(grad, np.zeros(5))


def test_reduce():
    assert reduce(np.zeros(4)) == 0.0
    assert reduce(np.array([1.0, 2.0, 3.0])) == 2.0
    assert reduce(np.array([1.0, 2.0, 3.0]), sign=-1) == -2.0


def test_ce_reduce_divides_by_class_count(ce_genome):
    rng = np.random.default_rng(0)
    classes = 4
    logits = rng.standard_normal((8, classes))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = np.eye(classes)[rng.integers(0, classes, size=8)]
    standard = -np.mean(np.sum(y * np.log(probs + EPS), axis=1))
    assert loss(ce_genome, y, probs) == pytest.approx(standard / classes)


def test_forward_is_pure(ce_genome):
    rng = np.random.default_rng(1)
    y, yhat = rng.random(10), rng.random(10)
    a = forward(ce_genome, y, yhat)
    b = forward(ce_genome, y, yhat)
    assert a.tobytes() == b.tobytes()


def test_shape_mismatch(ce_genome):
    with pytest.raises(ValueError):
        forward(ce_genome, np.ones(3), np.ones(4))


def test_overflow_is_degenerate():
    b = GenomeBuilder()
    e = b.add('exp', Y)
    m = b.add('mul', e, e)
    m = b.add('mul', m, m)
    m = b.add('mul', m, m)
    g = b.build(b.add('mul', m, m))
    y = np.full(3, 100.0)
    with pytest.raises(DegenerateLoss) as ctx:
        forward(g, y, y)
    assert ctx.value.genome_hash == canonical_hash(g)


def test_random_genome_is_deterministic():
    assert random_genome(7) == random_genome(7)
    assert random_genome(7) != random_genome(8)


def test_random_genomes_are_valid():
    counts = []
    for seed in range(1000):
        g = random_genome(seed)
        assert len(g) == GENOME_LENGTH
        for i, node in enumerate(g.nodes):
            for src in (node.in_a, node.in_b):
                if src is not None and src.kind == 'node':
                    assert src.index < i
        assert active_nodes(g) == _reachable(g)
        counts.append(len(active_nodes(g)))
    again = [len(active_nodes(random_genome(s))) for s in range(1000)]
    assert counts == again
    assert 1.0 <= np.mean(counts) <= GENOME_LENGTH


def test_mutation_keeps_genomes_valid():
    g = random_genome(0)
    for seed in range(10000):
        child = mutate(g, seed)
        assert isinstance(child, LossGenome)
        assert len(child) == len(g)
        assert active_nodes(child) == _reachable(child)
        g = child


def test_op_mutation_to_binary_fills_in_b():
    b = GenomeBuilder()
    ref = b.add('abs', YHAT)
    for _ in range(GENOME_LENGTH - 1):
        ref = b.add('tanh', ref)
    g = b.build(ref)
    found = False
    for seed in range(300):
        child = mutate(g, seed, kind='op')
        for new in child.nodes:
            if new.op not in UNARY_OPS:
                assert new.in_b is not None
                found = True
            if new.op in UNARY_OPS:
                assert new.in_b is None
    assert found


def test_root_mutation_recomputes_active_set():
    g = random_genome(3)
    for seed in range(50):
        child = mutate(g, seed, kind='root')
        assert child.root != g.root
        assert active_nodes(child) == _reachable(child)


def test_sign_mutation():
    g = random_genome(4)
    assert mutate(g, 0, kind='sign').sign == -g.sign


def test_unknown_mutation():
    with pytest.raises(ValueError):
        mutate(random_genome(0), 0, kind='swap')


def test_genomes_are_immutable(ce_genome):
    with pytest.raises(AttributeError):
        ce_genome.root = 3


def test_genomes_pickle(ce_genome):
    assert pickle.loads(pickle.dumps(ce_genome)) == ce_genome


@pytest.mark.parametrize('nodes, root, sign', [
    ([HiddenStateNode('exp', node_ref(0), None)], 0, 1),
    ([HiddenStateNode('exp', Y, YHAT)], 0, 1),
    ([HiddenStateNode('add', Y, None)], 0, 1),
    ([HiddenStateNode('cosh', Y, None)], 0, 1),
    ([HiddenStateNode('exp', Y, None)], 1, 1),
    ([HiddenStateNode('exp', Y, None)], 0, 0),
])
def test_invalid_genomes(nodes, root, sign):
    with pytest.raises(CorruptGenome):
        LossGenome(nodes, root, sign)


def test_hash_ignores_inactive_nodes_and_commutative_order():
    b1 = GenomeBuilder()
    g1 = b1.build(b1.add('add', Y, b1.add('ln', YHAT)), sign=1)
    b2 = GenomeBuilder()
    b2.add('sin', Y)
    ln = b2.add('ln', YHAT)
    g2 = b2.build(b2.add('add', ln, Y), sign=1)
    assert canonical_hash(g1) == canonical_hash(g2)
    assert canonical_hash(g1) != canonical_hash(g1.replace(sign=-1))


def test_hash_respects_order_of_noncommutative_ops():
    b1 = GenomeBuilder()
    g1 = b1.build(b1.add('sub', Y, YHAT))
    b2 = GenomeBuilder()
    g2 = b2.build(b2.add('sub', YHAT, Y))
    assert canonical_hash(g1) != canonical_hash(g2)


def test_expression(ce_genome):
    assert expression(ce_genome) == '-mean((y * ln(yhat)))'


def test_a2_structure():
    g = builtin('A2').genome
    assert expression(g) == 'mean(safe_div(y, bessel_i0e(ln(yhat))))'
    assert [g.nodes[i].op for i in active_nodes(g)] == [
        'ln', 'bessel_i0e', 'safe_div',
    ]


@pytest.mark.parametrize('name', ['CE', 'A2', 'R2', 'M0'])
def test_serialize_parse(name):
    g = builtin(name).genome
    assert parse(serialize(g)) == g


def test_serialize_parse_random_genomes():
    for seed in range(1000):
        g = random_genome((5, seed))
        again = parse(serialize(g))
        assert again == g
        assert canonical_hash(again) == canonical_hash(g)


def _forward_or_degenerate(g, y, yhat):
    try:
        return forward(g, y, yhat)
    except DegenerateLoss:
        return None


def test_inactive_edits_leave_forward_unchanged():
    rng = np.random.default_rng(2)
    y = rng.random(12)
    yhat = rng.random(12)
    edited = 0
    for seed in range(200):
        g = random_genome((8, seed))
        active = set(active_nodes(g))
        expected = _forward_or_degenerate(g, y, yhat)
        for i in range(len(g)):
            if i in active:
                continue
            nodes = list(g.nodes)
            nodes[i] = HiddenStateNode('exp', YHAT, None)
            other = g.replace(nodes=nodes)
            assert active_nodes(other) == active_nodes(g)
            result = _forward_or_degenerate(other, y, yhat)
            if expected is None:
                assert result is None
            else:
                np.testing.assert_array_equal(result, expected)
            edited += 1
    assert edited > 0


def test_dump_and_load(tmp_path, ce_genome):
    path = str(tmp_path / 'nested' / 'ce.json')
    dump(ce_genome, path)
    assert load(path) == ce_genome


def test_truncated_text():
    text = serialize(builtin('A2').genome)
    with pytest.raises(GenomeParseError) as ctx:
        parse(text[:len(text) // 2])
    assert ctx.value.position > 0


def test_bad_field_reports_path():
    data = {
        'version': 1, 'length': 2, 'root': 0, 'sign': 1,
        'nodes': [{'op': 'exp', 'in_a': 'z'}, {'op': 'exp', 'in_a': 'y'}],
    }
    with pytest.raises(GenomeParseError) as ctx:
        from_data(data)
    assert ctx.value.position == '$.nodes[0].in_a'


def test_single_node_genome_is_rejected():
    data = {
        'version': 1, 'length': 1, 'root': 0, 'sign': 1,
        'nodes': [{'op': 'exp', 'in_a': 'y'}],
    }
    with pytest.raises(GenomeParseError) as ctx:
        from_data(data)
    assert ctx.value.position == '$.length'


@pytest.mark.parametrize('op', [['exp'], {'name': 'exp'}, 3, None])
def test_non_string_op_is_a_parse_error(op):
    data = {
        'version': 1, 'length': 2, 'root': 1, 'sign': 1,
        'nodes': [{'op': op, 'in_a': 'y'}, {'op': 'exp', 'in_a': 0}],
    }
    with pytest.raises(GenomeParseError) as ctx:
        from_data(data)
    assert ctx.value.position == '$.nodes[0].op'


def test_non_integer_root_is_a_parse_error():
    data = {
        'version': 1, 'length': 2, 'root': [1], 'sign': 1,
        'nodes': [{'op': 'exp', 'in_a': 'y'}, {'op': 'exp', 'in_a': 0}],
    }
    with pytest.raises(GenomeParseError):
        from_data(data)


def test_forward_reference_is_rejected():
    data = {
        'version': 1, 'length': 2, 'root': 0, 'sign': 1,
        'nodes': [{'op': 'exp', 'in_a': 1}, {'op': 'exp', 'in_a': 'y'}],
    }
    with pytest.raises(GenomeParseError):
        from_data(data)


SMOOTH_OPS = frozenset([
    'neg', 'sigmoid', 'softplus', 'erf', 'erfc', 'sin', 'arcsinh', 'tanh',
    'sigmoid_grad', 'tanh_grad', 'add', 'sub', 'scaled_div',
])


def _smooth_genomes(count):
    out = []
    seed = 0
    while len(out) < count:
        g = random_genome((11, seed))
        seed += 1
        if all(g.nodes[i].op in SMOOTH_OPS for i in active_nodes(g)):
            out.append(g)
    return out


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    checked = 0
    for g in _smooth_genomes(50):
        y = rng.uniform(0.05, 0.95, size=20)
        yhat = rng.uniform(0.05, 0.95, size=20)
        values = forward(g, y, yhat)
        if np.max(np.abs(values)) > 1e3:
            continue
        h = 1e-5
        fd = g.sign * (forward(g, y, yhat + h) - forward(g, y, yhat - h))
        fd /= 2 * h * y.size
        np.testing.assert_allclose(backward(g, y, yhat), fd, rtol=1e-4,
                                   atol=1e-8)
        checked += 1
    assert checked >= 40
