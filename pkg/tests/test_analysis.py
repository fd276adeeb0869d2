import itertools

import numpy as np
import pytest
from scipy import stats

from lossforge.analysis import (
    ScoreTable, agglomerative_cluster, best_k_intersection, best_k_matrix,
    correlation_matrix, kendall_tau, scatter_rows, top_k,
)
from lossforge.trainer import FitnessRecord, fitness_ledger


def tau_b_by_hand(a, b):
    concordant = discordant = ties_a = ties_b = 0
    pairs = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        pairs += 1
        da = np.sign(a[i] - a[j])
        db = np.sign(b[i] - b[j])
        if da == 0:
            ties_a += 1
        if db == 0:
            ties_b += 1
        if da * db > 0:
            concordant += 1
        elif da * db < 0:
            discordant += 1
    return (concordant - discordant) / np.sqrt(
        (pairs - ties_a) * (pairs - ties_b))


def test_tau_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [1, 2, 4, 3]) == pytest.approx(0.6667,
                                                                    abs=1e-4)


@pytest.mark.parametrize('n', [2, 3, 4, 5, 6])
def test_tau_matches_brute_force_over_permutations(n):
    base = list(range(n))
    for perm in itertools.permutations(base):
        assert kendall_tau(base, perm) == pytest.approx(
            tau_b_by_hand(base, perm))


def _tied_list(rng, n):
    while True:
        a = rng.integers(0, 4, size=n)
        if len(set(a)) > 1:
            return a


def test_tau_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = _tied_list(rng, 10)
        b = _tied_list(rng, 10)
        expected = tau_b_by_hand(a, b)
        assert kendall_tau(a, b) == pytest.approx(expected)
        assert kendall_tau(a, b) == pytest.approx(stats.kendalltau(a, b)[0])


def test_tau_of_a_constant_list():
    with pytest.warns(UserWarning):
        assert np.isnan(kendall_tau([0.5, 0.5, 0.5], [1, 2, 3]))


def test_tau_input_errors():
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


def _table():
    table = ScoreTable()
    for i, acc in enumerate([0.1, 0.5, 0.3, 0.9, 0.7]):
        h = 'g{}'.format(i)
        table.set(h, 'base', acc)
        table.set(h, 'copy', acc)
        table.set(h, 'flipped', 1.0 - acc)
    table.set('g9', 'base', 0.2)
    return table


def test_correlation_matrix():
    augs, m = correlation_matrix(_table())
    assert augs == ['base', 'copy', 'flipped']
    np.testing.assert_allclose(np.diag(m), 1.0)
    np.testing.assert_allclose(m, m.T)
    assert m[0, 1] == pytest.approx(1.0)
    assert m[0, 2] == pytest.approx(-1.0)


def test_score_table_rejects_bad_accuracy():
    with pytest.raises(ValueError):
        ScoreTable().set('g', 'base', 1.5)


def test_top_k_breaks_ties_by_hash():
    table = ScoreTable({'b': {'base': 0.5}, 'a': {'base': 0.5},
                        'c': {'base': 0.9}})
    assert top_k(table, 'base', 2) == ['c', 'a']


def test_best_k_intersection():
    table = _table()
    assert best_k_intersection(table, 'base', 'copy', 2) == {'g3', 'g4'}
    assert best_k_intersection(table, 'base', 'flipped', 2) == set()
    augs, m = best_k_matrix(table, 3)
    # base and copy share {g1, g3, g4}; base and flipped share only g1.
    assert m[0, 1] == pytest.approx(1.0)
    assert np.isnan(m[0, 2])


def test_from_records_averages_and_zeroes_degenerate():
    records = [
        FitnessRecord('g', 'base', 0, 0.6, 10, False, False, None),
        FitnessRecord('g', 'base', 1, 0.8, 10, False, False, None),
        FitnessRecord('g', 'mixup', 0, 0.9, 10, True, False, None),
    ]
    table = ScoreTable.from_records(records)
    assert table.get('g', 'base') == pytest.approx(0.7)
    assert table.get('g', 'mixup') == 0.0
    assert table.get('g', 'cutout') is None


def test_from_ledger(tmp_path):
    path = str(tmp_path / 'ledger.csv')
    ledger = fitness_ledger(path)
    ledger.append([
        FitnessRecord('g1', 'base', 0, 0.25, 5, False, False, None)._asdict(),
        FitnessRecord('g2', 'base', 0, 0.75, 5, False, True, 0.5)._asdict(),
    ])
    table = ScoreTable.from_ledger(path)
    assert table.column('base') == {'g1': 0.25, 'g2': 0.75}
    out = str(tmp_path / 'scores.csv')
    table.write(out)
    with open(out) as f:
        assert f.readline().strip() == 'genome_hash,base'


def test_cluster_singletons():
    labels = agglomerative_cluster([[0.0], [5.0], [1.0]], k=3)
    assert labels.tolist() == [0, 1, 2]


def test_cluster_two_blobs():
    rng = np.random.default_rng(0)
    left = rng.normal(0.0, 0.1, size=(10, 2))
    right = rng.normal(5.0, 0.1, size=(10, 2))
    points = np.concatenate([left, right])[rng.permutation(20)]
    labels = agglomerative_cluster(points, k=2)
    right_side = points[:, 0] > 2.5
    assert len(set(labels[right_side])) == 1
    assert len(set(labels[~right_side])) == 1
    assert labels[right_side][0] != labels[~right_side][0]


def _average_linkage_by_hand(points, k):
    clusters = [[i] for i in range(len(points))]

    def gap(a, b):
        return np.mean([np.linalg.norm(points[i] - points[j])
                        for i in a for j in b])

    while len(clusters) > k:
        best = None
        for x in range(len(clusters)):
            for y in range(x + 1, len(clusters)):
                d = gap(clusters[x], clusters[y])
                if best is None or d < best[0]:
                    best = (d, x, y)
        _, x, y = best
        clusters[x] = sorted(clusters[x] + clusters[y])
        del clusters[y]
    labels = np.empty(len(points), dtype=int)
    numbering = {}
    for p in range(len(points)):
        owner = next(c[0] for c in clusters if p in c)
        labels[p] = numbering.setdefault(owner, len(numbering))
    return labels


@pytest.mark.parametrize('seed', range(20))
def test_cluster_matches_average_linkage_by_hand(seed):
    rng = np.random.default_rng(seed)
    points = rng.random((8, 2))
    for k in (1, 2, 3, 4):
        np.testing.assert_array_equal(
            agglomerative_cluster(points, k),
            _average_linkage_by_hand(points, k),
        )


@pytest.mark.parametrize('points, k, expected', [
    ([[0.0], [1.0], [2.0]], 2, [0, 0, 1]),
    ([[0.0], [2.0], [4.0], [6.0]], 3, [0, 0, 1, 2]),
    ([[6.0], [4.0], [2.0], [0.0]], 3, [0, 0, 1, 2]),
])
def test_cluster_distance_ties_merge_the_lowest_indexes(points, k, expected):
    np.testing.assert_array_equal(agglomerative_cluster(points, k), expected)


def test_cluster_bad_k():
    with pytest.raises(ValueError):
        agglomerative_cluster([[0.0], [1.0]], k=3)


def test_scatter_rows():
    rows = scatter_rows(_table(), 'base', 'flipped', k=2)
    assert len(rows) == 5
    assert {r[3] for r in rows} == {0, 1}
    assert scatter_rows(_table(), 'base', 'mixup') == []
