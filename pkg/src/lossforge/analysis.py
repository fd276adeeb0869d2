"""Rank correlation, best-subset and clustering analyses of genome scores
across augmentation pipelines.
"""

import collections
import logging
import warnings

import numpy as np
from scipy.spatial import distance

from .trainer import LEDGER_FIELDS, record_from_row
from .utils import CSVLedger, write_csv


logger = logging.getLogger('lossforge.analysis')


DEFAULT_CLUSTERS = 4

DEFAULT_BEST_K = 50


class ScoreTable(object):
    """Accuracies keyed by genome hash, then by augmentation id.

    Missing cells are absent from the inner mapping; `get` returns None.
    """
    def __init__(self, scores=None, augmentations=None):
        self.scores = collections.OrderedDict()
        self.augmentations = list(augmentations or [])
        for genome_hash, row in (scores or {}).items():
            for aug, acc in row.items():
                self.set(genome_hash, aug, acc)

    def __len__(self):
        return len(self.scores)

    def __repr__(self):
        return '<ScoreTable {} genomes x {}>'.format(
            len(self), ', '.join(self.augmentations),
        )

    def set(self, genome_hash, augmentation, accuracy):
        accuracy = float(accuracy)
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError('accuracy {} outside [0, 1]'.format(accuracy))
        if augmentation not in self.augmentations:
            self.augmentations.append(augmentation)
        self.scores.setdefault(genome_hash, {})[augmentation] = accuracy

    def get(self, genome_hash, augmentation):
        return self.scores.get(genome_hash, {}).get(augmentation)

    def column(self, augmentation):
        return collections.OrderedDict(
            (h, row[augmentation]) for h, row in self.scores.items()
            if augmentation in row
        )

    def common(self, aug1, aug2, subset=None):
        """Hashes scored under both augmentations, sorted."""
        hashes = [
            h for h, row in self.scores.items() if aug1 in row and aug2 in row
        ]
        if subset is not None:
            hashes = [h for h in hashes if h in subset]
        return sorted(hashes)

    @classmethod
    def from_records(cls, records):
        """Build from fitness records; repeated cells are averaged and
        degenerate records count as accuracy 0.
        """
        sums = collections.OrderedDict()
        for r in records:
            acc = 0.0 if r.degenerate else r.best_val_acc
            cell = sums.setdefault((r.genome_hash, r.augmentation), [0.0, 0])
            cell[0] += acc
            cell[1] += 1
        table = cls()
        for (h, aug), (total, count) in sums.items():
            table.set(h, aug, total / count)
        return table

    @classmethod
    def from_ledger(cls, *paths):
        records = []
        for path in paths:
            records.extend(
                record_from_row(row)
                for row in CSVLedger(path, LEDGER_FIELDS).read()
            )
        return cls.from_records(records)

    def rows(self):
        """Wide rows: genome hash followed by one cell per augmentation.
        """
        for h, row in self.scores.items():
            yield [h] + [row.get(aug, '') for aug in self.augmentations]

    def write(self, path):
        write_csv(path, ['genome_hash'] + self.augmentations, self.rows())


def kendall_tau(a, b):
    """Kendall's tau-b, counting all pairs directly.

    Returns nan (with a warning) when either list is constant.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError('rank lists must be 1-D and of equal length')
    n = len(a)
    if n < 2:
        raise ValueError('need at least 2 items to rank')
    upper = np.triu_indices(n, k=1)
    sa = np.sign(a[:, None] - a[None, :])[upper].astype(np.int8)
    sb = np.sign(b[:, None] - b[None, :])[upper].astype(np.int8)
    n0 = len(sa)
    s = int(np.dot(sa.astype(np.int64), sb.astype(np.int64)))
    ties_a = int(np.count_nonzero(sa == 0))
    ties_b = int(np.count_nonzero(sb == 0))
    denominator = np.sqrt(float(n0 - ties_a) * float(n0 - ties_b))
    if denominator == 0:
        warnings.warn('kendall_tau of a constant list is undefined')
        return float('nan')
    return s / denominator


def _pair_tau(table, aug1, aug2, subset=None):
    hashes = table.common(aug1, aug2, subset)
    if len(hashes) < 2:
        return float('nan')
    return kendall_tau(
        [table.scores[h][aug1] for h in hashes],
        [table.scores[h][aug2] for h in hashes],
    )


def correlation_matrix(table, subset=None, augmentations=None):
    """Pairwise tau between augmentation columns.

    `subset` restricts every pair to those genome hashes; it may also be a
    callable ``subset(aug1, aug2) -> hashes`` choosing one set per pair.
    Returns the augmentation order and a symmetric matrix with unit
    diagonal.
    """
    augs = list(augmentations or table.augmentations)
    m = np.eye(len(augs))
    for i in range(len(augs)):
        for j in range(i + 1, len(augs)):
            pair_subset = subset
            if callable(subset):
                pair_subset = subset(augs[i], augs[j])
            m[i, j] = m[j, i] = _pair_tau(table, augs[i], augs[j], pair_subset)
    return augs, m


def top_k(table, augmentation, k):
    """The k best hashes of one column; higher accuracy first, then hash.
    """
    column = table.column(augmentation)
    ranked = sorted(column, key=lambda h: (-column[h], h))
    return ranked[:k]


def best_k_intersection(table, aug1, aug2, k=DEFAULT_BEST_K):
    return set(top_k(table, aug1, k)) & set(top_k(table, aug2, k))


def best_k_matrix(table, k=DEFAULT_BEST_K, augmentations=None):
    """Tau per pair over that pair's best-k intersection.
    """
    return correlation_matrix(
        table, lambda a1, a2: best_k_intersection(table, a1, a2, k),
        augmentations,
    )


def agglomerative_cluster(points, k=DEFAULT_CLUSTERS):
    """Average-linkage agglomerative clustering down to `k` clusters.

    Among equally close cluster pairs the one with the lowest indexes
    merges first; a cluster is indexed by its lowest point index. Labels
    are numbered by first appearance in `points`.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError('k must be in [1, {}]'.format(n))
    d = distance.squareform(distance.pdist(points, 'euclidean'))
    d[np.tril_indices(n)] = np.inf
    sizes = np.ones(n)
    owner = np.arange(n)
    for _ in range(n - k):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        # Merge cluster j into cluster i (i < j).
        merged = (sizes[i] * _column(d, i) + sizes[j] * _column(d, j))
        merged /= sizes[i] + sizes[j]
        sizes[i] += sizes[j]
        sizes[j] = 0
        owner[owner == j] = i
        d[j, :] = np.inf
        d[:, j] = np.inf
        for m in np.flatnonzero(sizes):
            if m == i:
                continue
            if m < i:
                d[m, i] = merged[m]
            else:
                d[i, m] = merged[m]
    labels = np.empty(n, dtype=int)
    numbering = {}
    for p, root in enumerate(owner):
        labels[p] = numbering.setdefault(root, len(numbering))
    return labels


def _column(d, i):
    """Distances from cluster i to every cluster, read from the upper
    triangle.
    """
    out = np.minimum(d[i, :], d[:, i])
    out[i] = 0.0
    return out


def scatter_rows(table, x_aug='base', y_aug='all', k=DEFAULT_CLUSTERS):
    """(genome_hash, x accuracy, y accuracy, cluster label) rows.
    """
    hashes = table.common(x_aug, y_aug)
    if not hashes:
        return []
    points = [(table.scores[h][x_aug], table.scores[h][y_aug]) for h in hashes]
    labels = agglomerative_cluster(points, min(k, len(points)))
    return [
        (h, x, y, int(label))
        for h, (x, y), label in zip(hashes, points, labels)
    ]


def write_matrix(path, augs, matrix):
    write_csv(path, [''] + list(augs), (
        [aug] + [float(v) for v in row] for aug, row in zip(augs, matrix)
    ))


def write_stacked_matrices(path, augs, all_matrix, best_matrix, k):
    """Both matrices' upper triangles in one file: first over all genomes,
    then over each pair's best-k intersection.
    """
    rows = []
    for label, matrix in (('all', all_matrix), ('best{}'.format(k),
                                                best_matrix)):
        for i, aug in enumerate(augs):
            rows.append([label, aug] + [
                float(matrix[i, j]) if j >= i else '' for j in range(len(augs))
            ])
    write_csv(path, ['subset', ''] + list(augs), rows)
