"""Datasets: synthetic generators and the CIFAR-10 binary format.

A `Dataset` holds every sample once, with one-hot labels, and names its
train / validation / test members by index. Image data is stored as
``(N, H, W, C)`` float32 in [0, 1]; feature data as ``(N, D)`` float64.
"""

import logging
import os

import numpy as np

from .exceptions import DatasetFormatError
from .utils import make_rng


logger = logging.getLogger('lossforge.data')


CIFAR_SIDE = 32

CIFAR_CHANNELS = 3

CIFAR_CLASSES = 10

RECORD_BYTES = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS

CIFAR_TRAIN_FILES = tuple('data_batch_{}.bin'.format(i) for i in range(1, 6))

CIFAR_TEST_FILE = 'test_batch.bin'

SPLITS = ('train', 'val', 'test')


def one_hot(labels, classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


class Dataset(object):
    """An immutable labelled sample set with disjoint splits.
    """
    def __init__(self, name, x, labels, splits, classes):
        x = np.asarray(x)
        labels = np.asarray(labels, dtype=float)
        if len(x) != len(labels):
            raise ValueError('{} samples but {} labels'.format(
                len(x), len(labels),
            ))
        if labels.ndim != 2 or labels.shape[1] != classes:
            raise ValueError('labels must be one-hot with {} columns'.format(
                classes,
            ))
        seen = set()
        frozen = {}
        for split in SPLITS:
            index = np.asarray(splits.get(split, ()), dtype=np.int64)
            members = set(index.tolist())
            if members & seen:
                raise ValueError('split {!r} overlaps another split'.format(
                    split,
                ))
            seen |= members
            index.setflags(write=False)
            frozen[split] = index
        x.setflags(write=False)
        labels.setflags(write=False)
        self.name = name
        self.x = x
        self.labels = labels
        self.splits = frozen
        self.classes = classes

    def __repr__(self):
        return '<Dataset {} {} train={} val={} test={}>'.format(
            self.name, self.x.shape[1:],
            len(self.splits['train']), len(self.splits['val']),
            len(self.splits['test']),
        )

    @property
    def is_image(self):
        return self.x.ndim == 4

    @property
    def input_shape(self):
        return self.x.shape[1:]

    def split(self, name):
        """Samples and labels of one split, as ``(x, labels)``.
        """
        index = self.splits[name]
        return self.x[index], self.labels[index]


def split_indices(n, val_size, test_size, seed):
    """Deterministic random partition of range(n) into train/val/test.
    """
    if val_size + test_size >= n:
        raise ValueError('val_size + test_size must leave training samples')
    order = make_rng(seed).permutation(n)
    return {
        'val': np.sort(order[:val_size]),
        'test': np.sort(order[val_size:val_size + test_size]),
        'train': np.sort(order[val_size + test_size:]),
    }


def _balanced_labels(rng, n, classes):
    return rng.permutation(np.arange(n) % classes)


def _blob_centers(classes, dim, separation):
    if dim >= classes:
        return separation * np.eye(classes, dim)
    if dim < 2:
        return separation * np.arange(classes, dtype=float)[:, None]
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dim))
    centers[:, 0] = np.cos(angles)
    centers[:, 1] = np.sin(angles)
    return separation * centers


def gaussian_blobs(n, classes, dim, separation, seed, val_size=None,
                   test_size=0):
    """Unit-variance isotropic clusters, one per class.

    Centers sit on the coordinate axes (or on a circle when there are more
    classes than dimensions), `separation` away from the origin.
    """
    if val_size is None:
        val_size = n // 6
    rng = make_rng(seed)
    label_ids = _balanced_labels(rng, n, classes)
    centers = _blob_centers(classes, dim, separation)
    x = centers[label_ids] + rng.standard_normal((n, dim))
    name = 'blobs-n{}-c{}-d{}-s{}-seed{}'.format(
        n, classes, dim, separation, seed,
    )
    splits = split_indices(n, val_size, test_size, (seed, 1))
    return Dataset(name, x, one_hot(label_ids, classes), splits, classes)


# Shape templates for synthetic images. Each takes offsets from the shape
# center and a radius, and returns a boolean mask.

def _hbar(dy, dx, r):
    return (np.abs(dy) <= r / 3.0) & (np.abs(dx) <= r)


def _vbar(dy, dx, r):
    return (np.abs(dx) <= r / 3.0) & (np.abs(dy) <= r)


def _disc(dy, dx, r):
    return np.hypot(dy, dx) <= r


def _cross(dy, dx, r):
    return _hbar(dy, dx, r) | _vbar(dy, dx, r)


def _ring(dy, dx, r):
    d = np.hypot(dy, dx)
    return (d <= r) & (d >= r / 2.0)


def _square(dy, dx, r):
    m = np.maximum(np.abs(dy), np.abs(dx))
    return (m <= r) & (m >= r - 1.5)


def _diagonal(dy, dx, r):
    return (np.abs(dy - dx) <= 1.0) & (np.abs(dy) <= r)


def _anti_diagonal(dy, dx, r):
    return (np.abs(dy + dx) <= 1.0) & (np.abs(dy) <= r)


SHAPES = (
    ('hbar', _hbar),
    ('vbar', _vbar),
    ('disc', _disc),
    ('cross', _cross),
    ('ring', _ring),
    ('square', _square),
    ('diagonal', _diagonal),
    ('anti_diagonal', _anti_diagonal),
)


def shape_mask(cls, size, center=None, radius=None):
    """Boolean ``(size, size)`` mask of shape class `cls`.
    """
    if center is None:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
    if radius is None:
        radius = 0.35 * size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    _, draw = SHAPES[cls]
    return draw(yy - center[0], xx - center[1], radius)


def synthetic_shapes(n, classes, size, seed, val_size=None, test_size=0,
                     noise=0.05):
    """Single-channel images of procedurally drawn shapes.

    Every image jitters its shape's center and radius and adds clipped
    Gaussian pixel noise.
    """
    if not 1 <= classes <= len(SHAPES):
        raise ValueError('synthetic_shapes supports up to {} classes'.format(
            len(SHAPES),
        ))
    if val_size is None:
        val_size = n // 6
    rng = make_rng(seed)
    label_ids = _balanced_labels(rng, n, classes)
    jitter = size / 8.0
    x = np.empty((n, size, size, 1), dtype=np.float32)
    mid = (size - 1) / 2.0
    for i, cls in enumerate(label_ids):
        cy, cx = mid + rng.uniform(-jitter, jitter, size=2)
        radius = size * rng.uniform(0.28, 0.4)
        mask = shape_mask(cls, size, (cy, cx), radius)
        image = 0.9 * mask + noise * rng.standard_normal((size, size))
        x[i, :, :, 0] = np.clip(image, 0.0, 1.0)
    name = 'shapes-n{}-c{}-h{}-seed{}'.format(n, classes, size, seed)
    splits = split_indices(n, val_size, test_size, (seed, 1))
    return Dataset(name, x, one_hot(label_ids, classes), splits, classes)


# CIFAR-10 binary format: 3073-byte records, one label byte followed by the
# red, green and blue 32x32 planes in row-major order.

def decode_records(raw, filename='<bytes>'):
    """Decode CIFAR records into ``(images, label ids)``.
    """
    buf = np.frombuffer(raw, dtype=np.uint8)
    if buf.size == 0 or buf.size % RECORD_BYTES:
        raise DatasetFormatError(filename, '{} bytes is not a whole number '
                                 'of {}-byte records'.format(
                                     buf.size, RECORD_BYTES))
    records = buf.reshape(-1, RECORD_BYTES)
    label_ids = records[:, 0].astype(int)
    if label_ids.max() >= CIFAR_CLASSES:
        raise DatasetFormatError(filename, 'label byte {} out of range'.format(
            label_ids.max(),
        ))
    planes = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    images = planes.transpose(0, 2, 3, 1).astype(np.float32) / np.float32(255)
    return images, label_ids


def encode_records(images, label_ids):
    """Inverse of `decode_records`; returns the raw bytes.
    """
    images = np.asarray(images)
    if images.shape[1:3] != (CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError('CIFAR records hold {0}x{0} images, got {1}'.format(
            CIFAR_SIDE, images.shape[1:3],
        ))
    if images.shape[3] == 1:
        images = np.repeat(images, CIFAR_CHANNELS, axis=3)
    elif images.shape[3] != CIFAR_CHANNELS:
        raise ValueError('need 1 or 3 channels, got {}'.format(images.shape[3]))
    label_ids = np.asarray(label_ids)
    if label_ids.size and (label_ids.min() < 0 or label_ids.max() > 255):
        raise ValueError('label ids must fit in one byte')
    pixels = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    records = np.empty((len(images), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = label_ids
    records[:, 1:] = pixels.transpose(0, 3, 1, 2).reshape(len(images), -1)
    return records.tobytes()


def _read(path):
    try:
        with open(path, 'rb') as f:
            return f.read()
    except IOError as e:
        raise DatasetFormatError(path, e.strerror or str(e))


def load_cifar_binary(path, val_size=None, seed=0, classes=CIFAR_CLASSES):
    """Load one or more CIFAR-10 binary batch files.

    `path` may be a single file or a list of files, concatenated in order.
    A seeded random `val_size` samples (a tenth by default, i.e. 5,000 of
    the full 50,000) become the validation split.
    """
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    parts = [decode_records(_read(p), str(p)) for p in paths]
    images = np.concatenate([im for im, _ in parts])
    label_ids = np.concatenate([ids for _, ids in parts])
    n = len(images)
    if val_size is None:
        val_size = n // 10
    logger.info('loaded %d CIFAR records from %d file(s)', n, len(paths))
    name = 'cifar-{}-n{}-seed{}'.format(
        os.path.basename(str(paths[0])), n, seed,
    )
    splits = split_indices(n, val_size, 0, seed)
    return Dataset(name, images, one_hot(label_ids, classes), splits, classes)


def load_cifar_directory(path, val_size=5000, seed=0):
    """Load a CIFAR-10 directory: five training batches plus the test batch.
    """
    train = [os.path.join(path, f) for f in CIFAR_TRAIN_FILES]
    parts = [decode_records(_read(p), p) for p in train]
    test_images, test_ids = decode_records(
        _read(os.path.join(path, CIFAR_TEST_FILE)),
        os.path.join(path, CIFAR_TEST_FILE),
    )
    images = np.concatenate([im for im, _ in parts] + [test_images])
    label_ids = np.concatenate([ids for _, ids in parts] + [test_ids])
    n_train = len(images) - len(test_images)
    splits = split_indices(n_train, val_size, 0, seed)
    splits['test'] = np.arange(n_train, len(images))
    name = 'cifar-dir-{}-seed{}'.format(os.path.basename(
        os.path.normpath(path),
    ), seed)
    return Dataset(
        name, images, one_hot(label_ids, CIFAR_CLASSES), splits, CIFAR_CLASSES,
    )


def export_cifar_binary(dataset, path, split=None):
    """Write an image dataset (or one split of it) in CIFAR-10 layout.
    """
    if not dataset.is_image:
        raise ValueError('only image datasets can be exported')
    if split is None:
        images, labels = dataset.x, dataset.labels
    else:
        images, labels = dataset.split(split)
    raw = encode_records(images, np.argmax(labels, axis=1))
    with open(path, 'wb') as f:
        f.write(raw)
    return len(images)


def from_config(block, base_dir='.'):
    """Build the dataset described by a `[dataset]` config block.
    """
    if block.kind == 'blobs':
        return gaussian_blobs(
            block.n, block.classes, block.dim, block.separation, block.seed,
            val_size=block.val_size, test_size=block.test_size,
        )
    if block.kind == 'shapes':
        return synthetic_shapes(
            block.n, block.classes, block.image_size, block.seed,
            val_size=block.val_size, test_size=block.test_size,
        )
    path = os.path.join(base_dir, block.path)
    if block.kind == 'cifar':
        if os.path.isdir(path):
            return load_cifar_directory(
                path, val_size=block.val_size or 5000, seed=block.seed,
            )
        return load_cifar_binary(path, val_size=block.val_size, seed=block.seed)
    raise ValueError('unknown dataset kind {!r}'.format(block.kind))
