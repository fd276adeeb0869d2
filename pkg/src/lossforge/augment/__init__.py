"""Augmentation pipelines applied to training batches.

A pipeline is a sequence of stages. Each stage is a picklable callable
``stage(images, labels, rng) -> (images, labels)``; the pipeline itself is
called with a seed, so its output is a pure function of (batch, seed).

Feature-vector batches (``(N, D)``) have no spatial structure: the spatial
stages pass them through unchanged and only mixup acts on them.
"""

import collections
import logging
import math

import numpy as np

from ..utils import make_rng
from . import ops


logger = logging.getLogger('lossforge.augment')


PIPELINE_IDS = ('base', 'cutout', 'mixup', 'randaug', 'all')

# The "none" pipeline leaves batches untouched. It is not one of the
# searched augmentations but is handy for vector data and plain training.
NO_AUGMENTATION = 'none'

AugmentParams = collections.namedtuple('AugmentParams', [
    'pad', 'cutout_size', 'mixup_alpha', 'randaug_n', 'randaug_m',
])
AugmentParams.__new__.__defaults__ = (None, None, 1.0, 2, 5.0)


def default_pad(side):
    return 4 if side == 32 else int(math.ceil(side / 8.0))


def default_cutout(side):
    return side // 2


def _is_image(images):
    return images.ndim == 4


class Base(object):
    """Zero-pad, random crop back to size, random horizontal flip.
    """
    def __init__(self, pad=None):
        self.pad = pad

    def __call__(self, images, labels, rng):
        if not _is_image(images):
            return images, labels
        n, h = images.shape[:2]
        pad = default_pad(h) if self.pad is None else self.pad
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
        flips = rng.random(n) < 0.5
        return ops.pad_crop_flip(images, pad, offsets, flips), labels


class Cutout(object):
    """Zero one square patch per image, centered on a uniform pixel.
    """
    def __init__(self, size=None):
        self.size = size

    def __call__(self, images, labels, rng):
        if not _is_image(images):
            return images, labels
        n, h, w = images.shape[:3]
        size = default_cutout(h) if self.size is None else self.size
        if size <= 0:
            return images, labels
        centers = np.stack([
            rng.integers(0, h, size=n), rng.integers(0, w, size=n),
        ], axis=1)
        return ops.cutout_at(images, centers, size), labels


class Mixup(object):
    """Mix each sample with a random partner using one Beta(a, a) weight.

    ``alpha <= 0`` turns mixing off.
    """
    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def __call__(self, images, labels, rng):
        if self.alpha <= 0:
            return images, labels
        partners = rng.integers(0, len(images), size=len(images))
        lam = rng.beta(self.alpha, self.alpha)
        x, y = ops.mix(images, labels, partners, lam)
        return x.astype(images.dtype, copy=False), y


class RandAug(object):
    """Apply `n` uniformly drawn operations per image at magnitude `m`.
    """
    def __init__(self, n=2, m=5.0, op_names=None):
        self.n = n
        self.m = m
        self.op_names = tuple(op_names or ops.RANDAUG_OPS)

    def __call__(self, images, labels, rng):
        if not _is_image(images) or self.n <= 0:
            return images, labels
        out = np.empty_like(images)
        for i, image in enumerate(images):
            picks = rng.integers(0, len(self.op_names), size=self.n)
            signs = np.where(rng.random(self.n) < 0.5, -1, 1)
            for pick, sign in zip(picks, signs):
                op = ops.RANDAUG_OPS[self.op_names[pick]]
                image = op(image, self.m, int(sign))
            out[i] = np.clip(image, 0.0, 1.0)
        return out, labels


class AugmentationPipeline(object):

    def __init__(self, id, stages):
        self.id = id
        self.stages = tuple(stages)

    def __repr__(self):
        return '<AugmentationPipeline {} [{}]>'.format(
            self.id, ', '.join(type(s).__name__ for s in self.stages),
        )

    def __call__(self, images, labels, seed):
        rng = make_rng(seed)
        for stage in self.stages:
            images, labels = stage(images, labels, rng)
        return images, labels


def build_pipeline(id, params=None):
    """Build one of the named pipelines.

    Every pipeline except "none" starts with the base stage. "all" runs
    base, RandAug, cutout and mixup in that order, so labels are mixed once
    at the end.
    """
    if params is None:
        params = AugmentParams()
    base = Base(params.pad)
    cutout = Cutout(params.cutout_size)
    mixup = Mixup(params.mixup_alpha)
    randaug = RandAug(params.randaug_n, params.randaug_m)
    stages = {
        NO_AUGMENTATION: [],
        'base': [base],
        'cutout': [base, cutout],
        'mixup': [base, mixup],
        'randaug': [base, randaug],
        'all': [base, randaug, cutout, mixup],
    }
    try:
        return AugmentationPipeline(id, stages[id])
    except KeyError:
        raise ValueError('unknown augmentation {!r}; choose from {}'.format(
            id, ', '.join(PIPELINE_IDS + (NO_AUGMENTATION,)),
        ))


__all__ = [
    'AugmentParams', 'AugmentationPipeline', 'Base', 'Cutout', 'Mixup',
    'NO_AUGMENTATION', 'PIPELINE_IDS', 'RandAug', 'build_pipeline',
]
