"""Built-in loss functions encoded as genomes, and their phenotypes.

Every built-in carries a hand-written closed form alongside its genome. The
closed forms apply the same guards as the kernels (``ln(|x| + eps)``,
``x / (d + eps)``, clamped arctanh) so the two agree to rounding error.
"""

import collections
import functools
import logging
import re
import warnings

import numpy as np
from scipy import special

from .genome import GenomeBuilder, LossGenome, Y, YHAT, forward
from .numerics import ARCTANH_LIMIT, EPS


logger = logging.getLogger('lossforge.losses')


BUILTIN_NAMES = (
    'B0', 'B1', 'B2',
    'C0', 'C1', 'C2',
    'M0', 'M1', 'M2',
    'R0', 'R1', 'R2',
    'A0', 'A1', 'A2',
    'CE',
)

GROUPS = collections.OrderedDict([
    ('B', ('B0', 'B1', 'B2')),
    ('C', ('C0', 'C1', 'C2')),
    ('M', ('M0', 'M1', 'M2')),
    ('R', ('R0', 'R1', 'R2')),
    ('A', ('A0', 'A1', 'A2')),
])

RATIO_LOGS = ('ratio', 'split')

PHENOTYPE_DELTA = 1e-3

SURFACE_DELTA = EPS

PHENOTYPE_SAMPLES = 101


BuiltinLoss = collections.namedtuple(
    'BuiltinLoss', ['name', 'genome', 'closed_form'],
)
BuiltinLoss.__doc__ = """A named loss with its genome and reference evaluator.

`closed_form(y, yhat)` returns the signed elementwise loss, i.e. the values
whose mean is the reduced loss.
"""


# Closed forms. Each returns sign * elementwise value.

def _ratio(y, yhat):
    return yhat / (y + EPS)


def _ln(x):
    return np.log(np.abs(x) + EPS)


def _log10(x):
    return np.log10(np.abs(x) + EPS)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _arctanh(x):
    return np.arctanh(np.clip(x, -ARCTANH_LIMIT, ARCTANH_LIMIT))


def _ratio_log(y, yhat, ratio_log):
    if ratio_log == 'split':
        return _log10(yhat) - _log10(y)
    return _log10(_ratio(y, yhat))


def _b0(y, yhat, ratio_log):
    return -special.expit(_softplus(_ratio(y, yhat)))


def _b1(y, yhat, ratio_log):
    s = special.expit(special.i0e(_ratio(y, yhat)))
    return -(s * (1.0 - s))


def _b2(y, yhat, ratio_log):
    return -special.i1e(special.erf(_ratio(y, yhat)))


def _c0(y, yhat, ratio_log):
    return -_ln(_arctanh(_ratio(y, yhat)))


def _c1(y, yhat, ratio_log):
    return -_ln(_softplus(_ratio(y, yhat)))


def _c2(y, yhat, ratio_log):
    return -special.expit(_log10(_ratio(y, yhat)))


def _m0(y, yhat, ratio_log):
    return -(special.i1(_arctanh(_log10(yhat))) * y)


def _m1(y, yhat, ratio_log):
    return _softplus(yhat - y)


def _m2(y, yhat, ratio_log):
    return np.arcsinh(special.i0(y - yhat))


def _r0(y, yhat, ratio_log):
    b = special.i0e(_ratio(y, yhat))
    return -((1.0 - np.square(np.tanh(b))) + b)


def _r1(y, yhat, ratio_log):
    lg = _ratio_log(y, yhat, ratio_log)
    return lg / np.hypot(1.0, lg + y)


def _r2(y, yhat, ratio_log):
    lg = _ratio_log(y, yhat, ratio_log)
    return np.exp(np.abs(special.i0(y)) * _ln(lg))


def _a0(y, yhat, ratio_log):
    return -(_ln(1.0 / np.square(1.0 + np.abs(_log10(yhat)))) * y)


def _a1(y, yhat, ratio_log):
    return -(_ln(special.i0e(_log10(yhat))) * y)


def _a2(y, yhat, ratio_log):
    return y / (special.i0e(_ln(yhat)) + EPS)


def _ce(y, yhat, ratio_log):
    return -(y * _ln(yhat))


# Genome encodings.

def _build_ratio(b, ratio_log):
    """Add the nodes for log10 of yhat over y, returning the last ref.
    """
    if ratio_log == 'split':
        return b.add('sub', b.add('log10', YHAT), b.add('log10', Y))
    return b.add('log10', b.add('safe_div', YHAT, Y))


def _encode(name, ratio_log):
    b = GenomeBuilder()
    if name == 'B0':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('sigmoid', b.add('softplus', r)), sign=-1)
    if name == 'B1':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('sigmoid_grad', b.add('bessel_i0e', r)), sign=-1)
    if name == 'B2':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('bessel_i1e', b.add('erf', r)), sign=-1)
    if name == 'C0':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('ln', b.add('arctanh', r)), sign=-1)
    if name == 'C1':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('ln', b.add('softplus', r)), sign=-1)
    if name == 'C2':
        r = b.add('safe_div', YHAT, Y)
        return b.build(b.add('sigmoid', b.add('log10', r)), sign=-1)
    if name == 'M0':
        f = b.add('bessel_i1', b.add('arctanh', b.add('log10', YHAT)))
        return b.build(b.add('mul', f, Y), sign=-1)
    if name == 'M1':
        return b.build(b.add('softplus', b.add('sub', YHAT, Y)), sign=1)
    if name == 'M2':
        i0 = b.add('bessel_i0', b.add('sub', Y, YHAT))
        return b.build(b.add('arcsinh', i0), sign=1)
    if name == 'R0':
        # Negated: R0 rises with confidence and peaks at yhat = 1.
        i0e = b.add('bessel_i0e', b.add('safe_div', YHAT, Y))
        return b.build(b.add('add', b.add('tanh_grad', i0e), i0e), sign=-1)
    if name == 'R1':
        lg = _build_ratio(b, ratio_log)
        return b.build(b.add('scaled_div', lg, b.add('add', lg, Y)), sign=1)
    if name == 'R2':
        lg = _build_ratio(b, ratio_log)
        power = b.add('abs', b.add('bessel_i0', Y))
        return b.build(
            b.add('exp', b.add('mul', power, b.add('ln', lg))), sign=1,
        )
    if name == 'A0':
        f = b.add('ln', b.add('softsign_grad', b.add('log10', YHAT)))
        return b.build(b.add('mul', f, Y), sign=-1)
    if name == 'A1':
        f = b.add('ln', b.add('bessel_i0e', b.add('log10', YHAT)))
        return b.build(b.add('mul', f, Y), sign=-1)
    if name == 'A2':
        d = b.add('bessel_i0e', b.add('ln', YHAT))
        return b.build(b.add('safe_div', Y, d), sign=1)
    if name == 'CE':
        return b.build(b.add('mul', Y, b.add('ln', YHAT)), sign=-1)
    raise KeyError(name)


_CLOSED_FORMS = {
    'B0': _b0, 'B1': _b1, 'B2': _b2,
    'C0': _c0, 'C1': _c1, 'C2': _c2,
    'M0': _m0, 'M1': _m1, 'M2': _m2,
    'R0': _r0, 'R1': _r1, 'R2': _r2,
    'A0': _a0, 'A1': _a1, 'A2': _a2,
    'CE': _ce,
}


@functools.lru_cache(maxsize=None)
def builtin(name, ratio_log='ratio'):
    """Look up a built-in loss by name (case-insensitive).

    `ratio_log` picks how R1 and R2 read ``log(yhat / y + eps)``: ``'ratio'``
    takes the log of the guarded ratio, ``'split'`` subtracts the two logs.
    """
    key = name.upper()
    if key not in _CLOSED_FORMS:
        raise KeyError('unknown built-in loss {!r}; choose from {}'.format(
            name, ', '.join(BUILTIN_NAMES),
        ))
    if ratio_log not in RATIO_LOGS:
        raise ValueError('ratio_log must be one of {}'.format(RATIO_LOGS))
    form = _CLOSED_FORMS[key]

    def closed_form(y, yhat):
        y = np.asarray(y, dtype=float)
        yhat = np.asarray(yhat, dtype=float)
        with np.errstate(all='ignore'):
            return form(y, yhat, ratio_log)

    closed_form.__name__ = '{}_closed_form'.format(key.lower())
    return BuiltinLoss(key, _encode(key, ratio_log), closed_form)


def builtins(ratio_log='ratio'):
    return [builtin(name, ratio_log) for name in BUILTIN_NAMES]


_SMOOTHED_RE = re.compile(r'^(?P<name>[A-Za-z]+\d?)(?:_(?P<alpha>\d*\.?\d+))?$')


def parse_loss_name(text):
    """Split ``'A2_0.10'`` style names into a built-in and a smoothing alpha.
    """
    match = _SMOOTHED_RE.match(text.strip())
    if not match:
        raise KeyError('malformed loss name {!r}'.format(text))
    alpha = float(match.group('alpha') or 0.0)
    if not 0.0 <= alpha < 1.0:
        raise ValueError('label smoothing must be in [0, 1), got {}'.format(
            alpha,
        ))
    return builtin(match.group('name')), alpha


def _as_genome(loss):
    if isinstance(loss, BuiltinLoss):
        return loss.genome
    if isinstance(loss, LossGenome):
        return loss
    return builtin(loss).genome


def signed_values(loss, y, yhat):
    """Elementwise loss values with the genome sign applied.
    """
    g = _as_genome(loss)
    return g.sign * forward(g, y, yhat)


# Phenotypes.

PhenotypeCurve = collections.namedtuple(
    'PhenotypeCurve', ['yhat', 'raw', 'normalized', 'constant'],
)

PhenotypeGrid = collections.namedtuple(
    'PhenotypeGrid', ['y', 'yhat', 'raw', 'normalized', 'constant'],
)


def grid_axis(samples, delta):
    if samples < 2:
        raise ValueError('need at least 2 samples per axis')
    return np.linspace(delta, 1.0 - delta, samples)


def normalize(values, what='phenotype'):
    """Min-max scale to [0, 1].

    Returns the scaled values and whether the input was constant, in which
    case the result is all zeros.
    """
    lo = np.min(values)
    hi = np.max(values)
    if not hi > lo:
        warnings.warn('constant {}; cannot normalize'.format(what))
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def binary_phenotype(loss, samples=PHENOTYPE_SAMPLES, delta=PHENOTYPE_DELTA):
    """Loss as a function of yhat with y fixed at 1.
    """
    yhat = grid_axis(samples, delta)
    raw = signed_values(loss, np.ones_like(yhat), yhat)
    normalized, constant = normalize(raw, 'binary phenotype')
    return PhenotypeCurve(yhat, raw, normalized, constant)


def surface(loss, samples=PHENOTYPE_SAMPLES, delta=SURFACE_DELTA):
    """Loss over the (y, yhat) square; ``raw[i, j]`` is at ``y[i], yhat[j]``.
    """
    axis = grid_axis(samples, delta)
    y, yhat = np.meshgrid(axis, axis, indexing='ij')
    raw = signed_values(loss, y, yhat)
    normalized, constant = normalize(raw, 'surface')
    return PhenotypeGrid(axis, axis.copy(), raw, normalized, constant)


def difference_surface(l1, l2, samples=PHENOTYPE_SAMPLES, delta=SURFACE_DELTA):
    """Difference of two individually normalized surfaces, ``l1 - l2``.

    The returned grid's `raw` and `normalized` both hold the difference.
    """
    s1 = surface(l1, samples, delta)
    s2 = surface(l2, samples, delta)
    diff = s1.normalized - s2.normalized
    return PhenotypeGrid(
        s1.y, s1.yhat, diff, diff, s1.constant or s2.constant,
    )


GridPeak = collections.namedtuple('GridPeak', ['y', 'yhat', 'value'])


def grid_peak(grid):
    """Location and value of the largest entry of a grid's `raw` values.
    """
    i, j = np.unravel_index(np.argmax(grid.raw), grid.raw.shape)
    return GridPeak(float(grid.y[i]), float(grid.yhat[j]), float(grid.raw[i, j]))


def group_phenotypes(group, samples=PHENOTYPE_SAMPLES, delta=PHENOTYPE_DELTA):
    """Binary phenotypes of a loss group together with CE, keyed by name.
    """
    try:
        names = GROUPS[group.upper()]
    except KeyError:
        raise KeyError('unknown group {!r}; choose from {}'.format(
            group, ', '.join(GROUPS),
        ))
    curves = collections.OrderedDict()
    for name in names + ('CE',):
        curves[name] = binary_phenotype(builtin(name), samples, delta)
    return curves


def curve_rows(curve):
    """CSV rows (y, yhat, raw, normalized) for a binary phenotype.
    """
    for yhat, raw, norm in zip(curve.yhat, curve.raw, curve.normalized):
        yield (1.0, float(yhat), float(raw), float(norm))


def grid_rows(grid):
    """CSV rows (y, yhat, raw, normalized) for a surface, y-major.
    """
    for i, y in enumerate(grid.y):
        for j, yhat in enumerate(grid.yhat):
            yield (
                float(y), float(yhat),
                float(grid.raw[i, j]), float(grid.normalized[i, j]),
            )
