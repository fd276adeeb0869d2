"""Elementwise kernels for every operation in the loss search space.

Each kernel works on numpy arrays (scalars are promoted) and comes with its
analytic partial derivatives. Inputs outside a kernel's safe domain are
clamped before evaluation, and the derivative over a clamped region is 0.
"""

import collections
import math

import numpy as np
from scipy import special

from .exceptions import CorruptGenome, DistributionError


EPS = 1e-7

# Guards. Evolution composes operations arbitrarily, so every kernel has to
# stay finite on anything an upstream node can produce.
EXP_LIMIT = 60.0
ARCTANH_LIMIT = 1.0 - 1e-6
SQUARE_LIMIT = 1e12
DENOMINATOR_FLOOR = 1e-12

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_LN10 = math.log(10.0)


OpKernel = collections.namedtuple('OpKernel', ['name', 'arity', 'eval', 'grad'])


def _clamp(x, limit):
    """Clamp into [-limit, limit]; also return where no clamping happened.
    """
    inside = np.abs(x) <= limit
    return np.clip(x, -limit, limit), inside


def _denominator(d):
    """Push denominators away from zero, keeping their sign.
    """
    ok = np.abs(d) >= DENOMINATOR_FLOOR
    floored = np.where(d < 0, -DENOMINATOR_FLOOR, DENOMINATOR_FLOOR)
    return np.where(ok, d, floored), ok


def _ratio_at_zero(num, x, at_zero):
    """`num / x`, with the limit value `at_zero` where x is exactly 0.
    """
    out = np.full_like(x, at_zero)
    np.divide(num, x, out=out, where=(x != 0))
    return out


# Unary kernels.

def _neg(x):
    return -x


def _neg_grad(x):
    return (np.full_like(x, -1.0),)


def _exp(x):
    return np.exp(np.clip(x, -EXP_LIMIT, EXP_LIMIT))


def _exp_grad(x):
    xc, inside = _clamp(x, EXP_LIMIT)
    return (np.exp(xc) * inside,)


def _sigmoid(x):
    return special.expit(x)


def _sigmoid_grad_eval(x):
    s = special.expit(x)
    return s * (1.0 - s)


def _sigmoid_grad(x):
    return (_sigmoid_grad_eval(x),)


def _sigmoid_grad_grad(x):
    s = special.expit(x)
    return (s * (1.0 - s) * (1.0 - 2.0 * s),)


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _softsign_grad_eval(x):
    return 1.0 / np.square(1.0 + np.abs(x))


def _softsign_grad(x):
    return (_softsign_grad_eval(x),)


def _softsign_grad_grad(x):
    return (-2.0 * np.sign(x) / (1.0 + np.abs(x)) ** 3,)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_grad(x):
    return (special.expit(x),)


def _erf_grad(x):
    return (_TWO_OVER_SQRT_PI * np.exp(-np.square(x)),)


def _erfc_grad(x):
    return (-_TWO_OVER_SQRT_PI * np.exp(-np.square(x)),)


def _sin_grad(x):
    return (np.cos(x),)


def _sinh(x):
    return np.sinh(np.clip(x, -EXP_LIMIT, EXP_LIMIT))


def _sinh_grad(x):
    xc, inside = _clamp(x, EXP_LIMIT)
    return (np.cosh(xc) * inside,)


def _arcsinh_grad(x):
    return (1.0 / np.hypot(1.0, x),)


def _tanh_grad_eval(x):
    return 1.0 - np.square(np.tanh(x))


def _tanh_grad(x):
    return (_tanh_grad_eval(x),)


def _tanh_grad_grad(x):
    t = np.tanh(x)
    return (-2.0 * t * (1.0 - np.square(t)),)


def _arctanh(x):
    return np.arctanh(np.clip(x, -ARCTANH_LIMIT, ARCTANH_LIMIT))


def _arctanh_grad(x):
    xc, inside = _clamp(x, ARCTANH_LIMIT)
    return (inside / (1.0 - np.square(xc)),)


def _reciprocal(x):
    d, _ = _denominator(x + EPS)
    return 1.0 / d


def _reciprocal_grad(x):
    d, ok = _denominator(x + EPS)
    return (-(ok / np.square(d)),)


def _abs_grad(x):
    return (np.sign(x),)


def _square(x):
    return np.minimum(np.square(x), SQUARE_LIMIT)


def _square_grad(x):
    return (2.0 * x * (np.square(x) < SQUARE_LIMIT),)


def _sqrt(x):
    return np.sqrt(np.abs(x))


def _sqrt_grad(x):
    return (_ratio_at_zero(np.sign(x), 2.0 * np.sqrt(np.abs(x)), 0.0),)


def _ln(x):
    return np.log(np.abs(x) + EPS)


def _ln_grad(x):
    return (np.sign(x) / (np.abs(x) + EPS),)


def _log10(x):
    return np.log10(np.abs(x) + EPS)


def _log10_grad(x):
    return (np.sign(x) / ((np.abs(x) + EPS) * _LN10),)


def _max_zero(x):
    return np.maximum(x, 0.0)


def _max_zero_grad(x):
    return ((x > 0).astype(float),)


def _min_zero(x):
    return np.minimum(x, 0.0)


def _min_zero_grad(x):
    return ((x < 0).astype(float),)


def _bessel_i0(x):
    return special.i0(np.clip(x, -EXP_LIMIT, EXP_LIMIT))


def _bessel_i0_grad(x):
    xc, inside = _clamp(x, EXP_LIMIT)
    return (special.i1(xc) * inside,)


def _bessel_i1(x):
    return special.i1(np.clip(x, -EXP_LIMIT, EXP_LIMIT))


def _bessel_i1_grad(x):
    # I1'(x) = I0(x) - I1(x) / x, which tends to 1/2 at the origin.
    xc, inside = _clamp(x, EXP_LIMIT)
    d = special.i0(xc) - _ratio_at_zero(special.i1(xc), xc, 0.5)
    return (d * inside,)


def _bessel_i0e_grad(x):
    return (special.i1e(x) - np.sign(x) * special.i0e(x),)


def _bessel_i1e_grad(x):
    i1e = special.i1e(x)
    return (special.i0e(x) - _ratio_at_zero(i1e, x, 0.5) - np.sign(x) * i1e,)


# Binary kernels.

def _add_grad(x1, x2):
    return np.ones_like(x1), np.ones_like(x2)


def _sub_grad(x1, x2):
    return np.ones_like(x1), np.full_like(x2, -1.0)


def _mul_grad(x1, x2):
    return x2 * np.ones_like(x1), x1 * np.ones_like(x2)


def _safe_div(x1, x2):
    d, _ = _denominator(x2 + EPS)
    return x1 / d


def _safe_div_grad(x1, x2):
    d, ok = _denominator(x2 + EPS)
    return ok / d * np.ones_like(x1), -(ok * x1) / np.square(d)


def _scaled_div(x1, x2):
    return x1 / np.hypot(1.0, x2)


def _scaled_div_grad(x1, x2):
    s = np.hypot(1.0, x2)
    return np.ones_like(x1) / s, -(x1 / s) * (x2 / s) / s


def _max_grad(x1, x2):
    first = x1 >= x2
    return first.astype(float), (~first).astype(float)


def _min_grad(x1, x2):
    first = x1 <= x2
    return first.astype(float), (~first).astype(float)


_UNARY = [
    ('neg', _neg, _neg_grad),
    ('exp', _exp, _exp_grad),
    ('sigmoid', _sigmoid, _sigmoid_grad),
    ('softsign', _softsign, _softsign_grad),
    ('softplus', _softplus, _softplus_grad),
    ('erf', special.erf, _erf_grad),
    ('erfc', special.erfc, _erfc_grad),
    ('sin', np.sin, _sin_grad),
    ('sinh', _sinh, _sinh_grad),
    ('arcsinh', np.arcsinh, _arcsinh_grad),
    ('tanh', np.tanh, _tanh_grad),
    ('arctanh', _arctanh, _arctanh_grad),
    ('reciprocal', _reciprocal, _reciprocal_grad),
    ('abs', np.abs, _abs_grad),
    ('square', _square, _square_grad),
    ('sqrt', _sqrt, _sqrt_grad),
    ('ln', _ln, _ln_grad),
    ('log10', _log10, _log10_grad),
    ('sigmoid_grad', _sigmoid_grad_eval, _sigmoid_grad_grad),
    ('softsign_grad', _softsign_grad_eval, _softsign_grad_grad),
    ('tanh_grad', _tanh_grad_eval, _tanh_grad_grad),
    ('max_zero', _max_zero, _max_zero_grad),
    ('min_zero', _min_zero, _min_zero_grad),
    ('bessel_i0', _bessel_i0, _bessel_i0_grad),
    ('bessel_i1', _bessel_i1, _bessel_i1_grad),
    ('bessel_i1e', special.i1e, _bessel_i1e_grad),
    ('bessel_i0e', special.i0e, _bessel_i0e_grad),
]

_BINARY = [
    ('add', np.add, _add_grad),
    ('sub', np.subtract, _sub_grad),
    ('mul', np.multiply, _mul_grad),
    ('safe_div', _safe_div, _safe_div_grad),
    ('scaled_div', _scaled_div, _scaled_div_grad),
    ('max', np.maximum, _max_grad),
    ('min', np.minimum, _min_grad),
]

UNARY_OPS = tuple(name for name, _, _ in _UNARY)

BINARY_OPS = tuple(name for name, _, _ in _BINARY)

ALL_OPS = UNARY_OPS + BINARY_OPS

OPS = collections.OrderedDict(
    [(name, OpKernel(name, 1, f, g)) for name, f, g in _UNARY] +
    [(name, OpKernel(name, 2, f, g)) for name, f, g in _BINARY]
)


def get_kernel(op):
    try:
        return OPS[op]
    except KeyError:
        raise CorruptGenome('unknown operation {!r}'.format(op))


def arity(op):
    return get_kernel(op).arity


def _check_arity(kernel, args):
    if len(args) != kernel.arity:
        raise CorruptGenome('{} takes {} argument(s), got {}'.format(
            kernel.name, kernel.arity, len(args),
        ))


def apply(op, *args):
    """Evaluate a kernel on arrays (or scalars) of matching shapes.
    """
    kernel = get_kernel(op)
    _check_arity(kernel, args)
    return kernel.eval(*(np.asarray(a, dtype=float) for a in args))


def apply_grad(op, *args):
    """Partial derivatives of a kernel, one array per argument.
    """
    kernel = get_kernel(op)
    _check_arity(kernel, args)
    return kernel.grad(*(np.asarray(a, dtype=float) for a in args))


def eval_unary(op, x):
    kernel = get_kernel(op)
    if kernel.arity != 1:
        raise CorruptGenome('{} is not a unary operation'.format(op))
    return float(kernel.eval(np.asarray(x, dtype=float)))


def eval_binary(op, x1, x2):
    kernel = get_kernel(op)
    if kernel.arity != 2:
        raise CorruptGenome('{} is not a binary operation'.format(op))
    return float(kernel.eval(
        np.asarray(x1, dtype=float), np.asarray(x2, dtype=float),
    ))


def grad_op(op, args):
    """Scalar partial derivatives of `op` at `args`, as a tuple of floats.
    """
    return tuple(float(g) for g in apply_grad(op, *args))


# Information-theoretic references.

DISTRIBUTION_TOLERANCE = 1e-9


def _distribution(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DistributionError('{} must be a non-empty vector'.format(name))
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DistributionError('{} has negative or non-finite entries'.format(
            name,
        ))
    total = p.sum()
    if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
        raise DistributionError('{} sums to {!r}, not 1'.format(name, total))
    return p


def _xlogy(x, y):
    # 0 * log(0) is taken as 0.
    return special.xlogy(x, y)


def entropy(p):
    p = _distribution(p, 'p')
    return float(-_xlogy(p, p).sum())


def kl(p, q):
    p = _distribution(p, 'p')
    q = _distribution(q, 'q')
    if p.shape != q.shape:
        raise DistributionError('p and q differ in shape')
    return float((_xlogy(p, p) - _xlogy(p, q)).sum())


def cross_entropy(p, q):
    p = _distribution(p, 'p')
    q = _distribution(q, 'q')
    if p.shape != q.shape:
        raise DistributionError('p and q differ in shape')
    return float(-_xlogy(p, q).sum())
