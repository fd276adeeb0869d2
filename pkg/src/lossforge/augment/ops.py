"""Functional image kernels used by the augmentation stages.

Images are ``(H, W, C)`` (single) or ``(N, H, W, C)`` (batch) arrays with
pixel values in [0, 1]. Every kernel returns a new array.
"""

import collections

import numpy as np
from scipy import ndimage


MAX_MAGNITUDE = 10.0


def pad_crop_flip(images, pad, offsets, flips):
    """Zero-pad each image by `pad`, crop back at `offsets`, maybe mirror.

    `offsets` is an ``(N, 2)`` array of (row, col) crop origins inside the
    padded image, each in ``[0, 2 * pad]``; `flips` is a boolean vector.
    """
    n, h, w, _ = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.empty_like(images)
    for i in range(n):
        oy, ox = offsets[i]
        crop = padded[i, oy:oy + h, ox:ox + w]
        out[i] = crop[:, ::-1] if flips[i] else crop
    return out


def cutout_at(images, centers, size):
    """Zero a `size` square around each (row, col) center, clipped to bounds.
    """
    out = images.copy()
    if size <= 0:
        return out
    _, h, w, _ = images.shape
    half = size // 2
    for i, (cy, cx) in enumerate(centers):
        top = max(cy - half, 0)
        left = max(cx - half, 0)
        bottom = min(cy - half + size, h)
        right = min(cx - half + size, w)
        if top < bottom and left < right:
            out[i, top:bottom, left:right] = 0
    return out


def mix(images, labels, partners, lam):
    """Convex combination of every sample with its partner.
    """
    x = lam * images + (1.0 - lam) * images[partners]
    y = lam * labels + (1.0 - lam) * labels[partners]
    return x, y


# RandAug kernels. Each takes one image, a magnitude in [0, 10] and a sign
# in {-1, +1} for operations that have a direction.

def invert(image, m=0.0, sign=1):
    return 1.0 - image


def solarize(image, threshold):
    """Invert every pixel above `threshold`.
    """
    return np.where(image > threshold, 1.0 - image, image)


def _solarize(image, m, sign=1):
    return solarize(image, 1.0 - m / MAX_MAGNITUDE)


def posterize(image, bits):
    bits = int(np.clip(bits, 1, 8))
    levels = np.floor(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return (levels & mask).astype(image.dtype) / 255.0


def _posterize(image, m, sign=1):
    return posterize(image, 8 - int(round(4 * m / MAX_MAGNITUDE)))


def _factor(m, sign):
    return 1.0 + sign * 0.9 * m / MAX_MAGNITUDE


def contrast(image, m, sign=1):
    mean = image.mean()
    return mean + _factor(m, sign) * (image - mean)


def brightness(image, m, sign=1):
    return image * _factor(m, sign)


_SMOOTH = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


def sharpness(image, m, sign=1):
    """Blend with a 3x3 smoothed copy; sign > 0 sharpens.
    """
    smooth = np.empty_like(image)
    for c in range(image.shape[2]):
        smooth[:, :, c] = ndimage.convolve(image[:, :, c], _SMOOTH,
                                           mode='nearest')
    return smooth + _factor(m, sign) * (image - smooth)


def equalize(image, m=0.0, sign=1):
    """Per-channel histogram equalization over 256 levels.
    """
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        levels = np.rint(np.clip(image[:, :, c], 0.0, 1.0) * 255).astype(int)
        hist = np.bincount(levels.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        nonzero = cdf[hist > 0]
        span = cdf[-1] - nonzero[0]
        if span == 0:
            out[:, :, c] = image[:, :, c]
            continue
        lut = np.clip((cdf - nonzero[0]) / span, 0.0, 1.0)
        out[:, :, c] = lut[levels]
    return out


def _translate(image, m, sign, axis):
    shift = [0.0, 0.0, 0.0]
    shift[axis] = sign * round(0.3 * image.shape[axis] * m / MAX_MAGNITUDE)
    return ndimage.shift(image, shift, order=0, mode='constant', cval=0.0)


def translate_x(image, m, sign=1):
    return _translate(image, m, sign, 1)


def translate_y(image, m, sign=1):
    return _translate(image, m, sign, 0)


def _shear(image, m, sign, axis):
    k = sign * 0.3 * m / MAX_MAGNITUDE
    h, w, _ = image.shape
    matrix = np.eye(3)
    offset = np.zeros(3)
    if axis == 1:
        # Sample column x + k * (row - center row).
        matrix[1, 0] = k
        offset[1] = -k * (h - 1) / 2.0
    else:
        matrix[0, 1] = k
        offset[0] = -k * (w - 1) / 2.0
    return ndimage.affine_transform(
        image, matrix, offset=offset, order=1, mode='constant', cval=0.0,
    )


def shear_x(image, m, sign=1):
    return _shear(image, m, sign, 1)


def shear_y(image, m, sign=1):
    return _shear(image, m, sign, 0)


RANDAUG_OPS = collections.OrderedDict([
    ('invert', invert),
    ('solarize', _solarize),
    ('posterize', _posterize),
    ('contrast', contrast),
    ('brightness', brightness),
    ('sharpness', sharpness),
    ('equalize', equalize),
    ('translate_x', translate_x),
    ('translate_y', translate_y),
    ('shear_x', shear_x),
    ('shear_y', shear_y),
])
