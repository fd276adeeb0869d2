"""Desk-scale softmax classifiers with hand-written backpropagation.

Each model keeps all of its parameters in one flat float64 vector; named
weights are reshaped views into it, so optimizers update a single array.
"""

import collections
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError


logger = logging.getLogger('lossforge.trainer')


MODEL_KINDS = ('mlp', 'tiny_convnet')


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, dprobs):
    """Pull a gradient w.r.t. the softmax outputs back to the logits.
    """
    inner = np.sum(dprobs * probs, axis=1, keepdims=True)
    return probs * (dprobs - inner)


class ParamLayout(object):
    """Named shapes packed one after another into a flat vector.
    """
    def __init__(self, shapes):
        self.slots = collections.OrderedDict()
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.slots[name] = (offset, shape)
            offset += size
        self.size = offset

    def views(self, flat):
        return {
            name: flat[offset:offset + int(np.prod(shape))].reshape(shape)
            for name, (offset, shape) in self.slots.items()
        }


class Model(object):
    """Base class: subclasses define `shapes()`, `_forward` and `_backward`.
    """
    kind = None

    def __init__(self, input_shape, classes):
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.layout = ParamLayout(self.shapes())
        self.params = np.zeros(self.layout.size)

    def __repr__(self):
        return '<{} {} params>'.format(type(self).__name__, self.layout.size)

    @property
    def architecture(self):
        return collections.OrderedDict(
            (name, shape) for name, (_, shape) in self.layout.slots.items()
        )

    def initialize(self, rng):
        """Scaled normal weights, zero biases.
        """
        flat = np.zeros(self.layout.size)
        for name, w in self.layout.views(flat).items():
            if name.startswith('b'):
                continue
            fan_in = int(np.prod(w.shape[:-1]))
            w[...] = rng.standard_normal(w.shape) * self.gain / np.sqrt(fan_in)
        self.params = flat
        return flat

    def forward(self, x):
        """Softmax outputs and the cache needed by `backward`.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ConfigError('{} expects inputs shaped {}, got {}'.format(
                self.kind, self.input_shape, x.shape[1:],
            ))
        w = self.layout.views(self.params)
        logits, cache = self._forward(w, x)
        probs = softmax(logits)
        return probs, (cache, probs)

    def backward(self, cache, dprobs):
        """Flat parameter gradient given dL/d(probs).
        """
        inner, probs = cache
        grads = np.zeros(self.layout.size)
        self._backward(
            self.layout.views(self.params), self.layout.views(grads), inner,
            softmax_backward(probs, dprobs),
        )
        return grads

    def predict(self, x, batch_size=1024):
        out = []
        for start in range(0, len(x), batch_size):
            probs, _ = self.forward(x[start:start + batch_size])
            out.append(probs)
        return np.concatenate(out) if out else np.zeros((0, self.classes))


class MLP(Model):
    """input -> tanh hidden layer -> softmax. Images are flattened.
    """
    kind = 'mlp'
    gain = 1.0

    def __init__(self, input_shape, classes, hidden=32):
        self.hidden = hidden
        super(MLP, self).__init__(input_shape, classes)

    def shapes(self):
        d = int(np.prod(self.input_shape))
        return [
            ('w1', (d, self.hidden)), ('b1', (self.hidden,)),
            ('w2', (self.hidden, self.classes)), ('b2', (self.classes,)),
        ]

    def _forward(self, w, x):
        flat = x.reshape(len(x), -1)
        h = np.tanh(flat @ w['w1'] + w['b1'])
        return h @ w['w2'] + w['b2'], (flat, h)

    def _backward(self, w, g, cache, dlogits):
        flat, h = cache
        g['w2'][...] = h.T @ dlogits
        g['b2'][...] = dlogits.sum(axis=0)
        dpre = (dlogits @ w['w2'].T) * (1.0 - np.square(h))
        g['w1'][...] = flat.T @ dpre
        g['b1'][...] = dpre.sum(axis=0)


def conv3x3(x, kernel, bias):
    """'Same' 3x3 convolution of NHWC input with an (3, 3, Cin, Cout) kernel.

    Returns the output and the padded input's window view for the backward
    pass.
    """
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    # windows: (N, H, W, Cin, 3, 3)
    out = np.tensordot(windows, kernel, axes=([4, 5, 3], [0, 1, 2]))
    return out + bias, windows


def conv3x3_backward(windows, kernel, dout):
    """Gradients of `conv3x3` w.r.t. its input, kernel and bias.
    """
    n, h, w = dout.shape[:3]
    dkernel = np.tensordot(windows, dout, axes=([0, 1, 2], [0, 1, 2]))
    # (Cin, 3, 3, Cout) -> (3, 3, Cin, Cout)
    dkernel = dkernel.transpose(1, 2, 0, 3)
    dbias = dout.sum(axis=(0, 1, 2))
    dpadded = np.zeros((n, h + 2, w + 2, kernel.shape[2]))
    for i in range(3):
        for j in range(3):
            dpadded[:, i:i + h, j:j + w, :] += dout @ kernel[i, j].T
    return dpadded[:, 1:-1, 1:-1, :], dkernel, dbias


def avg_pool2(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    trimmed = x[:, :2 * h2, :2 * w2, :]
    return trimmed.reshape(n, h2, 2, w2, 2, c).mean(axis=(2, 4))


def avg_pool2_backward(dout, shape):
    n, h, w, c = shape
    dx = np.zeros(shape)
    spread = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) / 4.0
    dx[:, :spread.shape[1], :spread.shape[2], :] = spread
    return dx


class TinyConvNet(Model):
    """Two conv blocks, global average pooling and a dense softmax layer.

    Block one is conv3x3 + ReLU + 2x2 average pooling; block two is
    conv3x3 + ReLU.
    """
    kind = 'tiny_convnet'
    gain = np.sqrt(2.0)

    def __init__(self, input_shape, classes, channels=(8, 16)):
        if len(input_shape) != 3:
            raise ConfigError('tiny_convnet needs (H, W, C) image inputs, '
                              'got shape {}'.format(tuple(input_shape)))
        self.channels = tuple(channels)
        super(TinyConvNet, self).__init__(input_shape, classes)

    def shapes(self):
        c_in = self.input_shape[2]
        c1, c2 = self.channels
        return [
            ('k1', (3, 3, c_in, c1)), ('b1', (c1,)),
            ('k2', (3, 3, c1, c2)), ('b2', (c2,)),
            ('w3', (c2, self.classes)), ('b3', (self.classes,)),
        ]

    def _forward(self, w, x):
        z1, win1 = conv3x3(x, w['k1'], w['b1'])
        a1 = np.maximum(z1, 0.0)
        p1 = avg_pool2(a1)
        z2, win2 = conv3x3(p1, w['k2'], w['b2'])
        a2 = np.maximum(z2, 0.0)
        pooled = a2.mean(axis=(1, 2))
        logits = pooled @ w['w3'] + w['b3']
        return logits, (win1, z1, a1.shape, win2, z2, pooled)

    def _backward(self, w, g, cache, dlogits):
        win1, z1, a1_shape, win2, z2, pooled = cache
        g['w3'][...] = pooled.T @ dlogits
        g['b3'][...] = dlogits.sum(axis=0)
        dpooled = dlogits @ w['w3'].T
        n, h2, w2, _ = z2.shape
        dz2 = np.broadcast_to(
            dpooled[:, None, None, :] / float(h2 * w2), z2.shape,
        ) * (z2 > 0)
        dp1, g['k2'][...], g['b2'][...] = conv3x3_backward(win2, w['k2'], dz2)
        dz1 = avg_pool2_backward(dp1, a1_shape) * (z1 > 0)
        _, g['k1'][...], g['b1'][...] = conv3x3_backward(win1, w['k1'], dz1)


def build_model(kind, input_shape, classes, hidden=32, channels=(8, 16)):
    if kind == 'mlp':
        return MLP(input_shape, classes, hidden=hidden)
    if kind == 'tiny_convnet':
        return TinyConvNet(input_shape, classes, channels=channels)
    raise ConfigError('unknown model kind {!r}; choose from {}'.format(
        kind, ', '.join(MODEL_KINDS),
    ))


def model_forward(model, x):
    probs, _ = model.forward(x)
    return probs


def model_backward(model, x, dprobs):
    _, cache = model.forward(x)
    return model.backward(cache, dprobs)
