import math

import numpy as np

from ..exceptions import ConfigError


OPTIMIZERS = ('adam', 'sgd_nesterov')


class Adam(object):

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads, lr):
        """Update `params` in place.
        """
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * np.square(grads)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGDNesterov(object):

    def __init__(self, size, momentum=0.9):
        self.momentum = momentum
        self.velocity = np.zeros(size)

    def step(self, params, grads, lr):
        self.velocity = self.momentum * self.velocity + grads
        params -= lr * (grads + self.momentum * self.velocity)


def build_optimizer(cfg, size):
    if cfg.optimizer == 'adam':
        return Adam(size, beta1=cfg.beta1, beta2=cfg.beta2)
    if cfg.optimizer == 'sgd_nesterov':
        return SGDNesterov(size, momentum=cfg.momentum)
    raise ConfigError('unknown optimizer {!r}; choose from {}'.format(
        cfg.optimizer, ', '.join(OPTIMIZERS),
    ))


def lr_at(step, cfg):
    """One-cycle schedule: linear warm-up from 0 to the peak, then cosine
    decay back to 0 at the final step.
    """
    if not 0 <= step <= cfg.steps:
        raise ValueError('step {} outside [0, {}]'.format(step, cfg.steps))
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / float(cfg.steps - cfg.warmup_steps)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
