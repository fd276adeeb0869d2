__version__ = '0.1.0.dev0'


import numpy
x_y = tuple(int(p) for p in numpy.__version__.split('.', 2)[:2])

if x_y < (1, 20):
    # sliding_window_view is needed by the convolution kernels.
    raise RuntimeError('numpy>=1.20.0 is required')

del x_y
del numpy
