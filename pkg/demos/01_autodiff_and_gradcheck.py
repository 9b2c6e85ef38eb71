"""
Tape gradients and the finite-difference check
==============================================

Build a tiny double-precision model, record one loss evaluation on a tape,
and compare every parameter group against central differences.
"""

import numpy as np

from agos.tensor import Tape, Tensor, conv2d, finite_diff_grad, parameter, tensor_sum
from agos.config import tiny_config
from agos.experiments import gradcheck
from agos.tensor import ConvKernel

# A single dilated convolution, reduced to a scalar.
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 6, 6, 2)))
kernel = ConvKernel(parameter(rng.standard_normal((3, 3, 2, 1)), "w"), parameter(np.zeros(1), "b"), dilation=3)

with Tape() as tape:
    loss = tensor_sum(conv2d(x, kernel))
tape.backward(loss, [kernel.weight, kernel.bias])

numeric = finite_diff_grad(lambda: float(conv2d(x, kernel).data.sum()), kernel.weight)
print("conv weight gradient max |analytic - numeric|:", np.abs(kernel.weight.grad - numeric).max())

# The same comparison over the whole model, one row per parameter group.
report = gradcheck(tiny_config())
print(report.format())
