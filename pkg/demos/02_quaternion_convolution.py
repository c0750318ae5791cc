#!/usr/bin/env python3
"""The quaternion convolution and its two equivalent formulations.

A quaternion filter bank holds four real kernel banks W0..W3. At every
tap of a valid cross-correlation the layer multiplies filter and input
quaternions with the Hamilton product and sums. The same map can be
written as one real convolution over the four stacked component planes
with a sign-structured 4x4 block kernel; both routes are shown here
against a literal per-pixel loop.
"""

import numpy as np

from quatcnn import QTensor, Quaternion, add, hamilton, qconv2d_forward, as_block_conv
from quatcnn.layers import QConvParams, conv2d_forward

rng = np.random.default_rng(3)
channels, filters, k = 2, 3, 3
height = width = 6

x = QTensor(rng.uniform(-1, 1, (4, channels, height, width)))
mk = lambda: rng.uniform(-1, 1, (filters, channels, k, k))
params = QConvParams(w0=mk(), w1=mk(), w2=mk(), w3=mk(),
                     bias=rng.uniform(-1, 1, (4, filters)))

out = qconv2d_forward(x, params)
print("input  (C, H, W):", x.shape)
print("output (F, OH, OW):", out.shape)

# route 1: the definition, written as loops
oh = ow = height - k + 1
loop = np.zeros((4, filters, oh, ow))
for f in range(filters):
    for i in range(oh):
        for j in range(ow):
            acc = Quaternion(*(float(params.bias[c, f]) for c in range(4)))
            for c in range(channels):
                for di in range(k):
                    for dj in range(k):
                        w_q = Quaternion(
                            float(params.w0[f, c, di, dj]),
                            float(params.w1[f, c, di, dj]),
                            float(params.w2[f, c, di, dj]),
                            float(params.w3[f, c, di, dj]),
                        )
                        acc = add(acc, hamilton(w_q, x.at(c, i + di, j + dj)))
            loop[:, f, i, j] = acc.components()
print("max |layer - per-pixel loop| =", np.max(np.abs(out.data - loop)))

# route 2: one real convolution of the stacked planes
block = as_block_conv(params)
print("block kernel shape:", block.w.shape, " (4F, 4C, k, k)")
stacked = conv2d_forward(x.data.reshape(4 * channels, height, width), block)
print("max |layer - block conv|     =",
      np.max(np.abs(out.data.reshape(stacked.shape) - stacked)))

# the sign pattern of the first block row, which is the Hamilton table
# read along the real output component: (+, -, -, -)
banks = (params.w0, params.w1, params.w2, params.w3)
signs = [float(np.sign(block.w[0, b * channels, 0, 0] / banks[b][0, 0, 0, 0]))
         for b in range(4)]
print("first block-row signs:", signs)
