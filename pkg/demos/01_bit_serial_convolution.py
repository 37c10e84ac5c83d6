"""
Bit-serial convolution, checked against a plain integer reference
==================================================================

Weights are packed into 256-bit blocks, one bit plane at a time, and the
accelerator model rebuilds every output from those planes alone.
"""
import numpy as np

from nvmsim.qnn import LayerSpec, Mode, QTensor, RequantParams, conv_neureka, pack_weights, reference_layer

rng = np.random.default_rng(0)

# a 3x3 dense layer with 4-bit weights and per-channel requantization
c_in, c_out, qw = 40, 24, 4
rq = RequantParams(rng.integers(1, 256, c_out), rng.integers(-5000, 5000, c_out), np.full(c_out, 12))
spec = LayerSpec(Mode.DENSE3X3, c_in, c_out, qw, stride=1, requant=rq)
raw = rng.integers(-8, 8, spec.weight_shape)
x = QTensor(rng.integers(0, 256, (10, 10, c_in)).astype(np.uint8))

ws = pack_weights(raw, spec)
print(f"{raw.size} weights at {qw} bits -> {ws.blocks.shape[0]} blocks of 256 bits")

# the two routes must agree bit for bit
y = conv_neureka(x, ws, spec)
ref = reference_layer(x, raw, spec)
print("output", y.data.shape, "identical:", np.array_equal(y.data, ref.data))

# raw 32-bit accumulators skip requantization entirely
raw_spec = LayerSpec(Mode.POINTWISE1X1, c_in, c_out, 8, raw_output=True)
w8 = rng.integers(-128, 128, raw_spec.weight_shape)
acc = conv_neureka(x, pack_weights(w8, raw_spec), raw_spec)
print("raw accumulators", acc.dtype, acc.shape, "min", acc.min(), "max", acc.max())
