# %% [markdown]
# # Octave tensors and the four-path convolution
#
# A feature map with `c` channels is split into a high-frequency group at full
# resolution and a low-frequency group at half resolution. `alpha` is the
# share of channels that go low.

# %%
import numpy as np

from octconv import rng
from octconv.cost import split_channels
from octconv.octave import OctTensor, make_oct_kernel, oct_conv_forward
from octconv.tensor import avg_pool2, conv2d, upsample_nearest2

print(split_channels(8, 0.25), split_channels(10, 0.125))

# %%
g = rng.stream(0, "nb01")
x = OctTensor(g.standard_normal((1, 4, 8, 8)), g.standard_normal((1, 4, 4, 4)), 0.5)
k = make_oct_kernel(8, 8, 3, 0.5, 0.5, seed=1)
for name, block in k.blocks():
    print(name, block.shape)
print("params", k.param_count(), "vanilla", 8 * 8 * 9)

# %% [markdown]
# The forward pass is two sums of two convolutions each. Writing it out by hand
# gives the same numbers as the library call.

# %%
y = oct_conv_forward(x, k)
high = conv2d(x.high, k.w_hh, 1, 1) + upsample_nearest2(conv2d(x.low, k.w_lh, 1, 1))
low = conv2d(x.low, k.w_ll, 1, 1) + conv2d(avg_pool2(x.high), k.w_hl, 1, 1)
print(np.abs(y.high - high).max(), np.abs(y.low - low).max())

# %% [markdown]
# With `alpha = 0` on both sides the low groups are empty and the layer is an
# ordinary convolution, bit for bit.

# %%
plain = g.standard_normal((1, 3, 8, 8))
k0 = make_oct_kernel(3, 5, 3, seed=2)
print(oct_conv_forward(OctTensor.from_tensor(plain), k0).high.tobytes() == conv2d(plain, k0.w_hh, 1, 1).tobytes())
