# %% [markdown]
# # Reference oracles and gradient checks
#
# The oracles evaluate every output element by explicit index arithmetic. The
# low-frequency oracle reads the high input at `2p + 0.5 + i`; average pooling
# realizes the half-pixel offset as a 2x2 mean, strided convolution rounds it
# down to `2p + i`.

# %%
from octconv.octave import DownsampleStrategy, PathMask, oct_conv_forward
from octconv.oracle import gradcheck_oct, oct_high_ref, oct_low_ref, oracle_suite, random_oct_instance, rel_deviation

x, k = random_oct_instance(3, 8, 8, 8, 8, 0.5, 0.5)
y = oct_conv_forward(x, k)
print("high", rel_deviation(y.high, oct_high_ref(x, k)))
print("low avg", rel_deviation(y.low, oct_low_ref(x, k)))
ys = oct_conv_forward(x, k, DownsampleStrategy.STRIDED_CONV)
print("low stride", rel_deviation(ys.low, oct_low_ref(x, k, DownsampleStrategy.STRIDED_CONV)))

# %%
print(oracle_suite(7, instances=25))

# %% [markdown]
# Analytic backward against central differences in float64.

# %%
for mode, mask in [("dense", PathMask()), ("depthwise", PathMask()), ("dense", PathMask(enable_l_to_h=False))]:
    x, k = random_oct_instance(5, 4, 4, 6, 6, 0.5, 0.5, mode=mode)
    errs = gradcheck_oct(x, k, mask=mask)
    print(mode, mask, f"{max(errs.values()):.2e}")
