# %% [markdown]
# # Compute and memory cost
#
# Closed-form ratios against a vanilla layer, the per-path MAC formula, and the
# instrumented counter that checks it.

# %%
from octconv.cost import count_macs, flops_ratio, layer_path_flops, memory_ratio, network_cost
from octconv.netspec import load_spec, octify
from octconv.oracle import random_oct_instance
from octconv.octave import oct_conv_forward
from importlib.resources import files

for a in (0, 0.125, 0.25, 0.5, 0.75, 0.875, 1.0):
    print(f"alpha={a:<6} flops {flops_ratio(a):.4f}  memory {memory_ratio(a):.4f}")

# %%
paths = layer_path_flops(16, 16, 32, 32, 3, 0.5, 0.5)
print(paths, paths.total)

x, k = random_oct_instance(0, 16, 16, 32, 32, 0.5, 0.5)
with count_macs() as c:
    oct_conv_forward(x, k)
print("counted", c.total)

# %% [markdown]
# Whole networks: a plain spec is converted with `octify`, which keeps the
# first convolution and places one entry and one exit octave layer.

# %%
spec = load_spec(files("octconv") / "specs" / "toy.spec")
print(octify(spec, 0.25).text())
report = network_cost(spec, 0.25)
for row in report.per_layer:
    if row.flops_theory:
        print(row.layer_id, row.kind, row.flops_theory, row.flops_counted, f"{row.ratio_vs_baseline:.3f}")
print("network flops ratio", round(report.flops_ratio, 4), "memory ratio", round(report.memory_ratio, 4))
