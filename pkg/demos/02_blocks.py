"""The network's building blocks, their shapes and parameter budget."""

import numpy as np

from mren.analysis import count_params
from mren.autograd import Tensor, resize
from mren.model import ModelConfig, init_model

cfg = ModelConfig(scale=4)
model = init_model(cfg, seed=0)
report = count_params(model)
print(f"x4 model: {report.total} parameters, {report.per_mreb} per MREB")
for block, n in report.blocks.items():
    print(f"  {block:8s} {n:7d}")

lr = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
sr = model(lr)
print("LR", lr.shape, "-> SR", sr.shape)

# the residual branch is added to a bicubic upsample: zero the tail and only that remains
model.params["tail.weight"].data[...] = 0
same = np.array_equal(model(lr).data, resize("bicubic", lr, 4).data)
print("zero tail equals bicubic:", same)

# the width of the coordination block decides the variant budgets
for v in ("osa", "scnc", "full", "oca", "distill_only", "distill_skip"):
    print(f"  variant {v:14s} {count_params(cfg.replace(variant=v)).total}")
