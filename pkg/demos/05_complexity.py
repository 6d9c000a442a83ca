"""Parameter sweep and FLOPs breakdown at 1280x720 output."""

from mren.analysis import PUBLISHED_FLOPS_X2, count_params, emit_table, estimate_flops, human
from mren.model import ModelConfig

rows = []
for n in range(3, 9):
    rows.append({"n_mreb": n, "params": count_params(ModelConfig(scale=4, n_mreb=n)).total})
print(emit_table(rows)[0])

# 1280 is not a multiple of 3, so x3 uses the nearest width that is
for scale, res in ((2, (1280, 720)), (3, (1278, 720)), (4, (1280, 720))):
    rep = estimate_flops(ModelConfig(scale=scale), res)
    kinds = ", ".join(f"{k} {human(v, 'G')}" for k, v in rep.by_kind().items())
    print(f"\nx{scale} at {res[0]}x{res[1]}: {human(rep.total, 'G')} ({kinds})")

rep = estimate_flops(ModelConfig(scale=2), (1280, 720))
print(f"\nx2 estimate {human(rep.total, 'G')} vs reported {human(PUBLISHED_FLOPS_X2, 'G')}")
print(rep.assumptions())
