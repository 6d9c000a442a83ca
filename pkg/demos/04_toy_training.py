"""A short training run on procedural textures, then evaluation against bicubic.

Pass an epoch count on the command line for a longer run (8 epochs of 50
iterations take a few minutes on one core).
"""

import sys
import tempfile

from mren import data as D
from mren.model import ModelConfig, init_model
from mren.training import TrainConfig, evaluate, fit, windowed_mean

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
images = D.synthetic_textures(n=8, size=96, seed=0)
model = init_model(ModelConfig(scale=2, n_mreb=2), seed=0)
cfg = TrainConfig(total_epochs=epochs, iterations_per_epoch=50, batch=4, patch=64)

with tempfile.TemporaryDirectory() as out:
    log, _ = fit(model, images, cfg, out_dir=out, on_epoch=lambda e, lr, loss: print(f"epoch {e}  lr {lr:g}  loss {loss:.4f}"))

print(f"L1 first 50 iters {windowed_mean(log.losses, 50, 'start'):.4f}, last 50 {windowed_mean(log.losses, 50):.4f}")
named = [(str(i), im) for i, im in enumerate(images)]
print(f"PSNR trained {evaluate(model, named).mean_psnr:.2f} dB vs bicubic {evaluate(None, named, scale=2).mean_psnr:.2f} dB")
