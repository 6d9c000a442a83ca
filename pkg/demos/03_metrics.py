"""Degradation, bicubic baseline and Y-channel PSNR/SSIM on procedural textures."""

from mren import data as D
from mren.training import evaluate, upscale
from mren.metrics import psnr_y, ssim_y

images = D.synthetic_textures(n=4, size=96, seed=1)
for scale in (2, 3, 4):
    hr = D.crop_to_multiple(images[0], scale)
    lr = D.degrade(hr, scale)
    sr = upscale(None, lr, scale)
    print(f"x{scale}: LR {lr.shape[:2]} -> SR {sr.shape[:2]}  PSNR {psnr_y(sr, hr, scale):.2f} dB  SSIM {ssim_y(sr, hr, scale):.4f}")

result = evaluate(None, [(f"tex{i}", im) for i, im in enumerate(images)], scale=2)
for name, p, s in result.rows:
    print(f"  {name}: {p:.2f} / {s:.4f}")
print(f"mean {result.mean_psnr:.2f} / {result.mean_ssim:.4f}")
print("identical images:", psnr_y(images[0], images[0], 2), "dB", ssim_y(images[0], images[0], 2))
