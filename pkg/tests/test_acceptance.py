"""Acceptance gate: one test group per criterion, summarized at the end of the run."""

import io
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

import gradcases
from mren import data as D
from mren.analysis import conv_macs, count_params, estimate_flops, parse_csv
from mren.autograd import ParamStore, Tensor, check_primitive, resize
from mren.checkpoint import load_checkpoint, save_checkpoint
from mren.cli import main
from mren.errors import ConfigError
from mren.metrics import psnr_y, ssim_y
from mren.model import DRACB_VARIANTS, ModelConfig, dracb, init_model
from mren.training import TrainConfig, evaluate, fit, make_checkpoint, model_from_checkpoint, windowed_mean
from oracles import naive_psnr, naive_ssim, random_pair

TOY_MODEL = ModelConfig(scale=2, n_mreb=2)
TOY_TRAIN = TrainConfig(total_epochs=8, iterations_per_epoch=50, batch=4, patch=64, seed=0)


def _run(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        status = main(argv)
    return status, buf.getvalue()


# ---------------------------------------------------------------- 1


PRIMITIVE_SUITE = [
    "conv2d_1x1", "conv2d_3x3", "conv2d_5x5", "dwconv_1x1", "dwconv_3x3", "dwconv_5x5",
    "gelu", "sigmoid", "add", "mul", "axpy", "concat_channels",
    "bilinear_x2", "bilinear_x3", "bicubic_x2", "bicubic_x3", "l1_loss",
]


@pytest.mark.criterion(1, "gradient suite < 1e-4 relative in double precision, under 2 min")
def test_gradient_suite(detail):
    start = time.process_time()
    errors = {name: max(check_primitive(name, (2, 4, 6, 6), seed=s) for s in range(5)) for name in PRIMITIVE_SUITE}
    errors["wsilbv"] = max(gradcases.wsilbv_error(s) for s in range(5))
    errors["dracb"] = max(gradcases.dracb_error(s) for s in range(5))
    errors["scacb"] = max(gradcases.scacb_error(s, v) for s in range(5) for v in ("full", "osa", "oca"))
    errors["network"] = max(gradcases.network_error(s) for s in range(3))
    elapsed = time.process_time() - start
    worst = max(errors, key=errors.get)
    detail(f"worst {worst} {errors[worst]:.1e}")
    detail(f"{elapsed:.0f}s CPU")
    assert all(e < 1e-4 for e in errors.values()), errors
    assert elapsed < 120


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2, "zero tail: forward is bicubic bit-for-bit; infer within 1 level")
@pytest.mark.parametrize("scale", [2, 3, 4])
def test_residual_identity(scale, tmp_path):
    model = init_model(ModelConfig(scale=scale, n_mreb=2), seed=scale, dtype=np.float64)
    model.params["tail.weight"].data[...] = 0
    model.params["tail.bias"].data[...] = 0
    x = Tensor(np.random.default_rng(scale).uniform(0, 1, (2, 3, 9, 7)))
    assert model(x).data.tobytes() == resize("bicubic", x, scale).data.tobytes()

    single = model.astype(np.float32)
    save_checkpoint(tmp_path / "z.ckpt", make_checkpoint(single))
    img = D.synthetic_textures(n=1, size=24, seed=scale)[0]
    D.save_png(img, tmp_path / "in.png")
    status, _ = _run(["infer", "--model", str(tmp_path / "z.ckpt"), "--input", str(tmp_path / "in.png"), "--output", str(tmp_path / "out.png")])
    assert status == 0
    lr = img.astype(np.float64).transpose(2, 0, 1)[None] / 255
    ref = resize("bicubic", Tensor(lr), scale).data[0].transpose(1, 2, 0)
    ref = np.rint(np.clip(ref, 0, 1) * 255).astype(int)
    assert np.max(np.abs(D.load_png(tmp_path / "out.png").astype(int) - ref)) <= 1


# ---------------------------------------------------------------- 3


@pytest.mark.criterion(3, "attention communication closed form and w_comm = 0 degeneracy")
def test_dracb_oracle(detail):
    store = ParamStore()
    store.add("conv.weight", np.zeros((20, 60, 1, 1)))
    store.add("conv.bias", np.ones(20))
    x = Tensor(np.random.default_rng(0).standard_normal((1, 60, 4, 4)))
    out, _ = dracb(x, Tensor(np.ones((1, 20, 4, 4))), store.scope(""), 0.2)
    detail(f"F = {out.data[0, 0, 0, 0]:.6f}")
    assert np.max(np.abs(out.data - 0.92223)) < 1e-5

    cfg = ModelConfig(scale=2, n_mreb=2, w_comm=0.0)
    a = init_model(cfg, seed=1, dtype=np.float64)
    b = init_model(cfg.replace(variant="distill_sigmoid"), seed=1, dtype=np.float64)
    lr = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 8, 8)))
    assert a(lr).data.tobytes() == b(lr).data.tobytes()


# ---------------------------------------------------------------- 4


@pytest.mark.criterion(4, "parameter accounting: affine in n_mreb, totals within 15%, variant ordering")
def test_parameter_accounting(detail):
    base = ModelConfig(scale=4)
    sweep = [count_params(base.replace(n_mreb=n)).total for n in range(3, 9)]
    increments = set(np.diff(sweep).tolist())
    assert len(increments) == 1
    report = count_params(base)
    detail(f"x4 total {report.total} ({100 * (report.total - 298e3) / 298e3:+.1f}%)")
    detail(f"per-MREB {report.per_mreb} ({100 * (report.per_mreb - 34e3) / 34e3:+.1f}%)")
    assert increments == {report.per_mreb}
    assert abs(report.total - 298_000) <= 0.15 * 298_000
    assert abs(report.per_mreb - 34_000) <= 0.15 * 34_000
    t = {v: count_params(base.replace(variant=v)).total for v in ("osa", "oca", "scnc", "full")}
    assert t["osa"] < t["full"] == t["scnc"] < t["oca"]
    assert len({count_params(base.replace(variant=v)).total for v in DRACB_VARIANTS + ("full",)}) == 1
    status, out = _run(["analyze"])
    assert status == 0
    assert f"total parameters x4: {report.total} vs reported 298.0K (delta {report.total - 298000:+d}" in out


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5, "metric oracles on 20 random 64x64 pairs, cap, identity and unit offset")
def test_metric_oracles(detail):
    dp = ds = 0.0
    for seed in range(20):
        a, b = random_pair(seed)
        dp = max(dp, abs(psnr_y(a, b, 2) - naive_psnr(a, b, 2)))
        ds = max(ds, abs(ssim_y(a, b, 2) - naive_ssim(a, b, 2)))
    detail(f"max |dPSNR| {dp:.1e} dB, max |dSSIM| {ds:.1e}")
    assert dp < 1e-6 and ds < 1e-5
    a, _ = random_pair(0)
    assert psnr_y(a, a, 2) == 100.0
    assert ssim_y(a, a, 2) == 1.0
    base = np.random.default_rng(0).uniform(0, 200, (32, 32, 3))
    assert abs(psnr_y(base, base + 255 / 219, 2) - 48.1308) < 1e-3


# ---------------------------------------------------------------- 6 and 7


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    images = D.synthetic_textures(n=8, size=96, seed=0)
    start = time.perf_counter()
    model = init_model(TOY_MODEL, seed=0)
    log, final = fit(model, images, TOY_TRAIN, out_dir=root / "run1")
    elapsed = time.perf_counter() - start
    return {"root": root, "images": images, "model": model, "log": log, "final": final, "elapsed": elapsed}


@pytest.mark.criterion(6, "toy training: loss halves, beats bicubic by 0.2 dB, under 10 min")
def test_toy_training(toy, detail):
    losses = toy["log"].losses
    assert len(losses) == 400
    first, last = windowed_mean(losses, 50, at="start"), windowed_mean(losses, 50)
    named = [(str(i), im) for i, im in enumerate(toy["images"])]
    ours = evaluate(toy["model"], named).mean_psnr
    base = evaluate(None, named, scale=2).mean_psnr
    detail(f"L1 {first:.4f} -> {last:.4f}")
    detail(f"PSNR {ours:.2f} vs bicubic {base:.2f} dB")
    detail(f"{toy['elapsed']:.0f}s")
    assert last < 0.5 * first
    assert ours - base >= 0.2
    assert toy["elapsed"] < 600


@pytest.mark.criterion(7, "determinism: identical reruns, bit-exact checkpoint roundtrip, exact resume")
def test_determinism_and_persistence(toy, detail):
    root, images = toy["root"], toy["images"]
    fit(init_model(TOY_MODEL, seed=0), images, TOY_TRAIN, out_dir=root / "run2")
    names = sorted(p.name for p in (root / "run1").glob("*.ckpt"))
    assert len(names) == 9
    for name in names:
        assert (root / "run1" / name).read_bytes() == (root / "run2" / name).read_bytes(), name

    loaded = model_from_checkpoint(load_checkpoint(root / "run1" / "latest.ckpt"))
    x = Tensor(D.to_tensor(images[0]))
    assert loaded(x).data.tobytes() == toy["model"](x).data.tobytes()

    resumed = init_model(TOY_MODEL, seed=123)
    fit(resumed, images, TOY_TRAIN, out_dir=root / "run3", resume=root / "run1" / "epoch_0004.ckpt")
    for epoch in range(5, 9):
        name = f"epoch_{epoch:04d}.ckpt"
        assert (root / "run1" / name).read_bytes() == (root / "run3" / name).read_bytes(), name
    detail(f"{len(names)} checkpoints identical; resume from epoch 4 identical")


# ---------------------------------------------------------------- 8


ABLATION_AXES = {
    "mreb": "3,4,5,6,7,8",
    "w": ",".join(f"{0.1 * k:.1f}" for k in range(11)),
    "scacb": "osa,oca,scnc,full",
    "dracb": "distill_only,distill_sigmoid,distill_skip,full",
}


@pytest.fixture(scope="module")
def ablation_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ablate")
    for i, im in enumerate(D.synthetic_textures(n=4, size=48, seed=3)):
        D.save_png(im, d / f"t{i}.png")
    return d


@pytest.mark.criterion(8, "ablation harness runs every axis value for 10 steps with finite results")
@pytest.mark.parametrize("axis", list(ABLATION_AXES))
def test_ablation_harness(axis, ablation_dir, tmp_path, detail):
    csv_path = tmp_path / "rows.csv"
    status, _ = _run([
        "ablate", "--axis", axis, "--values", ABLATION_AXES[axis], "--data-dir", str(ablation_dir),
        "--budget-iters", "10", "--patch", "24", "--batch", "2", "--csv", str(csv_path),
    ])
    assert status == 0
    rows = parse_csv(csv_path.read_text())
    assert len(rows) == len(ABLATION_AXES[axis].split(","))
    assert all(r["iters"] == 10 and np.isfinite(r["final_loss"]) for r in rows)
    detail(f"{axis}: {len(rows)} variants")


# ---------------------------------------------------------------- 9


@pytest.mark.criterion(9, "FLOPs: closed-form single conv, mac2 = 2 x mac, x2 report beside 23.8G")
def test_flops(detail):
    assert conv_macs(60, 60, 3, 64, 64) == 132_710_400
    cfg = ModelConfig(scale=2, n_mreb=1)
    layer = {name: n for name, _, n in estimate_flops(cfg, (64, 64)).layers}["rbwa.0.conv"]
    assert layer == 132_710_400 + 60 * 64 * 64
    x2 = ModelConfig(scale=2)
    mac = estimate_flops(x2, (1280, 720))
    assert estimate_flops(x2, (1280, 720), "mac2").total == 2 * mac.total
    status, out = _run(["analyze", "--scale", "2", "--resolution", "1280x720", "--convention", "mac"])
    assert status == 0
    line = next(l for l in out.splitlines() if l.startswith("x2 comparison"))
    assert "23.8G" in line and "assumptions:" in out
    detail(line.split(";")[0])
    with pytest.raises(ConfigError):
        estimate_flops(x2, (1280, 720), "flops")
