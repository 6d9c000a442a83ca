import numpy as np
import pytest

import gradcases
from mren.analysis import count_params
from mren.autograd import ParamStore, Tensor, add, concat_channels, conv2d, resize
from mren.errors import ConfigError, ShapeError
from mren.model import (
    DRACB_VARIANTS,
    VARIANTS,
    ModelConfig,
    dracb,
    init_model,
    mreb,
    mren_forward,
    rbwa,
    scacb,
    wsilbv,
)

SMALL = gradcases.SMALL


def _zero_tail(model):
    model.params["tail.weight"].data[...] = 0
    model.params["tail.bias"].data[...] = 0
    return model


@pytest.mark.parametrize("scale", [2, 3, 4])
@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shape(scale, variant):
    model = init_model(ModelConfig(scale=scale, n_mreb=1, variant=variant, **SMALL), seed=1)
    out = model(Tensor(np.random.default_rng(0).uniform(0, 1, (2, 3, 5, 7)).astype(np.float32)))
    assert out.shape == (2, 3, 5 * scale, 7 * scale)
    assert out.dtype == np.float32
    assert np.all(np.isfinite(out.data))


def test_init_deterministic_and_seeded():
    cfg = ModelConfig(scale=2, n_mreb=2)
    a, b, c = init_model(cfg, seed=3), init_model(cfg, seed=3), init_model(cfg, seed=4)
    assert a.params.names() == b.params.names()
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


def test_init_bounds_and_zero_bias():
    model = init_model(ModelConfig(scale=2, n_mreb=1), seed=0)
    for name, t in model.params.items():
        if name.endswith(".bias"):
            assert not t.data.any()
        else:
            fan_in = t.shape[1] * t.shape[2] * t.shape[3]
            assert np.abs(t.data).max() <= 1 / np.sqrt(fan_in)


def test_hierarchical_names():
    names = init_model(ModelConfig(scale=4, n_mreb=2)).params.names()
    assert names[0] == "head.weight" and names[-1] == "tail.bias"
    assert "mreb.1.scacb.2.compress.weight" in names
    assert "mreb.0.dracb.3.conv.weight" in names
    assert "rbwa.1.wsilbv.expand.bias" in names


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(scale=5),
        dict(variant="both"),
        dict(branch_channels=60),
        dict(distill_channels=70),
        dict(n_mreb=0),
        dict(base_channels=62),
        dict(w_comm=float("nan")),
    ],
)
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_config_dict_roundtrip_rejects_unknown():
    cfg = ModelConfig(scale=3, n_mreb=4, w_comm=0.5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"scale": 2, "depth": 3})


def test_parameter_count_relations():
    base = ModelConfig(scale=4)
    totals = [count_params(base.replace(n_mreb=n)).total for n in range(3, 9)]
    steps = set(np.diff(totals))
    assert steps == {count_params(base).per_mreb}
    assert count_params(base.replace(variant="scnc")).total == count_params(base).total
    osa, full, oca = (count_params(base.replace(variant=v)).total for v in ("osa", "full", "oca"))
    assert osa < full < oca
    assert len({count_params(base.replace(variant=v)).total for v in DRACB_VARIANTS + ("full",)}) == 1


def test_count_matches_initialized_model_and_seed_free():
    cfg = ModelConfig(scale=3, n_mreb=2)
    assert count_params(init_model(cfg, seed=0)).total == count_params(cfg).total
    assert count_params(init_model(cfg, seed=9)).total == init_model(cfg).num_params()


def _dracb_params(weight, bias):
    store = ParamStore()
    store.add("conv.weight", weight)
    store.add("conv.bias", bias)
    return store.scope("")


def test_dracb_closed_form():
    p = _dracb_params(np.zeros((4, 6, 1, 1)), np.ones(4))
    x = Tensor(np.random.default_rng(0).standard_normal((1, 6, 3, 3)))
    out, state = dracb(x, Tensor(np.ones((1, 4, 3, 3))), p, 0.2)
    np.testing.assert_allclose(out.data, 1.2 / (1 + np.exp(-1.2)), rtol=0, atol=1e-12)
    assert abs(out.data[0, 0, 0, 0] - 0.92223) < 1e-5
    np.testing.assert_allclose(state.data, 1.2, atol=1e-15)


def test_dracb_prev_absent_and_zero_weight():
    rng = np.random.default_rng(1)
    p = _dracb_params(rng.standard_normal((4, 6, 1, 1)), rng.standard_normal(4))
    x = Tensor(rng.standard_normal((2, 6, 4, 4)))
    prev = Tensor(rng.standard_normal((2, 4, 4, 4)))
    alone, _ = dracb(x, None, p, 0.2)
    raw = conv2d(x, p["conv.weight"], p["conv.bias"]).data
    np.testing.assert_allclose(alone.data, raw / (1 + np.exp(-raw)), rtol=1e-14, atol=1e-16)
    np.testing.assert_array_equal(dracb(x, prev, p, 0.0)[0].data, alone.data)
    assert not np.array_equal(dracb(x, prev, p, 0.2)[0].data, alone.data)
    with pytest.raises(ShapeError):
        dracb(x, Tensor(np.ones((2, 4, 3, 3))), p, 0.2)


def test_dracb_variants():
    rng = np.random.default_rng(2)
    p = _dracb_params(rng.standard_normal((4, 6, 1, 1)), np.zeros(4))
    x = Tensor(rng.standard_normal((1, 6, 3, 3)))
    prev = Tensor(rng.standard_normal((1, 4, 3, 3)))
    raw = conv2d(x, p["conv.weight"]).data
    only, s1 = dracb(x, prev, p, 0.2, "distill_only")
    np.testing.assert_array_equal(only.data, raw)
    assert s1 is None
    skip, s2 = dracb(x, prev, p, 0.2, "distill_skip")
    np.testing.assert_allclose(skip.data, raw + 0.2 * prev.data, atol=1e-14)
    assert s2 is skip


def test_zero_comm_equals_distill_sigmoid_model():
    cfg = ModelConfig(scale=2, n_mreb=2, w_comm=0.0)
    full = init_model(cfg, seed=5, dtype=np.float64)
    sig = init_model(cfg.replace(variant="distill_sigmoid"), seed=5, dtype=np.float64)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 6, 6)))
    np.testing.assert_array_equal(full(x).data, sig(x).data)


def test_wsilbv_zero_weights_scale_input():
    store = ParamStore()
    for name, shape in (("reduce", (2, 8, 1, 1)), ("expand", (8, 2, 1, 1))):
        store.add(f"{name}.weight", np.zeros(shape))
        store.add(f"{name}.bias", np.zeros(shape[0]))
    x = np.random.default_rng(0).standard_normal((2, 8, 4, 5))
    out = wsilbv(Tensor(x), store.scope(""))
    assert out.shape == x.shape
    np.testing.assert_allclose(out.data, 1.5 * x, rtol=1e-15)


@pytest.mark.parametrize("variant", ["full", "osa", "oca", "scnc"])
def test_scacb_and_mreb_preserve_shape(variant):
    model = init_model(ModelConfig(scale=2, n_mreb=1, variant=variant, **SMALL), seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((2, 8, 5, 6)).astype(np.float32))
    assert scacb(x, model.params.scope("mreb.0.scacb.0"), model.config.scacb_variant).shape == x.shape
    assert mreb(x, model.params.scope("mreb.0"), model.config).shape == x.shape
    with pytest.raises(ShapeError):
        mreb(Tensor(np.zeros((1, 7, 4, 4))), model.params.scope("mreb.0"), model.config)


def test_scnc_differs_from_full_only_by_exchange():
    cfg = ModelConfig(scale=2, n_mreb=1, **SMALL)
    full = init_model(cfg, seed=0, dtype=np.float64)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 8, 5, 5)))
    p = full.params.scope("mreb.0.scacb.0")
    assert not np.allclose(scacb(x, p, "full").data, scacb(x, p, "scnc").data)


@pytest.mark.parametrize("stage_scale", [2, 3])
def test_rbwa_shape_and_param_count(stage_scale):
    model = init_model(ModelConfig(scale=stage_scale, n_mreb=1, **SMALL), seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 8, 4, 5)).astype(np.float32))
    assert rbwa(x, model.params.scope("rbwa.0"), stage_scale).shape == (1, 8, 4 * stage_scale, 5 * stage_scale)
    blocks = count_params(model.config).blocks
    assert blocks["rbwa.0"] == count_params(ModelConfig(scale=2, n_mreb=1, **SMALL)).blocks["rbwa.0"]


@pytest.mark.parametrize("seed", range(5))
def test_block_gradients(seed):
    assert gradcases.wsilbv_error(seed) < 1e-4
    assert gradcases.dracb_error(seed) < 1e-4
    assert gradcases.scacb_error(seed) < 1e-4
    assert gradcases.rbwa_error(seed, stage_scale=2 + seed % 2) < 1e-4


@pytest.mark.parametrize("variant", ["osa", "oca", "scnc"])
def test_scacb_variant_gradients(variant):
    assert gradcases.scacb_error(0, variant) < 1e-4


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_zero_tail_is_bicubic_bit_exact(scale):
    model = _zero_tail(init_model(ModelConfig(scale=scale, n_mreb=1), seed=0, dtype=np.float64))
    x = Tensor(np.random.default_rng(scale).uniform(0, 1, (2, 3, 6, 5)))
    np.testing.assert_array_equal(model(x).data, resize("bicubic", x, scale).data)


def test_forward_matches_block_replay():
    model = init_model(ModelConfig(scale=2), seed=0)
    cfg, p = model.config, model.params
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))

    f0 = conv2d(x, p["head.weight"], p["head.bias"])
    f = f0
    for i in range(cfg.n_mreb):
        q = p.scope(f"mreb.{i}")
        state, distilled, r = None, [], f
        for j in range(cfg.mreb_stages):
            d, state = dracb(r, state, q.scope(f"dracb.{j}"), cfg.w_comm)
            distilled.append(d)
            r = scacb(r, q.scope(f"scacb.{j}"))
        distilled.append(dracb(r, state, q.scope(f"dracb.{cfg.mreb_stages}"), cfg.w_comm)[0])
        fused = conv2d(concat_channels(distilled), q["fuse.weight"], q["fuse.bias"])
        f = add(wsilbv(fused, q.scope("wsilbv")), f)
    f = add(f, f0)
    f = rbwa(f, p.scope("rbwa.0"), 2)
    expected = add(conv2d(f, p["tail.weight"], p["tail.bias"]), resize("bicubic", x, 2))
    assert mren_forward(x, model).data.tobytes() == expected.data.tobytes()


def test_end_to_end_head_gradient():
    assert gradcases.head_l1_error(0) < 1e-3


def test_network_gradient_directional():
    assert gradcases.network_error(1) < 1e-4


def test_forward_rejects_wrong_channels():
    model = init_model(ModelConfig(scale=2, n_mreb=1, **SMALL))
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((1, 4, 4, 4), dtype=np.float32)))
