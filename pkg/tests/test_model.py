import numpy as np
import pytest

from sest.errors import ShapeMismatch, UsageError, WindowMismatch
from sest.event_core import EventStream, SensorGeometry, voxelize
from sest.model import (
    ModelConfig,
    SestModel,
    StageConfig,
    apply_center_bias,
    encode,
    flatten_time,
    forward,
    fuse,
    logits,
    reconstruct,
    refine,
    unflatten_time,
)
from sest.tensor_engine import Tensor, ops
from sest.training import ablation_config

CFG = ModelConfig()


def inputs(bins=2, batch=1, seed=0):
    return np.log1p(np.random.default_rng(seed).poisson(0.5, (batch, bins, 2, 64, 64)).astype(float))


def shared(cfg_a, cfg_b, seed=0):
    """Two models of different configs sharing every parameter they have in common."""
    a, b = SestModel(cfg_a, seed), SestModel(cfg_b, seed + 1)
    for name, p in b.params.items():
        p.data = a.params[name].data.copy()
    return a, b


def test_parameter_count_and_init():
    m = SestModel(CFG)
    assert sum(p.data.size for p in m.parameters()) == 630_913
    assert m["center_bias"].shape == (64, 64)
    cb = m["center_bias"].data
    assert cb.min() >= 0 and cb.max() < 1
    for name, p in m.params.items():
        if name.endswith(".b") and not name.endswith(("ln1.b", "ln2.b", "bn.b")):
            assert not p.data.any(), name
    w = m["s1.b0.fc1.w"].data
    assert np.abs(w).max() <= 1 / np.sqrt(16)
    assert "center_bias" not in SestModel(ablation_config("no_center_bias", CFG)).params


def test_config_validation():
    with pytest.raises(UsageError):
        ModelConfig(height=48)
    with pytest.raises(UsageError):
        ModelConfig(bins=0)
    with pytest.raises(UsageError):
        ModelConfig(decoder="lstm")
    bad = (StageConfig(1, 16, 4, 3, 1),) + ModelConfig().stages[1:]
    with pytest.raises(WindowMismatch):
        ModelConfig(stages=bad)
    # windows larger than a late-stage map shrink to cover it
    assert CFG.stage_window(3) == 2


def test_flatten_roundtrip_and_index():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 2, 4, 4)))
    f = flatten_time(x)
    assert f.shape == (6, 2, 4, 4)
    assert np.array_equal(f.data[1 * 3 + 2], x.data[1, 2])
    assert np.array_equal(unflatten_time(f, 3).data, x.data)
    with pytest.raises(ShapeMismatch):
        flatten_time(Tensor(np.zeros((2, 2, 4, 4))))


def test_stage_shapes_and_time_equivariance():
    m = SestModel(CFG)
    x = inputs()
    feats = encode(flatten_time(Tensor(x)), m, 2)
    assert [f.shape for f in feats] == [(1, 2, 16, 16, 16), (1, 2, 32, 8, 8), (1, 2, 64, 4, 4), (1, 2, 128, 2, 2)]
    swapped = encode(flatten_time(Tensor(x[:, ::-1].copy())), m, 2)
    for a, b in zip(feats, swapped):
        assert np.array_equal(a.data[:, ::-1], b.data)
    z = encode(Tensor(np.zeros((2, 2, 64, 64))), m, 2)
    assert all(np.all(np.isfinite(f.data)) for f in z)
    u = fuse(feats, m)
    assert u.shape == (1, 2, 128, 16, 16)
    zz = refine(u, m)
    assert zz.shape == (1, 2, 32, 16, 16)
    assert reconstruct(zz, m).shape == (1, 2, 1, 64, 64)


def test_fuse_blocks_are_independent():
    m = SestModel(CFG)
    feats = encode(flatten_time(Tensor(inputs())), m, 2)
    u = fuse(feats, m).data
    zeroed = [feats[0]] + [Tensor(np.zeros(f.shape)) for f in feats[1:]]
    assert np.array_equal(fuse(zeroed, m).data[:, :, :32], u[:, :, :32])
    for i in range(1, 5):
        m[f"fuse{i}.w"].data[:] = 0
    assert not fuse(feats, m).data.any()


def test_refine_zero_and_reconstruct_constant():
    m = SestModel(CFG).eval()
    assert not refine(Tensor(np.zeros((1, 2, 128, 16, 16))), m).data.any()
    m["out.w"].data[:] = 0
    m["out.b"].data[:] = 0.37
    y = reconstruct(Tensor(np.random.default_rng(0).random((1, 2, 32, 16, 16))), m).data
    np.testing.assert_allclose(y, 0.37, rtol=0, atol=1e-15)


def test_center_bias_examples():
    y = Tensor(np.random.default_rng(0).standard_normal((2, 3, 1, 4, 5)))
    assert np.array_equal(apply_center_bias(y, Tensor(np.zeros((4, 5)))).data, y.data)
    assert np.array_equal(apply_center_bias(y, Tensor(np.ones((4, 5)))).data, 2 * y.data)
    mb = np.random.default_rng(1).random((4, 5))
    out = apply_center_bias(y, Tensor(mb)).data
    for idx in np.ndindex(y.shape):
        assert out[idx] == y.data[idx] * (1 + mb[idx[-2], idx[-1]])
    with pytest.raises(ShapeMismatch):
        apply_center_bias(y, Tensor(np.zeros((5, 4))))


@pytest.mark.parametrize("bins", [1, 2, 7])
def test_forward_shape_and_range(bins):
    m = SestModel(ModelConfig(bins=bins))
    y = forward(inputs(bins, batch=2), m).data
    assert y.shape == (2, bins, 1, 64, 64)
    assert y.min() > 0 and y.max() < 1


def test_forward_accepts_voxel_grids():
    geom = SensorGeometry(64, 64)
    s = EventStream.from_events(geom, [(3, 4, 10, 1), (60, 2, 150, -1)])
    g = voxelize(s, 2, 100, 0)
    m = SestModel(CFG).eval()
    x = np.log1p(g.counts.astype(float))[None]
    assert np.array_equal(forward(g, m).data, forward(x, m).data)
    with pytest.raises(ShapeMismatch):
        forward(np.zeros((1, 2, 2, 32, 32)), m)


def test_forward_deterministic_and_zero_head():
    m = SestModel(CFG).eval()
    x = inputs()
    assert np.array_equal(forward(x, m).data, forward(x, m).data)
    m["out.w"].data[:] = 0
    m["out.b"].data[:] = 0
    m["center_bias"].data[:] = 0
    assert np.all(forward(x, m).data == 0.5)


@pytest.mark.parametrize("training", [True, False])
def test_zero_center_bias_matches_no_center_bias_bitwise(training):
    base, variant = shared(CFG, ablation_config("no_center_bias", CFG))
    base["center_bias"].data[:] = 0
    base.train(training)
    variant.train(training)
    x = inputs(seed=3)
    assert np.array_equal(forward(x, base).data, forward(x, variant).data)


def test_conv2d_decoder_equals_conv3d_with_unit_temporal_kernel():
    cfg2 = ablation_config("conv2d_decoder", CFG)
    m3, m2 = SestModel(CFG, 0), SestModel(cfg2, 0)
    for name, p in m2.params.items():
        q = m3.params[name]
        if q.data.ndim == 5:
            # conv3d with only the centre temporal tap is the per-bin conv2d
            w = np.zeros_like(q.data)
            w[:, :, 1] = p.data
            q.data = w
        else:
            q.data = p.data.copy()
    x = inputs(seed=5)
    a = logits(x, m3.eval()).data
    b = logits(x, m2.eval()).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_state_dict_roundtrip():
    m = SestModel(CFG, seed=4)
    other = SestModel(CFG, seed=9)
    other.load_state_dict(m.state_dict(optimizer=True))
    x = inputs()
    assert np.array_equal(forward(x, m.eval()).data, forward(x, other.eval()).data)
    with pytest.raises(ShapeMismatch):
        SestModel(ablation_config("no_center_bias", CFG)).load_state_dict(m.state_dict())


def test_bn_running_stats_follow_mode():
    m = SestModel(CFG)
    before = m.buffers["bn.running_mean"].copy()
    forward(inputs(), m, update_stats=False)
    assert np.array_equal(m.buffers["bn.running_mean"], before)
    forward(inputs(), m)
    assert not np.array_equal(m.buffers["bn.running_mean"], before)
    m.eval()
    after = m.buffers["bn.running_mean"].copy()
    forward(inputs(), m)
    assert np.array_equal(m.buffers["bn.running_mean"], after)


def test_blur_then_sigmoid_order():
    m = SestModel(CFG).eval()
    x = inputs()
    raw = logits(x, m)
    assert np.array_equal(ops.sigmoid(raw).data, forward(x, m).data)
