import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedprune import tensor as T
from fedprune.checkpoint import load_checkpoint, save_checkpoint
from fedprune.errors import ConfigError, ContractViolation
from fedprune.graph import (FAMILIES, ConvLayer, DenseLayer, Flatten, InceptionBlock, ModelGraph,
                            ResidualBlock, build_architecture, count_flops, count_params, forward,
                            init_std, init_weights)
from fedprune.pruning import apply_keep_sets
from fedprune.tensor import Tensor


def small(family, seed=0):
    widths = {"conv": (4, 6), "resnet": (4, 3, 3, 3), "inception": (2, 3, 3)}[family]
    return init_weights(build_architecture(family, widths, (1, 12, 12), 5), seed)


def test_count_params_single_conv():
    m = ModelGraph([ConvLayer.new(1, 8, 5)], (1, 28, 28), 8)
    assert count_params(m) == 8 * (25 + 1) == 208


def test_count_params_dense():
    m = ModelGraph([Flatten(), DenseLayer.new(10, 62)], (10,), 62)
    assert count_params(m) == 682


def test_count_params_empty():
    assert count_params(ModelGraph([], (1, 4, 4), 2)) == 0


def test_count_flops_conv_same_28():
    m = ModelGraph([ConvLayer.new(1, 8, 5)], (1, 28, 28), 8)
    assert count_flops(m) == 2 * 5 * 5 * 1 * 28 * 28 * 8 == 313_600


def test_count_flops_identity_graph():
    assert count_flops(ModelGraph([], (1, 4, 4), 2)) == 0
    assert count_flops(ModelGraph([Flatten()], (1, 4, 4), 2)) == 0


def test_doubling_filters_doubles_conv_flops():
    a = ModelGraph([ConvLayer.new(3, 4, 5)], (3, 10, 10), 2)
    b = ModelGraph([ConvLayer.new(3, 8, 5)], (3, 10, 10), 2)
    assert count_flops(b) == 2 * count_flops(a)


def test_count_flops_dense_and_pool_convention():
    m = build_architecture("conv", (2,), (1, 4, 4), 3, kernel=3)
    # conv 2*9*1*16*2 + relu 32 + pool 8 + dense 2*8*3
    assert count_flops(m) == 2 * 9 * 16 * 2 + 32 + 8 + 2 * 8 * 3


def test_build_conv_family_baseline():
    m = build_architecture("conv", None, (1, 28, 28), 62)
    # conv1 1->32, conv2 32->64, dense 64*7*7 -> 62
    expected = 32 * 26 + 64 * (32 * 25 + 1) + 64 * 49 * 62 + 62
    assert count_params(m) == expected


def test_resnet_second_convs_not_prunable():
    m = build_architecture("resnet")
    blocks = [n for n in m.nodes if isinstance(n, ResidualBlock)]
    assert len(blocks) == 3
    assert all(not b.conv2.prunable and b.conv1.prunable for b in blocks)
    assert len(m.conv_layers()) == 7


def test_inception_branch_convs_prunable():
    m = build_architecture("inception")
    convs = m.conv_layers()
    assert len(convs) == 9
    assert all(layer.prunable for _, layer in convs)
    assert all(isinstance(n, InceptionBlock) for n in m.nodes[:5:2])


def test_unknown_family():
    with pytest.raises(ConfigError):
        build_architecture("transformer")


@pytest.mark.parametrize("family", FAMILIES)
def test_forward_batch_consistency(family, rng):
    m = small(family)
    x = rng.normal(size=(1, 1, 12, 12))
    one = forward(m, x).data
    eight = forward(m, np.repeat(x, 8, axis=0)).data
    assert one.shape == (1, 5)
    np.testing.assert_allclose(eight, np.repeat(one, 8, axis=0), atol=1e-6, rtol=0)


def test_forward_shape_mismatch():
    with pytest.raises(ContractViolation):
        forward(small("conv"), np.zeros((2, 1, 10, 10)))


def test_residual_with_zero_block_convs_reduces_to_skip_path(rng):
    m = small("resnet")
    zeros = {}
    for name, layer in m.conv_layers():
        if name != "0":
            zeros[f"{name}.weight"] = Tensor(np.zeros(layer.weight.shape, np.float32), requires_grad=True)
            zeros[f"{name}.bias"] = Tensor(np.zeros(layer.bias.shape, np.float32), requires_grad=True)
    m.load_parameters(zeros)
    x = rng.normal(size=(3, 1, 12, 12))
    # skip-only oracle: stem -> relu -> pool -> (relu(x) = x) -> pool -> pool -> dense
    stem = m.nodes[0]
    h = np.maximum(T.conv2d(Tensor(x), stem.weight, stem.bias).data, 0)
    for _ in range(3):
        b, c, hh, ww = h.shape
        h = h[:, :, :hh // 2 * 2, :ww // 2 * 2].reshape(b, c, hh // 2, 2, ww // 2, 2).max(axis=(3, 5))
    dense = m.nodes[-1]
    want = h.reshape(3, -1) @ dense.weight.data.astype(np.float64) + dense.bias.data
    np.testing.assert_allclose(forward(m, x).data, want, atol=1e-9)


def test_init_deterministic_and_seed_sensitive():
    base = build_architecture("conv", (8, 16), (1, 12, 12), 4)
    a, b, c = init_weights(base, 3), init_weights(base, 3), init_weights(base, 4)
    for (_, ta), (_, tb), (_, tc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert ta.data.tobytes() == tb.data.tobytes()
    assert any(not np.array_equal(ta.data, tc.data) for (_, ta), (_, tc)
               in zip(a.named_parameters(), c.named_parameters()) if ta.size > 1 and np.any(ta.data))


@pytest.mark.parametrize("family", FAMILIES)
def test_init_stddev_near_fan_in_target(family):
    m = init_weights(build_architecture(family), 0)
    checked = 0
    for name, t in m.named_parameters():
        if name.endswith("weight") and t.size >= 1000:
            assert abs(t.data.std() / init_std(t.shape) - 1) < 0.2, name
            checked += 1
    assert checked


@pytest.mark.parametrize("family", FAMILIES)
def test_checkpoint_round_trip_bit_exact(family, tmp_path):
    m = small(family, seed=5)
    p = save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(p)
    assert [n for n, _ in back.named_parameters()] == [n for n, _ in m.named_parameters()]
    for (_, a), (_, b) in zip(m.named_parameters(), back.named_parameters()):
        assert a.data.dtype == b.data.dtype and a.data.tobytes() == b.data.tobytes()
    assert save_checkpoint(back, tmp_path / "again.ckpt").read_bytes() == p.read_bytes()
    assert [l.prunable for _, l in back.conv_layers()] == [l.prunable for _, l in m.conv_layers()]


def test_checkpoint_blobs_are_little_endian_f4(tmp_path):
    import io
    import zipfile
    p = save_checkpoint(small("conv"), tmp_path / "m.ckpt")
    with zipfile.ZipFile(p) as zf:
        names = zf.namelist()
        assert "architecture.json" in names
        blob = zf.read("weights/0.weight.npy")
    arr = np.lib.format.read_array(io.BytesIO(blob))
    assert arr.dtype.str == "<f4" and arr.shape == (4, 1, 5, 5)


@given(st.sampled_from(FAMILIES), st.integers(0, 10_000), st.data())
def test_pruned_graphs_keep_logit_shape_and_shrink(family, seed, data):
    m = small(family, seed)
    keep = {}
    for name, layer in m.conv_layers():
        if layer.prunable and layer.filters >= 2 and data.draw(st.booleans()):
            n = data.draw(st.integers(1, layer.filters - 1))
            keep[name] = sorted(data.draw(st.permutations(range(layer.filters)))[:n])
    p = apply_keep_sets(m, keep)
    x = np.random.default_rng(seed).normal(size=(2, 1, 12, 12))
    assert forward(p, x).shape == (2, 5)
    if keep:
        assert count_params(p) < count_params(m)
        assert count_flops(p) < count_flops(m)
    else:
        assert count_params(p) == count_params(m)
