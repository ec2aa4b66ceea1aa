import numpy as np
import pytest

from ossa.backbone import (
    INSERTION_POINTS,
    ArchConfig,
    Backbone,
    BackboneConfigError,
    build_backbone,
)
from ossa.layers import Conv2d, col2im, im2col, softmax_cross_entropy
from ossa.transform import make_rng, ossa, sample_perturbation, NoiseSpec, style_backward
from ossa.stats import ChannelStats

from oracles import central_difference, conv_loop, rel_err


def test_same_seed_same_weights():
    a, b = build_backbone(seed=3), build_backbone(seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    c = build_backbone(seed=4)
    assert not np.array_equal(a.params["stem.weight"], c.params["stem.weight"])


def test_logits_shape():
    net = build_backbone(ArchConfig(n_classes=5), seed=0)
    x = np.random.default_rng(0).random((4, 3, 32, 32))
    assert net.forward(x).shape == (4, 5)


@pytest.mark.parametrize("point", INSERTION_POINTS)
def test_feature_shapes(point):
    net = build_backbone(seed=0)
    x = np.random.default_rng(0).random((2, 3, 32, 32))
    fmap = net.features(x, point)
    assert fmap.shape == (2,) + net.feature_shape(point)
    assert net.feature_shape("post_stem") == (8, 32, 32)


def test_invalid_configs():
    with pytest.raises(BackboneConfigError):
        ArchConfig(widths=(8, 8))
    with pytest.raises(BackboneConfigError):
        ArchConfig(frozen=("stage1",))
    with pytest.raises(BackboneConfigError):
        ArchConfig(n_classes=1)
    with pytest.raises(BackboneConfigError):
        build_backbone(seed=0).features(np.zeros((1, 3, 32, 32)), "post_head")
    with pytest.raises(BackboneConfigError):
        build_backbone(seed=0).forward(np.zeros((1, 1, 32, 32)))


@pytest.mark.parametrize("stride,pad,size", [(1, 1, 7), (2, 1, 7), (2, 1, 8), (1, 0, 5)])
def test_conv_matches_loop(stride, pad, size):
    rng = np.random.default_rng(stride + pad + size)
    conv = Conv2d(rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4), stride=stride, pad=pad)
    x = rng.normal(size=(2, 3, size, size))
    np.testing.assert_allclose(conv.forward(x), conv_loop(x, conv.weight, conv.bias, stride, pad), atol=1e-12)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 6))
    cols = im2col(x, 3, 2, 1)
    y = rng.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * col2im(y, x.shape, 3, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(3, 4))
    labels = np.array([0, 3, 1])
    _, grad = softmax_cross_entropy(logits, labels)
    num = central_difference(lambda z: softmax_cross_entropy(z, labels)[0], logits)
    assert rel_err(grad, num) < 1e-6


def _tiny(frozen=("stem",)):
    arch = ArchConfig(widths=(3, 4, 4, 5), image_size=8, dtype="float64", frozen=frozen)
    net = build_backbone(arch, seed=0)
    rng = np.random.default_rng(0)
    for k in net.params:
        net.params[k] += rng.normal(size=net.params[k].shape) * 0.1
    return net


def _param_grad_check(net, x, y, hooks_factory=lambda: {}):
    logits, cache = net.forward(x, hooks=hooks_factory(), need_cache=True)
    _, d = softmax_cross_entropy(logits, y)
    grads = net.backward(d, cache)
    assert set(grads) == set(net.trainable)
    for k in net.trainable:
        p = net.params[k]

        def f(v, p=p):
            old = p.copy()
            p[...] = v
            loss = softmax_cross_entropy(net.forward(x, hooks=hooks_factory()), y)[0]
            p[...] = old
            return loss

        num = central_difference(f, p.copy())
        if max(np.abs(num).max(), np.abs(grads[k]).max()) < 1e-8:
            # e.g. a bias feeding straight into an instance-normalized layer:
            # the true gradient is zero and both sides are round-off
            continue
        assert rel_err(grads[k], num) < 1e-4, k


def test_backbone_gradients():
    net = _tiny()
    x = np.random.default_rng(1).random((2, 3, 8, 8))
    _param_grad_check(net, x, np.array([1, 3]))


def test_backbone_gradients_through_style_hooks():
    """Gradients reach trainable weights through restyled activations, with
    the noise held fixed across the finite-difference evaluations."""
    net = _tiny()
    x = np.random.default_rng(2).random((2, 3, 8, 8))
    noise = {}
    for name in INSERTION_POINTS:
        c = net.feature_shape(name)[0]
        noise[name] = (
            ChannelStats(np.random.default_rng(3).normal(size=(1, c)), np.full((1, c), 0.7)),
            *sample_perturbation(make_rng(len(name)), NoiseSpec(), (2, c)),
        )

    def hooks():
        out = {}
        for name, (tgt, a, b) in noise.items():
            def hook(h, tgt=tgt, a=a, b=b):
                y = ossa(h, tgt, alpha=a, beta=b)
                return y, lambda g: style_backward(g, h, a * tgt.sigma)
            out[name] = hook
        return out

    _param_grad_check(net, x, np.array([0, 2]), hooks)


def test_frozen_blocks_get_no_gradient():
    net = _tiny(frozen=("stem", "stage1"))
    x = np.random.default_rng(4).random((2, 3, 8, 8))
    logits, cache = net.forward(x, need_cache=True)
    grads = net.backward(softmax_cross_entropy(logits, np.array([0, 1]))[1], cache)
    assert "stem.weight" not in grads and "stage1.weight" not in grads
    assert "stage2.weight" in grads


def test_save_load(tmp_path):
    net = build_backbone(ArchConfig(n_classes=3), seed=7)
    net.save(tmp_path / "b.npz")
    back = Backbone.load(tmp_path / "b.npz")
    assert back.arch == net.arch
    assert back.fingerprint() == net.fingerprint()
    x = np.random.default_rng(0).random((2, 3, 32, 32))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
