import numpy as np
import pytest

from ossa.backbone import ArchConfig, build_backbone
from ossa.config import ConfigError, OssaConfig, parse_config
from ossa.harness import (
    TrainingError,
    evaluate,
    forward_with_ossa,
    load_split,
    resolve_prototype,
    train,
)
from ossa.layers import softmax_cross_entropy
from ossa.prototype import extract_prototype
from ossa.stats import channel_stats
from ossa.transform import make_rng

from conftest import tiny_config_dict
from oracles import restyle_loop


def _net_and_batch(seed=0, b=4):
    arch = ArchConfig(image_size=16, widths=(4, 8, 8, 8), dtype="float64")
    net = build_backbone(arch, seed)
    x = np.random.default_rng(seed).random((b, 3, 16, 16))
    return net, x


def test_prob_zero_is_plain_forward():
    net, x = _net_and_batch()
    proto = extract_prototype(net, x[:1], ("post_stem", "post_stage1"))
    cfg = OssaConfig(prob=0.0)
    for _ in range(5):
        logits, applied = forward_with_ossa(net, x, proto, cfg, make_rng(0))
        assert not applied
        np.testing.assert_array_equal(logits, net.forward(x))


def test_disabled_is_plain_forward():
    net, x = _net_and_batch()
    logits, applied = forward_with_ossa(net, x, None, OssaConfig(enabled=False), make_rng(0))
    assert not applied
    np.testing.assert_array_equal(logits, net.forward(x))


def test_self_style_without_noise_is_identity():
    """Restyling each image towards its own statistics changes nothing."""
    net, x = _net_and_batch()
    cfg = OssaConfig(prob=1.0, noise_std=0.0, mode="noise_perturbation", layers=("post_stem", "post_stage1", "post_stage2"))
    logits, applied = forward_with_ossa(net, x, None, cfg, make_rng(0))
    assert applied
    np.testing.assert_allclose(logits, net.forward(x), atol=1e-4)


def test_post_stem_output_matches_loop_oracle():
    net, x = _net_and_batch(1)
    proto = extract_prototype(net, x[:1], ("post_stem",))
    cfg = OssaConfig(prob=1.0, layers=("post_stem",))
    record = []
    logits, applied = forward_with_ossa(net, x, proto, cfg, make_rng(3), record=record)
    assert applied and len(record) == 1
    alpha, beta = record[0]
    tgt = proto.layers["post_stem"]
    h = net.features(x, "post_stem")
    expected = restyle_loop(h, alpha * tgt.sigma, beta * tgt.mu, 1e-5)
    want = net.forward(x, hooks={"post_stem": lambda _h: (expected, None)})
    np.testing.assert_allclose(logits, want, rtol=1e-9, atol=1e-9)


def test_one_coin_covers_all_layers():
    net, x = _net_and_batch()
    proto = extract_prototype(net, x[:1], ("post_stem", "post_stage1"))
    cfg = OssaConfig(prob=0.5)
    rng = make_rng(5)
    for _ in range(20):
        record = []
        _, applied = forward_with_ossa(net, x, proto, cfg, rng, record=record)
        assert len(record) == (2 if applied else 0)


def test_coin_rate():
    arch = ArchConfig(image_size=4, widths=(2, 2, 2, 2), dtype="float64")
    net = build_backbone(arch, 0)
    x = np.random.default_rng(0).random((1, 3, 4, 4))
    proto = extract_prototype(net, x, ("post_stem",))
    cfg = OssaConfig(prob=0.5, layers=("post_stem",))
    rng = make_rng(11)
    hits = sum(forward_with_ossa(net, x, proto, cfg, rng)[1] for _ in range(10_000))
    assert 0.48 <= hits / 10_000 <= 0.52


def test_missing_prototype_is_an_error():
    net, x = _net_and_batch()
    with pytest.raises(TrainingError):
        forward_with_ossa(net, x, None, OssaConfig(), make_rng(0))


@pytest.mark.parametrize("std,prob", [(0.0, 1.0), (0.75, 1.0), (2.0, 1.0), (0.75, 0.0)])
def test_loss_stays_finite_across_grid_range(std, prob):
    cfg = parse_config(tiny_config_dict(**{"ossa.noise_std": std, "ossa.prob": prob}))
    _, report = train(cfg)
    assert all(np.isfinite(report.train_loss))


def test_training_is_deterministic(tiny_cfg):
    _, a = train(tiny_cfg)
    _, b = train(tiny_cfg)
    assert a.weights_sha256 == b.weights_sha256
    assert a.train_loss == b.train_loss
    assert (a.source_accuracy, a.target_accuracy) == (b.source_accuracy, b.target_accuracy)


def test_prob_zero_trains_like_disabled(tiny_cfg):
    _, off = train(tiny_cfg.with_overrides({"ossa.enabled": False}))
    _, zero = train(tiny_cfg.with_overrides({"ossa.prob": 0.0}))
    assert off.weights_sha256 == zero.weights_sha256


def test_stem_stays_frozen(tiny_cfg):
    init = build_backbone(tiny_cfg.arch, tiny_cfg.model_seed)
    net, _ = train(tiny_cfg)
    np.testing.assert_array_equal(net.params["stem.weight"], init.params["stem.weight"])
    assert net.fingerprint() == init.fingerprint()
    assert not np.array_equal(net.params["head.weight"], init.params["head.weight"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises(tiny_cfg):
    with pytest.raises(TrainingError):
        train(tiny_cfg.with_overrides({"optim.lr": 1e30, "optim.momentum": 0.0}))


def test_invalid_config_fails_before_work():
    with pytest.raises(ConfigError, match="ossa.prob"):
        parse_config(tiny_config_dict(**{"ossa.prob": 1.3}))


def test_evaluation_is_pure_and_repeatable(tiny_cfg):
    net, _ = train(tiny_cfg)
    ds = load_split(tiny_cfg, "target", "test")
    before = {k: v.copy() for k, v in net.params.items()}
    a, b = evaluate(net, ds), evaluate(net, ds)
    assert a == b
    for k in before:
        np.testing.assert_array_equal(before[k], net.params[k])


def test_evaluate_forced_predictions(tiny_cfg):
    """A head that always predicts class 2 scores exactly 1/n_classes."""
    net = build_backbone(tiny_cfg.arch, 0)
    net.params["head.weight"][...] = 0
    net.params["head.bias"][...] = 0
    net.params["head.bias"][2] = 1.0
    res = evaluate(net, load_split(tiny_cfg, "source", "test"))
    assert res["accuracy"] == pytest.approx(0.25)
    assert res["per_class_accuracy"] == {"0": 0.0, "1": 0.0, "2": 1.0, "3": 0.0}


def test_can_overfit_a_small_set():
    cfg = parse_config(
        tiny_config_dict(
            **{"ossa.enabled": False, "optim.steps": 300, "optim.decay_steps": [], "optim.lr": 0.05}
        )
    )
    data = load_split(cfg, "source", "train").subset(np.arange(16))
    net, _ = train(cfg, source_train=data, evaluate_after=False)
    assert evaluate(net, data)["accuracy"] > 0.95
    loss, _ = softmax_cross_entropy(net.forward(data.images), data.labels)
    assert loss < 0.2


def test_resolve_prototype_uses_configured_domain_and_count(tiny_cfg):
    net = build_backbone(tiny_cfg.arch, 0)
    p1 = resolve_prototype(tiny_cfg, net)
    assert p1.image_count == 1
    p3 = resolve_prototype(tiny_cfg.with_overrides({"prototype.count": 3}), net)
    assert p3.image_count == 3 and len(set(p3.image_ids)) == 3
    src = resolve_prototype(tiny_cfg.with_overrides({"prototype.source": "source"}), net)
    tgt_ids = set(load_split(tiny_cfg, "target", "train").ids)
    assert set(src.image_ids) <= tgt_ids  # same content ids, different style


def test_prototype_reflects_target_style(tiny_cfg):
    """A prototype from the foggy domain differs from one of the same image clean."""
    net = build_backbone(tiny_cfg.arch, 0)
    src = load_split(tiny_cfg, "source", "train").subset([0])
    tgt = load_split(tiny_cfg, "target", "train").subset([0])
    a = extract_prototype(net, src, ("post_stem",))
    b = extract_prototype(net, tgt, ("post_stem",))
    assert np.abs(a.layers["post_stem"].mu - b.layers["post_stem"].mu).mean() > 1e-3
    s = channel_stats(net.features(tgt.images, "post_stem"))
    np.testing.assert_allclose(b.layers["post_stem"].mu, s.mu, rtol=1e-5)
