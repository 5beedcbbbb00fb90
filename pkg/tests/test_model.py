from dataclasses import replace

import numpy as np
import pytest

from archlab.data.batch import PackedBatch
from archlab.model import (
    CD,
    ED,
    ND,
    FULL_SCALE_DECODER_CONFIG,
    FULL_SCALE_ENCODER_DECODER_CONFIG,
    ArchitectureKind,
    ModelConfig,
    build_mask,
    count_params,
    forward,
    init_params,
    loss_and_zloss,
    param_shapes,
)
from archlab.model.loss import token_logprobs
from helpers import TINY, model_grad_check, random_batch

TWO_LAYER = replace(TINY, decoder_layers=2)


def decoder_batch(ids, segments=None, prefix=None):
    ids = np.atleast_2d(ids)
    seg = np.zeros_like(ids) if segments is None else np.atleast_2d(segments)
    return PackedBatch(ids, ids, np.ones(ids.shape, dtype=bool), seg, "FLM",
                       prefix_lens=None if prefix is None else np.atleast_2d(prefix))


def test_arch_parse():
    assert ArchitectureKind.parse("CD") is CD
    assert ArchitectureKind.parse("EncoderDecoder") is ED
    with pytest.raises(ValueError):
        ArchitectureKind.parse("XL")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"d_model": 8, "bogus": 1})


def test_full_scale_parameter_counts():
    assert abs(count_params(FULL_SCALE_DECODER_CONFIG, CD) / 4.8e9 - 1) < 0.02
    assert abs(count_params(FULL_SCALE_ENCODER_DECODER_CONFIG, ED) / 11.0e9 - 1) < 0.02


def test_decoder_layouts_are_shared():
    assert param_shapes(TINY, CD) == param_shapes(TINY, ND)
    ed = param_shapes(TINY.for_arch(ED), ED)
    assert set(param_shapes(TINY, CD)) < set(ed)
    assert any(k.startswith("encoder/") for k in ed)


def test_tiny_param_count_by_hand():
    d, f, v, h, nb = 8, 12, 16, 2, 4
    layer = 4 * d * d + 3 * d * f + 2 * d
    assert count_params(TINY, CD) == v * d + layer + d + nb * h


def test_init_is_seeded():
    a, b = init_params(TINY, CD, 3), init_params(TINY, CD, 3)
    assert a.bitwise_equal(b)
    assert not a.bitwise_equal(init_params(TINY, CD, 4))


def test_low_precision_dtype():
    cfg = replace(TINY, precision="low")
    p = init_params(cfg, CD, 0)
    assert all(v.dtype == np.float32 for v in p.values())
    logits = forward(p, cfg, CD, decoder_batch([[2, 3, 4]]))
    assert logits.dtype == np.float32


def test_build_mask_kinds():
    causal = build_mask("causal", 4).visibility
    assert np.array_equal(causal, np.tril(np.ones((4, 4), dtype=bool)))
    pre = build_mask("prefix", 4, prefix_len=2).visibility
    assert pre[0, 1] and not pre[1, 2] and pre[3, 0]
    assert build_mask("full", 3).visibility.all()
    seg = build_mask("full", 4, segment_ids=[0, 0, 1, 1]).visibility
    assert not seg[0, 2] and seg[2, 3]


def test_build_mask_errors():
    with pytest.raises(ValueError):
        build_mask("prefix", 4)
    with pytest.raises(ValueError):
        build_mask("prefix", 4, prefix_len=5)
    with pytest.raises(ValueError):
        build_mask("causal", 4, prefix_len=1)
    with pytest.raises(ValueError):
        build_mask("sliding", 4)


def test_per_segment_prefixes():
    vis = build_mask("prefix", 6, prefix_len=(2, 1), segment_ids=[0, 0, 0, 1, 1, 1]).visibility
    assert vis[0, 1] and not vis[0, 2]
    assert not vis[3, 4] and not vis[3, 0]


@pytest.mark.parametrize("prefix", [0, 1])
def test_nd_with_trivial_prefix_equals_cd(prefix):
    rng = np.random.default_rng(prefix)
    for seed in range(10):
        params = init_params(TWO_LAYER, CD, seed)
        ids = rng.integers(2, 16, size=(2, 7))
        cd = forward(params, TWO_LAYER, CD, decoder_batch(ids))
        nd = forward(params, TWO_LAYER, ND, decoder_batch(ids, prefix=[[prefix], [prefix]]))
        assert np.array_equal(cd, nd)


@pytest.mark.parametrize("arch", ["CD", "ND"])
def test_future_tokens_never_reach_causal_positions(arch):
    rng = np.random.default_rng(0)
    params = init_params(TWO_LAYER, arch, 0)
    ids = rng.integers(2, 16, size=(1, 8))
    prefix = [[3]] if arch == "ND" else None
    base = forward(params, TWO_LAYER, arch, decoder_batch(ids, prefix=prefix))
    for pos in range(3, 8):
        pert = ids.copy()
        pert[0, pos] = 2 + (pert[0, pos] - 1) % 14
        out = forward(params, TWO_LAYER, arch, decoder_batch(pert, prefix=prefix))
        assert np.array_equal(out[0, :pos], base[0, :pos])


def test_prefix_tokens_reach_earlier_prefix_positions():
    rng = np.random.default_rng(1)
    params = init_params(TWO_LAYER, ND, 1)
    ids = rng.integers(2, 16, size=(1, 8))
    base = forward(params, TWO_LAYER, ND, decoder_batch(ids, prefix=[[4]]))
    pert = ids.copy()
    pert[0, 3] = 2 + (pert[0, 3] - 1) % 14
    out = forward(params, TWO_LAYER, ND, decoder_batch(pert, prefix=[[4]]))
    assert not np.allclose(out[0, 0], base[0, 0])


@pytest.mark.parametrize("arch", ["CD", "ND", "ED"])
def test_segments_do_not_leak(arch):
    rng = np.random.default_rng(2)
    cfg = TWO_LAYER.for_arch(arch)
    params = init_params(cfg, arch, 2)
    batch = random_batch(arch, rng, segments=2, t=8)
    base = forward(params, cfg, arch, batch)
    seg = batch.segment_ids[0]
    first = seg == 0
    ids = batch.input_ids.copy()
    ids[0, ~first] = 2 + (ids[0, ~first] - 1) % 14
    kw = {}
    if arch == "ED":
        enc = batch.encoder_ids.copy()
        enc[0, batch.encoder_segments[0] == 1] = 3
        kw = {"encoder_ids": enc, "encoder_segments": batch.encoder_segments}
    pert = PackedBatch(ids, batch.target_ids, batch.loss_mask, batch.segment_ids, "FLM",
                       prefix_lens=batch.prefix_lens, **kw)
    out = forward(params, cfg, arch, pert)
    assert np.array_equal(out[0, first], base[0, first])


def test_encoder_input_affects_decoder():
    rng = np.random.default_rng(3)
    cfg = TINY.for_arch(ED)
    params = init_params(cfg, ED, 3)
    batch = random_batch("ED", rng)
    enc = batch.encoder_ids.copy()
    enc[:, 0] = 2 + (enc[:, 0] - 1) % 14
    pert = batch.with_encoder(enc, batch.encoder_segments)
    assert not np.allclose(forward(params, cfg, ED, batch), forward(params, cfg, ED, pert))


def test_dropout_train_vs_infer():
    cfg = replace(TINY, dropout_rate=0.3)
    params = init_params(cfg, CD, 0)
    batch = decoder_batch([[2, 3, 4, 5, 6]])
    infer = forward(params, cfg, CD, batch)
    assert np.array_equal(infer, forward(params, cfg, CD, batch))
    a = forward(params, cfg, CD, batch, mode="train", dropout_seed=[0, 2, 5])
    b = forward(params, cfg, CD, batch, mode="train", dropout_seed=[0, 2, 5])
    assert np.array_equal(a, b)
    assert not np.allclose(a, infer)


def test_forward_rejects_mismatched_params():
    params = init_params(TINY, CD, 0)
    with pytest.raises((KeyError, ValueError)):
        forward(params, TINY.for_arch(ED), ED, random_batch("ED", np.random.default_rng(0)))


def test_token_logprobs_against_direct_softmax():
    logits = np.random.default_rng(0).standard_normal((2, 3, 5))
    targets = np.array([[0, 1, 2], [3, 4, 0]])
    lp = token_logprobs(logits, targets)
    p = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    np.testing.assert_allclose(lp, np.log(np.take_along_axis(p, targets[..., None], -1))[..., 0])


def test_zloss_on_uniform_logits():
    v = 32
    res = loss_and_zloss(np.zeros((1, 4, v)), np.zeros((1, 4), dtype=int), np.ones((1, 4), bool), 1e-4)
    assert res.z_loss == 1e-4 * np.log(v) ** 2
    assert res.cross_entropy == pytest.approx(np.log(v))


def test_empty_loss_mask():
    res = loss_and_zloss(np.zeros((1, 2, 4)), np.zeros((1, 2), dtype=int), np.zeros((1, 2), bool))
    assert (res.cross_entropy, res.z_loss, res.tokens_trained) == (0.0, 0.0, 0)


@pytest.mark.parametrize("arch", ["CD", "ND", "ED"])
def test_end_to_end_gradient(arch):
    for seed in range(3):
        assert model_grad_check(arch, seed) < 1e-3


def test_end_to_end_gradient_with_dropout():
    assert model_grad_check("CD", 0, dropout=0.2) < 1e-3
