"""Shared fixtures-as-functions for the unit and acceptance suites."""
from __future__ import annotations

import numpy as np

from archlab.data.batch import PackedBatch
from archlab.model import ModelConfig, init_params, loss_and_grad
from archlab.model.loss import loss_and_zloss
from archlab.model.transformer import forward
from archlab.numeric.gradcheck import numerical_gradient, relative_error

TINY = ModelConfig(vocab_size=16, d_model=8, n_heads=2, d_ff=12, decoder_layers=1, rel_buckets=4,
                   rel_max_distance=8)


def random_op_inputs(name: str, rng: np.random.Generator) -> dict:
    """Small random inputs for each registered primitive."""
    if name == "masked_softmax":
        vis = rng.random((3, 5)) < 0.7
        vis[:, 0] = True
        return {"logits": rng.standard_normal((3, 5)), "visibility": vis}
    if name == "rms_norm":
        return {"x": rng.standard_normal((3, 6)), "gain": rng.standard_normal(6)}
    if name == "geglu":
        return {"x": rng.standard_normal((2, 3, 4)), "w_gate": rng.standard_normal((4, 5)) * 0.5,
                "w_lin": rng.standard_normal((4, 5)) * 0.5, "w_out": rng.standard_normal((5, 4)) * 0.5}
    if name == "gelu":
        return {"u": rng.standard_normal((4, 5)) * 2}
    if name == "relative_position_bias":
        return {"query_len": 5, "key_len": 6, "n_buckets": 6, "max_distance": 10,
                "bidirectional": bool(rng.integers(2)), "bias_table": rng.standard_normal((6, 2))}
    if name == "attention":
        b, t, s, d, h = 2, 4, 5, 6, 2
        vis = rng.random((b, t, s)) < 0.6
        vis[:, :, 0] = True
        return {"x_q": rng.standard_normal((b, t, d)), "x_kv": rng.standard_normal((b, s, d)),
                "wq": rng.standard_normal((d, d)) * 0.4, "wk": rng.standard_normal((d, d)) * 0.4,
                "wv": rng.standard_normal((d, d)) * 0.4, "wo": rng.standard_normal((d, d)) * 0.4,
                "n_heads": h, "visibility": vis, "bias": rng.standard_normal((1, h, t, s))}
    raise KeyError(name)


def random_batch(arch: str, rng: np.random.Generator, vocab: int = 16, t: int = 6, b: int = 2,
                 segments: int = 1) -> PackedBatch:
    """Random ids with ``segments`` packed segments per row and a random loss mask."""
    ids = rng.integers(2, vocab, size=(b, t))
    tgt = rng.integers(2, vocab, size=(b, t))
    bounds = np.sort(rng.choice(np.arange(1, t), size=segments - 1, replace=False)) if segments > 1 else []
    seg = np.zeros((b, t), dtype=np.int64)
    for x in bounds:
        seg[:, x:] += 1
    loss = rng.random((b, t)) < 0.7
    loss[:, -1] = True
    prefix = None
    if arch == "ND":
        sizes = np.bincount(seg[0], minlength=segments)
        prefix = np.stack([[rng.integers(0, n + 1) for n in sizes] for _ in range(b)])
    kw = {}
    if arch == "ED":
        te = t + 1
        kw = {"encoder_ids": rng.integers(2, vocab, size=(b, te)),
              "encoder_segments": np.sort(rng.integers(0, segments, size=(b, te)), axis=1)}
        kw["encoder_segments"][:, 0] = 0
        kw["encoder_segments"][:, -1] = segments - 1
    return PackedBatch(ids, tgt, loss, seg, "FLM", prefix_lens=prefix, **kw)


def model_grad_check(arch: str, seed: int, config: ModelConfig = TINY, z_coefficient: float = 1e-4,
                     dropout: float = 0.0) -> float:
    """Max relative error of the full-model gradient against central differences."""
    from dataclasses import replace

    rng = np.random.default_rng(seed)
    cfg = replace(config.for_arch(arch), dropout_rate=dropout)
    params = init_params(cfg, arch, seed)
    params = params.map(lambda p: p + 0.1 * rng.standard_normal(p.shape))
    batch = random_batch(arch, rng, cfg.vocab_size)
    mode = "train" if dropout else "infer"
    _, grads = loss_and_grad(params, cfg, arch, batch, z_coefficient, mode=mode, dropout_seed=seed)
    work = {k: np.array(v) for k, v in params.items()}

    def f():
        logits = forward(work, cfg, arch, batch, mode=mode, dropout_seed=seed)
        return loss_and_zloss(logits, batch.target_ids, batch.loss_mask, z_coefficient).total

    return max(relative_error(grads[k], numerical_gradient(f, work[k])) for k in work)
