"""Pre-norm T5-style stacks for CD, ND and ED, with a hand-written backward pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.batch import PackedBatch
from ..numeric import ops
from ..numeric.attention import attention, attention_backward
from .config import CD, ED, ND, ArchitectureKind, ModelConfig
from .loss import LossResult, loss_and_zloss, loss_and_zloss_backward
from .masks import cross_visibility, decoder_visibility, encoder_visibility
from .params import ParamTree, layer_name

MODES = ("train", "infer")


class _Dropout:
    def __init__(self, rate: float, seed, active: bool, dtype):
        self.rate = rate
        self.active = active and rate > 0.0
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed) if self.active else None

    def __call__(self, x: np.ndarray):
        if not self.active:
            return x, None
        m = ops.dropout_mask(x.shape, self.rate, self.rng, self.dtype)
        return x * m, m


def _drop_back(dy, m):
    return dy if m is None else dy * m


@dataclass
class _LayerCache:
    x_sa: np.ndarray
    h_sa: np.ndarray
    sa: object
    m_sa: np.ndarray | None
    x_ff: np.ndarray
    h_ff: np.ndarray
    m_ff: np.ndarray | None
    x_ca: np.ndarray | None = None
    h_ca: np.ndarray | None = None
    ca: object = None
    m_ca: np.ndarray | None = None


@dataclass
class _StackCache:
    ids: np.ndarray
    m_emb: np.ndarray | None
    layers: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    m_final: np.ndarray | None = None
    buckets: np.ndarray | None = None
    out: np.ndarray | None = None


def check_batch(arch: ArchitectureKind, batch: PackedBatch, params: ParamTree | None = None) -> None:
    has_encoder_params = params is not None and "encoder/final_norm" in params
    if arch is ED:
        if not batch.is_encoder_decoder:
            raise ValueError("encoder-decoder forward needs a batch with an encoder stream")
        if params is not None and not has_encoder_params:
            raise ValueError("encoder-decoder forward needs encoder parameters")
        return
    if batch.is_encoder_decoder:
        raise ValueError(f"{arch.value} forward got a batch with an encoder stream")
    if has_encoder_params:
        raise ValueError(f"{arch.value} forward got encoder-decoder parameters")
    if arch is ND and batch.prefix_lens is None:
        raise ValueError("non-causal decoder forward needs prefix_lens in the batch")
    if arch is CD and batch.prefix_lens is not None:
        raise ValueError("causal decoder forward got a batch with prefix_lens")


def _bias_buckets(cfg: ModelConfig, t: int, bidi: np.ndarray | None, all_bidi: bool = False) -> np.ndarray:
    uni = ops.relative_buckets(t, t, cfg.rel_buckets, cfg.rel_max_distance, False)
    if all_bidi:
        return ops.relative_buckets(t, t, cfg.rel_buckets, cfg.rel_max_distance, True)[None]
    if bidi is None or not bidi.any():
        return uni[None]
    bi = ops.relative_buckets(t, t, cfg.rel_buckets, cfg.rel_max_distance, True)
    return np.where(bidi, bi[None], uni[None])


def _stack_forward(params, cfg, stack, n_layers, ids, vis, buckets, drop, enc_out=None, cross_vis=None):
    emb = params["shared/embedding"]
    cache = _StackCache(ids=ids, m_emb=None, buckets=buckets)
    x, cache.m_emb = drop(emb[ids])
    bias = ops.gather_bias(buckets, params[f"{stack}/rel_bias"])
    eps = cfg.norm_epsilon
    for i in range(n_layers):
        p = layer_name(stack, i)
        h = ops.rms_norm(x, params[f"{p}/self_attn_norm"], eps)
        a, ac = attention(
            h, h, params[f"{p}/self_attn/q"], params[f"{p}/self_attn/k"], params[f"{p}/self_attn/v"],
            params[f"{p}/self_attn/o"], cfg.n_heads, vis, bias,
        )
        a, m_sa = drop(a)
        lc = _LayerCache(x_sa=x, h_sa=h, sa=ac, m_sa=m_sa, x_ff=None, h_ff=None, m_ff=None)
        x = x + a
        if enc_out is not None:
            h = ops.rms_norm(x, params[f"{p}/cross_attn_norm"], eps)
            c, cc = attention(
                h, enc_out, params[f"{p}/cross_attn/q"], params[f"{p}/cross_attn/k"],
                params[f"{p}/cross_attn/v"], params[f"{p}/cross_attn/o"], cfg.n_heads, cross_vis,
            )
            c, m_ca = drop(c)
            lc.x_ca, lc.h_ca, lc.ca, lc.m_ca = x, h, cc, m_ca
            x = x + c
        h = ops.rms_norm(x, params[f"{p}/mlp_norm"], eps)
        f = ops.geglu(h, params[f"{p}/mlp/wi_gate"], params[f"{p}/mlp/wi_lin"], params[f"{p}/mlp/wo"])
        f, m_ff = drop(f)
        lc.x_ff, lc.h_ff, lc.m_ff = x, h, m_ff
        x = x + f
        cache.layers.append(lc)
    cache.x_final = x
    out, cache.m_final = drop(ops.rms_norm(x, params[f"{stack}/final_norm"], eps))
    cache.out = out
    return out, cache


def _stack_backward(dout, params, cfg, stack, cache: _StackCache, grads: dict, d_enc_out=None):
    eps = cfg.norm_epsilon
    dout = _drop_back(dout, cache.m_final)
    dx, dg = ops.rms_norm_backward(dout, cache.x_final, params[f"{stack}/final_norm"], eps)
    grads[f"{stack}/final_norm"] = dg
    dscores_total = None
    for i in reversed(range(len(cache.layers))):
        p = layer_name(stack, i)
        lc = cache.layers[i]
        df = _drop_back(dx, lc.m_ff)
        dh, dwg, dwl, dwo = ops.geglu_backward(
            df, lc.h_ff, params[f"{p}/mlp/wi_gate"], params[f"{p}/mlp/wi_lin"], params[f"{p}/mlp/wo"]
        )
        grads[f"{p}/mlp/wi_gate"], grads[f"{p}/mlp/wi_lin"], grads[f"{p}/mlp/wo"] = dwg, dwl, dwo
        dxn, grads[f"{p}/mlp_norm"] = ops.rms_norm_backward(dh, lc.x_ff, params[f"{p}/mlp_norm"], eps)
        dx = dx + dxn
        if lc.ca is not None:
            dc = _drop_back(dx, lc.m_ca)
            w = [params[f"{p}/cross_attn/{n}"] for n in "qkvo"]
            dh, denc, dwq, dwk, dwv, dwo, _ = attention_backward(dc, lc.ca, *w, cfg.n_heads)
            for n, g in zip("qkvo", (dwq, dwk, dwv, dwo)):
                grads[f"{p}/cross_attn/{n}"] = g
            d_enc_out += denc
            dxn, grads[f"{p}/cross_attn_norm"] = ops.rms_norm_backward(
                dh, lc.x_ca, params[f"{p}/cross_attn_norm"], eps
            )
            dx = dx + dxn
        da = _drop_back(dx, lc.m_sa)
        w = [params[f"{p}/self_attn/{n}"] for n in "qkvo"]
        dhq, dhkv, dwq, dwk, dwv, dwo, dscores = attention_backward(da, lc.sa, *w, cfg.n_heads)
        for n, g in zip("qkvo", (dwq, dwk, dwv, dwo)):
            grads[f"{p}/self_attn/{n}"] = g
        dscores_total = dscores if dscores_total is None else dscores_total + dscores
        dxn, grads[f"{p}/self_attn_norm"] = ops.rms_norm_backward(
            dhq + dhkv, lc.x_sa, params[f"{p}/self_attn_norm"], eps
        )
        dx = dx + dxn
    if dscores_total is None:
        grads[f"{stack}/rel_bias"] = np.zeros_like(params[f"{stack}/rel_bias"])
    else:
        grads[f"{stack}/rel_bias"] = ops.gather_bias_backward(dscores_total, cache.buckets, cfg.rel_buckets)
    dx = _drop_back(dx, cache.m_emb)
    demb = grads["shared/embedding"]
    np.add.at(demb, cache.ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))


@dataclass
class ForwardCache:
    decoder: _StackCache
    encoder: _StackCache | None
    scaled_out: np.ndarray


def _forward(params: ParamTree, config: ModelConfig, arch, batch: PackedBatch, mode: str, dropout_seed):
    arch = ArchitectureKind.parse(arch)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    check_batch(arch, batch, params)
    dtype = params["shared/embedding"].dtype
    drop = _Dropout(config.dropout_rate, dropout_seed, mode == "train", dtype)
    enc_cache = None
    enc_out = cross_vis = None
    if arch is ED:
        te = batch.encoder_ids.shape[1]
        evis = encoder_visibility(batch.encoder_segments)
        ebuckets = _bias_buckets(config, te, None, all_bidi=True)
        n_enc = config.encoder_layers or config.decoder_layers
        enc_out, enc_cache = _stack_forward(
            params, config, "encoder", n_enc, batch.encoder_ids, evis, ebuckets, drop
        )
        cross_vis = cross_visibility(batch.segment_ids, batch.encoder_segments)
        dvis, bidi = decoder_visibility(batch.segment_ids, None)
    else:
        dvis, bidi = decoder_visibility(batch.segment_ids, batch.prefix_lens if arch is ND else None)
    t = batch.input_ids.shape[1]
    dbuckets = _bias_buckets(config, t, bidi)
    out, dec_cache = _stack_forward(
        params, config, "decoder", config.decoder_layers, batch.input_ids, dvis, dbuckets, drop,
        enc_out=enc_out, cross_vis=cross_vis,
    )
    if config.tied_embeddings:
        scaled = out * dtype.type(config.d_model**-0.5)
        logits = scaled @ params["shared/embedding"].T
    else:
        scaled = out
        logits = out @ params["shared/lm_head"]
    return logits, ForwardCache(dec_cache, enc_cache, scaled)


def forward(
    params: ParamTree,
    config: ModelConfig,
    arch: ArchitectureKind | str,
    batch: PackedBatch,
    mode: str = "infer",
    dropout_seed=None,
) -> np.ndarray:
    """Logits ``[batch, decoder_len, vocab]`` at every decoder position."""
    return _forward(params, config, arch, batch, mode, dropout_seed)[0]


def loss_and_grad(
    params: ParamTree,
    config: ModelConfig,
    arch: ArchitectureKind | str,
    batch: PackedBatch,
    z_coefficient: float = 1e-4,
    mode: str = "train",
    dropout_seed=None,
) -> tuple[LossResult, dict[str, np.ndarray]]:
    """Loss on ``batch`` and its gradient w.r.t. every parameter (total = CE + z-loss)."""
    arch = ArchitectureKind.parse(arch)
    logits, cache = _forward(params, config, arch, batch, mode, dropout_seed)
    result = loss_and_zloss(logits, batch.target_ids, batch.loss_mask, z_coefficient)
    dlogits = loss_and_zloss_backward(logits, batch.target_ids, batch.loss_mask, z_coefficient)
    grads = {"shared/embedding": np.zeros_like(params["shared/embedding"])}
    d = dlogits.shape[-1]
    if config.tied_embeddings:
        emb = params["shared/embedding"]
        grads["shared/embedding"] += dlogits.reshape(-1, d).T @ cache.scaled_out.reshape(-1, config.d_model)
        dout = (dlogits @ emb) * emb.dtype.type(config.d_model**-0.5)
    else:
        w = params["shared/lm_head"]
        grads["shared/lm_head"] = cache.scaled_out.reshape(-1, config.d_model).T @ dlogits.reshape(-1, d)
        dout = dlogits @ w.T
    d_enc = np.zeros_like(cache.encoder.out) if cache.encoder is not None else None
    _stack_backward(dout, params, config, "decoder", cache.decoder, grads, d_enc_out=d_enc)
    if cache.encoder is not None:
        _stack_backward(d_enc, params, config, "encoder", cache.encoder, grads)
    return result, {k: grads[k] for k in params}
