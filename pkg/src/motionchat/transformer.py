"""Decoder-only transformer over the unified vocabulary, with backprop.

Deliberately small and numpy-only: pre-norm blocks, learned positional
embeddings, causal multi-head attention, GELU MLP. Parameters live in a
flat name->array dict. Weight matrices are stored (d_in, d_out) and
applied as ``x @ W``. Log-probabilities are always computed in float64 so
per-position distributions normalize tightly regardless of model dtype.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_GELU_C = np.sqrt(2.0 / np.pi)
_MASK_VALUE = -1e30


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    width: int = 256
    n_heads: int = 4
    context_length: int = 1024
    dtype: str = "float32"
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.width % self.n_heads:
            raise ValidationError(f"width {self.width} not divisible by {self.n_heads} heads")

    @property
    def head_dim(self) -> int:
        return self.width // self.n_heads

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()})


def matrix_names(config: ModelConfig) -> list[str]:
    """All 2-D weight-matrix names (the LoRA-targetable set)."""
    names = ["tok_emb", "head.w"]
    for i in range(config.n_layers):
        names += [f"l{i}.attn.wqkv", f"l{i}.attn.wo", f"l{i}.mlp.w1", f"l{i}.mlp.w2"]
    return names


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> ModelParams:
    rng = rng or np.random.default_rng(config.seed)
    w, v, t = config.width, config.vocab_size, config.context_length
    dt = config.np_dtype
    std = config.init_std

    def normal(*shape):
        return (std * rng.standard_normal(shape)).astype(dt)

    weights = {"tok_emb": normal(v, w), "pos_emb": normal(t, w)}
    for i in range(config.n_layers):
        p = f"l{i}"
        weights[f"{p}.ln1.g"] = np.ones(w, dtype=dt)
        weights[f"{p}.ln1.b"] = np.zeros(w, dtype=dt)
        weights[f"{p}.attn.wqkv"] = normal(w, 3 * w)
        weights[f"{p}.attn.bqkv"] = np.zeros(3 * w, dtype=dt)
        weights[f"{p}.attn.wo"] = normal(w, w)
        weights[f"{p}.attn.bo"] = np.zeros(w, dtype=dt)
        weights[f"{p}.ln2.g"] = np.ones(w, dtype=dt)
        weights[f"{p}.ln2.b"] = np.zeros(w, dtype=dt)
        weights[f"{p}.mlp.w1"] = normal(w, 4 * w)
        weights[f"{p}.mlp.b1"] = np.zeros(4 * w, dtype=dt)
        weights[f"{p}.mlp.w2"] = normal(4 * w, w)
        weights[f"{p}.mlp.b2"] = np.zeros(w, dtype=dt)
    weights["lnf.g"] = np.ones(w, dtype=dt)
    weights["lnf.b"] = np.zeros(w, dtype=dt)
    weights["head.w"] = normal(w, v)
    weights["head.b"] = np.zeros(v, dtype=dt)
    return ModelParams(config, weights)


def _layernorm_forward(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xn = xc * rstd
    return xn * g + b, (xn, rstd, g)


def _layernorm_backward(dy, cache):
    xn, rstd, g = cache
    n = xn.shape[-1]
    dg = (dy * xn).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxn = dy * g
    dx = rstd * (dxn - dxn.mean(axis=-1, keepdims=True) - xn * (dxn * xn).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu_forward(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def _softmax(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class _Ctx:
    """Per-forward adapter context: materialized deltas and dropout masks."""

    def __init__(self, adapter, train, rng):
        self.adapter = adapter
        self.train = bool(train) and adapter is not None and adapter.dropout > 0
        self.rng = rng
        self.deltas = {}
        self.masks = {}

    def delta(self, name):
        if self.adapter is None or name not in self.adapter.targets:
            return None
        if name not in self.deltas:
            a, b = self.adapter.targets[name]
            self.deltas[name] = (self.adapter.scale * (b @ a)).T
        return self.deltas[name]

    def mask(self, name, shape):
        if not self.train:
            return None
        if name not in self.masks:
            keep = 1.0 - self.adapter.dropout
            self.masks[name] = (self.rng.random(shape) < keep) / keep
        return self.masks[name]


def _linear_forward(x, w, b, name, ctx):
    y = x @ w
    if b is not None:
        y = y + b
    delta = ctx.delta(name)
    mask = None
    xd = None
    if delta is not None:
        mask = ctx.mask(name, x.shape)
        xd = x if mask is None else x * mask
        y = y + xd @ delta.astype(x.dtype, copy=False)
    return y, (x, w, delta, mask, xd, name)


def _linear_backward(dy, cache, grads, dadapter):
    x, w, delta, mask, xd, name = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    _accum(grads, name, flat_x.T @ flat_dy)
    bias_name = _bias_for(name)
    if bias_name:
        _accum(grads, bias_name, flat_dy.sum(axis=0))
    dx = dy @ w.T
    if delta is not None:
        flat_xd = xd.reshape(-1, x.shape[-1])
        ddelta = flat_xd.T @ flat_dy
        dadapter[name] = dadapter.get(name, 0.0) + ddelta
        dxd = dy @ delta.T.astype(dy.dtype, copy=False)
        dx = dx + (dxd if mask is None else dxd * mask)
    return dx


_BIAS_MAP = {"wqkv": "bqkv", "wo": "bo", "w1": "b1", "w2": "b2", "head.w": "head.b"}


def _bias_for(name):
    if name == "head.w":
        return "head.b"
    stem, _, leaf = name.rpartition(".")
    mapped = _BIAS_MAP.get(leaf)
    return f"{stem}.{mapped}" if mapped else None


def _accum(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def forward_with_cache(ids, params: ModelParams, adapter=None, train=False, rng=None):
    """Logits (float64) and the cache needed for backward.

    ``ids`` is (B, T) or (T,). Position i attends to positions <= i only.
    """
    ids = np.asarray(ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    cfg = params.config
    b, t = ids.shape
    if t > cfg.context_length:
        raise ValidationError(f"sequence length {t} exceeds context {cfg.context_length}")
    if t == 0:
        raise ValidationError("empty sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValidationError("token id outside vocabulary")
    w = params.weights
    ctx = _Ctx(adapter, train, rng)

    emb_delta = ctx.delta("tok_emb")
    h = w["tok_emb"][ids] + w["pos_emb"][:t]
    if emb_delta is not None:
        h = h + emb_delta.astype(h.dtype, copy=False)[ids]
    layer_caches = []
    nh, hd = cfg.n_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(hd)
    causal = np.triu(np.full((t, t), _MASK_VALUE, dtype=h.dtype), k=1)

    for i in range(cfg.n_layers):
        p = f"l{i}"
        a, ln1_cache = _layernorm_forward(h, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        qkv, qkv_cache = _linear_forward(a, w[f"{p}.attn.wqkv"], w[f"{p}.attn.bqkv"], f"{p}.attn.wqkv", ctx)
        q, k_, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
        k_ = k_.reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
        v = v.reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
        att = q @ k_.transpose(0, 1, 3, 2) * scale + causal
        probs = _softmax(att)
        o = (probs @ v).transpose(0, 2, 1, 3).reshape(b, t, cfg.width)
        proj, proj_cache = _linear_forward(o, w[f"{p}.attn.wo"], w[f"{p}.attn.bo"], f"{p}.attn.wo", ctx)
        h = h + proj
        a2, ln2_cache = _layernorm_forward(h, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        m1, m1_cache = _linear_forward(a2, w[f"{p}.mlp.w1"], w[f"{p}.mlp.b1"], f"{p}.mlp.w1", ctx)
        act, act_cache = _gelu_forward(m1)
        m2, m2_cache = _linear_forward(act, w[f"{p}.mlp.w2"], w[f"{p}.mlp.b2"], f"{p}.mlp.w2", ctx)
        h = h + m2
        layer_caches.append(
            (ln1_cache, qkv_cache, (q, k_, v, probs), proj_cache, ln2_cache, m1_cache, act_cache, m2_cache)
        )

    hf, lnf_cache = _layernorm_forward(h, w["lnf.g"], w["lnf.b"])
    logits, head_cache = _linear_forward(hf, w["head.w"], w["head.b"], "head.w", ctx)
    logits = logits.astype(np.float64)
    cache = (ids, squeeze, ctx, layer_caches, lnf_cache, head_cache, scale)
    return (logits[0] if squeeze else logits), cache


def backward_from_logits(dlogits, cache, params: ModelParams):
    """Gradients for all weights (and adapter targets) given d(loss)/d(logits)."""
    ids, squeeze, ctx, layer_caches, lnf_cache, head_cache, scale = cache
    cfg = params.config
    w = params.weights
    if squeeze:
        dlogits = dlogits[None, :]
    b, t = ids.shape
    nh, hd = cfg.n_heads, cfg.head_dim
    grads: dict = {}
    dadapter: dict = {}

    dlogits = dlogits.astype(cfg.np_dtype, copy=False)
    dhf = _linear_backward(dlogits, head_cache, grads, dadapter)
    dh, dg, db = _layernorm_backward(dhf, lnf_cache)
    grads["lnf.g"] = dg
    grads["lnf.b"] = db

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}"
        ln1_cache, qkv_cache, attn_saved, proj_cache, ln2_cache, m1_cache, act_cache, m2_cache = layer_caches[i]
        dact = _linear_backward(dh, m2_cache, grads, dadapter)
        dm1 = _gelu_backward(dact, act_cache)
        da2 = _linear_backward(dm1, m1_cache, grads, dadapter)
        dh2, dg2, db2 = _layernorm_backward(da2, ln2_cache)
        grads[f"{p}.ln2.g"] = dg2
        grads[f"{p}.ln2.b"] = db2
        dh = dh + dh2

        do = _linear_backward(dh, proj_cache, grads, dadapter)
        q, k_, v, probs = attn_saved
        do_heads = do.reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
        dprobs = do_heads @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ do_heads
        datt = (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * probs
        dq = datt @ k_ * scale
        dk = datt.transpose(0, 1, 3, 2) @ q * scale
        dqkv = np.concatenate(
            [
                dq.transpose(0, 2, 1, 3).reshape(b, t, cfg.width),
                dk.transpose(0, 2, 1, 3).reshape(b, t, cfg.width),
                dv.transpose(0, 2, 1, 3).reshape(b, t, cfg.width),
            ],
            axis=-1,
        )
        da = _linear_backward(dqkv, qkv_cache, grads, dadapter)
        dh1, dg1, db1 = _layernorm_backward(da, ln1_cache)
        grads[f"{p}.ln1.g"] = dg1
        grads[f"{p}.ln1.b"] = db1
        dh = dh + dh1

    # embeddings
    grads["pos_emb"] = np.zeros_like(w["pos_emb"])
    grads["pos_emb"][:t] = dh.sum(axis=0)
    demb = np.zeros_like(w["tok_emb"])
    np.add.at(demb, ids.ravel(), dh.reshape(-1, cfg.width))
    grads["tok_emb"] = demb
    if ctx.adapter is not None and "tok_emb" in ctx.adapter.targets:
        dadapter["tok_emb"] = dadapter.get("tok_emb", 0.0) + demb

    # fold materialized-delta gradients into A/B gradients
    if ctx.adapter is not None:
        for name, ddelta in dadapter.items():
            a, bmat = ctx.adapter.targets[name]
            s = ctx.adapter.scale
            ddelta_t = np.asarray(ddelta, dtype=np.float64).T  # (out, in)
            grads[f"lora.{name}.A"] = s * (bmat.T @ ddelta_t)
            grads[f"lora.{name}.B"] = s * (ddelta_t @ a.T)
    return grads


def forward(ids, params: ModelParams, adapter=None) -> np.ndarray:
    """Per-position next-token log-probabilities, float64, rows sum to 1."""
    logits, _ = forward_with_cache(ids, params, adapter=adapter, train=False)
    return log_softmax(logits)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def nll_loss(ids, params: ModelParams, loss_mask, adapter=None) -> float:
    """Mean -log p(ids[t] | ids[<t]) over positions where loss_mask is true."""
    loss, _ = nll_loss_and_grads(ids, params, loss_mask, adapter=adapter, want_grads=False)
    return loss


def nll_loss_and_grads(ids, params, loss_mask, adapter=None, train=False, rng=None, want_grads=True):
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=bool)
    if mask.shape != ids.shape:
        raise ValidationError("loss mask shape must match ids")
    squeeze = ids.ndim == 1
    if squeeze:
        ids, mask = ids[None], mask[None]
    if not mask.any():
        raise ValidationError("loss mask selects no positions")
    if mask[:, 0].any():
        raise ValidationError("position 0 has no preceding context to predict from")

    logits, cache = forward_with_cache(ids, params, adapter=adapter, train=train, rng=rng)
    lp = log_softmax(logits[:, :-1])
    targets = ids[:, 1:]
    tmask = mask[:, 1:]
    n = int(tmask.sum())
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(picked * tmask).sum() / n)
    if not want_grads:
        return loss, None
    # d loss / d logits = (softmax - onehot) / n on masked positions
    probs = np.exp(lp)
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1] = probs * tmask[..., None]
    np.subtract.at(
        dlogits[:, :-1], (np.arange(ids.shape[0])[:, None], np.arange(targets.shape[1])[None, :], targets),
        tmask.astype(np.float64),
    )
    dlogits /= n
    grads = backward_from_logits(dlogits, cache, params)
    return loss, grads
