"""Decoder-only transformer with adaptive per-head distance bias.

Architecture: token embeddings plus a fixed sinusoidal position table, then
``n_blocks`` pre-norm residual blocks (masked multi-head attention with a
learnable linear distance bias inside the softmax, then a GELU MLP), a final
layer norm, and a linear head onto the vocabulary.

Attention scores for head h are q_i . k_j / sqrt(d_head) + B[h, i, j] with
B[h, i, j] = -m_h * (i - j) for j <= i and -inf above the diagonal. The
slopes m_h are trainable, initialized geometrically at 2^(-8h / n_heads);
``bias_mode="none"`` zeroes B, reducing the block to standard causal
attention for ablation.

Forward, backward, and generation operate on a single token sequence. The
backward pass chains the closed-form rules from :mod:`katzgpt.ops`; there is
no tape. All randomness (init, dropout, sampling) flows through explicit
RngStreams, so everything here is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from . import ops
from .errors import ConfigError, ContextLengthError, DataError
from .rng import RngStream

INIT_SCALE = 0.02
LN_EPS = 1e-5

# Short tensor names within one block -> suffix in the flat parameter dict.
_BLOCK_TENSORS = {
    "ln1.g": "ln1.g", "ln1.b": "ln1.b",
    "wq": "attn.wq", "bq": "attn.bq", "wk": "attn.wk", "bk": "attn.bk",
    "wv": "attn.wv", "bv": "attn.bv", "wo": "attn.wo", "bo": "attn.bo",
    "slopes": "attn.slopes",
    "ln2.g": "ln2.g", "ln2.b": "ln2.b",
    "w1": "mlp.w1", "b1": "mlp.b1", "w2": "mlp.w2", "b2": "mlp.b2",
}


@dataclass
class ModelConfig:
    n_blocks: int = 12
    d_model: int = 768
    n_heads: int = 12
    d_head: int = 64
    d_ff: int = 3072
    n_ctx: int = 1024
    vocab: int = 50259
    dropout_p: float = 0.1
    bias_mode: str = "alibi_learnable"
    tie_lm_head: bool = False

    def __post_init__(self):
        if self.d_model != self.n_heads * self.d_head:
            raise ConfigError(
                f"d_model {self.d_model} != n_heads {self.n_heads} * d_head {self.d_head}"
            )
        if self.n_ctx < 1:
            raise ConfigError(f"n_ctx must be >= 1, got {self.n_ctx}")
        # Shrunken vocabularies are permitted so oracle-sized models (for the
        # finite-difference gradient check) stay cheap to enumerate.
        if self.vocab < 1:
            raise ConfigError(f"vocab must be >= 1, got {self.vocab}")
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even for the sinusoidal table, got {self.d_model}")
        if self.bias_mode not in ("none", "alibi_learnable"):
            raise ConfigError(f"unknown bias_mode {self.bias_mode!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @property
    def dtype(self):
        return self.params["wte"].dtype

    def trainable_names(self) -> list[str]:
        return [name for name in self.params if name != "wpe"]

    def block_view(self, i: int) -> dict[str, np.ndarray]:
        """Short-name view of block i's tensors (shared, not copied)."""
        view = {}
        for short, suffix in _BLOCK_TENSORS.items():
            full = f"h{i}.{suffix}"
            if full in self.params:
                view[short] = self.params[full]
        return view


def sinusoidal_table(n_ctx: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d_model % 2 != 0:
        raise ConfigError(f"sinusoidal table requires even d_model, got {d_model}")
    pos = np.arange(n_ctx, dtype=np.float64)[:, None]
    div = np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.empty((n_ctx, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(pos / div)
    table[:, 1::2] = np.cos(pos / div)
    return table.astype(dtype)


def default_slopes(n_heads: int, dtype=np.float32) -> np.ndarray:
    """Geometric init m_h = 2^(-8h / n_heads), h = 1..n_heads."""
    h = np.arange(1, n_heads + 1, dtype=np.float64)
    return np.power(2.0, -8.0 * h / n_heads).astype(dtype)


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Seeded init: N(0, 0.02) projections, zero biases and head, unit norms."""
    rng = RngStream(seed)
    c = config
    params: dict[str, np.ndarray] = {}
    params["wte"] = rng.normal((c.vocab, c.d_model), INIT_SCALE, dtype)
    params["wpe"] = sinusoidal_table(c.n_ctx, c.d_model, dtype)
    for i in range(c.n_blocks):
        p = f"h{i}."
        params[p + "ln1.g"] = np.ones(c.d_model, dtype)
        params[p + "ln1.b"] = np.zeros(c.d_model, dtype)
        for proj in ("wq", "wk", "wv", "wo"):
            params[p + "attn." + proj] = rng.normal((c.d_model, c.d_model), INIT_SCALE, dtype)
        for bias in ("bq", "bk", "bv", "bo"):
            params[p + "attn." + bias] = np.zeros(c.d_model, dtype)
        if c.bias_mode == "alibi_learnable":
            params[p + "attn.slopes"] = default_slopes(c.n_heads, dtype)
        params[p + "ln2.g"] = np.ones(c.d_model, dtype)
        params[p + "ln2.b"] = np.zeros(c.d_model, dtype)
        params[p + "mlp.w1"] = rng.normal((c.d_model, c.d_ff), INIT_SCALE, dtype)
        params[p + "mlp.b1"] = np.zeros(c.d_ff, dtype)
        params[p + "mlp.w2"] = rng.normal((c.d_ff, c.d_model), INIT_SCALE, dtype)
        params[p + "mlp.b2"] = np.zeros(c.d_model, dtype)
    params["lnf.g"] = np.ones(c.d_model, dtype)
    params["lnf.b"] = np.zeros(c.d_model, dtype)
    if not c.tie_lm_head:
        params["lm_head.w"] = np.zeros((c.d_model, c.vocab), dtype)
    return Model(config, params)


def param_count(model: Model) -> int:
    """Machine-computed count of trainable parameters (wpe is fixed)."""
    return sum(model.params[name].size for name in model.trainable_names())


def param_count_formula(config: ModelConfig) -> int:
    """Closed-form sum over the declared tensor shapes."""
    c = config
    d, f, v = c.d_model, c.d_ff, c.vocab
    per_block = (
        2 * d  # ln1
        + 4 * (d * d + d)  # q, k, v, out projections with biases
        + (c.n_heads if c.bias_mode == "alibi_learnable" else 0)
        + 2 * d  # ln2
        + d * f + f + f * d + d  # mlp
    )
    total = v * d + c.n_blocks * per_block + 2 * d
    if not c.tie_lm_head:
        total += d * v
    return total


def _check_tokens(config: ModelConfig, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError("token sequence must be non-empty and one-dimensional")
    if ids.size > config.n_ctx:
        raise ContextLengthError(
            f"sequence length {ids.size} exceeds context window {config.n_ctx}"
        )
    bad = np.nonzero((ids < 0) | (ids >= config.vocab))[0]
    if bad.size:
        raise DataError(
            f"token id {int(ids[bad[0]])} out of range [0, {config.vocab}) at position {int(bad[0])}"
        )
    return ids


def _head_split(x: np.ndarray, n_heads: int, d_head: int) -> np.ndarray:
    # [T, d_model] -> [n_heads, T, d_head]
    return x.reshape(x.shape[0], n_heads, d_head).transpose(1, 0, 2)


def _head_join(x: np.ndarray) -> np.ndarray:
    # [n_heads, T, d_head] -> [T, d_model]
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _distance_matrix(t_len: int, dtype) -> np.ndarray:
    return np.subtract.outer(np.arange(t_len), np.arange(t_len)).astype(dtype)


def _causal_mask(t_len: int) -> np.ndarray:
    return np.triu(np.ones((t_len, t_len), dtype=bool), k=1)


def attention_block(
    x: np.ndarray,
    w: Mapping[str, np.ndarray],
    config: ModelConfig,
    training: bool = False,
    rng: RngStream | None = None,
    cache: dict[str, Any] | None = None,
    dist: np.ndarray | None = None,
    causal: np.ndarray | None = None,
) -> np.ndarray:
    """Pre-norm attention sub-layer: x + drop(W_o . Attn(ln1(x))).

    ``w`` holds one block's tensors under short names (ln1.g, wq, bq, ...,
    slopes). Per head h the scores are q_i . k_j / sqrt(d_head) - m_h (i - j)
    for j <= i (slopes absent => zero bias) and -inf above the diagonal.
    """
    c = config
    t_len = x.shape[0]
    if t_len > c.n_ctx:
        raise ContextLengthError(f"sequence length {t_len} exceeds context window {c.n_ctx}")
    if x.ndim != 2 or x.shape[1] != c.d_model:
        raise DataError(f"attention input must be [T, {c.d_model}], got {x.shape}")
    use_dropout = training and c.dropout_p > 0.0
    if use_dropout and rng is None:
        raise ConfigError("training-mode forward with dropout requires an RngStream")
    if dist is None:
        dist = _distance_matrix(t_len, x.dtype)
    if causal is None:
        causal = _causal_mask(t_len)

    a = ops.layer_norm(x, w["ln1.g"], w["ln1.b"], LN_EPS)
    q = _head_split(ops.matmul(a, w["wq"]) + w["bq"], c.n_heads, c.d_head)
    k = _head_split(ops.matmul(a, w["wk"]) + w["bk"], c.n_heads, c.d_head)
    v = _head_split(ops.matmul(a, w["wv"]) + w["bv"], c.n_heads, c.d_head)

    scale = 1.0 / np.sqrt(np.asarray(c.d_head, dtype=x.dtype))
    slopes = w.get("slopes")
    probs = np.empty((c.n_heads, t_len, t_len), dtype=x.dtype)
    att_out = np.empty((c.n_heads, t_len, c.d_head), dtype=x.dtype)
    for h in range(c.n_heads):
        scores = ops.matmul(q[h], k[h].T) * scale
        if slopes is not None:
            scores = scores - slopes[h] * dist
        scores[causal] = -np.inf
        probs[h] = ops.softmax_rows(scores)
        att_out[h] = ops.matmul(probs[h], v[h])

    joined = _head_join(att_out)
    proj = ops.matmul(joined, w["wo"]) + w["bo"]
    attn_mask = ops.dropout_mask(proj.shape, c.dropout_p, rng, x.dtype) if use_dropout else None
    if attn_mask is not None:
        proj = proj * attn_mask
    out = x + proj
    if cache is not None:
        cache.update(x_in=x, a=a, q=q, k=k, v=v, probs=probs, joined=joined,
                     attn_mask=attn_mask)
    return out


def forward_with_cache(
    model: Model, tokens, training: bool = False, rng: RngStream | None = None
):
    """Run the full pipeline, recording every intermediate needed by backward."""
    c = model.config
    p = model.params
    ids = _check_tokens(c, tokens)
    t_len = ids.size
    dtype = model.dtype

    use_dropout = training and c.dropout_p > 0.0
    if use_dropout and rng is None:
        raise ConfigError("training-mode forward with dropout requires an RngStream")

    def mask(shape):
        return ops.dropout_mask(shape, c.dropout_p, rng, dtype) if use_dropout else None

    dist = _distance_matrix(t_len, dtype)
    causal = _causal_mask(t_len)
    cache: dict[str, Any] = {"ids": ids, "dist": dist, "causal": causal, "blocks": []}

    x = p["wte"][ids] + p["wpe"][:t_len]
    emb_mask = mask(x.shape)
    cache["emb_mask"] = emb_mask
    if emb_mask is not None:
        x = x * emb_mask

    for i in range(c.n_blocks):
        blk = f"h{i}."
        bc: dict[str, Any] = {}
        x = attention_block(x, model.block_view(i), c, training, rng,
                            cache=bc, dist=dist, causal=causal)

        bc["x_mid"] = x
        b = ops.layer_norm(x, p[blk + "ln2.g"], p[blk + "ln2.b"], LN_EPS)
        bc["b"] = b
        h1 = ops.matmul(b, p[blk + "mlp.w1"]) + p[blk + "mlp.b1"]
        bc["h1"] = h1
        g = ops.gelu(h1)
        bc["g"] = g
        h2 = ops.matmul(g, p[blk + "mlp.w2"]) + p[blk + "mlp.b2"]
        mlp_mask = mask(h2.shape)
        bc["mlp_mask"] = mlp_mask
        if mlp_mask is not None:
            h2 = h2 * mlp_mask
        x = x + h2
        cache["blocks"].append(bc)

    cache["x_final"] = x
    normed = ops.layer_norm(x, p["lnf.g"], p["lnf.b"], LN_EPS)
    cache["normed"] = normed
    head_w = p["wte"].T if c.tie_lm_head else p["lm_head.w"]
    logits = ops.matmul(normed, head_w)
    return logits, cache


def forward(model: Model, tokens, training: bool = False, rng: RngStream | None = None):
    """Logits [T, vocab]; logits[t] depends only on tokens[0..t]."""
    logits, _ = forward_with_cache(model, tokens, training, rng)
    return logits


def backward_from_logits(model: Model, cache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Chain the per-primitive backward rules; returns grads for every
    trainable tensor (wpe receives none)."""
    c = model.config
    p = model.params
    ids = cache["ids"]
    t_len = ids.size
    grads: dict[str, np.ndarray] = {
        name: np.zeros_like(p[name]) for name in model.trainable_names()
    }

    normed = cache["normed"]
    if c.tie_lm_head:
        dx, d_head_w = ops.matmul_backward(d_logits, normed, p["wte"].T)
        grads["wte"] += d_head_w.T
    else:
        dx, grads["lm_head.w"] = ops.matmul_backward(d_logits, normed, p["lm_head.w"])
    dx, grads["lnf.g"], grads["lnf.b"] = ops.layer_norm_backward(
        dx, cache["x_final"], p["lnf.g"], LN_EPS
    )

    scale = 1.0 / np.sqrt(np.asarray(c.d_head, dtype=model.dtype))
    dist = cache["dist"]
    for i in reversed(range(c.n_blocks)):
        blk = f"h{i}."
        bc = cache["blocks"][i]

        # MLP branch: x = x_mid + drop(gelu(ln2(x_mid) @ w1 + b1) @ w2 + b2)
        d_h2 = dx if bc["mlp_mask"] is None else dx * bc["mlp_mask"]
        grads[blk + "mlp.b2"] += d_h2.sum(axis=0)
        d_g, d_w2 = ops.matmul_backward(d_h2, bc["g"], p[blk + "mlp.w2"])
        grads[blk + "mlp.w2"] += d_w2
        d_h1 = ops.gelu_backward(d_g, bc["h1"])
        grads[blk + "mlp.b1"] += d_h1.sum(axis=0)
        d_b, d_w1 = ops.matmul_backward(d_h1, bc["b"], p[blk + "mlp.w1"])
        grads[blk + "mlp.w1"] += d_w1
        d_mid, d_g2, d_b2 = ops.layer_norm_backward(d_b, bc["x_mid"], p[blk + "ln2.g"], LN_EPS)
        grads[blk + "ln2.g"] += d_g2
        grads[blk + "ln2.b"] += d_b2
        dx = dx + d_mid

        # Attention branch: x_mid = x_in + drop((attn heads) @ wo + bo)
        d_proj = dx if bc["attn_mask"] is None else dx * bc["attn_mask"]
        grads[blk + "attn.bo"] += d_proj.sum(axis=0)
        d_joined, d_wo = ops.matmul_backward(d_proj, bc["joined"], p[blk + "attn.wo"])
        grads[blk + "attn.wo"] += d_wo

        d_att = d_joined.reshape(t_len, c.n_heads, c.d_head).transpose(1, 0, 2)
        q, k, v, probs = bc["q"], bc["k"], bc["v"], bc["probs"]
        slopes = p.get(blk + "attn.slopes")
        d_q = np.empty_like(q)
        d_k = np.empty_like(k)
        d_v = np.empty_like(v)
        for h in range(c.n_heads):
            d_probs = ops.matmul(d_att[h], v[h].T)
            d_v[h] = ops.matmul(probs[h].T, d_att[h])
            d_scores = ops.softmax_backward(d_probs, probs[h])
            if slopes is not None:
                grads[blk + "attn.slopes"][h] += -np.sum(d_scores * dist)
            d_q[h] = ops.matmul(d_scores, k[h]) * scale
            d_k[h] = ops.matmul(d_scores.T, q[h]) * scale

        d_a = np.zeros_like(bc["a"])
        for name, d_heads in (("wq", d_q), ("wk", d_k), ("wv", d_v)):
            d_flat = _head_join(d_heads)
            grads[blk + f"attn.b{name[1]}"] += d_flat.sum(axis=0)
            d_in, d_w = ops.matmul_backward(d_flat, bc["a"], p[blk + "attn." + name])
            grads[blk + "attn." + name] += d_w
            d_a += d_in
        d_in, d_g1, d_b1 = ops.layer_norm_backward(d_a, bc["x_in"], p[blk + "ln1.g"], LN_EPS)
        grads[blk + "ln1.g"] += d_g1
        grads[blk + "ln1.b"] += d_b1
        dx = dx + d_in

    if cache["emb_mask"] is not None:
        dx = dx * cache["emb_mask"]
    np.add.at(grads["wte"], ids, dx)
    return grads


def backward(model: Model, tokens, labels, mask, training: bool = False,
             rng: RngStream | None = None):
    """Cross-entropy loss and gradients for all trainable tensors."""
    logits, cache = forward_with_cache(model, tokens, training, rng)
    loss, d_logits = ops.cross_entropy(logits, labels, mask)
    return loss, backward_from_logits(model, cache, d_logits)


def generate(
    model: Model,
    prompt,
    max_new_tokens: int,
    temperature: float = 0.0,
    top_k: int = 0,
    stop_id: int | None = None,
    rng: RngStream | None = None,
) -> list[int]:
    """Autoregressive decoding from a prompt; returns prompt + continuation.

    temperature 0 is greedy argmax (ties resolve to the lowest id); otherwise
    samples from the top_k-truncated softmax of logits / temperature
    (top_k 0 means no truncation). Decoding stops after stop_id is emitted
    or the budget is exhausted; the stop token stays in the output.
    """
    c = model.config
    ids = [int(t) for t in _check_tokens(c, prompt)]
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    if top_k < 0:
        raise ConfigError(f"top_k must be >= 0, got {top_k}")
    if len(ids) + max_new_tokens > c.n_ctx:
        raise ContextLengthError(
            f"prompt ({len(ids)}) + max_new_tokens ({max_new_tokens}) exceeds context {c.n_ctx}"
        )
    if temperature > 0 and rng is None:
        rng = RngStream(0)
    for _ in range(max_new_tokens):
        logits = forward(model, ids)[-1]
        if temperature == 0.0:
            nxt = int(np.argmax(logits))
        else:
            z = logits.astype(np.float64) / temperature
            if 0 < top_k < z.size:
                cutoff = np.partition(z, -top_k)[-top_k]
                z = np.where(z < cutoff, -np.inf, z)
            nxt = rng.categorical(ops.softmax_rows(z[None, :])[0])
        ids.append(nxt)
        if stop_id is not None and nxt == stop_id:
            break
    return ids
