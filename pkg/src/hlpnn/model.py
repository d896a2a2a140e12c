"""The hierarchical location prediction network.

Layers are plain functions over a parameter dict so each can be exercised
on its own; ``HLPNNNetwork`` owns the parameters and wires them together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import FEATURE_SETS
from .tensor import Tensor

# feature-type ids, also the row order after the tweets
TWEET, DESCRIPTION, LOCATION, NAME, LANGUAGE, TIMEZONE, NETWORK = range(7)
TYPE_NAMES = ("tweet", "description", "location", "name", "language", "timezone", "network")


def glorot(rng, shape):
    limit = math.sqrt(6.0 / (shape[0] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape)


def _mask_const(mask, dtype):
    return Tensor(np.asarray(mask, dtype=dtype), dtype=dtype)


# -- layers -----------------------------------------------------------------
def char_cnn_embed(p, char_ids, filter_sizes):
    """Character CNN: per filter width, relu conv windows then max over positions.

    ``char_ids`` has shape (..., K) with K >= max(filter_sizes); returns
    (..., n_filters_total).
    """
    lead = char_ids.shape[:-1]
    k = char_ids.shape[-1]
    if k < max(filter_sizes):
        raise T.ShapeError(f"words padded to {k} chars, need at least {max(filter_sizes)}")
    emb = T.embedding_lookup(p["char.table"], char_ids.reshape(-1, k))  # (W, K, d)
    d = emb.shape[-1]
    pooled = []
    for width in filter_sizes:
        n_win = k - width + 1
        win = np.arange(n_win)[:, None] + np.arange(width)[None, :]
        windows = emb[:, win].reshape(-1, n_win, width * d)
        conv = T.relu(windows @ p[f"char.conv{width}.w"] + p[f"char.conv{width}.b"])
        pooled.append(T.max_pool(conv, axis=1))
    out = T.concat(pooled, axis=-1)
    return out.reshape(*lead, out.shape[-1])


def embed_word(p, word_ids, char_ids, cfg):
    """[word-table row, character-level vector], width 2D."""
    word = T.embedding_lookup(p["word.table"], word_ids)
    if cfg.use_char_cnn:
        second = char_cnn_embed(p, char_ids, cfg.filter_sizes)
    else:
        second = T.embedding_lookup(p["word.table2"], word_ids)
    return T.concat([word, second], axis=-1)


def bilstm(p, x, mask):
    fw = T.lstm(x, mask, p["lstm.fw.wx"], p["lstm.fw.wh"], p["lstm.fw.b"])
    bw = T.lstm(x, mask, p["lstm.bw.wx"], p["lstm.bw.wh"], p["lstm.bw.b"], reverse=True)
    return T.concat([fw, bw], axis=-1)


def multi_head(p, prefix, queries, keys, key_mask, n_heads):
    """Scaled dot-product attention with ``n_heads`` heads.

    ``queries`` is (Bq, Lq, E) with Bq either B or 1 (a shared learned
    context); ``keys`` is (B, Lk, E); ``key_mask`` (B, Lk) marks attendable
    positions. Returns the (B, Lq, E) output and the (B, h, Lq, Lk) weights.
    """
    B, Lk, E = keys.shape
    Bq, Lq, _ = queries.shape
    dk = E // n_heads
    q = (queries @ p[prefix + ".wq"]).reshape(Bq, Lq, n_heads, dk).transpose(0, 2, 1, 3)
    k = (keys @ p[prefix + ".wk"]).reshape(B, Lk, n_heads, dk).transpose(0, 2, 1, 3)
    v = (keys @ p[prefix + ".wv"]).reshape(B, Lk, n_heads, dk).transpose(0, 2, 1, 3)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    weights = T.softmax(scores, axis=-1, mask=np.asarray(key_mask, bool)[:, None, None, :])
    heads = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Lq, E)
    return heads @ p[prefix + ".wo"], weights


def masked_mean(x, mask):
    """Mean over axis 1 of (B, L, E) restricted to ``mask`` (B, L)."""
    m = np.asarray(mask, dtype=x.dtype)
    denom = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return (x * _mask_const(m[:, :, None], x.dtype)).sum(axis=1) * _mask_const(1.0 / denom, x.dtype)


def attend_context(p, prefix, x, mask, n_heads, enabled=True):
    """Compress (B, L, E) into (B, E) with a learned query, or a masked mean."""
    if not enabled:
        return masked_mean(x, mask)
    E = x.shape[-1]
    query = p[prefix + ".q"].reshape(1, 1, E)
    out, _ = multi_head(p, prefix, query, x, mask, n_heads)
    return out.reshape(x.shape[0], E)


def attend_text(p, h, mask, cfg):
    return attend_context(p, "word_att", h, mask, cfg.n_heads, cfg.use_word_attention)


def fuse(p, field_reps, batch):
    """Gather (B, R, 2D) fusion rows and add feature-type embeddings.

    Rows per user: tweets, description, location, name, language,
    timezone, network, then padding.
    """
    parts = [field_reps]
    if batch.language_ids is not None:
        parts.append(T.embedding_lookup(p["lang.table"], batch.language_ids))
        parts.append(T.embedding_lookup(p["tz.table"], batch.timezone_ids))
    width = field_reps.shape[-1]
    net = batch.network
    if net.shape[-1] != width:
        raise T.ShapeError(f"network vectors have width {net.shape[-1]}, expected {width}")
    parts.append(Tensor(net, dtype=field_reps.dtype))
    parts.append(Tensor(np.zeros((1, width)), dtype=field_reps.dtype))
    source = T.concat(parts, axis=0)
    rows = T.embedding_lookup(source, batch.row_index)
    return rows + T.embedding_lookup(p["type.table"], batch.row_type)


def encoder_layer(p, prefix, f_in, row_mask, cfg, training=False, rng=None):
    """Self-attention and position-wise FFN, each with residual + LayerNorm."""
    eps = cfg.layer_norm_eps
    att, _ = multi_head(p, prefix + ".attn", f_in, f_in, row_mask, cfg.n_heads)
    att = T.dropout(att, cfg.dropout_encoder, rng, training)
    f1 = T.layer_norm(att + f_in, p[prefix + ".ln1.g"], p[prefix + ".ln1.b"], eps)
    hidden = T.relu(f1 @ p[prefix + ".ffn.w1"] + p[prefix + ".ffn.b1"])
    ffn = hidden @ p[prefix + ".ffn.w2"] + p[prefix + ".ffn.b2"]
    ffn = T.dropout(ffn, cfg.dropout_encoder, rng, training)
    return T.layer_norm(ffn + f1, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"], eps)


def hierarchical_heads(p, g_co, g_ci, bias):
    """Region softmax, then city logits shifted by lambda * (P_co @ Bias)."""
    logits_co = g_co @ p["head.co.w"].T + p["head.co.b"]
    p_co = T.softmax(logits_co, axis=-1)
    penalty = p_co @ bias
    logits_ci = g_ci @ p["head.ci.w"].T + p["head.ci.b"] + p["lambda"] * penalty
    return logits_co, p_co, logits_ci


def hlpnn_loss(logits_co, logits_ci, gold_country, gold_city, alpha):
    """City cross entropy plus ``alpha`` times region cross entropy, batch mean.

    Returns (total, city_term, country_term).
    """
    city = T.cross_entropy(logits_ci, gold_city)
    country = T.cross_entropy(logits_co, gold_country)
    if alpha == 0:
        return city, city, country
    return city + alpha * country, city, country


# -- batching ---------------------------------------------------------------
@dataclass
class Batch:
    word_ids: np.ndarray  # (NF, N)
    char_ids: np.ndarray  # (NF, N, K)
    token_mask: np.ndarray  # (NF, N)
    row_index: np.ndarray  # (B, R) into [fields, languages, timezones, networks, zero]
    row_type: np.ndarray  # (B, R)
    row_mask: np.ndarray  # (B, R)
    language_ids: np.ndarray | None
    timezone_ids: np.ndarray | None
    network: np.ndarray  # (B, 2D)
    gold_country: np.ndarray | None = None
    gold_city: np.ndarray | None = None

    @property
    def n_users(self):
        return self.row_index.shape[0]


def collate(users, network, cfg, min_chars=1, gold_country=None, gold_city=None):
    """Stack EncodedUsers into padded arrays.

    Text fields whose feature type is disabled by ``cfg.features`` are not
    encoded and their rows are masked; a user left with no enabled row
    falls back to its description row.
    """
    enabled = {TYPE_NAMES.index(n) for n in FEATURE_SETS[cfg.features]}
    B = len(users)
    R = max(u.t_used for u in users) + 6
    fields, owner_rows = [], []
    row_type = np.zeros((B, R), dtype=np.int64)
    row_mask = np.zeros((B, R), dtype=bool)
    row_slot = np.full((B, R), -1, dtype=np.int64)
    for b, u in enumerate(users):
        types = [TWEET] * u.t_used + [DESCRIPTION, LOCATION, NAME, LANGUAGE, TIMEZONE, NETWORK]
        on = [t in enabled for t in types]
        if not any(on):
            on[u.t_used] = True
        for r, (t, flag) in enumerate(zip(types, on)):
            row_type[b, r] = t
            row_mask[b, r] = flag
            if t <= NAME and flag:
                row_slot[b, r] = len(fields)
                fields.append(u.fields[r])
            elif t == LANGUAGE:
                row_slot[b, r] = -2
            elif t == TIMEZONE:
                row_slot[b, r] = -3
            elif t == NETWORK:
                row_slot[b, r] = -4
        owner_rows.append(len(types))

    NF = len(fields)
    n_tok = max([int(f.mask.sum()) for f in fields] + [1])
    n_chr = max([int((f.char_ids[:n_tok] > 0).sum(axis=1).max()) for f in fields] + [min_chars])
    n_chr = max(n_chr, min_chars)
    k_avail = fields[0].char_ids.shape[1] if fields else n_chr
    word_ids = np.zeros((NF, n_tok), dtype=np.int64)
    char_ids = np.zeros((NF, n_tok, n_chr), dtype=np.int64)
    token_mask = np.zeros((NF, n_tok), dtype=bool)
    for i, f in enumerate(fields):
        word_ids[i] = f.word_ids[:n_tok]
        char_ids[i, :, :min(n_chr, k_avail)] = f.char_ids[:n_tok, :n_chr]
        token_mask[i] = f.mask[:n_tok]

    use_cat = LANGUAGE in enabled or TIMEZONE in enabled
    zero_row = NF + (2 * B if use_cat else 0) + B
    row_index = np.full((B, R), zero_row, dtype=np.int64)
    for b in range(B):
        for r in range(owner_rows[b]):
            s = row_slot[b, r]
            if s >= 0:
                row_index[b, r] = s
            elif s == -2 and use_cat:
                row_index[b, r] = NF + b
            elif s == -3 and use_cat:
                row_index[b, r] = NF + B + b
            elif s == -4:
                row_index[b, r] = NF + (2 * B if use_cat else 0) + b
    net = np.asarray(network, dtype=np.float64).reshape(B, -1)
    return Batch(
        word_ids=word_ids,
        char_ids=char_ids,
        token_mask=token_mask,
        row_index=row_index,
        row_type=row_type,
        row_mask=row_mask,
        language_ids=np.array([u.language_id for u in users]) if use_cat else None,
        timezone_ids=np.array([u.timezone_id for u in users]) if use_cat else None,
        network=net,
        gold_country=None if gold_country is None else np.asarray(gold_country),
        gold_city=None if gold_city is None else np.asarray(gold_city),
    )


# -- the network --------------------------------------------------------------
@dataclass
class ForwardOutput:
    logits_co: Tensor
    p_co: Tensor
    logits_ci: Tensor

    def p_ci(self):
        return T.softmax(self.logits_ci, axis=-1)


class HLPNNNetwork:
    """Parameters and forward pass of the full model."""

    def __init__(self, cfg, n_words, n_chars, n_languages, n_timezones, bias, rng,
                 word_init=None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        bias = np.asarray(bias, dtype=np.float64)
        self.n_countries, self.n_cities = bias.shape
        self.bias = Tensor(bias, dtype=self.dtype)
        self.params = {}
        D, E = cfg.word_dim, 2 * cfg.word_dim

        self._add("word.table", word_init if word_init is not None
                  else rng.uniform(-0.25, 0.25, (n_words, D)))
        if cfg.use_char_cnn:
            self._add("char.table", rng.uniform(-1.0, 1.0, (n_chars, cfg.char_dim)))
            for width in cfg.filter_sizes:
                self._add(f"char.conv{width}.w",
                          glorot(rng, (width * cfg.char_dim, cfg.filters_per_size)))
                self._add(f"char.conv{width}.b", np.zeros(cfg.filters_per_size))
        else:
            self._add("word.table2", rng.uniform(-0.25, 0.25, (n_words, D)))
        for direction in ("fw", "bw"):
            self._add(f"lstm.{direction}.wx", glorot(rng, (E, 4 * D)))
            self._add(f"lstm.{direction}.wh", glorot(rng, (D, 4 * D)))
            b = np.zeros(4 * D)
            b[D:2 * D] = 1.0  # forget gate
            self._add(f"lstm.{direction}.b", b)
        if cfg.use_word_attention:
            self._attention("word_att", E, rng, context=True)
        if {"language", "timezone"} & set(FEATURE_SETS[cfg.features]):
            self._add("lang.table", rng.uniform(-1.0, 1.0, (n_languages, E)))
            self._add("tz.table", rng.uniform(-1.0, 1.0, (n_timezones, E)))
        self._add("type.table", rng.uniform(-0.1, 0.1, (7, E)))
        for stack in ("co", "ci"):
            if cfg.use_encoders:
                for layer in range(cfg.n_layers):
                    pre = f"enc.{stack}.{layer}"
                    self._attention(pre + ".attn", E, rng)
                    self._add(pre + ".ln1.g", np.ones(E))
                    self._add(pre + ".ln1.b", np.zeros(E))
                    self._add(pre + ".ffn.w1", glorot(rng, (E, cfg.ff_dim)))
                    self._add(pre + ".ffn.b1", np.zeros(cfg.ff_dim))
                    self._add(pre + ".ffn.w2", glorot(rng, (cfg.ff_dim, E)))
                    self._add(pre + ".ffn.b2", np.zeros(E))
                    self._add(pre + ".ln2.g", np.ones(E))
                    self._add(pre + ".ln2.b", np.zeros(E))
            if cfg.use_field_attention:
                self._attention(f"field.{stack}", E, rng, context=True)
        self._add("head.co.w", glorot(rng, (self.n_countries, E)))
        self._add("head.co.b", np.zeros(self.n_countries))
        self._add("head.ci.w", glorot(rng, (self.n_cities, E)))
        self._add("head.ci.b", np.zeros(self.n_cities))
        self._add("lambda", np.array(cfg.lambda_init))

    def _add(self, name, value):
        self.params[name] = Tensor(np.array(value, dtype=self.dtype), requires_grad=True,
                                   name=name)

    def _attention(self, prefix, E, rng, context=False):
        if context:
            self._add(prefix + ".q", rng.uniform(-0.1, 0.1, (1, E)))
        for w in ("wq", "wk", "wv", "wo"):
            self._add(f"{prefix}.{w}", glorot(rng, (E, E)))

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters: {sorted(missing)}")
        for k, v in self.params.items():
            if state[k].shape != v.shape:
                raise T.ShapeError(f"{k}: expected shape {v.shape}, got {state[k].shape}")
            v.data[...] = state[k]

    def forward(self, batch, training=False, rng=None):
        cfg, p = self.cfg, self.params
        x = embed_word(p, batch.word_ids, batch.char_ids, cfg)
        x = T.dropout(x, cfg.dropout_lstm_in, rng, training)
        h = bilstm(p, x, batch.token_mask)
        reps = attend_text(p, h, batch.token_mask, cfg)
        f = fuse(p, reps, batch)
        pooled = {}
        for stack in ("co", "ci"):
            out = f
            if cfg.use_encoders:
                for layer in range(cfg.n_layers):
                    out = encoder_layer(p, f"enc.{stack}.{layer}", out, batch.row_mask, cfg,
                                        training, rng)
            pooled[stack] = attend_context(p, f"field.{stack}", out, batch.row_mask,
                                           cfg.n_heads, cfg.use_field_attention)
        return ForwardOutput(*hierarchical_heads(p, pooled["co"], pooled["ci"], self.bias))

    def loss(self, out, batch, alpha):
        return hlpnn_loss(out.logits_co, out.logits_ci, batch.gold_country, batch.gold_city,
                          alpha)
