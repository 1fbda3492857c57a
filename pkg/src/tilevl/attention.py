"""Causal self-attention: reference multi-head attention (MHA) and
multi-head latent attention (MLA) with a compressed KV cache.

MLA caches, per token, a ``rank``-dim latent ``c = W_dkv x`` and one
rotary key ``k_r`` of width ``d_rope`` shared by all heads. Per-head keys and
values are re-expanded from the cached latents with ``W_uk`` / ``W_uv``.
Queries are not compressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import ContractError, ShapeError, Tensor, init_normal, softmax, softmax_backward

MHA = "mha"
MLA = "mla"


class CapacityError(RuntimeError):
    """Position index exceeds the configured maximum sequence length."""


@dataclass(frozen=True)
class AttnConfig:
    n_heads: int
    d_head: int
    mode: str = MHA
    rank: int = 0
    d_rope: int = 0
    max_len: int = 4096
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.mode not in (MHA, MLA):
            raise ContractError(f"unknown attention mode {self.mode!r}")
        if self.n_heads < 1 or self.d_head < 1:
            raise ContractError("n_heads and d_head must be positive")
        if self.mode == MLA and self.rank < 1:
            raise ContractError("MLA needs rank >= 1")
        if self.d_rope < 0 or self.d_rope % 2:
            raise ContractError(f"d_rope must be even and >= 0, got {self.d_rope}")

    @property
    def d_model(self) -> int:
        return self.n_heads * self.d_head

    @property
    def logit_scale(self) -> float:
        if self.mode == MLA:
            return 1.0 / np.sqrt(self.d_head + self.d_rope)
        return 1.0 / np.sqrt(self.d_head)


def kv_cache_floats_per_token(cfg: AttnConfig) -> int:
    if cfg.mode == MHA:
        return 2 * cfg.n_heads * cfg.d_head
    return cfg.rank + cfg.d_rope


@dataclass
class KVCache:
    """Append-only per-token attention state.

    MHA stores ``keys``/``values`` of shape (t, n_heads, d_head); MLA stores
    ``latent`` (t, rank) and already-rotated ``rope_key`` (t, d_rope).
    """

    mode: str
    parts: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, cfg: AttnConfig) -> "KVCache":
        if cfg.mode == MHA:
            shapes = {"keys": (cfg.n_heads, cfg.d_head), "values": (cfg.n_heads, cfg.d_head)}
        else:
            shapes = {"latent": (cfg.rank,), "rope_key": (cfg.d_rope,)}
        return cls(cfg.mode, {k: np.zeros((0,) + s) for k, s in shapes.items()})

    def __len__(self):
        return next(iter(self.parts.values())).shape[0]

    def append(self, **new):
        if set(new) != set(self.parts):
            raise ContractError(f"cache expects {sorted(self.parts)}, got {sorted(new)}")
        for k, v in new.items():
            self.parts[k] = np.concatenate([self.parts[k], v], axis=0)

    def floats_per_token(self) -> int:
        return sum(int(np.prod(v.shape[1:])) for v in self.parts.values())

    def total_floats(self) -> int:
        return sum(v.size for v in self.parts.values())


def init_attention(rng: np.random.Generator, cfg: AttnConfig, d_model: int | None = None) -> dict:
    d = cfg.d_model if d_model is None else d_model
    hd = cfg.n_heads * cfg.d_head
    if cfg.mode == MHA:
        return {
            "Wq": init_normal(rng, (hd, d)),
            "Wk": init_normal(rng, (hd, d)),
            "Wv": init_normal(rng, (hd, d)),
            "Wo": init_normal(rng, (d, hd)),
        }
    return {
        "Wq": init_normal(rng, (hd, d)),
        "Wqr": init_normal(rng, (cfg.n_heads * cfg.d_rope, d)),
        "Wdkv": init_normal(rng, (cfg.rank, d)),
        "Wuk": init_normal(rng, (hd, cfg.rank)),
        "Wuv": init_normal(rng, (hd, cfg.rank)),
        "Wkr": init_normal(rng, (cfg.d_rope, d)),
        "Wo": init_normal(rng, (d, hd)),
    }


# ---------------------------------------------------------------------------
# rotary embedding on interleaved pairs


def _rope_angles(positions: np.ndarray, dim: int, base: float):
    inv = base ** (-np.arange(0, dim, 2) / dim)
    ang = positions[:, None].astype(np.float64) * inv[None, :]
    return np.cos(ang), np.sin(ang)


def rope(x: Tensor, positions: np.ndarray, base: float = 10000.0, inverse: bool = False) -> Tensor:
    """Rotate pairs (x[2i], x[2i+1]) of ``x[..., t, dim]`` by ``pos * base**(-2i/dim)``.

    ``inverse`` applies the transpose rotation, which is also the backward map.
    """
    dim = x.shape[-1]
    if dim == 0:
        return x.copy()
    cos, sin = _rope_angles(np.asarray(positions), dim, base)
    if inverse:
        sin = -sin
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


# ---------------------------------------------------------------------------
# forward / backward


def _heads(a: Tensor, n_heads: int) -> Tensor:
    t = a.shape[0]
    return a.reshape(t, n_heads, -1).transpose(1, 0, 2)


def _unheads(a: Tensor) -> Tensor:
    h, t, d = a.shape
    return a.transpose(1, 0, 2).reshape(t, h * d)


def _project_new(params, cfg: AttnConfig, x, positions):
    """Per-token cache entries and queries for the new tokens."""
    H = cfg.n_heads
    if cfg.mode == MHA:
        entries = {
            "keys": (x @ params["Wk"].T).reshape(-1, H, cfg.d_head),
            "values": (x @ params["Wv"].T).reshape(-1, H, cfg.d_head),
        }
        q = _heads(x @ params["Wq"].T, H)
        return entries, q, None
    latent = x @ params["Wdkv"].T
    kr_raw = x @ params["Wkr"].T
    entries = {"latent": latent, "rope_key": rope(kr_raw, positions, cfg.rope_base)}
    q_c = _heads(x @ params["Wq"].T, H)
    qr_raw = _heads(x @ params["Wqr"].T, H)
    q_r = rope(qr_raw, positions, cfg.rope_base)
    return entries, np.concatenate([q_c, q_r], axis=-1), (kr_raw, qr_raw)


def _expand_keys_values(params, cfg: AttnConfig, parts):
    H = cfg.n_heads
    if cfg.mode == MHA:
        return parts["keys"].transpose(1, 0, 2), parts["values"].transpose(1, 0, 2)
    lat = parts["latent"]
    k_c = _heads(lat @ params["Wuk"].T, H)
    v = _heads(lat @ params["Wuv"].T, H)
    k_r = np.broadcast_to(parts["rope_key"][None], (H,) + parts["rope_key"].shape)
    return np.concatenate([k_c, k_r], axis=-1), v


def _attend(q, k, v, q_pos, scale, causal):
    logits = (q @ k.transpose(0, 2, 1)) * scale
    if causal:
        k_pos = np.arange(k.shape[1])
        logits = np.where(k_pos[None, None, :] > q_pos[None, :, None], -np.inf, logits)
    probs = softmax(logits, axis=-1)
    return probs @ v, probs


def attention_forward(
    params: dict, cfg: AttnConfig, x: Tensor, cache: KVCache | None = None, causal: bool = True
):
    """Attend the new tokens ``x`` (t, d_model) over cached + new tokens.

    The cache is extended in place and also returned: ``(y, cache)``.
    """
    if cache is None:
        cache = KVCache.empty(cfg)
    if cache.mode != cfg.mode:
        raise ContractError(f"cache mode {cache.mode} does not match config {cfg.mode}")
    if x.ndim != 2 or x.shape[1] != params["Wq"].shape[1]:
        raise ShapeError(f"expected (t, {params['Wq'].shape[1]}) input, got {x.shape}")
    start = len(cache)
    positions = np.arange(start, start + x.shape[0])
    if x.shape[0] and positions[-1] >= cfg.max_len:
        raise CapacityError(f"position {positions[-1]} >= max_len {cfg.max_len}")
    entries, q, _ = _project_new(params, cfg, x, positions)
    cache.append(**entries)
    k, v = _expand_keys_values(params, cfg, cache.parts)
    o, _ = _attend(q, k, v, positions, cfg.logit_scale, causal)
    return _unheads(o) @ params["Wo"].T, cache


def attention_weights(params: dict, cfg: AttnConfig, x: Tensor, causal: bool = True) -> Tensor:
    """Attention probabilities (heads, t, t) for a cache-free pass over ``x``."""
    positions = np.arange(x.shape[0])
    entries, q, _ = _project_new(params, cfg, x, positions)
    k, v = _expand_keys_values(params, cfg, entries)
    return _attend(q, k, v, positions, cfg.logit_scale, causal)[1]


def attention_train_forward(params: dict, cfg: AttnConfig, x: Tensor, causal: bool = True):
    """Cache-free forward that keeps what ``attention_backward`` needs."""
    positions = np.arange(x.shape[0])
    if x.shape[0] and positions[-1] >= cfg.max_len:
        raise CapacityError(f"position {positions[-1]} >= max_len {cfg.max_len}")
    entries, q, raw = _project_new(params, cfg, x, positions)
    k, v = _expand_keys_values(params, cfg, entries)
    o, probs = _attend(q, k, v, positions, cfg.logit_scale, causal)
    o_flat = _unheads(o)
    y = o_flat @ params["Wo"].T
    return y, (x, positions, entries, q, k, v, probs, o_flat)


def attention_backward(params: dict, cfg: AttnConfig, ctx, dy: Tensor):
    """Returns (dx, grads) for ``attention_train_forward``."""
    x, positions, entries, q, k, v, probs, o_flat = ctx
    H, dh, scale = cfg.n_heads, cfg.d_head, cfg.logit_scale
    grads = {"Wo": dy.T @ o_flat}
    do = _heads(dy @ params["Wo"], H)
    dv = probs.transpose(0, 2, 1) @ do
    dprobs = do @ v.transpose(0, 2, 1)
    dlogits = softmax_backward(probs, dprobs) * scale
    dq = dlogits @ k
    dk = dlogits.transpose(0, 2, 1) @ q
    if cfg.mode == MHA:
        dq_f, dk_f, dv_f = _unheads(dq), _unheads(dk), _unheads(dv)
        grads["Wq"] = dq_f.T @ x
        grads["Wk"] = dk_f.T @ x
        grads["Wv"] = dv_f.T @ x
        dx = dq_f @ params["Wq"] + dk_f @ params["Wk"] + dv_f @ params["Wv"]
        return dx, grads

    lat = entries["latent"]
    dq_c, dq_r = _unheads(dq[..., :dh]), dq[..., dh:]
    dk_c, dk_r = _unheads(dk[..., :dh]), dk[..., dh:].sum(axis=0)
    dv_f = _unheads(dv)
    dqr_raw = _unheads(rope(dq_r, positions, cfg.rope_base, inverse=True))
    dkr_raw = rope(dk_r, positions, cfg.rope_base, inverse=True)
    grads["Wq"] = dq_c.T @ x
    grads["Wqr"] = dqr_raw.T @ x
    grads["Wkr"] = dkr_raw.T @ x
    grads["Wuk"] = dk_c.T @ lat
    grads["Wuv"] = dv_f.T @ lat
    dlat = dk_c @ params["Wuk"] + dv_f @ params["Wuv"]
    grads["Wdkv"] = dlat.T @ x
    dx = (
        dq_c @ params["Wq"]
        + dqr_raw @ params["Wqr"]
        + dkr_raw @ params["Wkr"]
        + dlat @ params["Wdkv"]
    )
    return dx, grads
