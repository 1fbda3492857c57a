"""Model assembly: variant configs, toy vision encoder, embedding merge,
attention + MoE language model, masked next-token loss and SGD train step.

Parameters live in one flat ``dict[str, ndarray]`` keyed by dotted names:
``vision.*`` (encoder), ``adaptor.*`` (projector and the two special visual
token embeddings) and ``lm.*`` (language model). Keys ending in
``expert_bias`` are routing buffers: they are never differentiated and are
only moved by the bias-correction rule.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import adaptor as ad
from .attention import MHA, MLA, AttnConfig, attention_backward, attention_train_forward, init_attention
from .imaging import Image
from .moe import SIGMOID, SOFTMAX, MoEConfig, init_moe, moe_layer_backward, moe_layer_forward, update_bias
from .numcore import (
    ContractError,
    Tensor,
    cross_entropy,
    cross_entropy_backward,
    init_normal,
    make_rng,
    rms_norm,
    rms_norm_backward,
)
from .tiling import BASE_TILE, MAX_TILES, build_canvas, fit_to_candidate, plan_for_image, slice_tiles, ResolutionCandidate

BUFFER_SUFFIX = "expert_bias"
VARIANTS = ("tiny", "small", "base", "toy")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    vocab_size: int
    d_model: int
    n_heads: int
    n_layers: int
    attention: str
    kv_rank: int
    n_routed: int
    n_shared: int
    top_k: int
    routing: str
    bias_correction: bool
    d_rope: int = 0
    max_tiles: int = MAX_TILES
    base_tile: int = BASE_TILE
    patch_grid: int = 27
    vision_dim: int = 1152
    vision_heads: int = 16
    shuffle_factor: int = 2
    d_expert_hidden: int = 0  # 0: 2 * d_model // top_k
    aux_weight: float = 0.001
    bias_step: float = 0.0
    vision_lr_mult: float = 0.1
    max_seq_len: int = 4096
    image_token_id: int = -1  # -1: last vocabulary id
    rms_eps: float = 1e-6

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.attention not in (MHA, MLA):
            raise ConfigError(f"attention must be {MHA!r} or {MLA!r}")
        if self.routing not in (SOFTMAX, SIGMOID):
            raise ConfigError(f"routing must be {SOFTMAX!r} or {SIGMOID!r}")
        if self.attention == MLA and self.kv_rank < 1:
            raise ConfigError("MLA needs kv_rank >= 1")
        if not 1 <= self.top_k <= self.n_routed:
            raise ConfigError("need 1 <= top_k <= n_routed")
        if self.vision_dim % self.vision_heads:
            raise ConfigError("vision_dim must be divisible by vision_heads")
        if not 1 <= self.patch_grid <= self.base_tile:
            raise ConfigError("patch_grid must lie in [1, base_tile]")
        if self.d_expert_hidden == 0:
            object.__setattr__(self, "d_expert_hidden", 2 * self.d_model // self.top_k)
        if self.image_token_id == -1:
            object.__setattr__(self, "image_token_id", self.vocab_size - 1)
        if not 0 <= self.image_token_id < self.vocab_size:
            raise ConfigError("image_token_id outside the vocabulary")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def attn_config(self) -> AttnConfig:
        return AttnConfig(
            self.n_heads,
            self.d_head,
            self.attention,
            rank=self.kv_rank if self.attention == MLA else 0,
            d_rope=self.d_rope if self.attention == MLA else 0,
            max_len=self.max_seq_len,
        )

    @property
    def vision_attn_config(self) -> AttnConfig:
        return AttnConfig(
            self.vision_heads, self.vision_dim // self.vision_heads, MHA,
            max_len=self.patch_grid * self.patch_grid,
        )

    @property
    def moe_config(self) -> MoEConfig:
        return MoEConfig(
            self.n_routed,
            self.n_shared,
            self.top_k,
            self.d_model,
            self.d_expert_hidden,
            routing=self.routing,
            bias_enabled=self.bias_correction,
            bias_step=self.bias_step,
            aux_weight=self.aux_weight,
        )

    @property
    def patch_size(self) -> int:
        return self.base_tile // self.patch_grid

    @property
    def tokens_per_side(self) -> int:
        return -(-self.patch_grid // self.shuffle_factor)


_TABLE = {
    "tiny": dict(
        vocab_size=129280, d_model=1280, n_heads=10, n_layers=12, attention=MHA, kv_rank=0,
        n_routed=64, n_shared=2, top_k=6, routing=SOFTMAX, bias_correction=False,
        aux_weight=0.001,
    ),
    "small": dict(
        vocab_size=102400, d_model=2048, n_heads=16, n_layers=27, attention=MLA, kv_rank=512,
        d_rope=64, n_routed=64, n_shared=2, top_k=6, routing=SOFTMAX, bias_correction=False,
        aux_weight=0.001,
    ),
    "base": dict(
        vocab_size=129280, d_model=2560, n_heads=32, n_layers=30, attention=MLA, kv_rank=512,
        d_rope=64, n_routed=72, n_shared=2, top_k=6, routing=SIGMOID, bias_correction=True,
        aux_weight=0.0001, bias_step=0.001,
    ),
    "toy": dict(
        vocab_size=128, d_model=32, n_heads=2, n_layers=2, attention=MLA, kv_rank=16, d_rope=4,
        n_routed=8, n_shared=2, top_k=2, routing=SOFTMAX, bias_correction=False,
        patch_grid=6, vision_dim=8, vision_heads=2, max_seq_len=4096,
    ),
}


def build_config(variant: str, **overrides) -> ModelConfig:
    key = variant.lower()
    if key not in _TABLE:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return ModelConfig(variant=key, **{**_TABLE[key], **overrides})


def config_from_dict(data: dict) -> ModelConfig:
    """Build a config from a JSON-like mapping; ``variant`` selects the preset to override."""
    data = dict(data)
    known = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    variant = data.pop("variant", "toy")
    try:
        return build_config(variant, **data)
    except (TypeError, ContractError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ModelConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(data)


def config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


# ---------------------------------------------------------------------------
# parameters


def sub(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def _put(out: dict, prefix: str, tree: dict):
    for k, v in tree.items():
        out[prefix + k] = v


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    rng = make_rng(seed)
    p: dict = {}
    C, d = cfg.vision_dim, cfg.d_model
    patch_dim = cfg.patch_size * cfg.patch_size * 3
    p["vision.patch_W"] = init_normal(rng, (C, patch_dim))
    p["vision.patch_b"] = np.zeros(C)
    p["vision.pos"] = init_normal(rng, (cfg.patch_grid * cfg.patch_grid, C))
    p["vision.norm1"] = np.ones(C)
    _put(p, "vision.attn.", init_attention(rng, cfg.vision_attn_config))
    p["vision.norm2"] = np.ones(C)
    _put(p, "vision.mlp.", ad.init_mlp(rng, C, 2 * C, C))

    c_in = C * cfg.shuffle_factor ** 2
    _put(p, "adaptor.", ad.init_mlp(rng, c_in, d, d))
    p["adaptor.tile_newline"] = init_normal(rng, (d,))
    p["adaptor.view_separator"] = init_normal(rng, (d,))

    p["lm.embed"] = init_normal(rng, (cfg.vocab_size, d))
    for i in range(cfg.n_layers):
        pre = f"lm.layers.{i}."
        p[pre + "attn_norm"] = np.ones(d)
        _put(p, pre + "attn.", init_attention(rng, cfg.attn_config))
        p[pre + "moe_norm"] = np.ones(d)
        _put(p, pre + "moe.", init_moe(rng, cfg.moe_config))
        p[pre + BUFFER_SUFFIX] = np.zeros(cfg.n_routed)
    p["lm.final_norm"] = np.ones(d)
    p["lm.head"] = init_normal(rng, (cfg.vocab_size, d))
    return p


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIX)


def is_language_param(name: str) -> bool:
    return name.startswith("lm.")


# ---------------------------------------------------------------------------
# image preparation and the toy vision encoder


@dataclass(frozen=True)
class VisualInput:
    """One image ready for the model: its tiles and the token layout they fill."""

    tiles: tuple
    layout: ad.VisualLayout
    plan: object = None


def prepare_image(img: Image, cfg: ModelConfig, images_in_context: int = 1) -> VisualInput:
    side = cfg.tokens_per_side
    if images_in_context > ad.TILING_IMAGE_LIMIT:
        plan = fit_to_candidate(img.height, img.width, ResolutionCandidate(1, 1, cfg.base_tile))
        thumb = slice_tiles(build_canvas(img, plan), plan)[0]
        return VisualInput((thumb,), ad.layout_visual_tokens(1, 1, images_in_context, side), plan)
    plan = plan_for_image(img, cfg.max_tiles, cfg.base_tile)
    tiles = slice_tiles(build_canvas(img, plan), plan)
    return VisualInput(tuple(tiles), ad.layout_visual_tokens(plan.m, plan.n, images_in_context, side), plan)


def patchify(tile: Image, cfg: ModelConfig) -> Tensor:
    """(grid*grid, patch*patch*3) pixel patches scaled to [0, 1], row-major."""
    if (tile.height, tile.width) != (cfg.base_tile, cfg.base_tile):
        raise ContractError(
            f"tile must be {cfg.base_tile}x{cfg.base_tile}, got {tile.height}x{tile.width}"
        )
    g, ps = cfg.patch_grid, cfg.patch_size
    px = tile.pixels[: g * ps, : g * ps].astype(np.float64) / 255.0
    return px.reshape(g, ps, g, ps, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, ps * ps * 3)


def _vision_forward(params: dict, cfg: ModelConfig, patches: Tensor):
    eps = cfg.rms_eps
    acfg = cfg.vision_attn_config
    x0 = patches @ params["vision.patch_W"].T + params["vision.patch_b"] + params["vision.pos"]
    a_in = rms_norm(x0, params["vision.norm1"], eps)
    a_out, a_ctx = attention_train_forward(sub(params, "vision.attn."), acfg, a_in, causal=False)
    x1 = x0 + a_out
    m_in = rms_norm(x1, params["vision.norm2"], eps)
    m_out, m_ctx = ad.mlp_forward(sub(params, "vision.mlp."), m_in)
    x2 = x1 + m_out
    return x2, (patches, x0, a_in, a_ctx, x1, m_in, m_ctx)


def _vision_backward(params: dict, cfg: ModelConfig, ctx, dx2: Tensor, grads: dict):
    patches, x0, a_in, a_ctx, x1, m_in, m_ctx = ctx
    eps = cfg.rms_eps
    dm_in, g = ad.mlp_backward(sub(params, "vision.mlp."), m_ctx, dx2)
    _acc(grads, "vision.mlp.", g)
    dx1_n, dg2 = rms_norm_backward(x1, params["vision.norm2"], eps, dm_in)
    grads["vision.norm2"] += dg2
    dx1 = dx2 + dx1_n
    da_in, g = attention_backward(sub(params, "vision.attn."), cfg.vision_attn_config, a_ctx, dx1)
    _acc(grads, "vision.attn.", g)
    dx0_n, dg1 = rms_norm_backward(x0, params["vision.norm1"], eps, da_in)
    grads["vision.norm1"] += dg1
    dx0 = dx1 + dx0_n
    grads["vision.patch_W"] += dx0.T @ patches
    grads["vision.patch_b"] += dx0.sum(axis=0)
    grads["vision.pos"] += dx0


def encode_tiles(tiles, params: dict, cfg: ModelConfig) -> list[Tensor]:
    """Toy encoder: patch embedding plus one attention + MLP block per tile.

    Returns one (patch_grid, patch_grid, vision_dim) feature grid per tile.
    """
    g = cfg.patch_grid
    return [_vision_forward(params, cfg, patchify(t, cfg))[0].reshape(g, g, -1) for t in tiles]


def _acc(grads: dict, prefix: str, g: dict):
    for k, v in g.items():
        grads[prefix + k] += v


# ---------------------------------------------------------------------------
# sequences and embedding merge


@dataclass
class SequenceBatch:
    """Text ids with image placeholders at ``image_slots``.

    ``labels`` and ``loss_mask`` index the merged sequence (after every slot is
    expanded into its visual tokens); ``labels[p]`` is the target for position p.
    """

    token_ids: list
    image_slots: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    loss_mask: list = field(default_factory=list)


def merged_length(batch: SequenceBatch, layouts) -> int:
    return len(batch.token_ids) - len(batch.image_slots) + sum(len(l) for l in layouts)


def make_batch(token_ids, image_slots, layouts, supervised=None) -> SequenceBatch:
    """Build next-token labels and a mask that is zero on every visual position.

    ``supervised[i]`` says whether text token ``i`` is a training target
    (answers yes, prompts no); by default every text token is.
    """
    token_ids = list(token_ids)
    slots = sorted(image_slots)
    if len(slots) != len(layouts):
        raise ContractError(f"{len(slots)} image slots but {len(layouts)} layouts")
    if supervised is None:
        supervised = [True] * len(token_ids)
    merged = []  # (token id or None for visual, supervised)
    li = 0
    for i, tok in enumerate(token_ids):
        if i in slots:
            merged.extend([(None, False)] * len(layouts[li]))
            li += 1
        else:
            merged.append((tok, bool(supervised[i])))
    labels = [0] * len(merged)
    mask = [0] * len(merged)
    for p in range(len(merged) - 1):
        nxt, sup = merged[p + 1]
        if merged[p][0] is not None and nxt is not None and sup:
            labels[p] = int(nxt)
            mask[p] = 1
    return SequenceBatch(token_ids, slots, labels, mask)


def merge_embeddings(batch: SequenceBatch, table: Tensor, visual_tokens, layouts) -> Tensor:
    """Text positions look up ``table``; each slot is replaced by its visual sequence."""
    slots = list(batch.image_slots)
    if len(slots) != len(visual_tokens) or len(slots) != len(layouts):
        raise ContractError("need exactly one visual block and layout per image slot")
    for v, lay in zip(visual_tokens, layouts):
        if v.shape[0] != len(lay):
            raise ContractError(f"visual block has {v.shape[0]} tokens, layout expects {len(lay)}")
    parts = []
    vi = 0
    run = []
    slot_set = set(slots)
    for i, tok in enumerate(batch.token_ids):
        if i in slot_set:
            if run:
                parts.append(table[run])
                run = []
            parts.append(visual_tokens[vi])
            vi += 1
        else:
            run.append(int(tok))
    if run:
        parts.append(table[run])
    if not parts:
        return np.zeros((0, table.shape[1]))
    return np.concatenate(parts, axis=0)


def _merge_index(batch: SequenceBatch, layouts):
    """Per merged position: (text token id, -1) or (-1, image index)."""
    text, img = [], []
    slot_set = set(batch.image_slots)
    vi = 0
    for i, tok in enumerate(batch.token_ids):
        if i in slot_set:
            n = len(layouts[vi])
            text.extend([-1] * n)
            img.extend([vi] * n)
            vi += 1
        else:
            text.append(int(tok))
            img.append(-1)
    return np.array(text, dtype=np.int64), np.array(img, dtype=np.int64)


# ---------------------------------------------------------------------------
# loss


def next_token_loss(logits: Tensor, labels, loss_mask) -> float:
    """Mean cross-entropy over masked-in positions; 0 when nothing is masked in."""
    mask = np.asarray(loss_mask, dtype=bool)
    if not mask.any():
        return 0.0
    labels = np.asarray(labels, dtype=np.int64)
    return float(cross_entropy(logits[mask], labels[mask]).mean())


def next_token_loss_backward(logits: Tensor, labels, loss_mask) -> Tensor:
    mask = np.asarray(loss_mask, dtype=bool)
    d = np.zeros_like(logits)
    n = int(mask.sum())
    if n == 0:
        return d
    labels = np.asarray(labels, dtype=np.int64)
    d[mask] = cross_entropy_backward(logits[mask], labels[mask], np.full(n, 1.0 / n))
    return d


# ---------------------------------------------------------------------------
# full forward / backward


def _visual_forward(params: dict, cfg: ModelConfig, vis: VisualInput):
    g, f = cfg.patch_grid, cfg.shuffle_factor
    vctx, shuffled = [], []
    for tile in vis.tiles:
        feats, c = _vision_forward(params, cfg, patchify(tile, cfg))
        vctx.append(c)
        shuffled.append(ad.pixel_shuffle(feats.reshape(g, g, -1), f))
    stacked = np.stack(shuffled)  # (tiles, s, s, 4C)
    t, s, _, c4 = stacked.shape
    proj, pctx = ad.mlp_forward(sub(params, "adaptor."), stacked.reshape(-1, c4))
    proj = proj.reshape(t, s, s, -1)
    seq = ad.assemble_visual_sequence(
        vis.layout, proj, params["adaptor.tile_newline"], params["adaptor.view_separator"]
    )
    return seq, (vctx, pctx, stacked.shape)


def _visual_backward(params: dict, cfg: ModelConfig, vis: VisualInput, ctx, dseq: Tensor, grads: dict):
    vctx, pctx, sshape = ctx
    g, f, d = cfg.patch_grid, cfg.shuffle_factor, cfg.d_model
    dproj, dnl, dsep = ad.assemble_visual_sequence_backward(vis.layout, dseq, d)
    grads["adaptor.tile_newline"] += dnl
    grads["adaptor.view_separator"] += dsep
    dflat, gp = ad.mlp_backward(sub(params, "adaptor."), pctx, dproj.reshape(-1, d))
    _acc(grads, "adaptor.", gp)
    dstack = dflat.reshape(sshape)
    for i, c in enumerate(vctx):
        dfeat = ad.pixel_shuffle_backward(dstack[i], (g, g, cfg.vision_dim), f)
        _vision_backward(params, cfg, c, dfeat.reshape(g * g, -1), grads)


@dataclass
class ForwardResult:
    logits: Tensor
    aux_loss: float
    load_counts: list  # per layer
    selected: list  # per layer (seq, top_k)
    ctx: tuple = None


def forward(params: dict, cfg: ModelConfig, batch: SequenceBatch, images=(), routing=None) -> ForwardResult:
    """Logits for the merged sequence; ``routing`` optionally freezes expert choices per layer."""
    images = list(images)
    layouts = [v.layout for v in images]
    vis = [_visual_forward(params, cfg, v) for v in images]
    h = merge_embeddings(batch, params["lm.embed"], [v[0] for v in vis], layouts)
    acfg, mcfg, eps = cfg.attn_config, cfg.moe_config, cfg.rms_eps
    layer_ctx, loads, sels = [], [], []
    aux_total = 0.0
    for i in range(cfg.n_layers):
        pre = f"lm.layers.{i}."
        a_in = rms_norm(h, params[pre + "attn_norm"], eps)
        a_out, a_ctx = attention_train_forward(sub(params, pre + "attn."), acfg, a_in)
        h1 = h + a_out
        m_in = rms_norm(h1, params[pre + "moe_norm"], eps)
        frozen = None if routing is None else routing[i]
        m_out, aux, m_ctx = moe_layer_forward(
            sub(params, pre + "moe."), mcfg, m_in, params[pre + BUFFER_SUFFIX], frozen
        )
        layer_ctx.append((h, a_in, a_ctx, h1, m_in, m_ctx))
        loads.append(m_ctx["load_counts"])
        sels.append(m_ctx["selected"])
        aux_total += aux
        h = h1 + m_out
    hn = rms_norm(h, params["lm.final_norm"], eps)
    logits = hn @ params["lm.head"].T
    ctx = (images, vis, layouts, layer_ctx, h, hn)
    return ForwardResult(logits, aux_total, loads, sels, ctx)


def backward(params: dict, cfg: ModelConfig, batch: SequenceBatch, res: ForwardResult, dlogits: Tensor) -> dict:
    images, vis, layouts, layer_ctx, h_last, hn = res.ctx
    eps = cfg.rms_eps
    grads = {k: np.zeros_like(v) for k, v in params.items() if not is_buffer(k)}
    grads["lm.head"] += dlogits.T @ hn
    dhn = dlogits @ params["lm.head"]
    dh, dg = rms_norm_backward(h_last, params["lm.final_norm"], eps, dhn)
    grads["lm.final_norm"] += dg
    acfg, mcfg = cfg.attn_config, cfg.moe_config
    for i in reversed(range(cfg.n_layers)):
        pre = f"lm.layers.{i}."
        h, a_in, a_ctx, h1, m_in, m_ctx = layer_ctx[i]
        dm_in, g = moe_layer_backward(sub(params, pre + "moe."), mcfg, m_ctx, dh)
        _acc(grads, pre + "moe.", g)
        dh1_n, dg = rms_norm_backward(h1, params[pre + "moe_norm"], eps, dm_in)
        grads[pre + "moe_norm"] += dg
        dh1 = dh + dh1_n
        da_in, g = attention_backward(sub(params, pre + "attn."), acfg, a_ctx, dh1)
        _acc(grads, pre + "attn.", g)
        dh_n, dg = rms_norm_backward(h, params[pre + "attn_norm"], eps, da_in)
        grads[pre + "attn_norm"] += dg
        dh = dh1 + dh_n
    text, img = _merge_index(batch, layouts)
    tmask = text >= 0
    np.add.at(grads["lm.embed"], text[tmask], dh[tmask])
    for k, v in enumerate(images):
        _visual_backward(params, cfg, v, vis[k][1], dh[img == k], grads)
    return grads


def loss_and_grads(params: dict, cfg: ModelConfig, batch: SequenceBatch, images=(), routing=None):
    """Total loss (masked next-token + aux balance) with gradients for every trainable parameter."""
    res = forward(params, cfg, batch, images, routing)
    loss = next_token_loss(res.logits, batch.labels, batch.loss_mask) + res.aux_loss
    dlogits = next_token_loss_backward(res.logits, batch.labels, batch.loss_mask)
    return loss, backward(params, cfg, batch, res, dlogits), res


# ---------------------------------------------------------------------------
# training


def bias_step_for_stage(cfg: ModelConfig, stage: int) -> float:
    """Bias correction runs only during stage 2 (pre-training), and only when enabled."""
    if not cfg.bias_correction:
        return 0.0
    return cfg.bias_step if stage == 2 else 0.0


def sgd_update(params: dict, grads: dict, lr: float, trainable=None, lr_scale=None) -> dict:
    """Plain SGD ``w - lr * scale(name) * grad`` on names accepted by ``trainable``."""
    out = dict(params)
    for name, g in grads.items():
        if trainable is not None and not trainable(name):
            continue
        scale = 1.0 if lr_scale is None else lr_scale(name)
        out[name] = params[name] - (lr * scale) * g
    return out


def train_step(params: dict, cfg: ModelConfig, batch: SequenceBatch, images, stage: int, lr: float):
    """One SGD step; returns (new params, loss).

    Stage 1 trains the vision encoder and adaptor with the language model
    frozen; stages 2 and 3 train everything.
    """
    if stage not in (1, 2, 3):
        raise ContractError(f"stage must be 1, 2 or 3, got {stage}")
    loss, grads, res = loss_and_grads(params, cfg, batch, images)
    trainable = (lambda n: not is_language_param(n)) if stage == 1 else None

    def lr_scale(name):
        return cfg.vision_lr_mult if name.startswith("vision.") else 1.0

    new = sgd_update(params, grads, lr, trainable, lr_scale)
    step = bias_step_for_stage(cfg, stage)
    if step > 0:
        for i, load in enumerate(res.load_counts):
            key = f"lm.layers.{i}.{BUFFER_SUFFIX}"
            new[key] = update_bias(params[key], load, step)
    return new, loss
