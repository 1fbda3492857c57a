"""Vision-language adaptor: pixel shuffle, visual token layout, MLP projector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .numcore import (
    ContractError,
    ShapeError,
    Tensor,
    gelu,
    gelu_backward,
    init_normal,
    linear,
    linear_backward,
)

TOKENS_PER_SIDE = 14
TILING_IMAGE_LIMIT = 2


# ---------------------------------------------------------------------------
# pixel shuffle


def pixel_shuffle(features: Tensor, factor: int = 2) -> Tensor:
    """Space-to-depth on a (grid_h, grid_w, c) feature grid.

    The grid is zero-padded on the bottom/right to a multiple of ``factor``;
    output cell (i, j) concatenates the ``factor x factor`` input block in
    row-major order.
    """
    if factor < 1:
        raise ContractError("factor must be >= 1")
    gh, gw, c = features.shape
    oh, ow = -(-gh // factor), -(-gw // factor)
    padded = np.zeros((oh * factor, ow * factor, c), dtype=np.float64)
    padded[:gh, :gw] = features
    blocks = padded.reshape(oh, factor, ow, factor, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(oh, ow, factor * factor * c)


def pixel_shuffle_backward(dout: Tensor, in_shape, factor: int = 2) -> Tensor:
    gh, gw, c = in_shape
    oh, ow, _ = dout.shape
    blocks = dout.reshape(oh, ow, factor, factor, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(oh * factor, ow * factor, c)[:gh, :gw].copy()


# ---------------------------------------------------------------------------
# visual token layout


@dataclass(frozen=True)
class Patch:
    tile: int
    row: int
    col: int


@dataclass(frozen=True)
class TileNewline:
    pass


@dataclass(frozen=True)
class ViewSeparator:
    pass


NEWLINE = TileNewline()
SEPARATOR = ViewSeparator()
VisualToken = Union[Patch, TileNewline, ViewSeparator]


def visual_token_count(m: int, n: int, side: int = TOKENS_PER_SIDE, tiled: bool = True) -> int:
    thumb = side * (side + 1)
    if not tiled:
        return thumb
    return thumb + 1 + m * side * (n * side + 1)


@dataclass(frozen=True)
class VisualLayout:
    m: int
    n: int
    side: int
    tiled: bool
    tokens: tuple

    def __len__(self):
        return len(self.tokens)

    @property
    def n_tiles(self) -> int:
        return 1 + self.m * self.n if self.tiled else 1

    def dump(self) -> str:
        """One line per token: ``P t r c``, ``NL`` or ``SEP``."""
        lines = []
        for tok in self.tokens:
            if isinstance(tok, Patch):
                lines.append(f"P {tok.tile} {tok.row} {tok.col}")
            elif isinstance(tok, TileNewline):
                lines.append("NL")
            else:
                lines.append("SEP")
        return "\n".join(lines) + "\n"

    def gather_index(self) -> np.ndarray:
        """Flat index into stacked (tile, row, col) tokens; -1 newline, -2 separator."""
        s = self.side
        idx = np.empty(len(self.tokens), dtype=np.int64)
        for k, tok in enumerate(self.tokens):
            if isinstance(tok, Patch):
                idx[k] = (tok.tile * s + tok.row) * s + tok.col
            elif isinstance(tok, TileNewline):
                idx[k] = -1
            else:
                idx[k] = -2
        return idx


def layout_visual_tokens(
    m: int, n: int, images_in_context: int = 1, side: int = TOKENS_PER_SIDE
) -> VisualLayout:
    """Visual token order for one image tiled on an ``m x n`` grid.

    Tile 0 is the global thumbnail; local tile ``1 + i*n + j`` sits at grid
    row ``i``, column ``j``. With more than two images in context only the
    thumbnail block is emitted.
    """
    if m < 1 or n < 1:
        raise ContractError(f"grid must be at least 1x1, got {m}x{n}")
    tokens: list = []
    for r in range(side):
        tokens.extend(Patch(0, r, c) for c in range(side))
        tokens.append(NEWLINE)
    tiled = images_in_context <= TILING_IMAGE_LIMIT
    if tiled:
        tokens.append(SEPARATOR)
        for gr in range(m * side):
            ti, r = divmod(gr, side)
            for gc in range(n * side):
                tj, c = divmod(gc, side)
                tokens.append(Patch(1 + ti * n + tj, r, c))
            tokens.append(NEWLINE)
    return VisualLayout(m, n, side, tiled, tuple(tokens))


def assemble_visual_sequence(
    layout: VisualLayout, tile_tokens: Tensor, newline: Tensor, separator: Tensor
) -> Tensor:
    """Lay out per-tile tokens (tiles, side, side, d) into a (len(layout), d) sequence."""
    t, s1, s2, d = tile_tokens.shape
    if (s1, s2) != (layout.side, layout.side) or t != layout.n_tiles:
        raise ShapeError(
            f"tile tokens {tile_tokens.shape} do not fit layout "
            f"({layout.n_tiles} tiles of {layout.side}x{layout.side})"
        )
    flat = tile_tokens.reshape(-1, d)
    idx = layout.gather_index()
    out = np.empty((len(idx), d), dtype=np.float64)
    patch = idx >= 0
    out[patch] = flat[idx[patch]]
    out[idx == -1] = newline
    out[idx == -2] = separator
    return out


def assemble_visual_sequence_backward(layout: VisualLayout, dseq: Tensor, d: int):
    """Returns (dtile_tokens, dnewline, dseparator)."""
    s = layout.side
    idx = layout.gather_index()
    dflat = np.zeros((layout.n_tiles * s * s, d), dtype=np.float64)
    patch = idx >= 0
    np.add.at(dflat, idx[patch], dseq[patch])
    dnl = dseq[idx == -1].sum(axis=0)
    dsep = dseq[idx == -2].sum(axis=0)
    return dflat.reshape(layout.n_tiles, s, s, d), dnl, dsep


# ---------------------------------------------------------------------------
# two-layer GELU MLP (projector; also the expert FFN shape)


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> dict:
    return {
        "W1": init_normal(rng, (d_hidden, d_in)),
        "b1": np.zeros(d_hidden),
        "W2": init_normal(rng, (d_out, d_hidden)),
        "b2": np.zeros(d_out),
    }


def mlp_forward(params: dict, x: Tensor):
    w1, w2 = params["W1"], params["W2"]
    if x.shape[-1] != w1.shape[1] or w2.shape[1] != w1.shape[0]:
        raise ShapeError(
            f"MLP shapes do not chain: x {x.shape}, W1 {w1.shape}, W2 {w2.shape}"
        )
    pre = linear(x, w1, params["b1"])
    act = gelu(pre)
    y = linear(act, w2, params["b2"])
    return y, (x, pre, act)


def mlp_backward(params: dict, cache, dy: Tensor):
    x, pre, act = cache
    dact, dw2, db2 = linear_backward(act, params["W2"], dy)
    dpre = gelu_backward(pre, dact)
    dx, dw1, db1 = linear_backward(x, params["W1"], dpre)
    return dx, {"W1": dw1, "b1": db1, "W2": dw2, "b2": db2}


def project(tokens: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    """Map (t, c_in) visual tokens to (t, d_model)."""
    y, _ = mlp_forward({"W1": W1, "b1": b1, "W2": W2, "b2": b2}, np.asarray(tokens, dtype=np.float64))
    return y
