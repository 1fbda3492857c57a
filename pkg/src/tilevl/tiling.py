"""Dynamic tiling: candidate grids, padding-minimising grid choice, tile slicing.

A grid ``(m, n)`` has ``m`` tile rows and ``n`` tile columns, so its canvas is
``m * base`` pixels high and ``n * base`` pixels wide.
"""

from __future__ import annotations

from dataclasses import dataclass

from .imaging import PAD_FILL, Image, pad_to, resize_bilinear
from .numcore import ContractError

BASE_TILE = 384
MAX_TILES = 9
# evaluation-time setting for very large / extreme-aspect inputs
MAX_TILES_ENLARGED = 18


@dataclass(frozen=True, order=True)
class ResolutionCandidate:
    m: int
    n: int
    base: int = BASE_TILE

    @property
    def height(self) -> int:
        return self.m * self.base

    @property
    def width(self) -> int:
        return self.n * self.base

    @property
    def tiles(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class TilingPlan:
    candidate: ResolutionCandidate
    scale: float
    resized_h: int
    resized_w: int
    padding_area: int

    @property
    def m(self) -> int:
        return self.candidate.m

    @property
    def n(self) -> int:
        return self.candidate.n

    @property
    def tile_count(self) -> int:
        # local tiles plus the global thumbnail
        return 1 + self.candidate.tiles


def candidate_resolutions(base: int = BASE_TILE, max_tiles: int = MAX_TILES) -> list[ResolutionCandidate]:
    """All grids with ``m * n <= max_tiles``, sorted by (m, n)."""
    if max_tiles < 1:
        raise ContractError("max_tiles must be >= 1")
    return [
        ResolutionCandidate(m, n, base)
        for m in range(1, max_tiles + 1)
        for n in range(1, max_tiles // m + 1)
    ]


def fit_to_candidate(h: int, w: int, cand: ResolutionCandidate) -> TilingPlan:
    """Uniformly scale (h, w) to the largest size that fits ``cand``."""
    if h < 1 or w < 1:
        raise ContractError(f"image dims must be positive, got {h}x{w}")
    H, W = cand.height, cand.width
    # integer arithmetic keeps the rounding exact: round(a / b) = (2a + b) // 2b for a, b > 0
    if H * w <= W * h:
        scale = H / h
        rh = H
        rw = min((2 * H * w + h) // (2 * h), W)
    else:
        scale = W / w
        rw = W
        rh = min((2 * W * h + w) // (2 * w), H)
    rh, rw = max(rh, 1), max(rw, 1)
    return TilingPlan(cand, scale, rh, rw, cand.height * cand.width - rh * rw)


def select_resolution(h: int, w: int, candidates=None) -> TilingPlan:
    """Pick the candidate with least padding; ties go to fewer tiles, then fewer rows."""
    if candidates is None:
        candidates = candidate_resolutions()
    candidates = list(candidates)
    if not candidates:
        raise ContractError("no candidate resolutions")
    plans = (fit_to_candidate(h, w, c) for c in candidates)
    return min(plans, key=lambda p: (p.padding_area, p.candidate.tiles, p.candidate.m))


def plan_for_image(img: Image, max_tiles: int = MAX_TILES, base: int = BASE_TILE) -> TilingPlan:
    return select_resolution(img.height, img.width, candidate_resolutions(base, max_tiles))


def build_canvas(img: Image, plan: TilingPlan, fill=PAD_FILL) -> Image:
    """Resize ``img`` per ``plan`` and pad it out to the candidate canvas."""
    resized = resize_bilinear(img, plan.resized_h, plan.resized_w)
    return pad_to(resized, plan.candidate.height, plan.candidate.width, fill)


def slice_tiles(canvas: Image, plan: TilingPlan) -> list[Image]:
    """Global thumbnail first, then the ``m x n`` local tiles in row-major order."""
    cand = plan.candidate
    if (canvas.height, canvas.width) != (cand.height, cand.width):
        raise ContractError(
            f"canvas {canvas.height}x{canvas.width} does not match "
            f"candidate {cand.height}x{cand.width}"
        )
    b = cand.base
    tiles = [resize_bilinear(canvas, b, b)]
    px = canvas.pixels
    for i in range(cand.m):
        for j in range(cand.n):
            tiles.append(Image(px[i * b : (i + 1) * b, j * b : (j + 1) * b]))
    return tiles


def tile_image(img: Image, max_tiles: int = MAX_TILES, base: int = BASE_TILE):
    """Full preprocessing: returns (plan, tiles)."""
    plan = plan_for_image(img, max_tiles, base)
    return plan, slice_tiles(build_canvas(img, plan), plan)
