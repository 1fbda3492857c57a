"""Training-infrastructure balancing, simulated.

* ``balance_tiles``: spread per-sample image-tile counts over data-parallel
  ranks with the Longest-Processing-Time greedy rule.
* ``split_pipeline_stages``: cut a layer cost list into contiguous pipeline
  stages minimising the most expensive stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .numcore import ContractError
from .tiling import MAX_TILES, candidate_resolutions, select_resolution


@dataclass(frozen=True)
class RankAssignment:
    assignments: tuple  # rank -> tuple of sample indices
    loads: tuple  # rank -> total tiles

    @property
    def max_load(self) -> int:
        return max(self.loads)


@dataclass(frozen=True)
class StagePartition:
    boundaries: tuple  # layer count before each cut, strictly increasing
    stage_costs: tuple

    @property
    def max_cost(self) -> float:
        return max(self.stage_costs)

    def stages(self, n_layers: int) -> list[range]:
        edges = (0,) + self.boundaries + (n_layers,)
        return [range(a, b) for a, b in zip(edges, edges[1:])]


def balance_tiles(tile_counts, ranks: int) -> RankAssignment:
    if ranks < 1:
        raise ContractError("ranks must be >= 1")
    counts = list(tile_counts)
    if not counts or any(c < 1 for c in counts):
        raise ContractError("tile counts must be a non-empty list of positive ints")
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    loads = [0] * ranks
    buckets: list[list[int]] = [[] for _ in range(ranks)]
    for i in order:
        r = min(range(ranks), key=lambda k: (loads[k], k))
        loads[r] += counts[i]
        buckets[r].append(i)
    return RankAssignment(tuple(tuple(b) for b in buckets), tuple(loads))


def stage_cost(costs, start: int, stop: int) -> float:
    return math.fsum(costs[start:stop])


def split_pipeline_stages(layer_costs, stages: int) -> StagePartition:
    """Exact min-max contiguous partition; among optima the earliest cuts win."""
    costs = tuple(float(c) for c in layer_costs)
    n = len(costs)
    if stages < 1 or stages > n:
        raise ContractError(f"need 1 <= stages <= layers ({n}), got {stages}")
    if any(c <= 0 for c in costs):
        raise ContractError("layer costs must be positive")

    @lru_cache(maxsize=None)
    def best(start: int, k: int) -> float:
        # min over partitions of costs[start:] into k stages of the largest stage
        if k == 1:
            return stage_cost(costs, start, n)
        return min(
            max(stage_cost(costs, start, cut), best(cut, k - 1))
            for cut in range(start + 1, n - k + 2)
        )

    target = best(0, stages)
    cuts = []
    start = 0
    for k in range(stages, 1, -1):
        for cut in range(start + 1, n - k + 2):
            if stage_cost(costs, start, cut) <= target and best(cut, k - 1) <= target:
                cuts.append(cut)
                start = cut
                break
    edges = [0] + cuts + [n]
    stage_costs = tuple(stage_cost(costs, a, b) for a, b in zip(edges, edges[1:]))
    return StagePartition(tuple(cuts), stage_costs)


def tile_counts_for_images(sizes, max_tiles: int = MAX_TILES) -> list[int]:
    """Tiles per image (local grid plus thumbnail) for a batch of (height, width) sizes."""
    cands = candidate_resolutions(max_tiles=max_tiles)
    return [select_resolution(h, w, cands).tile_count for h, w in sizes]
