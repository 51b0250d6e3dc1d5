"""Per-client peer rankings and the network-wide top-K ranking score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InvalidInputError, ProtocolError

DEFAULT_SCORE = 0.5


@dataclass(frozen=True)
class RankingList:
    owner: int
    round: int
    ranked_peers: tuple[int, ...]  # best (lowest loss) first

    def __post_init__(self):
        if len(set(self.ranked_peers)) != len(self.ranked_peers):
            raise InvalidInputError("ranking contains duplicate peers")
        if self.owner in self.ranked_peers:
            raise InvalidInputError("a client cannot rank itself")


@dataclass(frozen=True)
class RankingScoreTable:
    scores: dict[int, float]
    round: int
    top_k: int

    def __getitem__(self, peer: int) -> float:
        return self.scores[peer]


def default_top_k(n_neighbors: int) -> int:
    return math.ceil(n_neighbors / 2)


def build_ranking(owner: int, losses: Mapping[int, float], round: int) -> RankingList:
    """Order peers by ascending loss, smaller id first on ties."""
    for peer, loss in losses.items():
        if math.isnan(loss):
            raise ProtocolError(f"loss for peer {peer} is NaN")
    ordered = sorted(losses, key=lambda p: (losses[p], p))
    return RankingList(owner, round, tuple(ordered))


def ranking_scores(rankings: Iterable[RankingList], top_k: int, all_peers: Iterable[int],
                   round: int = 0, default: float = DEFAULT_SCORE) -> RankingScoreTable:
    """Fraction of rankings containing a peer that place it in their first ``top_k``.

    Callers pass only rankings whose reveal verified. Peers absent from every
    ranking receive ``default``.
    """
    if top_k < 1:
        raise InvalidInputError("top_k must be >= 1")
    hits: dict[int, int] = {}
    seen: dict[int, int] = {}
    for r in rankings:
        for pos, peer in enumerate(r.ranked_peers):
            seen[peer] = seen.get(peer, 0) + 1
            if pos < top_k:
                hits[peer] = hits.get(peer, 0) + 1
    scores = {p: (hits.get(p, 0) / seen[p] if seen.get(p) else default) for p in all_peers}
    return RankingScoreTable(scores, round, top_k)
