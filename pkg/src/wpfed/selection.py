"""Communication weights and personalised top-N neighbour selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ConfigError, InvalidInputError
from .ranking import RankingScoreTable

log = logging.getLogger(__name__)

MODES = ("full", "no_lsh", "no_rank", "random")


@dataclass(frozen=True)
class SelectionConfig:
    n_neighbors: int = 4
    gamma: float = 1.0
    mode: str = "full"

    def validate(self, num_clients: Optional[int] = None) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown selection mode {self.mode!r}; expected one of {MODES}")
        if self.n_neighbors < 1:
            raise ConfigError("n_neighbors must be >= 1")
        if num_clients is not None and self.n_neighbors >= num_clients:
            raise ConfigError(f"n_neighbors={self.n_neighbors} needs more than {num_clients} clients")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be finite and >= 0")


@dataclass(frozen=True)
class WeightRow:
    owner: int
    weights: dict[int, float]


def compute_weights(owner: int, scores: RankingScoreTable, distances: Mapping[int, int],
                    config: SelectionConfig, rng: Optional[np.random.Generator] = None) -> WeightRow:
    """Weight every candidate peer in ``distances`` (the owner is skipped).

    ``full`` uses ``s_j * exp(-gamma * d_ij)``; ``no_lsh`` keeps only the score,
    ``no_rank`` only the similarity term, and ``random`` draws uniform positive
    weights from ``rng``.
    """
    peers = sorted(p for p in distances if p != owner)
    if config.mode == "random":
        if rng is None:
            raise InvalidInputError("random mode needs a generator")
        draws = 1.0 - rng.random(len(peers))  # (0, 1]
        return WeightRow(owner, {p: float(w) for p, w in zip(peers, draws)})
    weights = {}
    for p in peers:
        s = scores.scores[p]
        d = distances[p]
        if config.mode == "no_lsh":
            w = s
        elif config.mode == "no_rank":
            w = math.exp(-config.gamma * d)
        else:
            w = s * math.exp(-config.gamma * d)
        weights[p] = w
    return WeightRow(owner, weights)


def select_neighbors(row: WeightRow, n: int) -> tuple[int, ...]:
    """Ids of the ``n`` heaviest peers, heaviest first; ties go to the smaller id.

    With fewer than ``n`` candidates every candidate is returned; callers detect
    the shortfall from the length.
    """
    ranked = sorted(row.weights, key=lambda p: (-row.weights[p], p))
    if len(ranked) < n:
        log.warning("client %d has %d candidates for %d neighbour slots", row.owner, len(ranked), n)
    return tuple(ranked[:n])


def first_round_neighbors(owner: int, all_peers: Iterable[int], n: int,
                          rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform sample without replacement, used before any announcement exists."""
    peers = sorted(p for p in all_peers if p != owner)
    if n >= len(peers):
        return tuple(peers)
    picked = rng.choice(len(peers), size=n, replace=False)
    return tuple(sorted(peers[i] for i in picked))
