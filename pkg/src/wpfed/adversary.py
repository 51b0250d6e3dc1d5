"""Malicious client behaviours: LSH-code forgery and periodic-reinitialisation poisoning.

Adversaries speak the wire protocol faithfully; only message *content*
differs from an honest client.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .announce import Board
from .data import ClientData
from .errors import ConfigError
from .lsh import LshBasis, LshCode, encode
from .model import Dataset, ModelParams, Prediction, combined_update
from .protocol import Behavior, ClientState, ProtocolConfig

KINDS = ("lsh_cheat", "poison")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "poison"
    start_round: int = 50
    malicious_fraction: float = 0.2
    target_id: int = 0
    reinit_period: int = 3
    lsh_verification_enabled: bool = True

    def validate(self, num_clients: Optional[int] = None) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.start_round < 1:
            raise ConfigError("start_round must be >= 1")
        if not 0.0 <= self.malicious_fraction <= 1.0:
            raise ConfigError("malicious_fraction must lie in [0, 1]")
        if self.reinit_period < 1:
            raise ConfigError("reinit_period must be >= 1")
        if num_clients is not None and self.kind == "lsh_cheat" and not 0 <= self.target_id < num_clients:
            raise ConfigError(f"target_id {self.target_id} is not a client")


def derangement(num_classes: int) -> np.ndarray:
    """Cyclic label shift: class ``c`` becomes ``c + 1 mod C``; no fixed points."""
    return (np.arange(num_classes) + 1) % num_classes


def _relabel(ds: Dataset, perm: np.ndarray) -> Dataset:
    return Dataset(ds.features, perm[ds.labels])


def permute_labels(data: ClientData, perm: np.ndarray) -> ClientData:
    return replace(data, local_train=_relabel(data.local_train, perm),
                   local_test=_relabel(data.local_test, perm),
                   reference=_relabel(data.reference, perm))


class LshCheater(Behavior):
    """Forges the target's LSH code from ``start_round`` on and serves a
    label-permuted model.

    At ``start_round`` the attacker swaps in a model whose classes are
    cyclically shifted (exactly the model it would have learned from shifted
    labels) and keeps training on shifted local and reference labels, so its
    own rankings favour fellow attackers.
    """

    malicious = True

    def __init__(self, target_id: int, start_round: int, num_classes: int):
        self.target_id = target_id
        self.start = start_round
        self.perm = derangement(num_classes)

    def start_round(self, state: ClientState, round: int) -> ClientState:
        if round != self.start:
            return state
        return replace(state, params=state.params.permute_classes(self.perm),
                       data=permute_labels(state.data, self.perm))

    def announced_code(self, state: ClientState, board: Board, round: int, basis: LshBasis) -> LshCode:
        return lsh_cheat_announce(state, board, round, basis, self.target_id, self.start)


def lsh_cheat_announce(state: ClientState, board: Board, round: int, basis: LshBasis,
                       target_id: int, start_round: int) -> LshCode:
    """Code an LSH cheater publishes: a copy of the target's latest visible code
    once the attack is live, otherwise its honest code."""
    if round >= start_round:
        latest = board.announcements(round - 1).get(target_id)
        if latest is not None:
            return latest.lsh_code
    return encode(state.params, basis)


def is_reinit_round(round: int, start_round: int, reinit_period: int) -> bool:
    return round >= start_round and (round - start_round) % reinit_period == 0


def poison_step(state: ClientState, round: int, reinit_period: int, rng: np.random.Generator,
                start_round: int, neighbor_mean: Optional[Prediction] = None,
                config: Optional[ProtocolConfig] = None) -> ModelParams:
    """Post-round parameters of a poisoning client.

    Every ``reinit_period`` rounds from ``start_round`` the parameters are
    redrawn from the initialisation distribution; in other rounds the client
    trains like an honest one (which needs ``config``).
    """
    if is_reinit_round(round, start_round, reinit_period):
        return ModelParams.initial(state.params.num_classes, state.params.num_features, rng)
    config = config or ProtocolConfig()
    return combined_update(state, neighbor_mean, state.alpha, config.lr, config.local_steps, round_id=round)


class Poisoner(Behavior):
    """Honest in every respect except periodic parameter reinitialisation."""

    malicious = True

    def __init__(self, start_round: int, reinit_period: int):
        self.start = start_round
        self.reinit_period = reinit_period

    def update(self, state: ClientState, neighbor_mean: Optional[Prediction],
               config: ProtocolConfig, round: int) -> ModelParams:
        return poison_step(state, round, self.reinit_period, state.rng, self.start,
                           neighbor_mean, config)


def attacker_count(attack: AttackConfig, num_clients: int, n_neighbors: int) -> int:
    """Number of malicious clients.

    Poisoners are a fraction of the whole network. LSH cheaters are a fraction
    of the target's neighbour slots: with half the slots they can at most fill
    the half of the neighbour set that the KL filter discards.
    """
    if attack.kind == "poison":
        return int(math.floor(attack.malicious_fraction * num_clients + 1e-9))
    return min(int(math.floor(attack.malicious_fraction * n_neighbors + 1e-9)), num_clients - 1)


def choose_attackers(attack: AttackConfig, num_clients: int, n_neighbors: int,
                     rng: np.random.Generator) -> tuple[int, ...]:
    k = attacker_count(attack, num_clients, n_neighbors)
    pool = [c for c in range(num_clients) if not (attack.kind == "lsh_cheat" and c == attack.target_id)]
    picked = rng.choice(len(pool), size=k, replace=False) if k else []
    return tuple(sorted(pool[i] for i in picked))


def equip(clients: Sequence[ClientState], attack: AttackConfig, attackers: Sequence[int]) -> list[ClientState]:
    """Give the chosen clients their malicious behaviour."""
    out = []
    for c in clients:
        if c.id in attackers:
            if attack.kind == "lsh_cheat":
                beh = LshCheater(attack.target_id, attack.start_round, c.params.num_classes)
            else:
                beh = Poisoner(attack.start_round, attack.reinit_period)
            c = replace(c, behavior=beh)
        out.append(c)
    return out
