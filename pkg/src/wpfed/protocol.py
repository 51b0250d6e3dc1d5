"""Round orchestration: neighbour selection, distillation exchange, filtering,
model update and announcement publication.

A round ``t`` is bulk-synchronous with three barriers:

1. every client reveals the ranking it committed to in round ``t-1``;
2. every client reads round ``t-1`` announcements and reveals, selects its
   neighbours and queries them (responders answer with their parameters as
   of the start of the round), then updates its own model;
3. every client publishes its round ``t`` announcement.

Only four message types ever cross the simulated network; see
:data:`WIRE_MESSAGE_TYPES`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import announce
from .announce import Announcement, Board, Reveal
from .data import ClientData
from .errors import InvalidInputError
from .lsh import LshBasis, LshCode, encode, hamming
from .model import (LOG_FLOOR, ModelParams, Prediction, accuracy, combined_update, cross_entropy,
                    distill_loss, local_loss_and_grad, predict)
from .ranking import RankingList, build_ranking, default_top_k, ranking_scores
from .selection import SelectionConfig, compute_weights, first_round_neighbors, select_neighbors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    alpha: float = 0.6
    lr: float = 0.1
    local_steps: int = 5
    top_k: Optional[int] = None  # None -> ceil(N / 2)
    lsh_bits: int = 64
    salted_commitments: bool = True
    lsh_verification: bool = True
    hash_algorithm: str = announce.HASH_ALGORITHM

    @property
    def effective_top_k(self) -> int:
        return self.top_k if self.top_k is not None else default_top_k(self.selection.n_neighbors)


# --- wire messages -----------------------------------------------------------

@dataclass(frozen=True)
class ReferenceQuery:
    """Requester -> peer: reference features only, never labels."""
    requester_id: int
    round: int
    reference_features: np.ndarray


@dataclass(frozen=True)
class PeerResponse:
    """Peer -> requester: the peer's probabilities on the requester's reference features."""
    peer_id: int
    outputs: Prediction


WIRE_MESSAGE_TYPES = (ReferenceQuery, PeerResponse, Announcement, Reveal)


class Transport:
    """Simulated point-to-point network.

    ``unreachable`` peers never answer. With ``record=True`` every delivered
    message is kept in :attr:`messages` for auditing.
    """

    def __init__(self, unreachable=(), record: bool = False):
        self.unreachable = set(unreachable)
        self.record = record
        self.messages: list = []

    def _log(self, msg) -> None:
        if not isinstance(msg, WIRE_MESSAGE_TYPES):
            raise TypeError(f"{type(msg).__name__} is not a wire message type")
        if self.record:
            self.messages.append(msg)

    def request(self, query: ReferenceQuery, peer: "ClientState") -> Optional[PeerResponse]:
        if peer.id in self.unreachable:
            return None
        self._log(query)
        resp = peer.behavior.respond(peer, query)
        self._log(resp)
        return resp

    def broadcast(self, board: Board, record) -> None:
        self._log(record)
        board.publish(record)


# --- client ------------------------------------------------------------------

class Behavior:
    """Honest client behaviour. Adversaries override individual hooks."""

    malicious = False

    def start_round(self, state: "ClientState", round: int) -> "ClientState":
        return state

    def respond(self, state: "ClientState", query: ReferenceQuery) -> PeerResponse:
        return PeerResponse(state.id, predict(state.params, query.reference_features))

    def update(self, state: "ClientState", neighbor_mean: Optional[Prediction],
               config: ProtocolConfig, round: int) -> ModelParams:
        return combined_update(state, neighbor_mean, state.alpha, config.lr, config.local_steps,
                               round_id=round)

    def announced_code(self, state: "ClientState", board: Board, round: int, basis: LshBasis) -> LshCode:
        return encode(state.params, basis)


HONEST = Behavior()


@dataclass
class ClientState:
    id: int
    params: ModelParams
    data: ClientData
    rng: np.random.Generator
    alpha: float = 0.6
    neighbors: tuple[int, ...] = ()
    pending_reveal: Optional[tuple[RankingList, bytes]] = None
    code: Optional[LshCode] = None  # last code this client announced
    behavior: Behavior = HONEST


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    client_id: int
    test_accuracy: float
    local_loss: float
    ref_loss: float
    neighbor_ids: tuple[int, ...]
    excluded_ids: tuple[int, ...]
    verify_failures: tuple[int, ...]

    CSV_HEADER = ("round", "client_id", "test_accuracy", "local_loss", "ref_loss",
                  "neighbor_ids", "excluded_ids", "verify_failures")

    def csv_fields(self) -> list[str]:
        def ids(xs):
            return ";".join(str(x) for x in xs)
        return [str(self.round), str(self.client_id), repr(self.test_accuracy), repr(self.local_loss),
                repr(self.ref_loss), ids(self.neighbor_ids), ids(self.excluded_ids),
                ids(self.verify_failures)]


def exchange(requester: ClientState, responders: Sequence[ClientState], round: int = 0,
             transport: Optional[Transport] = None) -> list[PeerResponse]:
    """Send the requester's reference features to each responder and collect answers.

    Unreachable responders are skipped.
    """
    transport = transport or Transport()
    query = ReferenceQuery(requester.id, round, requester.data.reference.features)
    out = []
    n_ref = len(requester.data.reference)
    for peer in responders:
        resp = transport.request(query, peer)
        if resp is None:
            continue
        if resp.outputs.shape[0] != n_ref:
            raise InvalidInputError(f"peer {resp.peer_id} answered {resp.outputs.shape[0]} rows, expected {n_ref}")
        out.append(resp)
    return out


def evaluate_peers(state: ClientState, responses: Sequence[PeerResponse]) -> dict[int, float]:
    """Cross-entropy of each peer's outputs against the requester's private reference labels."""
    labels = state.data.reference.labels
    return {r.peer_id: cross_entropy(r.outputs, labels) for r in responses}


def mean_kl(p: Prediction, q: Prediction) -> float:
    """Row-averaged KL(p || q) with both sides floored at 1e-12."""
    p = np.maximum(p, LOG_FLOOR)
    q = np.maximum(q, LOG_FLOOR)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=1)))


def lsh_filter(state: ClientState, responses: Sequence[PeerResponse]):
    """Drop the ``floor(m/2)`` responses least similar to the client's own outputs.

    Returns ``(valid_responses, excluded_peer_ids)``. Similarity is the mean
    KL(own || peer) on the reference features; ties favour the smaller peer id.
    """
    if not responses:
        return [], ()
    own = predict(state.params, state.data.reference.features)
    kl = {r.peer_id: mean_kl(own, r.outputs) for r in responses}
    order = sorted(responses, key=lambda r: (kl[r.peer_id], r.peer_id))
    keep = len(order) - len(order) // 2
    excluded = tuple(sorted(r.peer_id for r in order[keep:]))
    return order[:keep], excluded


def neighbor_mean(responses: Sequence[PeerResponse]) -> Optional[Prediction]:
    if not responses:
        return None
    return np.mean([r.outputs for r in responses], axis=0)


def reveal_phase(state: ClientState, board: Board, round: int,
                 transport: Optional[Transport] = None) -> ClientState:
    """Publish the ranking committed to in the previous round."""
    if state.pending_reveal is None:
        return state
    ranking, salt = state.pending_reveal
    (transport or Transport()).broadcast(board, Reveal(state.id, ranking.round, ranking, salt))
    return replace(state, pending_reveal=None)


def verified_rankings(board: Board, round: int, algorithm: str = announce.HASH_ALGORITHM):
    """Rankings of ``round`` whose reveals match their commitments, plus ids that failed."""
    anns = board.announcements(round)
    revs = board.reveals(round)
    good, failed = [], []
    for cid in sorted(revs):
        ann = anns.get(cid)
        if ann is not None and announce.verify_reveal(ann, revs[cid], algorithm):
            good.append(revs[cid].ranking)
        else:
            failed.append(cid)
    return good, tuple(failed)


def choose_neighbors(state: ClientState, board: Board, round: int, all_ids: Sequence[int],
                     config: ProtocolConfig):
    """Neighbour set for ``round`` plus the ids whose reveals failed verification."""
    n = config.selection.n_neighbors
    if round == 1:
        return first_round_neighbors(state.id, all_ids, n, state.rng), ()
    rankings, failures = verified_rankings(board, round - 1, config.hash_algorithm)
    anns = board.announcements(round - 1)
    own_code = state.code
    if own_code is None:
        raise InvalidInputError(f"client {state.id} has no announced code before round {round}")
    distances = {j: hamming(own_code, a.lsh_code) for j, a in anns.items() if j != state.id}
    scores = ranking_scores(rankings, config.effective_top_k, distances.keys(), round=round)
    row = compute_weights(state.id, scores, distances, config.selection, rng=state.rng)
    chosen = select_neighbors(row, n)
    return chosen, failures


def run_round(state: ClientState, board: Board, round: int, peers: Mapping[int, ClientState],
              config: ProtocolConfig, basis: LshBasis,
              transport: Optional[Transport] = None) -> tuple[ClientState, RoundMetrics]:
    """One protocol iteration for a single client.

    ``peers`` is the start-of-round snapshot of every client (used only to
    answer queries). The round ``t`` announcement is staged on ``board`` and
    becomes visible at the next barrier.
    """
    transport = transport or Transport()
    neighbors, failures = choose_neighbors(state, board, round, sorted(peers), config)

    responses = exchange(state, [peers[j] for j in neighbors], round, transport)
    losses = evaluate_peers(state, responses)
    if config.lsh_verification:
        valid, excluded = lsh_filter(state, responses)
    else:
        valid, excluded = list(responses), ()
    target = neighbor_mean(valid)

    new_params = state.behavior.update(state, target, config, round)
    state = replace(state, params=new_params, neighbors=tuple(neighbors))

    ranking = build_ranking(state.id, losses, round)
    salt = state.rng.bytes(announce.SALT_BYTES) if config.salted_commitments else b""
    code = state.behavior.announced_code(state, board, round, basis)
    commitment = announce.commit(ranking, salt, config.hash_algorithm)
    transport.broadcast(board, Announcement(state.id, round, code, commitment))
    state = replace(state, pending_reveal=(ranking, salt), code=code)

    loc_loss, _ = local_loss_and_grad(new_params, state.data.local_train)
    ref = math.nan
    if target is not None:
        ref = distill_loss(predict(new_params, state.data.reference.features), target)
    metrics = RoundMetrics(round, state.id, accuracy(new_params, state.data.local_test), loc_loss, ref,
                           tuple(neighbors), excluded, failures)
    return state, metrics


class Network:
    """All clients plus the shared board, advanced one synchronous round at a time."""

    def __init__(self, clients: Sequence[ClientState], config: ProtocolConfig, basis: LshBasis,
                 board: Optional[Board] = None, transport: Optional[Transport] = None):
        ids = [c.id for c in clients]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("client ids must be unique")
        config.selection.validate(len(clients))
        self.clients = {c.id: c for c in clients}
        self.config = config
        self.basis = basis
        self.board = board or Board(config.hash_algorithm)
        self.transport = transport or Transport()
        self.round = 0

    def step(self) -> list[RoundMetrics]:
        t = self.round + 1
        self.board.open_round(t)
        ids = sorted(self.clients)
        for i in ids:
            c = reveal_phase(self.clients[i], self.board, t, self.transport)
            self.clients[i] = c.behavior.start_round(c, t)
        self.board.barrier()

        snapshot = dict(self.clients)
        updated, metrics = {}, []
        for i in ids:
            updated[i], m = run_round(snapshot[i], self.board, t, snapshot, self.config, self.basis,
                                      self.transport)
            metrics.append(m)
        self.board.barrier()
        self.clients = updated
        self.round = t
        return metrics

    def run(self, rounds: int) -> list[RoundMetrics]:
        out = []
        for _ in range(rounds):
            out.extend(self.step())
        return out
