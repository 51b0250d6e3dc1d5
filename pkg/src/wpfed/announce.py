"""Commit-and-reveal for rankings and the append-only announcement board.

Commitments hash a canonical byte layout::

    round (uint32 BE) || peer_1 .. peer_n (uint32 BE, rank order) || salt

with SHA-256 by default. The board is an in-process ordered log: records
published during a phase are staged and become visible, in a canonical
order, at the next :meth:`Board.barrier`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .errors import BoardRejection, InvalidInputError
from .lsh import LshCode
from .ranking import RankingList

HASH_ALGORITHM = "sha256"
SALT_BYTES = 16
DIGEST_BYTES = 32


def serialize_ranking(ranking: RankingList, salt: bytes = b"") -> bytes:
    peers = ranking.ranked_peers
    return struct.pack(f">I{len(peers)}I", ranking.round, *peers) + bytes(salt)


def commit(ranking: RankingList, salt: bytes = b"", algorithm: str = HASH_ALGORITHM) -> bytes:
    h = hashlib.new(algorithm, serialize_ranking(ranking, salt))
    digest = h.digest()
    if len(digest) != DIGEST_BYTES:
        raise InvalidInputError(f"{algorithm} does not produce a 256-bit digest")
    return digest


@dataclass(frozen=True)
class Announcement:
    client_id: int
    round: int
    lsh_code: LshCode
    commitment: bytes

    kind = "announce"

    def payload(self) -> bytes:
        return struct.pack(">H", self.lsh_code.nbits) + self.lsh_code.to_bytes() + self.commitment


@dataclass(frozen=True)
class Reveal:
    client_id: int
    round: int  # round of the ranking, not of publication
    ranking: RankingList
    salt: bytes

    kind = "reveal"

    def payload(self) -> bytes:
        peers = self.ranking.ranked_peers
        return (struct.pack(">B", len(self.salt)) + self.salt
                + struct.pack(f">H{len(peers)}I", len(peers), *peers))


Record = Union[Announcement, Reveal]


def verify_reveal(announcement: Announcement, reveal: Reveal, algorithm: str = HASH_ALGORITHM) -> bool:
    if announcement.client_id != reveal.client_id or announcement.round != reveal.round:
        raise InvalidInputError(
            f"reveal ({reveal.client_id}, {reveal.round}) does not belong to "
            f"announcement ({announcement.client_id}, {announcement.round})"
        )
    if reveal.ranking.round != reveal.round or reveal.ranking.owner != reveal.client_id:
        return False
    return commit(reveal.ranking, reveal.salt, algorithm) == announcement.commitment


_KIND_ORDER = {"reveal": 0, "announce": 1}


class Board:
    """Append-only, totally ordered log with round barriers."""

    def __init__(self, algorithm: str = HASH_ALGORITHM):
        self.algorithm = algorithm
        self.current_round = 0
        self._log: list[Record] = []
        self._pending: list[Record] = []
        self._keys: set[tuple[int, int, str]] = set()

    def open_round(self, round: int) -> None:
        if round <= self.current_round:
            raise BoardRejection(f"round {round} is not after round {self.current_round}")
        self.barrier()
        self.current_round = round

    def publish(self, record: Record) -> None:
        key = (record.client_id, record.round, record.kind)
        if key in self._keys:
            raise BoardRejection(f"duplicate {record.kind} for client {record.client_id} round {record.round}")
        if isinstance(record, Announcement) and record.round != self.current_round:
            raise BoardRejection(f"announcement for round {record.round} outside its publishing phase")
        if isinstance(record, Reveal) and self.current_round < record.round + 1:
            raise BoardRejection(f"reveal for round {record.round} published before round {record.round + 1}")
        self._keys.add(key)
        self._pending.append(record)

    def barrier(self) -> None:
        """Make staged records visible; their order is independent of publish order."""
        self._pending.sort(key=lambda r: (_KIND_ORDER[r.kind], r.round, r.client_id))
        self._log.extend(self._pending)
        self._pending.clear()

    def __iter__(self) -> Iterator[Record]:
        return iter(list(self._log))

    def __len__(self) -> int:
        return len(self._log)

    def fetch_round(self, round: int) -> list[Record]:
        return [r for r in self._log if r.round == round]

    def announcements(self, round: int) -> dict[int, Announcement]:
        return {r.client_id: r for r in self._log if r.round == round and isinstance(r, Announcement)}

    def reveals(self, round: int) -> dict[int, Reveal]:
        return {r.client_id: r for r in self._log if r.round == round and isinstance(r, Reveal)}

    def dump_lines(self) -> list[str]:
        return [f"{r.round}|{r.client_id}|{r.kind}|{r.payload().hex()}" for r in self._log]

    def dump(self) -> str:
        return "".join(line + "\n" for line in self.dump_lines())


def parse_dump(lines: Iterable[str]) -> list[Record]:
    """Inverse of :meth:`Board.dump_lines`."""
    records: list[Record] = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rnd, cid, kind, hexpayload = line.split("|")
            rnd, cid, raw = int(rnd), int(cid), bytes.fromhex(hexpayload)
            if kind == "announce":
                (nbits,) = struct.unpack_from(">H", raw)
                nbytes = (nbits + 7) // 8
                code = LshCode(int.from_bytes(raw[2:2 + nbytes], "big"), nbits)
                commitment = raw[2 + nbytes:]
                if len(commitment) != DIGEST_BYTES:
                    raise ValueError("bad commitment length")
                records.append(Announcement(cid, rnd, code, commitment))
            elif kind == "reveal":
                salt_len = raw[0]
                salt = raw[1:1 + salt_len]
                (n,) = struct.unpack_from(">H", raw, 1 + salt_len)
                peers = struct.unpack_from(f">{n}I", raw, 3 + salt_len)
                if len(raw) != 3 + salt_len + 4 * n:
                    raise ValueError("trailing bytes")
                records.append(Reveal(cid, rnd, RankingList(cid, rnd, tuple(peers)), salt))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, struct.error, IndexError) as exc:
            raise InvalidInputError(f"board dump line {lineno}: {exc}") from exc
    return records


@dataclass(frozen=True)
class DumpCheck:
    verified: int
    failed: list[tuple[int, int]]  # (client, round) whose reveal does not match
    unrevealed: list[tuple[int, int]]  # announcements with no reveal in the dump
    orphan_reveals: list[tuple[int, int]]

    @property
    def ok(self) -> bool:
        return not self.failed and not self.orphan_reveals


def verify_dump(lines: Iterable[str], algorithm: str = HASH_ALGORITHM) -> DumpCheck:
    """Re-check every commitment/reveal pair of a board dump."""
    anns: dict[tuple[int, int], Announcement] = {}
    revs: dict[tuple[int, int], Reveal] = {}
    for rec in parse_dump(lines):
        (anns if isinstance(rec, Announcement) else revs)[(rec.client_id, rec.round)] = rec
    verified, failed, orphans = 0, [], []
    for key, rev in sorted(revs.items()):
        ann = anns.get(key)
        if ann is None:
            orphans.append(key)
        elif verify_reveal(ann, rev, algorithm):
            verified += 1
        else:
            failed.append(key)
    unrevealed = sorted(k for k in anns if k not in revs)
    return DumpCheck(verified, failed, unrevealed, orphans)
