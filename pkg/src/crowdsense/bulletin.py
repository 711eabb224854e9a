"""Signed append-only bulletin board with dynamic lists."""
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .crypto_primitives import (
    DlogKeypair,
    DlogSignature,
    GroupParams,
    decode_blobs,
    digest,
    dlog_sign,
    dlog_verify,
    encode_blobs,
    encode_ints,
)
from .errors import BoardRejection, EncodingError

logger = logging.getLogger("app")


class PayloadKind(str, Enum):
    AUCTION_DETAILS = "auction_details"
    COMMITMENT = "commitment"
    PLATFORM_COMMITMENT = "platform_commitment"
    LIST_APPEND = "list_append"
    OUTCOME = "outcome"
    ORDERING_TOKEN = "ordering_token"
    KEY_RELEASE = "key_release"
    WITHDRAWAL = "withdrawal"


def entry_message(sequence_no: int, logical_time: int, kind: PayloadKind, subject: Optional[str], payload: bytes, list_id: Optional[str] = None) -> bytes:
    """Bytes covered by an entry signature"""
    return encode_blobs(
        encode_ints(sequence_no, logical_time),
        kind.value.encode(),
        (subject or "").encode(),
        (list_id or "").encode(),
        payload,
    )


@dataclass(frozen=True)
class BulletinEntry:
    sequence_no: int
    logical_time: int
    author: str
    kind: PayloadKind
    payload: bytes = field(repr=False)
    signature: DlogSignature = field(repr=False)
    subject: Optional[str] = None
    list_id: Optional[str] = None

    @property
    def digest(self) -> str:
        return digest(self.payload)

    def message(self) -> bytes:
        return entry_message(self.sequence_no, self.logical_time, self.kind, self.subject, self.payload, self.list_id)

    def dump_line(self) -> str:
        return f"{self.sequence_no} {self.logical_time} {self.author} {self.kind.value} {self.digest} {self.signature.hex()}"


@dataclass(frozen=True)
class DynamicList:
    list_id: str
    sequence_nos: tuple = ()

    def __len__(self) -> int:
        return len(self.sequence_nos)


def winner_list(user_id: str) -> str:
    return f"w:{user_id}"


def payment_list(user_id: str, winner_id: str) -> str:
    return f"p:{user_id}:{winner_id}"


def settlement_list(winner_id: str) -> str:
    return f"s:{winner_id}"


class BulletinBoard:
    """Public log; every post must verify under its author's registered key"""

    def __init__(self, params: GroupParams):
        self.params = params
        self._entries: list[BulletinEntry] = []
        self._authors: dict[str, int] = {}
        self._lists: dict[str, list[int]] = {}
        self.rejections = 0

    def __len__(self) -> int:
        return len(self._entries)

    def register_author(self, author: str, public_key: int) -> None:
        self._authors[author] = public_key

    def public_key(self, author: str) -> Optional[int]:
        return self._authors.get(author)

    def next_sequence_no(self) -> int:
        return len(self._entries)

    def post(
        self,
        author: str,
        kind: PayloadKind,
        payload: bytes,
        signature: DlogSignature,
        logical_time: int,
        subject: Optional[str] = None,
        list_id: Optional[str] = None,
    ) -> int:
        sequence_no = self.next_sequence_no()
        public_key = self._authors.get(author)
        message = entry_message(sequence_no, logical_time, kind, subject, payload, list_id)
        if public_key is None or not dlog_verify(self.params, public_key, message, signature):
            self.rejections += 1
            logger.warning(
                f"Rejected {kind.value} post from {author}",
                extra={"component": "Board", "sequence_no": sequence_no},
            )
            raise BoardRejection(f"Invalid signature on {kind.value} post from {author}")

        self._entries.append(BulletinEntry(
            sequence_no=sequence_no,
            logical_time=logical_time,
            author=author,
            kind=kind,
            payload=payload,
            signature=signature,
            subject=subject,
            list_id=list_id,
        ))
        if list_id is not None:
            self._lists.setdefault(list_id, []).append(sequence_no)
        logger.debug(f"Board entry {sequence_no}: {kind.value} by {author}")
        return sequence_no

    def signed_post(
        self,
        key: DlogKeypair,
        author: str,
        kind: PayloadKind,
        payload: bytes,
        logical_time: int,
        rng: random.Random,
        subject: Optional[str] = None,
        list_id: Optional[str] = None,
    ) -> int:
        message = entry_message(self.next_sequence_no(), logical_time, kind, subject, payload, list_id)
        signature = dlog_sign(key, message, rng)
        return self.post(author, kind, payload, signature, logical_time, subject=subject, list_id=list_id)

    def read_range(self, from_seq: int = 0, to_seq: Optional[int] = None) -> list[BulletinEntry]:
        """Entries with from_seq <= sequence_no <= to_seq"""
        if to_seq is None:
            to_seq = len(self._entries) - 1
        if from_seq < 0 or to_seq < from_seq:
            return []
        return self._entries[from_seq:to_seq + 1]

    def read_list(self, list_id: str) -> DynamicList:
        return DynamicList(list_id=list_id, sequence_nos=tuple(self._lists.get(list_id, ())))

    def list_entries(self, list_id: str) -> list[BulletinEntry]:
        return [self._entries[s] for s in self._lists.get(list_id, ())]

    def list_ids(self) -> list[str]:
        return sorted(self._lists)

    def entries_of(self, kind: PayloadKind, author: Optional[str] = None) -> list[BulletinEntry]:
        return [e for e in self._entries if e.kind is kind and (author is None or e.author == author)]

    def first_posted(self, kind: PayloadKind, subject: str) -> Optional[BulletinEntry]:
        """First entry of kind about subject; later duplicates stay on the board for audit"""
        for entry in self._entries:
            if entry.kind is kind and entry.subject == subject:
                return entry
        return None

    def dump(self) -> str:
        return "".join(entry.dump_line() + "\n" for entry in self._entries)

    def stats(self) -> dict:
        return {
            "entries": len(self._entries),
            "payload_bytes": sum(len(e.payload) for e in self._entries),
            "lists": len(self._lists),
            "rejections": self.rejections,
        }


def replay_consistent(earlier_dump: str, later_dump: str) -> bool:
    """True when the earlier dump is a line-wise prefix of the later one"""
    earlier, later = earlier_dump.splitlines(), later_dump.splitlines()
    return len(earlier) <= len(later) and later[:len(earlier)] == earlier


# --- commitments and receipts ---------------------------------------------

def commitment_payload(user_id: str, commitment: bytes, user_signature: DlogSignature) -> bytes:
    return encode_blobs(user_id.encode(), commitment, user_signature.to_bytes())


def parse_commitment_payload(payload: bytes) -> tuple[str, bytes, bytes]:
    parts = decode_blobs(payload)
    if len(parts) != 3:
        raise EncodingError("Commitment payload must carry three fields")
    user_id, commitment, signature = parts
    return user_id.decode(), commitment, signature


@dataclass(frozen=True)
class Receipt:
    """Platform's signed acknowledgement sign_p(c_i | TID | T)"""

    user_id: str
    commitment_digest: str
    tid: str
    deadline: int
    signature: DlogSignature

    def message(self) -> bytes:
        return receipt_message(self.commitment_digest, self.tid, self.deadline)


def receipt_message(commitment_digest: str, tid: str, deadline: int) -> bytes:
    return encode_blobs(commitment_digest.encode(), tid.encode(), encode_ints(deadline))


def audit_receipts(board: BulletinBoard, receipts: Iterable[Receipt]) -> list[str]:
    """Users holding a receipt whose commitment never reached the board"""
    posted = set()
    for entry in board.entries_of(PayloadKind.COMMITMENT):
        try:
            _, commitment, _ = parse_commitment_payload(entry.payload)
        except EncodingError:
            continue
        posted.add(digest(commitment))
    missing = sorted(r.user_id for r in receipts if r.commitment_digest not in posted)
    for user_id in missing:
        logger.warning(f"Receipted commitment of {user_id} missing from the board", extra={"component": "Board"})
    return missing


def board_summary(board: BulletinBoard) -> Mapping[str, int]:
    counts: dict[str, int] = {}
    for entry in board.read_range():
        counts[entry.kind.value] = counts.get(entry.kind.value, 0) + 1
    return counts
