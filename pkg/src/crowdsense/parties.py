"""Auction issuer, platform and sensing users.

Parties talk only through the MessageBus and the BulletinBoard; each keeps a
PartyView of what it actually learned so the privacy scans can inspect it.
"""
import logging
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .bulletin import (
    BulletinBoard,
    PayloadKind,
    Receipt,
    commitment_payload,
    receipt_message,
)
from .bus import BOARD, MessageBus
from .crypto_primitives import (
    BlindSignature,
    DlogSignature,
    EncodingTable,
    GroupParams,
    OrderPreservingCodebook,
    OtSession,
    PaillierCiphertext,
    PaillierKeypair,
    PaillierPublicKey,
    TlcService,
    blind_verify,
    digest,
    dlog_keygen,
    dlog_sign,
    dlog_verify,
    encode_blobs,
    encode_ints,
    paillier_decrypt,
    paillier_encrypt_random,
    session_ot_recover,
    session_ot_request,
    signee_blind,
    signee_unblind,
    signer_commit,
    signer_respond,
    tlc_commit,
)
from .mechanisms import SensingProfile
from .secure_compute import ComparisonAuthority, Ordering

logger = logging.getLogger("app")

AI_ID = "ai"
PLATFORM_ID = "platform"
PHANTOM_ID = "~phantom"
RESERVED_IDS = frozenset({AI_ID, PLATFORM_ID, PHANTOM_ID, BOARD})


@dataclass(frozen=True)
class ViewEntry:
    round: int
    kind: str
    digest: str
    learned: tuple = ()
    subject: Optional[str] = None
    provenance: str = ""


class PartyView:
    """Append-only record of the plaintext a party has learned"""

    def __init__(self, party_id: str):
        self.party_id = party_id
        self.entries: list[ViewEntry] = []

    def record(self, round_no: int, kind: str, learned: Iterable = (), subject: Optional[str] = None, provenance: str = "") -> ViewEntry:
        learned = tuple(learned)
        entry = ViewEntry(
            round=round_no,
            kind=kind,
            digest=digest(repr((kind, subject, learned)).encode()),
            learned=learned,
            subject=subject,
            provenance=provenance,
        )
        self.entries.append(entry)
        return entry

    def of_kind(self, kind: str) -> list[ViewEntry]:
        return [e for e in self.entries if e.kind == kind]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Misbehavior:
    """Platform deviations injected by tests and fault campaigns"""

    underpay: Fraction = Fraction(0)
    underpay_target: Optional[str] = None
    forge_bid: Optional[Fraction] = None
    drop_commitment: Optional[str] = None

    @property
    def honest(self) -> bool:
        return not self.underpay and self.forge_bid is None and self.drop_commitment is None


def pack_pair(high: int, low: int, low_bits: int) -> int:
    return high << low_bits | low


def unpack_pair(packed: int, low_bits: int) -> tuple[int, int]:
    return packed >> low_bits, packed & ((1 << low_bits) - 1)


class Party:
    def __init__(self, party_id: str, params: GroupParams, bus: MessageBus, board: BulletinBoard, rng: random.Random):
        self.party_id = party_id
        self.params = params
        self.bus = bus
        self.board = board
        self.rng = rng
        self.key = dlog_keygen(params, rng)
        self.view = PartyView(party_id)
        self.fetched: dict[tuple, int] = {}
        self.ot_points: dict[int, int] = {}
        bus.register(party_id)
        board.register_author(party_id, self.key.y)

    def send(self, receiver: str, kind: str, payload: bytes) -> bytes:
        return self.bus.send(self.party_id, receiver, kind, payload)

    def sign(self, message: bytes) -> DlogSignature:
        self.bus.count_op(self.party_id, "sign")
        return dlog_sign(self.key, message, self.rng)

    def post(self, kind: PayloadKind, payload: bytes, subject: Optional[str] = None, list_id: Optional[str] = None) -> int:
        self.send(BOARD, f"post:{kind.value}", payload)
        self.bus.count_op(self.party_id, "sign")
        return self.board.signed_post(
            self.key, self.party_id, kind, payload, self.bus.round, self.rng, subject=subject, list_id=list_id
        )

    def learn(self, kind: str, learned: Iterable = (), subject: Optional[str] = None, provenance: str = "") -> ViewEntry:
        return self.view.record(self.bus.round, kind, learned, subject=subject, provenance=provenance)

    def commit_for_release(self, tlc: TlcService, *fields: bytes) -> bytes:
        self.bus.count_op(self.party_id, "tlc_commit")
        return tlc_commit(tlc, encode_blobs(*fields), self.rng)


class AuctionIssuer(Party):
    """Semi-honest third party: codebooks, key release, decoding and comparisons"""

    def __init__(self, params, bus, board, rng, paillier: PaillierKeypair, table: EncodingTable, tlc: TlcService):
        super().__init__(AI_ID, params, bus, board, rng)
        self.paillier = paillier
        self.table = table
        self.tlc = tlc
        self.omega_book: Optional[OrderPreservingCodebook] = None
        self._ot_sessions: dict[int, OtSession] = {}
        self._sessions: dict[str, int] = {}
        self.authority = ComparisonAuthority(paillier, on_compare=self._log_ordering)

    @property
    def public_paillier(self) -> PaillierPublicKey:
        return self.paillier.public

    def _log_ordering(self, token: Ordering) -> None:
        self.bus.count_op(self.party_id, "compare")
        self.post(PayloadKind.ORDERING_TOKEN, token.value.encode())

    def publish_details(self, tid: str, budget: Fraction, deadline: int, alpha: Fraction) -> int:
        payload = encode_blobs(
            tid.encode(),
            f"{budget.numerator}/{budget.denominator}".encode(),
            encode_ints(deadline),
            f"{alpha.numerator}/{alpha.denominator}".encode(),
            encode_ints(self.tlc.tpk, self.paillier.n),
        )
        logger.info(f"Auction {tid} published", extra={"component": "AI", "budget": str(budget), "alpha": str(alpha)})
        return self.post(PayloadKind.AUCTION_DETAILS, payload)

    def ot_session(self, book: OrderPreservingCodebook) -> OtSession:
        key = id(book)
        if key not in self._ot_sessions:
            self.bus.count_op(self.party_id, "ot_setup")
            self._ot_sessions[key] = OtSession(self.params, book.codes, self.rng)
        return self._ot_sessions[key]

    def serve_ot(self, book: OrderPreservingCodebook, point: int) -> list[int]:
        session = self.ot_session(book)
        self.bus.count_op(self.party_id, "ot_respond", len(session))
        return session.respond(point)

    def blind_commit(self, requester: str) -> int:
        k_tilde, r_tilde = signer_commit(self.params, self.rng)
        self._sessions[requester] = k_tilde
        return r_tilde

    def blind_respond(self, requester: str, m_tilde: int) -> int:
        self.bus.count_op(self.party_id, "blind_sign")
        return signer_respond(self.key, self._sessions.pop(requester), m_tilde)

    def opens_inverse(self, code: int, kind: str):
        self.bus.count_op(self.party_id, "opens_inverse")
        return self.table.book(kind).decode(code)

    def release_key(self, logical_time: int) -> int:
        self.tlc.advance_to(logical_time)
        tsk = self.tlc.release_key()
        self.post(PayloadKind.KEY_RELEASE, encode_ints(tsk))
        logger.info(f"Time-lapse key released at t={logical_time}", extra={"component": "AI"})
        return tsk

    def decrypt(self, ciphertext: PaillierCiphertext) -> int:
        self.bus.count_op(self.party_id, "paillier_decrypt")
        return paillier_decrypt(self.paillier, ciphertext)


class Platform(Party):
    def __init__(self, params, bus, board, rng, paillier: PaillierKeypair, misbehavior: Misbehavior, tid: str, deadline: int):
        super().__init__(PLATFORM_ID, params, bus, board, rng)
        self.paillier = paillier
        self.misbehavior = misbehavior
        self.tid = tid
        self.deadline = deadline
        self.requests: dict[str, tuple[bytes, DlogSignature]] = {}
        self.ledger: dict[str, Fraction] = {}

    @property
    def public_paillier(self) -> PaillierPublicKey:
        return self.paillier.public

    def accept_bid(self, user_id: str, commitment: bytes, signature: DlogSignature) -> Optional[Receipt]:
        """Check a bidding request and hand back sign_p(c_i | TID | T)"""
        user_key = self.board.public_key(user_id)
        if user_key is None or not dlog_verify(self.params, user_key, encode_blobs(commitment, self.tid.encode()), signature):
            logger.warning(f"Bidding request from {user_id} failed signature check", extra={"component": "Platform"})
            return None
        if user_id in self.requests:
            logger.warning(f"Duplicate bidding request from {user_id}; keeping the first", extra={"component": "Platform"})
            return None
        self.requests[user_id] = (commitment, signature)
        commitment_digest = digest(commitment)
        receipt = Receipt(
            user_id=user_id,
            commitment_digest=commitment_digest,
            tid=self.tid,
            deadline=self.deadline,
            signature=self.sign(receipt_message(commitment_digest, self.tid, self.deadline)),
        )
        self.send(user_id, "receipt", receipt.signature.to_bytes())
        return receipt

    def post_commitments(self) -> list[str]:
        posted = []
        for user_id, (commitment, signature) in self.requests.items():
            if user_id == self.misbehavior.drop_commitment:
                logger.debug(f"Withholding commitment of {user_id}")
                continue
            self.post(PayloadKind.COMMITMENT, commitment_payload(user_id, commitment, signature), subject=user_id)
            posted.append(user_id)
        logger.info(f"Posted {len(posted)} commitments at t={self.bus.round}", extra={"component": "Platform"})
        return posted

    def decrypt(self, ciphertext: PaillierCiphertext) -> int:
        self.bus.count_op(self.party_id, "paillier_decrypt")
        return paillier_decrypt(self.paillier, ciphertext)

    def settle(self, payments: dict[str, Fraction]) -> dict[str, Fraction]:
        """Pay winners, applying any injected underpayment"""
        target = self.misbehavior.underpay_target or next(iter(payments), None)
        for user_id, amount in payments.items():
            if self.misbehavior.underpay and user_id == target:
                amount = max(Fraction(0), amount - self.misbehavior.underpay)
            self.ledger[user_id] = amount
            self.send(user_id, "payment", f"{amount.numerator}/{amount.denominator}".encode())
        return dict(self.ledger)


class SensingUser(Party):
    def __init__(self, profile: SensingProfile, params, bus, board, rng):
        super().__init__(profile.user_id, params, bus, board, rng)
        self.profile = profile
        self.randomness: Optional[int] = None
        self.signature: Optional[BlindSignature] = None
        self.signed_message: Optional[int] = None
        self.commitment: Optional[bytes] = None
        self.receipt: Optional[Receipt] = None
        self.learn("profile", (("bid", profile.bid), ("limit", profile.limit), ("assignments", tuple(sorted(profile.assignments)))),
                   subject=self.party_id, provenance="own")

    def request_bid(self, platform: Platform, tid: str) -> Optional[Receipt]:
        signature = self.sign(encode_blobs(self.commitment, tid.encode()))
        self.send(platform.party_id, "bidding_request", encode_blobs(self.commitment, signature.to_bytes()))
        receipt = platform.accept_bid(self.party_id, self.commitment, signature)
        if receipt is not None and dlog_verify(self.params, platform.key.y, receipt.message(), receipt.signature):
            self.receipt = receipt
        return self.receipt

    def reveal_for_audit(self, ai: AuctionIssuer) -> tuple[Optional[int], Optional[BlindSignature]]:
        extra = (self.signature.r, self.signature.s) if self.signature else ()
        payload = encode_ints(self.randomness or 0, *extra)
        self.send(ai.party_id, "audit_reveal", payload)
        return self.randomness, self.signature


def oblivious_fetch(receiver: Party, ai: AuctionIssuer, book: OrderPreservingCodebook, value) -> int:
    """1-out-of-z transfer of the code of value from the issuer's codebook.

    The issuer's session point is delivered on a receiver's first fetch from a
    book, and a value the receiver already fetched is answered from its cache.
    """
    key = (id(book), value)
    if key in receiver.fetched:
        return receiver.fetched[key]
    session = ai.ot_session(book)
    if id(book) not in receiver.ot_points:
        ai.send(receiver.party_id, "ot_session", encode_ints(session.public))
        receiver.ot_points[id(book)] = session.public
    public = receiver.ot_points[id(book)]
    request = session_ot_request(receiver.params, public, book.index_of(value) + 1, len(book), receiver.rng)
    receiver.bus.count_op(receiver.party_id, "ot_request")
    receiver.send(ai.party_id, "ot_request", encode_ints(request.point))
    masked = ai.serve_ot(book, request.point)
    ai.send(receiver.party_id, "ot_reply", encode_ints(*masked))
    code = session_ot_recover(receiver.params, public, request, masked)
    receiver.fetched[key] = code
    return code


def blind_signature_session(signee: Party, ai: AuctionIssuer, message: int) -> BlindSignature:
    """Four-message Nyberg-Rueppel session; the issuer never sees message"""
    signee.send(ai.party_id, "sign_request", b"")
    r_tilde = ai.blind_commit(signee.party_id)
    ai.send(signee.party_id, "sign_commit", encode_ints(r_tilde))
    state = signee_blind(signee.params, message, r_tilde, signee.rng)
    signee.send(ai.party_id, "sign_blinded", encode_ints(state.m_tilde))
    s_tilde = ai.blind_respond(signee.party_id, state.m_tilde)
    ai.send(signee.party_id, "sign_response", encode_ints(s_tilde))
    signature = signee_unblind(signee.params, state, s_tilde)
    if not blind_verify(signee.params, ai.key.y, message, signature):
        logger.warning(f"Blind signature for {signee.party_id} failed to verify", extra={"component": "Signing"})
    return signature


def encrypt_for(sender: Party, key: PaillierPublicKey, value: int) -> tuple[PaillierCiphertext, int]:
    sender.bus.count_op(sender.party_id, "paillier_encrypt")
    return paillier_encrypt_random(key, value, sender.rng)