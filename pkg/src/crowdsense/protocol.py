"""End-to-end privacy-preserving verifiable auctions.

run_pvi_h covers homogeneous and heterogeneous jobs (order-preserving codes,
sequential decoding by the issuer); run_pvi_s covers submodular coverage jobs
(marginal evaluation, set union and encrypted payment arithmetic). Both end
with the probabilistic payment audit.
"""
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .bulletin import (
    BulletinBoard,
    PayloadKind,
    audit_receipts,
    parse_commitment_payload,
    payment_list,
    settlement_list,
    winner_list,
)
from .bus import MessageBus, Phase
from .crypto_primitives import (
    DlogSignature,
    GroupParams,
    PaillierCiphertext,
    PaillierKeypair,
    TlcService,
    blind_verify,
    build_codebook,
    decode_blobs,
    decode_ints,
    dlog_verify,
    encode_blobs,
    encode_ints,
    generate_group,
    open_commitment,
    opes_build,
    paillier_keygen,
    paillier_open_with_randomness,
    scaled_message,
    seeded_rng,
)
from .errors import (
    CodeLookupError,
    DecryptionError,
    DomainError,
    ScaleArithmeticError,
    UsageError,
    VerificationError,
)
from .mechanisms import AuctionOutcome, JobModel, SensingProfile, run_mechanism
from .parties import (
    AI_ID,
    PHANTOM_ID,
    PLATFORM_ID,
    RESERVED_IDS,
    AuctionIssuer,
    Misbehavior,
    Party,
    Platform,
    SensingUser,
    ViewEntry,
    blind_signature_session,
    encrypt_for,
    oblivious_fetch,
    pack_pair,
    unpack_pair,
)
from .secure_compute import (
    AssignmentEncoder,
    CoverageIndicator,
    QuotientHandle,
    apply_quotient,
    decode_union_tuples,
    encrypt_set_poly,
    encrypted_max,
    encrypted_min,
    evaluate_union_tuples,
    fixed_point_scale,
    mpep_marginal_per_bid,
    scale_exact,
)
from .settings import Settings

logger = logging.getLogger("app")

PROOF_BYTES = 16
DEFAULT_FINE_RATIO = 9
MIN_GAME_TRIALS = 10_000
OPES_SALT = 0x0E5
OMEGA_SALT = 0x03E6A


# --- configuration --------------------------------------------------------

@dataclass(frozen=True)
class VerificationPolicy:
    """Audit probability alpha, fine F and maximal payment p_max"""

    alpha: Fraction
    fine: Fraction
    p_max: Fraction

    def __post_init__(self):
        for name in ("alpha", "fine", "p_max"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if not 0 <= self.alpha <= 1:
            raise DomainError(f"Audit probability {self.alpha} outside [0, 1]")
        if self.fine <= 0:
            raise DomainError("Fine must be positive")
        if self.p_max < 0:
            raise DomainError("Maximal payment cannot be negative")

    @staticmethod
    def threshold(fine, p_max) -> Fraction:
        fine, p_max = Fraction(fine), Fraction(p_max)
        return p_max / (fine + p_max)

    @property
    def deters(self) -> bool:
        """alpha >= p_max / (F + p_max)"""
        return self.alpha >= self.threshold(self.fine, self.p_max)

    @classmethod
    def for_budget(cls, budget, fine=None, alpha=None) -> "VerificationPolicy":
        p_max = Fraction(budget)
        fine = Fraction(fine) if fine is not None else max(p_max, Fraction(1)) * DEFAULT_FINE_RATIO
        alpha = Fraction(alpha) if alpha is not None else cls.threshold(fine, p_max)
        return cls(alpha=alpha, fine=fine, p_max=p_max)


@dataclass(frozen=True)
class AuctionConfig:
    tid: str
    budget: Fraction
    job_model: JobModel
    bid_domain: tuple
    limit_domain: tuple = (1,)
    ground_set: frozenset = frozenset()
    deadline: int = 1
    verification: Optional[VerificationPolicy] = None
    seed: int = 0
    key_seed: int = 1
    settings: Settings = field(default_factory=Settings)
    misbehavior: Misbehavior = field(default_factory=Misbehavior)
    withdrawals: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "budget", Fraction(self.budget))
        object.__setattr__(self, "bid_domain", tuple(sorted({Fraction(b) for b in self.bid_domain})))
        object.__setattr__(self, "limit_domain", tuple(sorted({int(x) for x in self.limit_domain})))
        object.__setattr__(self, "ground_set", frozenset(self.ground_set))
        object.__setattr__(self, "withdrawals", frozenset(self.withdrawals))
        if self.verification is None:
            object.__setattr__(self, "verification", VerificationPolicy.for_budget(self.budget))
        if self.budget < 0:
            raise DomainError("Budget cannot be negative")
        if not self.bid_domain or not self.limit_domain:
            raise DomainError("Bid and limit domains must be nonempty")
        if self.bid_domain[0] <= 0 or self.limit_domain[0] < 1:
            raise DomainError("Domains must hold positive bids and limits")
        if self.deadline < 1:
            raise DomainError("Deadline round must be at least 1")
        if not self.verification.deters:
            raise DomainError(
                f"Audit probability {self.verification.alpha} is below "
                f"p_max/(F+p_max) = {VerificationPolicy.threshold(self.verification.fine, self.verification.p_max)}"
            )


@dataclass(frozen=True)
class CryptoSuite:
    params: GroupParams
    ai_paillier: PaillierKeypair
    platform_paillier: PaillierKeypair

    @classmethod
    def from_settings(cls, settings: Settings, key_seed: int) -> "CryptoSuite":
        if settings.group_bits <= 2 * settings.code_bits + 1:
            raise DomainError(f"{settings.group_bits}-bit groups cannot carry two {settings.code_bits}-bit codes")
        if settings.paillier_bits <= 2 * settings.code_bits + 1:
            raise DomainError(f"{settings.paillier_bits}-bit Paillier keys cannot carry two {settings.code_bits}-bit codes")
        return cls(
            params=generate_group(settings.group_bits, key_seed),
            ai_paillier=paillier_keygen(settings.paillier_bits, 2 * key_seed + 1),
            platform_paillier=paillier_keygen(settings.paillier_bits, 2 * key_seed + 2),
        )


# --- run records ----------------------------------------------------------

@dataclass(frozen=True)
class EncryptedProfile:
    """What a user sealed before the deadline"""

    user_id: str
    ciphertext: PaillierCiphertext
    commitment: bytes
    proof: bytes


class AuditStatus(str, Enum):
    CONFIRMED = "confirmed"
    DISCREPANCY = "discrepancy"
    FAULT = "fault"


@dataclass(frozen=True)
class VerificationResult:
    user_id: str
    status: AuditStatus
    expected: Optional[Fraction] = None
    observed: Optional[Fraction] = None
    expected_allocation: int = 0
    observed_allocation: int = 0
    reason: str = ""

    @property
    def confirmed(self) -> bool:
        return self.status is AuditStatus.CONFIRMED


@dataclass
class RunContext:
    config: AuctionConfig
    suite: CryptoSuite
    rng: random.Random
    bus: MessageBus
    board: BulletinBoard
    ai: AuctionIssuer
    platform: Platform
    users: dict
    ground: tuple = ()
    scale: int = 1
    sealed: dict = field(default_factory=dict)
    audit_cache: Optional[AuctionOutcome] = None

    def parties(self) -> list[Party]:
        return [self.ai, self.platform, *self.users.values()]


@dataclass
class RunTranscript:
    protocol: str
    config: AuctionConfig
    outcome: AuctionOutcome
    context: RunContext = field(repr=False)
    excluded: list = field(default_factory=list)
    appeals: list = field(default_factory=list)
    withdrawn: list = field(default_factory=list)
    audits: dict = field(default_factory=dict)
    fines: Fraction = Fraction(0)

    @property
    def board(self) -> BulletinBoard:
        return self.context.board

    @property
    def bus(self) -> MessageBus:
        return self.context.bus

    @property
    def views(self) -> dict:
        return {party.party_id: party.view for party in self.context.parties()}

    @property
    def messages(self) -> list:
        return self.context.bus.envelopes

    def discrepancies(self) -> list[VerificationResult]:
        return [r for r in self.audits.values() if not r.confirmed]


# --- shared phases --------------------------------------------------------

def _validate_profiles(config: AuctionConfig, profiles: Sequence[SensingProfile], ground: tuple) -> None:
    seen = set()
    for profile in profiles:
        if profile.user_id in RESERVED_IDS:
            raise DomainError(f"User id {profile.user_id!r} is reserved")
        if profile.user_id in seen:
            raise DomainError(f"Duplicate user id {profile.user_id!r}")
        seen.add(profile.user_id)
        if profile.bid not in config.bid_domain:
            raise DomainError(f"Bid {profile.bid} of {profile.user_id} is outside the bid domain")
        if config.job_model is JobModel.SUBMODULAR:
            if not profile.assignments:
                raise DomainError(f"{profile.user_id} has an empty assignment set")
            if not profile.assignments <= set(ground):
                raise DomainError(f"Assignments of {profile.user_id} fall outside the ground set")
        else:
            if profile.limit not in config.limit_domain:
                raise DomainError(f"Limit {profile.limit} of {profile.user_id} is outside the limit domain")
            if config.job_model is JobModel.HOMOGENEOUS and profile.limit != 1:
                raise DomainError(f"Homogeneous jobs require limit 1, {profile.user_id} has {profile.limit}")


def _setup(config: AuctionConfig, profiles: Sequence[SensingProfile]) -> RunContext:
    settings = config.settings
    ground = tuple(sorted(config.ground_set or frozenset().union(*(p.assignments for p in profiles))))
    _validate_profiles(config, profiles, ground)

    suite = CryptoSuite.from_settings(settings, config.key_seed)
    rng = seeded_rng(config.seed)
    bus = MessageBus()
    board = BulletinBoard(suite.params)
    tlc = TlcService(suite.params, release_time=config.deadline + 1, rng=rng)
    table = opes_build(config.bid_domain, config.limit_domain, settings.code_bits, config.seed ^ OPES_SALT)

    ai = AuctionIssuer(suite.params, bus, board, rng, suite.ai_paillier, table, tlc)
    platform = Platform(suite.params, bus, board, rng, suite.platform_paillier, config.misbehavior, config.tid, config.deadline)
    users = {
        p.user_id: SensingUser(p, suite.params, bus, board, rng)
        for p in sorted(profiles, key=lambda p: p.user_id)
    }
    ctx = RunContext(config=config, suite=suite, rng=rng, bus=bus, board=board, ai=ai, platform=platform, users=users, ground=ground)

    bus.enter_phase(Phase.SETUP, 0)
    ai.send(PLATFORM_ID, "auction_details", config.tid.encode())
    ai.publish_details(config.tid, config.budget, config.deadline, config.verification.alpha)
    return ctx


def _seal_profile(ctx: RunContext, user: SensingUser, packed: int, key, signed_message: int) -> None:
    """Blind-sign, encrypt, time-lock and submit one profile"""
    cfg = ctx.config
    user.signature = blind_signature_session(user, ctx.ai, signed_message)
    user.signed_message = signed_message
    ciphertext, user.randomness = encrypt_for(user, key, packed)
    proof = user.rng.randbytes(PROOF_BYTES)
    user.commitment = user.commit_for_release(ctx.ai.tlc, ciphertext.to_bytes(), proof, cfg.tid.encode())
    ctx.sealed[user.party_id] = EncryptedProfile(user.party_id, ciphertext, user.commitment, proof)
    if user.request_bid(ctx.platform, cfg.tid) is None:
        logger.warning(f"{user.party_id} holds no receipt for its bid", extra={"component": "Commitment"})


def _post_at_deadline(ctx: RunContext) -> list[str]:
    ctx.bus.enter_phase(Phase.COMMITMENT, ctx.config.deadline)
    ctx.platform.post_commitments()
    return audit_receipts(ctx.board, [u.receipt for u in ctx.users.values() if u.receipt is not None])


def _released_key(board: BulletinBoard) -> int:
    releases = board.entries_of(PayloadKind.KEY_RELEASE, author=AI_ID)
    if not releases:
        raise VerificationError("The time-lapse key was never released on the board")
    return decode_ints(releases[0].payload)[0]


def _open_board(board: BulletinBoard, params: GroupParams, tsk: int, tid: str) -> tuple[dict[str, int], list[str]]:
    """Decommit every first-posted commitment; returns ciphertext values and malformed subjects"""
    opened, malformed, seen = {}, [], set()
    for entry in board.entries_of(PayloadKind.COMMITMENT):
        if entry.subject in seen:
            continue
        seen.add(entry.subject)
        try:
            user_id, commitment, signature_bytes = parse_commitment_payload(entry.payload)
            signature = DlogSignature(*decode_ints(signature_bytes))
            user_key = board.public_key(user_id)
            if user_id != entry.subject or user_key is None or not dlog_verify(
                params, user_key, encode_blobs(commitment, tid.encode()), signature
            ):
                raise DecryptionError("commitment signature does not verify")
            ciphertext, _proof, committed_tid = decode_blobs(open_commitment(params, tsk, commitment))
            if committed_tid != tid.encode():
                raise DecryptionError("commitment names another task")
            opened[user_id] = decode_ints(ciphertext)[0]
        except (ValueError, TypeError, IndexError) as e:
            logger.warning(f"Malformed commitment from {entry.subject}: {e}", extra={"component": "Decommitment"})
            malformed.append(entry.subject)
    return opened, malformed


def _format(value: Fraction) -> bytes:
    return f"{value.numerator}/{value.denominator}".encode()


def _post_outcomes(ctx: RunContext, allocation: dict, ledger: dict) -> None:
    """Winner identity, allocation and the payment encrypted for the issuer"""
    for user_id, amount in ledger.items():
        numerator, _ = encrypt_for(ctx.platform, ctx.ai.public_paillier, amount.numerator)
        denominator, _ = encrypt_for(ctx.platform, ctx.ai.public_paillier, amount.denominator)
        payload = encode_blobs(
            user_id.encode(), encode_ints(allocation[user_id]), numerator.to_bytes(), denominator.to_bytes()
        )
        ctx.platform.post(PayloadKind.OUTCOME, payload, subject=user_id)


def draw_audits(user_ids: Iterable[str], alpha, rng: random.Random) -> list[str]:
    """Each user independently requests an audit with probability alpha"""
    alpha = float(alpha)
    return [u for u in sorted(user_ids) if rng.random() < alpha]


def _verification_phase(transcript: RunTranscript) -> None:
    ctx = transcript.context
    policy = ctx.config.verification
    ctx.bus.enter_phase(Phase.VERIFICATION, ctx.config.deadline + 1)
    for user_id in draw_audits(ctx.users, policy.alpha, ctx.rng):
        try:
            result = verify_payment(user_id, transcript)
        except VerificationError as e:
            result = VerificationResult(user_id=user_id, status=AuditStatus.FAULT, reason=str(e))
        transcript.audits[user_id] = result
        if not result.confirmed:
            transcript.fines += policy.fine
            logger.warning(
                f"Audit by {user_id} ended in {result.status.value}",
                extra={"component": "Verification", "expected": result.expected, "observed": result.observed},
            )


# --- PVI-H ----------------------------------------------------------------

def _commit_h(ctx: RunContext) -> None:
    code_bits = ctx.config.settings.code_bits
    table = ctx.ai.table
    for user in ctx.users.values():
        bid_code = oblivious_fetch(user, ctx.ai, table.bid_book, user.profile.bid)
        limit_code = oblivious_fetch(user, ctx.ai, table.limit_book, user.profile.limit)
        user.learn("code", (("bid_code", bid_code), ("limit_code", limit_code)), subject=user.party_id, provenance="ot")
        packed = pack_pair(bid_code, limit_code, code_bits)
        _seal_profile(ctx, user, packed, ctx.platform.public_paillier, signed_message=packed)


def _rank_all_pairs(ctx: RunContext, records: list[tuple]) -> list[tuple]:
    """Rank by counting smaller (code, user_id) pairs over every ordered pair"""
    ranks = [sum(1 for other in records if other[:2] < record[:2]) for record in records]
    ctx.bus.count_op(PLATFORM_ID, "sort_compare", len(records) * (len(records) - 1))
    return [record for _, record in sorted(zip(ranks, records))]


def _decommit_h(ctx: RunContext, tsk: int, excluded: list) -> list[tuple]:
    cfg, platform = ctx.config, ctx.platform
    opened, malformed = _open_board(ctx.board, ctx.suite.params, tsk, cfg.tid)
    excluded.extend(malformed)
    records = []
    for user_id, value in opened.items():
        platform.learn("decommit", (("commitment", user_id),), subject=user_id, provenance="tlc")
        try:
            packed = platform.decrypt(PaillierCiphertext(value, platform.public_paillier.key_id))
        except (DecryptionError, UsageError) as e:
            logger.warning(f"Excluding {user_id}: {e}", extra={"component": "Decommitment"})
            excluded.append(user_id)
            continue
        bid_code, limit_code = unpack_pair(packed, cfg.settings.code_bits)
        platform.learn("code", (("bid_code", bid_code), ("limit_code", limit_code)), subject=user_id, provenance="decrypt")
        records.append((bid_code, user_id, limit_code))

    if cfg.misbehavior.forge_bid is not None:
        table = ctx.ai.table
        records.append((
            oblivious_fetch(platform, ctx.ai, table.bid_book, Fraction(cfg.misbehavior.forge_bid)),
            PHANTOM_ID,
            oblivious_fetch(platform, ctx.ai, table.limit_book, table.limit_domain[0]),
        ))
    return _rank_all_pairs(ctx, records)


def _select_winners_h(ctx: RunContext, ranked: list[tuple], excluded: list):
    """Request OPENS^-1 rank by rank while b_i <= B / (sum f_j + l_i)"""
    platform, ai, budget = ctx.platform, ctx.ai, ctx.config.budget
    winners, allocation = [], {}
    assigned = 0
    runner_up: Optional[Fraction] = None
    if budget <= 0:
        return winners, allocation, assigned, runner_up

    for bid_code, user_id, limit_code in ranked:
        platform.send(AI_ID, "opens_request", encode_ints(bid_code, limit_code))
        try:
            bid, limit = ai.opens_inverse(bid_code, "bid"), ai.opens_inverse(limit_code, "limit")
        except CodeLookupError as e:
            logger.warning(f"Excluding {user_id}: {e}", extra={"component": "WinnerSelection"})
            excluded.append(user_id)
            continue
        ai.send(PLATFORM_ID, "opens_reply", encode_blobs(_format(bid), encode_ints(limit)))

        if bid * (assigned + limit) > budget:
            # first failing rank: disclosed without identity
            platform.learn("profile", (("bid", bid), ("limit", limit)), subject=None, provenance="opens_inverse")
            runner_up = bid
            break
        platform.learn("profile", (("bid", bid), ("limit", limit)), subject=user_id, provenance="opens_inverse")
        jobs = min(limit, math.floor((budget - bid * assigned) / bid))
        winners.append(user_id)
        allocation[user_id] = jobs
        assigned += jobs
    return winners, allocation, assigned, runner_up


def run_pvi_h(config: AuctionConfig, true_profiles: Sequence[SensingProfile]) -> RunTranscript:
    if config.job_model is JobModel.SUBMODULAR:
        raise UsageError("PVI-H runs homogeneous and heterogeneous jobs; use run_pvi_s for coverage jobs")
    ctx = _setup(config, true_profiles)
    logger.info(
        f"PVI-H run {config.tid} started",
        extra={"component": "Protocol", "users": len(ctx.users), "model": config.job_model.value},
    )

    ctx.bus.enter_phase(Phase.COMMITMENT, 0)
    _commit_h(ctx)
    appeals = _post_at_deadline(ctx)

    ctx.bus.enter_phase(Phase.WINNER, config.deadline + 1)
    tsk = ctx.ai.release_key(config.deadline + 1)
    excluded: list = []
    ranked = _decommit_h(ctx, tsk, excluded)
    winners, allocation, assigned, runner_up = _select_winners_h(ctx, ranked, excluded)

    ctx.bus.enter_phase(Phase.PAYMENT)
    price = None
    payments = {}
    if winners:
        price = config.budget / assigned
        if runner_up is not None:
            price = min(price, runner_up)
        payments = {u: price * allocation[u] for u in winners if u != PHANTOM_ID}
    ledger = ctx.platform.settle(payments)
    _post_outcomes(ctx, allocation, ledger)

    real_winners = tuple(u for u in winners if u != PHANTOM_ID)
    outcome = AuctionOutcome(
        winners=real_winners,
        allocation={u: allocation[u] for u in real_winners},
        payments=ledger,
        per_job_price=price,
    )
    transcript = RunTranscript(protocol="pvi-h", config=config, outcome=outcome, context=ctx, excluded=excluded, appeals=appeals)
    _verification_phase(transcript)
    logger.info(
        f"PVI-H run {config.tid} finished",
        extra={"component": "Protocol", "winners": len(real_winners), "audits": len(transcript.audits)},
    )
    return transcript


# --- PVI-S ----------------------------------------------------------------

def omega_domain(bid_domain: Iterable[Fraction], budget: Fraction, m: int) -> tuple:
    """Every marginal-per-bid u/b and every threshold u/B a run can produce"""
    values = {Fraction(u) / Fraction(b) for u in range(m + 1) for b in bid_domain}
    values |= {Fraction(u) / budget for u in range(m + 1)}
    return tuple(sorted(values))


def _assignment_mask(ground: tuple, assignments: Iterable[str]) -> int:
    members = set(assignments)
    return sum(1 << k for k, tau in enumerate(ground) if tau in members)


def _mask_labels(ground: tuple, mask: int) -> frozenset:
    return frozenset(tau for k, tau in enumerate(ground) if mask >> k & 1)


def _commit_s(ctx: RunContext) -> None:
    cfg = ctx.config
    m = len(ctx.ground)
    if len(cfg.bid_domain) << m >= ctx.ai.public_paillier.n:
        raise DomainError(f"A {m}-point ground set does not fit the Paillier plaintext space")
    for user in ctx.users.values():
        profile = user.profile
        packed = pack_pair(cfg.bid_domain.index(profile.bid), _assignment_mask(ctx.ground, profile.assignments), m)
        omega = Fraction(len(profile.assignments)) / profile.bid
        _seal_profile(ctx, user, packed, ctx.ai.public_paillier, signed_message=scaled_message(omega, cfg.settings.sign_digits))


def _share_bytes(ctx: RunContext) -> bytes:
    return bytes(max(1, len(ctx.ground)) * ctx.ai.public_paillier.ciphertext_bytes)


def _fold_shares(ctx: RunContext, members: Sequence[str]) -> bytes:
    """Members hand their encrypted indicator vectors to the platform, which multiplies them into one"""
    shares = _share_bytes(ctx)
    for member in members:
        ctx.bus.send(member, PLATFORM_ID, "mpep_share", shares)
    ctx.bus.count_op(PLATFORM_ID, "mpep_fold", len(members))
    return shares


def _mpep(ctx: RunContext, indicators: CoverageIndicator, members: Sequence[str], user: SensingUser, folded: bytes) -> Fraction:
    """Joint evaluation of (U(S u {i}) - U(S)) / b_i; only the candidate learns it.

    The candidate sees one folded share from the platform whatever S is.
    """
    ctx.platform.send(user.party_id, "mpep_share", folded)
    ctx.bus.count_op(user.party_id, "mpep")
    omega = mpep_marginal_per_bid(indicators, members, user.party_id, user.profile.bid)
    user.learn("marginal", (("omega", omega),), subject=user.party_id, provenance="mpep")
    return omega


def _own_marginal(user: SensingUser) -> Fraction:
    """Latest marginal per bid the user computed for itself"""
    return dict(user.view.of_kind("marginal")[-1].learned)["omega"]


def _post_code(ctx: RunContext, party: Party, code: int, list_id: str, kind: PayloadKind) -> None:
    commitment = party.commit_for_release(
        ctx.ai.tlc, encode_ints(code), party.rng.randbytes(PROOF_BYTES), ctx.config.tid.encode()
    )
    party.post(kind, commitment, subject=party.party_id, list_id=list_id)


def _collect_codes(ctx, indicators, members, candidates, list_for) -> dict[str, int]:
    """Each candidate learns its marginal per bid, fetches its code and commits to it"""
    codes = {}
    folded = _fold_shares(ctx, members)
    for user_id in candidates:
        user = ctx.users[user_id]
        omega = _mpep(ctx, indicators, members, user, folded)
        code = oblivious_fetch(user, ctx.ai, ctx.ai.omega_book, omega)
        _post_code(ctx, user, code, list_for(user_id), PayloadKind.LIST_APPEND)
        user.send(PLATFORM_ID, "omega_code", encode_ints(code))
        ctx.platform.learn("code", (("omega_code", code),), subject=user_id, provenance="user")
        codes[user_id] = code
    return codes


def _argmax_code(ctx: RunContext, codes: dict[str, int]) -> str:
    """First maximal code in user_id order"""
    best = None
    for user_id in sorted(codes):
        if best is None or codes[user_id] > codes[best]:
            best = user_id
    ctx.bus.count_op(PLATFORM_ID, "code_compare", max(0, len(codes) - 1))
    return best


def _coverage_union(ctx: RunContext, platform_values: set, user: SensingUser) -> set:
    """Polynomial set union: the platform learns which of user's points are new"""
    platform = ctx.platform
    pub = platform.public_paillier
    encoder = AssignmentEncoder.for_ground_set(ctx.ground)
    poly = encrypt_set_poly(platform_values, pub, platform.rng)
    ctx.bus.count_op(PLATFORM_ID, "paillier_encrypt", poly.degree + 1)
    platform.send(user.party_id, "union_polynomial", encode_blobs(*(c.to_bytes() for c in poly.coefficients)))

    tuples = evaluate_union_tuples(poly, encoder.encode_set(user.profile.assignments), pub, user.rng)
    ctx.bus.count_op(user.party_id, "paillier_scale", len(tuples) * (poly.degree + 2))
    user.send(PLATFORM_ID, "union_tuples", encode_blobs(*(a.to_bytes() + b.to_bytes() for a, b in tuples)))

    added = decode_union_tuples(platform.paillier, tuples)
    ctx.bus.count_op(PLATFORM_ID, "paillier_decrypt", 2 * len(tuples))
    platform.learn("coverage", (("added", len(added)),), subject=user.party_id, provenance="set_union")
    return added


def _threshold_code(ctx: RunContext, coverage: int, list_id: str) -> int:
    """Platform fetches and commits to the code of U(T)/B"""
    code = oblivious_fetch(ctx.platform, ctx.ai, ctx.ai.omega_book, Fraction(coverage) / ctx.config.budget)
    _post_code(ctx, ctx.platform, code, list_id, PayloadKind.PLATFORM_COMMITMENT)
    return code


def _select_winners_s(ctx: RunContext, active: list[str], indicators: CoverageIndicator, withdrawn: list):
    platform = ctx.platform
    encoder = AssignmentEncoder.for_ground_set(ctx.ground)
    winners: list[str] = []
    covered: set = set()
    gammas: dict[str, set] = {}
    candidates = list(active)

    while candidates:
        codes = _collect_codes(ctx, indicators, winners, candidates, winner_list)
        best = _argmax_code(ctx, codes)
        user = ctx.users[best]
        added = _coverage_union(ctx, covered, user)
        threshold = _threshold_code(ctx, len(covered | added), winner_list(PLATFORM_ID))
        if codes[best] < threshold:
            break

        if best in ctx.config.withdrawals:
            user.send(PLATFORM_ID, "decline", b"")
            platform.post(PayloadKind.WITHDRAWAL, best.encode(), subject=best)
            logger.warning(f"{best} withdrew instead of acknowledging", extra={"component": "WinnerSelection"})
            withdrawn.append(best)
            candidates.remove(best)
            continue

        packed = pack_pair(
            ctx.config.bid_domain.index(user.profile.bid),
            _assignment_mask(ctx.ground, user.profile.assignments),
            len(ctx.ground),
        )
        acknowledgement, _ = encrypt_for(user, platform.public_paillier, packed)
        user.send(PLATFORM_ID, "acknowledgement", acknowledgement.to_bytes())
        bid_index, mask = unpack_pair(platform.decrypt(acknowledgement), len(ctx.ground))
        labels = _mask_labels(ctx.ground, mask)
        platform.learn(
            "profile", (("bid", ctx.config.bid_domain[bid_index]), ("assignments", tuple(sorted(labels)))),
            subject=best, provenance="acknowledgement",
        )
        gammas[best] = encoder.encode_set(labels)
        covered |= added
        winners.append(best)
        candidates.remove(best)
        platform.send(best, "admission", b"")
        user.learn("admission", (("round", len(winners)),), subject=best, provenance="platform")
    return winners, gammas


def _eta_term(ctx: RunContext, marginal: PaillierCiphertext, coverage: int) -> PaillierCiphertext:
    handle = QuotientHandle(numerator=scale_exact(ctx.config.budget, ctx.scale), divisor=coverage)
    ctx.bus.count_op(PLATFORM_ID, "paillier_scale")
    return apply_quotient(ctx.ai.public_paillier, marginal, handle)


def _encrypted_marginal(ctx: RunContext, indicators, members, winner: SensingUser) -> PaillierCiphertext:
    """Winner learns U_i(T) and sends E_AI(U_i(T)) to the platform"""
    gain = _mpep(ctx, indicators, members, winner, _fold_shares(ctx, members)) * winner.profile.bid
    ciphertext, _ = encrypt_for(winner, ctx.ai.public_paillier, int(gain))
    winner.send(PLATFORM_ID, "marginal_ciphertext", ciphertext.to_bytes())
    return ciphertext


def _critical_payment_s(ctx: RunContext, winner_id: str, others: list[str], indicators, gamma_i: set) -> Fraction:
    platform, ai = ctx.platform, ctx.ai
    winner = ctx.users[winner_id]
    authority = ai.authority
    p_hat, _ = encrypt_for(platform, ai.public_paillier, 0)
    referenced: list[str] = []
    covered: set = set()
    remaining = list(others)

    def compare(a, b, pick):
        platform.send(AI_ID, "compare_request", a.to_bytes() + b.to_bytes())
        chosen = pick(a, b, authority)
        ai.send(PLATFORM_ID, "ordering", b"")
        return chosen

    violated = False
    while remaining:
        codes = _collect_codes(ctx, indicators, referenced, remaining, lambda u: payment_list(u, winner_id))
        ref_id = _argmax_code(ctx, codes)
        ref = ctx.users[ref_id]
        ref_gain = int(_own_marginal(ref) * ref.profile.bid)

        marginal = _encrypted_marginal(ctx, indicators, referenced, winner)
        platform.send(ref_id, "forward_marginal", marginal.to_bytes())
        bid_term = apply_quotient(
            ai.public_paillier, marginal, QuotientHandle(numerator=scale_exact(ref.profile.bid, ctx.scale), divisor=ref_gain)
        )
        ctx.bus.count_op(ref_id, "paillier_scale")
        ref.send(PLATFORM_ID, "bid_term", bid_term.to_bytes() if bid_term is not None else b"")
        eta = _eta_term(ctx, marginal, len(covered | gamma_i))
        term = eta if bid_term is None else compare(bid_term, eta, encrypted_min)
        p_hat = compare(p_hat, term, encrypted_max)

        added = _coverage_union(ctx, covered, ref)
        threshold = _threshold_code(ctx, len(covered | added), payment_list(PLATFORM_ID, winner_id))
        covered |= added
        referenced.append(ref_id)
        remaining.remove(ref_id)
        if codes[ref_id] < threshold:
            violated = True
            break

    if not violated:
        # referenced greedy exhausted U': the winner may still enter last
        marginal = _encrypted_marginal(ctx, indicators, referenced, winner)
        p_hat = compare(p_hat, _eta_term(ctx, marginal, len(covered | gamma_i)), encrypted_max)

    _post_code(ctx, platform, p_hat.value, settlement_list(winner_id), PayloadKind.PLATFORM_COMMITMENT)
    platform.send(AI_ID, "decrypt_request", p_hat.to_bytes())
    scaled = ai.decrypt(p_hat)
    ai.send(PLATFORM_ID, "payment_value", encode_ints(scaled))
    return Fraction(scaled, ctx.scale)


def run_pvi_s(config: AuctionConfig, true_profiles: Sequence[SensingProfile]) -> RunTranscript:
    if config.job_model is not JobModel.SUBMODULAR:
        raise UsageError("PVI-S runs submodular coverage jobs; use run_pvi_h otherwise")
    ctx = _setup(config, true_profiles)
    logger.info(
        f"PVI-S run {config.tid} started",
        extra={"component": "Protocol", "users": len(ctx.users), "points": len(ctx.ground)},
    )

    ctx.bus.enter_phase(Phase.COMMITMENT, 0)
    _commit_s(ctx)
    appeals = _post_at_deadline(ctx)
    active = [u for u in ctx.users if ctx.board.first_posted(PayloadKind.COMMITMENT, u) is not None]

    winners: list[str] = []
    payments: dict[str, Fraction] = {}
    withdrawn: list[str] = []
    if config.budget > 0 and active:
        m = len(ctx.ground)
        ctx.scale = fixed_point_scale(config.bid_domain, config.budget, m, config.settings.scale_headroom)
        bound = ctx.scale * max(m, 1) * max(config.bid_domain[-1], config.budget)
        if 2 * bound >= ctx.ai.public_paillier.n:
            raise ScaleArithmeticError(f"Scale {ctx.scale} overflows the Paillier plaintext space")
        ctx.ai.omega_book = build_codebook(
            omega_domain(config.bid_domain, config.budget, m),
            config.settings.code_bits,
            seeded_rng(config.seed ^ OMEGA_SALT),
        )
        indicators = CoverageIndicator.from_profiles((ctx.users[u].profile for u in active), ctx.ground)

        ctx.bus.enter_phase(Phase.WINNER)
        winners, gammas = _select_winners_s(ctx, active, indicators, withdrawn)

        ctx.bus.enter_phase(Phase.PAYMENT)
        eligible = [u for u in active if u not in withdrawn]
        for winner_id in winners:
            others = [u for u in eligible if u != winner_id]
            payments[winner_id] = _critical_payment_s(ctx, winner_id, others, indicators, gammas[winner_id])

    ledger = ctx.platform.settle(payments)
    _post_outcomes(ctx, {u: 1 for u in winners}, ledger)
    outcome = AuctionOutcome(winners=tuple(winners), allocation={u: 1 for u in winners}, payments=ledger)

    ctx.bus.enter_phase(Phase.VERIFICATION, config.deadline + 1)
    ctx.ai.release_key(config.deadline + 1)
    transcript = RunTranscript(
        protocol="pvi-s", config=config, outcome=outcome, context=ctx, appeals=appeals, withdrawn=withdrawn
    )
    _verification_phase(transcript)
    logger.info(
        f"PVI-S run {config.tid} finished",
        extra={"component": "Protocol", "winners": len(winners), "audits": len(transcript.audits)},
    )
    return transcript


def run_protocol(config: AuctionConfig, true_profiles: Sequence[SensingProfile]) -> RunTranscript:
    if config.job_model is JobModel.SUBMODULAR:
        return run_pvi_s(config, true_profiles)
    return run_pvi_h(config, true_profiles)


# --- verification ---------------------------------------------------------

def _recompute(ctx: RunContext, ai: AuctionIssuer) -> AuctionOutcome:
    """Issuer-side replay of the auction from the board and revealed randomness"""
    if ctx.audit_cache is not None:
        return ctx.audit_cache
    cfg = ctx.config
    params = ctx.suite.params
    tsk = _released_key(ctx.board)
    opened, _ = _open_board(ctx.board, params, tsk, cfg.tid)
    submodular = cfg.job_model is JobModel.SUBMODULAR

    profiles = []
    for user_id, value in opened.items():
        user = ctx.users.get(user_id)
        if user is None:
            continue
        ai.send(user_id, "reveal_request", b"")
        randomness, signature = user.reveal_for_audit(ai)
        try:
            if submodular:
                packed = ai.decrypt(PaillierCiphertext(value, ai.public_paillier.key_id))
                bid_index, mask = unpack_pair(packed, len(ctx.ground))
                bid = cfg.bid_domain[bid_index]
                assignments = _mask_labels(ctx.ground, mask)
                message = scaled_message(Fraction(len(assignments)) / bid, cfg.settings.sign_digits)
                profile = SensingProfile(user_id=user_id, bid=bid, assignments=assignments)
            else:
                if randomness is None:
                    raise DecryptionError("no randomness revealed")
                public = ctx.platform.public_paillier
                message = paillier_open_with_randomness(public, PaillierCiphertext(value, public.key_id), randomness)
                bid_code, limit_code = unpack_pair(message, cfg.settings.code_bits)
                profile = SensingProfile(
                    user_id=user_id, bid=ai.opens_inverse(bid_code, "bid"), limit=ai.opens_inverse(limit_code, "limit")
                )
        except (DecryptionError, CodeLookupError, DomainError, IndexError) as e:
            logger.warning(f"Audit skips {user_id}: {e}", extra={"component": "Verification"})
            continue
        if signature is None or not blind_verify(params, ai.key.y, message, signature):
            logger.warning(f"Audit skips {user_id}: profile not signed by the issuer", extra={"component": "Verification"})
            continue
        profiles.append(profile)

    withdrawn = {e.subject for e in ctx.board.entries_of(PayloadKind.WITHDRAWAL)}
    profiles = [p for p in profiles if p.user_id not in withdrawn]
    ctx.audit_cache = run_mechanism(cfg.job_model, profiles, cfg.budget, ctx.ground if submodular else None)
    return ctx.audit_cache


def verify_payment(user_id: str, transcript: RunTranscript, ai: Optional[AuctionIssuer] = None) -> VerificationResult:
    ctx = transcript.context
    ai = ai or ctx.ai
    if user_id not in ctx.users:
        raise UsageError(f"{user_id} did not take part in run {ctx.config.tid}")
    ctx.users[user_id].send(AI_ID, "audit_request", user_id.encode())
    if ctx.board.first_posted(PayloadKind.COMMITMENT, user_id) is None:
        raise VerificationError(f"No commitment of {user_id} on the board")

    expected = _recompute(ctx, ai)
    expected_payment = expected.payment_of(user_id)
    observed_payment = ctx.platform.ledger.get(user_id, Fraction(0))
    expected_allocation = expected.allocation_of(user_id)
    observed_allocation = transcript.outcome.allocation_of(user_id)
    ai.send(user_id, "audit_result", encode_blobs(_format(expected_payment), encode_ints(expected_allocation)))

    matches = expected_payment == observed_payment and expected_allocation == observed_allocation
    return VerificationResult(
        user_id=user_id,
        status=AuditStatus.CONFIRMED if matches else AuditStatus.DISCREPANCY,
        expected=expected_payment,
        observed=observed_payment,
        expected_allocation=expected_allocation,
        observed_allocation=observed_allocation,
    )


# --- deterrence game ------------------------------------------------------

@dataclass(frozen=True)
class GameEstimate:
    mean: float
    stderr: float
    trials: int

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - target) <= sigmas * self.stderr


def expected_cheat_utility(policy: VerificationPolicy, cheat_gain) -> Fraction:
    """(1 - alpha) * gain - alpha * F"""
    return (1 - policy.alpha) * Fraction(cheat_gain) - policy.alpha * policy.fine


def cheating_game(policy: VerificationPolicy, cheat_gain, trials: int, seed: int) -> GameEstimate:
    """Monte Carlo utility of a cheating platform: gain if unaudited, -F if audited"""
    if trials < MIN_GAME_TRIALS:
        raise DomainError(f"At least {MIN_GAME_TRIALS} trials are required, got {trials}")
    rng = np.random.default_rng(seed)
    audited = rng.random(trials) < float(policy.alpha)
    utility = np.where(audited, -float(policy.fine), float(cheat_gain))
    return GameEstimate(
        mean=float(utility.mean()),
        stderr=float(utility.std(ddof=1) / np.sqrt(trials)),
        trials=trials,
    )


# --- privacy scans --------------------------------------------------------

USER_PRIVATE_KINDS = ("profile", "marginal", "code", "admission")


def first_failing_record(transcript: RunTranscript) -> Optional[ViewEntry]:
    for entry in transcript.context.platform.view.of_kind("profile"):
        if entry.subject is None:
            return entry
    return None


def anonymity_set_size(transcript: RunTranscript) -> int:
    """Decommitted non-winners the identity-free record could belong to"""
    winners = set(transcript.outcome.winners)
    return len({e.subject for e in transcript.context.platform.view.of_kind("code")} - winners - {None})


def secrecy_violations(transcript: RunTranscript) -> list[str]:
    """Structural leaks found in the party views and the message log of a run.

    Users only ever talk to the platform, the issuer and the board; an
    envelope between two users discloses the sender's part in the auction.
    Set-union coverage records are outside this scan: the union reveals the
    candidate's new points by construction.
    """
    ctx = transcript.context
    release_round = ctx.config.deadline + 1
    winners = set(transcript.outcome.winners) | {PHANTOM_ID}
    problems = []

    for envelope in ctx.bus.envelopes:
        if envelope.sender in ctx.users and envelope.receiver in ctx.users and envelope.sender != envelope.receiver:
            problems.append(f"{envelope.receiver} received {envelope.kind} from {envelope.sender} at round {envelope.round}")

    for user_id, user in ctx.users.items():
        for entry in user.view.entries:
            if entry.kind in USER_PRIVATE_KINDS and entry.subject != user_id:
                problems.append(f"{user_id} learned {entry.kind} of {entry.subject}")

    anonymous = 0
    for entry in ctx.platform.view.of_kind("profile"):
        if entry.subject is None:
            anonymous += 1
        elif entry.subject not in winners:
            problems.append(f"platform learned the profile of non-winner {entry.subject}")
    if anonymous > (1 if transcript.protocol == "pvi-h" else 0):
        problems.append(f"platform holds {anonymous} identity-free profile records")

    for party in ctx.parties():
        for entry in party.view.of_kind("decommit"):
            if entry.round < release_round:
                problems.append(f"{party.party_id} decommitted {entry.subject} at round {entry.round}")
    return problems
