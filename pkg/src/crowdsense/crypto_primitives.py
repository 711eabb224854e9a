"""Number-theoretic building blocks shared by both auction protocols.

Everything here is a pure function over immutable inputs plus an explicit
``random.Random``; a run seeds exactly one generator and threads it through.
The simulation needs reproducibility, not secrecy against the host, so the
seeded generator also feeds prime generation via ``randbytes``.
"""
import functools
import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence, Union

from Crypto.Cipher import AES
from Crypto.Hash import SHA256
from Crypto.Util.number import getPrime, inverse, isPrime

from .errors import (
    CodeLookupError,
    DecryptionError,
    DomainError,
    EncodingError,
    KeyGenerationError,
    RetryExhaustedError,
    TimingError,
    UsageError,
)

logger = logging.getLogger("app")

MAX_PRIME_ATTEMPTS = 64
MAX_SAFE_PRIME_ATTEMPTS = 20_000
MAX_BLIND_ATTEMPTS = 32
PRIMALITY_ERROR = 2.0 ** -128
NONCE_BYTES = 12


def seeded_rng(seed: int) -> random.Random:
    return random.Random(seed)


# --- canonical byte codec -------------------------------------------------

def encode_blobs(*blobs: bytes) -> bytes:
    """Concatenate byte strings, each prefixed with its 4-byte big-endian length"""
    out = bytearray()
    for blob in blobs:
        out += len(blob).to_bytes(4, "big") + blob
    return bytes(out)


def decode_blobs(data: bytes) -> list[bytes]:
    blobs = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise EncodingError("Truncated length prefix")
        size = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + size > len(data):
            raise EncodingError("Truncated blob")
        blobs.append(data[pos:pos + size])
        pos += size
    return blobs


def int_to_bytes(value: int) -> bytes:
    if value < 0:
        raise EncodingError(f"Cannot encode negative integer {value}")
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def encode_ints(*values: int) -> bytes:
    """Canonical big-endian, length-prefixed encoding of non-negative integers"""
    return encode_blobs(*(int_to_bytes(v) for v in values))


def decode_ints(data: bytes) -> list[int]:
    return [int.from_bytes(blob, "big") for blob in decode_blobs(data)]


def digest(data: bytes) -> str:
    return SHA256.new(data).hexdigest()


def hash_to_int(*parts: bytes) -> int:
    return int.from_bytes(SHA256.new(encode_blobs(*parts)).digest(), "big")


# --- groups ---------------------------------------------------------------

@dataclass(frozen=True)
class GroupParams:
    """Order-q subgroup of Z_p* for a safe prime p = 2q + 1"""

    p: int
    q: int
    g: int
    h: int

    def validate(self) -> None:
        if (self.p - 1) % self.q:
            raise DomainError("q must divide p-1")
        for name, gen in (("g", self.g), ("h", self.h)):
            if gen in (0, 1) or pow(gen, self.q, self.p) != 1:
                raise DomainError(f"{name} is not an element of order q")

    @property
    def element_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def random_exponent(self, rng: random.Random) -> int:
        return rng.randrange(1, self.q)

    def contains(self, element: int) -> bool:
        return 0 < element < self.p and pow(element, self.q, self.p) == 1

    def to_bytes(self) -> bytes:
        return encode_ints(self.p, self.q, self.g, self.h)


def _subgroup_element(p: int, rng: random.Random, exclude: Sequence[int] = ()) -> int:
    while True:
        x = rng.randrange(2, p - 1)
        element = x * x % p
        if element != 1 and element not in exclude:
            return element


@functools.lru_cache(maxsize=16)
def generate_group(bits: int, rng_seed: int) -> GroupParams:
    """Safe-prime group with two independently drawn generators.

    h is sampled on its own, so nobody in the simulation knows log_g(h);
    this stands in for a trusted setup.
    """
    if bits < 48:
        raise DomainError(f"Group size {bits} is below the supported minimum of 48 bits")
    rng = seeded_rng(rng_seed)
    for attempt in range(MAX_SAFE_PRIME_ATTEMPTS):
        q = getPrime(bits - 1, randfunc=rng.randbytes)
        p = 2 * q + 1
        if p.bit_length() == bits and isPrime(p, false_positive_prob=PRIMALITY_ERROR, randfunc=rng.randbytes):
            g = _subgroup_element(p, rng)
            h = _subgroup_element(p, rng, exclude=(g,))
            params = GroupParams(p=p, q=q, g=g, h=h)
            logger.debug(f"Generated {bits}-bit safe-prime group after {attempt + 1} candidates")
            return params
    raise KeyGenerationError(f"No {bits}-bit safe prime found in {MAX_SAFE_PRIME_ATTEMPTS} attempts")


def to_group(value: int, params: GroupParams) -> int:
    """Embed 1 <= value <= q into the order-q subgroup"""
    if not 1 <= value <= params.q:
        raise DomainError(f"Value {value} cannot be embedded into the group")
    return value if pow(value, params.q, params.p) == 1 else params.p - value


def from_group(element: int, params: GroupParams) -> int:
    return element if element <= params.q else params.p - element


# --- Paillier -------------------------------------------------------------

@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    g_n: int

    @cached_property
    def nsquare(self) -> int:
        return self.n * self.n

    @cached_property
    def key_id(self) -> str:
        return digest(encode_ints(self.n, self.g_n))[:16]

    @property
    def ciphertext_bytes(self) -> int:
        return (self.nsquare.bit_length() + 7) // 8

    def random_unit(self, rng: random.Random) -> int:
        while True:
            r = rng.randrange(1, self.n)
            if math.gcd(r, self.n) == 1:
                return r


@dataclass(frozen=True)
class PaillierKeypair:
    public: PaillierPublicKey
    lam: int = field(repr=False)
    mu: int = field(repr=False)
    p: int = field(repr=False)
    q: int = field(repr=False)

    @property
    def n(self) -> int:
        return self.public.n

    @property
    def g_n(self) -> int:
        return self.public.g_n

    @property
    def key_id(self) -> str:
        return self.public.key_id


PaillierKey = Union[PaillierPublicKey, PaillierKeypair]


@dataclass(frozen=True)
class PaillierCiphertext:
    value: int
    key_id: str

    def to_bytes(self) -> bytes:
        return encode_ints(self.value)


def _public(key: PaillierKey) -> PaillierPublicKey:
    return key.public if isinstance(key, PaillierKeypair) else key


@functools.lru_cache(maxsize=32)
def paillier_keygen(bit_length: int, rng_seed: int) -> PaillierKeypair:
    if bit_length < 64 or bit_length % 2:
        raise DomainError(f"Paillier modulus size must be even and >= 64, got {bit_length}")
    rng = seeded_rng(rng_seed)
    half = bit_length // 2
    for _ in range(MAX_PRIME_ATTEMPTS):
        p = getPrime(half, randfunc=rng.randbytes)
        q = getPrime(half, randfunc=rng.randbytes)
        n = p * q
        if p == q or n.bit_length() != bit_length:
            continue
        lam = (p - 1) * (q - 1)
        if math.gcd(lam, n) != 1:
            continue
        return PaillierKeypair(PaillierPublicKey(n=n, g_n=n + 1), lam=lam, mu=inverse(lam, n), p=p, q=q)
    raise KeyGenerationError(f"Could not generate a {bit_length}-bit Paillier modulus")


def paillier_encrypt(key: PaillierKey, m: int, randomness: int) -> PaillierCiphertext:
    pub = _public(key)
    if not 0 <= m < pub.n:
        raise DomainError(f"Plaintext outside [0, n): {m}")
    if not 0 < randomness < pub.n or math.gcd(randomness, pub.n) != 1:
        raise DomainError("Randomness must be a unit modulo n")
    # g_n = n + 1, so g_n^m = 1 + m*n (mod n^2)
    value = (1 + m * pub.n) * pow(randomness, pub.n, pub.nsquare) % pub.nsquare
    return PaillierCiphertext(value=value, key_id=pub.key_id)


def paillier_encrypt_random(key: PaillierKey, m: int, rng: random.Random) -> tuple[PaillierCiphertext, int]:
    r = _public(key).random_unit(rng)
    return paillier_encrypt(key, m, r), r


def paillier_decrypt(key: PaillierKeypair, c: PaillierCiphertext) -> int:
    if c.key_id != key.key_id:
        raise UsageError("Ciphertext was produced under a different key")
    nsquare = key.public.nsquare
    if not 0 < c.value < nsquare:
        raise DecryptionError("Ciphertext outside Z_{n^2}")
    return (pow(c.value, key.lam, nsquare) - 1) // key.n * key.mu % key.n


def paillier_open_with_randomness(key: PaillierKey, c: PaillierCiphertext, randomness: int) -> int:
    """Recover the plaintext from a ciphertext and its revealed randomness"""
    pub = _public(key)
    if c.key_id != pub.key_id:
        raise UsageError("Ciphertext was produced under a different key")
    try:
        mask = inverse(pow(randomness, pub.n, pub.nsquare), pub.nsquare)
    except ValueError as e:
        raise DecryptionError(f"Revealed randomness is not a unit: {e}")
    g_m = c.value * mask % pub.nsquare
    if (g_m - 1) % pub.n:
        raise DecryptionError("Revealed randomness does not match the ciphertext")
    return (g_m - 1) // pub.n


def _same_key(a: PaillierCiphertext, b: PaillierCiphertext) -> None:
    if a.key_id != b.key_id:
        raise UsageError(f"Key mismatch: {a.key_id} vs {b.key_id}")


def paillier_add(key: PaillierKey, a: PaillierCiphertext, b: PaillierCiphertext) -> PaillierCiphertext:
    _same_key(a, b)
    pub = _public(key)
    return PaillierCiphertext(value=a.value * b.value % pub.nsquare, key_id=a.key_id)


def paillier_scale(key: PaillierKey, a: PaillierCiphertext, k: int) -> PaillierCiphertext:
    pub = _public(key)
    if a.key_id != pub.key_id:
        raise UsageError("Ciphertext was produced under a different key")
    return PaillierCiphertext(value=pow(a.value, k, pub.nsquare), key_id=a.key_id)


def paillier_rerandomize(key: PaillierKey, a: PaillierCiphertext, rng: random.Random) -> PaillierCiphertext:
    pub = _public(key)
    r = pub.random_unit(rng)
    return PaillierCiphertext(value=a.value * pow(r, pub.n, pub.nsquare) % pub.nsquare, key_id=a.key_id)


# --- discrete-log signatures ----------------------------------------------

@dataclass(frozen=True)
class DlogKeypair:
    params: GroupParams = field(repr=False)
    x: int = field(repr=False)
    y: int


@dataclass(frozen=True)
class DlogSignature:
    e: int
    s: int

    def to_bytes(self) -> bytes:
        return encode_ints(self.e, self.s)

    def hex(self) -> str:
        return self.to_bytes().hex()


def dlog_keygen(params: GroupParams, rng: random.Random) -> DlogKeypair:
    x = params.random_exponent(rng)
    return DlogKeypair(params=params, x=x, y=pow(params.g, x, params.p))


def dlog_sign(key: DlogKeypair, message: bytes, rng: random.Random) -> DlogSignature:
    """Schnorr signature over the group"""
    params = key.params
    k = params.random_exponent(rng)
    commitment = pow(params.g, k, params.p)
    e = hash_to_int(int_to_bytes(commitment), message) % params.q
    return DlogSignature(e=e, s=(k + key.x * e) % params.q)


def dlog_verify(params: GroupParams, y: int, message: bytes, signature: DlogSignature) -> bool:
    if not (0 <= signature.e < params.q and 0 <= signature.s < params.q):
        return False
    commitment = pow(params.g, signature.s, params.p) * pow(y, params.q - signature.e, params.p) % params.p
    return hash_to_int(int_to_bytes(commitment), message) % params.q == signature.e


# --- blinded Nyberg-Rueppel signatures ------------------------------------

@dataclass(frozen=True)
class BlindSignature:
    r: int
    s: int

    def to_bytes(self) -> bytes:
        return encode_ints(self.r, self.s)


@dataclass(frozen=True)
class BlindingState:
    """Signee-side secrets for one signing session"""

    message: int
    alpha: int = field(repr=False)
    beta: int = field(repr=False)
    r: int
    m_tilde: int


@dataclass(frozen=True)
class SignerTranscript:
    """Everything the signer observes during one session"""

    r_tilde: int
    m_tilde: int
    s_tilde: int


def scaled_message(value: Union[Fraction, int], digits: int) -> int:
    """Integer message floor(10^k * value) for signing rational values"""
    if digits < 0:
        raise DomainError("Scaling digits must be non-negative")
    return math.floor(Fraction(value) * 10 ** digits)


def signer_commit(params: GroupParams, rng: random.Random) -> tuple[int, int]:
    k_tilde = params.random_exponent(rng)
    return k_tilde, pow(params.g, k_tilde, params.p)


def signee_blind(params: GroupParams, message: int, r_tilde: int, rng: random.Random) -> BlindingState:
    if not 0 < message < params.p:
        raise DomainError(f"Message {message} is not in Z_p*")
    for _ in range(MAX_BLIND_ATTEMPTS):
        alpha = rng.randrange(0, params.q)
        beta = params.random_exponent(rng)
        r = message * pow(params.g, alpha, params.p) * pow(r_tilde, beta, params.p) % params.p
        m_tilde = r * inverse(beta, params.q) % params.q
        if m_tilde:
            return BlindingState(message=message, alpha=alpha, beta=beta, r=r, m_tilde=m_tilde)
    raise RetryExhaustedError(f"Blinded message stayed outside Z_q* after {MAX_BLIND_ATTEMPTS} attempts")


def signer_respond(key: DlogKeypair, k_tilde: int, m_tilde: int) -> int:
    return (m_tilde * key.x + k_tilde) % key.params.q


def signee_unblind(params: GroupParams, state: BlindingState, s_tilde: int) -> BlindSignature:
    return BlindSignature(r=state.r, s=(s_tilde * state.beta + state.alpha) % params.q)


def blind_sign(signer_key: DlogKeypair, message: int, rng: random.Random) -> tuple[BlindSignature, SignerTranscript]:
    """Run the four-step interactive session locally"""
    params = signer_key.params
    k_tilde, r_tilde = signer_commit(params, rng)
    state = signee_blind(params, message, r_tilde, rng)
    s_tilde = signer_respond(signer_key, k_tilde, state.m_tilde)
    signature = signee_unblind(params, state, s_tilde)
    return signature, SignerTranscript(r_tilde=r_tilde, m_tilde=state.m_tilde, s_tilde=s_tilde)


def blind_verify(params: GroupParams, y: int, message: int, signature: BlindSignature) -> bool:
    """Check m = g^(-s) * y^r * r (mod p)"""
    if not (0 < signature.r < params.p and 0 <= signature.s < params.q):
        return False
    recovered = (
        pow(params.g, (-signature.s) % params.q, params.p)
        * pow(y, signature.r, params.p)
        * signature.r
        % params.p
    )
    return recovered == message % params.p


# --- 1-out-of-z oblivious transfer ----------------------------------------

@dataclass(frozen=True)
class OtReceiverState:
    choice: int
    r: int = field(repr=False)
    y: int


def ot_request(params: GroupParams, choice: int, z: int, rng: random.Random) -> OtReceiverState:
    if not 1 <= choice <= z:
        raise DomainError(f"OT choice {choice} outside [1, {z}]")
    r = params.random_exponent(rng)
    y = pow(params.g, r, params.p) * pow(params.h, choice, params.p) % params.p
    return OtReceiverState(choice=choice, r=r, y=y)


def ot_respond(params: GroupParams, messages: Sequence[int], y: int, rng: random.Random) -> list[tuple[int, int]]:
    """Sender side: c_i = (g^k_i, m_i * (y / h^i)^k_i)"""
    p = params.p
    h_inv = pow(params.h, -1, p)
    base = y
    replies = []
    for m in messages:
        base = base * h_inv % p
        k = params.random_exponent(rng)
        replies.append((pow(params.g, k, p), m * pow(base, k, p) % p))
    return replies


def ot_recover(params: GroupParams, state: OtReceiverState, replies: Sequence[tuple[int, int]]) -> int:
    a, b = replies[state.choice - 1]
    return b * pow(pow(a, state.r, params.p), -1, params.p) % params.p


def ot_transfer(sender_messages: Sequence[int], choice: int, params: GroupParams, rng: random.Random) -> int:
    z = len(sender_messages)
    if z == 0:
        raise DomainError("OT needs at least one message")
    for m in sender_messages:
        if not params.contains(m):
            raise DomainError("OT messages must lie in the subgroup generated by g")
    state = ot_request(params, choice, z, rng)
    replies = ot_respond(params, sender_messages, state.y, rng)
    return ot_recover(params, state, replies)


# Hashed variant for repeated fetches from one codebook: the sender fixes
# A = g^a once, so each transfer costs it a single exponentiation.

PAD_BITS = 256


def _ot_pad(request: int, index: int, key: int) -> int:
    return hash_to_int(int_to_bytes(request), int_to_bytes(index), int_to_bytes(key))


@dataclass(frozen=True)
class SessionOtRequest:
    choice: int
    r: int = field(repr=False)
    point: int


class OtSession:
    """Sender half of a hashed 1-out-of-z transfer over one message list.

    A receiver choosing c sends R = A^c * g^r; message j is masked with
    H(R, j, (R / A^j)^a), which equals H(R, c, A^r) only for j = c.
    """

    def __init__(self, params: GroupParams, messages: Sequence[int], rng: random.Random):
        if not messages:
            raise DomainError("OT needs at least one message")
        if any(not 0 <= m < 1 << PAD_BITS for m in messages):
            raise DomainError(f"Session OT messages must fit in {PAD_BITS} bits")
        self.params = params
        self.messages = tuple(messages)
        self._a = params.random_exponent(rng)
        self.public = pow(params.g, self._a, params.p)
        self._step = pow(pow(self.public, self._a, params.p), -1, params.p)

    def __len__(self) -> int:
        return len(self.messages)

    def respond(self, point: int) -> list[int]:
        if not self.params.contains(point):
            raise DomainError("OT request is not a subgroup element")
        p = self.params.p
        key = pow(point, self._a, p)
        masked = []
        for j, m in enumerate(self.messages, start=1):
            key = key * self._step % p
            masked.append(m ^ _ot_pad(point, j, key))
        return masked


def session_ot_request(params: GroupParams, public: int, choice: int, z: int, rng: random.Random) -> SessionOtRequest:
    if not 1 <= choice <= z:
        raise DomainError(f"OT choice {choice} outside [1, {z}]")
    r = params.random_exponent(rng)
    point = pow(public, choice, params.p) * pow(params.g, r, params.p) % params.p
    return SessionOtRequest(choice=choice, r=r, point=point)


def session_ot_recover(params: GroupParams, public: int, request: SessionOtRequest, masked: Sequence[int]) -> int:
    return masked[request.choice - 1] ^ _ot_pad(request.point, request.choice, pow(public, request.r, params.p))


# --- order-preserving codebooks -------------------------------------------

@dataclass(frozen=True)
class OrderPreservingCodebook:
    domain: tuple
    codes: tuple[int, ...]
    _by_value: dict = field(init=False, repr=False, compare=False)
    _by_code: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.domain) != len(self.codes):
            raise DomainError("Domain and code list differ in length")
        if any(a >= b for a, b in zip(self.codes, self.codes[1:])):
            raise DomainError("Codes must be strictly increasing")
        object.__setattr__(self, "_by_value", {v: i for i, v in enumerate(self.domain)})
        object.__setattr__(self, "_by_code", {c: i for i, c in enumerate(self.codes)})

    def __len__(self) -> int:
        return len(self.domain)

    def index_of(self, value) -> int:
        try:
            return self._by_value[value]
        except (KeyError, TypeError):
            raise DomainError(f"Value {value} is not in the declared domain")

    def encode(self, value) -> int:
        return self.codes[self.index_of(value)]

    def decode(self, code: int):
        try:
            return self.domain[self._by_code[code]]
        except KeyError:
            raise CodeLookupError(f"{code} is not a code of this table")


def build_codebook(domain: Sequence, code_bits: int, rng: random.Random) -> OrderPreservingCodebook:
    values = tuple(domain)
    if not values:
        raise DomainError("Domain must be nonempty")
    if any(a >= b for a, b in zip(values, values[1:])):
        raise DomainError("Domain must be strictly increasing")
    if 2 ** code_bits < 4 * len(values):
        raise DomainError(f"{code_bits}-bit codes leave no room for {len(values)} values")
    codes = tuple(sorted(rng.sample(range(1, 2 ** code_bits), len(values))))
    return OrderPreservingCodebook(domain=values, codes=codes)


@dataclass(frozen=True)
class EncodingTable:
    bid_book: OrderPreservingCodebook
    limit_book: OrderPreservingCodebook
    code_bits: int

    @property
    def bid_domain(self) -> tuple:
        return self.bid_book.domain

    @property
    def limit_domain(self) -> tuple:
        return self.limit_book.domain

    @property
    def bid_codes(self) -> tuple[int, ...]:
        return self.bid_book.codes

    @property
    def limit_codes(self) -> tuple[int, ...]:
        return self.limit_book.codes

    def book(self, kind: str) -> OrderPreservingCodebook:
        if kind == "bid":
            return self.bid_book
        if kind == "limit":
            return self.limit_book
        raise UsageError(f"Unknown codebook kind {kind!r}")


def opes_build(bid_domain: Sequence, limit_domain: Sequence, code_bits: int, rng_seed: int) -> EncodingTable:
    rng = seeded_rng(rng_seed)
    return EncodingTable(
        bid_book=build_codebook(bid_domain, code_bits, rng),
        limit_book=build_codebook(limit_domain, code_bits, rng),
        code_bits=code_bits,
    )


def opes_encode(table: EncodingTable, value, kind: str = "bid") -> int:
    return table.book(kind).encode(value)


def opes_decode(table: EncodingTable, code: int, kind: str = "bid"):
    return table.book(kind).decode(code)


# --- time-lapse commitments -----------------------------------------------

class TlcService:
    """Trusted key-release service with a logical clock.

    Commitments are ElGamal-KEM + AES-GCM under tpk; the private exponent is
    handed out only once the clock reaches release_time.
    """

    def __init__(self, params: GroupParams, release_time: int, rng: random.Random):
        self.params = params
        self.release_time = release_time
        self.current_time = 0
        self._tsk = params.random_exponent(rng)
        self.tpk = pow(params.g, self._tsk, params.p)

    @property
    def released(self) -> bool:
        return self.current_time >= self.release_time

    def advance_to(self, logical_time: int) -> None:
        if logical_time < self.current_time:
            raise UsageError("Logical clock cannot move backwards")
        self.current_time = logical_time

    def release_key(self) -> int:
        if not self.released:
            raise TimingError(
                f"Key requested at t={self.current_time}, released only at t={self.release_time}"
            )
        return self._tsk


def _session_key(shared: int) -> bytes:
    return SHA256.new(int_to_bytes(shared)).digest()


def tlc_commit(service: TlcService, payload: bytes, rng: random.Random) -> bytes:
    if service.released:
        raise TimingError("Commitments must be made before the release time")
    params = service.params
    k = params.random_exponent(rng)
    ephemeral = int_to_bytes(pow(params.g, k, params.p))
    nonce = rng.randbytes(NONCE_BYTES)
    cipher = AES.new(_session_key(pow(service.tpk, k, params.p)), AES.MODE_GCM, nonce=nonce)
    cipher.update(ephemeral)
    ciphertext, tag = cipher.encrypt_and_digest(payload)
    return encode_blobs(ephemeral, nonce, tag, ciphertext)


def open_commitment(params: GroupParams, tsk: int, commitment: bytes) -> bytes:
    try:
        ephemeral, nonce, tag, ciphertext = decode_blobs(commitment)
        eph = int.from_bytes(ephemeral, "big")
        if not 0 < eph < params.p:
            raise DecryptionError("Ephemeral key out of range")
        cipher = AES.new(_session_key(pow(eph, tsk, params.p)), AES.MODE_GCM, nonce=nonce)
        cipher.update(ephemeral)
        return cipher.decrypt_and_verify(ciphertext, tag)
    except DecryptionError:
        raise
    except (ValueError, EncodingError) as e:
        raise DecryptionError(f"Malformed commitment: {e}")


def tlc_open(service: TlcService, commitment: bytes) -> bytes:
    return open_commitment(service.params, service.release_key(), commitment)
