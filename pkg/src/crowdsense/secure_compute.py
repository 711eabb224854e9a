"""Encrypted computations on coverage: marginal utility per bid, set union,
fixed-point quotients and issuer-assisted comparisons.
"""
import logging
import math
import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from Crypto.Util.number import inverse

from .crypto_primitives import (
    PaillierCiphertext,
    PaillierKey,
    PaillierKeypair,
    _public,
    paillier_add,
    paillier_decrypt,
    paillier_encrypt_random,
    paillier_rerandomize,
    paillier_scale,
)
from .errors import DomainError, EncodingError, ScaleArithmeticError, UsageError
from .mechanisms import SensingProfile

logger = logging.getLogger("app")


class Ordering(str, Enum):
    LESS = "less"
    EQUAL = "equal"
    GREATER = "greater"


# --- marginal utility per bid ---------------------------------------------

@dataclass(frozen=True)
class CoverageIndicator:
    """Per-user indicator bits over the ordered data points tau_1..tau_m"""

    points: tuple
    bits: Mapping[str, tuple]

    @classmethod
    def from_profiles(cls, profiles: Iterable[SensingProfile], ground_set: Iterable[str]) -> "CoverageIndicator":
        points = tuple(sorted(ground_set))
        bits = {p.user_id: tuple(int(tau in p.assignments) for tau in points) for p in profiles}
        return cls(points=points, bits=bits)

    def aggregate(self, S: Iterable[str]) -> tuple:
        """c_{k,S} = 1 - prod_j (1 - c_{j,k,S})"""
        members = [self.bits[u] for u in S]
        return tuple(1 - math.prod(1 - row[k] for row in members) for k in range(len(self.points)))

    def coverage(self, S: Iterable[str]) -> int:
        return sum(self.aggregate(S))


def mpep_marginal_per_bid(indicators: CoverageIndicator, S: Iterable[str], i: str, b_i) -> Fraction:
    """(U(S u {i}) - U(S)) / b_i; only the candidate receives the result"""
    S = list(S)
    b_i = Fraction(b_i)
    if b_i <= 0:
        raise DomainError(f"Bid of {i} must be positive")
    if i in S:
        raise UsageError(f"{i} is already a member of S")
    return Fraction(indicators.coverage(S + [i]) - indicators.coverage(S)) / b_i


# --- private set union ----------------------------------------------------

@dataclass(frozen=True)
class AssignmentEncoder:
    """Maps ground-set labels to distinct nonzero integers offset + index"""

    labels: tuple
    offset: int = 1 << 16

    @classmethod
    def for_ground_set(cls, ground_set: Iterable[str], offset: int = 1 << 16) -> "AssignmentEncoder":
        return cls(labels=tuple(sorted(ground_set)), offset=offset)

    def encode(self, label: str) -> int:
        try:
            return self.offset + self.labels.index(label)
        except ValueError:
            raise EncodingError(f"{label!r} is not part of the ground set")

    def decode(self, value: int) -> str:
        index = value - self.offset
        if not 0 <= index < len(self.labels):
            raise EncodingError(f"{value} does not encode a ground-set label")
        return self.labels[index]

    def encode_set(self, labels: Iterable[str]) -> set[int]:
        return {self.encode(label) for label in labels}

    def decode_set(self, values: Iterable[int]) -> frozenset:
        return frozenset(self.decode(v) for v in values)


@dataclass(frozen=True)
class EncryptedSetPoly:
    """Encrypted coefficients of f_S(x) = prod (x - tau), lowest degree first"""

    coefficients: tuple

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


def _check_encodable(values: Iterable[int], n: int) -> None:
    for value in values:
        if not 0 < value < n:
            raise EncodingError(f"Assignment value {value} must lie in (0, n)")


def set_polynomial(values: Iterable[int], modulus: int) -> list[int]:
    coefficients = [1]
    for tau in sorted(values):
        shifted = [0] + coefficients
        for k, c in enumerate(coefficients):
            shifted[k] = (shifted[k] - tau * c) % modulus
        coefficients = shifted
    return coefficients


def encrypt_set_poly(values: Iterable[int], key: PaillierKey, rng: random.Random) -> EncryptedSetPoly:
    pub = _public(key)
    values = set(values)
    _check_encodable(values, pub.n)
    return EncryptedSetPoly(
        coefficients=tuple(paillier_encrypt_random(pub, c, rng)[0] for c in set_polynomial(values, pub.n))
    )


def evaluate_union_tuples(
    poly: EncryptedSetPoly, user_values: Iterable[int], key: PaillierKey, rng: random.Random
) -> list[tuple[PaillierCiphertext, PaillierCiphertext]]:
    """User side: (E(f(tau)*tau*r), E(f(tau)*r)) per element, shuffled"""
    pub = _public(key)
    user_values = sorted(set(user_values))
    _check_encodable(user_values, pub.n)
    tuples = []
    for tau in user_values:
        # Horner keeps every exponent at the size of tau
        f_tau = poly.coefficients[-1]
        for coefficient in reversed(poly.coefficients[:-1]):
            f_tau = paillier_add(pub, paillier_scale(pub, f_tau, tau), coefficient)
        r = rng.randrange(1, pub.n)
        blind = paillier_scale(pub, f_tau, r)
        tuples.append((
            paillier_rerandomize(pub, paillier_scale(pub, blind, tau), rng),
            paillier_rerandomize(pub, blind, rng),
        ))
    rng.shuffle(tuples)
    return tuples


def decode_union_tuples(key: PaillierKeypair, tuples: Sequence[tuple[PaillierCiphertext, PaillierCiphertext]]) -> set[int]:
    """Platform side: x * y^-1 for every tuple that does not decrypt to (0, 0)"""
    added = set()
    for tagged, blind in tuples:
        y = paillier_decrypt(key, blind)
        if y == 0:
            continue
        x = paillier_decrypt(key, tagged)
        added.add(x * inverse(y, key.n) % key.n)
    return added


def private_set_union(platform_set: Iterable[int], user_set: Iterable[int], key: PaillierKeypair, rng: random.Random) -> set[int]:
    poly = encrypt_set_poly(platform_set, key, rng)
    return decode_union_tuples(key, evaluate_union_tuples(poly, user_set, key, rng))


# --- fixed-point payment arithmetic ---------------------------------------

def fixed_point_scale(bid_domain: Iterable, budget, m: int, headroom: int = 1) -> int:
    """Global scale Q making every payment-phase quotient an exact integer.

    Q = lcm(denominators) * lcm(numerators) * lcm(1..m) * headroom over the
    bid domain and budget, so Q*b/U, Q*U/b and Q*B/U are all integral.
    """
    values = [Fraction(b) for b in bid_domain]
    if Fraction(budget) > 0:
        values.append(Fraction(budget))
    if not values:
        raise DomainError("Cannot derive a scale from an empty domain")
    return (
        math.lcm(*(v.denominator for v in values))
        * math.lcm(*(v.numerator for v in values))
        * math.lcm(*range(1, max(m, 1) + 1))
        * headroom
    )


def scale_exact(value, Q: int) -> int:
    scaled = Fraction(value) * Q
    if scaled.denominator != 1:
        raise ScaleArithmeticError(f"{value} * {Q} is not an integer")
    return int(scaled)


@dataclass(frozen=True)
class QuotientHandle:
    """Plaintext factor numerator/divisor known only to the party holding it.

    The numerator is already Q-scaled; divisor 0 stands for an unbounded
    factor (a zero marginal in the denominator).
    """

    numerator: int
    divisor: int

    @property
    def unbounded(self) -> bool:
        return self.divisor == 0

    def exponent(self, n: int) -> int:
        if math.gcd(self.divisor, n) != 1:
            raise ScaleArithmeticError(f"Divisor {self.divisor} is not invertible modulo n")
        return self.numerator * inverse(self.divisor, n) % n


def quotient_handle(value, divisor: int, Q: int) -> QuotientHandle:
    return QuotientHandle(numerator=scale_exact(value, Q), divisor=divisor)


def apply_quotient(key: PaillierKey, ciphertext: PaillierCiphertext, handle: QuotientHandle) -> Optional[PaillierCiphertext]:
    """E(x) -> E(x * numerator / divisor), or None when the factor is unbounded"""
    if handle.unbounded:
        return None
    pub = _public(key)
    return paillier_scale(pub, ciphertext, handle.exponent(pub.n))


def encrypted_payment_terms(
    key: PaillierKey,
    E_ai_of_Uij: PaillierCiphertext,
    e_ij: QuotientHandle,
    e_pj: QuotientHandle,
) -> tuple[Optional[PaillierCiphertext], PaillierCiphertext]:
    """E(Q*U_i(j)*b_ij/U_ij) and E(Q*U_i(j)*B/U(T u {i})).

    The bid term is None when it is unbounded.
    """
    if e_pj.unbounded:
        raise ScaleArithmeticError("Coverage threshold divisor cannot be zero")
    return apply_quotient(key, E_ai_of_Uij, e_ij), apply_quotient(key, E_ai_of_Uij, e_pj)


# --- comparison oracle ----------------------------------------------------

class ComparisonAuthority:
    """Decrypts operand pairs and hands back only an ordering token"""

    def __init__(self, key: PaillierKeypair, on_compare: Optional[Callable[[Ordering], None]] = None):
        self.key = key
        self.comparisons = 0
        self._on_compare = on_compare

    @property
    def key_id(self) -> str:
        return self.key.key_id

    def compare(self, a: PaillierCiphertext, b: PaillierCiphertext) -> Ordering:
        if a.key_id != self.key_id or b.key_id != self.key_id:
            raise UsageError("Comparison operands were not encrypted under the authority key")
        x, y = paillier_decrypt(self.key, a), paillier_decrypt(self.key, b)
        token = Ordering.LESS if x < y else Ordering.GREATER if x > y else Ordering.EQUAL
        self.comparisons += 1
        if self._on_compare is not None:
            self._on_compare(token)
        return token


def encrypted_compare(a: PaillierCiphertext, b: PaillierCiphertext, ai: ComparisonAuthority) -> Ordering:
    if a.key_id != b.key_id:
        raise UsageError(f"Key mismatch: {a.key_id} vs {b.key_id}")
    return ai.compare(a, b)


def encrypted_max(a: PaillierCiphertext, b: PaillierCiphertext, ai: ComparisonAuthority) -> PaillierCiphertext:
    return b if encrypted_compare(a, b, ai) is Ordering.LESS else a


def encrypted_min(a: PaillierCiphertext, b: PaillierCiphertext, ai: ComparisonAuthority) -> PaillierCiphertext:
    return b if encrypted_compare(a, b, ai) is Ordering.GREATER else a
