"""Plaintext budget-feasible mechanisms.

These run on exact rationals and serve as the oracle the encrypted protocols
must reproduce field for field.  Ties always go to the lowest user_id.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import DomainError, ScenarioError, UsageError

logger = logging.getLogger("app")


class JobModel(str, Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"
    SUBMODULAR = "submodular"

    @classmethod
    def parse(cls, text: str) -> "JobModel":
        aliases = {
            "h": cls.HOMOGENEOUS,
            "hom": cls.HOMOGENEOUS,
            "het": cls.HETEROGENEOUS,
            "sub": cls.SUBMODULAR,
            "s": cls.SUBMODULAR,
        }
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ScenarioError(f"Unknown job model: {text}")


@dataclass(frozen=True)
class SensingProfile:
    user_id: str
    bid: Fraction
    limit: int = 1
    assignments: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "bid", Fraction(self.bid))
        object.__setattr__(self, "assignments", frozenset(self.assignments))
        if self.bid <= 0:
            raise DomainError(f"Bid of {self.user_id} must be positive")
        if self.limit < 1:
            raise DomainError(f"Limit of {self.user_id} must be a positive integer")

    def with_bid(self, bid) -> "SensingProfile":
        return dataclasses.replace(self, bid=Fraction(bid))


@dataclass(frozen=True)
class AuctionOutcome:
    winners: tuple = ()
    allocation: Mapping[str, int] = field(default_factory=dict)
    payments: Mapping[str, Fraction] = field(default_factory=dict)
    per_job_price: Optional[Fraction] = None

    @property
    def total_payment(self) -> Fraction:
        return sum(self.payments.values(), Fraction(0))

    def payment_of(self, user_id: str) -> Fraction:
        return self.payments.get(user_id, Fraction(0))

    def allocation_of(self, user_id: str) -> int:
        return self.allocation.get(user_id, 0)

    def utility(self, user_id: str, true_cost: Fraction) -> Fraction:
        """Payment minus true cost of the allocated work (0 for losers)"""
        return self.payment_of(user_id) - self.allocation_of(user_id) * Fraction(true_cost)

    def is_budget_feasible(self, budget) -> bool:
        return self.total_payment <= Fraction(budget)

    def is_individually_rational(self, profiles: Iterable[SensingProfile]) -> bool:
        bids = {p.user_id: p.bid for p in profiles}
        return all(self.payment_of(u) >= self.allocation_of(u) * bids[u] for u in self.winners)


def _ranked(profiles: Iterable[SensingProfile]) -> list[SensingProfile]:
    return sorted(profiles, key=lambda p: (p.bid, p.user_id))


# --- homogeneous / heterogeneous ------------------------------------------

def run_homogeneous(profiles: Sequence[SensingProfile], budget) -> AuctionOutcome:
    """Largest k with b_k <= B/k; everyone paid min(B/k, b_{k+1})"""
    for profile in profiles:
        if profile.limit != 1:
            raise DomainError(f"Homogeneous jobs require limit 1, {profile.user_id} has {profile.limit}")
    return run_heterogeneous(profiles, budget)


def run_heterogeneous(profiles: Sequence[SensingProfile], budget) -> AuctionOutcome:
    budget = Fraction(budget)
    if budget <= 0 or not profiles:
        return AuctionOutcome()

    winners: list[str] = []
    allocation: dict[str, int] = {}
    assigned = 0
    runner_up: Optional[SensingProfile] = None

    for profile in _ranked(profiles):
        # admit while b_i <= B / (sum of earlier f_j + l_i)
        if profile.bid * (assigned + profile.limit) > budget:
            runner_up = profile
            break
        tau = math.floor((budget - profile.bid * assigned) / profile.bid)
        jobs = min(profile.limit, tau)
        winners.append(profile.user_id)
        allocation[profile.user_id] = jobs
        assigned += jobs

    if not winners:
        return AuctionOutcome()

    price = budget / assigned
    if runner_up is not None:
        price = min(price, runner_up.bid)
    payments = {u: price * allocation[u] for u in winners}
    return AuctionOutcome(winners=tuple(winners), allocation=allocation, payments=payments, per_job_price=price)


# --- submodular coverage --------------------------------------------------

@dataclass(frozen=True)
class CoverageUtility:
    """U(S) = |union of the assignment sets of S|"""

    ground_set: frozenset
    assignments: Mapping[str, frozenset]

    def __post_init__(self):
        for user_id, gamma in self.assignments.items():
            if not gamma <= self.ground_set:
                raise DomainError(f"Assignments of {user_id} fall outside the ground set")

    @classmethod
    def from_profiles(cls, profiles: Iterable[SensingProfile], ground_set: Optional[Iterable[str]] = None):
        profiles = list(profiles)
        assignments = {p.user_id: p.assignments for p in profiles}
        if ground_set is None:
            ground_set = frozenset().union(*assignments.values())
        return cls(ground_set=frozenset(ground_set), assignments=assignments)

    def covered(self, users: Iterable[str]) -> frozenset:
        return frozenset().union(*(self.assignments[u] for u in users))

    def value(self, users: Iterable[str]) -> int:
        return len(self.covered(users))


def marginal_utility(utility: CoverageUtility, S: Iterable[str], i: str) -> int:
    S = set(S)
    if i in S:
        raise UsageError(f"{i} is already in the set")
    return len(utility.assignments[i] - utility.covered(S))


def _best_candidate(utility: CoverageUtility, bids: Mapping[str, Fraction], candidates: Sequence[str], covered):
    """First maximal marginal-per-bid among candidates (kept in user_id order)"""
    best, best_gain, best_ratio = None, 0, None
    for user_id in candidates:
        gain = len(utility.assignments[user_id] - covered)
        ratio = gain / bids[user_id]
        if best is None or ratio > best_ratio:
            best, best_gain, best_ratio = user_id, gain, ratio
    return best, best_gain


def _proportional_share_winners(utility, bids, order, budget) -> list[str]:
    winners: list[str] = []
    covered: frozenset = frozenset()
    remaining = list(order)
    while remaining:
        candidate, gain = _best_candidate(utility, bids, remaining, covered)
        # U_i(S)/b_i >= U(S u i)/B
        if gain * budget < bids[candidate] * (len(covered) + gain):
            break
        winners.append(candidate)
        remaining.remove(candidate)
        covered = covered | utility.assignments[candidate]
    return winners


def _critical_payment(utility, bids, others: Sequence[str], i: str, budget: Fraction) -> Fraction:
    gamma_i = utility.assignments[i]
    covered: frozenset = frozenset()
    remaining = list(others)
    payment = Fraction(0)

    while remaining:
        referenced, gain_ref = _best_candidate(utility, bids, remaining, covered)
        gain_i = len(gamma_i - covered)
        eta = Fraction(gain_i) * budget / len(covered | gamma_i)
        if gain_ref:
            payment = max(payment, min(gain_i * bids[referenced] / gain_ref, eta))
        else:
            # the bid term is unbounded when the referenced marginal is 0
            payment = max(payment, eta)
        reached = len(covered) + gain_ref
        remaining.remove(referenced)
        covered = covered | utility.assignments[referenced]
        if bids[referenced] * reached > gain_ref * budget:
            return payment

    # U' exhausted without a violation: i may still enter after everyone
    gain_i = len(gamma_i - covered)
    return max(payment, Fraction(gain_i) * budget / len(covered | gamma_i))


def run_submodular(profiles: Sequence[SensingProfile], budget, utility: Optional[CoverageUtility] = None) -> AuctionOutcome:
    budget = Fraction(budget)
    if budget <= 0 or not profiles:
        return AuctionOutcome()
    utility = utility or CoverageUtility.from_profiles(profiles)
    if not utility.ground_set:
        return AuctionOutcome()
    for profile in profiles:
        if not profile.assignments:
            raise DomainError(f"{profile.user_id} has an empty assignment set")

    bids = {p.user_id: p.bid for p in profiles}
    order = sorted(bids)
    winners = _proportional_share_winners(utility, bids, order, budget)
    payments = {
        i: _critical_payment(utility, bids, [u for u in order if u != i], i, budget)
        for i in winners
    }
    logger.debug(f"Submodular auction: {len(winners)} winners out of {len(order)}")
    return AuctionOutcome(
        winners=tuple(winners),
        allocation={i: 1 for i in winners},
        payments=payments,
    )


def run_mechanism(model: JobModel, profiles: Sequence[SensingProfile], budget, ground_set=None) -> AuctionOutcome:
    if model is JobModel.HOMOGENEOUS:
        return run_homogeneous(profiles, budget)
    if model is JobModel.HETEROGENEOUS:
        return run_heterogeneous(profiles, budget)
    utility = CoverageUtility.from_profiles(profiles, ground_set) if profiles else None
    return run_submodular(profiles, budget, utility)


def critical_bid_search(
    mechanism: Callable[[Sequence[SensingProfile]], AuctionOutcome],
    profiles: Sequence[SensingProfile],
    user_id: str,
    grid: Sequence[Fraction],
) -> tuple[Optional[Fraction], Optional[Fraction]]:
    """Highest grid bid at which user_id still wins and lowest at which it loses"""
    highest_win, lowest_loss = None, None
    for bid in sorted(grid):
        trial = [p.with_bid(bid) if p.user_id == user_id else p for p in profiles]
        if user_id in mechanism(trial).winners:
            highest_win = bid
        elif lowest_loss is None:
            lowest_loss = bid
    return highest_win, lowest_loss


# --- line-oriented fixtures -----------------------------------------------

def format_fraction(value) -> str:
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


def dump_profiles(profiles: Iterable[SensingProfile]) -> str:
    lines = []
    for p in profiles:
        tail = "{" + ",".join(sorted(p.assignments)) + "}" if p.assignments else str(p.limit)
        lines.append(f"{p.user_id} {format_fraction(p.bid)} {tail}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_profiles(text: str) -> list[SensingProfile]:
    profiles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ScenarioError(f"Profile line {lineno}: expected 'user_id bid limit|{{a,b}}', got {raw!r}")
        user_id, bid, tail = parts
        try:
            if tail.startswith("{") and tail.endswith("}"):
                members = frozenset(x for x in tail[1:-1].split(",") if x)
                profiles.append(SensingProfile(user_id=user_id, bid=Fraction(bid), assignments=members))
            else:
                profiles.append(SensingProfile(user_id=user_id, bid=Fraction(bid), limit=int(tail)))
        except (ValueError, ZeroDivisionError) as e:
            raise ScenarioError(f"Profile line {lineno}: {e}")
    return profiles


def dump_outcome(outcome: AuctionOutcome) -> str:
    return "".join(
        f"{u} {outcome.allocation_of(u)} {format_fraction(outcome.payment_of(u))}\n" for u in outcome.winners
    )


def load_outcome(text: str, per_job_price: Optional[Fraction] = None) -> AuctionOutcome:
    winners, allocation, payments = [], {}, {}
    for raw in text.splitlines():
        if not raw.strip():
            continue
        user_id, jobs, paid = raw.split()
        winners.append(user_id)
        allocation[user_id] = int(jobs)
        payments[user_id] = Fraction(paid)
    return AuctionOutcome(winners=tuple(winners), allocation=allocation, payments=payments, per_job_price=per_job_price)
