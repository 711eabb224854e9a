"""Round-based message bus that records every envelope and counts bytes and
operations per party and phase.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import UsageError

logger = logging.getLogger("app")

BOARD = "board"


class Phase(str, Enum):
    SETUP = "setup"
    COMMITMENT = "commitment"
    WINNER = "winner_selection"
    PAYMENT = "payment_determination"
    VERIFICATION = "verification"


@dataclass(frozen=True)
class Envelope:
    sender: str
    receiver: str
    round: int
    phase: Phase
    kind: str
    size: int


@dataclass
class TrafficCounter:
    messages: int = 0
    bytes: int = 0
    ops: Counter = field(default_factory=Counter)

    def merge(self, other: "TrafficCounter") -> None:
        self.messages += other.messages
        self.bytes += other.bytes
        self.ops.update(other.ops)


class MessageBus:
    """Deterministic in-process delivery between registered parties.

    Every send is logged as an Envelope and counted against the sender for
    the current phase; crypto work is counted with count_op.
    """

    def __init__(self):
        self.parties: set[str] = {BOARD}
        self.envelopes: list[Envelope] = []
        self.counters: dict[tuple[str, Phase], TrafficCounter] = {}
        self.round = 0
        self.phase = Phase.SETUP

    def register(self, party_id: str) -> None:
        self.parties.add(party_id)
        logger.debug(f"Party {party_id} joined the bus. Registered parties: {len(self.parties)}")

    def is_registered(self, party_id: str) -> bool:
        return party_id in self.parties

    def enter_phase(self, phase: Phase, round_no: Optional[int] = None) -> None:
        self.phase = phase
        if round_no is not None:
            self.advance_to(round_no)
        logger.debug(f"Bus entered {phase.value} at round {self.round}")

    def advance_to(self, round_no: int) -> None:
        if round_no < self.round:
            raise UsageError("Rounds cannot move backwards")
        self.round = round_no

    def _counter(self, party_id: str, phase: Optional[Phase] = None) -> TrafficCounter:
        return self.counters.setdefault((party_id, phase or self.phase), TrafficCounter())

    def send(self, sender: str, receiver: str, kind: str, payload: bytes) -> bytes:
        """Deliver payload from sender to receiver and return it"""
        for party_id in (sender, receiver):
            if party_id not in self.parties:
                raise UsageError(f"Party {party_id} is not registered on the bus")
        envelope = Envelope(sender, receiver, self.round, self.phase, kind, len(payload))
        self.envelopes.append(envelope)
        counter = self._counter(sender)
        counter.messages += 1
        counter.bytes += envelope.size
        return payload

    def broadcast(self, sender: str, receivers: Iterable[str], kind: str, payload: bytes) -> bytes:
        for receiver in receivers:
            if receiver != sender:
                self.send(sender, receiver, kind, payload)
        return payload

    def count_op(self, party_id: str, op: str, times: int = 1) -> None:
        if times:
            self._counter(party_id).ops[op] += times

    def totals(self, party_id: Optional[str] = None, phase: Optional[Phase] = None) -> TrafficCounter:
        total = TrafficCounter()
        for (party, counted_phase), counter in self.counters.items():
            if (party_id is None or party == party_id) and (phase is None or counted_phase is phase):
                total.merge(counter)
        return total

    def rows(self) -> list[tuple[str, Phase, TrafficCounter]]:
        """Counters sorted by (party, phase) for reports"""
        order = list(Phase)
        return [
            (party, phase, self.counters[(party, phase)])
            for party, phase in sorted(self.counters, key=lambda k: (k[0], order.index(k[1])))
        ]

    def envelope_bytes(self) -> int:
        return sum(e.size for e in self.envelopes)
