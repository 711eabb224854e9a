import pytest

from crowdsense import bus as bus_module, secure_compute
from crowdsense.bus import BOARD, MessageBus, Phase
from crowdsense.errors import UsageError


@pytest.fixture
def bus():
    bus = MessageBus()
    for party in ("ai", "platform", "u1"):
        bus.register(party)
    return bus


class TestMessageBus:
    def test_counts_sender_per_phase(self, bus):
        bus.send("u1", "platform", "bid", b"12345")
        bus.enter_phase(Phase.WINNER, 2)
        bus.send("platform", BOARD, "post", b"xy")
        assert bus.totals("u1", Phase.SETUP).bytes == 5
        assert bus.totals("platform", Phase.WINNER).messages == 1
        assert bus.totals("platform", Phase.SETUP).messages == 0
        assert bus.envelopes[-1].round == 2

    def test_totals_match_envelopes(self, bus):
        bus.broadcast("ai", ["platform", "u1", "ai"], "details", b"abc")
        bus.count_op("ai", "paillier_encrypt", 3)
        total = bus.totals()
        assert total.messages == len(bus.envelopes) == 2
        assert total.bytes == bus.envelope_bytes() == 6
        assert total.ops["paillier_encrypt"] == 3

    def test_unknown_party(self, bus):
        with pytest.raises(UsageError):
            bus.send("u1", "u2", "bid", b"")

    def test_rounds_are_monotone(self, bus):
        bus.advance_to(3)
        with pytest.raises(UsageError):
            bus.enter_phase(Phase.VERIFICATION, 2)

    def test_rows_follow_phase_order(self, bus):
        bus.enter_phase(Phase.PAYMENT)
        bus.send("ai", "u1", "x", b"")
        bus.enter_phase(Phase.COMMITMENT)
        bus.send("ai", "u1", "x", b"")
        assert [(party, phase) for party, phase, _ in bus.rows()] == [
            ("ai", Phase.COMMITMENT),
            ("ai", Phase.PAYMENT),
        ]


@pytest.mark.parametrize("module", [bus_module, secure_compute])
def test_module_docstring(module):
    assert module.__doc__ and module.__doc__.strip()
