from fractions import Fraction

import pytest

from crowdsense.errors import DomainError, ScenarioError
from crowdsense.mechanisms import (
    AuctionOutcome,
    CoverageUtility,
    JobModel,
    SensingProfile,
    critical_bid_search,
    dump_outcome,
    dump_profiles,
    load_outcome,
    load_profiles,
    marginal_utility,
    run_heterogeneous,
    run_homogeneous,
    run_mechanism,
    run_submodular,
)


def hom(*bids):
    return [SensingProfile(f"u{i}", Fraction(b)) for i, b in enumerate(bids, start=1)]


def sub(*pairs):
    return [SensingProfile(f"u{i}", Fraction(b), assignments=set(g)) for i, (g, b) in enumerate(pairs, start=1)]


class TestJobModel:
    @pytest.mark.parametrize("text, model", [
        ("h", JobModel.HOMOGENEOUS),
        ("Het", JobModel.HETEROGENEOUS),
        ("submodular", JobModel.SUBMODULAR),
    ])
    def test_parse(self, text, model):
        assert JobModel.parse(text) is model

    def test_unknown(self):
        with pytest.raises(ScenarioError):
            JobModel.parse("auction")


class TestHomogeneous:
    def test_largest_feasible_prefix(self):
        outcome = run_homogeneous(hom(1, 2, 3, 4), 8)
        assert outcome.winners == ("u1", "u2")
        assert outcome.per_job_price == 3
        assert outcome.total_payment == 6

    def test_price_capped_by_budget_share(self):
        outcome = run_homogeneous(hom(1, 2), 3)
        # 2*2 > 3 stops the prefix at u1; min(3/1, 2) = 2
        assert outcome.winners == ("u1",)
        assert outcome.payment_of("u1") == 2

    def test_ties_go_to_lowest_id(self):
        outcome = run_homogeneous(hom(2, 2, 2), 4)
        assert outcome.winners == ("u1", "u2")

    def test_rejects_limits(self):
        with pytest.raises(DomainError):
            run_homogeneous([SensingProfile("u1", 1, limit=2)], 5)

    def test_empty_and_zero_budget(self):
        assert run_homogeneous([], 5) == AuctionOutcome()
        assert run_homogeneous(hom(1), 0).winners == ()


class TestHeterogeneous:
    def test_worked_example(self):
        profiles = [SensingProfile("u1", 1, limit=3), SensingProfile("u2", 2, limit=2)]
        outcome = run_heterogeneous(profiles, 8)
        assert outcome.winners == ("u1",)
        assert outcome.allocation_of("u1") == 3
        assert outcome.per_job_price == 2
        assert outcome.total_payment == 6

    def test_single_user_over_budget(self):
        outcome = run_heterogeneous([SensingProfile("u1", 2, limit=10)], 8)
        assert outcome.winners == ()
        assert outcome.total_payment == 0

    def test_budget_feasible_and_rational(self):
        profiles = [
            SensingProfile("a", Fraction(3, 2), limit=2),
            SensingProfile("b", 1, limit=1),
            SensingProfile("c", 2, limit=3),
            SensingProfile("d", 5, limit=1),
        ]
        outcome = run_heterogeneous(profiles, 10)
        assert outcome.is_budget_feasible(10)
        assert outcome.is_individually_rational(profiles)


class TestSubmodular:
    def test_shared_task_pays_four_thirds(self):
        outcome = run_submodular(sub(({"a", "b"}, 1), ({"b", "c"}, 1)), 4)
        assert outcome.winners == ("u1", "u2")
        assert outcome.payment_of("u1") == Fraction(4, 3)
        assert outcome.payment_of("u2") == Fraction(4, 3)

    def test_single_user_gets_budget(self):
        outcome = run_submodular(sub(({"a"}, 1)), 1)
        assert outcome.winners == ("u1",)
        assert outcome.payment_of("u1") == 1

    def test_expensive_user_excluded(self):
        outcome = run_submodular(sub(({"a"}, 1), ({"b"}, 10)), 2)
        assert outcome.winners == ("u1",)

    def test_marginal_utility(self):
        utility = CoverageUtility.from_profiles(sub(({"a", "b"}, 1), ({"b", "c"}, 1)))
        assert marginal_utility(utility, ["u1"], "u2") == 1
        assert marginal_utility(utility, [], "u2") == 2

    def test_assignments_outside_ground_set(self):
        with pytest.raises(DomainError):
            run_mechanism(JobModel.SUBMODULAR, sub(({"z"}, 1)), 3, ground_set={"a"})

    def test_payments_are_critical_bids(self):
        profiles = sub(({"a", "b"}, 1), ({"b", "c"}, 2), ({"c", "d"}, 1))
        outcome = run_submodular(profiles, 6)
        grid = [Fraction(k, 6) for k in range(1, 61)]
        for winner in outcome.winners:
            highest_win, lowest_loss = critical_bid_search(
                lambda trial: run_submodular(trial, 6), profiles, winner, grid
            )
            assert highest_win <= outcome.payment_of(winner)
            if lowest_loss is not None:
                assert outcome.payment_of(winner) <= lowest_loss


class TestFixtures:
    def test_profile_lines(self):
        text = "u1 3/2 2\nu2 1 {a,b}\n"
        assert dump_profiles(load_profiles(text)) == "u1 3/2 2\nu2 1/1 {a,b}\n"

    def test_bad_profile_line(self):
        with pytest.raises(ScenarioError):
            load_profiles("u1 0 1\n")
        with pytest.raises(ScenarioError):
            load_profiles("u1 1\n")

    def test_outcome_lines(self):
        outcome = run_homogeneous(hom(1, 2, 3, 4), 8)
        text = dump_outcome(outcome)
        assert text == "u1 1 3/1\nu2 1 3/1\n"
        assert load_outcome(text).payments == outcome.payments
