from fractions import Fraction

import pytest

from crowdsense.bulletin import PayloadKind
from crowdsense.crypto_primitives import seeded_rng
from crowdsense.errors import DomainError, UsageError
from crowdsense.harness import check_run, outcomes_match
from crowdsense.mechanisms import JobModel, SensingProfile, run_heterogeneous, run_mechanism, run_submodular
from crowdsense.parties import Misbehavior
from crowdsense.protocol import (
    AuditStatus,
    VerificationPolicy,
    anonymity_set_size,
    cheating_game,
    draw_audits,
    expected_cheat_utility,
    first_failing_record,
    omega_domain,
    run_protocol,
    run_pvi_h,
    run_pvi_s,
    secrecy_violations,
    verify_payment,
)

BIDS = (1, 2, 3, 4)


def always_audit(budget):
    return VerificationPolicy(alpha=1, fine=9 * max(Fraction(budget), 1), p_max=budget)


def hom(*bids):
    return [SensingProfile(f"u{i}", Fraction(b)) for i, b in enumerate(bids, start=1)]


def sub(*pairs):
    return [SensingProfile(f"u{i}", Fraction(b), assignments=set(g)) for i, (g, b) in enumerate(pairs, start=1)]


class TestPolicy:
    def test_threshold(self):
        assert VerificationPolicy.threshold(900, 100) == Fraction(1, 10)
        assert VerificationPolicy(alpha=Fraction(1, 10), fine=900, p_max=100).deters
        assert not VerificationPolicy(alpha=Fraction(1, 20), fine=900, p_max=100).deters

    def test_config_rejects_weak_audits(self, make_config):
        with pytest.raises(DomainError):
            make_config(verification=VerificationPolicy(alpha=Fraction(1, 20), fine=900, p_max=100))

    def test_config_rejects_bad_domains(self, make_config):
        with pytest.raises(DomainError):
            make_config(bids=(0, 1))
        with pytest.raises(DomainError):
            make_config(deadline=0)

    def test_bid_outside_domain(self, make_config):
        with pytest.raises(DomainError):
            run_pvi_h(make_config(), hom(5))

    def test_reserved_user_id(self, make_config):
        with pytest.raises(DomainError):
            run_pvi_h(make_config(), [SensingProfile("platform", 1)])

    def test_protocol_matches_job_model(self, make_config):
        with pytest.raises(UsageError):
            run_pvi_h(make_config(model=JobModel.SUBMODULAR), sub(({"a"}, 1)))
        with pytest.raises(UsageError):
            run_pvi_s(make_config(), hom(1))


class TestPviH:
    def test_homogeneous_example(self, make_config):
        profiles = hom(1, 2, 3, 4)
        transcript = run_pvi_h(make_config(budget=8, verification=always_audit(8)), profiles)
        assert transcript.outcome.winners == ("u1", "u2")
        assert transcript.outcome.per_job_price == 3
        assert check_run(transcript, profiles, run_mechanism(JobModel.HOMOGENEOUS, profiles, 8)) == []
        assert all(result.confirmed for result in transcript.audits.values())
        assert len(transcript.audits) == 4

    def test_heterogeneous_example(self, make_config):
        profiles = [SensingProfile("u1", 1, limit=3), SensingProfile("u2", 2, limit=2)]
        config = make_config(model=JobModel.HETEROGENEOUS, budget=8, bids=(1, 2), limits=(1, 2, 3))
        outcome = run_pvi_h(config, profiles).outcome
        assert outcome.winners == ("u1",)
        assert outcome.allocation_of("u1") == 3
        assert outcome.total_payment == 6

    def test_single_user_over_budget(self, make_config):
        config = make_config(model=JobModel.HETEROGENEOUS, budget=8, bids=(2,), limits=(10,))
        transcript = run_pvi_h(config, [SensingProfile("u1", 2, limit=10)])
        assert transcript.outcome.winners == ()
        assert transcript.outcome.total_payment == 0

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_plaintext_mechanism(self, make_config, seed):
        rng = seeded_rng(seed)
        profiles = [
            SensingProfile(f"u{k}", rng.choice(BIDS), limit=rng.choice((1, 2, 3))) for k in range(rng.randint(1, 6))
        ]
        budget = rng.choice((3, 7, 12))
        config = make_config(model=JobModel.HETEROGENEOUS, budget=budget, limits=(1, 2, 3), seed=seed)
        transcript = run_pvi_h(config, profiles)
        assert check_run(transcript, profiles, run_heterogeneous(profiles, budget)) == []

    def test_equal_bids_go_to_lowest_user_id(self, make_config):
        profiles = [SensingProfile("u2", 1), SensingProfile("u1", 1), SensingProfile("u3", 2)]
        transcript = run_pvi_h(make_config(budget=1, bids=(1, 2)), profiles)
        assert transcript.outcome.winners == ("u1",)
        assert transcript.outcome.payment_of("u1") == 1
        assert check_run(transcript, profiles, run_mechanism(JobModel.HOMOGENEOUS, profiles, 1)) == []

    def test_first_failing_rank_is_anonymous(self, make_config):
        transcript = run_pvi_h(make_config(budget=8), hom(1, 2, 3, 4))
        record = first_failing_record(transcript)
        assert record.subject is None
        assert dict(record.learned)["bid"] == 3
        assert anonymity_set_size(transcript) == 2
        assert secrecy_violations(transcript) == []

    def test_losers_stay_undisclosed(self, make_config):
        transcript = run_pvi_h(make_config(budget=8), hom(1, 2, 3, 4))
        disclosed = {e.subject for e in transcript.context.platform.view.of_kind("profile")}
        assert disclosed == {"u1", "u2", None}

    def test_decommitment_after_release(self, make_config):
        config = make_config(budget=8, deadline=3)
        transcript = run_pvi_h(config, hom(1, 2))
        rounds = {e.round for e in transcript.context.platform.view.of_kind("decommit")}
        assert rounds == {4}
        release = transcript.board.entries_of(PayloadKind.KEY_RELEASE)[0]
        assert release.logical_time == 4
        assert all(e.logical_time == 3 for e in transcript.board.entries_of(PayloadKind.COMMITMENT))


class TestPviS:
    def test_shared_task_example(self, make_config):
        profiles = sub(({"a", "b"}, 1), ({"b", "c"}, 1))
        config = make_config(model=JobModel.SUBMODULAR, budget=4, bids=(1, 2), verification=always_audit(4))
        transcript = run_pvi_s(config, profiles)
        assert transcript.outcome.payment_of("u1") == Fraction(4, 3)
        assert transcript.outcome.payment_of("u2") == Fraction(4, 3)
        assert check_run(transcript, profiles, run_submodular(profiles, 4)) == []

    def test_single_user_gets_budget(self, make_config):
        config = make_config(model=JobModel.SUBMODULAR, budget=1, bids=(1,))
        transcript = run_pvi_s(config, sub(({"a"}, 1)))
        assert transcript.outcome.winners == ("u1",)
        assert transcript.outcome.payment_of("u1") == 1

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_plaintext_mechanism(self, make_config, seed):
        rng = seeded_rng(100 + seed)
        ground = ("a", "b", "c", "d")
        profiles = []
        for k in range(rng.randint(1, 4)):
            assignments = {t for t in ground if rng.random() < 0.5} or {rng.choice(ground)}
            profiles.append(SensingProfile(f"u{k}", rng.choice((1, 2)), assignments=assignments))
        budget = rng.choice((2, 5))
        config = make_config(model=JobModel.SUBMODULAR, budget=budget, bids=(1, 2), ground_set=ground, seed=seed)
        transcript = run_pvi_s(config, profiles)
        oracle = run_mechanism(JobModel.SUBMODULAR, profiles, budget, ground)
        assert check_run(transcript, profiles, oracle) == []

    def test_platform_learns_only_winners(self, make_config):
        profiles = sub(({"a"}, 1), ({"b"}, 10))
        config = make_config(model=JobModel.SUBMODULAR, budget=2, bids=(1, 10))
        transcript = run_pvi_s(config, profiles)
        assert transcript.outcome.winners == ("u1",)
        disclosed = {e.subject for e in transcript.context.platform.view.of_kind("profile")}
        assert disclosed == {"u1"}
        assert secrecy_violations(transcript) == []

    def test_equal_marginals_go_to_lowest_user_id(self, make_config):
        profiles = [SensingProfile("u2", 1, assignments={"a"}), SensingProfile("u1", 1, assignments={"a"})]
        transcript = run_pvi_s(make_config(model=JobModel.SUBMODULAR, budget=2, bids=(1,)), profiles)
        assert transcript.outcome.winners == ("u1",)
        assert transcript.outcome.payment_of("u1") == 1
        assert check_run(transcript, profiles, run_submodular(profiles, 2)) == []

    def test_candidates_hear_only_from_the_platform(self, make_config):
        profiles = sub(({"a"}, 1), ({"b"}, 1), ({"c"}, 1))
        transcript = run_pvi_s(make_config(model=JobModel.SUBMODULAR, budget=10, bids=(1,)), profiles)
        assert transcript.outcome.winners == ("u1", "u2", "u3")
        shares = [e for e in transcript.messages if e.kind == "mpep_share" and e.receiver == "u3"]
        assert shares
        assert {e.sender for e in shares} == {"platform"}
        users = {"u1", "u2", "u3"}
        assert not [e for e in transcript.messages if e.sender in users and e.receiver in users]
        assert secrecy_violations(transcript) == []

    def test_user_to_user_envelope_is_flagged(self, make_config):
        transcript = run_pvi_s(make_config(model=JobModel.SUBMODULAR, budget=10, bids=(1,)), sub(({"a"}, 1), ({"b"}, 1), ({"c"}, 1)))
        transcript.bus.send("u1", "u3", "mpep_share", b"share")
        assert secrecy_violations(transcript) == [f"u3 received mpep_share from u1 at round {transcript.bus.round}"]

    def test_repeated_marginals_reuse_fetched_codes(self, make_config):
        profiles = sub(({"a", "b"}, 1), ({"b", "c"}, 1), ({"d"}, 1))
        transcript = run_pvi_s(make_config(model=JobModel.SUBMODULAR, budget=6, bids=(1,)), profiles)
        learned, fetched = 0, 0
        for user_id, user in transcript.context.users.items():
            marginals = [dict(e.learned)["omega"] for e in user.view.of_kind("marginal")]
            requests = transcript.bus.totals(user_id).ops["ot_request"]
            assert requests <= len(set(marginals))
            learned += len(marginals)
            fetched += requests
        assert fetched < learned
        assert transcript.bus.totals("ai").ops["ot_setup"] == 1

    def test_withdrawal(self, make_config):
        profiles = sub(({"a", "b"}, 1), ({"b", "c"}, 1), ({"d"}, 1))
        config = make_config(model=JobModel.SUBMODULAR, budget=6, bids=(1,), withdrawals={"u1"})
        transcript = run_pvi_s(config, profiles)
        assert transcript.withdrawn == ["u1"]
        assert transcript.outcome.winners == ("u2", "u3")
        assert transcript.outcome.payment_of("u2") == 4
        assert transcript.outcome.payment_of("u3") == 2
        assert outcomes_match(transcript.outcome, run_submodular(profiles[1:], 6))
        assert [e.subject for e in transcript.board.entries_of(PayloadKind.WITHDRAWAL)] == ["u1"]

    def test_omega_domain(self):
        values = omega_domain((Fraction(1), Fraction(2)), Fraction(4), 2)
        assert values == tuple(sorted({0, Fraction(1, 2), 1, 2, Fraction(1, 4)}))


class TestVerification:
    def test_underpayment_is_caught(self, make_config):
        config = make_config(
            budget=8,
            verification=always_audit(8),
            misbehavior=Misbehavior(underpay=Fraction(1), underpay_target="u2"),
        )
        transcript = run_pvi_h(config, hom(1, 2, 3, 4))
        result = transcript.audits["u2"]
        assert result.status is AuditStatus.DISCREPANCY
        assert (result.expected, result.observed) == (3, 2)
        assert transcript.audits["u1"].confirmed
        assert transcript.fines == config.verification.fine

    def test_forged_bid_changes_payments(self, make_config):
        config = make_config(budget=8, verification=always_audit(8), misbehavior=Misbehavior(forge_bid=Fraction(1)))
        transcript = run_pvi_h(config, hom(1, 2, 3, 4))
        # the phantom pushes u3 to the failing rank: price min(8/3, 3)
        assert transcript.outcome.payment_of("u1") == Fraction(8, 3)
        assert {u for u, r in transcript.audits.items() if not r.confirmed} == {"u1", "u2"}
        assert transcript.audits["u1"].expected == 3

    def test_dropped_commitment(self, make_config):
        config = make_config(budget=8, verification=always_audit(8), misbehavior=Misbehavior(drop_commitment="u1"))
        transcript = run_pvi_h(config, hom(1, 2, 3, 4))
        assert transcript.appeals == ["u1"]
        assert "u1" not in transcript.outcome.winners
        assert transcript.audits["u1"].status is AuditStatus.FAULT

    def test_unknown_user(self, make_config):
        transcript = run_pvi_h(make_config(budget=8), hom(1, 2))
        with pytest.raises(UsageError):
            verify_payment("u9", transcript)

    def test_submodular_audit(self, make_config):
        config = make_config(
            model=JobModel.SUBMODULAR,
            budget=4,
            bids=(1, 2),
            verification=always_audit(4),
            misbehavior=Misbehavior(underpay=Fraction(1, 3), underpay_target="u1"),
        )
        transcript = run_pvi_s(config, sub(({"a", "b"}, 1), ({"b", "c"}, 1)))
        assert transcript.audits["u1"].status is AuditStatus.DISCREPANCY
        assert transcript.audits["u1"].expected == Fraction(4, 3)
        assert transcript.audits["u2"].confirmed

    def test_draw_audits_extremes(self, rng):
        users = [f"u{k}" for k in range(50)]
        assert draw_audits(users, 0, rng) == []
        assert draw_audits(users, 1, rng) == sorted(users)


class TestCheatingGame:
    @pytest.mark.parametrize("alpha, expected", [(Fraction(1, 10), 0), (Fraction(1, 20), 50)])
    def test_utility_matches_expectation(self, alpha, expected):
        policy = VerificationPolicy(alpha=alpha, fine=900, p_max=100)
        assert expected_cheat_utility(policy, 100) == expected
        estimate = cheating_game(policy, 100, 100_000, seed=11)
        assert estimate.within(expected, sigmas=4)

    def test_needs_enough_trials(self):
        policy = VerificationPolicy(alpha=Fraction(1, 10), fine=900, p_max=100)
        with pytest.raises(DomainError):
            cheating_game(policy, 100, 100, seed=0)


class TestRunProtocol:
    def test_dispatches_on_job_model(self, make_config):
        h = run_protocol(make_config(budget=4), hom(1, 2))
        s = run_protocol(make_config(model=JobModel.SUBMODULAR, budget=1, bids=(1,)), sub(({"a"}, 1)))
        assert (h.protocol, s.protocol) == ("pvi-h", "pvi-s")

    def test_zero_budget(self, make_config):
        transcript = run_protocol(make_config(budget=0, verification=VerificationPolicy(alpha=1, fine=1, p_max=0)), hom(1, 2))
        assert transcript.outcome.winners == ()


class TestOutcomeProperties:
    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("model", [JobModel.HOMOGENEOUS, JobModel.HETEROGENEOUS, JobModel.SUBMODULAR])
    def test_budget_feasible_and_individually_rational(self, make_config, model, seed):
        rng = seeded_rng(500 + seed)
        ground = ("a", "b", "c", "d")
        profiles = []
        for k in range(rng.randint(1, 6)):
            bid = rng.choice(BIDS)
            if model is JobModel.SUBMODULAR:
                assignments = {t for t in ground if rng.random() < 0.5} or {rng.choice(ground)}
                profiles.append(SensingProfile(f"u{k}", bid, assignments=assignments))
            elif model is JobModel.HETEROGENEOUS:
                profiles.append(SensingProfile(f"u{k}", bid, limit=rng.choice((1, 2, 3))))
            else:
                profiles.append(SensingProfile(f"u{k}", bid))
        budget = rng.choice((1, 3, 7, 12))
        extra = {"ground_set": ground} if model is JobModel.SUBMODULAR else {}
        limits = (1, 2, 3) if model is JobModel.HETEROGENEOUS else (1,)
        transcript = run_protocol(make_config(model=model, budget=budget, limits=limits, seed=seed, **extra), profiles)
        outcome = transcript.outcome
        assert outcome.is_budget_feasible(budget)
        assert outcome.is_individually_rational(profiles)
        assert secrecy_violations(transcript) == []
