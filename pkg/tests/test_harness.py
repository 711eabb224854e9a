import csv
from dataclasses import replace
from fractions import Fraction

import pytest

from crowdsense.crypto_primitives import seeded_rng
from crowdsense.errors import UsageError
from crowdsense.harness import (
    MetricsRow,
    audit_frequency,
    cmd_equivalence,
    cmd_fault_detection,
    cmd_overhead,
    cmd_run,
    cmd_truthfulness,
    cmd_verification_game,
    default_game_grid,
    fit_slopes,
    generate_instance,
    log_log_slope,
    profitable_deviations,
    write_metrics_csv,
)
from crowdsense.mechanisms import JobModel, SensingProfile
from crowdsense.scenario import ScenarioSpec


def spec(**kwargs):
    kwargs.setdefault("bid_domain", (Fraction(1), Fraction(2), Fraction(3)))
    return ScenarioSpec(**kwargs)


class TestInstances:
    def test_generated_profiles_respect_domains(self):
        scenario = spec(job_model=JobModel.HETEROGENEOUS, n=20, limit_domain=(1, 2))
        profiles, ground = generate_instance(scenario, seeded_rng(3))
        assert ground == ()
        assert [p.user_id for p in profiles] == [f"u{k:03d}" for k in range(20)]
        assert all(p.bid in scenario.bid_domain and p.limit in (1, 2) for p in profiles)

    def test_assignment_sets_are_nonempty(self):
        scenario = spec(job_model=JobModel.SUBMODULAR, n=15, m=5, coverage_probability=0.1)
        profiles, ground = generate_instance(scenario, seeded_rng(3))
        assert ground == ("t000", "t001", "t002", "t003", "t004")
        assert all(p.assignments and p.assignments <= set(ground) for p in profiles)

    def test_explicit_profiles_win(self):
        profile = SensingProfile("alice", 1)
        scenario = spec(n=1, profiles=(profile,))
        assert generate_instance(scenario, seeded_rng(0)) == ([profile], ())

    def test_coverage_falls_back_to_settings(self, settings):
        scenario = spec(job_model=JobModel.SUBMODULAR, n=6, m=4)
        profiles, ground = generate_instance(scenario, seeded_rng(5), settings=replace(settings, coverage_probability=1.0))
        assert all(p.assignments == set(ground) for p in profiles)

    def test_scenario_coverage_overrides_settings(self, settings):
        scenario = spec(job_model=JobModel.SUBMODULAR, n=15, m=5, coverage_probability=0.1)
        profiles, ground = generate_instance(scenario, seeded_rng(5), settings=replace(settings, coverage_probability=1.0))
        assert any(p.assignments != set(ground) for p in profiles)


class TestCampaigns:
    def test_equivalence_homogeneous(self, settings):
        report = cmd_equivalence(spec(n=5, budget=Fraction(6), trials=3), settings)
        assert report.ok, report.summary()
        assert report.passed == 3

    def test_equivalence_submodular(self, settings):
        scenario = spec(job_model=JobModel.SUBMODULAR, n=3, m=3, budget=Fraction(4), trials=2, bid_domain=(Fraction(1), Fraction(2)))
        report = cmd_equivalence(scenario, settings)
        assert report.ok, report.summary()

    def test_equivalence_heterogeneous_campaign(self, settings):
        scenario = spec(
            job_model=JobModel.HETEROGENEOUS, n=5, limit_domain=(1, 2, 3), budgets=(Fraction(4), Fraction(9)), seed=11, trials=8
        )
        report = cmd_equivalence(scenario, settings)
        assert report.ok, report.summary()
        assert report.passed == 8

    def test_equivalence_submodular_campaign(self, settings):
        scenario = spec(
            job_model=JobModel.SUBMODULAR, n=4, m=4, budgets=(Fraction(3), Fraction(6)),
            bid_domain=(Fraction(1), Fraction(2)), seed=21, trials=5,
        )
        report = cmd_equivalence(scenario, settings)
        assert report.ok, report.summary()
        assert report.passed == 5

    @pytest.mark.parametrize("model", [JobModel.HOMOGENEOUS, JobModel.HETEROGENEOUS, JobModel.SUBMODULAR])
    def test_truthfulness(self, model):
        scenario = spec(job_model=model, n=4, m=3, limit_domain=(1, 2), budgets=(Fraction(3), Fraction(7)), trials=10)
        report = cmd_truthfulness(scenario)
        assert report.ok, report.summary()
        assert report.passed == 20

    @pytest.mark.parametrize("model", [JobModel.HOMOGENEOUS, JobModel.HETEROGENEOUS, JobModel.SUBMODULAR])
    def test_truthfulness_campaign(self, model, settings):
        scenario = spec(
            job_model=model, n=5, m=4, limit_domain=(1, 2, 3), budgets=(Fraction(2), Fraction(5), Fraction(11)),
            bid_domain=(Fraction(1), Fraction(2), Fraction(3), Fraction(4)), seed=31, trials=12,
        )
        report = cmd_truthfulness(scenario, settings)
        assert report.ok, report.summary()
        assert report.passed == 36

    def test_truthfulness_needs_a_choice(self):
        with pytest.raises(UsageError):
            cmd_truthfulness(spec(bid_domain=(Fraction(1),)))

    def test_deviation_search_finds_nothing_on_example(self):
        profiles = [SensingProfile("u1", 1, limit=3), SensingProfile("u2", 2, limit=2)]
        grid = [Fraction(k, 2) for k in range(1, 9)]
        assert profitable_deviations(JobModel.HETEROGENEOUS, profiles, 8, grid) == []

    def test_fault_detection(self, settings):
        report = cmd_fault_detection(spec(n=4, budget=Fraction(6)), settings, faults=2)
        assert report.ok, report.summary()
        assert report.passed == 2


class TestVerificationGame:
    def test_default_grid(self):
        rows = cmd_verification_game(default_game_grid(), 20_000, seed=1)
        assert [row.deters for row in rows] == [False, True, True, True]
        for row in rows:
            assert abs(row.mean - float(row.expected)) <= 4 * row.stderr

    def test_audit_frequency(self):
        frequency = audit_frequency(Fraction(1, 10), 20_000, seed=2)
        assert frequency.runs == 20_000
        assert frequency.pvalue > 1e-5

    def test_audit_frequency_rejects_a_wrong_rate(self):
        frequency = audit_frequency(Fraction(1, 20), 20_000, seed=2, claimed=Fraction(1, 10))
        assert frequency.alpha == pytest.approx(0.1)
        assert not frequency.ok
        assert frequency.pvalue < 1e-10


class TestOverhead:
    def test_log_log_slope(self):
        assert log_log_slope([1, 2, 4, 8], [3, 12, 48, 192]) == pytest.approx(2.0)
        assert log_log_slope([1, 2], [0, 1]) is None

    def test_fit_slopes_per_series(self):
        rows = [
            MetricsRow("s", n, "platform", "winner_selection", 1, 10 * n, (("sort_compare", n * n),))
            for n in (4, 8, 16, 32)
        ]
        slopes = fit_slopes(rows)
        assert slopes["platform/winner_selection/bytes"] == pytest.approx(1.0)
        assert slopes["platform/winner_selection/sort_compare"] == pytest.approx(2.0)

    @pytest.mark.slow
    def test_sort_comparisons_grow_quadratically(self, settings):
        scenario = spec(n=4, budget=Fraction(4), sizes=(4, 8, 16, 32))
        report = cmd_overhead(scenario, settings)
        assert report.slopes["platform/winner_selection/sort_compare"] == pytest.approx(2.0, abs=0.3)
        assert len({row.size for row in report.rows}) == 4

    def test_overhead_needs_four_sizes(self, settings):
        with pytest.raises(UsageError):
            cmd_overhead(spec(sizes=(4, 8)), settings)

    def test_submodular_user_sweep(self, settings):
        # full coverage: one winner, then a round where every marginal is zero
        scenario = spec(
            job_model=JobModel.SUBMODULAR, m=6, budget=Fraction(4), coverage_probability=1.0, sizes=(4, 8, 16, 32)
        )
        report = cmd_overhead(scenario, settings, sweep="n")
        for row in report.rows:
            if row.party == "users" and row.phase == "winner_selection":
                assert dict(row.ops)["mpep"] == 2 * row.size - 1
        assert report.slopes["users/winner_selection/mpep"] == pytest.approx(1.0, abs=0.1)
        assert report.slopes["platform/winner_selection/bytes"] == pytest.approx(1.0, abs=0.3)

    def test_submodular_assignment_sweep(self, settings):
        scenario = spec(
            job_model=JobModel.SUBMODULAR, n=4, budget=Fraction(4), coverage_probability=1.0, sizes=(2, 4, 8, 16)
        )
        report = cmd_overhead(scenario, settings, sweep="m")
        decrypts = {
            row.size: dict(row.ops)["paillier_decrypt"]
            for row in report.rows
            if row.party == "platform" and row.phase == "winner_selection"
        }
        assert decrypts == {m: 4 * m + 1 for m in (2, 4, 8, 16)}
        assert report.slopes["platform/winner_selection/paillier_decrypt"] == pytest.approx(1.0, abs=0.1)


class TestSingleRun:
    def test_artifacts(self, settings, tmp_path):
        summary = cmd_run(spec(n=4, budget=Fraction(5), seed=3), settings, str(tmp_path))
        assert summary.ok, summary.problems
        board_lines = (tmp_path / "board.txt").read_text().splitlines()
        assert len(board_lines) == len(summary.transcript.board)
        with open(summary.paths["counters"], newline="") as handle:
            header = next(csv.reader(handle))
        assert header[:4] == ["scenario_id", "size", "party", "phase"]
        assert (tmp_path / "outcome.txt").read_text().startswith("# id=scenario")

    def test_injected_fault_is_not_a_problem(self, settings):
        summary = cmd_run(spec(n=4, budget=Fraction(5), underpay=Fraction(1)), settings)
        assert summary.ok

    def test_metrics_csv(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([MetricsRow("s", 4, "ai", "setup", 2, 64, (("sign", 1),), 0.5)], str(path))
        assert path.read_text().splitlines()[1] == "s,4,ai,setup,2,64,sign:1,0.500000"
