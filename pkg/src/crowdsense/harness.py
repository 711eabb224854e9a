"""Campaign drivers behind the command-line subcommands.

Every report carries the scenario's replay line so a failing campaign can be
rerun from its output alone.
"""
import csv
import logging
import math
import os
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .crypto_primitives import seeded_rng
from .errors import UsageError
from .mechanisms import (
    AuctionOutcome,
    JobModel,
    SensingProfile,
    dump_outcome,
    dump_profiles,
    format_fraction,
    run_mechanism,
)
from .parties import AI_ID, PLATFORM_ID, Misbehavior
from .protocol import (
    AuctionConfig,
    AuditStatus,
    RunTranscript,
    VerificationPolicy,
    cheating_game,
    draw_audits,
    expected_cheat_utility,
    first_failing_record,
    run_protocol,
    secrecy_violations,
    verify_payment,
)
from .scenario import ScenarioSpec
from .settings import Settings

logger = logging.getLogger("app")

MIN_SWEEP_SIZES = 4
METRICS_HEADER = ["scenario_id", "size", "party", "phase", "messages", "bytes", "ops", "wall_time"]


# --- instances ------------------------------------------------------------

def ground_labels(m: int) -> tuple:
    return tuple(f"t{k:03d}" for k in range(m))


def generate_instance(
    spec: ScenarioSpec,
    rng: random.Random,
    n: Optional[int] = None,
    m: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> tuple[list[SensingProfile], tuple]:
    """Explicit profiles from the scenario, otherwise a random instance.

    Bids are uniform over the bid domain, limits uniform over the limit
    domain and every data point joins an assignment set independently with
    the scenario's coverage probability, or the configured one when the
    scenario sets none; empty sets are redrawn.
    """
    n = spec.n if n is None else n
    m = spec.m if m is None else m
    if spec.profiles and n == spec.n:
        profiles = list(spec.profiles)
        ground = spec.ground_set or tuple(sorted(frozenset().union(*(p.assignments for p in profiles))))
        return profiles, tuple(ground)

    submodular = spec.job_model is JobModel.SUBMODULAR
    if submodular and n and m < 1:
        raise UsageError("Submodular instances need at least one data point")
    ground = ground_labels(m) if submodular else ()
    coverage = spec.coverage_probability
    if coverage is None:
        coverage = (settings or Settings()).coverage_probability
    profiles = []
    for k in range(n):
        user_id = f"u{k:03d}"
        bid = rng.choice(spec.bid_domain)
        if submodular:
            assignments: frozenset = frozenset()
            while not assignments:
                assignments = frozenset(t for t in ground if rng.random() < coverage)
            profiles.append(SensingProfile(user_id=user_id, bid=bid, assignments=assignments))
        elif spec.job_model is JobModel.HOMOGENEOUS:
            profiles.append(SensingProfile(user_id=user_id, bid=bid))
        else:
            profiles.append(SensingProfile(user_id=user_id, bid=bid, limit=rng.choice(spec.limit_domain)))
    return profiles, ground


def build_config(
    spec: ScenarioSpec,
    ground: Sequence[str],
    seed: int,
    settings: Settings,
    budget: Optional[Fraction] = None,
    misbehavior: Optional[Misbehavior] = None,
) -> AuctionConfig:
    budget = spec.budget if budget is None else Fraction(budget)
    limits = (1,) if spec.job_model is JobModel.HOMOGENEOUS else spec.limit_domain
    return AuctionConfig(
        tid=f"{spec.scenario_id}-{seed}",
        budget=budget,
        job_model=spec.job_model,
        bid_domain=spec.bid_domain,
        limit_domain=limits,
        ground_set=frozenset(ground),
        deadline=spec.deadline,
        verification=VerificationPolicy.for_budget(budget, spec.fine, spec.alpha),
        seed=seed,
        settings=settings,
        misbehavior=misbehavior or Misbehavior(
            underpay=spec.underpay, forge_bid=spec.forge_bid, drop_commitment=spec.drop_commitment
        ),
        withdrawals=frozenset(spec.withdrawals),
    )


def outcomes_match(left: AuctionOutcome, right: AuctionOutcome) -> bool:
    """Same winners, allocations and exact payments"""
    return (
        sorted(left.winners) == sorted(right.winners)
        and {u: left.allocation_of(u) for u in left.winners} == {u: right.allocation_of(u) for u in right.winners}
        and {u: left.payment_of(u) for u in left.winners} == {u: right.payment_of(u) for u in right.winners}
    )


# --- reports --------------------------------------------------------------

@dataclass
class CampaignReport:
    name: str
    scenario: str
    passed: int = 0
    failed: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def record(self, success: bool, counterexample: str = "") -> None:
        if success:
            self.passed += 1
            return
        self.failed += 1
        self.counterexamples.append(counterexample)
        logger.warning(f"{self.name} counterexample found", extra={"component": "Harness", "instance": self.failed})

    def summary(self) -> str:
        lines = [f"{self.name}: {self.passed}/{self.passed + self.failed} passed", f"scenario: {self.scenario}"]
        lines.extend(self.counterexamples)
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MetricsRow:
    scenario_id: str
    size: int
    party: str
    phase: str
    messages: int
    bytes: int
    ops: tuple = ()
    wall_time: Optional[float] = None

    def as_csv(self) -> list[str]:
        return [
            self.scenario_id,
            str(self.size),
            self.party,
            self.phase,
            str(self.messages),
            str(self.bytes),
            ";".join(f"{op}:{count}" for op, count in self.ops),
            "" if self.wall_time is None else f"{self.wall_time:.6f}",
        ]

    def op_count(self, op: str) -> int:
        return dict(self.ops).get(op, 0)


def party_group(party_id: str) -> str:
    return party_id if party_id in (AI_ID, PLATFORM_ID, "board") else "users"


def transcript_rows(
    transcript: RunTranscript, scenario_id: str, size: int, grouped: bool = False, wall_time: Optional[float] = None
) -> list[MetricsRow]:
    """Per-party, per-phase counters; users merge into one row when grouped"""
    merged: dict[tuple[str, str], list] = {}
    for party, phase, counter in transcript.bus.rows():
        key = (party_group(party) if grouped else party, phase.value)
        slot = merged.setdefault(key, [0, 0, Counter()])
        slot[0] += counter.messages
        slot[1] += counter.bytes
        slot[2].update(counter.ops)
    return [
        MetricsRow(
            scenario_id=scenario_id,
            size=size,
            party=party,
            phase=phase,
            messages=messages,
            bytes=nbytes,
            ops=tuple(sorted(ops.items())),
            wall_time=wall_time,
        )
        for (party, phase), (messages, nbytes, ops) in sorted(merged.items())
    ]


def write_metrics_csv(rows: Iterable[MetricsRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def counters_conserved(transcript: RunTranscript) -> bool:
    return transcript.bus.totals().bytes == transcript.bus.envelope_bytes()


# --- equivalence ----------------------------------------------------------

def _describe_instance(profiles, budget, seed) -> str:
    return f"seed={seed} budget={format_fraction(budget)}\n{dump_profiles(profiles)}"


def check_run(transcript: RunTranscript, profiles: Sequence[SensingProfile], oracle: AuctionOutcome) -> list[str]:
    """Everything a single honest run must satisfy"""
    config = transcript.config
    problems = []
    if not outcomes_match(transcript.outcome, oracle):
        problems.append(f"outcome differs\nprotocol:\n{dump_outcome(transcript.outcome)}oracle:\n{dump_outcome(oracle)}")
    if not transcript.outcome.is_budget_feasible(config.budget):
        problems.append("payments exceed the budget")
    if not transcript.outcome.is_individually_rational(profiles):
        problems.append("a winner is paid below its bid")
    problems.extend(secrecy_violations(transcript))
    if transcript.protocol == "pvi-h" and config.budget > 0 and len(oracle.winners) < len(profiles):
        record = first_failing_record(transcript)
        if record is None or record.subject is not None:
            problems.append("first failing rank is missing or carries an identity")
    if transcript.discrepancies():
        problems.append(f"honest run failed {len(transcript.discrepancies())} audits")
    if not counters_conserved(transcript):
        problems.append("per-party bytes differ from per-message bytes")
    return problems


def cmd_equivalence(spec: ScenarioSpec, settings: Settings) -> CampaignReport:
    report = CampaignReport(name="equivalence", scenario=spec.describe())
    rng = seeded_rng(spec.seed)
    for trial in range(spec.trials):
        seed = spec.seed + trial
        budget = spec.budget_sweep[trial % len(spec.budget_sweep)]
        profiles, ground = generate_instance(
            spec, rng, n=rng.randint(0, spec.n) if not spec.profiles else None, settings=settings
        )
        oracle = run_mechanism(spec.job_model, profiles, budget, ground or None)
        config = build_config(spec, ground, seed, settings, budget=budget, misbehavior=Misbehavior())
        transcript = run_protocol(config, profiles)
        problems = check_run(transcript, profiles, oracle)
        report.record(not problems, _describe_instance(profiles, budget, seed) + "\n".join(problems))
    logger.info(
        f"Equivalence: {report.passed}/{spec.trials} instances matched",
        extra={"component": "Harness", "model": spec.job_model.value},
    )
    return report


# --- truthfulness ---------------------------------------------------------

def profitable_deviations(
    model: JobModel, profiles: Sequence[SensingProfile], budget, bid_domain: Sequence[Fraction], ground=None
) -> list[tuple[str, Fraction, Fraction, Fraction]]:
    """(user, deviating bid, truthful utility, deviating utility) for every gain"""
    truthful = run_mechanism(model, profiles, budget, ground)
    found = []
    for profile in profiles:
        honest = truthful.utility(profile.user_id, profile.bid)
        for bid in bid_domain:
            if bid == profile.bid:
                continue
            trial = [p.with_bid(bid) if p.user_id == profile.user_id else p for p in profiles]
            deviating = run_mechanism(model, trial, budget, ground).utility(profile.user_id, profile.bid)
            if deviating > honest:
                found.append((profile.user_id, bid, honest, deviating))
    return found


def cmd_truthfulness(spec: ScenarioSpec, settings: Optional[Settings] = None) -> CampaignReport:
    if len(spec.bid_domain) < 2:
        raise UsageError("Truthfulness sweeps need at least two bids")
    report = CampaignReport(name="truthfulness", scenario=spec.describe())
    rng = seeded_rng(spec.seed)
    for trial in range(spec.trials):
        profiles, ground = generate_instance(spec, rng, settings=settings)
        for budget in spec.budget_sweep:
            found = profitable_deviations(spec.job_model, profiles, budget, spec.bid_domain, ground or None)
            detail = "".join(
                f"{u} bids {format_fraction(b)}: {format_fraction(h)} -> {format_fraction(d)}\n" for u, b, h, d in found
            )
            report.record(not found, _describe_instance(profiles, budget, spec.seed + trial) + detail)
    return report


# --- verification ---------------------------------------------------------

@dataclass(frozen=True)
class GameRow:
    alpha: Fraction
    fine: Fraction
    p_max: Fraction
    cheat_gain: Fraction
    mean: float
    stderr: float
    expected: Fraction

    @property
    def deters(self) -> bool:
        return self.alpha >= VerificationPolicy.threshold(self.fine, self.p_max)

    @property
    def ok(self) -> bool:
        close = abs(self.mean - float(self.expected)) <= 3 * self.stderr
        return close and (not self.deters or self.mean <= 3 * self.stderr)

    def as_csv(self) -> list[str]:
        return [
            format_fraction(self.alpha), format_fraction(self.fine), format_fraction(self.p_max),
            format_fraction(self.cheat_gain), f"{self.mean:.6f}", f"{self.stderr:.6f}", format_fraction(self.expected),
        ]


def default_game_grid(p_max=100, fine=900) -> list[VerificationPolicy]:
    return [
        VerificationPolicy(alpha=alpha, fine=fine, p_max=p_max)
        for alpha in (Fraction(1, 20), Fraction(1, 10), Fraction(1, 5), Fraction(1, 2))
    ]


def cmd_verification_game(policies: Sequence[VerificationPolicy], trials: int, seed: int, cheat_gain=None) -> list[GameRow]:
    rows = []
    for k, policy in enumerate(policies):
        gain = policy.p_max if cheat_gain is None else Fraction(cheat_gain)
        estimate = cheating_game(policy, gain, trials, seed + k)
        rows.append(GameRow(
            alpha=policy.alpha,
            fine=policy.fine,
            p_max=policy.p_max,
            cheat_gain=gain,
            mean=estimate.mean,
            stderr=estimate.stderr,
            expected=expected_cheat_utility(policy, gain),
        ))
    return rows


@dataclass(frozen=True)
class AuditFrequency:
    alpha: float
    runs: int
    audits: int
    pvalue: float

    @property
    def ok(self) -> bool:
        return abs(self.audits - self.runs * self.alpha) <= 3 * math.sqrt(self.runs * self.alpha * (1 - self.alpha))


def audit_frequency(alpha, runs: int, seed: int, claimed=None) -> AuditFrequency:
    """How often a single user's audit coin comes up over independent runs.

    The coin is drawn with probability alpha and the count is tested against
    the claimed rate, which defaults to alpha itself.
    """
    rate = float(alpha if claimed is None else claimed)
    rng = seeded_rng(seed)
    audits = sum(len(draw_audits(["u"], alpha, rng)) for _ in range(runs))
    test = stats.binomtest(audits, runs, rate)
    return AuditFrequency(alpha=rate, runs=runs, audits=audits, pvalue=float(test.pvalue))


def cmd_fault_detection(spec: ScenarioSpec, settings: Settings, faults: int) -> CampaignReport:
    """Inject one underpayment per run and let the short-changed winner audit"""
    report = CampaignReport(name="fault-detection", scenario=spec.describe())
    rng = seeded_rng(spec.seed)
    shortfall = spec.underpay or Fraction(1)
    injected, attempt = 0, 0
    while injected < faults:
        attempt += 1
        if attempt > 20 * faults:
            raise UsageError("Scenario rarely produces a paid winner; raise the budget")
        profiles, ground = generate_instance(spec, rng, settings=settings)
        oracle = run_mechanism(spec.job_model, profiles, spec.budget, ground or None)
        paid = [u for u in oracle.winners if oracle.payment_of(u) > 0]
        if not paid:
            continue
        target = paid[0]
        seed = spec.seed + attempt
        config = build_config(spec, ground, seed, settings, misbehavior=Misbehavior(underpay=shortfall, underpay_target=target))
        transcript = run_protocol(config, profiles)
        result = verify_payment(target, transcript)
        report.record(
            result.status is AuditStatus.DISCREPANCY,
            _describe_instance(profiles, spec.budget, seed) + f"underpaid {target} audited as {result.status.value}",
        )
        injected += 1
    return report


# --- overhead -------------------------------------------------------------

@dataclass
class OverheadReport:
    scenario: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"scenario: {self.scenario}"]
        lines.extend(f"{key}: slope {value:.3f}" for key, value in sorted(self.slopes.items()))
        return "\n".join(lines) + "\n"


def log_log_slope(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log y against log x; None when any y is zero"""
    if len(xs) < 2 or any(y <= 0 for y in ys):
        return None
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])


def fit_slopes(rows: Sequence[MetricsRow]) -> dict[str, float]:
    series: dict[str, dict[int, float]] = {}
    for row in rows:
        base = f"{row.party}/{row.phase}"
        series.setdefault(f"{base}/bytes", {})[row.size] = row.bytes
        for op, count in row.ops:
            series.setdefault(f"{base}/{op}", {})[row.size] = count
    slopes = {}
    for key, points in series.items():
        sizes = sorted(points)
        slope = log_log_slope(sizes, [points[s] for s in sizes])
        if slope is not None:
            slopes[key] = slope
    return slopes


def cmd_overhead(spec: ScenarioSpec, settings: Settings, sweep: str = "n") -> OverheadReport:
    """Run one instance per sweep size and fit byte and operation growth.

    The budget grows with n so the share of winners stays comparable across
    sizes; an m-sweep keeps n and the budget fixed.
    """
    if len(spec.sizes) < MIN_SWEEP_SIZES:
        raise UsageError(f"Overhead sweeps need at least {MIN_SWEEP_SIZES} sizes")
    if sweep not in ("n", "m"):
        raise UsageError(f"Unknown sweep axis {sweep!r}")
    report = OverheadReport(scenario=spec.describe() + f" sweep={sweep}")
    base = spec.sizes[0]
    for size in spec.sizes:
        rng = seeded_rng(spec.seed + size)
        if sweep == "n":
            profiles, ground = generate_instance(spec, rng, n=size, settings=settings)
            budget = spec.budget * size / base
        else:
            profiles, ground = generate_instance(spec, rng, m=size, settings=settings)
            budget = spec.budget
        config = build_config(spec, ground, spec.seed + size, settings, budget=budget, misbehavior=Misbehavior())
        started = time.perf_counter()
        transcript = run_protocol(config, profiles)
        elapsed = time.perf_counter() - started
        report.rows.extend(transcript_rows(transcript, spec.scenario_id, size, grouped=True, wall_time=elapsed))
        logger.info(f"Overhead size {size} took {elapsed:.2f}s", extra={"component": "Harness", "sweep": sweep})
    report.slopes = fit_slopes(report.rows)
    return report


# --- single run -----------------------------------------------------------

@dataclass
class RunSummary:
    transcript: RunTranscript
    oracle: AuctionOutcome
    problems: list
    paths: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.problems


def cmd_run(spec: ScenarioSpec, settings: Settings, out_dir: Optional[str] = None) -> RunSummary:
    """One scenario end to end; writes board, counters and outcome when out_dir is set"""
    profiles, ground = generate_instance(spec, seeded_rng(spec.seed), settings=settings)
    config = build_config(spec, ground, spec.seed, settings)
    transcript = run_protocol(config, profiles)
    withdrawn = set(transcript.withdrawn)
    oracle = run_mechanism(
        spec.job_model, [p for p in profiles if p.user_id not in withdrawn], config.budget, ground or None
    )
    # injected faults are expected to surface as audit discrepancies, not as failures
    problems = check_run(transcript, profiles, oracle) if config.misbehavior.honest else []

    summary = RunSummary(transcript=transcript, oracle=oracle, problems=problems)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        summary.paths = {
            "board": os.path.join(out_dir, "board.txt"),
            "counters": os.path.join(out_dir, "counters.csv"),
            "outcome": os.path.join(out_dir, "outcome.txt"),
        }
        with open(summary.paths["board"], "w", encoding="utf-8") as handle:
            handle.write(transcript.board.dump())
        write_metrics_csv(transcript_rows(transcript, spec.scenario_id, len(profiles)), summary.paths["counters"])
        with open(summary.paths["outcome"], "w", encoding="utf-8") as handle:
            handle.write(f"# {spec.describe()}\n{dump_outcome(transcript.outcome)}")
        logger.info(f"Run artifacts written to {out_dir}", extra={"component": "Harness"})
    return summary
