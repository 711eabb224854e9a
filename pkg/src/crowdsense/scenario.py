"""Key-value scenario files.

One ``key = value`` pair per line, ``#`` starts a comment. List values are
comma separated; ``profile`` may repeat and uses the profile line format
(``user_id bid limit`` or ``user_id bid {a,b}``).

    id = demo
    model = het            # h | het | sub (or the full names)
    budget = 20
    bids = 1, 2, 3
    limits = 1, 2
    n = 10                 # generated users when no profile lines are given
    m = 6                  # generated ground-set size (submodular)
    seed = 7
    trials = 100
    sizes = 25, 50, 100, 200
    profile = u1 2 1
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import ScenarioError
from .mechanisms import JobModel, SensingProfile, load_profiles

logger = logging.getLogger("app")

LIST_KEYS = {"bids", "limits", "budgets", "sizes", "ground", "withdraw"}
KNOWN_KEYS = LIST_KEYS | {
    "id", "model", "n", "m", "budget", "seed", "trials", "coverage", "alpha", "fine",
    "deadline", "underpay", "forge_bid", "drop", "profile",
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str = "scenario"
    job_model: JobModel = JobModel.HOMOGENEOUS
    n: int = 10
    m: int = 6
    budget: Fraction = Fraction(20)
    budgets: tuple = ()
    bid_domain: tuple = tuple(Fraction(b) for b in range(1, 7))
    limit_domain: tuple = (1,)
    seed: int = 0
    trials: int = 100
    sizes: tuple = ()
    coverage_probability: Optional[float] = None
    alpha: Optional[Fraction] = None
    fine: Optional[Fraction] = None
    deadline: int = 1
    underpay: Fraction = Fraction(0)
    forge_bid: Optional[Fraction] = None
    drop_commitment: Optional[str] = None
    withdrawals: tuple = ()
    ground_set: tuple = ()
    profiles: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ScenarioError("User and assignment counts cannot be negative")
        if self.trials < 1:
            raise ScenarioError("At least one trial is required")
        if not self.bid_domain:
            raise ScenarioError("Bid domain must be nonempty")

    @property
    def budget_sweep(self) -> tuple:
        return self.budgets or (self.budget,)

    def describe(self) -> str:
        """Replay line embedded in every report"""
        return (
            f"id={self.scenario_id} model={self.job_model.value} n={self.n} m={self.m} "
            f"budget={self.budget} bids={','.join(str(b) for b in self.bid_domain)} "
            f"limits={','.join(str(x) for x in self.limit_domain)} seed={self.seed} trials={self.trials}"
        )


def _fraction(key: str, raw: str) -> Fraction:
    try:
        return Fraction(raw.strip())
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"{key}: {raw!r} is not a number")


def _int(key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ScenarioError(f"{key}: {raw!r} is not an integer")


def _items(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_scenario(text: str) -> ScenarioSpec:
    values: dict = {}
    profile_lines: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"Line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in KNOWN_KEYS:
            raise ScenarioError(f"Line {lineno}: unknown key {key!r}")
        if key == "profile":
            profile_lines.append(value)
        elif key in values:
            raise ScenarioError(f"Line {lineno}: {key!r} given twice")
        else:
            values[key] = value

    spec: dict = {}
    if "id" in values:
        spec["scenario_id"] = values["id"]
    if "model" in values:
        spec["job_model"] = JobModel.parse(values["model"])
    for key in ("n", "m", "seed", "trials", "deadline"):
        if key in values:
            spec[key] = _int(key, values[key])
    for key, target in (("budget", "budget"), ("alpha", "alpha"), ("fine", "fine"), ("underpay", "underpay"), ("forge_bid", "forge_bid")):
        if key in values:
            spec[target] = _fraction(key, values[key])
    if "coverage" in values:
        probability = float(_fraction("coverage", values["coverage"]))
        if not 0 < probability <= 1:
            raise ScenarioError("coverage must lie in (0, 1]")
        spec["coverage_probability"] = probability
    if "drop" in values:
        spec["drop_commitment"] = values["drop"]

    if "bids" in values:
        spec["bid_domain"] = tuple(sorted({_fraction("bids", b) for b in _items(values["bids"])}))
    if "limits" in values:
        spec["limit_domain"] = tuple(sorted({_int("limits", x) for x in _items(values["limits"])}))
    if "budgets" in values:
        spec["budgets"] = tuple(_fraction("budgets", b) for b in _items(values["budgets"]))
    if "sizes" in values:
        spec["sizes"] = tuple(_int("sizes", s) for s in _items(values["sizes"]))
    if "ground" in values:
        spec["ground_set"] = tuple(sorted(set(_items(values["ground"]))))
    if "withdraw" in values:
        spec["withdrawals"] = tuple(_items(values["withdraw"]))

    if profile_lines:
        profiles: list[SensingProfile] = load_profiles("\n".join(profile_lines))
        spec["profiles"] = tuple(profiles)
        spec.setdefault("n", len(profiles))

    scenario = ScenarioSpec(**spec)
    logger.debug(f"Parsed scenario {scenario.scenario_id}", extra={"component": "Scenario", "keys": len(values)})
    return scenario


def load_scenario(path: str) -> ScenarioSpec:
    try:
        with open(path, encoding="utf-8") as handle:
            return parse_scenario(handle.read())
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}")
