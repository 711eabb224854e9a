from fractions import Fraction

import pytest

from crowdsense.errors import ScenarioError
from crowdsense.mechanisms import JobModel
from crowdsense.scenario import ScenarioSpec, load_scenario, parse_scenario

SCENARIO = """
# heterogeneous demo
id = demo
model = het
budget = 15/2
bids = 2, 1, 3/2, 1
limits = 1, 3
seed = 7
sizes = 4, 8, 16, 32
profile = u1 1 3
profile = u2 3/2 1
"""


class TestParseScenario:
    def test_values(self):
        spec = parse_scenario(SCENARIO)
        assert spec.scenario_id == "demo"
        assert spec.job_model is JobModel.HETEROGENEOUS
        assert spec.budget == Fraction(15, 2)
        assert spec.bid_domain == (1, Fraction(3, 2), 2)
        assert spec.limit_domain == (1, 3)
        assert spec.sizes == (4, 8, 16, 32)
        assert [p.user_id for p in spec.profiles] == ["u1", "u2"]
        assert spec.n == 2

    def test_defaults(self):
        spec = parse_scenario("")
        assert spec == ScenarioSpec()
        assert spec.budget_sweep == (20,)

    def test_submodular_keys(self):
        spec = parse_scenario("model = sub\nground = b, a, b\nwithdraw = u3\ncoverage = 0.25\n")
        assert spec.ground_set == ("a", "b")
        assert spec.withdrawals == ("u3",)
        assert spec.coverage_probability == 0.25

    @pytest.mark.parametrize("text", [
        "colour = blue\n",
        "seed = 1\nseed = 2\n",
        "budget = lots\n",
        "n = 2.5\n",
        "just a line\n",
        "coverage = 2\n",
        "trials = 0\n",
        "model = auction\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ScenarioError):
            parse_scenario(text)

    def test_describe_is_a_replay_line(self):
        line = parse_scenario(SCENARIO).describe()
        assert line.startswith("id=demo model=heterogeneous")
        assert "seed=7" in line

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "demo.scn"
        path.write_text(SCENARIO, encoding="utf-8")
        assert load_scenario(str(path)).scenario_id == "demo"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(str(tmp_path / "absent.scn"))
