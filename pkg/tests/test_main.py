import pytest

from main import EXIT_OK, EXIT_USAGE, main


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_DIR", str(tmp_path / "logs"))


class TestCommandLine:
    def test_unknown_command(self):
        assert main(["auction"]) == EXIT_USAGE

    def test_truthfulness_from_scenario_file(self, tmp_path, capsys):
        scenario = tmp_path / "het.scn"
        scenario.write_text("model = het\nbids = 1, 2\nlimits = 1, 2\nn = 3\nbudget = 5\ntrials = 5\n")
        out = tmp_path / "reports"
        assert main(["truthfulness", "--spec", str(scenario), "--out", str(out)]) == EXIT_OK
        assert "truthfulness: 5/5 passed" in capsys.readouterr().out
        assert (out / "truthfulness.txt").exists()

    def test_bad_scenario_is_a_usage_error(self, tmp_path):
        scenario = tmp_path / "bad.scn"
        scenario.write_text("colour = blue\n")
        assert main(["truthfulness", "--spec", str(scenario)]) == EXIT_USAGE

    def test_too_few_game_trials(self):
        assert main(["game", "--trials", "10"]) == EXIT_USAGE

    def test_overhead_without_sizes(self):
        assert main(["overhead"]) == EXIT_USAGE
