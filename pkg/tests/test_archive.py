import asyncio
from fractions import Fraction

import pytest
from fastapi.testclient import TestClient

from crowdsense.bulletin import winner_list
from crowdsense.board_api import MAX_PAGE, create_app
from crowdsense.database import ArchiveManager
from crowdsense.mechanisms import JobModel, SensingProfile
from crowdsense.protocol import AuctionConfig, run_protocol


@pytest.fixture(scope="module")
def transcript(settings):
    config = AuctionConfig(
        tid="archive-run",
        budget=Fraction(4),
        job_model=JobModel.SUBMODULAR,
        bid_domain=(1, 2),
        settings=settings,
    )
    profiles = [
        SensingProfile("u1", 1, assignments={"a", "b"}),
        SensingProfile("u2", 1, assignments={"b", "c"}),
    ]
    return run_protocol(config, profiles)


@pytest.fixture
def database_url(tmp_path):
    return f"sqlite+aiosqlite:///{tmp_path / 'archive.db'}"


async def _archive(database_url, transcript, run_id="run-1"):
    manager = ArchiveManager(database_url)
    try:
        await manager.create_schema()
        await manager.save_run(run_id, transcript, "id=test")
    finally:
        await manager.close()


class TestArchiveManager:
    async def test_board_survives_storage(self, database_url, transcript):
        await _archive(database_url, transcript)
        manager = ArchiveManager(database_url)
        try:
            run = await manager.get_run("run-1")
            assert run["protocol"] == "pvi-s"
            assert run["budget"] == "4/1"
            assert run["entries"] == len(transcript.board)
            assert "u1 1 4/3" in run["outcome"]

            entries = await manager.read_board("run-1")
            assert [e["sequence_no"] for e in entries] == list(range(len(transcript.board)))
            assert [e["digest"] for e in entries] == [e.digest for e in transcript.board.read_range()]
        finally:
            await manager.close()

    async def test_ranges_and_lists(self, database_url, transcript):
        await _archive(database_url, transcript)
        manager = ArchiveManager(database_url)
        try:
            assert [e["sequence_no"] for e in await manager.read_board("run-1", 2, 4)] == [2, 3, 4]
            assert await manager.read_board("run-1", 4, 2) == []
            listed = await manager.read_list("run-1", winner_list("u1"))
            expected = transcript.board.read_list(winner_list("u1")).sequence_nos
            assert tuple(e["sequence_no"] for e in listed) == expected
            metrics = await manager.read_metrics("run-1")
            assert {m["party"] for m in metrics} >= {"ai", "platform", "u1"}
        finally:
            await manager.close()

    async def test_unknown_run(self, database_url):
        manager = ArchiveManager(database_url)
        try:
            await manager.create_schema()
            assert await manager.get_run("missing") is None
            assert await manager.list_runs() == []
        finally:
            await manager.close()

    async def test_duplicate_run_id_is_rejected(self, database_url, transcript):
        await _archive(database_url, transcript)
        with pytest.raises(Exception):
            await _archive(database_url, transcript)


class TestBoardApi:
    @pytest.fixture
    def client(self, database_url, transcript):
        asyncio.run(_archive(database_url, transcript))
        with TestClient(create_app(ArchiveManager(database_url))) as client:
            yield client

    def test_health(self, client):
        assert client.get("/health").json() == {"status": "healthy", "archive": "sqlite+aiosqlite"}

    def test_runs(self, client):
        body = client.get("/runs").json()
        assert [r["run_id"] for r in body["data"]] == ["run-1"]

    def test_board_page(self, client, transcript):
        body = client.get("/runs/run-1/board", params={"from_seq": 1, "to_seq": 3}).json()
        assert [e["sequence_no"] for e in body["data"]] == [1, 2, 3]
        assert body["pagination"]["total"] == len(transcript.board)
        assert body["pagination"]["has_more"] is True

    def test_board_default_page(self, client, transcript):
        body = client.get("/runs/run-1/board").json()
        assert len(body["data"]) == min(len(transcript.board), MAX_PAGE)

    def test_unknown_run_is_404(self, client):
        assert client.get("/runs/nope/board").status_code == 404

    def test_list_and_metrics(self, client):
        listed = client.get(f"/runs/run-1/lists/{winner_list('u1')}").json()
        assert listed["status"] == "success"
        assert len(listed["data"]) >= 1
        metrics = client.get("/runs/run-1/metrics").json()
        assert "u1 1 4/3" in metrics["outcome"]
