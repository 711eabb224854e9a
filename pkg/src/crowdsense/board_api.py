"""Read-only HTTP view over archived bulletin boards."""
import logging
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from .database import ArchiveManager

logger = logging.getLogger("app")

MAX_PAGE = 1000


def create_app(archive: Optional[ArchiveManager] = None) -> FastAPI:
    archive = archive or ArchiveManager()
    app = FastAPI(title="Auction bulletin board")
    app.state.archive = archive

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET"],
        allow_headers=["*"],
    )

    async def _require_run(run_id: str) -> dict:
        run = await archive.get_run(run_id)
        if run is None:
            raise HTTPException(status_code=404, detail=f"Unknown run {run_id}")
        return run

    @app.get("/health")
    async def health_check():
        return {"status": "healthy", "archive": archive.database_url.split("://", 1)[0]}

    @app.get("/runs")
    async def list_runs():
        try:
            return {"status": "success", "data": await archive.list_runs()}
        except Exception as e:
            logger.error(f"Error listing runs: {str(e)}")
            return {"status": "error", "message": "Failed to list runs"}

    @app.get("/runs/{run_id}/board")
    async def read_board(run_id: str, from_seq: int = 0, to_seq: Optional[int] = None):
        """Board entries in sequence order; the range is inclusive and capped per request"""
        run = await _require_run(run_id)
        from_seq = max(0, from_seq)
        last = run["entries"] - 1
        to_seq = min(last, from_seq + MAX_PAGE - 1) if to_seq is None else min(to_seq, from_seq + MAX_PAGE - 1)
        entries = await archive.read_board(run_id, from_seq, to_seq)
        return {
            "status": "success",
            "data": entries,
            "pagination": {
                "total": run["entries"],
                "from_seq": from_seq,
                "to_seq": to_seq,
                "has_more": to_seq < last,
            },
        }

    @app.get("/runs/{run_id}/lists/{list_id}")
    async def read_list(run_id: str, list_id: str):
        await _require_run(run_id)
        return {"status": "success", "list_id": list_id, "data": await archive.read_list(run_id, list_id)}

    @app.get("/runs/{run_id}/metrics")
    async def read_metrics(run_id: str):
        run = await _require_run(run_id)
        return {"status": "success", "outcome": run["outcome"], "data": await archive.read_metrics(run_id)}

    return app


app = create_app()
