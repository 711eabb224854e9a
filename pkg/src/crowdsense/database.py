import asyncio
import logging
from typing import Optional

from sqlalchemy import func, select
from sqlalchemy.ext.asyncio import AsyncSession, create_async_engine
from sqlalchemy.orm import sessionmaker

from .bulletin import BulletinBoard
from .harness import transcript_rows
from .mechanisms import dump_outcome, format_fraction
from .models import Base, BoardEntry, ListMembership, MetricsRecord, Run
from .protocol import RunTranscript
from .settings import Settings

logger = logging.getLogger("app")

WRITE_RETRIES = 3


class ArchiveManager:
    """Stores finished runs so the board API can serve them read-only"""

    def __init__(self, database_url: Optional[str] = None):
        self.database_url = database_url or Settings.from_env().database_url
        self.engine = create_async_engine(
            self.database_url,
            echo=False,
            connect_args={
                "timeout": 30,
                "check_same_thread": False,
            },
        )
        self._session_factory = sessionmaker(
            self.engine,
            class_=AsyncSession,
            expire_on_commit=False,
        )

    async def create_schema(self) -> None:
        """Create tables directly; migrations do the same for deployed databases"""
        async with self.engine.begin() as connection:
            await connection.run_sync(Base.metadata.create_all)

    async def close(self) -> None:
        await self.engine.dispose()

    @staticmethod
    def _board_rows(run_id: str, board: BulletinBoard) -> list[BoardEntry]:
        positions: dict[int, tuple[str, int]] = {}
        for list_id in board.list_ids():
            for position, sequence_no in enumerate(board.read_list(list_id).sequence_nos):
                positions[sequence_no] = (list_id, position)
        rows = []
        for entry in board.read_range():
            row = BoardEntry(
                run_id=run_id,
                sequence_no=entry.sequence_no,
                logical_time=entry.logical_time,
                author=entry.author,
                kind=entry.kind.value,
                subject=entry.subject,
                payload=entry.payload,
                digest=entry.digest,
                signature=entry.signature.hex(),
            )
            if entry.sequence_no in positions:
                list_id, position = positions[entry.sequence_no]
                row.memberships.append(ListMembership(list_id=list_id, position=position))
            rows.append(row)
        return rows

    async def save_run(self, run_id: str, transcript: RunTranscript, scenario: str = "") -> str:
        """Persist board, lists and counters of a finished run"""
        last_error = None

        for attempt in range(WRITE_RETRIES):
            try:
                async with self._session_factory() as session:
                    async with session.begin():
                        run = Run(
                            run_id=run_id,
                            protocol=transcript.protocol,
                            job_model=transcript.config.job_model.value,
                            budget=format_fraction(transcript.config.budget),
                            scenario=scenario,
                            outcome=dump_outcome(transcript.outcome),
                        )
                        session.add(run)
                        session.add_all(self._board_rows(run_id, transcript.board))
                        session.add_all(
                            MetricsRecord(
                                run_id=run_id,
                                party=row.party,
                                phase=row.phase,
                                messages=row.messages,
                                bytes=row.bytes,
                                ops=";".join(f"{op}:{count}" for op, count in row.ops),
                            )
                            for row in transcript_rows(transcript, run_id, len(transcript.context.users))
                        )
                logger.info(f"Archived run {run_id}", extra={"component": "Archive", "entries": len(transcript.board)})
                return run_id
            except Exception as e:
                last_error = e
                if "database is locked" in str(e):
                    if attempt < WRITE_RETRIES - 1:
                        await asyncio.sleep(0.1 * (attempt + 1))
                        continue
                else:
                    break

        logger.error(f"Error archiving run {run_id} after {WRITE_RETRIES} attempts: {str(last_error)}")
        raise last_error

    async def list_runs(self) -> list[dict]:
        async with self._session_factory() as session:
            result = await session.execute(select(Run).order_by(Run.created_at, Run.run_id))
            return [
                {"run_id": r.run_id, "protocol": r.protocol, "job_model": r.job_model, "budget": r.budget}
                for r in result.scalars().all()
            ]

    async def get_run(self, run_id: str) -> Optional[dict]:
        async with self._session_factory() as session:
            run = await session.get(Run, run_id)
            if run is None:
                return None
            count = await session.execute(
                select(func.count()).select_from(BoardEntry).where(BoardEntry.run_id == run_id)
            )
            return {
                "run_id": run.run_id,
                "protocol": run.protocol,
                "job_model": run.job_model,
                "budget": run.budget,
                "scenario": run.scenario,
                "outcome": run.outcome,
                "entries": count.scalar() or 0,
            }

    async def read_board(self, run_id: str, from_seq: int = 0, to_seq: Optional[int] = None) -> list[dict]:
        """Entries with from_seq <= sequence_no <= to_seq, oldest first"""
        if from_seq < 0 or (to_seq is not None and to_seq < from_seq):
            return []
        query = select(BoardEntry).where(BoardEntry.run_id == run_id, BoardEntry.sequence_no >= from_seq)
        if to_seq is not None:
            query = query.where(BoardEntry.sequence_no <= to_seq)
        async with self._session_factory() as session:
            result = await session.execute(query.order_by(BoardEntry.sequence_no))
            return [self._entry_dict(e) for e in result.scalars().all()]

    async def read_list(self, run_id: str, list_id: str) -> list[dict]:
        query = (
            select(BoardEntry)
            .join(ListMembership, ListMembership.entry_id == BoardEntry.id)
            .where(BoardEntry.run_id == run_id, ListMembership.list_id == list_id)
            .order_by(ListMembership.position)
        )
        async with self._session_factory() as session:
            result = await session.execute(query)
            return [self._entry_dict(e) for e in result.scalars().all()]

    async def read_metrics(self, run_id: str) -> list[dict]:
        async with self._session_factory() as session:
            result = await session.execute(
                select(MetricsRecord).where(MetricsRecord.run_id == run_id).order_by(MetricsRecord.id)
            )
            return [
                {"party": m.party, "phase": m.phase, "messages": m.messages, "bytes": m.bytes, "ops": m.ops}
                for m in result.scalars().all()
            ]

    @staticmethod
    def _entry_dict(entry: BoardEntry) -> dict:
        return {
            "sequence_no": entry.sequence_no,
            "logical_time": entry.logical_time,
            "author": entry.author,
            "kind": entry.kind,
            "subject": entry.subject,
            "digest": entry.digest,
            "signature": entry.signature,
        }
