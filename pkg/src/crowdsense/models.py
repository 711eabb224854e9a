from datetime import datetime

from sqlalchemy import Column, DateTime, ForeignKey, Index, Integer, LargeBinary, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    run_id = Column(String, primary_key=True)
    protocol = Column(String(8), nullable=False)
    job_model = Column(String, nullable=False)
    budget = Column(String, nullable=False)  # exact fraction "num/den"
    scenario = Column(Text, nullable=False)
    outcome = Column(Text, nullable=False)
    created_at = Column(DateTime, nullable=False, default=datetime.utcnow)

    entries = relationship("BoardEntry", back_populates="run", order_by="BoardEntry.sequence_no")
    metrics = relationship("MetricsRecord", back_populates="run")


class BoardEntry(Base):
    __tablename__ = 'board_entries'
    __table_args__ = (Index('ix_board_entries_run_seq', 'run_id', 'sequence_no', unique=True),)

    id = Column(Integer, primary_key=True)
    run_id = Column(String, ForeignKey('runs.run_id'), nullable=False)
    sequence_no = Column(Integer, nullable=False)
    logical_time = Column(Integer, nullable=False)
    author = Column(String, nullable=False)
    kind = Column(String, nullable=False)
    subject = Column(String)
    payload = Column(LargeBinary, nullable=False)
    digest = Column(String(64), nullable=False)
    signature = Column(String, nullable=False)

    run = relationship("Run", back_populates="entries")
    memberships = relationship("ListMembership", back_populates="entry")


class ListMembership(Base):
    __tablename__ = 'list_memberships'

    id = Column(Integer, primary_key=True)
    entry_id = Column(Integer, ForeignKey('board_entries.id'), nullable=False)
    list_id = Column(String, nullable=False)
    position = Column(Integer, nullable=False)

    entry = relationship("BoardEntry", back_populates="memberships")


class MetricsRecord(Base):
    __tablename__ = 'metrics_rows'

    id = Column(Integer, primary_key=True)
    run_id = Column(String, ForeignKey('runs.run_id'), nullable=False)
    party = Column(String, nullable=False)
    phase = Column(String, nullable=False)
    messages = Column(Integer, nullable=False)
    bytes = Column(Integer, nullable=False)
    ops = Column(String, nullable=False, default="")

    run = relationship("Run", back_populates="metrics")
