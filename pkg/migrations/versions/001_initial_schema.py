"""Run archive schema

Revision ID: 001
Create Date: 2026-10-17 09:00:00

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa

revision: str = '001'
down_revision: Union[str, None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    op.create_table(
        'runs',
        sa.Column('run_id', sa.String(), primary_key=True),
        sa.Column('protocol', sa.String(8), nullable=False),
        sa.Column('job_model', sa.String(), nullable=False),
        sa.Column('budget', sa.String(), nullable=False),
        sa.Column('scenario', sa.Text(), nullable=False),
        sa.Column('outcome', sa.Text(), nullable=False),
        sa.Column('created_at', sa.DateTime(), nullable=False),
    )

    op.create_table(
        'board_entries',
        sa.Column('id', sa.Integer(), primary_key=True),
        sa.Column('run_id', sa.String(), sa.ForeignKey('runs.run_id'), nullable=False),
        sa.Column('sequence_no', sa.Integer(), nullable=False),
        sa.Column('logical_time', sa.Integer(), nullable=False),
        sa.Column('author', sa.String(), nullable=False),
        sa.Column('kind', sa.String(), nullable=False),
        sa.Column('subject', sa.String()),
        sa.Column('payload', sa.LargeBinary(), nullable=False),
        sa.Column('digest', sa.String(64), nullable=False),
        sa.Column('signature', sa.String(), nullable=False),
    )
    op.create_index('ix_board_entries_run_seq', 'board_entries', ['run_id', 'sequence_no'], unique=True)

    op.create_table(
        'list_memberships',
        sa.Column('id', sa.Integer(), primary_key=True),
        sa.Column('entry_id', sa.Integer(), sa.ForeignKey('board_entries.id'), nullable=False),
        sa.Column('list_id', sa.String(), nullable=False),
        sa.Column('position', sa.Integer(), nullable=False),
    )

    op.create_table(
        'metrics_rows',
        sa.Column('id', sa.Integer(), primary_key=True),
        sa.Column('run_id', sa.String(), sa.ForeignKey('runs.run_id'), nullable=False),
        sa.Column('party', sa.String(), nullable=False),
        sa.Column('phase', sa.String(), nullable=False),
        sa.Column('messages', sa.Integer(), nullable=False),
        sa.Column('bytes', sa.Integer(), nullable=False),
        sa.Column('ops', sa.String(), nullable=False, server_default=''),
    )


def downgrade() -> None:
    op.drop_table('metrics_rows')
    op.drop_table('list_memberships')
    op.drop_index('ix_board_entries_run_seq', table_name='board_entries')
    op.drop_table('board_entries')
    op.drop_table('runs')
