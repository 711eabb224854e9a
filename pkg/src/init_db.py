import asyncio
import logging
import os

from alembic import command
from alembic.config import Config

logger = logging.getLogger('app')

ALEMBIC_INI = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "alembic.ini")


async def init_database(database_url: str = None):
    """Bring the run archive schema up to the latest migration"""
    alembic_cfg = Config(ALEMBIC_INI)
    if database_url:
        alembic_cfg.set_main_option("sqlalchemy.url", database_url)

    try:
        # alembic is synchronous; keep it off the event loop
        await asyncio.get_running_loop().run_in_executor(None, command.upgrade, alembic_cfg, "head")
        logger.info("Archive migrations completed", extra={'component': 'Setup', 'version': 'head'})
    except Exception as e:
        logger.error("Archive migration failed", extra={'component': 'Setup', 'error': str(e)})
        raise


if __name__ == "__main__":
    asyncio.run(init_database())
