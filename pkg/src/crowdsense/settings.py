import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()

FULL_KEY_BITS = 1024


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    return int(raw) if raw not in (None, "") else default


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").strip().lower() in {"1", "true", "yes", "on"}


@dataclass(frozen=True)
class Settings:
    """Process-wide knobs read from the environment (.env supported)"""

    group_bits: int = 512
    paillier_bits: int = 512
    code_bits: int = 32
    sign_digits: int = 4
    scale_headroom: int = 10_000
    coverage_probability: float = 0.4
    database_url: str = "sqlite+aiosqlite:///auction_board.db"
    log_dir: str = "logs"
    api_host: str = "localhost"
    api_port: int = 8082

    @classmethod
    def from_env(cls) -> "Settings":
        """Build settings from PVI_* environment variables"""
        group_bits = _env_int("PVI_GROUP_BITS", cls.group_bits)
        paillier_bits = _env_int("PVI_PAILLIER_BITS", cls.paillier_bits)
        if _env_flag("PVI_FULL_KEYS"):
            group_bits = paillier_bits = FULL_KEY_BITS
        return cls(
            group_bits=group_bits,
            paillier_bits=paillier_bits,
            code_bits=_env_int("PVI_CODE_BITS", cls.code_bits),
            sign_digits=_env_int("PVI_SIGN_DIGITS", cls.sign_digits),
            scale_headroom=_env_int("PVI_SCALE_HEADROOM", cls.scale_headroom),
            coverage_probability=float(os.getenv("PVI_COVERAGE_PROB", cls.coverage_probability)),
            database_url=os.getenv("DATABASE_URL", cls.database_url),
            log_dir=os.getenv("LOG_DIR", cls.log_dir),
            api_host=os.getenv("BOARD_API_HOST", cls.api_host),
            api_port=_env_int("BOARD_API_PORT", cls.api_port),
        )
