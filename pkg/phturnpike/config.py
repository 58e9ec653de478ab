import os
import logging

logger = logging.getLogger(__name__)

# Load environment variables
if os.path.exists('.env'):
    from dotenv import load_dotenv
    load_dotenv()
    logger.info("Loaded .env file")


def _env_float(name, default):
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        logger.error(f"Invalid value for {name}: {raw!r}, using {default}")
        return default


def _env_int(name, default):
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        logger.error(f"Invalid value for {name}: {raw!r}, using {default}")
        return default


class Config:
    # Logging
    LOG_LEVEL = os.environ.get('PHTURNPIKE_LOG_LEVEL', 'INFO').upper()

    # Runner
    JOBS = _env_int('PHTURNPIKE_JOBS', 1)
    OUTPUT_DIR = os.environ.get('PHTURNPIKE_OUTPUT_DIR', 'results')

    # Numerics
    KERNEL_RTOL = _env_float('PHTURNPIKE_KERNEL_RTOL', 1e-9)  # relative to lambda_max(R)
    SUBSTEP_SAFETY = _env_float('PHTURNPIKE_SUBSTEP_SAFETY', 0.9)  # fraction of the RK4 limit
    RANK_RTOL = _env_float('PHTURNPIKE_RANK_RTOL', 0.0)  # 0 -> eps * max(shape)

    # Debug mode
    DEBUG = os.environ.get('PHTURNPIKE_DEBUG', 'False').lower() == 'true'

    @classmethod
    def validate(cls):
        """Check that the numeric settings are usable"""
        valid = True
        if not 0 < cls.SUBSTEP_SAFETY <= 1:
            logger.error(f"PHTURNPIKE_SUBSTEP_SAFETY must lie in (0, 1], got {cls.SUBSTEP_SAFETY}")
            valid = False
        if not 0 < cls.KERNEL_RTOL < 1:
            logger.error(f"PHTURNPIKE_KERNEL_RTOL must lie in (0, 1), got {cls.KERNEL_RTOL}")
            valid = False
        if cls.JOBS < 1:
            logger.error(f"PHTURNPIKE_JOBS must be at least 1, got {cls.JOBS}")
            valid = False
        if cls.LOG_LEVEL not in logging.getLevelNamesMapping():
            logger.error(f"Unknown log level {cls.LOG_LEVEL}")
            valid = False
        return valid


def configure_logging(level=None):
    """Install the root log handler"""
    level = (level or Config.LOG_LEVEL).upper()
    if Config.DEBUG:
        level = 'DEBUG'
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
