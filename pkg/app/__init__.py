import logging
import os

import coloredlogs
from celery import Celery

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

celery = Celery(__name__)


def setup_logging(level='INFO', log_file=None):
    """Install coloured console logging and an optional log file on the root logger."""
    root = logging.getLogger()
    coloredlogs.install(level=level, logger=root, fmt=LOG_FORMAT)

    if log_file:
        log_dir = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(log_dir, exist_ok=True)
        already = any(
            isinstance(h, logging.FileHandler) and h.baseFilename == os.path.abspath(log_file)
            for h in root.handlers
        )
        if not already:
            handler = logging.FileHandler(log_file, encoding='utf-8')
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)


def create_app(config_name=None):
    """Resolve the configuration, set up logging and bind Celery to it."""
    from app.config import config

    config_name = config_name or os.environ.get('SRS_ENV') or 'default'
    app_config = config.get(config_name, config['default'])

    setup_logging(app_config.LOG_LEVEL, app_config.LOG_FILE)
    make_celery(app_config)

    return app_config


def make_celery(app_config):
    """Configure the shared Celery instance from a Config class"""
    celery.conf.update(
        broker_url=app_config.CELERY_BROKER_URL,
        result_backend=app_config.CELERY_RESULT_BACKEND,
        task_serializer='json',
        result_serializer='json',
        accept_content=['json'],
        enable_utc=True,
        task_always_eager=app_config.CELERY_TASK_ALWAYS_EAGER,
        task_eager_propagates=app_config.CELERY_TASK_ALWAYS_EAGER,
    )
    return celery
