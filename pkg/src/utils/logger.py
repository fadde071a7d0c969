import logging
from datetime import datetime
from pathlib import Path

from ..config.settings import Settings


def setup_logger(name=Settings.LOGGER_NAME, log_dir=None, level=None):
    """로거 설정 (콘솔 + 날짜별 파일 핸들러)"""
    level = getattr(logging, (level or Settings.LOG_LEVEL).upper(), logging.INFO)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 이전 설정의 핸들러 제거
    if logger.handlers:
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    formatter = logging.Formatter('%(asctime)s [%(levelname)s] %(message)s')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        today = datetime.now().strftime('%Y-%m-%d')
        file_handler = logging.FileHandler(log_dir / f'{today}.log', encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def get_logger(name=Settings.LOGGER_NAME):
    """패키지 로거 (또는 하위 로거) 반환"""
    return logging.getLogger(name)
