import os
from dotenv import load_dotenv

# 환경 변수 읽기 전에 .env 파일 로드
load_dotenv()


class Settings:
    # 출력 경로 설정
    OUTPUT_ROOT = os.getenv('SCGAN_OUTPUT_ROOT', 'outputs')
    RESOLVED_CONFIG_NAME = 'resolved_config.json'

    # 로그 설정
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOGS_DIR = os.getenv('LOGS_DIR', 'logs')
    LOGGER_NAME = 'scgan_aug'

    # 실행 설정
    DEFAULT_SEED = int(os.getenv('SCGAN_SEED', '0'))
    DEFAULT_JOBS = int(os.getenv('SCGAN_JOBS', '1'))

    # 오디오 설정
    SAMPLE_RATE = 16000
    CLASS_NAMES = ('V', 'O', 'T', 'E')

    @classmethod
    def validate_settings(cls):
        """환경 변수에서 읽은 설정값 검증"""
        invalid_settings = []
        if not cls.OUTPUT_ROOT:
            invalid_settings.append('SCGAN_OUTPUT_ROOT')
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            invalid_settings.append('LOG_LEVEL')
        if cls.DEFAULT_JOBS < 1:
            invalid_settings.append('SCGAN_JOBS')

        if invalid_settings:
            raise ValueError(f"Invalid settings: {', '.join(invalid_settings)}")

        return True
