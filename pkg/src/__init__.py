# 코골이 소리 분류를 위한 scGAN 데이터 증강 툴킷
__version__ = "1.0.0"
