# 서비스 패키지: 파이프라인 단계별 모듈
