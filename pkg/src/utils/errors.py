"""모든 서비스가 공유하는 예외 계층"""


class ScganAugError(Exception):
    """툴킷 예외의 최상위"""


class DimensionError(ScganAugError, ValueError):
    """배열 형태가 연산 계약과 맞지 않음"""


class DataError(ScganAugError, ValueError):
    """사용할 수 없는 입력 데이터 (비어 있음, 단일 클래스, 비유한값 등)"""


class DataKindError(ScganAugError, ValueError):
    """잘못된 데이터 종류에 대한 연산 (정적 벡터 / 시퀀스)"""


class ConfigError(ScganAugError, ValueError):
    """설정 검증 실패"""


class AudioFormatError(ScganAugError, ValueError):
    """허용 형식을 벗어난 오디오 파일 또는 클립"""


class SilentSignalError(AudioFormatError):
    """신호 전력이 0"""


class DivergenceError(ScganAugError, ArithmeticError):
    """학습 중 손실 또는 기울기가 비유한값이 됨"""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.reason = message
        self.iteration = iteration

    def __reduce__(self):
        return type(self), (self.reason, self.iteration)


class InsufficientPoolError(ScganAugError, ValueError):
    """필터를 통과한 합성 샘플이 요청보다 적은 클래스"""

    def __init__(self, class_index, requested, available, class_name=None):
        self.class_index = class_index
        self.class_name = class_name
        self.requested = requested
        self.available = available
        self.shortfall = requested - available
        label = class_index if class_name is None else f"{class_name} ({class_index})"
        super().__init__(
            f"class {label} has {available} surviving samples, "
            f"{requested} requested (shortfall {self.shortfall})"
        )

    def __reduce__(self):
        return type(self), (self.class_index, self.requested, self.available, self.class_name)


class RunError(ScganAugError):
    """실험 실행 하나 안에서 구성 요소 실패"""

    def __init__(self, run_index, cause):
        self.run_index = run_index
        self.cause = cause
        super().__init__(f"run {run_index}: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return type(self), (self.run_index, self.cause)
