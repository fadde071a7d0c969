"""타입 있는 설정 문서

섹션마다 dataclass이며 ``from_dict``로 만든다. 알 수 없는 키는 거부하고
작업 시작 전에 불변 조건을 검증한다. ``to_dict``는 출력 디렉토리에
기록되는 최종 설정 문서를 만든다.
"""
import dataclasses
from dataclasses import dataclass, field

from ..utils.errors import ConfigError

MODES = ('scgan', 'cgan', 'sgan')
DATA_KINDS = ('static_vector', 'sequence')
PRIORS = ('gaussian', 'uniform')
FEATURE_SYSTEMS = ('functionals_svm', 'boaw_svm', 'llds_gru')
AUGMENTATIONS = ('none', 'transform', 'smote', 'cgan', 'sgan', 'scgan_mono', 'scgan_ensemble')
PARTITIONS = ('train', 'devel', 'test')


class ConfigSection:
    """중첩 dataclass 섹션용 from_dict / to_dict"""

    _NESTED = {}

    @classmethod
    def from_dict(cls, data, where=None):
        where = where or cls.__name__
        if data is None:
            return cls()
        if isinstance(data, cls):
            return data
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")

        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")

        kwargs = {}
        for key, value in data.items():
            nested = cls._NESTED.get(key)
            if nested is not None:
                if isinstance(value, list):
                    value = [nested.from_dict(v, f"{where}.{key}[{i}]") for i, v in enumerate(value)]
                else:
                    value = nested.from_dict(value, f"{where}.{key}")
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError as e:
            raise ConfigError(f"{where}: {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: {e}") from e

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


@dataclass
class AlternationPolicy(ConfigSection):
    """고정/동적 G-D 교대 학습 정책

    동적 임계값은 (Λ, b, c) 튜플이며 max(Λ**i + b, c)로 계산한다.
    discriminator_reduction: 판별자 임계값과 비교할 손실
      'mean' - 실제+가짜 미니배치 전체의 평균 CE (두 항의 합 / 2)
      'sum'  - 두 CE 항의 합 그대로
    """
    kind: str = 'dynamic'
    generator_epochs: int = 1
    discriminator_epochs: int = 1
    generator: tuple = (0.95, 1.0, 1.0)
    discriminator: tuple = (0.95, 0.0, 0.7)
    discriminator_reduction: str = 'mean'

    def __post_init__(self):
        self.generator = tuple(float(v) for v in self.generator)
        self.discriminator = tuple(float(v) for v in self.discriminator)
        _require(self.kind in ('fixed', 'dynamic'), f"alternation kind must be fixed or dynamic, got {self.kind!r}")
        _require(self.discriminator_reduction in ('mean', 'sum'),
                 f"discriminator_reduction must be mean or sum, got {self.discriminator_reduction!r}")
        _require(self.generator_epochs >= 1 and self.discriminator_epochs >= 1, "fixed epochs must be >= 1")
        for name, params in (('generator', self.generator), ('discriminator', self.discriminator)):
            _require(len(params) == 3, f"{name} threshold needs (decay, offset, floor)")
            _require(0.0 < params[0] < 1.0, f"{name} threshold decay must lie in (0, 1)")


@dataclass
class ScganConfig(ConfigSection):
    mode: str = 'scgan'
    num_classes: int = 4
    latent_dim: int = 32
    prior: str = 'gaussian'
    hidden_size: int = 60
    hidden_layers: int = 2
    generator_lr: float = 0.001
    discriminator_lr: float = 0.01
    batch_size: int = 64
    l2: float = 1e-4
    alternation: AlternationPolicy = field(default_factory=AlternationPolicy)
    max_iterations: int = 200
    seed: int = 0
    data_kind: str = 'static_vector'
    sequence_length: int = 40
    step_cap: int = 50
    convergence_turns: int = 10     # 0이면 수렴 조기 종료 없음
    max_steps: int = 0              # 기록 스텝 총량 제한, 0이면 제한 없음
    init_std: float = 0.1

    _NESTED = {'alternation': AlternationPolicy}

    def __post_init__(self):
        if isinstance(self.alternation, dict):
            self.alternation = AlternationPolicy.from_dict(self.alternation)
        _require(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        _require(self.data_kind in DATA_KINDS, f"data_kind must be one of {DATA_KINDS}")
        _require(self.prior in PRIORS, f"prior must be one of {PRIORS}")
        _require(self.num_classes >= 2, "num_classes must be >= 2")
        _require(self.latent_dim > 0, "latent_dim must be > 0")
        _require(self.hidden_size > 0, "hidden_size must be > 0")
        _require(self.hidden_layers >= 1, "hidden_layers must be >= 1")
        _require(self.generator_lr > 0 and self.discriminator_lr > 0, "learning rates must be > 0")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.l2 >= 0, "l2 must be >= 0")
        _require(self.max_iterations >= 0, "max_iterations must be >= 0")
        _require(self.sequence_length >= 1, "sequence_length must be >= 1")
        _require(self.step_cap >= 1, "step_cap must be >= 1")
        _require(self.convergence_turns >= 0, "convergence_turns must be >= 0")
        _require(self.max_steps >= 0, "max_steps must be >= 0")
        _require(self.init_std > 0, "init_std must be > 0")


@dataclass
class EnsembleConfig(ConfigSection):
    hidden_sizes: list = field(default_factory=lambda: [40, 60, 80, 100])
    template: ScganConfig = field(default_factory=ScganConfig)
    seeds: list = None

    _NESTED = {'template': ScganConfig}

    def __post_init__(self):
        if isinstance(self.template, dict):
            self.template = ScganConfig.from_dict(self.template)
        self.hidden_sizes = [int(n) for n in self.hidden_sizes]
        _require(len(self.hidden_sizes) >= 1, "ensemble needs at least one member")
        _require(all(n > 0 for n in self.hidden_sizes), "member hidden sizes must be positive")
        if self.seeds is not None:
            self.seeds = [int(s) for s in self.seeds]
            _require(len(self.seeds) == len(self.hidden_sizes), "one seed per member is required")


@dataclass
class FeatureConfig(ConfigSection):
    codebook_size: int = 250
    codebook_method: str = 'kmeans'
    boaw_assignments: int = 5
    window_ms: int = 400
    step_ms: int = 100

    def __post_init__(self):
        _require(self.codebook_method in ('kmeans', 'random'), "codebook_method must be kmeans or random")
        _require(self.codebook_size >= 1, "codebook_size must be >= 1")
        _require(1 <= self.boaw_assignments <= self.codebook_size, "boaw_assignments must lie in [1, codebook_size]")
        _require(self.window_ms > 0 and self.step_ms > 0, "window and step must be positive")


@dataclass
class GruClassifierConfig(ConfigSection):
    hidden_size: int = 60
    hidden_layers: int = 2
    learning_rate: float = 0.01
    l2: float = 1e-4
    batch_size: int = 64
    steps: int = 300
    seed: int = 0
    init_std: float = 0.1

    def __post_init__(self):
        _require(self.hidden_size > 0 and self.hidden_layers >= 1, "GRU classifier shape must be positive")
        _require(self.learning_rate > 0, "learning_rate must be > 0")
        _require(self.steps >= 0, "steps must be >= 0")


@dataclass
class RunConfig(ConfigSection):
    feature_system: str = 'functionals_svm'
    augmentation: str = 'none'
    m: int = 250
    runs: int = 20
    seed: int = 0
    svm_c: float = None
    svm_tol: float = 1e-4
    smote_k: int = 5
    pool_oversample: int = 3
    transform_copies: int = 10
    scgan: ScganConfig = field(default_factory=ScganConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    classifier: GruClassifierConfig = field(default_factory=GruClassifierConfig)

    _NESTED = {
        'scgan': ScganConfig,
        'ensemble': EnsembleConfig,
        'features': FeatureConfig,
        'classifier': GruClassifierConfig,
    }

    def __post_init__(self):
        _require(self.feature_system in FEATURE_SYSTEMS, f"feature_system must be one of {FEATURE_SYSTEMS}")
        _require(self.augmentation in AUGMENTATIONS, f"augmentation must be one of {AUGMENTATIONS}")
        _require(self.m >= 0, "m must be >= 0")
        _require(self.runs >= 1, "runs must be >= 1")
        _require(self.pool_oversample >= 1, "pool_oversample must be >= 1")
        if self.feature_system == 'llds_gru' and self.augmentation == 'smote':
            raise ConfigError("smote cannot synthesize sequences; use it with functionals_svm or boaw_svm")

    @property
    def complexity(self):
        """SVM 복잡도: 지정값, 없으면 특징 시스템별 기본값"""
        if self.svm_c is not None:
            return float(self.svm_c)
        return 1e-3 if self.feature_system == 'boaw_svm' else 1e-4


@dataclass
class ClassProfile(ConfigSection):
    """합성 코골이 클래스 하나의 음향 레시피"""
    name: str = 'V'
    f0_band: tuple = (80.0, 110.0)
    formant_hz: float = 500.0
    formant_bandwidth_hz: float = 150.0
    duration_range: tuple = (0.4, 0.8)
    amplitude_range: tuple = (0.2, 0.5)

    def __post_init__(self):
        self.f0_band = tuple(float(v) for v in self.f0_band)
        self.duration_range = tuple(float(v) for v in self.duration_range)
        self.amplitude_range = tuple(float(v) for v in self.amplitude_range)
        _require(0 < self.f0_band[0] <= self.f0_band[1], f"class {self.name}: bad f0 band")
        _require(0 < self.duration_range[0] <= self.duration_range[1], f"class {self.name}: bad duration range")
        _require(0 < self.amplitude_range[0] <= self.amplitude_range[1] <= 1.0, f"class {self.name}: bad amplitude range")
        _require(0 < self.formant_hz < 8000, f"class {self.name}: formant must lie below Nyquist")


def _default_profiles():
    return [
        ClassProfile('V', (80.0, 110.0), 500.0),
        ClassProfile('O', (130.0, 170.0), 900.0),
        ClassProfile('T', (190.0, 240.0), 1400.0),
        ClassProfile('E', (260.0, 320.0), 2000.0),
    ]


def _default_counts():
    # VOTE 학습 분할의 클래스 비율
    return {'train': [40, 20, 8, 10], 'devel': [40, 20, 8, 10], 'test': [40, 20, 8, 10]}


@dataclass
class CorpusSpec(ConfigSection):
    classes: list = field(default_factory=_default_profiles)
    counts: dict = field(default_factory=_default_counts)
    noise_floor: float = 0.01
    clip_seconds: float = 2.5
    sample_rate: int = 16000
    seed: int = 0

    _NESTED = {'classes': ClassProfile}

    def __post_init__(self):
        self.classes = [ClassProfile.from_dict(c) if isinstance(c, dict) else c for c in self.classes]
        _require(len(self.classes) >= 2, "corpus needs at least two classes")
        unknown = sorted(set(self.counts) - set(PARTITIONS))
        _require(not unknown, f"unknown partitions: {', '.join(unknown)}")
        for partition, counts in self.counts.items():
            _require(len(counts) == len(self.classes), f"{partition}: one count per class is required")
            _require(all(int(c) > 0 for c in counts), f"{partition}: counts must be positive")
        _require(self.noise_floor > 0, "noise_floor must be > 0")
        longest = max(c.duration_range[1] for c in self.classes)
        _require(self.clip_seconds >= longest + 0.5, "clip_seconds must leave room around the longest burst")

    @classmethod
    def scarce(cls, per_class=20, devel_per_class=20, test_per_class=20, seed=0):
        """증강 효과 확인용 균형 소규모 코퍼스"""
        n = len(_default_profiles())
        return cls(counts={
            'train': [per_class] * n,
            'devel': [devel_per_class] * n,
            'test': [test_per_class] * n,
        }, seed=seed)


@dataclass
class CliConfig(ConfigSection):
    manifest: str = None
    features: str = None
    models: list = None
    pool: str = None
    codebook: str = None
    report: str = None
    m_values: list = None
    per_member_per_class: int = 100
    seed: int = None
    jobs: int = 1
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    run: RunConfig = field(default_factory=RunConfig)

    _NESTED = {'corpus': CorpusSpec, 'run': RunConfig}

    def __post_init__(self):
        _require(self.jobs >= 1, "jobs must be >= 1")
        if self.m_values is not None:
            self.m_values = [int(m) for m in self.m_values]

    def require(self, *names):
        """비어 있는 첫 필드 이름으로 ConfigError 발생"""
        for name in names:
            if getattr(self, name) in (None, '', []):
                raise ConfigError(f"missing required field: {name}")
