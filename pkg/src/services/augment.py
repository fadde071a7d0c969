"""학습 세트 증강

GAN 경로: scGAN 앙상블을 학습해 클래스 조건 샘플을 풀에 모으고, 각 멤버의
판별자가 조건 클래스로 인식한 샘플만 남겨 클래스당 m개를 추가한다.
비교 기준: SMOTE, 원본 오디오 잡음 합성 변환, 복제 오버샘플링.
"""
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.signal import lfilter
from sklearn.neighbors import NearestNeighbors

from ..config.schema import EnsembleConfig
from ..utils.errors import (
    AudioFormatError, DataError, DataKindError, DimensionError, DivergenceError,
    InsufficientPoolError, SilentSignalError,
)
from ..utils.helpers import ensure_directory, read_frames, spawn_seeds, write_frames
from ..utils.logger import get_logger
from .audio_pipeline import AudioClip
from .records import FeatureSet
from .scgan_engine import REAL, discriminate, generate_batch, init_model, train

logger = get_logger()

UNFILTERED, DROPPED, KEPT = -1, 0, 1
NOISE_KINDS = ('white', 'brown')
SNR_GRID_DB = (10.0, 13.75, 17.5, 21.25, 25.0)


@dataclass
class AugmentPlan:
    """단일 모델 또는 앙상블에서 클래스당 m개의 합성 샘플을 추가하는 계획

    oversample: 필터 전 풀 크기 배수 (활성 멤버 수로 나눠 멤버별 분배)
    histograms: BoAW 히스토그램이면 선택 후 음수 제거 + 합 1로 재정규화
    """
    m: int = 250
    source: str = 'ensemble'
    seed: int = 0
    oversample: int = 3
    histograms: bool = False

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.source not in ('mono', 'ensemble'):
            raise ValueError(f"source must be mono or ensemble, got {self.source!r}")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")


# --- 앙상블 -------------------------------------------------------------

def _train_member(config, train_set):
    try:
        model, _ = train(config, train_set)
        return model
    except DivergenceError as e:
        model = init_model(config, train_set.feature_dim)
        model.diverged = True
        model.failure = str(e)
        return model


def train_ensemble(cfg, train_set, jobs=1):
    """은닉 크기마다 독립 시드 scGAN 하나, 설정 순서대로

    학습이 발산한 멤버는 초기 상태로 ``diverged`` 표시되어 반환되고
    나머지 멤버에는 영향이 없다.
    """
    if not isinstance(cfg, EnsembleConfig):
        cfg = EnsembleConfig.from_dict(cfg)
    seeds = cfg.seeds if cfg.seeds is not None else spawn_seeds(cfg.template.seed, len(cfg.hidden_sizes))
    configs = [cfg.template.replace(hidden_size=size, seed=seed)
               for size, seed in zip(cfg.hidden_sizes, seeds)]

    logger.info(f"Training {len(configs)} ensemble member(s) with sizes {cfg.hidden_sizes} (jobs={jobs})")
    members = Parallel(n_jobs=jobs)(delayed(_train_member)(c, train_set) for c in configs)

    for j, member in enumerate(members):
        if member.diverged:
            logger.warning(f"ensemble member {j} (N={member.config.hidden_size}) diverged: {member.failure}")
    return list(members)


# --- 풀 -----------------------------------------------------------------

@dataclass
class SynthPool:
    payloads: np.ndarray
    classes: np.ndarray
    members: np.ndarray
    verdicts: np.ndarray = None

    def __post_init__(self):
        self.payloads = np.asarray(self.payloads, dtype=np.float64)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        self.members = np.asarray(self.members, dtype=np.int64).reshape(-1)
        if self.verdicts is None:
            self.verdicts = np.full(len(self.classes), UNFILTERED, dtype=np.int64)
        self.verdicts = np.asarray(self.verdicts, dtype=np.int64).reshape(-1)
        n = self.payloads.shape[0]
        if not (len(self.classes) == len(self.members) == len(self.verdicts) == n):
            raise DimensionError("pool columns must have one entry per payload")

    def __len__(self):
        return len(self.classes)

    @property
    def data_kind(self):
        return 'static_vector' if self.payloads.ndim == 2 else 'sequence'

    def survivors(self):
        """필터에서 제외되지 않은 항목 인덱스"""
        return np.flatnonzero(self.verdicts != DROPPED)

    def survivor_counts(self, num_classes):
        return np.bincount(self.classes[self.survivors()], minlength=num_classes)[:num_classes]


def synthesize_pool(members, per_member_per_class, rng, num_classes=None):
    """필터 전 항목 members x K x per_member_per_class개

    sgan 생성자는 조건이 없으므로 자기 판별자의 실제 클래스 argmax로 레이블을 붙인다.
    """
    if not members:
        raise DataError("no ensemble members given")
    active = [(j, m) for j, m in enumerate(members) if not m.diverged]
    if len(active) < len(members):
        logger.warning(f"{len(members) - len(active)} diverged member(s) skipped during synthesis")
    K = num_classes or members[0].num_classes
    payload_shape = (members[0].feature_dim,) if members[0].data_kind == 'static_vector' else \
        (members[0].config.sequence_length, members[0].feature_dim)

    payloads, classes, member_ids = [np.zeros((0,) + payload_shape)], [], []
    for j, member in active:
        requested = np.repeat(np.arange(K), per_member_per_class)
        samples = generate_batch(member, requested, rng)
        if member.mode == 'sgan' and len(samples):
            probs = discriminate(member, samples)
            requested = np.argmax(probs[:, :K], axis=1)
        payloads.append(samples)
        classes.append(requested)
        member_ids.append(np.full(len(requested), j))

    pool = SynthPool(
        np.concatenate(payloads),
        np.concatenate(classes) if classes else np.zeros(0, dtype=np.int64),
        np.concatenate(member_ids) if member_ids else np.zeros(0, dtype=np.int64),
    )
    logger.info(f"Synthesised pool of {len(pool)} entries from {len(active)} member(s)")
    return pool


def filter_by_discriminator(pool, members):
    """생성한 멤버의 판별자 argmax가 자기 클래스인 항목을 KEPT로 기록"""
    verdicts = np.full(len(pool), DROPPED, dtype=np.int64)
    for j in np.unique(pool.members):
        idx = np.flatnonzero(pool.members == j)
        member = members[j]
        probs = discriminate(member, pool.payloads[idx], pool.classes[idx])
        predicted = np.argmax(probs, axis=1)
        target = REAL if member.mode == 'cgan' else pool.classes[idx]
        verdicts[idx] = np.where(predicted == target, KEPT, DROPPED)
    kept = int(np.sum(verdicts == KEPT))
    logger.info(f"Discriminator filter kept {kept} of {len(pool)} pool entries")
    return SynthPool(pool.payloads, pool.classes, pool.members, verdicts)


def select_balanced(pool, m, rng, num_classes, class_names=None):
    """클래스마다 통과 항목 정확히 m개, 비복원 균등 추출"""
    if m < 0:
        raise ValueError("m must be >= 0")
    survivors = pool.survivors()
    chosen = []
    for k in range(num_classes):
        candidates = survivors[pool.classes[survivors] == k]
        if len(candidates) < m:
            name = class_names[k] if class_names else None
            raise InsufficientPoolError(k, m, len(candidates), name)
        chosen.append(rng.choice(candidates, size=m, replace=False))
    idx = np.concatenate(chosen).astype(np.int64)
    payloads = pool.payloads[idx] if len(idx) else np.zeros((0,) + pool.payloads.shape[1:])
    return FeatureSet(
        payloads,
        pool.classes[idx],
        np.full(len(idx), 'synthetic', dtype=object),
        np.array([f'synthetic_m{pool.members[i]}_{i:06d}' for i in idx], dtype=object),
    )


def merge(train_set, subset):
    """예제별 출처를 유지한 다중집합 합"""
    if subset is None or len(subset) == 0:
        return train_set
    return train_set.concat(subset)


def renormalize_histograms(subset):
    """생성된 BoAW 행: 0 미만 절삭 후 합이 1이 되도록 재조정"""
    X = np.clip(subset.X, 0.0, None)
    totals = X.sum(axis=1, keepdims=True)
    X = np.where(totals > 0, X / np.where(totals > 0, totals, 1.0), 1.0 / X.shape[1])
    return FeatureSet(X, subset.y, subset.provenance, subset.recordings, subset.partition)


def augment_with_plan(plan, members, train_set, num_classes, class_names=None):
    """계획대로 풀 합성 -> 판별자 필터 -> 균형 선택 -> 병합"""
    if plan.m == 0:
        return train_set
    rng = np.random.default_rng(plan.seed)
    usable = [m for m in members if not m.diverged] or members
    per_member = math.ceil(plan.oversample * plan.m / len(usable))
    logger.info(f"Augmentation plan: m={plan.m} from {plan.source} "
                f"({len(usable)} active member(s), {per_member} per class each)")
    pool = filter_by_discriminator(synthesize_pool(members, per_member, rng, num_classes), members)
    try:
        subset = select_balanced(pool, plan.m, rng, num_classes, class_names)
    except InsufficientPoolError as e:
        logger.error(f"Balanced selection failed: {e}")
        raise
    if plan.histograms:
        subset = renormalize_histograms(subset)
    return merge(train_set, subset)


def export_pool(pool, path):
    """CSV (class, member, verdict, 페이로드 값), 시퀀스는 프레임 바이너리"""
    path = Path(path)
    ensure_directory(path.parent)
    if pool.data_kind == 'sequence':
        return write_frames(path, list(pool.payloads), pool.classes, pool.members, pool.verdicts)
    frame = pd.DataFrame(pool.payloads, columns=[f'f{i}' for i in range(pool.payloads.shape[1])])
    frame.insert(0, 'verdict', pool.verdicts)
    frame.insert(0, 'member', pool.members)
    frame.insert(0, 'class', pool.classes)
    frame.to_csv(path, index=False, float_format='%.17g')
    return path


def import_pool(path):
    path = Path(path)
    if path.suffix.lower() == '.csv':
        frame = pd.read_csv(path, float_precision='round_trip')
        values = frame.drop(columns=['class', 'member', 'verdict']).to_numpy(dtype=np.float64)
        return SynthPool(values, frame['class'].to_numpy(), frame['member'].to_numpy(), frame['verdict'].to_numpy())
    frames, labels, members, flags = read_frames(path)
    if not frames:
        raise DataError(f"{path} holds an empty pool")
    return SynthPool(np.stack(frames), labels, members, flags)


# --- SMOTE ----------------------------------------------------------------

def smote_interpolate(x, x_nn, lam):
    """x + lam * (x_nn - x)."""
    return x + lam * (x_nn - x)


def smote(train_set, k_neighbors=5, target_count=None, rng=None):
    """모든 클래스를 target_count (기본: 최다 클래스 수)까지 올리는 합성 소수 클래스 예제"""
    if train_set.data_kind != 'static_vector':
        raise DataKindError("SMOTE cannot synthesize sequences")
    rng = np.random.default_rng() if rng is None else rng
    counts = np.bincount(train_set.y)
    target = int(counts.max()) if target_count is None else int(target_count)

    X_new, y_new = [], []
    for k, count in enumerate(counts):
        needed = target - int(count)
        if needed <= 0 or count == 0:
            continue
        if count < k_neighbors + 1:
            raise DataError(f"class {k} has {count} examples; SMOTE needs at least {k_neighbors + 1}")
        X_class = train_set.X[train_set.y == k]
        nn = NearestNeighbors(n_neighbors=k_neighbors + 1)
        _, indices = nn.fit(X_class).kneighbors(X_class)
        neighbours = [row[row != i][:k_neighbors] for i, row in enumerate(indices)]

        for _ in range(needed):
            i = rng.integers(count)
            j = rng.choice(neighbours[i])
            X_new.append(smote_interpolate(X_class[i], X_class[j], rng.uniform()))
            y_new.append(k)
        logger.info(f"SMOTE: class {k} raised from {count} to {target}")

    X_new = np.array(X_new) if X_new else np.zeros((0, train_set.feature_dim))
    return FeatureSet(
        X_new, np.array(y_new, dtype=np.int64),
        np.full(len(y_new), 'smote', dtype=object),
        np.array([f'smote_{i:06d}' for i in range(len(y_new))], dtype=object),
    )


# --- 가산 잡음 -------------------------------------------------------

def make_noise(kind, length, rng):
    """백색 가우시안 잡음 또는 실내 같은 갈색 잡음 (누설 적분 백색 잡음)"""
    white = rng.standard_normal(length)
    if kind == 'white':
        return white
    if kind == 'brown':
        brown = lfilter([1.0], [1.0, -0.995], white)
        return brown / np.std(brown)
    raise ValueError(f"unknown noise kind {kind!r}")


def _crop(noise, length, rng):
    if len(noise) >= length:
        offset = rng.integers(len(noise) - length + 1)
        return noise[offset:offset + length]
    tiled = np.tile(noise, math.ceil(length / len(noise)) + 1)
    offset = rng.integers(len(noise))
    return tiled[offset:offset + length]


def noise_transform(clip, noise, snr_db, rng):
    """`noise`의 무작위 구간을 요청 SNR로 스케일해 더함

    합이 풀스케일을 넘으면 신호와 잡음을 함께 줄이고 그 이득을 반환 클립에 기록한다.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    if clip.sample_rate != noise.sample_rate:
        raise AudioFormatError(f"sample rates differ: {clip.sample_rate} vs {noise.sample_rate}")
    signal = clip.samples
    p_signal = np.mean(signal ** 2)
    if p_signal == 0:
        raise SilentSignalError("cannot set an SNR against a silent signal")
    crop = _crop(noise.samples, len(signal), rng)
    p_noise = np.mean(crop ** 2)
    if p_noise == 0:
        raise SilentSignalError("noise clip is silent")

    scale = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = signal + scale * crop
    gain = 1.0
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        gain = 0.999 / peak
        mixed = mixed * gain
        logger.debug(f"headroom gain {gain:.4f} applied at {snr_db} dB")
    return AudioClip(mixed, clip.sample_rate, headroom_gain=gain)


def transform_grid(copies=10):
    grid = [(kind, snr) for kind in NOISE_KINDS for snr in SNR_GRID_DB]
    if not 1 <= copies <= len(grid):
        raise ValueError(f"copies must lie in [1, {len(grid)}]")
    return grid[:copies]


def transform_corpus(clips, rng, copies=10):
    """잡음 종류 x SNR 격자로 모든 클립의 열화 복사본 생성

    (원본 인덱스, 잡음 종류, snr_db, clip) 튜플 반환.
    """
    grid = transform_grid(copies)
    out = []
    for i, clip in enumerate(clips):
        for kind, snr in grid:
            noise = AudioClip(make_noise(kind, len(clip.samples) + clip.sample_rate, rng), clip.sample_rate)
            out.append((i, kind, snr, noise_transform(clip, noise, snr, rng)))
    logger.info(f"Noise transformation produced {len(out)} clips from {len(clips)} originals")
    return out


# --- 복제 ----------------------------------------------------------

def oversample_replicate(train_set, num_classes, rng):
    """모든 클래스를 최다 클래스 수까지 복제

    원본 순서는 유지하고 클래스마다 전체 복사본과 균등 선택한 나머지를 뒤에 붙인다.
    """
    counts = train_set.class_counts(num_classes)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise DataError(f"class {int(empty[0])} has no examples to replicate")
    target = int(counts.max())
    extra = []
    for k in range(num_classes):
        idx = np.flatnonzero(train_set.y == k)
        whole, remainder = divmod(target, len(idx))
        extra.extend([idx] * (whole - 1))
        if remainder:
            extra.append(rng.choice(idx, size=remainder, replace=False))
    if not extra:
        return train_set
    order = np.concatenate([np.arange(len(train_set))] + extra)
    return train_set.subset(order)
