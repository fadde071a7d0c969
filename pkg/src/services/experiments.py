"""실험 프로토콜

UAR, 합성 코골이 코퍼스, 반복 증강 실험, 추가 샘플 수 스윕,
고정/동적 교대 비교, CSV/SVG 리포트 출력.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from jinja2 import Template
from joblib import Parallel, delayed
from scipy.signal import get_window, lfilter
from sklearn.decomposition import PCA
from sklearn.metrics import recall_score

from ..config.schema import AUGMENTATIONS, PARTITIONS, AlternationPolicy, CorpusSpec, RunConfig
from ..config.settings import Settings
from ..utils.errors import ConfigError, DataError, DimensionError, RunError, ScganAugError
from ..utils.helpers import ensure_directory, read_json, spawn_seeds, write_json
from ..utils.logger import get_logger
from . import audio_pipeline as audio
from .augment import (
    AugmentPlan, augment_with_plan, merge, oversample_replicate, smote, synthesize_pool,
    train_ensemble, transform_corpus,
)
from .classifiers import (
    confusion_matrix, gru_posteriors, majority_vote, svm_predict_batch,
    train_gru_classifier, train_svm,
)
from .records import FeatureSet
from .scgan_engine import train

logger = get_logger()

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / 'templates'
GAN_MODES = {'cgan': 'cgan', 'sgan': 'sgan', 'scgan_mono': 'scgan', 'scgan_ensemble': 'scgan'}
REPORT_COLUMNS = ['kind', 'run', 'seed', 'dev_uar', 'test_uar', 'dev_confusion', 'test_confusion']
PALETTE = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')


# --- 지표 ---------------------------------------------------------------

def uar(predictions, labels, num_classes):
    """비가중 평균 재현율, `labels`에 없는 클래스는 재현율 0으로 계산"""
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise DataError("UAR needs at least one label")
    if predictions.shape != labels.shape:
        raise DimensionError(f"{predictions.size} predictions for {labels.size} labels")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes})")
    absent = sorted(set(range(num_classes)) - set(labels.tolist()))
    if absent:
        logger.warning(f"classes {absent} are absent from the labels; their recall counts as 0")
    return float(recall_score(labels, predictions, labels=list(range(num_classes)),
                              average='macro', zero_division=0))


# --- 합성 코퍼스 -----------------------------------------------------

def synthesize_snore(profile, spec, rng):
    """클립 하나: 균등 배경 잡음 + 포먼트 필터를 거친 배음 버스트 하나

    (clip, (burst_start, burst_end)) 반환, 단위는 샘플.
    """
    sr = spec.sample_rate
    n = int(round(spec.clip_seconds * sr))
    samples = rng.uniform(-spec.noise_floor, spec.noise_floor, size=n)

    duration = rng.uniform(*profile.duration_range)
    f0 = rng.uniform(*profile.f0_band)
    amplitude = rng.uniform(*profile.amplitude_range)
    length = int(round(duration * sr))

    # 샘플링 레이트 1/4까지의 배음, 위상은 무작위
    t = np.arange(length) / sr
    harmonics = np.arange(1, int((sr / 4) // f0) + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=harmonics.size)
    source = np.sin(2.0 * np.pi * f0 * np.outer(t, harmonics) + phases).sum(axis=1)

    r = np.exp(-np.pi * profile.formant_bandwidth_hz / sr)
    theta = 2.0 * np.pi * profile.formant_hz / sr
    burst = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], source)

    taper = int(0.02 * sr)
    ramp = get_window('hann', 2 * taper, fftbins=False)[:taper]
    burst[:taper] *= ramp
    burst[-taper:] *= ramp[::-1]
    burst *= amplitude / np.max(np.abs(burst))

    margin = int(0.2 * sr)
    start = int(rng.integers(margin, n - margin - length + 1))
    samples[start:start + length] += burst
    return audio.AudioClip(np.clip(samples, -1.0, 1.0), sr), (start, start + length)


def gen_synthetic_corpus(spec, out_dir):
    """{partition}_{class}_{index}.wav 클립과 manifest.csv 쓰기, 매니페스트 반환"""
    if not isinstance(spec, CorpusSpec):
        spec = CorpusSpec.from_dict(spec)
    out_dir = ensure_directory(out_dir)
    rng = np.random.default_rng(spec.seed)
    rows = []
    for partition in PARTITIONS:
        counts = spec.counts.get(partition)
        if counts is None:
            continue
        for profile, count in zip(spec.classes, counts):
            for idx in range(int(count)):
                clip, _ = synthesize_snore(profile, spec, rng)
                name = f'{partition}_{profile.name}_{idx:04d}.wav'
                audio.write_wav(out_dir / name, clip)
                rows.append((name, profile.name, partition))
    audio.write_manifest(rows, out_dir / 'manifest.csv')
    logger.info(f"Synthetic corpus: {len(rows)} clips written to {out_dir}")
    return pd.DataFrame(rows, columns=audio.MANIFEST_COLUMNS)


# --- 코퍼스 로드와 특징 ------------------------------------------

@dataclass
class Corpus:
    """분할별 이벤트 클립과 LLD 시퀀스"""
    class_names: tuple
    events: dict
    llds: dict
    labels: dict
    recordings: dict

    @property
    def num_classes(self):
        return len(self.class_names)


def _process_recording(path):
    clip = audio.read_wav(path)
    segments = audio.detect_events(clip)
    if segments:
        longest = max(segments, key=lambda s: s.end - s.start)
        clip = audio.extract_event(clip, longest)
    else:
        logger.warning(f"{path}: no event detected; using the whole clip")
    return clip, audio.extract_llds(clip).values


def load_corpus(manifest_path, class_names=None, jobs=1):
    """매니페스트 항목마다 이벤트 분할 후 LLD 추출"""
    manifest = audio.read_manifest(manifest_path)
    root = Path(manifest_path).parent
    names = tuple(class_names or Settings.CLASS_NAMES)
    unknown = sorted(set(manifest['label']) - set(names))
    if unknown:
        raise DataError(f"manifest labels {unknown} are not among the classes {names}")

    results = Parallel(n_jobs=jobs)(delayed(_process_recording)(root / f) for f in manifest['file'])
    events, llds, labels, recordings = {}, {}, {}, {}
    for partition in PARTITIONS:
        rows = np.flatnonzero(manifest['partition'].to_numpy() == partition)
        events[partition] = [results[i][0] for i in rows]
        llds[partition] = [results[i][1] for i in rows]
        labels[partition] = np.array([names.index(manifest['label'].iloc[i]) for i in rows], dtype=np.int64)
        recordings[partition] = [Path(manifest['file'].iloc[i]).stem for i in rows]
    logger.info("Corpus loaded: " + ', '.join(f"{p}={len(labels[p])}" for p in PARTITIONS))
    return Corpus(names, events, llds, labels, recordings)


class FeatureBuilder:
    """LLD 시퀀스를 특징 시스템의 예제로 변환

    functionals_svm, boaw_svm은 녹음당 정적 벡터 하나,
    llds_gru는 녹음 ID를 공유하는 고정 길이 윈도우.
    """

    def __init__(self, system, config):
        self.system = system
        self.config = config
        self.codebook = None

    def fit(self, train_llds, rng):
        if self.system == 'boaw_svm':
            frames = np.vstack(train_llds)
            self.codebook = audio.build_codebook(frames, self.config.codebook_size,
                                                 self.config.codebook_method, rng)
        return self

    def transform(self, llds, labels, recordings, partition):
        if self.system == 'functionals_svm':
            X = np.stack([audio.functionals(seq) for seq in llds])
            return FeatureSet(X, labels, recordings=np.array(recordings, dtype=object), partition=partition)
        if self.system == 'boaw_svm':
            X = np.stack([audio.boaw(seq, self.codebook, self.config.boaw_assignments) for seq in llds])
            return FeatureSet(X, labels, recordings=np.array(recordings, dtype=object), partition=partition)

        windows, y, ids = [], [], []
        for seq, label, recording in zip(llds, labels, recordings):
            w, _ = audio.window_sequence(seq, self.config.window_ms, self.config.step_ms)
            windows.append(w)
            y.extend([label] * len(w))
            ids.extend([recording] * len(w))
        return FeatureSet(np.concatenate(windows), y, recordings=np.array(ids, dtype=object), partition=partition)

    def partition(self, corpus, name):
        return self.transform(corpus.llds[name], corpus.labels[name], corpus.recordings[name], name)


def _transform_features(corpus, builder, cfg):
    rng = np.random.default_rng(cfg.seed)
    degraded = transform_corpus(corpus.events['train'], rng, cfg.transform_copies)
    llds = [audio.extract_llds(clip).values for _, _, _, clip in degraded]
    labels = [corpus.labels['train'][i] for i, _, _, _ in degraded]
    ids = [f"{corpus.recordings['train'][i]}_{kind}{snr:g}" for i, kind, snr, _ in degraded]
    extra = builder.transform(llds, labels, ids, 'train')
    extra.provenance[:] = 'transform'
    return extra


# --- 실험 실행 ------------------------------------------------------

@dataclass
class RunResult:
    run: int
    seed: int
    dev_uar: float
    test_uar: float
    dev_confusion: np.ndarray
    test_confusion: np.ndarray


@dataclass
class EvalReport:
    config: dict
    runs: list

    def values(self, key):
        return np.array([getattr(r, key) for r in self.runs], dtype=np.float64)

    @property
    def dev_mean(self):
        return float(np.mean(self.values('dev_uar')))

    @property
    def dev_sd(self):
        return float(np.std(self.values('dev_uar')))

    @property
    def test_mean(self):
        return float(np.mean(self.values('test_uar')))

    @property
    def test_sd(self):
        return float(np.std(self.values('test_uar')))


def gan_config(cfg, mode, train_set, seed, num_classes, base=None):
    """학습 세트의 데이터 종류와 윈도우 길이에 맞춘 실행별 GAN 설정"""
    base = base or cfg.scgan
    length = train_set.X.shape[1] if train_set.data_kind == 'sequence' else base.sequence_length
    return base.replace(mode=mode, num_classes=num_classes, data_kind=train_set.data_kind,
                        sequence_length=length, seed=seed)


def augment_plan(cfg, seed):
    """실행 설정에 맞는 AugmentPlan"""
    return AugmentPlan(m=cfg.m, source='ensemble' if cfg.augmentation == 'scgan_ensemble' else 'mono',
                       seed=seed, oversample=cfg.pool_oversample, histograms=cfg.feature_system == 'boaw_svm')


def _augment(cfg, train_set, extra, members, seed, num_classes, class_names):
    augmentation = cfg.augmentation
    if augmentation == 'none' or (augmentation in GAN_MODES and cfg.m == 0):
        return train_set
    if augmentation == 'smote':
        return merge(train_set, smote(train_set, cfg.smote_k, None, np.random.default_rng(seed)))
    if augmentation == 'transform':
        return merge(train_set, extra)

    gan_seed, plan_seed = spawn_seeds(seed, 2)
    if augmentation != 'scgan_ensemble':
        # 단일 GAN은 실행마다 그 실행의 시드로 재학습
        balanced = oversample_replicate(train_set, num_classes, np.random.default_rng(gan_seed))
        model, _ = train(gan_config(cfg, GAN_MODES[augmentation], train_set, gan_seed, num_classes), balanced)
        members = [model]
    return augment_with_plan(augment_plan(cfg, plan_seed), members, train_set, num_classes, class_names)


def _fit_classifier(cfg, train_set, seed, num_classes):
    if cfg.feature_system == 'llds_gru':
        return train_gru_classifier(train_set.X, train_set.y, cfg.classifier.replace(seed=seed), num_classes)
    return train_svm(train_set.X, train_set.y, cfg.complexity, num_classes, tol=cfg.svm_tol, seed=seed,
                     scale_features=cfg.feature_system != 'boaw_svm')


def _predict(cfg, model, feature_set):
    """녹음별 (정답, 예측), GRU 윈도우는 다수결"""
    if cfg.feature_system != 'llds_gru':
        return feature_set.y, svm_predict_batch(model, feature_set.X)
    posteriors = gru_posteriors(model, feature_set.X)
    _, first = np.unique(feature_set.recordings, return_index=True)
    y_true, y_pred = [], []
    for start in np.sort(first):
        idx = np.flatnonzero(feature_set.recordings == feature_set.recordings[start])
        y_true.append(feature_set.y[start])
        y_pred.append(majority_vote(posteriors[idx]).class_index)
    return np.array(y_true), np.array(y_pred)


def _single_run(cfg, features, extra, members, run_index, seed, num_classes, class_names):
    augment_seed, replicate_seed, classifier_seed = spawn_seeds(seed, 3)
    try:
        augmented = _augment(cfg, features['train'], extra, members, augment_seed, num_classes, class_names)
        balanced = oversample_replicate(augmented, num_classes, np.random.default_rng(replicate_seed))
        model = _fit_classifier(cfg, balanced, classifier_seed, num_classes)
        dev_true, dev_pred = _predict(cfg, model, features['devel'])
        test_true, test_pred = _predict(cfg, model, features['test'])
    except ScganAugError as e:
        logger.error(f"run {run_index} failed: {e}")
        raise RunError(run_index, e) from e
    result = RunResult(
        run_index, seed,
        uar(dev_pred, dev_true, num_classes), uar(test_pred, test_true, num_classes),
        confusion_matrix(dev_true, dev_pred, num_classes), confusion_matrix(test_true, test_pred, num_classes),
    )
    logger.info(f"run {run_index}: dev UAR {result.dev_uar:.4f}, test UAR {result.test_uar:.4f}")
    return result


def run_experiment(cfg, corpus, jobs=1):
    """시드 고정 실행 cfg.runs회: 증강 -> 복제 -> 분류 -> 평가

    단일 GAN은 실행마다 재학습, 앙상블은 한 번 학습 후 실행마다 다시 샘플링.
    """
    if not isinstance(cfg, RunConfig):
        cfg = RunConfig.from_dict(cfg)
    K = corpus.num_classes
    logger.info(f"Experiment: {cfg.feature_system} / {cfg.augmentation}, m={cfg.m}, runs={cfg.runs}")

    builder = FeatureBuilder(cfg.feature_system, cfg.features).fit(corpus.llds['train'],
                                                                   np.random.default_rng(cfg.seed))
    features = {p: builder.partition(corpus, p) for p in PARTITIONS}
    extra = _transform_features(corpus, builder, cfg) if cfg.augmentation == 'transform' else None

    members = None
    if cfg.augmentation == 'scgan_ensemble' and cfg.m > 0:
        train_set = features['train']
        template = gan_config(cfg, 'scgan', train_set, cfg.seed, K, base=cfg.ensemble.template)
        balanced = oversample_replicate(train_set, K, np.random.default_rng(cfg.seed))
        members = train_ensemble(cfg.ensemble.replace(template=template), balanced, jobs)

    seeds = spawn_seeds(cfg.seed, cfg.runs)
    runs = Parallel(n_jobs=jobs)(
        delayed(_single_run)(cfg, features, extra, members, r, s, K, corpus.class_names)
        for r, s in enumerate(seeds)
    )
    report = EvalReport(cfg.to_dict(), list(runs))
    logger.info(f"Experiment done: dev {report.dev_mean:.4f} +/- {report.dev_sd:.4f}, "
                f"test {report.test_mean:.4f} +/- {report.test_sd:.4f}")
    return report


def sweep_augmentation(cfg, corpus, m_values, jobs=1):
    """m (오름차순)마다 실험 하나, 코퍼스와 시드 공유"""
    m_values = [int(m) for m in m_values]
    if not m_values:
        raise ConfigError("sweep needs at least one m value")
    if any(m < 0 for m in m_values) or any(b <= a for a, b in zip(m_values, m_values[1:])):
        raise ConfigError(f"m values must be non-negative and strictly ascending, got {m_values}")
    rows = []
    for m in m_values:
        report = run_experiment(cfg.replace(m=m), corpus, jobs)
        rows.append({'m': m, 'dev_mean': report.dev_mean, 'dev_sd': report.dev_sd,
                     'test_mean': report.test_mean, 'test_sd': report.test_sd, 'runs': len(report.runs)})
    return pd.DataFrame(rows, columns=['m', 'dev_mean', 'dev_sd', 'test_mean', 'test_sd', 'runs'])


def compare_baselines(cfg, corpus, augmentations=AUGMENTATIONS, jobs=1):
    rows = []
    for augmentation in augmentations:
        if augmentation == 'smote' and cfg.feature_system == 'llds_gru':
            logger.warning("smote skipped: it cannot synthesize sequences")
            continue
        report = run_experiment(cfg.replace(augmentation=augmentation), corpus, jobs)
        rows.append({'augmentation': augmentation, 'dev_mean': report.dev_mean, 'dev_sd': report.dev_sd,
                     'test_mean': report.test_mean, 'test_sd': report.test_sd})
    return pd.DataFrame(rows, columns=['augmentation', 'dev_mean', 'dev_sd', 'test_mean', 'test_sd'])


def average_structures(cfg, corpus, jobs=1):
    """앙상블 은닉 크기별 단일 scGAN 실험과 그 평균"""
    rows = []
    for size in cfg.ensemble.hidden_sizes:
        run_cfg = cfg.replace(augmentation='scgan_mono', scgan=cfg.scgan.replace(hidden_size=size))
        report = run_experiment(run_cfg, corpus, jobs)
        rows.append({'structure': f'net-{size}', 'dev_mean': report.dev_mean, 'dev_sd': report.dev_sd,
                     'test_mean': report.test_mean, 'test_sd': report.test_sd})
    frame = pd.DataFrame(rows)
    average = {'structure': 'average'}
    average.update(frame.drop(columns='structure').mean().to_dict())
    return pd.concat([frame, pd.DataFrame([average])], ignore_index=True)


# --- 교대 정책 비교 -----------------------------------------------

def loss_smoothness(losses, final=200, window=50):
    """손실 시계열 하나의 (마지막 스텝 SD, 슬라이딩 윈도우 SD 평균)"""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        return math.nan, math.nan
    final_sd = float(np.std(losses[-final:]))
    if losses.size < window:
        return final_sd, float(np.std(losses))
    windows = np.lib.stride_tricks.sliding_window_view(losses, window)
    return final_sd, float(windows.std(axis=1).mean())


@dataclass
class AlternationComparison:
    traces: dict
    stats: pd.DataFrame
    models: dict = None

    def total_final_sd(self, policy):
        rows = self.stats[self.stats['policy'] == policy]
        return float(rows['final_sd'].sum())


def fixed_schedule_steps(config, n, policy=None):
    """고정 교대 정책이 max_iterations 동안 기록하는 스텝 수"""
    policy = policy or AlternationPolicy(kind='fixed')
    per_epoch = math.ceil(n / min(config.batch_size, n))
    return config.max_iterations * (policy.discriminator_epochs + policy.generator_epochs) * per_epoch


def compare_alternation(config, train_set, policies=None, final=200, window=50, step_budget=None):
    """교대 정책별로 같은 스텝 예산만큼 학습하고 손실 변동을 비교

    예산 기본값은 고정 정책(1 epoch씩)의 max_iterations 길이. 수렴 조기 종료는 끈다.
    """
    if policies is None:
        dynamic = config.alternation if config.alternation.kind == 'dynamic' else AlternationPolicy()
        policies = {'fixed': AlternationPolicy(kind='fixed'), 'dynamic': dynamic}
    if step_budget is None:
        step_budget = fixed_schedule_steps(config, len(train_set))
    traces, models, rows = {}, {}, []
    for name, policy in policies.items():
        run_config = config.replace(alternation=policy, max_steps=step_budget,
                                    max_iterations=step_budget, convergence_turns=0)
        models[name], trace = train(run_config, train_set)
        traces[name] = trace
        for network in ('generator', 'discriminator'):
            losses = trace.losses(network)
            final_sd, window_sd = loss_smoothness(losses, final, window)
            rows.append({'policy': name, 'network': network, 'steps': int(losses.size),
                         'final_sd': final_sd, 'window_sd': window_sd})
        logger.info(f"alternation '{name}': {len(trace)} recorded steps")
    return AlternationComparison(traces, pd.DataFrame(rows), models)


# --- 토이 데이터와 투영 ---------------------------------------------

def toy_mixture(num_classes=4, modes_per_class=1, per_class=200, sigma=0.2, radius=4.0, rng=None):
    """원 위에 모드가 놓인 2-D 가우시안 혼합, 클래스가 번갈아 배치됨

    (feature set, 모드 중심, 모드 클래스) 반환.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    total = num_classes * modes_per_class
    angles = 2.0 * np.pi * np.arange(total) / total
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    center_classes = np.arange(total) % num_classes
    X, y = [], []
    for k in range(num_classes):
        modes = np.flatnonzero(center_classes == k)
        picks = rng.choice(modes, size=per_class)
        X.append(centers[picks] + sigma * rng.standard_normal((per_class, 2)))
        y.append(np.full(per_class, k))
    return FeatureSet(np.concatenate(X), np.concatenate(y)), centers, center_classes


def mode_coverage(samples, classes, centers, center_classes, sigma, min_mass=0.02):
    """모드별로 해당 클래스 샘플의 `min_mass` 이상이 2 sigma 안에 있는지"""
    samples = np.asarray(samples, dtype=np.float64)
    classes = np.asarray(classes)
    covered = np.zeros(len(centers), dtype=bool)
    for j, (center, k) in enumerate(zip(centers, center_classes)):
        own = samples[classes == k]
        if len(own):
            covered[j] = np.mean(np.linalg.norm(own - center, axis=1) <= 2.0 * sigma) >= min_mass
    return covered


def pca_project(X, n_components=2):
    """rank-n PCA의 (투영, 설명 분산 비율)"""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    pca = PCA(n_components=n_components, svd_solver='full')
    return pca.fit_transform(X), pca.explained_variance_ratio_


def project_pool(pool, real=None, class_names=None):
    """실제 학습 샘플과 필터 통과 풀 샘플을 한 PCA 평면에 투영

    (source/class/pc1/pc2 열 프레임, 설명 분산 비율) 반환.
    """
    kept = pool.survivors()
    width = int(np.prod(pool.payloads.shape[1:]))
    payloads = [pool.payloads[kept].reshape(len(kept), width)]
    sources = ['synthetic'] * len(kept)
    classes = list(pool.classes[kept])
    if real is not None:
        payloads.insert(0, real.X.reshape(len(real), -1))
        sources = ['real'] * len(real) + sources
        classes = list(real.y) + classes
    X = np.concatenate(payloads)
    if len(X) < 2:
        raise DataError("projection needs at least two samples")
    projected, ratio = pca_project(X, n_components=min(2, X.shape[1]))
    if projected.shape[1] == 1:
        projected = np.column_stack([projected, np.zeros(len(projected))])
    labels = [class_names[k] if class_names else int(k) for k in classes]
    frame = pd.DataFrame({'source': sources, 'class': labels, 'pc1': projected[:, 0], 'pc2': projected[:, 1]})
    return frame, ratio


def projection_series(frame):
    """source x class 그룹별 산점도 시리즈"""
    return [PlotSeries(f'{source} {label}', group['pc1'].tolist(), group['pc2'].tolist())
            for (source, label), group in frame.groupby(['source', 'class'], sort=True)]


def coverage_table(models, centers, center_classes, sigma, per_class=400, seed=0):
    """모델(또는 앙상블 멤버 리스트)별로 생성 샘플이 덮는 혼합 모드 수

    필터 전 풀 기준. 앙상블은 클래스당 총 샘플 수가 같도록 멤버에 나눠 뽑는다.
    """
    rows = []
    for name, members in models.items():
        members = list(members) if isinstance(members, (list, tuple)) else [members]
        share = math.ceil(per_class / len(members))
        pool = synthesize_pool(members, share, np.random.default_rng(seed))
        covered = mode_coverage(pool.payloads, pool.classes, centers, center_classes, sigma)
        rows.append({'model': name, 'covered_modes': int(covered.sum()), 'modes': len(centers)})
    return pd.DataFrame(rows, columns=['model', 'covered_modes', 'modes'])


# --- 리포트 --------------------------------------------------------------

def _config_path(path):
    path = Path(path)
    return path.with_name(f'{path.stem}.config.json')


def export_report(report, path):
    """실행마다 CSV 한 행 + mean, sd 행, 설정은 옆 JSON 파일로"""
    path = Path(path)
    ensure_directory(path.parent)
    rows = [{
        'kind': 'run', 'run': r.run, 'seed': r.seed, 'dev_uar': r.dev_uar, 'test_uar': r.test_uar,
        'dev_confusion': json.dumps(np.asarray(r.dev_confusion).tolist()),
        'test_confusion': json.dumps(np.asarray(r.test_confusion).tolist()),
    } for r in report.runs]
    rows.append({'kind': 'mean', 'dev_uar': report.dev_mean, 'test_uar': report.test_mean})
    rows.append({'kind': 'sd', 'dev_uar': report.dev_sd, 'test_uar': report.test_sd})
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS).astype({'run': 'Int64', 'seed': 'Int64'})
    frame.to_csv(path, index=False, float_format='%.17g')
    write_json(report.config, _config_path(path))
    return path


def read_report(path):
    frame = pd.read_csv(path, float_precision='round_trip')
    runs = [
        RunResult(int(row.run), int(row.seed), float(row.dev_uar), float(row.test_uar),
                  np.array(json.loads(row.dev_confusion)), np.array(json.loads(row.test_confusion)))
        for row in frame[frame['kind'] == 'run'].itertuples()
    ]
    sidecar = _config_path(path)
    config = read_json(sidecar) if sidecar.exists() else {}
    return EvalReport(config, runs)


@dataclass
class PlotSeries:
    label: str
    x: list
    y: list
    sd: list = None


def _axis(values, pad):
    lo, hi = (float(min(values)), float(max(values))) if values else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    margin = (hi - lo) * pad
    return lo - margin, hi + margin


def export_plot(series, path, title='', x_label='', y_label='', width=640, height=400, connect=True):
    """범례와 SD 오차 막대가 있는 독립 SVG 선 그래프

    connect=False면 점만 그린다 (투영 산점도).
    """
    series = [s for s in series if len(s.x)]
    left, right, top, bottom = 70, 160, 40, 55
    plot_w, plot_h = width - left - right, height - top - bottom

    xs = [float(v) for s in series for v in s.x]
    ys = []
    for s in series:
        sd = s.sd if s.sd is not None else [0.0] * len(s.y)
        ys.extend(float(v) + d for v, d in zip(s.y, sd))
        ys.extend(float(v) - d for v, d in zip(s.y, sd))
    x_lo, x_hi = _axis(xs, 0.0 if connect else 0.05)
    y_lo, y_hi = _axis(ys, 0.05)

    def sx(v):
        return left + (float(v) - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return top + plot_h - (float(v) - y_lo) / (y_hi - y_lo) * plot_h

    lines = []
    for i, s in enumerate(series):
        sd = s.sd if s.sd is not None else [0.0] * len(s.y)
        points = [{'x': sx(a), 'y': sy(b), 'lo': sy(b - d), 'hi': sy(b + d), 'bar': d > 0}
                  for a, b, d in zip(s.x, s.y, sd)]
        lines.append({'label': s.label, 'color': PALETTE[i % len(PALETTE)], 'points': points, 'connect': connect,
                      'path': ' '.join(f"{p['x']:.2f},{p['y']:.2f}" for p in points)})

    with open(TEMPLATE_DIR / 'line_chart.svg.j2', 'r', encoding='utf-8') as f:
        template = Template(f.read(), autoescape=True)
    svg = template.render(
        width=width, height=height, left=left, top=top, plot_w=plot_w, plot_h=plot_h,
        title=title, x_label=x_label, y_label=y_label, series=lines,
        x_ticks=[{'pos': sx(v), 'label': f'{v:g}'} for v in np.linspace(x_lo, x_hi, 5)],
        y_ticks=[{'pos': sy(v), 'label': f'{v:.3g}'} for v in np.linspace(y_lo, y_hi, 5)],
        empty=not lines,
    )
    path = Path(path)
    ensure_directory(path.parent)
    path.write_text(svg, encoding='utf-8')
    return path
