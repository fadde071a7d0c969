"""오디오 입력과 음향 특징

WAV 입출력 (16-bit PCM mono), 에너지 포락선 기반 코골이 이벤트 검출,
프레임 단위 LLD와 델타, 통계 functional, BoAW 히스토그램, 고정 길이 윈도우.

LLD 순서 (프레임당 25개, 이어서 델타 25개):
    rms, zcr, centroid, flux, rolloff25, rolloff50, rolloff75, rolloff90,
    spectral_variance, spectral_skewness, spectral_kurtosis, mfcc1..mfcc14
"""
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import librosa
import numpy as np
import pandas as pd
import soundfile as sf
from scipy import fft, stats
from scipy.signal import get_window
from scipy.spatial.distance import cdist

from ..config.schema import PARTITIONS
from ..config.settings import Settings
from ..utils.errors import AudioFormatError, DataError, DimensionError, SilentSignalError
from ..utils.helpers import ensure_directory, read_frames, write_frames
from ..utils.logger import get_logger
from .records import FeatureSet

logger = get_logger()

FRAME_LENGTH = 400      # 16 kHz에서 25 ms
HOP_LENGTH = 160        # 10 ms
N_FFT = 512
N_MELS = 26
N_MFCC = 14
LOG_FLOOR = 1e-10
ROLLOFF_POINTS = (0.25, 0.5, 0.75, 0.9)

BASE_LLD_NAMES = (
    ['rms', 'zcr', 'centroid', 'flux']
    + [f'rolloff{int(p * 100)}' for p in ROLLOFF_POINTS]
    + ['spectral_variance', 'spectral_skewness', 'spectral_kurtosis']
    + [f'mfcc{i}' for i in range(1, N_MFCC + 1)]
)
LLD_NAMES = tuple(BASE_LLD_NAMES + [f'{name}_delta' for name in BASE_LLD_NAMES])
FUNCTIONAL_NAMES = ('mean', 'std', 'min', 'max', 'range', 'skewness', 'kurtosis',
                    'q1', 'q2', 'q3', 'slope', 'residual_mse')
MANIFEST_COLUMNS = ['file', 'label', 'partition']


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = Settings.SAMPLE_RATE
    headroom_gain: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError(f"clips are mono; got samples of shape {self.samples.shape}")
        if self.samples.size == 0:
            raise AudioFormatError("clip is empty")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("clip has non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class EventSegment:
    start: int
    end: int
    pad_before: int = 0
    pad_after: int = 0
    global_floor: bool = False

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end})")


@dataclass
class DetectionParams:
    frame_ms: float = 10.0
    block_seconds: float = 10.0
    bins: int = 1024
    factor: float = 2.0
    min_duration_ms: float = 300.0
    padding_ms: float = 100.0


@dataclass
class FrameSequence:
    values: np.ndarray
    frame_length: int = FRAME_LENGTH
    hop_length: int = HOP_LENGTH
    sample_rate: int = Settings.SAMPLE_RATE
    names: tuple = LLD_NAMES

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"frame sequence must be (frames, lld), got {self.values.shape}")

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class Codebook:
    codewords: np.ndarray
    method: str = 'kmeans'
    inertia_history: list = field(default_factory=list)

    @property
    def size(self):
        return self.codewords.shape[0]

    @property
    def dim(self):
        return self.codewords.shape[1]


# --- WAV 입출력 --------------------------------------------------------------

def read_wav(path):
    """16-bit PCM mono WAV를 [-1, 1] 실수로 디코딩 (값 / 32768)"""
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: unreadable audio ({e})") from e
    if info.format != 'WAV' or info.subtype != 'PCM_16':
        raise AudioFormatError(f"{path}: expected 16-bit PCM WAV, got {info.format}/{info.subtype}")
    if info.channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {info.channels} channels")
    try:
        samples, sample_rate = sf.read(str(path), dtype='float64')
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: {e}") from e
    if len(samples) != info.frames:
        raise AudioFormatError(f"{path}: truncated ({len(samples)} of {info.frames} frames)")
    return AudioClip(samples, sample_rate)


def write_wav(path, clip):
    """16-bit PCM으로 양자화 (round(x * 32768), 클리핑) 후 mono WAV 쓰기"""
    path = Path(path)
    ensure_directory(path.parent)
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, clip.sample_rate, subtype='PCM_16', format='WAV')
    return path


# --- 이벤트 검출 ------------------------------------------------------

def envelope(clip, frame):
    n = len(clip) // frame
    return np.abs(clip.samples[:n * frame]).reshape(n, frame).mean(axis=1)


def _noise_floor(values, bins):
    """가장 많이 채워진 히스토그램 구간의 중심, 퇴화 블록이면 None"""
    if values.size == 0 or np.ptp(values) <= 0:
        return None
    counts, edges = np.histogram(values, bins=bins)
    k = int(np.argmax(counts))
    return 0.5 * (edges[k] + edges[k + 1])


def _runs(mask):
    """연속 True 구간의 (start, end) 인덱스 쌍 (end 미포함)"""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def detect_events(clip, params=None):
    """코골이 이벤트: 포락선이 factor x 잡음 바닥을 넘는 구간을 패딩 후 병합

    잡음 바닥은 block_seconds 블록마다 추정하고 끝의 짧은 블록은 앞 블록에
    합친다. 블록 하나보다 짧은 클립은 클립 전체로 한 번 추정하고
    세그먼트에 ``global_floor``를 표시한다.
    """
    params = params or DetectionParams()
    frame = int(round(clip.sample_rate * params.frame_ms / 1000.0))
    env = envelope(clip, frame)
    if env.size == 0:
        logger.warning("clip shorter than one envelope frame; no events")
        return []

    block = int(round(params.block_seconds * 1000.0 / params.frame_ms))
    global_floor = env.size < block
    if global_floor:
        logger.warning(f"clip is {clip.duration:.2f} s; using a clip-wide noise floor")
        bounds = [(0, env.size)]
    else:
        starts = list(range(0, env.size - block + 1, block))
        bounds = [(s, s + block) for s in starts]
        bounds[-1] = (bounds[-1][0], env.size)

    active = np.zeros(env.size, dtype=bool)
    degenerate = 0
    for lo, hi in bounds:
        floor = _noise_floor(env[lo:hi], params.bins)
        if floor is None:
            degenerate += 1
            continue
        active[lo:hi] = env[lo:hi] > params.factor * floor
    if degenerate == len(bounds):
        logger.warning("degenerate envelope histogram (silent clip); no events")
        return []

    min_frames = int(round(params.min_duration_ms / params.frame_ms))
    pad = int(round(clip.sample_rate * params.padding_ms / 1000.0))
    segments = []
    for lo, hi in _runs(active):
        if hi - lo < min_frames:
            continue
        start, end = lo * frame, hi * frame
        padded_start, padded_end = max(0, start - pad), min(len(clip), end + pad)
        if segments and padded_start <= segments[-1].end:
            last = segments[-1]
            segments[-1] = EventSegment(last.start, max(last.end, padded_end), last.pad_before,
                                        padded_end - end, global_floor)
        else:
            segments.append(EventSegment(padded_start, padded_end, start - padded_start,
                                         padded_end - end, global_floor))
    logger.info(f"Detected {len(segments)} event(s) in {clip.duration:.2f} s of audio")
    return segments


def extract_event(clip, segment, peak=0.95):
    """패딩된 세그먼트를 잘라 피크 정규화"""
    samples = clip.samples[segment.start:segment.end]
    top = np.max(np.abs(samples))
    if top == 0:
        raise SilentSignalError("event segment is silent")
    return AudioClip(samples * (peak / top), clip.sample_rate)


# --- LLD -----------------------------------------------------------------

def _frames(clip):
    if clip.sample_rate != Settings.SAMPLE_RATE:
        raise AudioFormatError(f"expected {Settings.SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    if len(clip) < FRAME_LENGTH:
        raise AudioFormatError(f"clip of {len(clip)} samples is shorter than one {FRAME_LENGTH}-sample frame")
    samples = np.ascontiguousarray(clip.samples)
    return librosa.util.frame(samples, frame_length=FRAME_LENGTH, hop_length=HOP_LENGTH, axis=0)


def _spectral_moments(mag, freqs, centroid):
    total = mag.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    dev = freqs[None, :] - centroid[:, None]
    variance = (mag * dev ** 2).sum(axis=1) / safe
    flat = variance <= 0
    denom = np.where(flat, 1.0, variance)
    skewness = np.where(flat, 0.0, (mag * dev ** 3).sum(axis=1) / safe / denom ** 1.5)
    kurtosis = np.where(flat, 0.0, (mag * dev ** 4).sum(axis=1) / safe / denom ** 2)
    return variance, skewness, kurtosis


def extract_llds(clip):
    """25 ms Hann 프레임 (10 ms hop)마다 LLD 25개 + 1차 델타: (T, 50)"""
    frames = _frames(clip)
    sr = clip.sample_rate
    window = get_window('hann', FRAME_LENGTH, fftbins=True)
    mag = np.abs(fft.rfft(frames * window, n=N_FFT, axis=1))
    freqs = np.fft.rfftfreq(N_FFT, d=1.0 / sr)

    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    crossings = np.count_nonzero(np.diff(np.signbit(frames), axis=1), axis=1)
    zcr = crossings / ((FRAME_LENGTH - 1) / sr)
    centroid = librosa.feature.spectral_centroid(S=mag.T, sr=sr, n_fft=N_FFT)[0]
    flux = np.concatenate([[0.0], np.linalg.norm(np.diff(mag, axis=0), axis=1)])
    rolloffs = [librosa.feature.spectral_rolloff(S=mag.T, sr=sr, n_fft=N_FFT, roll_percent=p)[0]
                for p in ROLLOFF_POINTS]
    variance, skewness, kurtosis = _spectral_moments(mag, freqs, centroid)

    mel_basis = librosa.filters.mel(sr=sr, n_fft=N_FFT, n_mels=N_MELS, fmin=0.0, fmax=sr / 2.0,
                                    htk=False, norm='slaney')
    log_mel = np.log(np.maximum((mag ** 2) @ mel_basis.T, LOG_FLOOR))
    mfcc = fft.dct(log_mel, type=2, axis=1, norm='ortho')[:, 1:N_MFCC + 1]

    base = np.column_stack([rms, zcr, centroid, flux, *rolloffs, variance, skewness, kurtosis, mfcc])
    deltas = librosa.feature.delta(base.T, width=5, order=1, mode='nearest', axis=-1).T
    return FrameSequence(np.hstack([base, deltas]), sample_rate=sr)


def _values(seq):
    return seq.values if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float64)


def functionals(seq):
    """LLD 윤곽마다 통계 12개, LLD 우선 순서 (FUNCTIONAL_NAMES 참고)"""
    X = _values(seq)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError(f"functionals need at least 2 frames, got {X.shape[0] if X.ndim else 0}")
    T = X.shape[0]
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        skewness = np.where(flat, 0.0, stats.skew(X, axis=0, bias=True))
        kurtosis = np.where(flat, 0.0, stats.kurtosis(X, axis=0, fisher=True, bias=True))
    q1, q2, q3 = np.percentile(X, [25, 50, 75], axis=0)

    t = np.arange(T, dtype=np.float64)
    slope, intercept = np.polyfit(t, X, 1)
    residual = X - (np.outer(t, slope) + intercept)
    mse = np.mean(residual ** 2, axis=0)

    table = np.stack([mean, std, X.min(axis=0), X.max(axis=0), X.max(axis=0) - X.min(axis=0),
                      skewness, kurtosis, q1, q2, q3, slope, mse], axis=1)
    return table.reshape(-1)


def functional_names(lld_names=LLD_NAMES):
    return [f'{lld}_{stat}' for lld in lld_names for stat in FUNCTIONAL_NAMES]


# --- BoAW ---------------------------------------------------

def _kmeans_pp(X, S, rng):
    centers = np.empty((S, X.shape[1]))
    centers[0] = X[rng.integers(X.shape[0])]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, S):
        total = d2.sum()
        probs = d2 / total if total > 0 else None
        centers[i] = X[rng.choice(X.shape[0], p=probs)]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def build_codebook(frames, S, method='kmeans', rng=None, max_iter=100, tol=1e-6):
    """k-means (k-means++ 초기화, Lloyd 반복) 또는 무작위 표본 코드북"""
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"codebook frames must be (n, d), got {X.shape}")
    if S < 1 or S > X.shape[0]:
        raise DataError(f"codebook size {S} needs 1 <= S <= {X.shape[0]} frames")
    rng = np.random.default_rng() if rng is None else rng

    if method == 'random':
        return Codebook(X[rng.choice(X.shape[0], size=S, replace=False)].copy(), 'random')
    if method != 'kmeans':
        raise ValueError(f"unknown codebook method {method!r}")

    centers = _kmeans_pp(X, S, rng)
    history = []
    for _ in range(max_iter):
        dist = cdist(X, centers, 'sqeuclidean')
        labels = np.argmin(dist, axis=1)
        inertia = float(dist[np.arange(X.shape[0]), labels].sum())
        converged = bool(history) and history[-1] - inertia <= tol * max(history[-1], 1e-300)
        history.append(inertia)
        if converged:
            break
        for k in range(S):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    logger.info(f"k-means codebook: S={S}, {len(history)} iteration(s), inertia {history[-1]:.6g}")
    return Codebook(centers, 'kmeans', history)


def boaw(seq, codebook, n):
    """프레임별 가장 가까운 코드워드 n개의 정규화 빈도 (동률은 낮은 인덱스)"""
    X = _values(seq)
    W = codebook.codewords if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=np.float64)
    S = W.shape[0]
    if not 1 <= n <= S:
        raise ValueError(f"assignments n={n} must lie in [1, {S}]")
    if X.shape[0] == 0:
        raise DataError("cannot quantise an empty sequence")
    if X.shape[1] != W.shape[1]:
        raise DimensionError(f"frames have {X.shape[1]} values, codewords {W.shape[1]}")
    nearest = np.argsort(cdist(X, W, 'sqeuclidean'), axis=1, kind='stable')[:, :n]
    return np.bincount(nearest.ravel(), minlength=S) / float(n * X.shape[0])


def save_codebook(codebook, path):
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f'# method={codebook.method} size={codebook.size} dim={codebook.dim}\n')
    frame = pd.DataFrame(codebook.codewords, columns=[f'd{i}' for i in range(codebook.dim)])
    frame.to_csv(path, mode='a', index=False, float_format='%.17g')
    return path


def load_codebook(path):
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip()
    if not header.startswith('#'):
        raise DataError(f"{path} is missing the codebook header line")
    meta = dict(item.split('=', 1) for item in header.lstrip('# ').split())
    frame = pd.read_csv(path, skiprows=1, float_precision='round_trip')
    codewords = frame.to_numpy(dtype=np.float64)
    if codewords.shape[0] != int(meta.get('size', codewords.shape[0])):
        raise DataError(f"{path}: header size does not match the stored codewords")
    return Codebook(codewords, meta.get('method', 'kmeans'))


# --- 윈도우 --------------------------------------------------------------

def window_sequence(seq, window_ms=400, step_ms=100, hop_ms=10):
    """고정 길이 윈도우, (W, L, d) 윈도우와 zero_padded 여부 반환"""
    X = _values(seq)
    if X.shape[0] == 0:
        raise DataError("cannot window an empty sequence")
    length = int(round(window_ms / hop_ms))
    stride = int(round(step_ms / hop_ms))
    if X.shape[0] < length:
        logger.warning(f"sequence of {X.shape[0]} frames zero-padded to {length}")
        padded = np.zeros((length, X.shape[1]))
        padded[:X.shape[0]] = X
        return padded[None], True
    starts = range(0, X.shape[0] - length + 1, stride)
    return np.stack([X[s:s + length] for s in starts]), False


# --- 매니페스트와 특징 테이블 -----------------------------------------

def read_manifest(path):
    frame = pd.read_csv(path, dtype={'file': str, 'label': str, 'partition': str})
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: manifest is missing column(s) {', '.join(missing)}")
    bad = sorted(set(frame['partition']) - set(PARTITIONS))
    if bad:
        raise DataError(f"{path}: unknown partition(s) {', '.join(bad)}")
    return frame[MANIFEST_COLUMNS]


def write_manifest(rows, path):
    path = Path(path)
    ensure_directory(path.parent)
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    frame.to_csv(path, index=False)
    return path


def save_features(feature_set, path):
    """정적 벡터는 CSV, 시퀀스는 프레임 바이너리"""
    path = Path(path)
    if feature_set.data_kind == 'sequence':
        flags = [0 if p == 'real' else 1 for p in feature_set.provenance]
        return write_frames(path, list(feature_set.X), feature_set.y, None, flags)
    ensure_directory(path.parent)
    frame = pd.DataFrame(feature_set.X, columns=[f'f{i}' for i in range(feature_set.feature_dim)])
    frame.insert(0, 'provenance', feature_set.provenance)
    frame.insert(0, 'label', feature_set.y)
    frame.insert(0, 'recording', feature_set.recordings)
    frame.to_csv(path, index=False, float_format='%.17g')
    return path


def load_features(path, partition='train'):
    path = Path(path)
    if path.suffix.lower() == '.csv':
        frame = pd.read_csv(path, float_precision='round_trip', dtype={'recording': str, 'provenance': str})
        missing = {'recording', 'label', 'provenance'} - set(frame.columns)
        if missing:
            raise DataError(f"{path} lacks feature column(s) {sorted(missing)}")
        X = frame.drop(columns=['recording', 'label', 'provenance']).to_numpy(dtype=np.float64)
        return FeatureSet(X, frame['label'].to_numpy(), frame['provenance'].to_numpy(dtype=object),
                          frame['recording'].to_numpy(dtype=object), partition)
    frames, labels, _, flags = read_frames(path)
    if not frames:
        raise DataError(f"{path} holds no sequences")
    provenance = np.array(['real' if f == 0 else 'synthetic' for f in flags], dtype=object)
    return FeatureSet(np.stack(frames), labels, provenance, partition=partition)
