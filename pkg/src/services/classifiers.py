"""후단 분류기: one-vs-rest 선형 SVM과 many-to-one GRU"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import confusion_matrix as _sk_confusion_matrix

from ..config.schema import GruClassifierConfig
from ..utils.errors import DataError, DimensionError
from ..utils.helpers import decode_tensor, encode_tensor, read_json, write_json
from ..utils.logger import get_logger
from .nn_core import Network, adam_update, backward, init_dense, init_gru

logger = get_logger()

SVM_FORMAT = 'linear-svm/1'
GRU_FORMAT = 'gru-classifier/1'


@dataclass
class Prediction:
    class_index: int
    scores: np.ndarray

    @classmethod
    def from_scores(cls, scores):
        scores = np.asarray(scores, dtype=np.float64)
        return cls(int(np.argmax(scores)), scores)


def fit_standardizer(X):
    """특징별 평균과 표준편차 (표준편차 0은 1로)"""
    X = np.asarray(X, dtype=np.float64)
    flat = X.reshape(-1, X.shape[-1])
    scale = flat.std(axis=0)
    return flat.mean(axis=0), np.where(scale > 0, scale, 1.0)


def standardize(X, mean, scale):
    return (np.asarray(X, dtype=np.float64) - mean) / scale


# --- 선형 SVM -----------------------------------------------------------

@dataclass
class LinearSvmModel:
    weights: np.ndarray          # (K, F)
    biases: np.ndarray           # (K,)
    complexity: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    dual_history: list = field(default_factory=list)

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def feature_dim(self):
        return self.weights.shape[1]


def _dual_cd(Xb, signs, C, rng_seed, tol, max_epochs):
    """L1-loss SVM 쌍대 좌표 하강, (w, epoch별 쌍대 목적값) 반환"""
    n = Xb.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(Xb.shape[1])
    q_diag = np.einsum('ij,ij->i', Xb, Xb)
    rng = np.random.default_rng(rng_seed)
    history = []
    for _ in range(max_epochs):
        for i in rng.permutation(n):
            if q_diag[i] <= 0:
                continue
            g = signs[i] * (w @ Xb[i]) - 1.0
            a = alpha[i]
            projected = min(g, 0.0) if a == 0 else (max(g, 0.0) if a == C else g)
            if abs(projected) > 1e-12:
                new = min(max(a - g / q_diag[i], 0.0), C)
                w += (new - a) * signs[i] * Xb[i]
                alpha[i] = new
        half_norm = 0.5 * (w @ w)
        dual = alpha.sum() - half_norm
        primal = half_norm + C * np.maximum(0.0, 1.0 - signs * (Xb @ w)).sum()
        history.append(float(dual))
        if primal - dual <= tol * max(1.0, primal):
            break
    return w, history


def train_svm(X, y, C, num_classes=None, tol=1e-4, max_epochs=1000, seed=0, scale_features=True):
    """one-vs-rest L2 정규화 hinge 손실 문제 K개 (바이어스는 상수 특징)"""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionError(f"expected (n, F) features with n labels, got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("SVM features must be finite")
    if len(np.unique(y)) < 2:
        raise DataError("SVM training needs at least two classes")
    if C <= 0:
        raise ValueError("complexity C must be > 0")
    K = int(num_classes or y.max() + 1)

    if scale_features:
        mean, scale = fit_standardizer(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xb = np.hstack([standardize(X, mean, scale), np.ones((X.shape[0], 1))])

    weights = np.zeros((K, X.shape[1]))
    biases = np.zeros(K)
    histories = []
    for k in range(K):
        signs = np.where(y == k, 1.0, -1.0)
        w, history = _dual_cd(Xb, signs, C, seed, tol, max_epochs)
        weights[k], biases[k] = w[:-1], w[-1]
        histories.append(history)
    logger.info(f"SVM trained: K={K}, C={C:g}, epochs per class {[len(h) for h in histories]}")
    return LinearSvmModel(weights, biases, float(C), mean, scale, histories)


def decision_values(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.feature_dim:
        raise DimensionError(f"model expects {model.feature_dim} features, got {X.shape[-1]}")
    return standardize(X, model.feature_mean, model.feature_scale) @ model.weights.T + model.biases


def svm_predict(model, x):
    """결정값 K개의 argmax, 동률은 낮은 클래스 인덱스"""
    return Prediction.from_scores(decision_values(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def svm_predict_batch(model, X):
    return np.argmax(decision_values(model, X), axis=1)


# --- GRU 분류기 -------------------------------------------------------

@dataclass
class GruClassifierModel:
    network: Network
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    config: GruClassifierConfig

    @property
    def num_classes(self):
        return self.network.output_dim


def init_gru_classifier(config, feature_dim, num_classes, rng):
    cells = [init_gru(feature_dim, config.hidden_size, rng, config.init_std)]
    cells += [init_gru(config.hidden_size, config.hidden_size, rng, config.init_std)
              for _ in range(config.hidden_layers - 1)]
    head = init_dense(config.hidden_size, num_classes, 'softmax', rng, config.init_std)
    return Network(dense=[head], gru=cells)


def train_gru_classifier(windows, labels, config=None, num_classes=4):
    """마지막 스텝 은닉 상태의 평균 softmax CE를 Adam으로 최소화"""
    config = config or GruClassifierConfig()
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if windows.ndim != 3:
        raise DimensionError(f"expected (n, steps, features) windows, got {windows.shape}")
    if windows.shape[0] != labels.shape[0] or windows.shape[0] == 0:
        raise DimensionError(f"{windows.shape[0]} windows but {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes})")

    rng = np.random.default_rng(config.seed)
    mean, scale = fit_standardizer(windows)
    X = standardize(windows, mean, scale)
    network = init_gru_classifier(config, windows.shape[2], num_classes, rng)

    n = X.shape[0]
    batch = min(config.batch_size, n)
    state = None
    loss = float('nan')
    for _ in range(config.steps):
        idx = rng.choice(n, size=batch, replace=False)
        loss, grads = backward(network, X[idx], labels[idx], config.l2)
        params, state = adam_update(network.named_params(), grads, state, config.learning_rate)
        network = network.with_params(params)
    logger.info(f"GRU classifier trained: {config.steps} step(s) on {n} windows, last loss {loss:.4f}")
    return GruClassifierModel(network, mean, scale, config)


def gru_posteriors(model, windows):
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    probs, _ = model.network.forward(standardize(windows, model.feature_mean, model.feature_scale))
    return probs


def majority_vote(posteriors):
    """윈도우 argmax 다수결, 동률은 사후확률 합 다음 낮은 인덱스

    점수는 득표 + 사후확률 합 / (윈도우 수 + 1)이므로 승자가 항상 argmax.
    """
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    if posteriors.shape[0] == 0:
        raise DataError("majority vote needs at least one window")
    votes = np.bincount(np.argmax(posteriors, axis=1), minlength=posteriors.shape[1])
    summed = posteriors.sum(axis=0)
    return Prediction.from_scores(votes + summed / (posteriors.shape[0] + 1))


def predict_recording(model, windows):
    windows = np.asarray(windows, dtype=np.float64)
    if windows.size == 0:
        raise DataError("no windows to classify")
    return majority_vote(gru_posteriors(model, windows))


def confusion_matrix(y_true, y_pred, num_classes):
    return _sk_confusion_matrix(y_true, y_pred, labels=list(range(num_classes)))


# --- 직렬화 --------------------------------------------------------

def save_classifier(model, path):
    if isinstance(model, LinearSvmModel):
        document = {
            'format': SVM_FORMAT,
            'complexity': model.complexity,
            'weights': encode_tensor(model.weights),
            'biases': encode_tensor(model.biases),
        }
    else:
        document = {
            'format': GRU_FORMAT,
            'config': model.config.to_dict(),
            'num_classes': model.num_classes,
            'params': {k: encode_tensor(v) for k, v in model.network.named_params().items()},
        }
    document['feature_mean'] = encode_tensor(model.feature_mean)
    document['feature_scale'] = encode_tensor(model.feature_scale)
    return write_json(document, path)


def load_classifier(path):
    document = read_json(path)
    mean = decode_tensor(document['feature_mean'])
    scale = decode_tensor(document['feature_scale'])
    if document.get('format') == SVM_FORMAT:
        return LinearSvmModel(decode_tensor(document['weights']), decode_tensor(document['biases']),
                              document['complexity'], mean, scale)
    if document.get('format') == GRU_FORMAT:
        config = GruClassifierConfig.from_dict(document['config'])
        skeleton = init_gru_classifier(config, mean.shape[0], document['num_classes'], np.random.default_rng(0))
        network = skeleton.with_params({k: decode_tensor(v) for k, v in document['params'].items()})
        return GruClassifierModel(network, mean, scale, config)
    raise DataError(f"{path} is not a classifier document")
