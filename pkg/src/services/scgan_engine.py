"""준지도 조건부 GAN 엔진

생성자는 잠재 벡터 z와 one-hot 클래스 조건 c를 특징 벡터 (dense 스택) 또는
특징 시퀀스 (이전 출력을 다시 입력받는 GRU 스택)로 변환한다. ``scgan``,
``sgan`` 모드의 판별자는 마지막 클래스가 "가짜"인 (K+1)-way 분류기,
``cgan`` 모드는 [x || c]를 입력받는 실제/가짜 이진 판별자.

두 목적 함수 모두 CE로 최소화한다. 학습은 턴마다 고정 epoch 수로, 또는
현재 네트워크 손실이 max(decay**i + b, c) 아래로 내려가면 교대하는
동적 방식으로 두 네트워크를 번갈아 갱신한다.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..config.schema import ScganConfig
from ..utils.errors import ConfigError, DataError, DataKindError, DimensionError, DivergenceError
from ..utils.helpers import decode_tensor, encode_tensor, read_json, write_json
from ..utils.logger import get_logger
from .nn_core import (
    GRU_BIASES, GRU_WEIGHTS, DenseLayerParams, GruCellParams, Network,
    add_l2_grads, adam_update, gru_backward_step, gru_forward_step,
    init_dense, init_gru, one_hot, set_cross_entropy,
)
from .records import FeatureSet

logger = get_logger()

REAL, FAKE = 0, 1  # cgan 판별자 출력
MODEL_FORMAT = 'scgan-model/1'


# --- 잠재 벡터와 조건 벡터 -----------------------------------------

def sample_latent(latent_dim, prior, rng, count=None):
    """사전분포에서 i.i.d. 추출: 표준 정규분포 또는 [-1, 1] 균등분포"""
    if latent_dim <= 0:
        raise ValueError("latent_dim must be > 0")
    shape = (latent_dim,) if count is None else (count, latent_dim)
    if prior == 'uniform':
        return rng.uniform(-1.0, 1.0, size=shape)
    if prior == 'gaussian':
        return rng.standard_normal(size=shape)
    raise ConfigError(f"unknown prior {prior!r}")


def condition_vector(k, num_classes):
    if not 0 <= k < num_classes:
        raise IndexError(f"class {k} out of range for {num_classes} classes")
    c = np.zeros(num_classes)
    c[k] = 1.0
    return c


def _condition_matrix(c, num_classes):
    """조건 하나 (클래스 인덱스 또는 one-hot)를 (1, K) 행으로"""
    c = np.asarray(c)
    if c.ndim == 0:
        return one_hot([int(c)], num_classes)
    c = c.astype(np.float64).reshape(1, -1)
    if c.shape[1] != num_classes or np.count_nonzero(c) != 1 or c.sum() != 1.0:
        raise DimensionError(f"condition must be one-hot of width {num_classes}")
    return c


# --- 순환 생성자 --------------------------------------------------

@dataclass
class SequenceGenerator:
    """GRU 스택 + 선형 출력 투영으로 특징 프레임 T개 생성

    1번째 스텝은 0 은닉 상태에서 [z || 0 || c], t > 1 스텝은 [0 || x_{t-1} || c]를
    읽고 모든 레이어의 은닉 상태를 이어간다.
    """
    gru: list
    head: DenseLayerParams
    latent_dim: int
    feature_dim: int
    cond_dim: int

    def named_params(self):
        params = {}
        for i, cell in enumerate(self.gru):
            for name in GRU_WEIGHTS + GRU_BIASES:
                params[f'gru{i}.{name}'] = getattr(cell, name)
        params['head.weight'] = self.head.weight
        params['head.bias'] = self.head.bias
        return params

    def with_params(self, params):
        gru = [GruCellParams(**{n: params[f'gru{i}.{n}'] for n in GRU_WEIGHTS + GRU_BIASES})
               for i, _ in enumerate(self.gru)]
        head = DenseLayerParams(params['head.weight'], params['head.bias'], 'linear')
        return SequenceGenerator(gru, head, self.latent_dim, self.feature_dim, self.cond_dim)

    def forward(self, Z, C, steps):
        batch = Z.shape[0]
        hidden = [np.zeros((batch, cell.hidden_dim)) for cell in self.gru]
        outs = np.empty((batch, steps, self.feature_dim))
        caches = []
        inp = np.concatenate([Z, np.zeros((batch, self.feature_dim)), C], axis=1)
        for t in range(steps):
            step_caches = []
            x = inp
            for i, cell in enumerate(self.gru):
                hidden[i], cache = gru_forward_step(x, hidden[i], cell)
                step_caches.append(cache)
                x = hidden[i]
            out = x @ self.head.weight.T + self.head.bias
            outs[:, t] = out
            caches.append((step_caches, x))
            inp = np.concatenate([np.zeros((batch, self.latent_dim)), out, C], axis=1)
        return outs, caches

    def backward(self, caches, d_out):
        """출력 되먹임 경로를 포함한 BPTT"""
        grads = {k: np.zeros_like(v) for k, v in self.named_params().items()}
        layer_grads = [{n: grads[f'gru{i}.{n}'] for n in GRU_WEIGHTS + GRU_BIASES} for i in range(len(self.gru))]
        batch = d_out.shape[0]
        carries = [np.zeros((batch, cell.hidden_dim)) for cell in self.gru]
        d_feedback = np.zeros((batch, self.feature_dim))
        lo, hi = self.latent_dim, self.latent_dim + self.feature_dim
        for t in reversed(range(len(caches))):
            step_caches, top = caches[t]
            d_o = d_out[:, t] + d_feedback
            grads['head.weight'] += d_o.T @ top
            grads['head.bias'] += d_o.sum(axis=0)
            d = d_o @ self.head.weight
            for i in reversed(range(len(self.gru))):
                d, carries[i] = gru_backward_step(d + carries[i], step_caches[i], self.gru[i], layer_grads[i])
            d_feedback = d[:, lo:hi]
        return grads


# --- 모델 ----------------------------------------------------------------

@dataclass
class ScganModel:
    config: ScganConfig
    feature_dim: int
    generator: object            # Network (정적) 또는 SequenceGenerator
    discriminator: Network
    feature_mean: np.ndarray = None
    feature_scale: np.ndarray = None
    seed: int = 0
    diverged: bool = False
    failure: str = None

    def __post_init__(self):
        if self.feature_mean is None:
            self.feature_mean = np.zeros(self.feature_dim)
        if self.feature_scale is None:
            self.feature_scale = np.ones(self.feature_dim)

    @property
    def num_classes(self):
        return self.config.num_classes

    @property
    def mode(self):
        return self.config.mode

    @property
    def data_kind(self):
        return self.config.data_kind

    def standardize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale

    def destandardize(self, X):
        return X * self.feature_scale + self.feature_mean


def init_model(config, feature_dim, rng=None):
    """가중치 Gaussian(0, init_std), 바이어스 0, 특징 스케일링은 항등"""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    K, L, N, F = config.num_classes, config.latent_dim, config.hidden_size, feature_dim
    std = config.init_std
    cond_dim = 0 if config.mode == 'sgan' else K
    d_in = F + (K if config.mode == 'cgan' else 0)
    d_out = 2 if config.mode == 'cgan' else K + 1

    if config.data_kind == 'static_vector':
        g_layers = [init_dense(L + cond_dim, N, 'tanh', rng, std)]
        g_layers += [init_dense(N, N, 'tanh', rng, std) for _ in range(config.hidden_layers - 1)]
        g_layers.append(init_dense(N, F, 'linear', rng, std))
        generator = Network(dense=g_layers)

        d_layers = [init_dense(d_in, N, 'tanh', rng, std)]
        d_layers += [init_dense(N, N, 'tanh', rng, std) for _ in range(config.hidden_layers - 1)]
        d_layers.append(init_dense(N, d_out, 'softmax', rng, std))
        discriminator = Network(dense=d_layers)
    else:
        g_cells = [init_gru(L + F + cond_dim, N, rng, std)]
        g_cells += [init_gru(N, N, rng, std) for _ in range(config.hidden_layers - 1)]
        generator = SequenceGenerator(g_cells, init_dense(N, F, 'linear', rng, std), L, F, cond_dim)

        d_cells = [init_gru(d_in, N, rng, std)]
        d_cells += [init_gru(N, N, rng, std) for _ in range(config.hidden_layers - 1)]
        discriminator = Network(dense=[init_dense(N, d_out, 'softmax', rng, std)], gru=d_cells)

    return ScganModel(config=config, feature_dim=F, generator=generator,
                      discriminator=discriminator, seed=config.seed)


# --- 순전파 헬퍼 (표준화 공간) ---------------------------------

def _generator_forward(model, Z, C):
    if model.data_kind == 'static_vector':
        inp = Z if model.mode == 'sgan' else np.concatenate([Z, C], axis=1)
        return model.generator.forward(inp)
    cond = np.zeros((Z.shape[0], 0)) if model.mode == 'sgan' else C
    return model.generator.forward(Z, cond, model.config.sequence_length)


def _generator_backward(model, cache, d_fake):
    if model.data_kind == 'static_vector':
        grads, _ = model.generator.backward(cache, d_fake)
        return grads
    return model.generator.backward(cache, d_fake)


def _discriminator_input(model, X, C):
    if model.mode != 'cgan':
        return X
    if X.ndim == 3:
        C = np.repeat(C[:, None, :], X.shape[1], axis=1)
    return np.concatenate([X, C], axis=-1)


def _discriminator_pass(model, X, C, target_mask):
    """CE 항 하나의 (loss, d-grads, d-input)"""
    _, cache = model.discriminator.forward(_discriminator_input(model, X, C))
    loss, d_logits = set_cross_entropy(cache['logits'], target_mask)
    grads, d_input = model.discriminator.backward(cache, d_logits, wrt_logits=True)
    return loss, grads, d_input


def _real_targets(model, labels):
    width = 2 if model.mode == 'cgan' else model.num_classes + 1
    if model.mode == 'cgan':
        return one_hot(np.full(len(labels), REAL), width) > 0
    return one_hot(labels, width) > 0


def _fake_targets(model, count):
    if model.mode == 'cgan':
        return one_hot(np.full(count, FAKE), 2) > 0
    return one_hot(np.full(count, model.num_classes), model.num_classes + 1) > 0


def _d_loss_and_grads(model, real, labels, fake, fake_classes):
    K = model.num_classes
    loss, grads, _ = _discriminator_pass(model, real, one_hot(labels, K), _real_targets(model, labels))
    if len(fake):
        fake_loss, fake_grads, _ = _discriminator_pass(
            model, fake, one_hot(fake_classes, K), _fake_targets(model, len(fake)))
        loss += fake_loss
        for name in grads:
            grads[name] += fake_grads[name]
    params = model.discriminator.named_params()
    return loss, add_l2_grads(grads, params, model.config.l2)


def _g_targets(model, classes):
    K = model.num_classes
    if model.mode == 'scgan':
        return one_hot(classes, K + 1) > 0
    if model.mode == 'sgan':
        mask = np.ones((len(classes), K + 1), dtype=bool)
        mask[:, K] = False
        return mask
    return one_hot(np.full(len(classes), REAL), 2) > 0


def _g_loss_and_grads(model, Z, classes):
    C = one_hot(classes, model.num_classes)
    fake, g_cache = _generator_forward(model, Z, C)
    loss, _, d_input = _discriminator_pass(model, fake, C, _g_targets(model, classes))
    d_fake = d_input[..., :model.feature_dim]
    grads = _generator_backward(model, g_cache, d_fake)
    params = model.generator.named_params()
    return loss, add_l2_grads(grads, params, model.config.l2)


def _require_classes(model, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise DataError(f"labels must lie in [0, {model.num_classes})")
    return labels


# --- 공개 연산 ----------------------------------------------------

def generate_batch(model, classes, rng, Z=None):
    """요청한 클래스마다 페이로드 하나 생성 (원래 특징 스케일)"""
    classes = _require_classes(model, classes)
    if Z is None:
        Z = sample_latent(model.config.latent_dim, model.config.prior, rng, count=len(classes))
    if len(classes) == 0:
        shape = (0, model.feature_dim) if model.data_kind == 'static_vector' else \
            (0, model.config.sequence_length, model.feature_dim)
        return np.zeros(shape)
    fake, _ = _generator_forward(model, np.atleast_2d(Z), one_hot(classes, model.num_classes))
    return model.destandardize(fake)


def generate_static(model, z, c):
    """잠재 벡터 하나와 조건 하나에 대한 x_hat = G(z | c)"""
    if model.data_kind != 'static_vector':
        raise DataKindError("generate_static needs a static_vector model")
    C = _condition_matrix(c, model.num_classes)
    fake, _ = _generator_forward(model, np.asarray(z, dtype=np.float64)[None, :], C)
    return model.destandardize(fake)[0]


def generate_sequence(model, z, c, steps=None):
    """잠재 벡터 하나와 조건 하나에 대한 x_hat_1..x_hat_T"""
    if model.data_kind != 'sequence':
        raise DataKindError("generate_sequence needs a sequence model")
    steps = model.config.sequence_length if steps is None else steps
    if steps < 1:
        raise ValueError("sequence length must be >= 1")
    C = _condition_matrix(c, model.num_classes)
    if model.mode == 'sgan':
        C = np.zeros((1, 0))
    fake, _ = model.generator.forward(np.asarray(z, dtype=np.float64)[None, :], C, steps)
    return model.destandardize(fake)[0]


def discriminate(model, X, classes=None):
    """원래 특징 스케일 페이로드의 판별자 사후확률

    cgan 모드는 조건 클래스가 필요하다.
    """
    X = model.standardize(X)
    if model.mode == 'cgan':
        if classes is None:
            raise DataError("cgan discrimination needs conditions")
        C = one_hot(_require_classes(model, classes), model.num_classes)
    else:
        C = None
    probs, _ = model.discriminator.forward(_discriminator_input(model, X, C))
    return probs


def discriminator_loss(model, real_batch, labels, fake_batch, fake_classes=None):
    """실제 샘플의 자기 클래스 평균 CE + 가짜 샘플의 "가짜" 클래스 평균 CE"""
    labels = _require_classes(model, labels)
    fake_batch = np.asarray(fake_batch, dtype=np.float64)
    if fake_classes is None:
        if model.mode == 'cgan' and len(fake_batch):
            raise DataError("cgan discriminator loss needs fake conditions")
        fake_classes = np.zeros(len(fake_batch), dtype=np.int64)
    fake_classes = _require_classes(model, fake_classes)
    real = model.standardize(real_batch)
    fake = model.standardize(fake_batch) if len(fake_batch) else fake_batch
    loss, _ = _d_loss_and_grads(model, real, labels, fake, fake_classes)
    return loss


def generator_loss(model, fake_batch, conditions=None):
    """scgan: 조건 클래스 CE, sgan: 실제 클래스 질량의 -log, cgan: 실제 쪽 CE"""
    fake_batch = np.asarray(fake_batch, dtype=np.float64)
    if conditions is None:
        if model.mode != 'sgan':
            raise DataError(f"{model.mode} generator loss needs conditions")
        conditions = np.zeros(len(fake_batch), dtype=np.int64)
    classes = _require_classes(model, conditions)
    X = model.standardize(fake_batch)
    C = one_hot(classes, model.num_classes)
    _, cache = model.discriminator.forward(_discriminator_input(model, X, C))
    loss, _ = set_cross_entropy(cache['logits'], _g_targets(model, classes))
    return loss


def threshold_value(params, iteration):
    decay, offset, floor = params
    return max(decay ** iteration + offset, floor)


def threshold(policy, iteration, network='discriminator'):
    """네트워크 하나의 동적 손실 임계값 max(decay**i + offset, floor)"""
    if policy.kind != 'dynamic':
        raise ConfigError("a fixed alternation policy has no loss threshold")
    params = policy.discriminator if network == 'discriminator' else policy.generator
    return threshold_value(params, iteration)


@dataclass
class TraceRecord:
    step: int
    iteration: int
    network: str
    generator_loss: float
    discriminator_loss: float
    generator_threshold: float
    discriminator_threshold: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, **values):
        self.records.append(TraceRecord(step=len(self.records), **values))

    def __len__(self):
        return len(self.records)

    def to_frame(self):
        columns = list(TraceRecord.__dataclass_fields__)
        return pd.DataFrame([vars(r) for r in self.records], columns=columns)

    def losses(self, network):
        """`network`가 학습된 스텝의 손실 시계열"""
        key = 'generator_loss' if network == 'generator' else 'discriminator_loss'
        return np.array([getattr(r, key) for r in self.records if r.network == network])


def _switch_loss(policy, loss):
    """판별자 교대 판정에 쓰는 손실 (실제/가짜 미니배치는 같은 크기)"""
    return loss / 2.0 if policy.discriminator_reduction == 'mean' else loss


def _fit_scaler(model, X):
    flat = X.reshape(-1, X.shape[-1])
    model.feature_mean = flat.mean(axis=0)
    scale = flat.std(axis=0)
    model.feature_scale = np.where(scale > 1e-12, scale, 1.0)


def train(config, train_set):
    """판별자/생성자 턴을 교대로 학습하고 (model, trace) 반환"""
    if not isinstance(train_set, FeatureSet):
        raise DataError("train expects a FeatureSet")
    train_set.check_labels(config.num_classes)
    if train_set.data_kind != config.data_kind:
        raise DataKindError(f"config expects {config.data_kind} data, got {train_set.data_kind}")
    if config.data_kind == 'sequence' and train_set.X.shape[1] != config.sequence_length:
        raise DimensionError(f"training windows have {train_set.X.shape[1]} steps, config expects {config.sequence_length}")

    rng = np.random.default_rng(config.seed)
    model = init_model(config, train_set.feature_dim, rng)
    _fit_scaler(model, train_set.X)
    trace = TrainTrace()
    if config.max_iterations == 0:
        return model, trace

    X = model.standardize(train_set.X)
    y = train_set.y
    n, K = len(y), config.num_classes
    batch = min(config.batch_size, n)
    policy = config.alternation
    dynamic = policy.kind == 'dynamic'
    steps_per_epoch = math.ceil(n / batch)
    d_steps = config.step_cap if dynamic else policy.discriminator_epochs * steps_per_epoch
    g_steps = config.step_cap if dynamic else policy.generator_epochs * steps_per_epoch

    d_state = g_state = None
    last_g = last_d = switch_d = math.nan
    streak = 0
    budget = config.max_steps or math.inf
    logger.info(f"scGAN training: mode={config.mode}, kind={config.data_kind}, n={n}, "
                f"N={config.hidden_size}, alternation={policy.kind}")

    for i in range(config.max_iterations):
        if len(trace) >= budget:
            break
        th_d = threshold(policy, i, 'discriminator') if dynamic else math.nan
        th_g = threshold(policy, i, 'generator') if dynamic else math.nan

        for _ in range(d_steps):
            if len(trace) >= budget:
                break
            idx = rng.choice(n, size=batch, replace=False)
            fake_classes = rng.integers(K, size=batch)
            Z = sample_latent(config.latent_dim, config.prior, rng, count=batch)
            fake, _ = _generator_forward(model, Z, one_hot(fake_classes, K))
            loss, grads = _d_loss_and_grads(model, X[idx], y[idx], fake, fake_classes)
            if not math.isfinite(loss):
                raise DivergenceError("discriminator loss is not finite", iteration=i)
            params, d_state = adam_update(model.discriminator.named_params(), grads, d_state,
                                          config.discriminator_lr)
            model.discriminator = model.discriminator.with_params(params)
            last_d = loss
            switch_d = _switch_loss(policy, loss)
            trace.append(iteration=i, network='discriminator', generator_loss=last_g,
                         discriminator_loss=last_d, generator_threshold=th_g, discriminator_threshold=th_d)
            if dynamic and switch_d < th_d:
                break

        for _ in range(g_steps):
            if len(trace) >= budget:
                break
            classes = rng.integers(K, size=batch)
            Z = sample_latent(config.latent_dim, config.prior, rng, count=batch)
            loss, grads = _g_loss_and_grads(model, Z, classes)
            if not math.isfinite(loss):
                raise DivergenceError("generator loss is not finite", iteration=i)
            params, g_state = adam_update(model.generator.named_params(), grads, g_state,
                                          config.generator_lr)
            model.generator = model.generator.with_params(params)
            last_g = loss
            trace.append(iteration=i, network='generator', generator_loss=last_g,
                         discriminator_loss=last_d, generator_threshold=th_g, discriminator_threshold=th_d)
            if dynamic and loss < th_g:
                break

        if dynamic and config.convergence_turns:
            below = switch_d < policy.discriminator[2] and last_g < policy.generator[2]
            streak = streak + 1 if below else 0
            if streak >= config.convergence_turns:
                logger.info(f"scGAN converged after {i + 1} iterations")
                break

    logger.info(f"scGAN training finished: {len(trace)} steps, L_G={last_g:.4f}, L_D={last_d:.4f}")
    return model, trace


# --- 직렬화 --------------------------------------------------------

def save_model(model, path):
    """자기 기술 JSON 문서, 텐서는 비트 단위로 보존"""
    document = {
        'format': MODEL_FORMAT,
        'config': model.config.to_dict(),
        'feature_dim': model.feature_dim,
        'seed': model.seed,
        'diverged': model.diverged,
        'failure': model.failure,
        'feature_mean': encode_tensor(model.feature_mean),
        'feature_scale': encode_tensor(model.feature_scale),
        'generator': {k: encode_tensor(v) for k, v in model.generator.named_params().items()},
        'discriminator': {k: encode_tensor(v) for k, v in model.discriminator.named_params().items()},
    }
    return write_json(document, path)


def load_model(path):
    document = read_json(path)
    if document.get('format') != MODEL_FORMAT:
        raise DataError(f"{path} is not an scGAN model document")
    config = ScganConfig.from_dict(document['config'])
    model = init_model(config, document['feature_dim'], np.random.default_rng(0))
    model.generator = model.generator.with_params({k: decode_tensor(v) for k, v in document['generator'].items()})
    model.discriminator = model.discriminator.with_params(
        {k: decode_tensor(v) for k, v in document['discriminator'].items()})
    model.feature_mean = decode_tensor(document['feature_mean'])
    model.feature_scale = decode_tensor(document['feature_scale'])
    model.seed = document['seed']
    model.diverged = document['diverged']
    model.failure = document['failure']
    return model
