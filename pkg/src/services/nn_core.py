"""최소한의 미분 가능 신경망 커널

Dense / GRU 레이어와 직접 유도한 기울기 (GRU 스택은 BPTT), softmax CE,
L2 포함 Adam, 중앙 차분 기울기 검사. 모든 연산은 float64이며 따로
표시한 곳 외에는 입력 배열을 변경하지 않는다.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp
from scipy.special import softmax as _softmax

from ..utils.errors import DimensionError, DivergenceError

ACTIVATIONS = ('sigmoid', 'tanh', 'linear', 'softmax')
GRU_WEIGHTS = ('w_z', 'w_r', 'w_h', 'u_z', 'u_r', 'u_h')
GRU_BIASES = ('b_z', 'b_r', 'b_h')


def _as_float(array, name):
    array = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    return array


@dataclass
class DenseLayerParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = 'linear'

    def __post_init__(self):
        self.weight = _as_float(self.weight, 'weight')
        self.bias = _as_float(self.bias, 'bias')
        if self.weight.ndim != 2:
            raise DimensionError(f"dense weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias length {self.bias.shape} does not match {self.weight.shape[0]} rows")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass
class GruCellParams:
    """갱신 (z), 리셋 (r), 후보 (h) 게이트 블록"""
    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in GRU_WEIGHTS + GRU_BIASES:
            setattr(self, name, _as_float(getattr(self, name), name))
        hidden, inputs = self.w_z.shape
        for name in ('w_z', 'w_r', 'w_h'):
            if getattr(self, name).shape != (hidden, inputs):
                raise DimensionError(f"{name} must be ({hidden}, {inputs})")
        for name in ('u_z', 'u_r', 'u_h'):
            if getattr(self, name).shape != (hidden, hidden):
                raise DimensionError(f"{name} must be ({hidden}, {hidden})")
        for name in GRU_BIASES:
            if getattr(self, name).shape != (hidden,):
                raise DimensionError(f"{name} must have length {hidden}")

    @property
    def input_dim(self):
        return self.w_z.shape[1]

    @property
    def hidden_dim(self):
        return self.w_z.shape[0]


@dataclass
class AdamState:
    first: dict
    second: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(
            first={k: np.zeros_like(v) for k, v in params.items()},
            second={k: np.zeros_like(v) for k, v in params.items()},
        )


@dataclass
class GradCheckReport:
    errors: dict
    tol: float

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tol


# --- 초기화 -------------------------------------------------------

def init_dense(in_dim, out_dim, activation, rng, std=0.1):
    """가중치 Gaussian(0, std), 바이어스 0"""
    return DenseLayerParams(rng.normal(0.0, std, size=(out_dim, in_dim)), np.zeros(out_dim), activation)


def init_gru(in_dim, hidden_dim, rng, std=0.1):
    blocks = {}
    for name in ('w_z', 'w_r', 'w_h'):
        blocks[name] = rng.normal(0.0, std, size=(hidden_dim, in_dim))
    for name in ('u_z', 'u_r', 'u_h'):
        blocks[name] = rng.normal(0.0, std, size=(hidden_dim, hidden_dim))
    for name in GRU_BIASES:
        blocks[name] = np.zeros(hidden_dim)
    return GruCellParams(**blocks)


# --- 활성화와 손실 -----------------------------------------------

def activate(pre, activation):
    if activation == 'sigmoid':
        return expit(pre)
    if activation == 'tanh':
        return np.tanh(pre)
    if activation == 'softmax':
        return _softmax(pre, axis=-1)
    return pre


def _activation_grad(activation, out, d_out):
    if activation == 'sigmoid':
        return d_out * out * (1.0 - out)
    if activation == 'tanh':
        return d_out * (1.0 - out ** 2)
    if activation == 'linear':
        return d_out
    raise ValueError("softmax gradients are only taken through the cross-entropy at the head")


def softmax(logits):
    return _softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def softmax_cross_entropy(logits, target_class):
    """로짓 벡터 하나의 -log softmax(logits)[target_class]"""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target_class < logits.shape[-1]:
        raise IndexError(f"target class {target_class} out of range for {logits.shape[-1]} logits")
    return float(logsumexp(logits) - logits[target_class])


def set_cross_entropy(logits, target_mask):
    """행별 목표 클래스 집합 확률질량의 -log 평균과 로짓 기울기

    one-hot 마스크면 일반 CE, 여러 클래스 마스크면 "그중 어느 클래스든" 손실.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target_mask = np.asarray(target_mask, dtype=bool)
    if logits.shape != target_mask.shape:
        raise DimensionError(f"mask shape {target_mask.shape} does not match logits {logits.shape}")
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    masked = np.where(target_mask, logits, -np.inf)
    losses = logsumexp(logits, axis=1) - logsumexp(masked, axis=1)
    grad = (_softmax(logits, axis=1) - _softmax(masked, axis=1)) / n
    return float(np.mean(losses)), grad


def one_hot(indices, width):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= width):
        raise IndexError(f"class index out of range for width {width}")
    out = np.zeros((indices.shape[0], width), dtype=np.float64)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


# --- 레이어 기본 연산 -----------------------------------------------------

def dense_forward(x, layer):
    """activation(weight @ x + bias), 벡터 또는 (batch, in) 행렬 입력"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"input width {x.shape[-1]} does not match layer input {layer.in_dim}")
    return activate(x @ layer.weight.T + layer.bias, layer.activation)


def gru_forward_step(x, h_prev, p):
    """배치 GRU 스텝, 새 상태와 역전파 캐시 반환"""
    z = expit(x @ p.w_z.T + h_prev @ p.u_z.T + p.b_z)
    r = expit(x @ p.w_r.T + h_prev @ p.u_r.T + p.b_r)
    rh = r * h_prev
    h_tilde = np.tanh(x @ p.w_h.T + rh @ p.u_h.T + p.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, (x, h_prev, z, r, rh, h_tilde)


def gru_backward_step(dh, cache, p, grads):
    """파라미터 기울기를 `grads`에 누적하고 (dx, dh_prev) 반환"""
    x, h_prev, z, r, rh, h_tilde = cache
    dz = dh * (h_tilde - h_prev)
    dh_prev = dh * (1.0 - z)
    da_h = dh * z * (1.0 - h_tilde ** 2)
    d_rh = da_h @ p.u_h
    dh_prev += d_rh * r
    da_z = dz * z * (1.0 - z)
    da_r = d_rh * h_prev * r * (1.0 - r)

    for gate, da in (('z', da_z), ('r', da_r), ('h', da_h)):
        grads[f'w_{gate}'] += da.T @ x
        grads[f'b_{gate}'] += da.sum(axis=0)
    grads['u_z'] += da_z.T @ h_prev
    grads['u_r'] += da_r.T @ h_prev
    grads['u_h'] += da_h.T @ rh

    dx = da_h @ p.w_h + da_z @ p.w_z + da_r @ p.w_r
    dh_prev += da_z @ p.u_z + da_r @ p.u_r
    return dx, dh_prev


def gru_step(x_t, h_prev, p):
    """h = (1 - z) * h_prev + z * tanh(W_h x + U_h (r * h_prev) + b_h)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden_dim:
        raise DimensionError(
            f"GRU step expects input {p.input_dim} / hidden {p.hidden_dim}, "
            f"got {x_t.shape[-1]} / {h_prev.shape[-1]}"
        )
    h, _ = gru_forward_step(x_t, h_prev, p)
    return h


def dense_backward(d_pre, inp, layer):
    """활성화 전 기울기로부터 dense 레이어 기울기 계산"""
    return d_pre.T @ inp, d_pre.sum(axis=0), d_pre @ layer.weight


# --- 네트워크 -------------------------------------------------------------

def is_weight(name):
    """L2는 가중치 행렬에만 적용 (바이어스 제외)"""
    leaf = name.rsplit('.', 1)[-1]
    return leaf == 'weight' or leaf in GRU_WEIGHTS


@dataclass
class Network:
    """(선택) GRU 스택을 many-to-one으로 dense 스택에 연결

    GRU 레이어가 없으면 입력은 (batch, features), 있으면 (batch, steps, features)이고
    dense 스택은 최상위 레이어의 마지막 은닉 상태를 읽는다.
    """
    dense: list
    gru: list = field(default_factory=list)

    @property
    def recurrent(self):
        return bool(self.gru)

    @property
    def input_dim(self):
        return self.gru[0].input_dim if self.gru else self.dense[0].in_dim

    @property
    def output_dim(self):
        return self.dense[-1].out_dim

    def named_params(self):
        """이름 -> 배열 순서 매핑 (복사본 아님)"""
        params = {}
        for i, cell in enumerate(self.gru):
            for name in GRU_WEIGHTS + GRU_BIASES:
                params[f'gru{i}.{name}'] = getattr(cell, name)
        for i, layer in enumerate(self.dense):
            params[f'dense{i}.weight'] = layer.weight
            params[f'dense{i}.bias'] = layer.bias
        return params

    def with_params(self, params):
        """같은 구조에 주어진 배열을 넣은 새 네트워크"""
        gru = []
        for i, _ in enumerate(self.gru):
            gru.append(GruCellParams(**{n: params[f'gru{i}.{n}'] for n in GRU_WEIGHTS + GRU_BIASES}))
        dense = [
            DenseLayerParams(params[f'dense{i}.weight'], params[f'dense{i}.bias'], layer.activation)
            for i, layer in enumerate(self.dense)
        ]
        return Network(dense=dense, gru=gru)

    def copy(self):
        return self.with_params({k: v.copy() for k, v in self.named_params().items()})

    def forward(self, X):
        """(outputs, cache) 반환, cache['logits']는 출력층 활성화 전 값"""
        X = np.asarray(X, dtype=np.float64)
        cache = {'gru': [], 'dense': []}
        if self.gru:
            if X.ndim != 3 or X.shape[2] != self.input_dim:
                raise DimensionError(f"expected (batch, steps, {self.input_dim}) input, got {X.shape}")
            batch, steps, _ = X.shape
            seq = X
            for cell in self.gru:
                h = np.zeros((batch, cell.hidden_dim))
                outs = np.empty((batch, steps, cell.hidden_dim))
                layer_cache = []
                for t in range(steps):
                    h, step_cache = gru_forward_step(seq[:, t], h, cell)
                    outs[:, t] = h
                    layer_cache.append(step_cache)
                cache['gru'].append(layer_cache)
                seq = outs
            a = seq[:, -1]
            cache['steps'] = steps
        else:
            if X.ndim != 2 or X.shape[1] != self.input_dim:
                raise DimensionError(f"expected (batch, {self.input_dim}) input, got {X.shape}")
            a = X

        pre = a
        for layer in self.dense:
            inp = a
            pre = inp @ layer.weight.T + layer.bias
            a = activate(pre, layer.activation)
            cache['dense'].append((inp, a))
        cache['logits'] = pre
        return a, cache

    def backward(self, cache, d_out, wrt_logits=False):
        """출력 또는 로짓 기울기로부터 (grads, d_input) 반환"""
        grads = {k: np.zeros_like(v) for k, v in self.named_params().items()}

        d_a = d_out
        for i in reversed(range(len(self.dense))):
            layer = self.dense[i]
            inp, out = cache['dense'][i]
            if i == len(self.dense) - 1 and wrt_logits:
                d_pre = d_a
            else:
                d_pre = _activation_grad(layer.activation, out, d_a)
            d_w, d_b, d_a = dense_backward(d_pre, inp, layer)
            grads[f'dense{i}.weight'] += d_w
            grads[f'dense{i}.bias'] += d_b

        if not self.gru:
            return grads, d_a

        batch = d_a.shape[0]
        steps = cache['steps']
        d_seq = np.zeros((batch, steps, self.gru[-1].hidden_dim))
        d_seq[:, -1] = d_a
        for layer_index in reversed(range(len(self.gru))):
            cell = self.gru[layer_index]
            layer_grads = {name: grads[f'gru{layer_index}.{name}'] for name in GRU_WEIGHTS + GRU_BIASES}
            d_in = np.zeros((batch, steps, cell.input_dim))
            carry = np.zeros((batch, cell.hidden_dim))
            for t in reversed(range(steps)):
                dx, carry = gru_backward_step(d_seq[:, t] + carry, cache['gru'][layer_index][t], cell, layer_grads)
                d_in[:, t] = dx
            d_seq = d_in
        return grads, d_seq


def l2_penalty(params, l2):
    if not l2:
        return 0.0
    return 0.5 * l2 * sum(float(np.sum(v ** 2)) for k, v in params.items() if is_weight(k))


def add_l2_grads(grads, params, l2):
    if l2:
        for k, v in params.items():
            if is_weight(k):
                grads[k] = grads[k] + l2 * v
    return grads


def network_loss(network, batch, targets, l2=0.0):
    """출력 로짓의 평균 softmax CE + L2 항"""
    _, cache = network.forward(batch)
    logits = cache['logits']
    loss, _ = set_cross_entropy(logits, one_hot(targets, logits.shape[1]) > 0)
    return loss + l2_penalty(network.named_params(), l2)


def backward(network, batch, targets, l2=0.0):
    """L2 항을 포함한 배치 평균 CE의 (loss, grads)"""
    _, cache = network.forward(batch)
    logits = cache['logits']
    loss, d_logits = set_cross_entropy(logits, one_hot(targets, logits.shape[1]) > 0)
    params = network.named_params()
    loss += l2_penalty(params, l2)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss in backward pass")
    grads, _ = network.backward(cache, d_logits, wrt_logits=True)
    return loss, add_l2_grads(grads, params, l2)


def adam_update(params, grads, state, lr, l2=0.0):
    """편향 보정 Adam 한 스텝, (new_params, new_state) 반환

    `l2`가 0이 아니면 가중치 기울기에 l2 * weight를 먼저 더한다.
    """
    if state is None:
        state = AdamState.for_params(params)
    if set(params) != set(grads):
        raise DimensionError("parameter and gradient names differ")
    step = state.step + 1
    first, second, updated = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {value.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        if l2 and is_weight(name):
            g = g + l2 * value
        m = state.beta1 * state.first[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second[name] + (1.0 - state.beta2) * g ** 2
        m_hat = m / (1.0 - state.beta1 ** step)
        v_hat = v / (1.0 - state.beta2 ** step)
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        first[name] = m
        second[name] = v
    return updated, AdamState(first, second, step, state.beta1, state.beta2, state.eps)


# --- 기울기 검사 ----------------------------------------------------

def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)


def check_gradients(loss_fn, params, analytic, h=1e-5, tol=1e-4):
    """`params` 모든 원소의 중앙 차분 (제자리 변경 후 복원)"""
    if h <= 0:
        raise ValueError("finite-difference step must be > 0")
    errors = {}
    for name, value in params.items():
        flat = value.reshape(-1)
        numeric = np.empty_like(flat)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + h
            plus = loss_fn()
            flat[j] = saved - h
            minus = loss_fn()
            flat[j] = saved
            numeric[j] = (plus - minus) / (2.0 * h)
        err = relative_error(np.asarray(analytic[name]).reshape(-1), numeric)
        errors[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(errors=errors, tol=tol)


def grad_check(network, batch, targets, h=1e-5, tol=1e-4, l2=0.0, grads=None):
    """해석적 기울기 (없으면 계산)와 중앙 차분 비교"""
    if grads is None:
        _, grads = backward(network, batch, targets, l2)
    return check_gradients(lambda: network_loss(network, batch, targets, l2), network.named_params(), grads, h, tol)
