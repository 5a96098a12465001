import logging
import math
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.special import expit, softmax

from ris_lab.errors import NumericalSupportException, PolicyException
from ris_lab.models import ControllerKind, NetworkArchitecture

_logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12


class Mode(str, Enum):
    TRAIN = 'train'
    EVAL = 'eval'


def param_layout(arch: NetworkArchitecture) -> dict[str, tuple[int, tuple[int, ...]]]:
    """
    Ordered (offset, shape) of every named slice of the flat parameter vector.
    LSTM gate blocks are stacked i, f, o, g along the output axis.
    """
    layout = {}
    offset = 0

    def add(name, shape):
        nonlocal offset
        layout[name] = (offset, shape)
        offset += math.prod(shape)

    n_in = arch.input_size
    for i, n in enumerate(arch.lstm_sizes):
        add(f'lstm{i}.W', (n_in + n, 4 * n))
        add(f'lstm{i}.b', (4 * n,))
        n_in = n
    for j, (fan_in, fan_out) in enumerate(arch.dense_sizes):
        add(f'dense{j}.W', (fan_in, fan_out))
        add(f'dense{j}.b', (fan_out,))
    return layout


class PolicyParams:
    """
    Flat parameter vector of one recurrent network with named, reshaped views into it.
    """

    def __init__(self, arch: NetworkArchitecture, vector: Optional[np.ndarray] = None):
        self.arch = arch
        self.layout = param_layout(arch)
        start, shape = list(self.layout.values())[-1]
        self.size = start + math.prod(shape)
        if vector is None:
            vector = np.zeros(self.size)
        elif vector.shape != (self.size,):
            raise PolicyException(f"Parameter vector of length {vector.size} does not fit architecture ({self.size})")
        self.vector = vector

    @property
    def names(self) -> list[str]:
        return list(self.layout)

    def view(self, name: str) -> np.ndarray:
        start, shape = self.layout[name]
        return self.vector[start:start + math.prod(shape)].reshape(shape)

    def copy(self) -> 'PolicyParams':
        return PolicyParams(self.arch, self.vector.copy())


def init_params(arch: NetworkArchitecture, rng: np.random.Generator) -> PolicyParams:
    """
    Glorot-uniform weights, zero biases except LSTM forget gates at 1.
    """
    params = PolicyParams(arch)
    for name, (_, shape) in params.layout.items():
        if name.endswith('.W'):
            s = math.sqrt(6.0 / (shape[0] + shape[1]))
            params.view(name)[...] = rng.uniform(-s, s, size=shape)
        elif name.startswith('lstm'):
            n = shape[0] // 4
            params.view(name)[n:2 * n] = 1.0
    return params


class LstmCache(BaseModel):
    inputs: np.ndarray  # per step [x_t, h_{t-1}]
    gates: np.ndarray  # activated i, f, o, g
    cells: np.ndarray
    cell_tanh: np.ndarray
    hidden: np.ndarray

    class Config:
        arbitrary_types_allowed = True


class ForwardCache(BaseModel):
    kind: ControllerKind
    param_size: int
    lstm: list[LstmCache]
    feature: np.ndarray  # last hidden state of the LSTM stack
    masks: list[np.ndarray]
    dense_inputs: list[np.ndarray]
    dense_pre: list[np.ndarray]
    logits: np.ndarray
    distributions: list[np.ndarray] = []

    class Config:
        arbitrary_types_allowed = True


class ClampCounter(BaseModel):
    count: int = 0


def _lstm_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, n: int) -> LstmCache:
    steps, n_in = x.shape
    inputs = np.zeros((steps, n_in + n))
    gates = np.zeros((steps, 4 * n))
    cells = np.zeros((steps, n))
    cell_tanh = np.zeros((steps, n))
    hidden = np.zeros((steps, n))
    h = np.zeros(n)
    c = np.zeros(n)
    for t in range(steps):
        inputs[t, :n_in] = x[t]
        inputs[t, n_in:] = h
        pre = inputs[t] @ W + b
        gates[t, :3 * n] = expit(pre[:3 * n])
        gates[t, 3 * n:] = np.tanh(pre[3 * n:])
        i, f, o, g = gates[t, :n], gates[t, n:2 * n], gates[t, 2 * n:3 * n], gates[t, 3 * n:]
        c = f * c + i * g
        cells[t] = c
        cell_tanh[t] = np.tanh(c)
        h = o * cell_tanh[t]
        hidden[t] = h
    return LstmCache(inputs=inputs, gates=gates, cells=cells, cell_tanh=cell_tanh, hidden=hidden)


def _lstm_backward(
        d_hidden: np.ndarray, cache: LstmCache, W: np.ndarray, n: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    steps, width = cache.inputs.shape
    n_in = width - n
    dW = np.zeros_like(W)
    db = np.zeros(4 * n)
    dx = np.zeros((steps, n_in))
    dh_next = np.zeros(n)
    dc_next = np.zeros(n)
    for t in reversed(range(steps)):
        g_t = cache.gates[t]
        i, f, o, g = g_t[:n], g_t[n:2 * n], g_t[2 * n:3 * n], g_t[3 * n:]
        ct = cache.cell_tanh[t]
        c_prev = cache.cells[t - 1] if t else np.zeros(n)
        dh = d_hidden[t] + dh_next
        dc = dc_next + dh * o * (1 - ct * ct)
        d_pre = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dh * ct * o * (1 - o),
            dc * i * (1 - g * g),
        ])
        dc_next = dc * f
        dW += np.outer(cache.inputs[t], d_pre)
        db += d_pre
        d_inputs = W @ d_pre
        dx[t] = d_inputs[:n_in]
        dh_next = d_inputs[n_in:]
    return dx, dW, db


def _dropout_mask(width: int, p: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    if p == 0:
        return np.ones(width)
    if rng is None:
        raise PolicyException("Train mode with dropout needs a random generator")
    return (rng.random(width) >= p) / (1.0 - p)


def _head_bounds(arch: NetworkArchitecture) -> list[tuple[int, int]]:
    ends = np.cumsum(arch.head_sizes)
    return [(int(e - n), int(e)) for e, n in zip(ends, arch.head_sizes)]


def forward(
        params: PolicyParams,
        history: np.ndarray,
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
        masks: Optional[list[np.ndarray]] = None,
) -> tuple[list[np.ndarray], ForwardCache]:
    """
    Run the network over an encoded H x F history and return one distribution per head.

    Train mode applies inverted dropout (P1 on the LSTM output, P2 on both hidden dense
    layers) with masks drawn from rng unless given; eval mode applies none.
    """
    arch = params.arch
    x = np.asarray(history, dtype=float)
    if x.shape != (arch.history_length, arch.input_size):
        raise PolicyException(
            f"History of shape {x.shape}, expected {(arch.history_length, arch.input_size)}"
        )
    lstm = []
    seq = x
    for i, n in enumerate(arch.lstm_sizes):
        cache = _lstm_forward(seq, params.view(f'lstm{i}.W'), params.view(f'lstm{i}.b'), n)
        lstm.append(cache)
        seq = cache.hidden
    feature = seq[-1]
    z = np.maximum(feature, 0) if arch.kind == ControllerKind.CENTRALIZED else feature

    widths = [z.size, arch.hidden_units, arch.hidden_units]
    if masks is None:
        if Mode(mode) == Mode.TRAIN:
            rates = [arch.dropout_lstm, arch.dropout_dense, arch.dropout_dense]
            masks = [_dropout_mask(w, p, rng) for w, p in zip(widths, rates)]
        else:
            masks = [np.ones(w) for w in widths]

    z = z * masks[0]
    dense_inputs, dense_pre = [], []
    for j in range(2):
        dense_inputs.append(z)
        u = z @ params.view(f'dense{j}.W') + params.view(f'dense{j}.b')
        dense_pre.append(u)
        z = np.maximum(u, 0) * masks[j + 1]
    dense_inputs.append(z)
    logits = z @ params.view('dense2.W') + params.view('dense2.b')
    distributions = [softmax(logits[s:e]) for s, e in _head_bounds(arch)]
    cache = ForwardCache(
        kind=arch.kind, param_size=params.size, lstm=lstm, feature=feature, masks=masks,
        dense_inputs=dense_inputs, dense_pre=dense_pre, logits=logits, distributions=distributions,
    )
    return distributions, cache


def backward(params: PolicyParams, cache: ForwardCache, actions: Sequence[int], weight: float) -> np.ndarray:
    """
    Gradient of weight * sum over heads of log pi(selected action), by BPTT through the cache.
    """
    arch = params.arch
    if cache.param_size != params.size or cache.kind != arch.kind or len(actions) != len(arch.head_sizes):
        raise PolicyException("Forward cache does not match these parameters")
    grad = PolicyParams(arch)

    d_logits = np.concatenate([-p for p in cache.distributions]) * weight
    for (s, _), a in zip(_head_bounds(arch), actions):
        d_logits[s + int(a)] += weight

    grad.view('dense2.W')[...] = np.outer(cache.dense_inputs[2], d_logits)
    grad.view('dense2.b')[...] = d_logits
    dz = params.view('dense2.W') @ d_logits
    for j in (1, 0):
        du = dz * cache.masks[j + 1] * (cache.dense_pre[j] > 0)
        grad.view(f'dense{j}.W')[...] = np.outer(cache.dense_inputs[j], du)
        grad.view(f'dense{j}.b')[...] = du
        dz = params.view(f'dense{j}.W') @ du
    d_feature = dz * cache.masks[0]
    if arch.kind == ControllerKind.CENTRALIZED:
        d_feature = d_feature * (cache.feature > 0)

    sizes = arch.lstm_sizes
    d_seq = np.zeros((arch.history_length, sizes[-1]))
    d_seq[-1] = d_feature
    for i in reversed(range(len(sizes))):
        d_seq, dW, db = _lstm_backward(d_seq, cache.lstm[i], params.view(f'lstm{i}.W'), sizes[i])
        grad.view(f'lstm{i}.W')[...] = dW
        grad.view(f'lstm{i}.b')[...] = db
    return grad.vector


def inverse_cdf(distribution: np.ndarray, u: float) -> int:
    """
    Index whose cumulative bin [F(i-1), F(i)) holds u; a boundary value goes right.
    """
    cumulative = np.cumsum(distribution)
    return int(min(np.searchsorted(cumulative, u, side='right'), len(cumulative) - 1))


def sample_action(distribution: np.ndarray, rng: np.random.Generator) -> int:
    return inverse_cdf(distribution, rng.random())


def log_prob(distribution: np.ndarray, action: int, clamps: Optional[ClampCounter] = None) -> float:
    p = float(distribution[action])
    if p <= 0:
        raise NumericalSupportException(f"Action {action} has zero probability")
    if p < PROBABILITY_FLOOR:
        p = PROBABILITY_FLOOR
        if clamps is not None:
            clamps.count += 1
        _logger.warning("Clamped probability of action %d to %.0e", action, PROBABILITY_FLOOR)
    return math.log(p)
