import logging
from typing import Optional, Sequence

import numpy as np

from ris_lab.errors import PolicyException
from ris_lab.history import HistoryBuffer
from ris_lab.models import ControllerKind, NetworkArchitecture
from ris_lab.policy import ForwardCache, Mode, PolicyParams, backward, forward, init_params

_logger = logging.getLogger(__name__)


class Controller:
    """
    Policy profile of the AP and every surface: one network with a head per agent
    (centralized) or one network per agent (distributed).

    All networks share one flat vector; each PolicyParams.vector is a view into it.
    """

    def __init__(self, kind: ControllerKind, params: list[PolicyParams]):
        kind = ControllerKind(kind)
        if not params:
            raise PolicyException("A controller needs at least one network")
        if kind == ControllerKind.CENTRALIZED and len(params) != 1:
            raise PolicyException("A centralized controller owns exactly one network")
        if any(p.arch.kind != kind for p in params):
            raise PolicyException(f"Every network of a {kind.value} controller must share its kind")
        self.kind = kind
        self.vector = np.concatenate([p.vector for p in params])
        self.bounds = []
        offset = 0
        for p in params:
            self.bounds.append((offset, offset + p.size))
            p.vector = self.vector[offset:offset + p.size]
            offset += p.size
        self.params = params

    @property
    def action_sizes(self) -> list[int]:
        return [n for p in self.params for n in p.arch.head_sizes]

    @property
    def n_agents(self) -> int:
        return len(self.action_sizes)

    @property
    def n_params(self) -> int:
        return self.vector.size

    @property
    def archs(self) -> list[NetworkArchitecture]:
        return [p.arch for p in self.params]

    @property
    def history_length(self) -> int:
        return self.params[0].arch.history_length

    def copy(self) -> 'Controller':
        return Controller(self.kind, [p.copy() for p in self.params])

    def new_history(self, rate_scale: float = 20.0) -> HistoryBuffer:
        return HistoryBuffer(self.action_sizes, self.history_length, rate_scale)

    def net_inputs(self, history: HistoryBuffer) -> list[np.ndarray]:
        if self.kind == ControllerKind.CENTRALIZED:
            return [history.encode_global()]
        return [history.encode_agent(m) for m in range(len(self.params))]

    def forward(
            self,
            inputs: list[np.ndarray],
            mode: Mode = Mode.EVAL,
            rngs: Optional[Sequence[np.random.Generator]] = None,
    ) -> tuple[list[np.ndarray], list[ForwardCache]]:
        """
        Per-agent distributions plus one cache per network. Train-mode dropout draws
        from rngs[i] for network i.
        """
        distributions, caches = [], []
        for i, (p, x) in enumerate(zip(self.params, inputs)):
            d, cache = forward(p, x, mode, rngs[i] if rngs is not None else None)
            distributions.extend(d)
            caches.append(cache)
        return distributions, caches

    def distributions(self, history: HistoryBuffer) -> list[np.ndarray]:
        return self.forward(self.net_inputs(history))[0]

    def net_gradient(self, net: int, cache: ForwardCache, actions: Sequence[int], weight: float) -> np.ndarray:
        """
        weight * grad log pi of one network's heads, w.r.t. that network's slice only.
        """
        return backward(self.params[net], cache, self.net_actions(net, actions), weight)

    def net_actions(self, net: int, actions: Sequence[int]) -> list[int]:
        start = sum(len(p.arch.head_sizes) for p in self.params[:net])
        return list(actions[start:start + len(self.params[net].arch.head_sizes)])

    def grad_log_prob(self, caches: list[ForwardCache], actions: Sequence[int], weight: float) -> np.ndarray:
        """
        weight * grad of the joint log-probability of one slot over the whole vector.
        """
        grad = np.zeros(self.n_params)
        for net, (start, stop) in enumerate(self.bounds):
            grad[start:stop] += self.net_gradient(net, caches[net], actions, weight)
        return grad


def build_controller(
        kind: ControllerKind,
        action_sizes: Sequence[int],
        history_length: int,
        rng: np.random.Generator,
        dropout_lstm: float = 0.2,
        dropout_dense: float = 0.4,
        dense_units: Optional[int] = None,
) -> Controller:
    kind = ControllerKind(kind)

    def arch(heads):
        return NetworkArchitecture(
            kind=kind, history_length=history_length, head_sizes=heads,
            dropout_lstm=dropout_lstm, dropout_dense=dropout_dense, dense_units=dense_units,
        )

    if kind == ControllerKind.CENTRALIZED:
        archs = [arch(list(action_sizes))]
    else:
        archs = [arch([n]) for n in action_sizes]
    controller = Controller(kind, [init_params(a, rng) for a in archs])
    _logger.info("Built %s controller: %d networks, %d parameters", kind.value, len(archs), controller.n_params)
    return controller
