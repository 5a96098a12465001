from collections import deque
from typing import Sequence

import numpy as np

from ris_lab.errors import EnvironmentException


class HistoryBuffer:
    """
    Sliding window of the last `capacity` (joint action, rate) pairs every agent observed.

    Agent m sees its own actions and the shared rate; the global history is the union.
    Rates are kept raw in `window()` and normalized to [0, 1] by rate_scale for encoding.
    """

    def __init__(self, action_sizes: Sequence[int], capacity: int, rate_scale: float = 20.0):
        if capacity < 1 or not action_sizes or min(action_sizes) < 1:
            raise EnvironmentException(f"Invalid history shape {list(action_sizes)} x {capacity}")
        self.action_sizes = [int(n) for n in action_sizes]
        self.capacity = int(capacity)
        self.rate_scale = float(rate_scale)
        self._entries: deque[tuple[tuple[int, ...], float]] = deque(maxlen=self.capacity)
        self.steps = 0

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, actions: Sequence[int], rate: float):
        actions = tuple(int(a) for a in actions)
        if len(actions) != len(self.action_sizes):
            raise EnvironmentException(f"Expected {len(self.action_sizes)} actions, got {len(actions)}")
        for a, n in zip(actions, self.action_sizes):
            if not 0 <= a < n:
                raise EnvironmentException(f"Action {a} outside head of size {n}")
        self._entries.append((actions, float(rate)))
        self.steps += 1

    def copy(self) -> 'HistoryBuffer':
        other = HistoryBuffer(self.action_sizes, self.capacity, self.rate_scale)
        other._entries.extend(self._entries)
        other.steps = self.steps
        return other

    def window(self) -> tuple[tuple[tuple[int, ...], float], ...]:
        """
        Held entries oldest first; a hashable key for the observed history.
        """
        return tuple(self._entries)

    def agent_window(self, agent: int) -> tuple[tuple[int, float], ...]:
        return tuple((actions[agent], rate) for actions, rate in self._entries)

    def _normalized(self, rate: float) -> float:
        return min(max(rate / self.rate_scale, 0.0), 1.0)

    def _encode(self, agents: Sequence[int]) -> np.ndarray:
        offsets = np.cumsum([0] + [self.action_sizes[m] for m in agents])
        encoded = np.zeros((self.capacity, offsets[-1] + 1))
        start = self.capacity - len(self._entries)
        for row, (actions, rate) in enumerate(self._entries, start=start):
            for block, m in enumerate(agents):
                encoded[row, offsets[block] + actions[m]] = 1.0
            encoded[row, -1] = self._normalized(rate)
        return encoded

    def encode_agent(self, agent: int) -> np.ndarray:
        """
        H x (n_m + 1) input of one distributed controller, zero rows pad the front.
        """
        return self._encode([agent])

    def encode_global(self) -> np.ndarray:
        """
        H x (sum n_m + 1) input of the centralized controller.
        """
        return self._encode(range(len(self.action_sizes)))
