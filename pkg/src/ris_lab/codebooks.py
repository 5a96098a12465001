import math
from typing import Sequence

import numpy as np

from ris_lab.errors import ChannelException
from ris_lab.models import ArrayGeometry, BeamCodebook, PhaseCodebook


def build_beam_codebook(size: int, start: float = -math.pi, stop: float = math.pi) -> BeamCodebook:
    """
    AP beam set of `size` evenly spaced angles between start and stop inclusive.
    """
    return BeamCodebook(angles=np.linspace(start, stop, size).tolist())


def default_directions(count: int) -> list[float]:
    # the half-plane the surface faces
    return np.linspace(0.0, math.pi, count).tolist()


def wrap_phase(x):
    """
    Wrap radians into (-pi, pi].
    """
    return x - 2 * math.pi * np.ceil((x - math.pi) / (2 * math.pi))


def quantize_phase(x, step: float, phase_range: tuple[float, float]):
    lo, hi = phase_range
    top = math.floor((hi - lo) / step + 1e-9)
    clamped = np.clip(wrap_phase(np.asarray(x, dtype=float)), lo, hi)
    k = np.minimum(np.floor((clamped - lo) / step + 0.5), top)
    return lo + k * step


def reflection_phases(geometry: ArrayGeometry, direction: float) -> np.ndarray:
    """
    Linear progression along the horizontal axis steering the specular reflection toward
    `direction`; rows repeat it so the entry orders like steering_vector_upa.
    """
    h = np.arange(geometry.ris_h)
    c = math.cos(direction)
    if abs(c) < 1e-12:
        c = 0.0  # broadside
    row = -((geometry.ris_h - 1) / 2 - h) * math.pi * c
    return np.tile(row, geometry.ris_v)


def build_phase_codebook(
        geometry: ArrayGeometry,
        quantization_step: float,
        phase_range: tuple[float, float],
        directions: Sequence[float],
) -> PhaseCodebook:
    if not directions:
        raise ChannelException("Phase codebook needs at least one reflection direction")
    if quantization_step <= 0 or phase_range[0] >= phase_range[1]:
        raise ChannelException(f"Invalid quantization {quantization_step} over {phase_range}")
    entries = [
        quantize_phase(reflection_phases(geometry, d), quantization_step, phase_range).tolist()
        for d in directions
    ]
    return PhaseCodebook(
        entries=entries,
        quantization_step=quantization_step,
        phase_range=tuple(phase_range),
        directions=list(directions),
    )
