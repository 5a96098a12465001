import logging
import math
from typing import Sequence

import numpy as np

from ris_lab.errors import EnvironmentException
from ris_lab.models import OccupancyGrid

_logger = logging.getLogger(__name__)

Cell = tuple[int, int]

# stay first, then the 8-neighborhood row by row
_MOVES = [(0, 0)] + [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]


def traverse(src: Cell, dst: Cell) -> list[Cell]:
    """
    Cells visited by the segment between two cell centers (integer grid traversal).
    A segment through a corner steps diagonally.
    """
    x, y = src
    x1, y1 = dst
    dx, dy = x1 - x, y1 - y
    step_x, step_y = (dx > 0) - (dx < 0), (dy > 0) - (dy < 0)
    t_delta_x = 1.0 / abs(dx) if dx else math.inf
    t_delta_y = 1.0 / abs(dy) if dy else math.inf
    # centers sit half a cell away from the first boundary
    t_max_x, t_max_y = 0.5 * t_delta_x, 0.5 * t_delta_y
    cells = [(x, y)]
    for _ in range(abs(dx) + abs(dy)):
        if (x, y) == (x1, y1):
            break
        if abs(t_max_x - t_max_y) < 1e-12:
            x += step_x
            y += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            x += step_x
            t_max_x += t_delta_x
        else:
            y += step_y
            t_max_y += t_delta_y
        cells.append((x, y))
    return cells


def segment_blocked(obstacles: np.ndarray, src: Cell, dst: Cell) -> bool:
    """
    True when an obstacle cell lies strictly between the two endpoints.
    """
    return any(obstacles[y, x] for x, y in traverse(src, dst)[1:-1])


def compute_dark_areas(grid: OccupancyGrid) -> np.ndarray:
    dark = np.zeros((grid.height, grid.width), dtype=bool)
    if not grid.obstacles.any():
        return dark
    for y in range(grid.height):
        for x in range(grid.width):
            dark[y, x] = segment_blocked(grid.obstacles, grid.ap, (x, y))
    return dark


def grid_from_layout(
        obstacles: np.ndarray,
        ap: Cell,
        ris: Sequence[Cell],
        cell_size: float = 1.0,
        dark_weight: float = 3.0,
) -> OccupancyGrid:
    """
    Build a grid whose presence probability weighs dark cells `dark_weight` times more
    than lit ones (users linger behind the wall).
    """
    obstacles = np.asarray(obstacles, dtype=bool)
    height, width = obstacles.shape
    grid = OccupancyGrid(
        width=width, height=height, cell_size=cell_size, obstacles=obstacles,
        presence=np.ones_like(obstacles, dtype=float), ap=tuple(ap), ris=[tuple(c) for c in ris],
    )
    presence = np.where(compute_dark_areas(grid), dark_weight, 1.0)
    return grid.copy(update={'presence': _normalized(presence, obstacles)})


def _normalized(presence: np.ndarray, obstacles: np.ndarray) -> np.ndarray:
    presence = np.where(obstacles, 0.0, presence)
    return presence / presence.sum()


def default_grid() -> OccupancyGrid:
    """
    7 x 5 office of 1 m cells, a wall down the middle, AP on the left wall and one
    surface on the top and bottom walls.
    """
    obstacles = np.zeros((5, 7), dtype=bool)
    obstacles[1:4, 3] = True
    return grid_from_layout(obstacles, ap=(0, 2), ris=[(3, 0), (3, 4)])


def robustness_grid() -> OccupancyGrid:
    """
    12 x 12 variant used for the obstacle sweep.
    """
    obstacles = np.zeros((12, 12), dtype=bool)
    obstacles[4:8, 6] = True
    return grid_from_layout(obstacles, ap=(0, 6), ris=[(6, 0), (6, 11)])


def mobility_step(grid: OccupancyGrid, position: Cell, rng: np.random.Generator) -> Cell:
    """
    One random-walk step: stay or move to a neighbor with probability proportional to presence.
    """
    candidates = []
    weights = []
    x, y = position
    for dx, dy in _MOVES:
        cell = (x + dx, y + dy)
        if grid.is_free(cell):
            candidates.append(cell)
            weights.append(grid.presence[cell[1], cell[0]])
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        return position
    return candidates[int(rng.choice(len(candidates), p=weights / total))]


def sample_position(grid: OccupancyGrid, rng: np.random.Generator) -> Cell:
    flat = grid.presence.ravel()
    index = int(rng.choice(flat.size, p=flat))
    y, x = divmod(index, grid.width)
    return x, y


def add_random_obstacles(grid: OccupancyGrid, count: int, rng: np.random.Generator, size: int = 3) -> OccupancyGrid:
    """
    Drop `count` size x size blocks uniformly on positions that keep the AP and surfaces free.
    """
    if count == 0:
        return grid
    protected = [grid.ap, *grid.ris]
    slots = [
        (x, y)
        for y in range(grid.height - size + 1)
        for x in range(grid.width - size + 1)
        if not any(x <= px < x + size and y <= py < y + size for px, py in protected)
    ]
    if not slots:
        raise EnvironmentException(f"No room for a {size}x{size} obstacle on a {grid.width}x{grid.height} grid")
    obstacles = grid.obstacles.copy()
    for _ in range(count):
        x, y = slots[int(rng.integers(len(slots)))]
        obstacles[y:y + size, x:x + size] = True
    _logger.debug("Placed %d obstacle blocks, %d free cells remain", count, int((~obstacles).sum()))
    return OccupancyGrid(
        width=grid.width, height=grid.height, cell_size=grid.cell_size, obstacles=obstacles,
        presence=grid.presence, ap=grid.ap, ris=grid.ris,
    )
