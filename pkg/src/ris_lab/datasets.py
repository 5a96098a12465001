import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ris_lab.errors import DatasetException
from ris_lab.grid import mobility_step, sample_position
from ris_lab.models import OccupancyGrid

_logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ['traj_id', 't', 'x', 'y']


class TrajectoryTable(BaseModel):
    """
    Trajectories mapped onto grid cells. `frame` holds the CSV columns plus cell_x / cell_y.
    """
    frame: pd.DataFrame
    clamped: int = 0

    class Config:
        arbitrary_types_allowed = True

    def trajectory_ids(self) -> list[int]:
        return sorted(self.frame['traj_id'].unique().tolist())

    def cells(self, traj_id: int) -> list[tuple[int, int]]:
        rows = self.frame[self.frame['traj_id'] == traj_id]
        return list(zip(rows['cell_x'].tolist(), rows['cell_y'].tolist()))


def generate_trajectories(
        grid: OccupancyGrid, n_trajectories: int, length: int, rng: np.random.Generator,
) -> pd.DataFrame:
    """
    Random-walk trajectories starting from the presence distribution, as cell-center meters.
    """
    if n_trajectories < 1 or length < 1:
        raise DatasetException(f"Need at least one trajectory of one slot, got {n_trajectories}x{length}")
    rows = []
    for traj_id in range(n_trajectories):
        cell = sample_position(grid, rng)
        for t in range(length):
            if t:
                cell = mobility_step(grid, cell, rng)
            x, y = grid.center(cell)
            rows.append((traj_id, t, float(x), float(y)))
    frame = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    return frame.astype({'traj_id': 'int64', 't': 'int64', 'x': 'float64', 'y': 'float64'})


def _rows(mask: pd.Series) -> str:
    # 1-based data rows, header excluded
    return ', '.join(str(i + 1) for i in mask[mask].index[:10])


def parse_trajectories(raw: pd.DataFrame, grid: OccupancyGrid) -> TrajectoryTable:
    if list(raw.columns) != TRAJECTORY_COLUMNS:
        raise DatasetException(f"Expected header {','.join(TRAJECTORY_COLUMNS)}, got {','.join(raw.columns)}")
    if raw.empty:
        raise DatasetException("Trajectory file has no data rows")
    raw = raw.reset_index(drop=True)
    numeric = raw.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().any(axis=1)
    if bad.any():
        raise DatasetException(f"Non-numeric value in row {_rows(bad)}")
    ids, slots = numeric['traj_id'], numeric['t']
    not_integer = (ids % 1 != 0) | (slots % 1 != 0) | (ids < 0) | (slots < 0)
    if not_integer.any():
        raise DatasetException(f"traj_id and t must be nonnegative integers, row {_rows(not_integer)}")

    frame = numeric.astype({'traj_id': 'int64', 't': 'int64', 'x': 'float64', 'y': 'float64'})
    same = frame['traj_id'] == frame['traj_id'].shift()
    expected_t = np.where(same, frame['t'].shift(fill_value=-1) + 1, 0)
    out_of_order = (frame['traj_id'] < frame['traj_id'].shift(fill_value=0)) | (frame['t'] != expected_t)
    if out_of_order.any():
        raise DatasetException(f"Rows must be sorted by (traj_id, t) with contiguous t, row {_rows(out_of_order)}")

    raw_x = np.floor(frame['x'].to_numpy() / grid.cell_size).astype(int)
    raw_y = np.floor(frame['y'].to_numpy() / grid.cell_size).astype(int)
    cell_x = np.clip(raw_x, 0, grid.width - 1)
    cell_y = np.clip(raw_y, 0, grid.height - 1)
    clamped = int(((cell_x != raw_x) | (cell_y != raw_y)).sum())
    if clamped:
        _logger.warning("Clamped %d trajectory points onto the %dx%d grid", clamped, grid.width, grid.height)
    frame['cell_x'] = cell_x
    frame['cell_y'] = cell_y
    blocked = grid.obstacles[cell_y, cell_x]
    if blocked.any():
        raise DatasetException(f"Trajectory enters an obstacle cell, row {_rows(pd.Series(blocked))}")
    return TrajectoryTable(frame=frame, clamped=clamped)


def ingest_dataset(path: Path, grid: OccupancyGrid) -> TrajectoryTable:
    """
    Read a trajectory CSV (`#` lines are comments) and map it onto the grid.
    """
    try:
        raw = pd.read_csv(path, dtype=str, comment='#', keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DatasetException(f"Trajectory file {path} is empty") from e
    except (OSError, pd.errors.ParserError) as e:
        raise DatasetException(f"Unable to read trajectories from {path}: {e}") from e
    return parse_trajectories(raw, grid)
