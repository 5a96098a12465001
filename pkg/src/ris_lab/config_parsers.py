import typing
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ValidationError
from pydantic.fields import ModelField

from ris_lab.errors import ConfigException
from ris_lab.grid import grid_from_layout
from ris_lab.models import OccupancyGrid

CONFIG_VERSION = 1
MASK_CELLS = {'.': False, '#': True, 'A': False, 'R': False}


class ConfigFile(BaseModel):
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}


def _key_value(line: str, number: int) -> tuple[str, str]:
    if '=' not in line:
        raise ConfigException(f"Expected 'key = value', got {line!r}", number)
    key, value = line.split('=', 1)
    key, value = key.strip().lower(), value.strip()
    if not key:
        raise ConfigException("Missing key", number)
    return key, value


def _content_lines(text: str):
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if line:
            yield number, line


def parse_config_text(text: str, fields: Mapping[str, ModelField]) -> ConfigFile:
    """
    Parse a versioned `key = value` config. Lists are comma separated and `none`
    clears an optional value; type checks happen when the settings are built.
    """
    config = ConfigFile()
    versioned = False
    for number, line in _content_lines(text):
        key, value = _key_value(line, number)
        if not versioned:
            if key != 'version':
                raise ConfigException("The first key must be 'version'", number)
            if value != str(CONFIG_VERSION):
                raise ConfigException(f"Unsupported config version {value}", number)
            versioned = True
            continue
        if key not in fields:
            raise ConfigException(f"Unknown key {key!r}", number)
        if key in config.values:
            raise ConfigException(f"Duplicate key {key!r} (first set on line {config.lines[key]})", number)
        f = fields[key]
        if f.allow_none and value.lower() == 'none':
            parsed = None
        elif typing.get_origin(f.outer_type_) is list:
            parsed = [v.strip() for v in value.split(',') if v.strip()]
        else:
            parsed = value
        config.values[key] = parsed
        config.lines[key] = number
    if not versioned:
        raise ConfigException("Config is empty; expected 'version = 1'")
    return config


def read_config(path: Path, fields: Mapping[str, ModelField]) -> ConfigFile:
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigException(f"Cannot read config {path}: {e}") from e
    return parse_config_text(text, fields)


def _parse_cell(value: str, number: int) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in value.split(','))
    except ValueError as e:
        raise ConfigException(f"Expected a cell 'x,y', got {value!r}", number) from e
    return x, y


def _parse_float(key: str, value: str, number: int) -> float:
    try:
        return float(value)
    except ValueError as e:
        raise ConfigException(f"{key} must be a number, got {value!r}", number) from e


def parse_scenario_text(text: str) -> OccupancyGrid:
    """
    Scenario geometry: a `key = value` header, a `mask:` line, then one row per y.
    Mask cells are `.` free, `#` obstacle, `A` access point, `R` surface (row-major order).
    """
    header: dict[str, Any] = {}
    rows: list[tuple[int, str]] = []
    in_mask = False
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if in_mask:
            if line:
                rows.append((number, line))
            continue
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if line == 'mask:':
            in_mask = True
            continue
        key, value = _key_value(line, number)
        if key in ('cell_size', 'presence_dark_weight'):
            header[key] = _parse_float(key, value, number)
        elif key == 'ap':
            header[key] = _parse_cell(value, number)
        elif key == 'ris':
            header[key] = [_parse_cell(v.strip(), number) for v in value.split(';') if v.strip()]
        else:
            raise ConfigException(f"Unknown scenario key {key!r}", number)
    if not rows:
        raise ConfigException("Scenario has no mask")

    width = len(rows[0][1])
    obstacles = np.zeros((len(rows), width), dtype=bool)
    ap: Optional[tuple[int, int]] = None
    ris: list[tuple[int, int]] = []
    for y, (number, row) in enumerate(rows):
        if len(row) != width:
            raise ConfigException(f"Mask row has {len(row)} cells, expected {width}", number)
        for x, c in enumerate(row):
            if c not in MASK_CELLS:
                raise ConfigException(f"Unknown mask cell {c!r}", number)
            obstacles[y, x] = MASK_CELLS[c]
            if c == 'A':
                if ap is not None:
                    raise ConfigException("Mask marks more than one access point", number)
                ap = (x, y)
            elif c == 'R':
                ris.append((x, y))

    if 'ap' in header:
        if ap is not None and ap != header['ap']:
            raise ConfigException(f"Header places the AP at {header['ap']}, the mask at {ap}")
        ap = header['ap']
    if 'ris' in header:
        if ris and ris != header['ris']:
            raise ConfigException(f"Header places surfaces at {header['ris']}, the mask at {ris}")
        ris = header['ris']
    if ap is None:
        raise ConfigException("Scenario has no access point")
    try:
        return grid_from_layout(
            obstacles, ap, ris, header.get('cell_size', 1.0), header.get('presence_dark_weight', 3.0),
        )
    except (ValidationError, ValueError) as e:
        raise ConfigException(f"Invalid scenario geometry: {e}") from e


def read_scenario(path: Path) -> OccupancyGrid:
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigException(f"Cannot read scenario {path}: {e}") from e
    return parse_scenario_text(text)
