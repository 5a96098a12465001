import json
import struct
from typing import Optional

import numpy as np
from pydantic import ValidationError

from ris_lab.errors import PolicyException
from ris_lab.models import NetworkArchitecture
from ris_lab.policy import PolicyParams

MAGIC = b'RISP'
VERSION = 2

# magic, version, header length | seed, parameter count
_PREFIX = struct.Struct('<4sHI')
_COUNTS = struct.Struct('<qQ')


def encode_checkpoint(params: PolicyParams, seed: int, manifest: Optional[str] = None) -> bytes:
    """
    Binary checkpoint: prefix, JSON header (architecture and the run's provenance line),
    seed and N, then N little-endian float64.
    """
    descriptor = {'architecture': {**params.arch.dict(), 'kind': params.arch.kind.value}, 'manifest': manifest}
    header = json.dumps(descriptor, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return b''.join([
        _PREFIX.pack(MAGIC, VERSION, len(header)),
        header,
        _COUNTS.pack(int(seed), params.size),
        np.ascontiguousarray(params.vector, dtype='<f8').tobytes(),
    ])


def _read_header(data: bytes) -> tuple[dict, int]:
    if len(data) < _PREFIX.size:
        raise PolicyException("Checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise PolicyException(f"Not a policy checkpoint (magic {magic!r})")
    if version != VERSION:
        raise PolicyException(f"Unsupported checkpoint version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + header_len])
    except ValueError as e:
        raise PolicyException(f"Invalid checkpoint header: {e}") from e
    if not isinstance(header, dict) or 'architecture' not in header:
        raise PolicyException("Checkpoint header has no architecture")
    return header, _PREFIX.size + header_len


def checkpoint_manifest(data: bytes) -> Optional[str]:
    """
    Provenance line the checkpoint was written with, if any.
    """
    header, _ = _read_header(data)
    return header.get('manifest')


def decode_checkpoint(data: bytes) -> tuple[PolicyParams, int]:
    header, offset = _read_header(data)
    try:
        arch = NetworkArchitecture.parse_obj(header['architecture'])
    except ValidationError as e:
        raise PolicyException(f"Invalid architecture header: {e}") from e
    if len(data) < offset + _COUNTS.size:
        raise PolicyException("Checkpoint is truncated")
    seed, count = _COUNTS.unpack_from(data, offset)
    offset += _COUNTS.size
    if len(data) != offset + 8 * count:
        raise PolicyException(f"Checkpoint holds {len(data) - offset} parameter bytes, header says {8 * count}")
    vector = np.frombuffer(data, dtype='<f8', count=count, offset=offset).astype(np.float64)
    params = PolicyParams(arch, vector)
    if not np.all(np.isfinite(vector)):
        raise PolicyException("Checkpoint contains non-finite parameters")
    return params, seed
