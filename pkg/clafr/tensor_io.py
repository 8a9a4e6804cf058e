"""TensorFile reader/writer plus the CSV and JSON sidecar formats.

TensorFile layout, all little-endian::

    offset 0   4 bytes   magic b'CTF1'
    offset 4   uint8     dtype code (0 = f32, 1 = f64)
    offset 5   uint8     rank (1 or 2)
    offset 6   rank x uint64 dims
    then       prod(dims) values, row-major

Feature batches are N x D, classifier weights D x C, logits N x C.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import struct
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd

from clafr._enums import DType
from clafr._enums import Method
from clafr.errors import CsvParseError
from clafr.errors import FormatError
from clafr.errors import ShapeError
from clafr.helpers import atomic_write
from clafr.helpers import sidecar_path
from clafr.metrics import Fingerprint
from clafr.metrics import ScoredBatch
from clafr.subspace import Subspace
from clafr.tensor import as_matrix
from clafr.tensor import as_vector
from clafr.tensor import Matrix
from clafr.tensor import Vector

logger = logging.getLogger(__name__)

MAGIC = b'CTF1'
_PREAMBLE = 6  # magic + dtype + rank


def encode_tensor(m: npt.ArrayLike, dtype: DType = DType.F64) -> bytes:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise FormatError(f'only rank 1 and 2 tensors are stored, got rank {arr.ndim}')
    arr = as_matrix(arr) if arr.ndim == 2 else as_vector(arr)
    payload = np.ascontiguousarray(arr, dtype=dtype.numpy_code)
    if not np.all(np.isfinite(payload)):
        raise FormatError(f'values overflow {dtype.name.lower()}')
    header = (
        MAGIC + bytes([int(dtype), arr.ndim])
        + struct.pack(f'<{arr.ndim}Q', *arr.shape)
    )
    return header + payload.tobytes()


def decode_tensor(data: bytes) -> Matrix | Vector:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise FormatError('bad magic, not a TensorFile', offset=0)
    if len(data) < _PREAMBLE:
        raise FormatError('truncated header', offset=len(data))
    try:
        dtype = DType(data[4])
    except ValueError:
        raise FormatError(f'unsupported dtype code {data[4]}', offset=4)
    rank = data[5]
    if rank not in (1, 2):
        raise FormatError(f'unsupported rank {rank}', offset=5)
    header = _PREAMBLE + 8 * rank
    if len(data) < header:
        raise FormatError('truncated dims', offset=len(data))
    dims = struct.unpack_from(f'<{rank}Q', data, _PREAMBLE)
    count = math.prod(dims)
    expected = count * dtype.itemsize
    found = len(data) - header
    if found < expected:
        raise FormatError(
            f'truncated payload, expected {expected} bytes but found {found}',
            offset=len(data),
        )
    if found > expected:
        raise FormatError('trailing bytes after payload', offset=header + expected)
    values = np.frombuffer(
        data, dtype=dtype.numpy_code, count=count, offset=header,
    ).astype(np.float64).reshape(dims)
    return as_matrix(values, 'tensor') if rank == 2 else as_vector(values, 'tensor')


def read_tensor(path: str | os.PathLike[str]) -> Matrix | Vector:
    """Read a TensorFile; values are widened to real-64."""
    retv = decode_tensor(Path(path).read_bytes())
    logger.debug('read %s %s', path, retv.shape)
    return retv


def write_tensor(
    m: npt.ArrayLike, dtype: DType, path: str | os.PathLike[str],
) -> None:
    """Write a TensorFile atomically: nothing appears at `path` on error."""
    data = encode_tensor(m, dtype)
    with atomic_write(path) as tmp:
        tmp.write_bytes(data)
    logger.debug('wrote %s (%d bytes)', path, len(data))


def read_csv_matrix(path: str | os.PathLike[str]) -> Matrix:
    """Read a headerless, comma-delimited numeric CSV.

    Rows and columns in error messages are 1-based.
    """
    try:
        frame = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise CsvParseError('empty CSV', row=1, column=None)
    except pd.errors.ParserError as exc:
        # 'Expected 2 fields in line 3, saw 3'
        match = re.search(r'line\s+(\d+)', str(exc))
        row = int(match.group(1)) if match else 0
        raise CsvParseError('ragged row', row=row, column=None) from exc

    cells = frame.apply(lambda col: col.str.strip())
    missing = cells.isna() | (cells == '')
    numeric = cells.apply(pd.to_numeric, errors='coerce')
    bad = missing | numeric.isna()
    if bad.to_numpy().any():
        i, j = (int(x) for x in np.argwhere(bad.to_numpy())[0])
        if missing.iloc[i, j:].all():
            raise CsvParseError('ragged row', row=i + 1, column=None)
        elif missing.iloc[i, j]:
            raise CsvParseError('empty cell', row=i + 1, column=j + 1)
        raise CsvParseError(
            f'non-numeric cell {cells.iloc[i, j]!r}', row=i + 1, column=j + 1,
        )
    return as_matrix(numeric.to_numpy(dtype=np.float64), 'csv matrix')


def read_matrix(path: str | os.PathLike[str]) -> Matrix:
    """TensorFile or, for a .csv suffix, the CSV dialect; must be 2-D."""
    if Path(path).suffix.lower() == '.csv':
        return read_csv_matrix(path)
    retv = read_tensor(path)
    if retv.ndim != 2:
        raise ShapeError(f'{path} holds a vector, a matrix was expected')
    return retv


def _write_with_sidecar(
    m: npt.ArrayLike, dtype: DType, path: str | os.PathLike[str],
    meta: dict[str, Any],
) -> None:
    data = encode_tensor(m, dtype)
    text = json.dumps(meta, indent=2, sort_keys=True) + '\n'
    with atomic_write(path) as tmp, atomic_write(sidecar_path(path)) as side:
        tmp.write_bytes(data)
        side.write_text(text)


def _read_sidecar(path: str | os.PathLike[str], kind: str) -> dict[str, Any]:
    side = sidecar_path(path)
    try:
        meta: dict[str, Any] = json.loads(side.read_text())
    except FileNotFoundError:
        raise FormatError(f'missing metadata sidecar {side}')
    except json.JSONDecodeError as exc:
        raise FormatError(f'unreadable metadata sidecar {side}', offset=exc.pos)
    if meta.get('kind') != kind:
        raise FormatError(f'{side} does not describe {kind}')
    return meta


def write_subspace(s: Subspace, path: str | os.PathLike[str]) -> None:
    meta = {
        'kind': 'subspace',
        'alpha': s.alpha_used,
        'm': s.m,
        'dim': s.dim,
        'sigma': [float(x) for x in s.sigma],
        'weight_hash': s.weight_fingerprint,
    }
    _write_with_sidecar(s.u_m, DType.F64, path, meta)


def read_subspace(path: str | os.PathLike[str]) -> Subspace:
    meta = _read_sidecar(path, 'subspace')
    u_m = read_tensor(path)
    if u_m.ndim != 2 or u_m.shape[1] != meta['m']:
        raise FormatError(f'{path} does not match its sidecar m={meta["m"]}')
    return Subspace(
        u_m=u_m, alpha_used=meta['alpha'], sigma=meta['sigma'],
        weight_fingerprint=meta['weight_hash'],
    )


def write_scored_batch(
    batch: ScoredBatch, path: str | os.PathLike[str],
    dtype: DType = DType.F64,
) -> None:
    meta = {
        'kind': 'scores',
        'n': len(batch),
        'elapsed_ns': batch.elapsed_ns,
        'fingerprint': batch.fingerprint._asdict(),
    }
    _write_with_sidecar(batch.scores, dtype, path, meta)


def read_scored_batch(path: str | os.PathLike[str]) -> ScoredBatch:
    meta = _read_sidecar(path, 'scores')
    scores = read_tensor(path)
    if scores.ndim != 1:
        raise FormatError(f'{path} must hold a 1-D score tensor')
    fingerprint = Fingerprint(**meta['fingerprint'])
    return ScoredBatch(
        scores, Method.from_string(fingerprint.method), fingerprint,
        elapsed_ns=meta.get('elapsed_ns'),
    )
