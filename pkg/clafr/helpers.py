from __future__ import annotations

import hashlib
import os
import statistics
import tempfile
from collections.abc import Iterator
from collections.abc import Sequence
from contextlib import contextmanager
from pathlib import Path
from typing import TypeVar

import numpy as np
import numpy.typing as npt

T = TypeVar('T')


def require_non_none(x: T | None) -> T:
    if x is None:
        raise AssertionError('Expected non None value.')
    else:
        return x


def get_hash(array: npt.ArrayLike) -> str:
    """Return a SHA-256 content hash of an array.

    Shape is hashed along with the little-endian f64 payload, so a 2x3 and
    a 3x2 matrix holding the same values do not collide.
    """
    arr = np.ascontiguousarray(array, dtype='<f8')
    h = hashlib.sha256()
    h.update(repr(arr.shape).encode('utf-8'))
    h.update(arr.tobytes())
    return h.hexdigest()


@contextmanager
def atomic_write(path: str | os.PathLike[str]) -> Iterator[Path]:
    """Yield a temporary sibling of `path`; rename it over `path` on success.

    On any exception the temporary file is removed and `path` is untouched.
    """
    target = Path(path)
    fd, tmp = tempfile.mkstemp(
        prefix=f'.{target.name}.', suffix='.tmp', dir=target.parent,
    )
    os.close(fd)
    tmp_path = Path(tmp)
    try:
        yield tmp_path
        os.replace(tmp_path, target)
    except BaseException:
        tmp_path.unlink(missing_ok=True)
        raise


def median_ns(samples: Sequence[int]) -> float:
    """Median of wall-clock samples in nanoseconds."""
    if not samples:
        raise ValueError('no timing samples')
    return float(statistics.median(samples))


def format_percent(value: float) -> str:
    """Render a [0, 1] metric as a percentage with two decimals."""
    return f'{100.0 * value:.2f}'


def parse_number_list(string: str, kind: type[T]) -> list[T]:
    """'0.8, 0.85,0.9' -> [0.8, 0.85, 0.9]"""
    parts = [p.strip() for p in string.split(',')]
    return [kind(p) for p in parts if p]  # type: ignore[call-arg]


def sidecar_path(path: str | os.PathLike[str]) -> Path:
    """Metadata file stored next to a tensor file."""
    p = Path(path)
    return p.with_name(p.name + '.json')
