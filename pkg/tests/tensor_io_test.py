from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from clafr._enums import DType
from clafr._enums import Method
from clafr.errors import CsvParseError
from clafr.errors import FormatError
from clafr.errors import ShapeError
from clafr.metrics import Fingerprint
from clafr.metrics import ScoredBatch
from clafr.subspace import build_subspace
from clafr.subspace import SubspaceConfig
from clafr.tensor_io import decode_tensor
from clafr.tensor_io import encode_tensor
from clafr.tensor_io import read_csv_matrix
from clafr.tensor_io import read_matrix
from clafr.tensor_io import read_scored_batch
from clafr.tensor_io import read_subspace
from clafr.tensor_io import read_tensor
from clafr.tensor_io import write_scored_batch
from clafr.tensor_io import write_subspace
from clafr.tensor_io import write_tensor


def test_read_golden_matrix(fixtures_dir):
    m = read_tensor(fixtures_dir / 'matrix_2x3_f64.ctf')
    np.testing.assert_array_equal(m, [[1, 2, 3], [4, 5, 6]])
    assert m.dtype == np.float64


def test_read_golden_f32_vector(fixtures_dir):
    v = read_tensor(fixtures_dir / 'vector_1_f32.ctf')
    assert v.shape == (1,)
    assert v[0] == 1.5


def test_golden_matrix_bytes_match_writer(fixtures_dir, tmp_path):
    out = tmp_path / 'm.ctf'
    write_tensor(np.arange(1.0, 7.0).reshape(2, 3), DType.F64, out)
    assert out.read_bytes() == (fixtures_dir / 'matrix_2x3_f64.ctf').read_bytes()


def test_minimal_file_layout():
    data = encode_tensor([[42.0]])
    assert len(data) == 4 + 1 + 1 + 16 + 8
    assert data[:4] == b'CTF1'
    assert data[4] == 1 and data[5] == 2
    assert struct.unpack('<2Q', data[6:22]) == (1, 1)
    assert struct.unpack('<d', data[22:]) == (42.0,)


def test_round_trip_is_bitwise(rng, tmp_path):
    m = rng.standard_normal((7, 5))
    write_tensor(m, DType.F64, tmp_path / 'r.ctf')
    assert read_tensor(tmp_path / 'r.ctf').tobytes() == m.tobytes()


def test_f32_narrows(tmp_path):
    write_tensor([0.1, 2.5], DType.F32, tmp_path / 'v.ctf')
    v = read_tensor(tmp_path / 'v.ctf')
    assert v[0] == float(np.float32(0.1))
    assert v[1] == 2.5


@pytest.mark.parametrize('value', (5.0, np.zeros((2, 2, 2))))
def test_encode_rejects_rank(value):
    with pytest.raises(FormatError):
        encode_tensor(value)


def test_encode_rejects_f32_overflow():
    with pytest.raises(FormatError):
        encode_tensor([1e300], DType.F32)


def _header(dtype=1, rank=2, dims=(2, 3)):
    return b'CTF1' + bytes([dtype, rank]) + struct.pack(f'<{len(dims)}Q', *dims)


@pytest.mark.parametrize(
    ('data', 'offset', 'fragment'),
    (
        (b'NOPE' + bytes(30), 0, 'bad magic'),
        (b'CT', 0, 'bad magic'),
        (b'CTF1\x01', 5, 'truncated header'),
        (_header(dtype=7) + bytes(48), 4, 'dtype'),
        (_header(rank=3, dims=(1, 1, 1)) + bytes(8), 5, 'rank'),
        (_header()[:10], 10, 'truncated dims'),
        (_header() + bytes(47), 69, 'truncated payload'),
        (_header() + bytes(49), 70, 'trailing bytes'),
    ),
)
def test_decode_errors_carry_offset(data, offset, fragment):
    with pytest.raises(FormatError) as excinfo:
        decode_tensor(data)
    assert excinfo.value.offset == offset
    assert fragment in str(excinfo.value)


def test_write_is_atomic_on_failure(tmp_path):
    out = tmp_path / 'x.ctf'
    with pytest.raises(FormatError):
        write_tensor(np.zeros((1, 1, 1)), DType.F64, out)
    assert list(tmp_path.iterdir()) == []


@pytest.mark.parametrize(
    ('text', 'expected'),
    (
        ('1,2\n3,4\n', [[1, 2], [3, 4]]),
        ('1e-3,2.5', [[0.001, 2.5]]),
        (' 1 , 2 \n\n3,4\n', [[1, 2], [3, 4]]),
    ),
)
def test_read_csv_matrix(tmp_path, text, expected):
    path = tmp_path / 'm.csv'
    path.write_text(text)
    np.testing.assert_array_equal(read_csv_matrix(path), expected)


@pytest.mark.parametrize(
    ('text', 'row', 'column', 'fragment'),
    (
        ('1,2\n3\n', 2, None, 'ragged row'),
        ('1,2\n3,4,5\n', 2, None, 'ragged row'),
        ('1,x\n3,4\n', 1, 2, 'non-numeric'),
        ('1,2\n,4\n', 2, 1, 'empty cell'),
        ('', 1, None, 'empty CSV'),
    ),
)
def test_read_csv_matrix_errors(tmp_path, text, row, column, fragment):
    path = tmp_path / 'bad.csv'
    path.write_text(text)
    with pytest.raises(CsvParseError) as excinfo:
        read_csv_matrix(path)
    assert excinfo.value.row == row
    assert excinfo.value.column == column
    assert fragment in str(excinfo.value)


def test_read_matrix_dispatches_on_suffix(fixtures_dir):
    csv = read_matrix(fixtures_dir / 'weights_3x2.csv')
    np.testing.assert_array_equal(csv, [[1, 0], [0, 1], [0, 0]])
    ctf = read_matrix(fixtures_dir / 'matrix_2x3_f64.ctf')
    assert ctf.shape == (2, 3)


def test_read_matrix_rejects_vector(fixtures_dir):
    with pytest.raises(ShapeError):
        read_matrix(fixtures_dir / 'vector_1_f32.ctf')


def test_subspace_round_trip(rng, tmp_path):
    s = build_subspace(rng.standard_normal((6, 4)), SubspaceConfig(alpha=0.8))
    path = tmp_path / 's.ctf'
    write_subspace(s, path)
    meta = json.loads((tmp_path / 's.ctf.json').read_text())
    assert meta['m'] == s.m
    assert meta['kind'] == 'subspace'

    loaded = read_subspace(path)
    np.testing.assert_array_equal(loaded.u_m, s.u_m)
    np.testing.assert_array_equal(loaded.sigma, s.sigma)
    assert loaded.fingerprint(True) == s.fingerprint(True)


def test_read_subspace_needs_sidecar(tmp_path):
    write_tensor(np.eye(3)[:, :2], DType.F64, tmp_path / 's.ctf')
    with pytest.raises(FormatError):
        read_subspace(tmp_path / 's.ctf')


def test_scored_batch_round_trip(tmp_path):
    fp = Fingerprint(method='energy', weight_hash='abc', extra=None)
    batch = ScoredBatch([0.25, -1.0, 3.0], Method.ENERGY, fp, elapsed_ns=1200)
    write_scored_batch(batch, tmp_path / 'b.ctf')
    loaded = read_scored_batch(tmp_path / 'b.ctf')
    np.testing.assert_array_equal(loaded.scores, batch.scores)
    assert loaded.method is Method.ENERGY
    assert loaded.fingerprint == fp
    assert loaded.elapsed_ns == 1200


def test_read_scored_batch_wrong_kind(rng, tmp_path):
    s = build_subspace(rng.standard_normal((4, 2)), SubspaceConfig())
    write_subspace(s, tmp_path / 's.ctf')
    with pytest.raises(FormatError):
        read_scored_batch(tmp_path / 's.ctf')
