"""Dataset manifest: a flat `key = value` file, `#` starts a comment.

Recognised keys::

    id_features = id.ctf          # required
    weights = weights.ctf         # required, D x C
    ood.<name> = path             # at least one
    logits.id = path              # optional, N x C
    logits.<name> = path          # optional, one per OOD set
    bank = train.ctf              # optional, enables knn
    k = 10                        # optional
    alpha = 0.9                   # optional, in (0, 1]
    normalize = true              # optional

Relative paths are resolved against the manifest's directory. Tensor
dimensions are checked when the tensors are first loaded.
"""
from __future__ import annotations

import configparser
import logging
import os
from pathlib import Path
from typing import NamedTuple

from clafr.baselines import DEFAULT_K
from clafr.errors import ManifestError
from clafr.errors import ShapeError
from clafr.subspace import DEFAULT_ALPHA
from clafr.tensor import Matrix
from clafr.tensor_io import read_matrix

logger = logging.getLogger(__name__)

_SECTION = 'manifest'
_REQUIRED = ('id_features', 'weights')
_SCALARS = ('id_features', 'weights', 'bank', 'k', 'alpha', 'normalize')


class LoadedDataset(NamedTuple):
    id_features: Matrix
    ood_features: dict[str, Matrix]
    weights: Matrix
    id_logits: Matrix | None
    ood_logits: dict[str, Matrix]
    bank: Matrix | None


def check_dimensions(data: LoadedDataset) -> None:
    """Every feature set, the bank and the weights must agree on D; logits
    must agree with the weights on C and with their features on N."""
    d, c = data.weights.shape
    sets = [('id_features', data.id_features)]
    sets += [(f'ood.{n}', m) for n, m in data.ood_features.items()]
    if data.bank is not None:
        sets.append(('bank', data.bank))
    for name, m in sets:
        if m.shape[1] != d:
            raise ShapeError(
                f'{name} feature dimension does not match weights',
                expected=(m.shape[0], d), actual=m.shape,
            )

    logits = []
    if data.id_logits is not None:
        logits.append(('logits.id', data.id_logits, data.id_features))
    logits += [
        (f'logits.{n}', m, data.ood_features[n])
        for n, m in data.ood_logits.items()
    ]
    for name, m, features in logits:
        expected = (features.shape[0], c)
        if m.shape != expected:
            raise ShapeError(
                f'{name} does not match its features and the weights',
                expected=expected, actual=m.shape,
            )


class DatasetManifest:
    id_features: Path
    ood_features: list[tuple[str, Path]]
    weights: Path
    id_logits: Path | None
    ood_logits: dict[str, Path]
    bank: Path | None
    k: int
    alpha: float
    normalize: bool
    source: Path | None

    def __init__(
        self,
        id_features: Path,
        ood_features: list[tuple[str, Path]],
        weights: Path,
        id_logits: Path | None = None,
        ood_logits: dict[str, Path] | None = None,
        bank: Path | None = None,
        k: int = DEFAULT_K,
        alpha: float = DEFAULT_ALPHA,
        normalize: bool = True,
        source: Path | None = None,
    ) -> None:
        self.id_features = id_features
        self.ood_features = ood_features
        self.weights = weights
        self.id_logits = id_logits
        self.ood_logits = ood_logits or {}
        self.bank = bank
        self.k = k
        self.alpha = alpha
        self.normalize = normalize
        self.source = source
        self.validate()

    def validate(self) -> None:
        if not self.ood_features:
            raise ManifestError('manifest lists no ood.<name> feature sets')
        if not 0.0 < self.alpha <= 1.0:
            raise ManifestError(f'alpha must lie in (0, 1], got {self.alpha}')
        if self.k < 1:
            raise ManifestError(f'k must be at least 1, got {self.k}')
        names = [name for name, _ in self.ood_features]
        for name in self.ood_logits:
            if name not in names:
                raise ManifestError(f'logits.{name} has no matching ood.{name}')
        if self.ood_logits and self.id_logits is None:
            raise ManifestError('OOD logits given without logits.id')

    def load(self) -> LoadedDataset:
        """Read every referenced tensor and check their dimensions."""
        retv = LoadedDataset(
            id_features=read_matrix(self.id_features),
            ood_features={
                name: read_matrix(path) for name, path in self.ood_features
            },
            weights=read_matrix(self.weights),
            id_logits=(
                read_matrix(self.id_logits) if self.id_logits else None
            ),
            ood_logits={
                name: read_matrix(path)
                for name, path in self.ood_logits.items()
            },
            bank=read_matrix(self.bank) if self.bank else None,
        )
        check_dimensions(retv)
        logger.info(
            'loaded manifest %s: %d ID rows, %d OOD sets, weights %s',
            self.source, retv.id_features.shape[0], len(retv.ood_features),
            retv.weights.shape,
        )
        return retv

    def __str__(self) -> str:
        retv = f"\n{'DATASET MANIFEST':~^{72}}\n"
        retv += f'ID:  {self.id_features}\n'
        for name, path in self.ood_features:
            retv += f'OOD {name}:  {path}\n'
        retv += f'Weights:  {self.weights}\n'
        if self.bank:
            retv += f'Bank:  {self.bank} (k={self.k})\n'
        retv += f'Alpha:  {self.alpha:g}  Normalize:  {self.normalize}\n'
        return retv


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    elif lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ManifestError(f'{key} must be a boolean, got {value!r}')


def parse_manifest(text: str, base_dir: Path = Path('.')) -> DatasetManifest:
    parser = configparser.ConfigParser(
        delimiters=('=',), comment_prefixes=('#',),
        inline_comment_prefixes=('#',), interpolation=None,
        empty_lines_in_values=False,
    )
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    # one entry per line; indentation never continues the previous value
    body = '\n'.join(line.strip() for line in text.splitlines())
    try:
        parser.read_string(f'[{_SECTION}]\n{body}')
    except configparser.Error as exc:
        raise ManifestError(f'malformed manifest: {exc.message}') from exc

    entries = dict(parser.items(_SECTION))
    for key in _REQUIRED:
        if not entries.get(key):
            raise ManifestError(f'missing required key {key!r}')

    def resolve(value: str) -> Path:
        p = Path(value.strip())
        return p if p.is_absolute() else base_dir / p

    ood: list[tuple[str, Path]] = []
    ood_logits: dict[str, Path] = {}
    id_logits = None
    for key, value in entries.items():
        if key.startswith('ood.'):
            ood.append((key[len('ood.'):], resolve(value)))
        elif key == 'logits.id':
            id_logits = resolve(value)
        elif key.startswith('logits.'):
            ood_logits[key[len('logits.'):]] = resolve(value)
        elif key not in _SCALARS:
            raise ManifestError(f'unknown manifest key {key!r}')

    try:
        alpha = float(entries.get('alpha', DEFAULT_ALPHA))
        k = int(entries.get('k', DEFAULT_K))
    except ValueError as exc:
        raise ManifestError(f'malformed number in manifest: {exc}') from exc

    return DatasetManifest(
        id_features=resolve(entries['id_features']),
        ood_features=ood,
        weights=resolve(entries['weights']),
        id_logits=id_logits,
        ood_logits=ood_logits,
        bank=resolve(entries['bank']) if entries.get('bank') else None,
        k=k,
        alpha=alpha,
        normalize=_parse_bool('normalize', entries.get('normalize', 'true')),
        source=None,
    )


def load_manifest(path: str | os.PathLike[str]) -> DatasetManifest:
    p = Path(path)
    retv = parse_manifest(p.read_text(), base_dir=p.parent)
    retv.source = p
    return retv


def render_manifest(manifest: DatasetManifest) -> str:
    """Inverse of parse_manifest, paths written relative to their manifest."""
    base = manifest.source.parent if manifest.source else None

    def show(p: Path) -> str:
        if base is not None:
            try:
                return str(p.relative_to(base))
            except ValueError:
                pass
        return str(p)

    lines = [
        f'id_features = {show(manifest.id_features)}',
        f'weights = {show(manifest.weights)}',
    ]
    lines += [f'ood.{name} = {show(p)}' for name, p in manifest.ood_features]
    if manifest.id_logits is not None:
        lines.append(f'logits.id = {show(manifest.id_logits)}')
    lines += [f'logits.{n} = {show(p)}' for n, p in manifest.ood_logits.items()]
    if manifest.bank is not None:
        lines.append(f'bank = {show(manifest.bank)}')
    lines += [
        f'k = {manifest.k}',
        f'alpha = {manifest.alpha!r}',
        f'normalize = {str(manifest.normalize).lower()}',
    ]
    return '\n'.join(lines) + '\n'
