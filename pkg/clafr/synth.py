"""Seeded synthetic features and a closed-form linear classifier.

ID samples come from `c` isotropic Gaussian clusters whose means are
`class_sep` times orthonormal directions; OOD samples come from one more
cluster displaced by `ood_shift` along a direction orthogonal to every
class mean (when d > c).

Random numbers come from `Xoshiro256` below rather than numpy's
generators, so a seed gives the same bits on every platform and numpy
version:

    * seeding: splitmix64, started at the seed, emits 4 words per lane,
      lane-major;
    * stream: xoshiro256** (Blackman and Vigna), `LANES` independent states
      advanced in lockstep; outputs are read step-major;
    * uniforms: the top 53 bits of each word times 2**-53, in [0, 1);
    * normals: Box-Muller on consecutive uniform pairs, cosine branch
      first.
"""
from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from clafr.errors import ConfigError
from clafr.tensor import as_matrix
from clafr.tensor import as_vector
from clafr.tensor import Matrix
from clafr.tensor import Vector

logger = logging.getLogger(__name__)

LANES = 1024
_MASK53 = 2.0 ** -53
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _u64(x: int) -> np.uint64:
    return np.uint64(x)


def _rotl(x: npt.NDArray[np.uint64], k: int) -> npt.NDArray[np.uint64]:
    return (x << _u64(k)) | (x >> _u64(64 - k))


def splitmix64(seed: int, count: int) -> npt.NDArray[np.uint64]:
    """The first `count` outputs of splitmix64 started at `seed`."""
    steps = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + steps * _GOLDEN
    z = (z ^ (z >> _u64(30))) * _MIX1
    z = (z ^ (z >> _u64(27))) * _MIX2
    return z ^ (z >> _u64(31))


class Xoshiro256:
    """xoshiro256** over `lanes` independent states."""
    seed: int
    lanes: int
    state: npt.NDArray[np.uint64]

    def __init__(self, seed: int, lanes: int = LANES) -> None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f'seed must fit in 64 unsigned bits, got {seed}')
        if lanes < 1:
            raise ConfigError('need at least one lane')
        self.seed = seed
        self.lanes = lanes
        self.state = splitmix64(seed, 4 * lanes).reshape(lanes, 4).T.copy()

    def _step(self) -> npt.NDArray[np.uint64]:
        s0, s1, s2, s3 = self.state
        retv = _rotl(s1 * _u64(5), 7) * _u64(9)
        t = s1 << _u64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self.state[3] = _rotl(s3, 45)
        return retv

    def next_u64(self, n: int) -> npt.NDArray[np.uint64]:
        steps = -(-n // self.lanes)
        if steps == 0:
            return np.empty(0, dtype=np.uint64)
        out = np.empty((steps, self.lanes), dtype=np.uint64)
        for i in range(steps):
            out[i] = self._step()
        return out.reshape(-1)[:n]

    def uniform(self, n: int) -> Vector:
        """n doubles in [0, 1)."""
        return (self.next_u64(n) >> _u64(11)).astype(np.float64) * _MASK53

    def normal(self, shape: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        dims = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(dims)
        pairs = -(-n // 2)
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        return z.reshape(-1)[:n].reshape(dims)


class SynthConfig:
    seed: int
    d: int
    c: int
    n_train: int
    n_id_test: int
    n_ood_test: int
    class_sep: float
    ood_shift: float
    noise_sigma: float

    def __init__(
        self,
        seed: int = 0,
        d: int = 64,
        c: int = 10,
        n_train: int = 2000,
        n_id_test: int = 500,
        n_ood_test: int = 500,
        class_sep: float = 6.0,
        ood_shift: float = 6.0,
        noise_sigma: float = 1.0,
    ) -> None:
        self.seed = seed
        self.d = d
        self.c = c
        self.n_train = n_train
        self.n_id_test = n_id_test
        self.n_ood_test = n_ood_test
        self.class_sep = class_sep
        self.ood_shift = ood_shift
        self.noise_sigma = noise_sigma
        self.validate()

    def validate(self) -> None:
        if not self.d >= self.c >= 2:
            raise ConfigError(
                f'need d >= c >= 2, got d={self.d}, c={self.c}',
            )
        if min(self.n_train, self.n_id_test) < 1 or self.n_ood_test < 0:
            raise ConfigError('sample counts must be positive')
        if self.class_sep <= 0 or self.noise_sigma <= 0:
            raise ConfigError('class_sep and noise_sigma must be positive')
        if self.ood_shift < 0:
            raise ConfigError('ood_shift must be non-negative')

    def replace(self, **changes: float) -> SynthConfig:
        fields = dict(vars(self))
        fields.update(changes)
        return SynthConfig(**fields)  # type: ignore[arg-type]

    def __repr__(self) -> str:
        inner = ', '.join(f'{k}={v!r}' for k, v in vars(self).items())
        return f'SynthConfig({inner})'


class SyntheticData(NamedTuple):
    train_features: Matrix
    train_labels: Vector
    id_test: Matrix
    ood_test: Matrix


def class_directions(rng: Xoshiro256, d: int, c: int) -> Matrix:
    """d x min(c + 1, d) orthonormal columns, signs fixed by R's diagonal."""
    cols = min(c + 1, d)
    q, r = np.linalg.qr(rng.normal((d, cols)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def ood_direction(directions: Matrix, c: int) -> Vector:
    if directions.shape[1] > c:
        return directions[:, c]
    centroid = -directions[:, :c].sum(axis=1)
    return centroid / np.linalg.norm(centroid)


def generate(cfg: SynthConfig) -> SyntheticData:
    """Draw train/ID/OOD sets. Labels are assigned round-robin."""
    rng = Xoshiro256(cfg.seed)
    q = class_directions(rng, cfg.d, cfg.c)
    means = cfg.class_sep * q[:, :cfg.c].T
    ood_mean = cfg.ood_shift * ood_direction(q, cfg.c)

    train_labels = np.arange(cfg.n_train) % cfg.c
    train = means[train_labels] + cfg.noise_sigma * rng.normal((cfg.n_train, cfg.d))
    id_labels = np.arange(cfg.n_id_test) % cfg.c
    id_test = means[id_labels] + cfg.noise_sigma * rng.normal((cfg.n_id_test, cfg.d))
    ood_test = ood_mean + cfg.noise_sigma * rng.normal((cfg.n_ood_test, cfg.d))

    logger.info(
        'synthetic data: seed=%d d=%d c=%d train=%d id=%d ood=%d',
        cfg.seed, cfg.d, cfg.c, cfg.n_train, cfg.n_id_test, cfg.n_ood_test,
    )
    return SyntheticData(
        train_features=as_matrix(train, 'train features'),
        train_labels=as_vector(train_labels, 'train labels'),
        id_test=as_matrix(id_test, 'id test'),
        ood_test=as_matrix(ood_test, 'ood test'),
    )


def fit_linear_classifier(
    features: npt.ArrayLike, labels: npt.ArrayLike,
    num_classes: int | None = None,
) -> Matrix:
    """Nearest-class-mean classifier: column c is the unit-normalized mean
    of the class-c rows."""
    z = as_matrix(features, 'train features')
    raw = as_vector(labels, 'train labels')
    if raw.size != z.shape[0]:
        raise ConfigError(
            f'{raw.size} labels for {z.shape[0]} feature rows',
        )
    if raw.size == 0:
        raise ConfigError('no training samples')
    if np.any(raw != np.round(raw)) or np.any(raw < 0):
        raise ConfigError('labels must be non-negative integers')
    y = raw.astype(np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    if int(y.max()) >= c:
        raise ConfigError(f'label {int(y.max())} outside [0, {c})')

    w = np.empty((z.shape[1], c), dtype=np.float64)
    for cls in range(c):
        rows = z[y == cls]
        if rows.shape[0] == 0:
            raise ConfigError(f'class {cls} has no training samples')
        mean = rows.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ConfigError(f'class {cls} has a zero mean feature')
        w[:, cls] = mean / norm
    return as_matrix(w, 'weights')
