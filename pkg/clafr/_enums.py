from __future__ import annotations

from enum import auto
from enum import Enum
from enum import IntEnum


class Method(Enum):

    CLAFR = auto()
    RECONSTRUCTION = auto()
    MSP = auto()
    ENERGY = auto()
    MAXLOGIT = auto()
    KNN = auto()

    @staticmethod
    def from_string(label: str) -> Method:
        label = label.strip().lower()
        if label == 'clafr':
            return Method.CLAFR
        elif label in ('recon', 'reconstruction'):
            return Method.RECONSTRUCTION
        elif label == 'msp':
            return Method.MSP
        elif label == 'energy':
            return Method.ENERGY
        elif label in ('maxlogit', 'max-logit'):
            return Method.MAXLOGIT
        elif label == 'knn':
            return Method.KNN
        else:
            raise NotImplementedError(f'unknown scoring method {label!r}')

    @property
    def label(self) -> str:
        if self is Method.RECONSTRUCTION:
            return 'recon'
        return self.name.lower()

    @property
    def uses_logits(self) -> bool:
        return self in (Method.MSP, Method.ENERGY, Method.MAXLOGIT)


class Decision(Enum):
    ID = auto()
    OOD = auto()


class DType(IntEnum):
    F32 = 0
    F64 = 1

    @property
    def numpy_code(self) -> str:
        return '<f4' if self is DType.F32 else '<f8'

    @property
    def itemsize(self) -> int:
        return 4 if self is DType.F32 else 8

    @staticmethod
    def from_string(label: str) -> DType:
        if label in ('f32', 'float32'):
            return DType.F32
        elif label in ('f64', 'float64'):
            return DType.F64
        else:
            raise NotImplementedError(f'unsupported dtype {label!r}')


class ExitCode(IntEnum):
    OK = 0
    INPUT = 2
    NUMERICAL = 3
    MISUSE = 4
