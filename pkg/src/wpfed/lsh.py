"""Sign-random-projection (SimHash) codes over flattened model parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .model import ModelParams

DEFAULT_BITS = 64


@dataclass(frozen=True)
class LshCode:
    """``nbits``-bit code stored as an integer; bit 0 is the most significant."""

    value: int
    nbits: int

    def __post_init__(self):
        if self.nbits < 1:
            raise InvalidInputError("an LSH code needs at least one bit")
        if not 0 <= self.value < (1 << self.nbits):
            raise InvalidInputError(f"value does not fit in {self.nbits} bits")

    @classmethod
    def from_bits(cls, bits) -> "LshCode":
        bits = [int(bool(b)) for b in bits]
        value = 0
        for b in bits:
            value = (value << 1) | b
        return cls(value, len(bits))

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.value >> (self.nbits - 1 - k)) & 1 for k in range(self.nbits))

    def hex(self) -> str:
        return format(self.value, f"0{(self.nbits + 3) // 4}x")

    @classmethod
    def from_hex(cls, text: str, nbits: int) -> "LshCode":
        return cls(int(text, 16), nbits)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.nbits + 7) // 8, "big")


@dataclass(frozen=True)
class LshBasis:
    hyperplanes: np.ndarray  # (b, param_dim), unit rows
    seed: int

    @property
    def nbits(self) -> int:
        return self.hyperplanes.shape[0]

    @property
    def dim(self) -> int:
        return self.hyperplanes.shape[1]


def make_basis(param_dim: int, b: int = DEFAULT_BITS, network_seed: int = 0) -> LshBasis:
    """Gaussian hyperplane normals drawn from the public network seed."""
    if b < 1 or param_dim < 1:
        raise InvalidInputError("b and param_dim must be >= 1")
    rng = np.random.default_rng([network_seed, 0x15A])
    planes = rng.standard_normal((b, param_dim))
    planes /= np.linalg.norm(planes, axis=1, keepdims=True)
    return LshBasis(planes, network_seed)


def encode_vector(vec: np.ndarray, basis: LshBasis) -> LshCode:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (basis.dim,):
        raise InvalidInputError(f"vector has shape {vec.shape}, basis expects ({basis.dim},)")
    return LshCode.from_bits(basis.hyperplanes @ vec >= 0.0)


def encode(params: ModelParams, basis: LshBasis) -> LshCode:
    return encode_vector(params.flatten(), basis)


def hamming(a: LshCode, b: LshCode) -> int:
    if a.nbits != b.nbits:
        raise InvalidInputError(f"code lengths differ: {a.nbits} vs {b.nbits}")
    return (a.value ^ b.value).bit_count()
