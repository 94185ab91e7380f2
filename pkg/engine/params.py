#!/usr/bin/env python3
"""
Named model parameters (θ and adapted θ̃) and their checkpoint file format.

A .pvec file is: magic b"PVEC", uint16 version, uint32 record count, then per record
uint16 name length, UTF-8 name, uint8 ndim, ndim x uint32 dims and the row-major
float64 values. Every integer and float is little-endian.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Tuple, Union

import numpy as np

logger = logging.getLogger("params")

MAGIC = b"PVEC"
VERSION = 1


class CheckpointError(ValueError):
    """Raised when a ParamVector file is malformed"""


class ParamVector(Mapping[str, np.ndarray]):
    """Immutable ordered mapping of parameter name to float64 array"""

    def __init__(self, entries: Union[Mapping[str, np.ndarray], Iterable[Tuple[str, np.ndarray]]]):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: Dict[str, np.ndarray] = {}
        for name, value in items:
            array = np.array(value, dtype=np.float64, copy=True)
            array.flags.writeable = False
            self._entries[str(name)] = array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self):
        shapes = ", ".join(f"{name}{list(value.shape)}" for name, value in self._entries.items())
        return f"ParamVector({shapes})"

    def __eq__(self, other) -> bool:
        """Bit-identical names, shapes and values"""
        if not isinstance(other, ParamVector) or self.names != other.names:
            return False
        return all(self[n].shape == other[n].shape and
                   self[n].tobytes() == other[n].tobytes() for n in self.names)

    __hash__ = None

    @property
    def names(self) -> List[str]:
        return list(self._entries)

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self._entries.items()}

    @property
    def size(self) -> int:
        return int(sum(value.size for value in self._entries.values()))

    def _check_compatible(self, other: "ParamVector"):
        if self.shapes != other.shapes or self.names != other.names:
            raise ValueError(f"Incompatible parameter vectors: {self.shapes} vs {other.shapes}")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check_compatible(other)
        return ParamVector((n, self[n] + other[n]) for n in self.names)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check_compatible(other)
        return ParamVector((n, self[n] - other[n]) for n in self.names)

    def __mul__(self, factor: float) -> "ParamVector":
        return ParamVector((n, self[n] * float(factor)) for n in self.names)

    __rmul__ = __mul__

    def axpy(self, alpha: float, other: "ParamVector") -> "ParamVector":
        """self + alpha * other, entrywise (θ − α·g is theta.axpy(-alpha, g))"""
        self._check_compatible(other)
        return ParamVector((n, self[n] + float(alpha) * other[n]) for n in self.names)

    def replace(self, name: str, value) -> "ParamVector":
        if name not in self._entries:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self[name].shape:
            raise ValueError(f"'{name}' expects shape {self[name].shape}, got {value.shape}")
        return ParamVector((n, value if n == name else self[n]) for n in self.names)

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([value.ravel() for value in self._entries.values()])

    def unflatten(self, flat) -> "ParamVector":
        """New ParamVector with this one's layout and the given flat values"""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"Expected {self.size} values, got {flat.shape}")
        entries, offset = [], 0
        for name, value in self._entries.items():
            entries.append((name, flat[offset:offset + value.size].reshape(value.shape)))
            offset += value.size
        return ParamVector(entries)

    # Serialization

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<HI", VERSION, len(self._entries))]
        for name, value in self._entries.items():
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<B", value.ndim))
            chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
            chunks.append(value.astype("<f8").tobytes(order="C"))
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamVector":
        view = memoryview(data)
        if bytes(view[:4]) != MAGIC:
            raise CheckpointError("Not a ParamVector file (bad magic)")
        try:
            version, count = struct.unpack_from("<HI", view, 4)
            if version != VERSION:
                raise CheckpointError(f"Unsupported ParamVector version {version}")
            offset = 10
            entries = []
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", view, offset)
                offset += 2
                name = bytes(view[offset:offset + name_len]).decode("utf-8")
                offset += name_len
                (ndim,) = struct.unpack_from("<B", view, offset)
                offset += 1
                shape = struct.unpack_from(f"<{ndim}I", view, offset)
                offset += 4 * ndim
                n_values = int(np.prod(shape)) if ndim else 1
                raw = bytes(view[offset:offset + 8 * n_values])
                if len(raw) != 8 * n_values:
                    raise CheckpointError(f"Record '{name}' is truncated")
                offset += 8 * n_values
                entries.append((name, np.frombuffer(raw, dtype="<f8").reshape(shape)))
        except struct.error as e:
            raise CheckpointError(f"Truncated ParamVector file: {e}") from e
        if offset != len(view):
            raise CheckpointError(f"{len(view) - offset} trailing bytes after last record")
        return cls(entries)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        logger.debug(f"Saved {len(self)} parameter entries to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParamVector":
        return cls.from_bytes(Path(path).read_bytes())
