"""
Бинарный контейнер параметров: "AGAN", версия u32, затем для каждого
тензора длина имени, имя, ранг, размеры и little-endian f64
"""
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .base import FormatError, LengthError
from .constants import PARAM_STORE


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Сериализует именованные массивы"""
    chunks = [PARAM_STORE['magic'], struct.pack('<I', PARAM_STORE['version'])]
    for name, values in tensors.items():
        values = np.asarray(values, dtype='<f8')
        encoded_name = name.encode('utf-8')
        chunks.append(struct.pack('<I', len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack('<I', values.ndim))
        chunks.append(struct.pack(f'<{values.ndim}I', *values.shape))
        chunks.append(values.tobytes(order='C'))
    return b''.join(chunks)


def decode(blob: bytes) -> Dict[str, np.ndarray]:
    """Разбирает контейнер; ошибки указывают смещение в байтах"""
    magic = PARAM_STORE['magic']
    if len(blob) < len(magic) + 4:
        raise LengthError("Container header is truncated", offset=len(blob))
    if blob[:len(magic)] != magic:
        raise FormatError(f"Bad container magic {blob[:len(magic)]!r}", offset=0)
    offset = len(magic)
    (version,) = struct.unpack_from('<I', blob, offset)
    if version != PARAM_STORE['version']:
        raise FormatError(f"Unsupported container version {version}", offset=offset)
    offset += 4

    tensors: Dict[str, np.ndarray] = {}
    while offset < len(blob):
        offset, name_len = _read_u32(blob, offset, "name length")
        if offset + name_len > len(blob):
            raise LengthError("Tensor name is truncated", offset=offset)
        try:
            name = blob[offset:offset + name_len].decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError("Tensor name is not valid UTF-8", offset=offset)
        offset += name_len
        offset, rank = _read_u32(blob, offset, "rank")
        if offset + 4 * rank > len(blob):
            raise LengthError(f"Dimensions of '{name}' are truncated", offset=offset)
        dims = struct.unpack_from(f'<{rank}I', blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = offset + 8 * count
        if end > len(blob):
            raise LengthError(f"Payload of '{name}' is truncated", offset=offset)
        tensors[name] = np.frombuffer(blob, dtype='<f8', count=count, offset=offset).reshape(dims).astype(np.float64)
        offset = end
    return tensors


def _read_u32(blob: bytes, offset: int, what: str):
    if offset + 4 > len(blob):
        raise LengthError(f"Truncated {what}", offset=offset)
    (value,) = struct.unpack_from('<I', blob, offset)
    return offset + 4, value


def save(path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(tensors))
    return path


def load(path) -> Dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def with_prefix(prefix: str, tensors: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{name}": values for name, values in tensors.items()}


def strip_prefix(prefix: str, tensors: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    head = f"{prefix}/"
    return {name[len(head):]: values for name, values in tensors.items() if name.startswith(head)}
