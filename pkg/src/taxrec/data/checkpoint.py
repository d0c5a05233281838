"""Binary checkpoint of a trained factor store.

Layout (little-endian)::

    magic "TFM1" | version u32 | K u32 | users u64 | nodes u64 | U u32 | N u32 | alpha f64
    user factors, item offsets, next-item offsets   (float32, row-major)
    blake2b-64 digest of the three matrices

Factors are stored as float32, so a save/load/save cycle is byte-stable but a
trained float64 store loses precision on the first save.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ChecksumError, DimensionError, VersionError
from ..factors import FactorStore

MAGIC = b"TFM1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQQIId")
_DIGEST = 8


@dataclass
class Checkpoint:
    store: FactorStore
    levels: int
    N: int
    alpha: float

    @property
    def K(self) -> int:
        return self.store.K


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=_DIGEST).digest()


def encode_checkpoint(store: FactorStore, levels: int, N: int, alpha: float) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, store.K, store.user_count, store.node_count,
                          int(levels), int(N), float(alpha))
    payload = b"".join(np.ascontiguousarray(m, dtype="<f4").tobytes()
                       for m in (store.user, store.item, store.next))
    return header + payload + _digest(payload)


def save_checkpoint(store: FactorStore, config, path, taxonomy=None) -> None:
    """Write ``store`` with the structure fields of ``config``.

    ``config.levels=None`` (full path) needs ``taxonomy`` to resolve.
    """
    if config.levels is None and taxonomy is None:
        raise CheckpointError("taxonomy needed to resolve the number of update levels")
    levels = config.resolved_levels(taxonomy) if taxonomy is not None else config.levels
    Path(path).write_bytes(encode_checkpoint(store, levels, config.N, config.alpha))


def decode_checkpoint(blob: bytes, taxonomy=None, user_count: int | None = None) -> Checkpoint:
    if len(blob) < _HEADER.size + _DIGEST:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, K, users, nodes, levels, N, alpha = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, expected {VERSION}")
    sizes = [users * K, nodes * K, nodes * K]
    expected = _HEADER.size + 4 * sum(sizes) + _DIGEST
    if len(blob) != expected:
        raise DimensionError(f"payload is {len(blob)} bytes, header implies {expected}")
    payload = blob[_HEADER.size:-_DIGEST]
    if _digest(payload) != blob[-_DIGEST:]:
        raise ChecksumError("checksum mismatch: checkpoint is corrupt")
    if taxonomy is not None:
        if nodes != taxonomy.node_count:
            raise DimensionError(f"checkpoint has {nodes} nodes, taxonomy has {taxonomy.node_count}")
        if levels > taxonomy.depth + 1:
            raise DimensionError(f"checkpoint uses {levels} levels, taxonomy has {taxonomy.depth + 1}")
    if user_count is not None and users != user_count:
        raise DimensionError(f"checkpoint has {users} users, log has {user_count}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    a, b = sizes[0], sizes[0] + sizes[1]
    store = FactorStore(flat[:a].reshape(users, K), flat[a:b].reshape(nodes, K),
                        flat[b:].reshape(nodes, K))
    return Checkpoint(store, levels, N, alpha)


def load_checkpoint(path, taxonomy=None, user_count: int | None = None) -> Checkpoint:
    """Read and validate a checkpoint; dimension checks run when the
    taxonomy or user count is given."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, taxonomy, user_count)
