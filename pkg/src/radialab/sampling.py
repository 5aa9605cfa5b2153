"""Seeded, order-independent sampling of magnitudes and radial vectors.

Uniforms come from the Philox4x64 counter-based generator keyed by
``(master_seed, stream_id)``: draw ``i`` of a stream depends only on the key
and ``i``, never on how many other streams were consumed first or by which
worker. Magnitudes are inverse-CDF draws from the law's table; directions use
a second counter lane so that a vector batch reuses exactly the magnitudes of
the corresponding magnitude batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .distributions import LimitLaw, RadialLaw
from .errors import NonIntegerDimension

MAGIC = b"RADB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQdQ")
_U64 = (1 << 64) - 1

MAGNITUDE_LANE = 0
DIRECTION_LANE = 1


def uniform_stream(master_seed: int, stream_id: int, n: int, lane: int = MAGNITUDE_LANE) -> np.ndarray:
    """``n`` uniforms in the open interval (0, 1) from the keyed stream.

    Each 64-bit output keeps its top 53 bits and is centred in its bin, so
    neither 0 nor 1 can occur.
    """
    if not 0 <= master_seed <= _U64:
        raise ValueError("master_seed must fit in an unsigned 64-bit integer")
    if not 0 <= stream_id <= _U64:
        raise ValueError("stream_id must be a nonnegative 64-bit integer")
    key = np.array([master_seed, stream_id], dtype=np.uint64)
    counter = np.array([0, 0, 0, lane], dtype=np.uint64)
    raw = np.random.Philox(key=key, counter=counter).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True)
class SampleBatch:
    values: np.ndarray
    master_seed: int
    stream_id: int
    law_descriptor: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> float:
        return float(self.law_descriptor.get("d", float("nan")))


@dataclass(frozen=True)
class VectorBatch(SampleBatch):
    magnitudes: np.ndarray = None

    @property
    def ambient_dim(self) -> int:
        return int(self.values.shape[1])


def sample_magnitudes(law: RadialLaw, n: int, master_seed: int, stream_id: int = 0) -> SampleBatch:
    """``n`` inverse-CDF draws of U_d."""
    if n < 1:
        raise ValueError("n must be at least 1")
    u = uniform_stream(master_seed, stream_id, n)
    values = np.asarray(law.quantile(u), dtype=float)
    values.setflags(write=False)
    return SampleBatch(values, master_seed, stream_id, law.descriptor)


def uniform_directions(dim: int, n: int, master_seed: int, stream_id: int = 0) -> np.ndarray:
    """``n`` points uniform on the unit sphere of R^dim, shape ``(n, dim)``."""
    z = special.ndtri(uniform_stream(master_seed, stream_id, n * dim, lane=DIRECTION_LANE))
    z = z.reshape(n, dim)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_vectors(law: RadialLaw, n: int, master_seed: int, stream_id: int = 0) -> VectorBatch:
    """Draws of X_d in R^(d+1): magnitude times an independent uniform direction."""
    if not float(law.d).is_integer():
        raise NonIntegerDimension(f"vector sampling needs an integer d, got {law.d}")
    mags = sample_magnitudes(law, n, master_seed, stream_id)
    dim = int(law.d) + 1
    points = uniform_directions(dim, n, master_seed, stream_id) * mags.values[:, None]
    points.setflags(write=False)
    return VectorBatch(points, master_seed, stream_id, law.descriptor, magnitudes=mags.values)


def transform_to_limit(batch: SampleBatch, limit: LimitLaw) -> np.ndarray:
    return np.asarray(limit.standardize(batch.values), dtype=float)


# --------------------------------------------------------------------------
# Export


def write_batch(path, batch: SampleBatch) -> None:
    """Binary export: 32-byte little-endian header then float64 values."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, batch.n, batch.d, batch.master_seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(batch.values, dtype="<f8").tobytes())


def read_batch(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, d, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    if values.size % max(n, 1):
        raise ValueError(f"{path}: payload size does not match n={n}")
    if n and values.size != n:
        values = values.reshape(n, values.size // n)
    return {"n": n, "d": d, "seed": seed, "version": version}, values


def write_batch_csv(path, batch: SampleBatch) -> None:
    with open(path, "w") as fh:
        for v in np.ravel(batch.values):
            fh.write("%.17g\n" % v)
