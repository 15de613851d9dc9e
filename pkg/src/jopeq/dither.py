"""
Shared-seed dither streams and the dithered-quantization transforms.

Encoder and decoder regenerate identical dither vectors from a shared
seed and the stream coordinates (user, round, sub-vector index) without
communication, using a counter-based generator (Philox). Subtractive
dithered quantization (SDQ) quantizes x + d and subtracts d again, which
makes the quantization error cell-uniform and independent of the input.
"""

from dataclasses import dataclass, replace

import numpy as np

from .lattice import Lattice, nearest_point, quantize_clipped

__all__ = ["SharedRandomness", "dither_for", "dither_block", "dq", "sdq"]

# Domain-separation tag for the dither stream within the Philox counter
# space (other streams derived from the same seed must use other tags).
_DITHER_TAG = 0xD17E


@dataclass(frozen=True)
class SharedRandomness:
    """
    Addressing of one shared dither stream.

    Attributes
    ----------
    seed : int
        Shared 64-bit seed s_k agreed between user and server.
    user : int
        User index k.
    round_index : int
        FL round t.
    subvector : int
        Sub-vector index i within the round's update.
    """

    seed: int
    user: int = 0
    round_index: int = 0
    subvector: int = 0

    def at(self, subvector: int) -> "SharedRandomness":
        """Same stream addressed at another sub-vector index."""
        return replace(self, subvector=int(subvector))


def _stream(sr: SharedRandomness) -> np.random.Generator:
    bit = np.random.Philox(
        key=[np.uint64(sr.seed & (2 ** 64 - 1)), np.uint64(sr.user)],
        counter=[np.uint64(sr.round_index), np.uint64(_DITHER_TAG), 0, 0],
    )
    return np.random.Generator(bit)


def dither_block(sr: SharedRandomness, lat: Lattice, count: int) -> np.ndarray:
    """
    Dither vectors for sub-vector indices [sr.subvector, sr.subvector+count).

    Returns a (count, L) array; row j is the dither for sub-vector index
    sr.subvector + j, a deterministic function of (seed, user, round, index)
    and marginally uniform over the basic cell.
    """
    total = sr.subvector + int(count)
    u = _stream(sr).random((total, lat.dimension)) @ lat.generator.T
    d = u - nearest_point(lat, u)
    return d[sr.subvector:]


def dither_for(sr: SharedRandomness, lat: Lattice) -> np.ndarray:
    """Dither vector (shape (L,); scalar for L=1) at sr's coordinates."""
    d = dither_block(sr, lat, 1)[0]
    return float(d[0]) if lat.dimension == 1 else d


def dq(lat: Lattice, x: np.ndarray, d: np.ndarray):
    """
    Non-subtractive dithered quantization: quantize x + d.

    Returns (point, index, overloaded) from the clipped codebook quantizer.
    """
    return quantize_clipped(lat, np.asarray(x, dtype=float) + d)


def sdq(lat: Lattice, x: np.ndarray, d: np.ndarray):
    """
    Subtractive dithered quantization: Q_L(x + d) - d.

    Returns (value, index, overloaded); value = quantized point minus the
    dither, index identifies the quantized point in the codebook. For
    non-overloaded inputs the distortion value - x is uniform over the
    basic cell and independent of x.
    """
    point, idx, overloaded = dq(lat, x, d)
    return point - d, idx, overloaded
