"""Counter-based random streams addressed by multi-indices.

Every draw is a pure function of ``(seed, theta)``: the key bytes are hashed
with SHAKE128 and the extendable output is read as little-endian 64-bit words.
See FORMAT.md for the byte-level layout.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DOMAIN_TAG = b"mlpbsde/v1"
STREAM_TAG = b"\x00"
SEED_TAG = b"\x01"

# root element of the Brownian-path stream; MLP roots are the levels 0, 1, ...
BROWNIAN_SENTINEL = -(2**63)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
UINT64_MAX = 2**64 - 1

MAX_PATH_NODES = 10**8

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0**-53
_TINY = 2.0**-64


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= UINT64_MAX:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def encode_theta(theta: Sequence[int]) -> bytes:
    """Length-framed little-endian encoding of a multi-index."""
    parts = [len(theta).to_bytes(8, "little")]
    for e in theta:
        e = int(e)
        if not INT64_MIN <= e <= INT64_MAX:
            raise ValueError(f"theta element {e} does not fit in signed 64 bits")
        parts.append(e.to_bytes(8, "little", signed=True))
    return b"".join(parts)


def stream_words(seed: int, theta: Sequence[int], count: int) -> np.ndarray:
    """The first ``count`` 64-bit words of the stream keyed by (seed, theta)."""
    key = DOMAIN_TAG + STREAM_TAG + _check_seed(seed).to_bytes(8, "little") + encode_theta(theta)
    raw = hashlib.shake_128(key).digest(8 * count)
    return np.frombuffer(raw, dtype="<u8").astype(np.uint64)


def words_to_unit(words: np.ndarray) -> np.ndarray:
    """Map words to [0, 1) using their top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _gaussian_pairs(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    u1 = np.where(u1 == 0.0, _TINY, u1)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    out = np.empty(2 * u1.shape[0])
    out[0::2] = rad * np.cos(ang)
    out[1::2] = rad * np.sin(ang)
    return out


def box_muller(words: np.ndarray, count: int) -> np.ndarray:
    """``count`` standard normals from ``2 * ceil(count / 2)`` words.

    Pair ``j`` uses words ``2j`` (radius) and ``2j + 1`` (angle) and yields
    ``rad * cos(angle)`` then ``rad * sin(angle)``.
    """
    u = words_to_unit(words)
    return _gaussian_pairs(u[0::2], u[1::2])[:count]


@dataclass(frozen=True)
class NodeDraws:
    r: float
    z: np.ndarray


def child(theta: Sequence[int], l: int, i: int) -> tuple[int, ...]:
    """``theta`` extended by the step ``(l, i)``; the input is left untouched."""
    return tuple(theta) + (int(l), int(i))


def node_draws(seed: int, theta: Sequence[int], d: int) -> NodeDraws:
    """The uniform time variable and d-dimensional normal attached to ``theta``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    pairs = (d + 1) // 2
    words = stream_words(seed, theta, 1 + 2 * pairs)
    u = words_to_unit(words)
    r = float(u[0])
    z = _gaussian_pairs(u[1::2], u[2::2])[:d]
    z.setflags(write=False)
    return NodeDraws(r=r, z=z)


def brownian_path(seed: int, d: int, M: int, n: int, T: float) -> np.ndarray:
    """Brownian motion at the nodes ``k T / M^n``, shape ``(M^n + 1, d)``.

    Increments come from the reserved stream ``(BROWNIAN_SENTINEL,)``, read
    row-major (increment k, coordinate j), so the path is independent of all
    MLP draws. Coarser grids are the rows ``k * M^(n - l)``.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if M < 1 or n < 0:
        raise ValueError(f"need M >= 1 and n >= 0, got M={M}, n={n}")
    steps = M**n
    if steps > MAX_PATH_NODES:
        raise OverflowError(f"M^n = {M}^{n} exceeds the path resource guard {MAX_PATH_NODES}")
    count = steps * d
    words = stream_words(seed, (BROWNIAN_SENTINEL,), 2 * ((count + 1) // 2))
    incr = box_muller(words, count).reshape(steps, d) * math.sqrt(T / steps)
    path = np.zeros((steps + 1, d))
    np.cumsum(incr, axis=0, out=path[1:])
    return path


def spawn_seeds(base_seed: int, count: int) -> list[int]:
    """``count`` replication seeds derived from ``base_seed``."""
    key = DOMAIN_TAG + SEED_TAG + _check_seed(base_seed).to_bytes(8, "little")
    raw = hashlib.shake_128(key).digest(8 * count)
    return [int(w) for w in np.frombuffer(raw, dtype="<u8")]

