"""Fixed-width bitsets over superpoint ids.

All lifting/tracking/merging set algebra runs on these. A set is a packed
array of uint64 words; bit ``i`` of word ``w`` holds superpoint id
``w * 64 + i``. Padding bits beyond the declared width are kept zero so
popcounts never need masking.
"""

from __future__ import annotations

import numpy as np

from .errors import StructureError

WORD_BITS = 64


def _word_count(width: int) -> int:
    return (width + WORD_BITS - 1) // WORD_BITS


class SuperpointSet:
    """A subset of the scene's superpoints ``[0, width)`` as a packed bitset.

    Operations are closed over one width; combining sets of different widths
    raises :class:`StructureError`.
    """

    __slots__ = ("width", "words")

    def __init__(self, width: int, words: np.ndarray | None = None):
        if width < 0:
            raise StructureError(f"bitset width must be >= 0, got {width}")
        self.width = int(width)
        if words is None:
            self.words = np.zeros(_word_count(self.width), dtype=np.uint64)
        else:
            if words.shape != (_word_count(self.width),):
                raise StructureError(
                    f"word array shape {words.shape} does not match width {width}"
                )
            self.words = words

    @classmethod
    def from_ids(cls, width: int, ids) -> "SuperpointSet":
        out = cls(width)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return out
        if ids.min() < 0 or ids.max() >= width:
            raise StructureError(
                f"superpoint id out of range [0, {width}): "
                f"min={ids.min()}, max={ids.max()}"
            )
        np.bitwise_or.at(
            out.words, ids // WORD_BITS, np.uint64(1) << (ids % WORD_BITS).astype(np.uint64)
        )
        return out

    @classmethod
    def from_bool(cls, mask: np.ndarray) -> "SuperpointSet":
        """Pack a length-S boolean membership array."""
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 1:
            raise StructureError("membership mask must be 1-D")
        width = mask.shape[0]
        out = cls(width)
        padded = np.zeros(_word_count(width) * WORD_BITS, dtype=bool)
        padded[:width] = mask
        # np.packbits is big-endian within bytes; flip to get bit i at 1 << i.
        packed = np.packbits(padded.reshape(-1, 8)[:, ::-1], axis=1).reshape(-1)
        out.words = packed.view(np.uint64) if packed.size else out.words
        return out

    def to_bool(self) -> np.ndarray:
        if self.words.size == 0:
            return np.zeros(0, dtype=bool)
        as_bytes = self.words.view(np.uint8)
        bits = np.unpackbits(as_bytes.reshape(-1, 1), axis=1)[:, ::-1].reshape(-1)
        return bits[: self.width].astype(bool)

    def to_ids(self) -> np.ndarray:
        return np.flatnonzero(self.to_bool()).astype(np.int64)

    def _check(self, other: "SuperpointSet") -> None:
        if self.width != other.width:
            raise StructureError(
                f"bitset width mismatch: {self.width} vs {other.width}"
            )

    def __and__(self, other: "SuperpointSet") -> "SuperpointSet":
        self._check(other)
        return SuperpointSet(self.width, self.words & other.words)

    def __or__(self, other: "SuperpointSet") -> "SuperpointSet":
        self._check(other)
        return SuperpointSet(self.width, self.words | other.words)

    def __sub__(self, other: "SuperpointSet") -> "SuperpointSet":
        self._check(other)
        return SuperpointSet(self.width, self.words & ~other.words)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SuperpointSet):
            return NotImplemented
        return self.width == other.width and bool(np.array_equal(self.words, other.words))

    def __hash__(self):
        return hash((self.width, self.words.tobytes()))

    def count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def __len__(self) -> int:
        return self.count()

    def __bool__(self) -> bool:
        return bool(np.any(self.words))

    def __contains__(self, sp_id: int) -> bool:
        if not 0 <= sp_id < self.width:
            return False
        return bool((self.words[sp_id // WORD_BITS] >> np.uint64(sp_id % WORD_BITS)) & np.uint64(1))

    def copy(self) -> "SuperpointSet":
        return SuperpointSet(self.width, self.words.copy())

    def __repr__(self) -> str:
        n = self.count()
        preview = ", ".join(str(i) for i in self.to_ids()[:8])
        tail = ", ..." if n > 8 else ""
        return f"SuperpointSet(width={self.width}, n={n}, ids=[{preview}{tail}])"


def pack_rows(sets: list[SuperpointSet]) -> np.ndarray:
    """Stack bitsets into an (M, words) uint64 matrix for kernel calls."""
    if not sets:
        return np.zeros((0, 0), dtype=np.uint64)
    width = sets[0].width
    for s in sets:
        if s.width != width:
            raise StructureError("cannot stack bitsets of different widths")
    return np.stack([s.words for s in sets])
