"""Encrypted-matrix utilities over slot vectors.

A ciphertext is viewed as a grid of ``block_dim`` rows by
``blocks_per_ct * block_dim`` columns (C-order), so block ``b`` occupies a
``block_dim``-wide column stripe: slot(r, b, c) = r*width + b*block_dim + c.
The grid stores the first row of every block, then the second row, and so
on; any slots past the grid are dead padding.

All operations act on every block simultaneously with the same rotation
schedule.  Row operations shift by multiples of ``width``, column operations
by small offsets inside the stripe.  Non-power-of-two block sizes (unpadded
mode) use generalized schedules that double a replicated segment as far as
possible and then fill the remainder from cached partial results; the
schedules below are validated exhaustively against brute force in the test
suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .slot_engine import PLAINTEXT, EngineError, SlotEngine, SlotVector

ROW = "row"
COLUMN = "column"

PADDED = "padded"
UNPADDED = "unpadded"


@dataclass(frozen=True)
class PackedLayout:
    """How k x k blocks tile a slot vector.

    Unpadded mode (default) uses exactly k*k slots per block; padded mode
    rounds the block dimension up to a power of two, which the recursive
    transpose requires.  ``blocks_per_ct`` may be pinned explicitly (useful
    for reproducing small worked examples); by default every block that fits
    is used.
    """

    k: int
    slot_count: int = 1 << 14
    mode: str = UNPADDED
    blocks_per_ct: int = 0
    _mask_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.mode not in (PADDED, UNPADDED):
            raise ValueError(f"unknown layout mode {self.mode!r}")
        dim = self.block_dim
        max_blocks = self.slot_count // (dim * dim)
        if self.blocks_per_ct == 0:
            object.__setattr__(self, "blocks_per_ct", max_blocks)
        if not 1 <= self.blocks_per_ct <= max_blocks:
            raise ValueError(
                f"blocks_per_ct {self.blocks_per_ct} outside [1, {max_blocks}] "
                f"for k={self.k}, slot_count={self.slot_count}"
            )

    @property
    def block_dim(self) -> int:
        if self.mode == UNPADDED:
            return self.k
        return 1 << math.ceil(math.log2(self.k))

    @property
    def stride(self) -> int:
        """Slots consumed per block."""
        return self.block_dim * self.block_dim

    @property
    def width(self) -> int:
        """Columns per grid row (all stripes side by side)."""
        return self.blocks_per_ct * self.block_dim

    @property
    def usable_slots(self) -> int:
        return self.blocks_per_ct * self.stride

    def slot(self, row: int, block: int, col: int) -> int:
        return row * self.width + block * self.block_dim + col

    def grid(self, values=None) -> np.ndarray:
        """A zeroed (or filled) (block_dim, blocks_per_ct, block_dim) tensor.

        Reshaping it C-order and padding to slot_count yields the slot
        vector for this layout.
        """
        g = np.zeros((self.block_dim, self.blocks_per_ct, self.block_dim))
        if values is not None:
            g[...] = values
        return g

    def to_slots(self, grid: np.ndarray) -> np.ndarray:
        flat = np.asarray(grid, dtype=np.float64).reshape(-1)
        out = np.zeros(self.slot_count)
        out[: flat.size] = flat
        return out

    def from_slots(self, slots: np.ndarray) -> np.ndarray:
        return np.array(slots[: self.usable_slots]).reshape(
            self.block_dim, self.blocks_per_ct, self.block_dim
        )

    # -- cached plaintext masks -----------------------------------------

    def _mask(self, key, build) -> np.ndarray:
        if key not in self._mask_cache:
            arr = build()
            arr.setflags(write=False)
            self._mask_cache[key] = arr
        return self._mask_cache[key]

    def axis_mask(self, axis: str, index: int) -> np.ndarray:
        """1.0 on row/column ``index`` of every block, 0 elsewhere."""
        if not 0 <= index < self.block_dim:
            raise IndexError(f"{axis} index {index} outside [0, {self.block_dim})")

        def build():
            g = self.grid()
            if axis == ROW:
                g[index, :, :] = 1.0
            elif axis == COLUMN:
                g[:, :, index] = 1.0
            else:
                raise ValueError(f"axis must be {ROW!r} or {COLUMN!r}, got {axis!r}")
            return self.to_slots(g)

        return self._mask(("axis", axis, index), build)

    def head_mask(self, count: int) -> np.ndarray:
        """1.0 on the first ``count`` columns of block 0's first row."""

        def build():
            g = self.grid()
            g[0, 0, :count] = 1.0
            return self.to_slots(g)

        return self._mask(("head", count), build)


# ---------------------------------------------------------------------------
# replication / summation schedules
# ---------------------------------------------------------------------------

# For k = 2^m + 1 ... the binary fill (double to 2^m, then add cached partials
# per remainder bit) is rotation-minimal except when k is all-ones in binary;
# those cases carry shorter addition-chain fills.
_CHAIN_FILLS = {
    3: [1, 1],
    7: [1, 1, 3, 1],
    15: [1, 1, 3, 6, 3],
    31: [1, 1, 3, 6, 12, 6, 1],
    63: [1, 1, 3, 6, 12, 24, 12, 3],
}

_schedule_cache: dict = {}


def _fill_lengths(count: int) -> list[int]:
    if count in _CHAIN_FILLS:
        return list(_CHAIN_FILLS[count])
    m = count.bit_length() - 1
    lengths = [1 << i for i in range(m)]
    rem = count - (1 << m)
    for i in reversed(range(m)):
        if rem >> i & 1:
            lengths.append(1 << i)
    return lengths


def replication_schedule(count: int, start: int) -> list[tuple[int, int]]:
    """Rotation plan replicating one non-zero lane at ``start`` over ``count`` lanes.

    Returns ``[(piece_len, delta), ...]``: at each step the cached partial of
    ``piece_len`` lanes is rotated by ``delta`` lanes and added, growing one
    contiguous segment until it covers [0, count).  Pieces are snapshots of
    the growing segment, as in the recursive doubling algorithm; lengths
    follow the binary fill except for the all-ones counts above.
    """
    if not 0 <= start < count:
        raise ValueError(f"start {start} outside [0, {count})")
    key = (count, start)
    if key in _schedule_cache:
        return _schedule_cache[key]

    lengths = _fill_lengths(count)
    # Pick which extensions go left so the segment ends exactly at 0.
    dp: dict[int, list[int]] = {0: []}
    for idx, p in enumerate(lengths):
        for s, sel in list(dp.items()):
            t = s + p
            if t <= start and t not in dp:
                dp[t] = sel + [idx]
    left = set(dp[start])

    lo, hi = start, start + 1
    piece_pos = {1: start}
    ops = []
    size = 1
    for idx, p in enumerate(lengths):
        src_lo = piece_pos[p]
        if idx in left:
            ops.append((p, (lo - p) - src_lo))
            lo -= p
        else:
            ops.append((p, hi - src_lo))
            hi += p
        size += p
        piece_pos[size] = lo
    assert (lo, hi) == (0, count)
    _schedule_cache[key] = ops
    return ops


def _axis_unit(layout: PackedLayout, axis: str) -> int:
    if axis == ROW:
        return layout.width
    if axis == COLUMN:
        return 1
    raise ValueError(f"axis must be {ROW!r} or {COLUMN!r}, got {axis!r}")


def _run_replication(
    engine: SlotEngine, v: SlotVector, unit: int, count: int, start: int
) -> SlotVector:
    acc = v
    pieces = {1: v}
    size = 1
    for piece_len, delta in replication_schedule(count, start):
        shifted = engine.rotate(pieces[piece_len], -delta * unit)
        acc = engine.add(acc, shifted)
        size += piece_len
        pieces[size] = acc
    return acc


def _run_lane_sum(engine: SlotEngine, v: SlotVector, unit: int, count: int) -> SlotVector:
    """Sum ``count`` lanes into lane 0 (other lanes hold garbage, mask after)."""
    m = count.bit_length() - 1
    partials = [v]  # partials[i] at lane l sums lanes l .. l + 2^i - 1
    acc = v
    for i in range(m):
        acc = engine.add(acc, engine.rotate(acc, unit << i))
        partials.append(acc)
    total = acc
    offset = 1 << m
    rem = count - offset
    for i in reversed(range(m)):
        if rem >> i & 1:
            total = engine.add(total, engine.rotate(partials[i], unit * offset))
            offset += 1 << i
            rem -= 1 << i
    return total


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def mask(engine: SlotEngine, v: SlotVector, axis: str, index: int, layout: PackedLayout) -> SlotVector:
    """Zero everything except row/column ``index`` of every block (one mult)."""
    return engine.mul(v, engine.plaintext(layout.axis_mask(axis, index)))


def axis_sum(engine: SlotEngine, v: SlotVector, axis: str, layout: PackedLayout) -> SlotVector:
    """Per block, sum all rows (resp. columns) into the first, then mask."""
    summed = _run_lane_sum(engine, v, _axis_unit(layout, axis), layout.block_dim)
    first = ROW if axis == ROW else COLUMN
    return mask(engine, summed, first, 0, layout)


def repl(engine: SlotEngine, v: SlotVector, axis: str, layout: PackedLayout) -> SlotVector:
    """Replicate the first row (resp. column) into all of them; rotations only."""
    return _run_replication(engine, v, _axis_unit(layout, axis), layout.block_dim, 0)


def repl_no_padding(
    engine: SlotEngine,
    v: SlotVector,
    start_index: int,
    layout: PackedLayout,
    axis: str = COLUMN,
) -> SlotVector:
    """Replicate the single non-zero row/column at ``start_index`` over the block.

    Works for any block dimension; needs at most the schedule's rotation
    count and no multiplications.  The input must hold exactly one non-zero
    lane per block, at the same ``start_index`` everywhere.
    """
    return _run_replication(engine, v, _axis_unit(layout, axis), layout.block_dim, start_index)


def transpose_vec(engine: SlotEngine, v: SlotVector, axis: str, layout: PackedLayout) -> SlotVector:
    """Move the first row into the first column (``axis=ROW``) or back.

    Padded layouts only: the shift-add schedule assumes a power-of-two block
    dimension.
    """
    dim = layout.block_dim
    if dim & (dim - 1):
        raise EngineError("transpose_vec requires a padded (power-of-two) layout")
    step = layout.width - 1
    out = v
    for j in reversed(range(int(math.log2(dim)))):
        if axis == ROW:  # row -> column: shift right
            out = engine.add(out, engine.rotate(out, -step * (1 << j)))
        elif axis == COLUMN:  # column -> row: shift left
            out = engine.add(out, engine.rotate(out, step * (1 << j)))
        else:
            raise ValueError(f"axis must be {ROW!r} or {COLUMN!r}, got {axis!r}")
    target = COLUMN if axis == ROW else ROW
    return mask(engine, out, target, 0, layout)


def batch_extract_replicate(
    engine: SlotEngine,
    x: SlotVector,
    positions,
    layout: PackedLayout,
    scale: float = 1.0,
) -> SlotVector:
    """Fill each block with one value taken from the compact encoding ``x``.

    ``positions`` holds one source slot per output block (None skips the
    block); all sources must sit at the same (row, column) offset of their
    stripes so a single mask plus the two replication passes re-encode every
    block at once.  ``scale`` is folded into the mask, so scaling costs no
    extra depth.  Total cost: one plaintext multiplication and rotations.
    """
    offsets = set()
    sel = np.zeros(layout.slot_count)
    for b, pos in enumerate(positions):
        if pos is None:
            continue
        if b >= layout.blocks_per_ct:
            raise EngineError("more positions than blocks in the layout")
        r, rest = divmod(int(pos), layout.width)
        blk, c = divmod(rest, layout.block_dim)
        if blk != b or not (0 <= r < layout.block_dim):
            raise EngineError(f"position {pos} does not address block {b}")
        offsets.add((r, c))
        sel[pos] = scale
    if len(offsets) != 1:
        raise EngineError(f"positions must share one in-block offset, got {sorted(offsets)}")
    (row0, col0) = offsets.pop()

    selected = engine.mul(x, engine.plaintext(sel))
    filled = repl_no_padding(engine, selected, col0, layout, axis=COLUMN)
    return repl_no_padding(engine, filled, row0, layout, axis=ROW)


def reduce_blocks(engine: SlotEngine, v: SlotVector, layout: PackedLayout) -> SlotVector:
    """Sum all blocks of the ciphertext into block 0 (rotations only; block 0
    is the meaningful one afterwards, the rest is garbage for the caller to
    mask)."""
    if layout.blocks_per_ct == 1:
        return v
    return _run_lane_sum(engine, v, layout.block_dim, layout.blocks_per_ct)
