"""Packed argmin under (simulated) encryption.

One slot-wise polynomial comparison of the row and column encodings of a
k-vector yields all pairwise comparisons at once; summing comparison columns
gives each element's rank, and a degree-(k-1) indicator polynomial turns
rank 1 into a one-hot marker.  Exact ties produce fractional ranks that the
indicator never activates, so tied blocks decode to a null marker (every
entry below 0.5).

The comparison polynomial is a single Chebyshev interpolation of a steep
sign surrogate erf(alpha * x).  Interpolating the discontinuous sign itself
is useless here: its interpolant carries a Gibbs oscillation of ~0.28 near
the jump at every practical degree, far outside the comparison contract.
With alpha = 1.7 / tie_margin the surrogate is within 2 * 0.0082 of sign
everywhere outside the tie margin, and the interpolation error at the
default degree is below 4e-6, so comparisons at gaps >= tie_margin land
within 0.01 of {0, 1} while exact ties map to 0.5 exactly (the series is
odd by construction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .packed_matrix import COLUMN, ROW, PackedLayout, axis_sum, mask
from .slot_engine import SlotEngine, SlotVector

# erf steepness per unit of tie margin: erfc(1.7) ~ 0.0164, half the 0.02
# sign-error budget that keeps cmp within 0.01 of {0, 1} at the margin.
STEEPNESS = 1.7

DEFAULT_DEGREE = 1023


@dataclass(frozen=True)
class SignApproxConfig:
    """Parameters of the polynomial comparison.

    ``input_scale`` maps raw differences into [-1, 1] and must be chosen so
    the comparison operands never leave that interval.  Differences smaller
    than ``tie_margin`` (after scaling) give unreliable comparisons by
    contract; everything at or beyond the margin compares to within 0.01.
    """

    degree: int = DEFAULT_DEGREE
    input_scale: float = 1.0
    tie_margin: float = 0.01

    def __post_init__(self):
        if self.degree < 1 or self.degree % 2 == 0:
            raise ValueError("degree must be odd and positive")
        if not 0 < self.tie_margin < 1:
            raise ValueError("tie_margin must lie in (0, 1)")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")


_series_cache: dict = {}


def sign_series(cfg: SignApproxConfig) -> np.ndarray:
    """Chebyshev coefficients approximating sign on [-1, 1].

    Interpolates erf(STEEPNESS / tie_margin * x) at Chebyshev nodes of the
    first kind; even coefficients are zeroed so the series is exactly odd
    (ties evaluate to 0 with no rounding residue).
    """
    key = (cfg.degree, cfg.tie_margin)
    if key not in _series_cache:
        n = cfg.degree + 1
        alpha = STEEPNESS / cfg.tie_margin
        nodes = np.cos((np.arange(n) + 0.5) * np.pi / n)
        y = erf(alpha * nodes)
        j = np.arange(n)[:, None]
        c = (2.0 / n) * (y[None, :] * np.cos(j * (np.arange(n) + 0.5) * np.pi / n)).sum(axis=1)
        c[0] /= 2
        c[::2] = 0.0
        c.setflags(write=False)
        _series_cache[key] = c
    return _series_cache[key]


def cmp_series(cfg: SignApproxConfig) -> np.ndarray:
    """Series for sign(x)/2 + 0.5; the shift is folded into the coefficients
    so a comparison costs exactly one series evaluation."""
    key = ("cmp", cfg.degree, cfg.tie_margin)
    if key not in _series_cache:
        c = 0.5 * sign_series(cfg)
        c = c.copy()
        c[0] += 0.5
        c.setflags(write=False)
        _series_cache[key] = c
    return _series_cache[key]


def cmp(engine: SlotEngine, a: SlotVector, b: SlotVector, cfg: SignApproxConfig) -> SlotVector:
    """Slot-wise soft comparison: ~1 where a > b, ~0 where a < b, 0.5 at ties.

    When ``input_scale`` is 1 the difference is fed to the series directly;
    otherwise scaling costs one plaintext multiplication.
    """
    u = engine.sub(a, b)
    if cfg.input_scale != 1.0:
        u = engine.mul(u, engine.plaintext(np.full(engine.config.slot_count, cfg.input_scale)))
    return engine.eval_chebyshev(u, cmp_series(cfg))


def rank(
    engine: SlotEngine,
    v_row: SlotVector,
    v_col: SlotVector,
    layout: PackedLayout,
    cfg: SignApproxConfig,
) -> SlotVector:
    """Per block, first row holds each element's rank (1 = smallest).

    ``v_row``/``v_col`` are the row and column encodings of the same
    per-block vector; comparing them slot-wise and summing rows counts, for
    each column, how many elements are smaller, and the self-comparison
    contributes the remaining 0.5.
    """
    c = cmp(engine, v_row, v_col, cfg)
    r = axis_sum(engine, c, ROW, layout)
    half = engine.plaintext(0.5 * layout.axis_mask(ROW, 0))
    return engine.add(r, half)


def _phi_factors(k: int):
    """Interpolation nodes 2..k and the normalization 1 / prod(1 - j)."""
    nodes = list(range(2, k + 1))
    norm = 1.0
    for j in nodes:
        norm *= 1.0 - j
    return nodes, 1.0 / norm


def _merge_counts(n: int) -> list[int]:
    """Multiplications on each leaf's path in the left-to-right pairing tree."""
    counts = [0] * n
    nodes = [[i] for i in range(n)]
    while len(nodes) > 1:
        merged = []
        for i in range(0, len(nodes) - 1, 2):
            both = nodes[i] + nodes[i + 1]
            for leaf in both:
                counts[leaf] += 1
            merged.append(both)
        if len(nodes) % 2:
            merged.append(nodes[-1])
        nodes = merged
    return counts


def indicator_phi(
    engine: SlotEngine,
    r: SlotVector,
    layout: PackedLayout,
    extra_mask: np.ndarray | None = None,
) -> SlotVector:
    """Evaluate the rank-1 indicator polynomial slot-wise.

    phi(x) = prod_{j=2..k} (x - j) / prod_{j=2..k} (1 - j): exactly 1 at
    rank 1, 0 at integer ranks 2..k, and bounded away from 1 on fractional
    tie ranks.  The product is evaluated as a balanced tree; the
    normalization constant times the first-row mask (and any extra mask,
    e.g. zeroing unused blocks) is folded onto the leaf with the shallowest
    path, so masking is free whenever the leaf count leaves slack.
    """
    k = layout.k
    nodes, norm = _phi_factors(k)
    mask_arr = norm * layout.axis_mask(ROW, 0)
    if layout.block_dim > k:
        keep = layout.grid()
        keep[:, :, : k] = 1.0
        mask_arr = mask_arr * layout.to_slots(keep)
    if extra_mask is not None:
        mask_arr = mask_arr * extra_mask
    mask_pt = engine.plaintext(mask_arr)

    factors = [
        engine.sub(r, engine.plaintext(np.full(engine.config.slot_count, float(j))))
        for j in nodes
    ]
    fold_at = int(np.argmin(_merge_counts(len(factors))))
    factors[fold_at] = engine.mul(factors[fold_at], mask_pt)

    while len(factors) > 1:
        merged = [
            engine.mul(factors[i], factors[i + 1]) for i in range(0, len(factors) - 1, 2)
        ]
        if len(factors) % 2:
            merged.append(factors[-1])
        factors = merged
    return factors[0]


def argmin_packed(
    engine: SlotEngine,
    distances_row: SlotVector,
    distances_col: SlotVector,
    layout: PackedLayout,
    cfg: SignApproxConfig,
    valid_blocks: np.ndarray | None = None,
) -> SlotVector:
    """One-hot argmin marker per block, in the first row of the block.

    Ties across u minimal elements produce ranks (u + 1) / 2 for all of
    them, the indicator activates nowhere, and the block decodes as null
    (every entry far below 1); callers treat entries below 0.5 as zero.
    ``valid_blocks`` (0/1 per slot) zeroes blocks that carry no real data.
    """
    r = rank(engine, distances_row, distances_col, layout, cfg)
    return indicator_phi(engine, r, layout, extra_mask=valid_blocks)


def argmin_two(
    engine: SlotEngine, dist1: SlotVector, dist2: SlotVector, cfg: SignApproxConfig
) -> SlotVector:
    """k = 2 fast path on compact encodings: a bitmask, ~1 where the second
    centroid is strictly closer.  1 - mask marks the first centroid; no
    packing, row sums, or indicator polynomial involved."""
    return cmp(engine, dist1, dist2, cfg)


def chebyshev_depth(degree: int) -> int:
    """Levels the engine charges for a series of this degree."""
    return math.ceil(math.log2(degree + 1)) + 1


def phi_depth(k: int) -> int:
    """Levels consumed by the masked indicator product for k clusters."""
    counts = _merge_counts(k - 1)
    return max(max(counts), min(counts) + 1)
