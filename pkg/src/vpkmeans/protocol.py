"""Alice/Bob state machines for the private clustering protocol.

One round, run entirely by the computing party (Alice) on encrypted data:

1. distance grids: for every batch of points, row- and column-encoded
   squared distances to all centroids, built from cached replicated blocks
   of the key-holder's (Bob's) features plus Alice's plaintext grids;
2. packed argmin over every block at once (k = 2 bypasses packing and
   compares the two compact distance vectors directly);
3. per-cluster counts and per-dimension sums, reduced across blocks and
   ciphertexts;
4. Gaussian noise on the meaningful slots;
5. release to the key holder, who decrypts, divides, and returns the next
   plaintext centroids.

Everything the protocol encrypts is round-invariant, so per-round circuits
always start from fresh or depth-1 cached ciphertexts and the released
centroids structurally refresh the pipeline; no bootstrapping exists in the
engine.  All per-feature arithmetic is accumulated in global feature order,
which makes the final centroids bit-identical under any re-assignment of
features to parties.

Deterministic randomness contracts (mirrored by the plaintext oracle):

* initial centroids: ``init_centroids(k, d, bound, seed)``;
* re-initialization of a cluster with noisy count below 1 in round ``t``:
  ``numpy.random.default_rng([seed, t, cluster, 0x7E1]).uniform(-B, B, d)``;
* DP noise: one ``default_rng([seed, 0xD9])`` stream per run;
* simulated decryption shares: ``default_rng([seed, 0x5A])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import packed_matrix as pm
from . import secure_argmin as sa
from .dp_accounting import NoiseScales, PrivacyBudget, RoundBudget, per_round_budget, perturb_aggregates
from .packed_matrix import COLUMN, ROW, PackedLayout
from .slot_engine import EngineConfig, SlotEngine, SlotVector, ciphertext_size_bytes

COMPUTING = "computing"
KEY_HOLDER = "key-holder"
DATA_OWNER = "data-owner"

PUBLIC_KEY = "public-key"
ENCRYPTED_FEATURES = "encrypted-features"
NOISY_AGGREGATES = "noisy-aggregates"
CENTROIDS = "centroids"
DECRYPTION_SHARE = "decryption-share"

TWO_PARTY = "two-party"
SERVER_AIDED = "server-aided"
MPC_SIMULATED = "mpc-simulated"

SETUP_ROUND = 0  # transcript round index for pre-iteration messages


class ProtocolError(Exception):
    pass


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class DataPartition:
    """One party's vertical slice of the dataset.

    ``feature_indices`` are the global column positions of this party's
    features in the joint dataset; they default to a contiguous range when
    partitions are assembled via :func:`split_features`.
    """

    owner: str
    features: np.ndarray  # n x d_owner
    role: str = DATA_OWNER
    feature_indices: tuple[int, ...] = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ProtocolError(f"features for {self.owner!r} must be an n x d matrix")
        if not self.feature_indices:
            self.feature_indices = tuple(range(self.features.shape[1]))
        if len(self.feature_indices) != self.features.shape[1]:
            raise ProtocolError("feature_indices must match the feature count")

    @property
    def n(self) -> int:
        return self.features.shape[0]


def split_features(points: np.ndarray, split: list[list[int]], owners=None) -> list[DataPartition]:
    """Partition the columns of a joint matrix among parties."""
    points = np.asarray(points, dtype=np.float64)
    claimed = [i for cols in split for i in cols]
    if sorted(claimed) != list(range(points.shape[1])):
        raise ProtocolError(f"split {split} is not a partition of {points.shape[1]} features")
    owners = owners or [f"party{i}" for i in range(len(split))]
    return [
        DataPartition(owner=owners[i], features=points[:, cols], feature_indices=tuple(cols))
        for i, cols in enumerate(split)
    ]


@dataclass
class CentroidSet:
    centers: np.ndarray  # k x d
    bound: float
    round: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class Message:
    round: int
    sender: str
    receiver: str
    kind: str
    byte_size: int
    ciphertext_count: int = 0


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)

    def add(self, **kw) -> None:
        self.messages.append(Message(**kw))

    def by_kind(self, kind: str) -> list[Message]:
        return [m for m in self.messages if m.kind == kind]

    @property
    def total_bytes(self) -> int:
        return sum(m.byte_size for m in self.messages)

    @property
    def total_ciphertexts(self) -> int:
        return sum(m.ciphertext_count for m in self.messages)

    def bytes_by_kind(self) -> dict:
        out: dict = {}
        for m in self.messages:
            out[m.kind] = out.get(m.kind, 0) + m.byte_size
        return out

    def summary(self) -> dict:
        return {
            "messages": len(self.messages),
            "ciphertexts": self.total_ciphertexts,
            "bytes": self.total_bytes,
            "bytes_by_kind": self.bytes_by_kind(),
        }


@dataclass
class RunResult:
    centroids: CentroidSet
    transcript: Transcript
    history: list[np.ndarray]  # centers after every round, starting with the init
    round_depths: list[int]
    round_budget: RoundBudget | None
    noise: NoiseScales | None
    engine: SlotEngine


# ---------------------------------------------------------------------------
# initialization and update rules
# ---------------------------------------------------------------------------


def init_centroids(
    k: int,
    d: int,
    bound: float,
    seed: int,
    min_separation: float | None = None,
    max_attempts: int = 100,
) -> CentroidSet:
    """Uniform draws in [-B, B]^d, resampling candidates that land within
    ``min_separation`` of an accepted one (default B * sqrt(d) / (2k));
    after ``max_attempts`` the candidate is accepted unconditionally."""
    if k < 2:
        raise ProtocolError("k must be at least 2")
    if min_separation is None:
        min_separation = 2 * bound * math.sqrt(d) / (4 * k)
    rng = np.random.default_rng(seed)
    centers: list[np.ndarray] = []
    for _ in range(k):
        for _attempt in range(max_attempts):
            c = rng.uniform(-bound, bound, size=d)
            if all(np.linalg.norm(c - prev) >= min_separation for prev in centers):
                break
        centers.append(c)
    return CentroidSet(np.array(centers), bound=bound, round=0)


def reinit_draw(seed: int, round_index: int, cluster: int, bound: float, d: int) -> np.ndarray:
    """Replacement centroid for a cluster whose noisy count fell below 1."""
    rng = np.random.default_rng([seed, round_index, cluster, 0x7E1])
    return rng.uniform(-bound, bound, size=d)


def update_centroids(
    noisy_sums: np.ndarray,  # d x k
    noisy_counts: np.ndarray,  # k
    bound: float,
    seed: int,
    round_index: int,
) -> CentroidSet:
    """Divide sums by counts, clamping coordinates to the domain; clusters
    with a noisy count below 1 are re-initialized uniformly."""
    noisy_sums = np.asarray(noisy_sums, dtype=np.float64)
    noisy_counts = np.asarray(noisy_counts, dtype=np.float64)
    d, k = noisy_sums.shape
    centers = np.empty((k, d))
    for j in range(k):
        if noisy_counts[j] < 1.0:
            centers[j] = reinit_draw(seed, round_index, j, bound, d)
        else:
            centers[j] = np.clip(noisy_sums[:, j] / noisy_counts[j], -bound, bound)
    return CentroidSet(centers, bound=bound, round=round_index)


# ---------------------------------------------------------------------------
# depth ledger
# ---------------------------------------------------------------------------


def release_depths(k: int, degree: int = sa.DEFAULT_DEGREE) -> tuple[int, int]:
    """Depth consumed by the released counts (T) and sums (S) ciphertexts."""
    cheb = sa.chebyshev_depth(degree)
    if k == 2:
        a = 2 + cheb  # scaled cache + square, then the comparison series
        return a + 2, a + 2  # mask+pack for T; value-mult+pack for S
    a = 2 + cheb + 1 + sa.phi_depth(k)  # distances, cmp, rank mask, indicator
    return a + 1, a + 2  # T: reduce + head mask; S: value mult + reduce + mask


def required_depth(k: int, degree: int = sa.DEFAULT_DEGREE) -> int:
    """Multiplicative depth of one protocol round for k clusters."""
    t_depth, s_depth = release_depths(k, degree)
    return max(t_depth, s_depth)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class _Batch:
    ct_index: int
    points: np.ndarray  # blocks_per_ct global point ids, -1 for unused
    offset: tuple[int, int] | None  # (row, col) for aligned batches
    tail_items: list[tuple[int, int]]  # (slot within ct, target block)
    valid_mask: np.ndarray | None = None  # slot-space 0/1 over valid blocks


def _plan_batches(n: int, layout: PackedLayout) -> list[_Batch]:
    S = layout.slot_count
    M, B, W = layout.block_dim, layout.blocks_per_ct, layout.width
    usable = layout.usable_slots
    batches = []
    for m in range(math.ceil(n / S)):
        in_ct = min(S, n - m * S)
        aligned = min(in_ct, usable)
        for r_off in range(M):
            for c_off in range(M):
                base = r_off * W + c_off
                if base >= aligned:
                    break
                points = np.full(B, -1, dtype=np.int64)
                for b in range(B):
                    slot = base + b * M
                    if slot < aligned:
                        points[b] = m * S + slot
                batches.append(_Batch(m, points, (r_off, c_off), []))
        # points past the aligned grid are re-packed one by one at setup
        tail = list(range(usable, in_ct))
        for start in range(0, len(tail), B):
            chunk = tail[start : start + B]
            points = np.full(B, -1, dtype=np.int64)
            items = []
            for b, slot in enumerate(chunk):
                points[b] = m * S + slot
                items.append((slot, b))
            batches.append(_Batch(m, points, None, items))
    for batch in batches:
        g = layout.grid()
        g[:, batch.points >= 0, :] = 1.0
        batch.valid_mask = layout.to_slots(g)
    return batches


# ---------------------------------------------------------------------------
# party state
# ---------------------------------------------------------------------------


class _KeyHolderState:
    """Bob: encrypts his features, decrypts aggregates, updates centroids."""

    def __init__(self, engine: SlotEngine, features: dict, n: int, bound: float, seed: int):
        self.engine = engine
        self.features = features  # global feature index -> values (n,)
        self.n = n
        self.bound = bound
        self.seed = seed

    def encrypt_features(self) -> dict:
        S = self.engine.config.slot_count
        out = {}
        for gidx, values in self.features.items():
            cts = []
            for m in range(math.ceil(self.n / S)):
                cts.append(self.engine.encrypt(values[m * S : (m + 1) * S]))
            out[gidx] = cts
        return out

    def update(self, s_released, t_released, k: int, d: int, round_index: int) -> CentroidSet:
        t = self.engine.decrypt(t_released)[:k]
        s = np.stack([self.engine.decrypt(sv)[:k] for sv in s_released])  # d x k
        return update_centroids(s, t, self.bound, self.seed, round_index)


class _ComputingState:
    """Alice: owns the plaintext side, all encrypted evaluation, and noise."""

    def __init__(
        self,
        engine: SlotEngine,
        layout: PackedLayout,
        k: int,
        n: int,
        bound: float,
        sign: sa.SignApproxConfig,
        alice_features: dict,
        feature_order: list,
    ):
        self.engine = engine
        self.layout = layout
        self.k = k
        self.n = n
        self.bound = bound
        self.d = len(feature_order)
        self.feature_order = feature_order  # global index -> "alice" | "bob"
        self.alice_features = alice_features
        self.scale = 1.0 / (self.d * (2.0 * bound) ** 2)
        self.sqrt_scale = math.sqrt(self.scale)
        self.cmp_cfg = replace(sign, input_scale=1.0)
        self.batches = None if k == 2 else _plan_batches(n, layout)
        self.scaled_blocks: dict = {}
        self.raw_blocks: dict = {}
        self.scaled_compact: dict = {}
        self.valid_compact: dict = {}
        self.compact_valid_masks: list = []

    # -- one-time encoding -------------------------------------------------

    def cache_bob(self, bob_cts: dict) -> None:
        if self.k == 2:
            self._cache_bob_compact(bob_cts)
        else:
            self._cache_bob_packed(bob_cts)

    def _extract(self, ct: SlotVector, batch: _Batch, scale: float) -> SlotVector:
        eng, lay = self.engine, self.layout
        if batch.offset is not None:
            r, c = batch.offset
            positions = [
                None if p < 0 else int(p - batch.ct_index * eng.config.slot_count)
                for p in batch.points
            ]
            return pm.batch_extract_replicate(eng, ct, positions, lay, scale=scale)
        # tail points: per-point mask and rotate into block-aligned slots
        selected = None
        for slot, block in batch.tail_items:
            sel = np.zeros(eng.config.slot_count)
            sel[slot] = scale
            single = eng.rotate(eng.mul(ct, eng.plaintext(sel)), slot - block * lay.block_dim)
            selected = single if selected is None else eng.add(selected, single)
        filled = pm.repl_no_padding(eng, selected, 0, lay, axis=COLUMN)
        return pm.repl_no_padding(eng, filled, 0, lay, axis=ROW)

    def _cache_bob_packed(self, bob_cts: dict) -> None:
        for gidx, cts in bob_cts.items():
            self.scaled_blocks[gidx] = [
                self._extract(cts[b.ct_index], b, self.sqrt_scale) for b in self.batches
            ]
            self.raw_blocks[gidx] = [
                self._extract(cts[b.ct_index], b, 1.0) for b in self.batches
            ]

    def _cache_bob_compact(self, bob_cts: dict) -> None:
        eng = self.engine
        S = eng.config.slot_count
        n_cts = math.ceil(self.n / S)
        for m in range(n_cts):
            in_ct = min(S, self.n - m * S)
            valid = np.zeros(S)
            valid[:in_ct] = 1.0
            if len(self.compact_valid_masks) <= m:
                self.compact_valid_masks.append(valid)
        sqrt_pt = eng.plaintext(np.full(S, self.sqrt_scale))
        for gidx, cts in bob_cts.items():
            self.scaled_compact[gidx] = [eng.mul(ct, sqrt_pt) for ct in cts]
            self.valid_compact[gidx] = [
                eng.mul(ct, eng.plaintext(self.compact_valid_masks[m]))
                for m, ct in enumerate(cts)
            ]

    # -- per-round circuits -------------------------------------------------

    def _centroid_grids(self, centers_scaled: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
        lay = self.layout
        col_vals = centers_scaled[:, l]  # k
        row_grid = lay.grid()
        row_grid[:, :, : self.k] = col_vals[None, None, :]
        col_grid = lay.grid()
        col_grid[: self.k, :, :] = col_vals[:, None, None]
        return lay.to_slots(row_grid), lay.to_slots(col_grid)

    def _alice_grids(self, batch: _Batch, l: int, centers_scaled: np.ndarray):
        lay = self.layout
        vals = np.where(
            batch.points >= 0,
            self.alice_features[l][np.maximum(batch.points, 0)] * self.sqrt_scale,
            0.0,
        )  # per block
        diff = vals[:, None] - centers_scaled[None, :, l]  # blocks x k
        sq = diff * diff
        row_grid = lay.grid()
        row_grid[:, :, : self.k] = sq[None, :, :]
        col_grid = lay.grid()
        col_grid[: self.k, :, :] = sq.T[:, :, None]
        return lay.to_slots(row_grid), lay.to_slots(col_grid)

    def round_packed(self, centroids: CentroidSet):
        eng, lay = self.engine, self.layout
        centers_scaled = centroids.centers * self.sqrt_scale
        t_total = None
        s_totals = [None] * self.d
        for bi, batch in enumerate(self.batches):
            row_acc = col_acc = None
            for l, owner in enumerate(self.feature_order):
                if owner == "bob":
                    rg, cg = self._centroid_grids(centers_scaled, l)
                    x = self.scaled_blocks[l][bi]
                    row_t = eng.sub(x, eng.plaintext(rg))
                    row_t = eng.mul(row_t, row_t)
                    col_t = eng.sub(x, eng.plaintext(cg))
                    col_t = eng.mul(col_t, col_t)
                else:
                    rg, cg = self._alice_grids(batch, l, centers_scaled)
                    row_t, col_t = eng.plaintext(rg), eng.plaintext(cg)
                row_acc = row_t if row_acc is None else eng.add(row_acc, row_t)
                col_acc = col_t if col_acc is None else eng.add(col_acc, col_t)
            a = sa.argmin_packed(eng, row_acc, col_acc, lay, self.cmp_cfg, valid_blocks=batch.valid_mask)
            t_total = a if t_total is None else eng.add(t_total, a)
            for l, owner in enumerate(self.feature_order):
                if owner == "bob":
                    term = eng.mul(a, self.raw_blocks[l][bi])
                else:
                    vals = np.where(
                        batch.points >= 0,
                        self.alice_features[l][np.maximum(batch.points, 0)],
                        0.0,
                    )
                    g = lay.grid()
                    g[:, :, :] = vals[None, :, None]
                    term = eng.mul(a, eng.plaintext(lay.to_slots(g)))
                s_totals[l] = term if s_totals[l] is None else eng.add(s_totals[l], term)

        head = eng.plaintext(lay.head_mask(self.k))
        t_released = eng.mul(pm.reduce_blocks(eng, t_total, lay), head)
        s_released = [eng.mul(pm.reduce_blocks(eng, s, lay), head) for s in s_totals]
        return s_released, t_released

    def _rotsum_all(self, v: SlotVector) -> SlotVector:
        eng = self.engine
        for i in range(int(math.log2(eng.config.slot_count))):
            v = eng.add(v, eng.rotate(v, 1 << i))
        return v

    def round_two(self, centroids: CentroidSet):
        eng = self.engine
        S = eng.config.slot_count
        centers_scaled = centroids.centers * self.sqrt_scale  # 2 x d
        e0 = np.zeros(S); e0[0] = 1.0
        e1 = np.zeros(S); e1[1] = 1.0
        t_released = None
        s_released = [None] * self.d
        for m, valid in enumerate(self.compact_valid_masks):
            dists = []
            for j in (0, 1):
                acc = None
                for l, owner in enumerate(self.feature_order):
                    c_val = centers_scaled[j, l]
                    if owner == "bob":
                        x = self.scaled_compact[l][m]
                        t = eng.sub(x, eng.plaintext(np.full(S, c_val)))
                        t = eng.mul(t, t)
                    else:
                        lo = m * S
                        xv = np.zeros(S)
                        chunk = self.alice_features[l][lo : lo + S] * self.sqrt_scale
                        xv[: chunk.size] = chunk
                        t = eng.plaintext((xv - c_val) ** 2)
                    acc = t if acc is None else eng.add(acc, t)
                dists.append(acc)
            a2 = sa.argmin_two(eng, dists[0], dists[1], self.cmp_cfg)
            a2v = eng.mul(a2, eng.plaintext(valid))
            a1v = eng.sub(eng.plaintext(valid), a2v)
            t1 = self._rotsum_all(a1v)
            t2 = self._rotsum_all(a2v)
            t_ct = eng.add(eng.mul(t1, eng.plaintext(e0)), eng.mul(t2, eng.plaintext(e1)))
            t_released = t_ct if t_released is None else eng.add(t_released, t_ct)
            for l, owner in enumerate(self.feature_order):
                if owner == "bob":
                    xv = self.valid_compact[l][m]
                else:
                    lo = m * S
                    raw = np.zeros(S)
                    chunk = self.alice_features[l][lo : lo + S]
                    raw[: chunk.size] = chunk
                    xv = eng.plaintext(raw * valid)
                prod = eng.mul(a2, xv)
                s2 = self._rotsum_all(prod)
                s1 = self._rotsum_all(eng.sub(xv, prod))
                s_ct = eng.add(eng.mul(s1, eng.plaintext(e0)), eng.mul(s2, eng.plaintext(e1)))
                s_released[l] = s_ct if s_released[l] is None else eng.add(s_released[l], s_ct)
        return s_released, t_released

    def run_round(self, centroids: CentroidSet):
        if self.k == 2:
            return self.round_two(centroids)
        return self.round_packed(centroids)


# ---------------------------------------------------------------------------
# protocol runners
# ---------------------------------------------------------------------------


def _feature_map(partitions: list[DataPartition], computing: str):
    """Global feature index -> owner side ('alice'/'bob') and value column."""
    d = sum(p.features.shape[1] for p in partitions)
    order = [None] * d
    alice_feats: dict = {}
    bob_feats: dict = {}
    for p in partitions:
        side = "alice" if p.owner == computing else "bob"
        for col, gidx in enumerate(p.feature_indices):
            if gidx >= d or order[gidx] is not None:
                raise ProtocolError("feature_indices do not form a partition")
            order[gidx] = side
            (alice_feats if side == "alice" else bob_feats)[gidx] = p.features[:, col]
    return order, alice_feats, bob_feats


def run(
    alice: DataPartition,
    bob: DataPartition,
    budget: PrivacyBudget | None,
    rounds: int,
    k: int,
    bound: float,
    engine: SlotEngine | None = None,
    layout: PackedLayout | None = None,
    seed: int = 0,
    sign: sa.SignApproxConfig | None = None,
    init: CentroidSet | None = None,
    convergence: str = "fixed",
    shift_tol: float | None = None,
    paper_noise_formulas: bool = False,
) -> RunResult:
    """Execute setup plus ``rounds`` iterations between two parties.

    ``alice`` is the computing party (plaintext features), ``bob`` the key
    holder (encrypted features).  With ``budget=None`` no noise is added.
    ``convergence='shift'`` stops early once the largest centroid movement
    drops below ``shift_tol`` (default 1e-4 * bound); the privacy split
    always uses the configured ``rounds``.
    """
    return _run_internal(
        [replace_role(alice, COMPUTING), replace_role(bob, KEY_HOLDER)],
        model=TWO_PARTY,
        budget=budget,
        rounds=rounds,
        k=k,
        bound=bound,
        engine=engine,
        layout=layout,
        seed=seed,
        sign=sign,
        init=init,
        convergence=convergence,
        shift_tol=shift_tol,
        paper_noise_formulas=paper_noise_formulas,
    )


def replace_role(p: DataPartition, role: str) -> DataPartition:
    return DataPartition(p.owner, p.features, role, p.feature_indices)


def run_multiparty(
    partitions: list[DataPartition],
    model: str,
    budget: PrivacyBudget | None,
    rounds: int,
    k: int,
    bound: float,
    engine: SlotEngine | None = None,
    layout: PackedLayout | None = None,
    seed: int = 0,
    sign: sa.SignApproxConfig | None = None,
    init: CentroidSet | None = None,
    computing_party: str | None = None,
) -> RunResult:
    """N-party deployments.

    server-aided: the party with the most features computes (Alice), the
    next one holds the key (Bob); everyone else encrypts under Bob's key and
    uploads.  mpc-simulated: the key is shared by all non-computing parties;
    decryption of each round's aggregates is modeled as one additive share
    per party whose sum is the plaintext, and the computing party performs
    the centroid update itself.
    """
    if model not in (SERVER_AIDED, MPC_SIMULATED):
        raise ProtocolError(f"unknown deployment model {model!r}")
    if len(partitions) < 2:
        raise ProtocolError("need at least two partitions")
    ordered = sorted(partitions, key=lambda p: -p.features.shape[1])
    if computing_party is not None:
        ordered.sort(key=lambda p: (p.owner != computing_party, -p.features.shape[1]))
    roles = [replace_role(ordered[0], COMPUTING)] + [
        replace_role(p, KEY_HOLDER if (model == SERVER_AIDED and i == 0) else DATA_OWNER)
        for i, p in enumerate(ordered[1:])
    ]
    return _run_internal(
        roles,
        model=model,
        budget=budget,
        rounds=rounds,
        k=k,
        bound=bound,
        engine=engine,
        layout=layout,
        seed=seed,
        sign=sign,
        init=init,
        convergence="fixed",
        shift_tol=None,
        paper_noise_formulas=False,
    )


def _run_internal(
    parties: list[DataPartition],
    model: str,
    budget,
    rounds,
    k,
    bound,
    engine,
    layout,
    seed,
    sign,
    init,
    convergence,
    shift_tol,
    paper_noise_formulas,
) -> RunResult:
    sign = sign or sa.SignApproxConfig()
    n = parties[0].n
    if any(p.n != n for p in parties):
        raise ProtocolError("all parties must hold the same number of records")
    for p in parties:
        if p.features.size and np.max(np.abs(p.features)) > bound + 1e-12:
            raise ProtocolError(f"features of {p.owner!r} exceed the domain bound {bound}")

    computing = next(p for p in parties if p.role == COMPUTING)
    key_holder = next((p for p in parties if p.role == KEY_HOLDER), None)
    owners = [p for p in parties if p.role == DATA_OWNER]

    order, alice_feats, bob_feats = _feature_map(parties, computing.owner)
    d = len(order)
    depth = required_depth(k, sign.degree)
    if engine is None:
        engine = SlotEngine(EngineConfig(depth_budget=depth))
    elif engine.config.depth_budget < depth:
        raise ProtocolError(
            f"engine depth budget {engine.config.depth_budget} below required {depth} for k={k}"
        )
    if layout is None:
        layout = PackedLayout(k, slot_count=engine.config.slot_count)
    if layout.mode != pm.UNPADDED:
        # the optimized distance encoding removed the transpose, which was
        # the only operation needing power-of-two padding
        raise ProtocolError("the protocol packs blocks without padding; use an unpadded layout")
    if layout.k != k:
        raise ProtocolError(f"layout is for k={layout.k}, run is for k={k}")

    transcript = Transcript()
    fresh_bytes = ciphertext_size_bytes(engine.config.depth_budget, engine.config)
    key_owner = key_holder.owner if key_holder else "joint-key"

    # setup: key publication, feature upload, cache building
    non_computing = [p for p in parties if p.role != COMPUTING]
    if model == MPC_SIMULATED:
        transcript.add(round=SETUP_ROUND, sender=key_owner, receiver=computing.owner,
                       kind=PUBLIC_KEY, byte_size=fresh_bytes, ciphertext_count=0)
    else:
        for p in parties:
            if p.owner != key_owner:
                transcript.add(round=SETUP_ROUND, sender=key_owner, receiver=p.owner,
                               kind=PUBLIC_KEY, byte_size=fresh_bytes, ciphertext_count=0)

    holder = _KeyHolderState(engine, bob_feats, n, bound, seed)
    bob_cts = holder.encrypt_features()
    for p in non_computing:
        gidxs = [g for g in p.feature_indices if g in bob_cts]
        if not gidxs:
            continue
        count = sum(len(bob_cts[g]) for g in gidxs)
        size = sum(engine.size_bytes(ct) for g in gidxs for ct in bob_cts[g])
        transcript.add(round=SETUP_ROUND, sender=p.owner, receiver=computing.owner,
                       kind=ENCRYPTED_FEATURES, byte_size=size, ciphertext_count=count)

    alice = _ComputingState(engine, layout, k, n, bound, sign, alice_feats, order)
    alice.cache_bob(bob_cts)

    round_budget = noise = None
    noise_rng = np.random.default_rng([seed, 0xD9])
    share_rng = np.random.default_rng([seed, 0x5A])
    if budget is not None:
        round_budget = per_round_budget(budget)
        noise = NoiseScales.from_budget(round_budget, bound, paper_formulas=paper_noise_formulas)

    centroids = init or init_centroids(k, d, bound, seed)
    history = [np.array(centroids.centers)]
    round_depths = []
    meaningful = list(range(k))
    if shift_tol is None:
        shift_tol = 1e-4 * bound

    for t in range(1, rounds + 1):
        s_rel, t_rel = alice.run_round(centroids)
        if noise is not None:
            s_rel, t_rel = perturb_aggregates(engine, s_rel, t_rel, noise, meaningful, noise_rng)
        round_depths.append(max([t_rel.depth_consumed] + [s.depth_consumed for s in s_rel]))
        agg_bytes = engine.size_bytes(t_rel) + sum(engine.size_bytes(s) for s in s_rel)
        receiver = key_owner if model != MPC_SIMULATED else "broadcast"
        transcript.add(round=t, sender=computing.owner, receiver=receiver,
                       kind=NOISY_AGGREGATES, byte_size=agg_bytes, ciphertext_count=d + 1)

        if model == MPC_SIMULATED:
            # each key-share holder returns one additive share; their sum is
            # the plaintext (reconstruction is exact by simulation contract)
            share_bytes = math.ceil((d + 1) * ciphertext_size_bytes(0, engine.config) / 2)
            for p in non_computing:
                share_rng.normal(size=(d + 1) * k)  # the share material itself
                transcript.add(round=t, sender=p.owner, receiver=computing.owner,
                               kind=DECRYPTION_SHARE, byte_size=share_bytes, ciphertext_count=0)
            t_vals = engine.decrypt(t_rel)[:k]
            s_vals = np.stack([engine.decrypt(s)[:k] for s in s_rel])
            centroids = update_centroids(s_vals, t_vals, bound, seed, t)
        else:
            centroids = holder.update(s_rel, t_rel, k, d, t)
            transcript.add(round=t, sender=key_owner, receiver=computing.owner,
                           kind=CENTROIDS, byte_size=k * d * 8, ciphertext_count=0)

        history.append(np.array(centroids.centers))
        if convergence == "shift" and len(history) >= 2:
            if np.max(np.abs(history[-1] - history[-2])) < shift_tol:
                break

    if model == SERVER_AIDED:
        for p in owners:
            transcript.add(round=len(history) - 1, sender=computing.owner, receiver=p.owner,
                           kind=CENTROIDS, byte_size=k * d * 8, ciphertext_count=0)
    elif model == MPC_SIMULATED:
        transcript.add(round=len(history) - 1, sender=computing.owner, receiver="broadcast",
                       kind=CENTROIDS, byte_size=k * d * 8, ciphertext_count=0)

    return RunResult(
        centroids=centroids,
        transcript=transcript,
        history=history,
        round_depths=round_depths,
        round_budget=round_budget,
        noise=noise,
        engine=engine,
    )


# ---------------------------------------------------------------------------
# communication estimator (no data, exact counts, modeled sizes)
# ---------------------------------------------------------------------------


def estimate_transcript(
    n: int,
    k: int,
    d: int,
    d_bob: int,
    rounds: int,
    cfg: EngineConfig | None = None,
    degree: int = sa.DEFAULT_DEGREE,
    parties: int = 2,
    model: str = TWO_PARTY,
) -> Transcript:
    """Predict the transcript of a run without executing it.

    Counts follow the exact formulas (uploads = d_bob * ceil(n/slots);
    d + 1 aggregate ciphertexts down and k*d plaintext reals up per round);
    sizes come from the engine's size model at the levels the circuits leave.
    Must agree with a real run byte-for-byte for the same parameters.
    """
    depth = required_depth(k, degree)
    base = cfg or EngineConfig(depth_budget=depth)
    cfg = EngineConfig(
        slot_count=base.slot_count,
        depth_budget=depth,
        approx_perturbation=base.approx_perturbation,
        size_model=base.size_model,
    )
    t_depth, s_depth = release_depths(k, degree)
    fresh = ciphertext_size_bytes(depth, cfg)
    t_bytes = ciphertext_size_bytes(depth - t_depth, cfg)
    s_bytes = ciphertext_size_bytes(depth - s_depth, cfg)
    uploads = d_bob * math.ceil(n / cfg.slot_count)

    tr = Transcript()
    pk_messages = 1 if model in (TWO_PARTY, MPC_SIMULATED) else parties - 1
    for i in range(pk_messages):
        tr.add(round=SETUP_ROUND, sender="keyholder", receiver=f"party{i}",
               kind=PUBLIC_KEY, byte_size=fresh, ciphertext_count=0)
    tr.add(round=SETUP_ROUND, sender="owners", receiver="computing",
           kind=ENCRYPTED_FEATURES, byte_size=uploads * fresh, ciphertext_count=uploads)
    for t in range(1, rounds + 1):
        tr.add(round=t, sender="computing", receiver="keyholder", kind=NOISY_AGGREGATES,
               byte_size=d * s_bytes + t_bytes, ciphertext_count=d + 1)
        if model == MPC_SIMULATED:
            share = math.ceil((d + 1) * ciphertext_size_bytes(0, cfg) / 2)
            for p in range(parties - 1):
                tr.add(round=t, sender=f"party{p}", receiver="computing",
                       kind=DECRYPTION_SHARE, byte_size=share, ciphertext_count=0)
        else:
            tr.add(round=t, sender="keyholder", receiver="computing", kind=CENTROIDS,
                   byte_size=k * d * 8, ciphertext_count=0)
    if model == SERVER_AIDED:
        for p in range(parties - 2):
            tr.add(round=rounds, sender="computing", receiver=f"owner{p}",
                   kind=CENTROIDS, byte_size=k * d * 8, ciphertext_count=0)
    elif model == MPC_SIMULATED:
        tr.add(round=rounds, sender="computing", receiver="broadcast",
               kind=CENTROIDS, byte_size=k * d * 8, ciphertext_count=0)
    return tr
