"""Experiment harness: datasets, plaintext baselines, metrics, and reporting.

The plaintext Lloyd implementation here doubles as the protocol's oracle.
Its ``matching`` tie rule reproduces the protocol's assignment semantics
exactly -- soft memberships from the same published comparison series and
rank-1 indicator, evaluated per point with plain scalar/numpy arithmetic
(numpy's ``chebval``, not the engine's Clenshaw kernel), plus the same
centroid update and re-initialization contracts.  With zero noise and an
exact engine the secure trajectory must match it to float accuracy; points
equidistant (or nearly so, within the comparison's tie margin) from their
two closest centroids activate no indicator on either side and stay
unassigned.  The ``standard`` tie rule is the conventional baseline:
hard argmin, lowest index wins ties.
"""

from __future__ import annotations

import csv as _csv
import math
import time
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from numpy.polynomial.chebyshev import chebval
from scipy.optimize import linear_sum_assignment

from . import protocol as proto
from .dp_accounting import PrivacyBudget
from .protocol import CentroidSet, Transcript, init_centroids, split_features
from .secure_argmin import SignApproxConfig, cmp_series
from .slot_engine import EngineConfig, SizeModel, SlotEngine

STANDARD = "standard"
MATCHING = "matching"


class BenchError(Exception):
    pass


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    preprocessing: str = ""
    bound: float | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def load_csv(path, normalize: bool = False, label_column: int | None = None, delimiter: str = ",") -> Dataset:
    """Load a rectangular numeric CSV (header row optional).

    With ``normalize`` each feature is clipped at its 95th percentile and
    min-max scaled into [0, 1]; constant features map to all zeros.
    """
    rows = []
    labels = []
    width = None
    with open(path, newline="") as fh:
        reader = _csv.reader(fh, delimiter=delimiter)
        for rno, row in enumerate(reader):
            row = [cell.strip() for cell in row if cell.strip() != ""] if row else []
            if not row:
                continue
            if width is None:
                width = len(row)
                try:
                    [float(c) for c in row]
                except ValueError:
                    continue  # header
            if len(row) != width:
                raise BenchError(f"{path}: row {rno + 1} has {len(row)} cells, expected {width}")
            vals = []
            for cno, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise BenchError(f"{path}: non-numeric cell at row {rno + 1}, column {cno + 1}: {cell!r}")
            rows.append(vals)
    if not rows:
        raise BenchError(f"{path}: no data rows")
    data = np.array(rows)
    lab = None
    if label_column is not None:
        lab = data[:, label_column].astype(np.int64)
        data = np.delete(data, label_column, axis=1)
    note = ""
    if normalize:
        hi = np.percentile(data, 95, axis=0)
        data = np.minimum(data, hi[None, :])
        lo, top = data.min(axis=0), data.max(axis=0)
        span = top - lo
        out = np.zeros_like(data)
        nz = span > 0
        out[:, nz] = (data[:, nz] - lo[nz]) / span[nz]
        data = out
        note = "clipped at 95th percentile, min-max scaled to [0, 1]"
    return Dataset(points=data, labels=lab, name=str(path), preprocessing=note,
                   bound=1.0 if normalize else None)


def recenter(ds: Dataset) -> Dataset:
    """Shift [0, 1] features to [-1/2, 1/2] so the protocol's domain bound
    (and the sum sensitivity 2B) is as tight as possible."""
    return Dataset(points=ds.points - 0.5, labels=ds.labels, name=ds.name,
                   preprocessing=ds.preprocessing + " + recentered to [-0.5, 0.5]",
                   bound=0.5)


def gen_synthetic(
    n: int,
    k: int,
    d: int,
    bound: float,
    cluster_std: float,
    seed: int,
    min_center_dist: float | None = None,
    name: str | None = None,
) -> Dataset:
    """Gaussian blobs around k spaced-out centers in [-B, B]^d, clipped to the
    domain, with ground-truth labels; points are split as evenly as possible."""
    if n < k:
        raise BenchError("need at least one point per cluster")
    centers = init_centroids(k, d, bound, seed, min_separation=min_center_dist).centers
    rng = np.random.default_rng([seed, 0xB10B])
    counts = [n // k + (1 if j < n % k else 0) for j in range(k)]
    pts, labs = [], []
    for j, cnt in enumerate(counts):
        pts.append(centers[j] + rng.normal(0.0, cluster_std, size=(cnt, d)))
        labs.append(np.full(cnt, j, dtype=np.int64))
    points = np.clip(np.concatenate(pts), -bound, bound)
    labels = np.concatenate(labs)
    order = rng.permutation(n)
    return Dataset(points=points[order], labels=labels[order],
                   name=name or f"Synth-{n}-{k}-{d}", preprocessing=f"std={cluster_std}",
                   bound=bound)


# ---------------------------------------------------------------------------
# plaintext Lloyd (baseline and protocol oracle)
# ---------------------------------------------------------------------------


@dataclass
class LloydResult:
    centroids: CentroidSet
    history: list[np.ndarray]
    unassigned: list[int] = field(default_factory=list)


def _soft_memberships(points: np.ndarray, centers: np.ndarray, sign: SignApproxConfig, scale: float) -> np.ndarray:
    """Per-point memberships exactly as the encrypted pipeline computes them:
    scaled squared distances, polynomial comparisons, ranks, indicator."""
    sqrt_s = math.sqrt(scale)
    xs = points * sqrt_s
    cs = centers * sqrt_s
    k = centers.shape[0]
    diff = xs[:, None, :] - cs[None, :, :]
    dist = np.einsum("ijl,ijl->ij", diff, diff)  # n x k, scaled
    coeffs = cmp_series(sign)
    if k == 2:
        a2 = chebval(np.clip(dist[:, 0] - dist[:, 1], -1.0, 1.0), coeffs)
        return np.stack([1.0 - a2, a2], axis=1)
    u = np.clip(dist[:, :, None] - dist[:, None, :], -1.0, 1.0)  # u[i, c, r] = d_c - d_r
    comps = chebval(u, coeffs)
    ranks = 0.5 + comps.sum(axis=2)  # n x k
    w = np.ones_like(ranks)
    norm = 1.0
    for j in range(2, k + 1):
        w *= ranks - j
        norm *= 1.0 - j
    return w / norm


def lloyd_plaintext(
    data: Dataset | np.ndarray,
    init: CentroidSet,
    rounds: int,
    tie_rule: str = STANDARD,
    sign: SignApproxConfig | None = None,
    seed: int = 0,
) -> LloydResult:
    """Reference Lloyd iteration with the protocol's update policy.

    ``standard``: hard nearest-centroid assignment, lowest index on ties.
    ``matching``: the protocol-equivalent soft assignment described in the
    module docstring, for oracle comparisons against zero-noise runs.
    Both share the centroid update: counts below 1 re-initialize the cluster
    from ``default_rng([seed, round, cluster, 0x7E1])``, coordinates clamp
    to the domain.
    """
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    centers = np.array(init.centers)
    k, d = centers.shape
    bound = init.bound
    sign = sign or SignApproxConfig()
    scale = 1.0 / (d * (2.0 * bound) ** 2)
    history = [np.array(centers)]
    unassigned = []

    for t in range(1, rounds + 1):
        if tie_rule == MATCHING:
            w = _soft_memberships(points, centers, sign, scale)
            counts = w.sum(axis=0)
            sums = w.T @ points  # k x d
            unassigned.append(int(np.sum(w.max(axis=1) < 0.5)))
        elif tie_rule == STANDARD:
            diff = points[:, None, :] - centers[None, :, :]
            dist = np.einsum("ijl,ijl->ij", diff, diff)
            assign = np.argmin(dist, axis=1)
            counts = np.bincount(assign, minlength=k).astype(np.float64)
            sums = np.zeros((k, d))
            np.add.at(sums, assign, points)
            unassigned.append(0)
        else:
            raise BenchError(f"unknown tie rule {tie_rule!r}")

        for j in range(k):
            if counts[j] < 1.0:
                rng = np.random.default_rng([seed, t, j, 0x7E1])
                centers[j] = rng.uniform(-bound, bound, size=d)
            else:
                centers[j] = np.clip(sums[j] / counts[j], -bound, bound)
        history.append(np.array(centers))

    return LloydResult(CentroidSet(centers, bound=bound, round=rounds), history, unassigned)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def normalized_loss(data: Dataset | np.ndarray, centroids: CentroidSet | np.ndarray) -> float:
    """Mean over points of the squared distance to the nearest centroid."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data)
    centers = centroids.centers if isinstance(centroids, CentroidSet) else np.asarray(centroids)
    diff = points[:, None, :] - centers[None, :, :]
    dist = np.einsum("ijl,ijl->ij", diff, diff)
    return float(dist.min(axis=1).mean())


def cluster_accuracy(data: Dataset, centroids: CentroidSet | np.ndarray, labels=None) -> float:
    """Fraction of points whose nearest centroid matches the ground-truth
    label under the best centroid-to-label bijection (exhaustive for k <= 8,
    assignment solver above -- same optimum either way)."""
    labels = data.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise BenchError("cluster_accuracy needs ground-truth labels")
    centers = centroids.centers if isinstance(centroids, CentroidSet) else np.asarray(centroids)
    k = centers.shape[0]
    points = data.points if isinstance(data, Dataset) else np.asarray(data)
    diff = points[:, None, :] - centers[None, :, :]
    pred = np.argmin(np.einsum("ijl,ijl->ij", diff, diff), axis=1)
    agree = np.zeros((k, k))
    for p, l in zip(pred, labels):
        agree[p, l] += 1
    if k <= 8:
        best = max(sum(agree[c, pi[c]] for c in range(k)) for pi in permutations(range(k)))
    else:
        rows, cols = linear_sum_assignment(-agree)
        best = agree[rows, cols].sum()
    return float(best) / points.shape[0]


# ---------------------------------------------------------------------------
# network model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkConfig:
    name: str
    bandwidth_mbps: float
    delay_ms: float
    jitter_ms: float = 0.0
    loss_pct: float = 0.0
    burst_kb: float | None = None
    quantum: float | None = None
    r2q: float | None = None

    def __post_init__(self):
        if self.bandwidth_mbps <= 0:
            raise BenchError("bandwidth must be positive")
        if self.delay_ms < 0:
            raise BenchError("delay must be non-negative")


NETWORK_PROFILES = {
    p.name: p
    for p in [
        NetworkConfig("LAN500", 500, 1, 0.2, 0.0, None, 1500, 10),
        NetworkConfig("LAN1000", 1000, 0.3, 0.02, 0.0, None, 3000, 15),
        NetworkConfig("LAN10000", 10000, 0.1, 0.01, 0.0, None, 9000, 25),
        NetworkConfig("regWAN100", 100, 20, 15, 0.1, 500, 1200, 10),
        NetworkConfig("regWAN250", 250, 15, 5, 0.1, 1000, 1500, 20),
        NetworkConfig("regWAN500", 500, 10, 2, 0.1, 1500, 1500, 25),
        NetworkConfig("ccWAN50", 50, 150, 25, 0.5, 500, 1000, 10),
        NetworkConfig("ccWAN100", 100, 120, 15, 0.3, 1000, 1000, 15),
        NetworkConfig("ccWAN200", 200, 100, 10, 0.2, 2000, 1200, 20),
        NetworkConfig("crpWAN500", 500, 50, 5, 0.1, 1000, 1500, 15),
    ]
}


def estimate_wallclock(transcript: Transcript, net: NetworkConfig, compute_seconds: float = 0.0) -> float:
    """compute time + transfer time + round-trip latency.

    Transfer is total bytes over the configured bandwidth; each protocol
    round counts as one sequential exchange (two if decryption shares flow
    back), plus one for setup.  Jitter and packet loss are carried in the
    profile but ignored here -- the estimator targets order-of-magnitude
    comparisons and there is no retransmission model.
    """
    if not transcript.messages:
        return compute_seconds
    bits = transcript.total_bytes * 8.0
    transfer = bits / (net.bandwidth_mbps * 1e6)
    rounds = {m.round for m in transcript.messages if m.round > 0}
    per_round = 2 if transcript.by_kind(proto.DECRYPTION_SHARE) else 1
    exchanges = 1 + per_round * len(rounds)
    return compute_seconds + transfer + exchanges * 2.0 * net.delay_ms / 1000.0


# ---------------------------------------------------------------------------
# size-model calibration
# ---------------------------------------------------------------------------


def calibrate_size_model(
    target_bytes: float, n: int, k: int, d: int, d_bob: int, rounds: int,
    slot_count: int = 1 << 14,
) -> SizeModel:
    """Fit bytes-per-slot-per-level so the modeled total for one reference
    configuration hits a measured grand total (zero base overhead)."""
    unit = SizeModel(bytes_per_slot_per_level=1.0, base_overhead_bytes=0.0)
    cfg = EngineConfig(slot_count=slot_count, depth_budget=proto.required_depth(k), size_model=unit)
    tr = proto.estimate_transcript(n, k, d, d_bob, rounds, cfg)
    ct_bytes = sum(m.byte_size for m in tr.messages if m.ciphertext_count or m.kind == proto.PUBLIC_KEY)
    plain_bytes = tr.total_bytes - ct_bytes
    b = (target_bytes - plain_bytes) / ct_bytes
    if b <= 0:
        raise BenchError("calibration target smaller than the plaintext share")
    return SizeModel(bytes_per_slot_per_level=b, base_overhead_bytes=0.0)


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def s1_style_config(seed: int = 7, **overrides) -> dict:
    """Synthetic stand-in for the classic 15-cluster 2-d benchmark set:
    5,000 points, well-separated Gaussian blobs, plaintext loss ~0.003."""
    cfg = {
        "name": "S1-synthetic",
        "dataset": {
            "synthetic": {
                "n": 5000, "k": 15, "d": 2, "bound": 0.5,
                "cluster_std": 0.03, "min_center_dist": 0.24, "seed": seed,
            }
        },
        "k": 15,
        "rounds": 10,
        "init_separation": 0.24,
        "budget": {"epsilon": 1.0, "delta": "1/n", "composition": "auto"},
        "seeds": {"count": 10, "base": 100},
        "network_profiles": ["LAN1000", "regWAN100"],
    }
    cfg.update(overrides)
    return cfg


def _build_dataset(spec: dict) -> Dataset:
    if "synthetic" in spec:
        s = spec["synthetic"]
        return gen_synthetic(
            n=s["n"], k=s["k"], d=s["d"], bound=s.get("bound", 1.0),
            cluster_std=s["cluster_std"], seed=s.get("seed", 0),
            min_center_dist=s.get("min_center_dist"),
        )
    if "csv" in spec:
        c = spec["csv"]
        ds = load_csv(c["path"], normalize=c.get("normalize", True),
                      label_column=c.get("label_column"))
        if c.get("recenter", True) and c.get("normalize", True):
            ds = recenter(ds)
        return ds
    raise BenchError("dataset spec needs a 'synthetic' or 'csv' entry")


def run_experiment(config: dict) -> dict:
    """Run the secure protocol and the plaintext baseline over several seeds
    and assemble the report (metrics, DP parameters, transcript summary,
    wall-clock estimates)."""
    for key in ("dataset", "k", "rounds"):
        if key not in config:
            raise BenchError(f"config is missing required field {key!r}")
    ds = _build_dataset(config["dataset"])
    k = int(config["k"])
    rounds = int(config["rounds"])
    bound = float(config.get("bound", ds.bound if ds.bound else 1.0))
    if np.max(np.abs(ds.points)) > bound + 1e-12:
        raise BenchError(f"data exceeds bound {bound}; set 'bound' explicitly")

    d = ds.d
    split = config.get("feature_split")
    if split is None:
        cut = (d + 1) // 2
        split = [list(range(cut)), list(range(cut, d))]
    if any(not cols for cols in split):
        raise BenchError("every party in feature_split needs at least one feature")
    model = config.get("model", proto.TWO_PARTY if len(split) == 2 else proto.SERVER_AIDED)

    budget = None
    if config.get("budget"):
        b = config["budget"]
        delta = b.get("delta", 1e-5)
        if isinstance(delta, str):
            if delta.strip() != "1/n":
                raise BenchError(f"unsupported delta spec {delta!r}")
            delta = 1.0 / ds.n
        budget = PrivacyBudget(
            epsilon_total=float(b.get("epsilon", 1.0)),
            delta_total=float(delta),
            rounds=rounds,
            composition=b.get("composition", "auto"),
        )

    sign = SignApproxConfig(**config.get("sign", {}))
    seeds_cfg = config.get("seeds", {"count": 1, "base": 0})
    seeds = seeds_cfg if isinstance(seeds_cfg, list) else [
        seeds_cfg.get("base", 0) + i for i in range(seeds_cfg.get("count", 1))
    ]

    eng_cfg = config.get("engine", {})
    size_model = SizeModel(**eng_cfg["size_model"]) if "size_model" in eng_cfg else SizeModel()
    slot_count = int(eng_cfg.get("slot_count", 1 << 14))

    init_sep = config.get("init_separation")

    per_seed = []
    transcript_summary = None
    transcript = None
    dp_info = None
    t0 = time.monotonic()
    for seed in seeds:
        engine = SlotEngine(EngineConfig(
            slot_count=slot_count,
            depth_budget=proto.required_depth(k, sign.degree),
            approx_perturbation=float(eng_cfg.get("approx_perturbation", 0.0)),
            size_model=size_model,
        ))
        parts = split_features(ds.points, split)
        init = init_centroids(k, d, bound, seed, min_separation=init_sep)
        if len(split) == 2 and model == proto.TWO_PARTY:
            result = proto.run(parts[0], parts[1], budget, rounds, k=k, bound=bound,
                               engine=engine, seed=seed, sign=sign, init=init)
        else:
            result = proto.run_multiparty(parts, model, budget, rounds, k=k, bound=bound,
                                          engine=engine, seed=seed, sign=sign, init=init)
        base = lloyd_plaintext(ds, init, rounds, tie_rule=STANDARD, seed=seed)
        entry = {
            "seed": seed,
            "secure_loss": normalized_loss(ds, result.centroids),
            "baseline_loss": normalized_loss(ds, base.centroids),
            "round_depths": result.round_depths,
        }
        if ds.labels is not None:
            entry["secure_accuracy"] = cluster_accuracy(ds, result.centroids)
            entry["baseline_accuracy"] = cluster_accuracy(ds, base.centroids)
        per_seed.append(entry)
        if transcript_summary is None:
            transcript = result.transcript
            transcript_summary = result.transcript.summary()
            if result.round_budget is not None:
                dp_info = {
                    "epsilon_per_round": result.round_budget.epsilon,
                    "delta_per_round": result.round_budget.delta,
                    "composition": result.round_budget.mode,
                    "sigma_sum": result.noise.sigma_sum,
                    "sigma_count": result.noise.sigma_count,
                }
    compute_seconds = float(config.get("compute_seconds", time.monotonic() - t0))

    def seed_mean(key):
        vals = [e[key] for e in per_seed if key in e]
        return float(np.mean(vals)) if vals else None

    wallclock = {}
    for name in config.get("network_profiles", []):
        if name not in NETWORK_PROFILES:
            raise BenchError(f"unknown network profile {name!r}")
        wallclock[name] = estimate_wallclock(transcript, NETWORK_PROFILES[name], compute_seconds)

    report = {
        "name": config.get("name", ds.name),
        "dataset": {"name": ds.name, "n": ds.n, "d": ds.d, "preprocessing": ds.preprocessing},
        "k": k,
        "rounds": rounds,
        "model": model,
        "per_seed": per_seed,
        "mean": {
            "secure_loss": seed_mean("secure_loss"),
            "baseline_loss": seed_mean("baseline_loss"),
            "secure_accuracy": seed_mean("secure_accuracy"),
            "baseline_accuracy": seed_mean("baseline_accuracy"),
        },
        "dp": dp_info,
        "transcript": transcript_summary,
        "compute_seconds": compute_seconds,
        "estimated_wallclock_seconds": wallclock,
    }
    return report


def write_trajectory_csv(path, history: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["round", "cluster"] + [f"x{i}" for i in range(history[0].shape[1])])
        for rnd, centers in enumerate(history):
            for j, row in enumerate(centers):
                writer.writerow([rnd, j] + [f"{v:.10g}" for v in row])
