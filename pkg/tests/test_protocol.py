import math

import numpy as np
import pytest

from vpkmeans import bench, protocol
from vpkmeans.dp_accounting import PrivacyBudget
from vpkmeans.packed_matrix import PADDED, PackedLayout
from vpkmeans.protocol import (
    CentroidSet,
    DataPartition,
    ProtocolError,
    estimate_transcript,
    init_centroids,
    release_depths,
    required_depth,
    run,
    run_multiparty,
    split_features,
    update_centroids,
)
from vpkmeans.slot_engine import EngineConfig, SlotEngine


def uniform_instance(seed, n=200, d=3, bound=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(n, d))


# -- initialization -----------------------------------------------------------


def test_init_rejects_k1():
    with pytest.raises(ProtocolError):
        init_centroids(1, 2, 1.0, 0)


def test_init_deterministic():
    a = init_centroids(5, 2, 1.0, 42)
    b = init_centroids(5, 2, 1.0, 42)
    assert np.array_equal(a.centers, b.centers)


def test_init_spacing_monte_carlo():
    # with the default rejection radius nearly every draw respects it
    k, d, bound = 5, 2, 1.0
    threshold = 2 * bound * math.sqrt(d) / (4 * k)
    ok = 0
    for seed in range(1000):
        c = init_centroids(k, d, bound, seed).centers
        dists = [np.linalg.norm(c[i] - c[j]) for i in range(k) for j in range(i)]
        ok += min(dists) >= threshold
    assert ok >= 990


def test_init_within_domain():
    c = init_centroids(8, 4, 0.5, 3).centers
    assert np.max(np.abs(c)) <= 0.5


# -- update rule ---------------------------------------------------------------


def test_update_divides():
    cs = update_centroids(np.array([[10.0, 0.0]]), np.array([5.0, 2.0]), 5.0, seed=0, round_index=1)
    assert np.allclose(cs.centers[:, 0], [2.0, 0.0])


def test_update_reinit_below_one():
    cs = update_centroids(np.array([[10.0, 0.3]]), np.array([5.0, 0.3]), 5.0, seed=0, round_index=1)
    expected = protocol.reinit_draw(0, 1, 1, 5.0, 1)
    assert np.allclose(cs.centers[1], expected)


def test_update_clamps_to_domain():
    cs = update_centroids(np.array([[100.0]]), np.array([2.0]), 1.0, seed=0, round_index=1)
    assert cs.centers[0, 0] == 1.0


# -- partitions -----------------------------------------------------------------


def test_split_features_partition_check():
    pts = uniform_instance(0, n=10, d=3)
    with pytest.raises(ProtocolError):
        split_features(pts, [[0], [1]])
    parts = split_features(pts, [[0, 2], [1]])
    assert parts[0].feature_indices == (0, 2)
    assert np.array_equal(parts[0].features[:, 1], pts[:, 2])


def test_run_rejects_out_of_bound_features():
    pts = uniform_instance(1, n=20, d=2, bound=2.0)
    parts = split_features(pts, [[0], [1]])
    with pytest.raises(ProtocolError, match="bound"):
        run(parts[0], parts[1], None, 1, k=3, bound=1.0)


def test_run_rejects_padded_layout():
    pts = uniform_instance(1, n=20, d=2)
    parts = split_features(pts, [[0], [1]])
    lay = PackedLayout(3, slot_count=1 << 14, mode=PADDED)
    with pytest.raises(ProtocolError, match="unpadded"):
        run(parts[0], parts[1], None, 1, k=3, bound=1.0, layout=lay)


# -- zero-noise equivalence with the plaintext oracle ---------------------------


@pytest.mark.parametrize("n,k,d,split", [
    (150, 3, 2, [[0], [1]]),
    (400, 5, 4, [[0, 3], [1, 2]]),
    (97, 2, 3, [[2], [0, 1]]),
])
def test_protocol_tracks_matching_oracle(n, k, d, split):
    pts = uniform_instance(n * k, n=n, d=d)
    parts = split_features(pts, split)
    res = run(parts[0], parts[1], None, 4, k=k, bound=1.0, seed=11)
    oracle = bench.lloyd_plaintext(pts, CentroidSet(res.history[0], bound=1.0), 4,
                                   tie_rule=bench.MATCHING, seed=11)
    for mine, ref in zip(res.history, oracle.history):
        assert np.max(np.abs(mine - ref)) < 1e-6


def test_separated_blobs_match_hard_lloyd():
    ds = bench.gen_synthetic(300, 3, 2, 1.0, cluster_std=0.03, seed=5, min_center_dist=0.9)
    parts = split_features(ds.points, [[0], [1]])
    init = CentroidSet(ds.points[[10, 150, 250]].copy(), bound=1.0)
    res = run(parts[0], parts[1], None, 3, k=3, bound=1.0, seed=5, init=init)
    hard = bench.lloyd_plaintext(ds, init, 3, tie_rule=bench.STANDARD, seed=5)
    for mine, ref in zip(res.history, hard.history):
        assert np.max(np.abs(mine - ref)) < 1e-4


def test_noise_free_aggregates_reproduce_lloyd_update():
    # one round; compare the released aggregates against hard counts/sums
    ds = bench.gen_synthetic(200, 4, 2, 1.0, cluster_std=0.02, seed=9, min_center_dist=0.8)
    parts = split_features(ds.points, [[0], [1]])
    rng = np.random.default_rng(21)
    centers = init_centroids(4, 2, 1.0, 9, min_separation=0.8).centers  # data's own centers
    init = CentroidSet(centers + rng.normal(0, 0.01, centers.shape), bound=1.0)
    res = run(parts[0], parts[1], None, 1, k=4, bound=1.0, seed=21, init=init)
    diff = ds.points[:, None, :] - init.centers[None, :, :]
    assign = np.argmin(np.einsum("ijl,ijl->ij", diff, diff), axis=1)
    counts = np.bincount(assign, minlength=4).astype(float)
    sums = np.zeros((4, 2))
    np.add.at(sums, assign, ds.points)
    want = np.clip(sums / counts[:, None], -1, 1)
    assert np.max(np.abs(res.centroids.centers - want)) < 1e-4


def test_centroids_stay_in_domain_with_noise():
    pts = uniform_instance(3, n=300, d=2)
    parts = split_features(pts, [[0], [1]])
    budget = PrivacyBudget(0.5, 1e-3, 5)
    res = run(parts[0], parts[1], budget, 5, k=4, bound=1.0, seed=2)
    for centers in res.history:
        assert np.max(np.abs(centers)) <= 1.0


def test_deterministic_under_seed():
    pts = uniform_instance(4, n=120, d=2)
    parts = split_features(pts, [[0], [1]])
    budget = PrivacyBudget(1.0, 1e-3, 3)
    a = run(parts[0], parts[1], budget, 3, k=3, bound=1.0, seed=9)
    b = run(parts[0], parts[1], budget, 3, k=3, bound=1.0, seed=9)
    assert np.array_equal(a.centroids.centers, b.centroids.centers)


# -- batching edge cases ---------------------------------------------------------


def test_tail_points_are_processed():
    # slot_count 64, k=3: 63 usable grid slots, so point 63 lands in the tail
    eng = SlotEngine(EngineConfig(slot_count=64, depth_budget=required_depth(3)))
    pts = uniform_instance(6, n=64, d=2)
    parts = split_features(pts, [[0], [1]])
    res = run(parts[0], parts[1], None, 2, k=3, bound=1.0, seed=13, engine=eng)
    oracle = bench.lloyd_plaintext(pts, CentroidSet(res.history[0], bound=1.0), 2,
                                   tie_rule=bench.MATCHING, seed=13)
    for mine, ref in zip(res.history, oracle.history):
        assert np.max(np.abs(mine - ref)) < 1e-6


def test_multiple_ciphertexts_per_feature():
    eng = SlotEngine(EngineConfig(slot_count=64, depth_budget=required_depth(2)))
    pts = uniform_instance(8, n=150, d=2)  # 3 compact ciphertexts per feature
    parts = split_features(pts, [[0], [1]])
    res = run(parts[0], parts[1], None, 2, k=2, bound=1.0, seed=3, engine=eng)
    uploads = res.transcript.by_kind(protocol.ENCRYPTED_FEATURES)
    assert sum(m.ciphertext_count for m in uploads) == 1 * math.ceil(150 / 64)
    oracle = bench.lloyd_plaintext(pts, CentroidSet(res.history[0], bound=1.0), 2,
                                   tie_rule=bench.MATCHING, seed=3)
    assert np.max(np.abs(res.centroids.centers - oracle.centroids.centers)) < 1e-6


# -- transcript accounting -------------------------------------------------------


def transcript_checks(res, n, k, d, d_bob, rounds, slot_count):
    tr = res.transcript
    uploads = tr.by_kind(protocol.ENCRYPTED_FEATURES)
    assert sum(m.ciphertext_count for m in uploads) == d_bob * math.ceil(n / slot_count)
    per_round = tr.by_kind(protocol.NOISY_AGGREGATES)
    assert len(per_round) == rounds
    assert all(m.ciphertext_count == d + 1 for m in per_round)
    cents = tr.by_kind(protocol.CENTROIDS)
    assert all(m.byte_size == k * d * 8 for m in cents)


def test_transcript_invariants_two_party():
    pts = uniform_instance(5, n=300, d=3)
    parts = split_features(pts, [[0], [1, 2]])
    res = run(parts[0], parts[1], None, 3, k=4, bound=1.0, seed=1)
    transcript_checks(res, 300, 4, 3, 2, 3, 1 << 14)


def test_estimator_matches_real_run_exactly():
    for k, d, split in ((2, 2, [[0], [1]]), (5, 3, [[0, 1], [2]])):
        pts = uniform_instance(6 + k, n=500, d=d)
        parts = split_features(pts, split)
        res = run(parts[0], parts[1], None, 3, k=k, bound=1.0, seed=1)
        d_bob = len(split[1])
        est = estimate_transcript(500, k, d, d_bob, 3)
        assert est.total_bytes == res.transcript.total_bytes
        assert est.total_ciphertexts == res.transcript.total_ciphertexts
        assert est.bytes_by_kind() == res.transcript.bytes_by_kind()


def test_release_depths_match_measured():
    for k in (2, 3, 5, 8):
        pts = uniform_instance(k, n=150, d=2)
        parts = split_features(pts, [[0], [1]])
        res = run(parts[0], parts[1], None, 1, k=k, bound=1.0, seed=1)
        assert res.round_depths == [required_depth(k)]
        assert max(release_depths(k)) == required_depth(k)


def test_engine_budget_too_small_rejected():
    pts = uniform_instance(2, n=50, d=2)
    parts = split_features(pts, [[0], [1]])
    eng = SlotEngine(EngineConfig(slot_count=1 << 14, depth_budget=5))
    with pytest.raises(ProtocolError, match="depth budget"):
        run(parts[0], parts[1], None, 1, k=3, bound=1.0, engine=eng)


def test_convergence_shift_mode_stops_early():
    ds = bench.gen_synthetic(200, 3, 2, 1.0, cluster_std=0.02, seed=2, min_center_dist=0.8)
    parts = split_features(ds.points, [[0], [1]])
    init = CentroidSet(ds.points[[0, 80, 160]].copy(), bound=1.0)
    res = run(parts[0], parts[1], None, 20, k=3, bound=1.0, seed=2, init=init,
              convergence="shift")
    assert len(res.history) - 1 < 20


# -- multiparty -------------------------------------------------------------------


def test_server_aided_two_parties_equals_two_party_run():
    pts = uniform_instance(7, n=200, d=4)
    parts = split_features(pts, [[0, 1, 2], [3]])
    a = run(parts[0], parts[1], None, 2, k=3, bound=1.0, seed=4)
    b = run_multiparty(parts, protocol.SERVER_AIDED, None, 2, k=3, bound=1.0, seed=4)
    assert np.array_equal(a.centroids.centers, b.centroids.centers)
    assert a.transcript.summary() == b.transcript.summary()


def test_mpc_share_message_count():
    pts = uniform_instance(8, n=150, d=4)
    parts = split_features(pts, [[0, 1], [2], [3]])
    rounds = 3
    res = run_multiparty(parts, protocol.MPC_SIMULATED, None, rounds, k=3, bound=1.0, seed=4)
    shares = res.transcript.by_kind(protocol.DECRYPTION_SHARE)
    assert len(shares) == (len(parts) - 1) * rounds
    for t in range(1, rounds + 1):
        assert sum(1 for m in shares if m.round == t) == len(parts) - 1


def test_models_and_splits_give_identical_centroids():
    pts = uniform_instance(9, n=250, d=4)
    rounds, k = 3, 3
    results = []
    for split in ([[0, 1, 2], [3]], [[0, 1], [2, 3]], [[3, 2], [0], [1]], [[0], [1], [2], [3]]):
        parts = split_features(pts, split)
        for model in (protocol.SERVER_AIDED, protocol.MPC_SIMULATED):
            res = run_multiparty(parts, model, None, rounds, k=k, bound=1.0, seed=17,
                                 computing_party=parts[0].owner)
            results.append(res.centroids.centers)
    for r in results[1:]:
        assert np.array_equal(results[0], r)


def test_mpc_with_noise_matches_server_aided():
    pts = uniform_instance(10, n=200, d=2)
    parts = split_features(pts, [[0], [1]])
    budget = PrivacyBudget(1.0, 1e-3, 2)
    a = run_multiparty(parts, protocol.SERVER_AIDED, budget, 2, k=3, bound=1.0, seed=6)
    b = run_multiparty(parts, protocol.MPC_SIMULATED, budget, 2, k=3, bound=1.0, seed=6)
    assert np.array_equal(a.centroids.centers, b.centroids.centers)
