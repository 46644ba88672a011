import numpy as np
import pytest

from tristream.descriptors import (
    PcaModel,
    assemble_stream_tdd,
    assemble_tstdd,
    fit_pca,
    load_descriptors,
    load_pca,
    save_descriptors,
    save_pca,
    trajectory_pool,
)
from tristream.errors import DataError, FormatError
from tristream.featmaps import FeatureMapStack
from tristream.tracking import Trajectory, TrajectoryPoint


def make_traj(points):
    return Trajectory(tuple(TrajectoryPoint(x, y, z) for x, y, z in points))


def random_trajectory(rng, width, height, length, p=15):
    z0 = int(rng.integers(0, length - p + 1))
    pts = [
        (float(rng.uniform(0, width - 1e-6)), float(rng.uniform(0, height - 1e-6)), z0 + i)
        for i in range(p)
    ]
    return make_traj(pts)


def pool_oracle(traj, stack):
    """Brute-force reference with the same point-order accumulation."""
    h, w, _, n = stack.values.shape
    acc = np.zeros(n)
    for p in traj.points:
        col = min(max(int(np.floor(stack.map_ratio * p.x + 0.5)), 0), w - 1)
        row = min(max(int(np.floor(stack.map_ratio * p.y + 0.5)), 0), h - 1)
        for k in range(n):
            acc[k] += stack.values[row, col, p.z, k]
    return acc


def test_pool_constant_map():
    stack = FeatureMapStack("lt", "stage1", np.full((4, 4, 16, 3), 0.25), 0.5)
    traj = make_traj([(2.0, 2.0, z) for z in range(15)])
    assert np.allclose(trajectory_pool(traj, stack), 15 * 0.25)

    ones = FeatureMapStack("lt", "stage1", np.ones((4, 4, 16, 2)), 0.5)
    assert np.array_equal(trajectory_pool(traj, ones), [15.0, 15.0])


def test_pool_matches_bruteforce_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(50):
        stack = FeatureMapStack("gt", "stage1", rng.uniform(0, 1, (8, 8, 16, 4)), 0.5)
        traj = random_trajectory(rng, 16, 16, 16)
        got = trajectory_pool(traj, stack)
        want = pool_oracle(traj, stack)
        assert np.array_equal(got, want)  # same summation order, bit for bit


def test_pool_linearity():
    rng = np.random.default_rng(1)
    a, b = 1.7, -0.4
    v1 = rng.uniform(0, 1, (8, 8, 16, 4))
    v2 = rng.uniform(0, 1, (8, 8, 16, 4))
    traj = random_trajectory(rng, 16, 16, 16)
    mixed = FeatureMapStack("lt", "stage1", a * v1 + b * v2, 0.5)
    parts = (
        a * trajectory_pool(traj, FeatureMapStack("lt", "stage1", v1, 0.5))
        + b * trajectory_pool(traj, FeatureMapStack("lt", "stage1", v2, 0.5))
    )
    assert np.abs(trajectory_pool(traj, mixed) - parts).max() <= 1e-9


def test_pool_rounding_and_clamping():
    vals = np.zeros((3, 3, 2, 1))
    vals[2, 2, 0, 0] = 1.0
    vals[2, 2, 1, 0] = 3.0
    stack = FeatureMapStack("lt", "stage1", vals, 0.5)
    # half-up: 0.5 * 3.0 = 1.5 -> 2;  clamping: far coordinates stay on the grid
    traj = make_traj([(3.0, 3.0, 0), (99.0, 99.0, 1)])
    assert trajectory_pool(traj, stack)[0] == 4.0


def test_pool_bounded_for_normalized_maps():
    rng = np.random.default_rng(2)
    vals = rng.uniform(0, 1, (6, 6, 16, 3))
    vals /= vals.max(axis=(0, 1, 2))  # per-channel max now 1
    stack = FeatureMapStack("st", "stage1", vals, 0.5)
    pooled = trajectory_pool(random_trajectory(rng, 12, 12, 16), stack)
    assert (pooled >= 0).all() and (pooled <= 15.0).all()


def test_pool_z_out_of_range():
    stack = FeatureMapStack("lt", "stage1", np.ones((4, 4, 4, 1)), 0.5)
    with pytest.raises(DataError, match="time extent"):
        trajectory_pool(make_traj([(1, 1, 3), (1, 1, 4)]), stack)


def test_pool_after_normalization_ignores_raw_scale():
    from tristream.featmaps import channel_normalize, spatiotemporal_normalize

    rng = np.random.default_rng(20)
    vals = rng.uniform(0, 3, (6, 6, 16, 4))
    traj = random_trajectory(rng, 12, 12, 16)
    for normalize in (spatiotemporal_normalize, channel_normalize):
        base = trajectory_pool(traj, normalize(FeatureMapStack("lt", "stage1", vals, 0.5)))
        scaled = trajectory_pool(
            traj, normalize(FeatureMapStack("lt", "stage1", 7.3 * vals, 0.5))
        )
        assert np.allclose(scaled, base, rtol=1e-12, atol=0)


def test_pool_accepts_file_loaded_maps(tmp_path):
    # provider contract: maps loaded from disk pool identically to in-memory ones
    from tristream.featmaps import load_feature_maps, save_feature_maps

    rng = np.random.default_rng(21)
    vals = rng.random((8, 8, 16, 4), dtype=np.float32)
    stack = FeatureMapStack("gt", "stage1", vals, 0.5)
    save_feature_maps(tmp_path / "maps.fmap", stack)
    loaded = load_feature_maps(tmp_path / "maps.fmap")
    traj = random_trajectory(rng, 16, 16, 16)
    assert np.array_equal(trajectory_pool(traj, loaded), trajectory_pool(traj, stack))


# ---------------------------------------------------------------------------
# Stream descriptor assembly
# ---------------------------------------------------------------------------

def layer_pair(stream, layer_id, n, value=0.0, ratio=0.5, length=16):
    vals = np.full((4, 4, length, n), value)
    return (
        FeatureMapStack(stream, layer_id, vals, ratio),
        FeatureMapStack(stream, layer_id, vals, ratio),
    )


def test_assemble_lengths_and_zero_maps():
    traj = make_traj([(2.0, 2.0, z) for z in range(15)])
    layers = [layer_pair("st", "stage1", 4), layer_pair("st", "stage2", 8, ratio=0.25)]
    vec = assemble_stream_tdd(traj, layers)
    assert vec.shape == (24,)
    assert vec.dtype == np.float32
    assert (vec == 0).all()


def test_assemble_concatenation_order():
    traj = make_traj([(2.0, 2.0, z) for z in range(15)])
    st1 = FeatureMapStack("st", "stage1", np.full((4, 4, 16, 2), 1.0), 0.5)
    ch1 = FeatureMapStack("st", "stage1", np.full((4, 4, 16, 2), 2.0), 0.5)
    st2 = FeatureMapStack("st", "stage2", np.full((2, 2, 16, 3), 3.0), 0.25)
    ch2 = FeatureMapStack("st", "stage2", np.full((2, 2, 16, 3), 4.0), 0.25)
    vec = assemble_stream_tdd(traj, [(st1, ch1), (st2, ch2)])
    assert np.array_equal(vec, np.repeat([15.0, 30.0, 45.0, 60.0], [2, 2, 3, 3]).astype(np.float32))


def test_assemble_rejects_misordered_layers_and_mixed_streams():
    traj = make_traj([(2.0, 2.0, z) for z in range(15)])
    l1 = layer_pair("st", "stage1", 2)
    l2 = layer_pair("st", "stage2", 2, ratio=0.25)
    with pytest.raises(DataError, match="out of order"):
        assemble_stream_tdd(traj, [l2, l1])
    other = layer_pair("gt", "stage2", 2, ratio=0.25)
    with pytest.raises(DataError, match="single stream"):
        assemble_stream_tdd(traj, [l1, other])


def test_assemble_tstdd_offsets():
    lt = np.zeros(256)
    st = np.zeros(256)
    gt = np.zeros(256)
    st[44] = 7.5
    vec = assemble_tstdd(lt, st, gt)
    assert vec.shape == (768,)
    assert vec[300] == 7.5
    assert (assemble_tstdd(np.zeros(256), np.zeros(256), np.zeros(256)) == 0).all()
    with pytest.raises(DataError, match="lengths differ"):
        assemble_tstdd(np.zeros(256), np.zeros(255), np.zeros(256))


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def test_pca_rank_one_line():
    rng = np.random.default_rng(3)
    direction = np.array([1.0, 2.0, -1.0]) / np.sqrt(6.0)
    samples = np.outer(rng.normal(size=40), direction) + 5.0
    model = fit_pca(samples, 3)
    assert model.dim == 1  # achievable rank caps the requested dimension
    assert model.requested_dim == 3
    cos = abs(model.components[:, 0] @ direction)
    assert cos >= 1.0 - 1e-9


def test_pca_full_reconstruction():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(60, 8))
    model = fit_pca(x, 8)
    recon = model.inverse_transform(model.transform(x))
    rel = np.linalg.norm(recon - x) / np.linalg.norm(x)
    assert rel <= 1e-6


def test_pca_variances_match_svd_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(50, 10)) * rng.uniform(0.5, 3.0, 10)
    model = fit_pca(x, 10)
    centered = x - x.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    oracle = (singular**2) / (x.shape[0] - 1)
    assert np.allclose(model.explained_variance, oracle[: model.dim], rtol=1e-8, atol=1e-10)
    assert (np.diff(model.explained_variance) <= 1e-12).all()


def test_pca_sign_convention_and_orthonormality():
    rng = np.random.default_rng(6)
    model = fit_pca(rng.normal(size=(40, 6)), 6)
    gram = model.components.T @ model.components
    assert np.abs(gram - np.eye(model.dim)).max() <= 1e-8
    for j in range(model.dim):
        col = model.components[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_pca_projection_never_grows_norm():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(30, 5))
    model = fit_pca(x, 3)
    for row in x:
        assert np.linalg.norm(model.transform(row)) <= np.linalg.norm(row - model.mean) * (1 + 1e-12)


def test_pca_needs_two_samples():
    with pytest.raises(DataError, match="at least 2"):
        fit_pca(np.zeros((1, 4)), 2)


def test_pca_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model = fit_pca(rng.normal(size=(20, 5)), 3)
    path = tmp_path / "model.pcam"
    save_pca(path, model)
    loaded = load_pca(path)
    assert np.array_equal(loaded.mean, model.mean)
    assert np.array_equal(loaded.components, model.components)
    assert np.array_equal(loaded.explained_variance, model.explained_variance)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError, match="size mismatch"):
        load_pca(path)


def test_pca_model_invariants():
    with pytest.raises(DataError, match="orthonormal"):
        PcaModel(np.zeros(2), np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([1.0, 0.5]), 2)


# ---------------------------------------------------------------------------
# Descriptor cache files
# ---------------------------------------------------------------------------

def test_descriptor_cache_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    mat = rng.random((7, 12), dtype=np.float32)
    path = tmp_path / "video.tstd"
    save_descriptors(path, mat)
    assert np.array_equal(load_descriptors(path), mat)

    empty = tmp_path / "empty.tstd"
    save_descriptors(empty, np.zeros((0, 12), np.float32))
    assert load_descriptors(empty).shape == (0, 12)


def test_descriptor_cache_errors(tmp_path):
    path = tmp_path / "video.tstd"
    save_descriptors(path, np.zeros((2, 3), np.float32))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError, match="size mismatch"):
        load_descriptors(path)
    bad = tmp_path / "bad.tstd"
    bad.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(FormatError, match="magic"):
        load_descriptors(bad)
