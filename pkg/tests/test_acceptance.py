"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end criteria
share one synthetic dataset (4 motion classes, 20 videos each, 64x64, 30
frames) built once per session; the desk-scale experiment uses 10 training
videos per class, 5 repeats, and a 64-center codebook.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from tristream.classifier import SvmModel, evaluate, predict, train_svm
from tristream.config import PipelineConfig, SplitSpec
from tristream.descriptors import fit_pca, trajectory_pool
from tristream.encoding import Codebook, LlcConfig, llc_encode, pca_whiten
from tristream.featmaps import FeatureMapStack, channel_normalize, spatiotemporal_normalize
from tristream.pipeline import generate_synthetic_dataset, run_ablation, run_evaluate
from tristream.report import strip_timing
from tristream.temporal import OfsdiConfig, TemporalImage, ofsdi_sequence
from tristream.tracking import Trajectory, TrajectoryPoint

ACCEPT_CFG = dataclasses.replace(
    PipelineConfig(),
    codebook_size=64,
    split=SplitSpec(train_per_class=10),
    repeats=5,
    master_seed=1234,
)


def report_line(ok: bool, name: str, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    started = time.perf_counter()
    generate_synthetic_dataset(root / "data", ACCEPT_CFG, videos_per_class=20)
    report = run_evaluate(root / "data", ACCEPT_CFG)
    elapsed = time.perf_counter() - started
    return root, report, elapsed


def test_criterion_1_ofsdi_recursion_matches_closed_form():
    rng = np.random.default_rng(100)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n_planes = int(rng.integers(2, 51))
        h = int(rng.integers(2, 33))
        w = int(rng.integers(2, 33))
        alpha = float(rng.uniform(1e-3, 1.0 - 1e-3))
        planes = [rng.uniform(0, 255.0, (h, w)) for _ in range(n_planes)]
        seq = ofsdi_sequence(
            [TemporalImage(p) for p in planes], OfsdiConfig(alpha=alpha)
        )
        diffs = [np.abs(planes[i] - planes[i - 1]) for i in range(1, n_planes)]
        for t in range(1, n_planes):
            closed = alpha**t * planes[0]
            for i in range(1, t + 1):
                closed = closed + alpha ** (t - i) * diffs[i - 1]
            worst = max(worst, float(np.abs(seq[t - 1].values - closed).max()))
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-6 and elapsed < 5.0
    report_line(ok, "criterion 1: OFSDI recursion == closed form",
                f"max abs err {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-6
    assert elapsed < 5.0


def test_criterion_2_normalization_contracts():
    rng = np.random.default_rng(200)
    started = time.perf_counter()
    for _ in range(100):
        shape = tuple(int(rng.integers(1, 7)) for _ in range(3)) + (int(rng.integers(1, 9)),)
        stack = FeatureMapStack("lt", "stage1", rng.uniform(0.0, 4.0, shape), 0.5)
        st = spatiotemporal_normalize(stack)
        ch = channel_normalize(stack)

        maxima = st.values.max(axis=(0, 1, 2))
        nonzero = stack.values.max(axis=(0, 1, 2)) > 1e-12
        assert (maxima[nonzero] == 1.0).all()
        pos_max = ch.values.max(axis=3)
        occupied = stack.values.max(axis=3) > 1e-12
        assert (pos_max[occupied] == 1.0).all()

        assert np.array_equal(spatiotemporal_normalize(st).values, st.values)
        assert np.array_equal(channel_normalize(ch).values, ch.values)

        k = float(rng.uniform(0.05, 20.0))
        scaled = FeatureMapStack("lt", "stage1", k * stack.values, 0.5)
        assert np.allclose(spatiotemporal_normalize(scaled).values, st.values, rtol=1e-12, atol=0)
        assert np.allclose(channel_normalize(scaled).values, ch.values, rtol=1e-12, atol=0)
    elapsed = time.perf_counter() - started
    report_line(elapsed < 5.0, "criterion 2: normalization contracts", f"{elapsed:.2f}s")
    assert elapsed < 5.0


def _random_pool_pair(rng):
    h, w, length, n = 8, 8, 16, 4
    stack = FeatureMapStack("gt", "stage1", rng.uniform(0, 1, (h, w, length, n)), 0.5)
    p = 15
    z0 = int(rng.integers(0, length - p + 1))
    pts = tuple(
        TrajectoryPoint(float(rng.uniform(0, 15.999)), float(rng.uniform(0, 15.999)), z0 + i)
        for i in range(p)
    )
    return stack, Trajectory(pts)


def test_criterion_3_pooling_oracle_and_linearity():
    rng = np.random.default_rng(300)
    for _ in range(1000):
        stack, traj = _random_pool_pair(rng)
        got = trajectory_pool(traj, stack)
        h, w = stack.values.shape[:2]
        want = np.zeros(stack.values.shape[3])
        for p in traj.points:
            col = min(max(int(np.floor(0.5 * p.x + 0.5)), 0), w - 1)
            row = min(max(int(np.floor(0.5 * p.y + 0.5)), 0), h - 1)
            want += stack.values[row, col, p.z, :]
        assert np.array_equal(got, want)  # bitwise: same summation order

    worst = 0.0
    for _ in range(50):
        s1, traj = _random_pool_pair(rng)
        s2 = FeatureMapStack("gt", "stage1", rng.uniform(0, 1, s1.values.shape), 0.5)
        a, b = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
        mixed = FeatureMapStack("gt", "stage1", a * s1.values + b * s2.values, 0.5)
        lhs = trajectory_pool(traj, mixed)
        rhs = a * trajectory_pool(traj, s1) + b * trajectory_pool(traj, s2)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    report_line(worst <= 1e-9, "criterion 3: trajectory pooling oracle", f"linearity err {worst:.2e}")
    assert worst <= 1e-9


def test_criterion_4_llc_contracts():
    rng = np.random.default_rng(400)
    centers = rng.uniform(-3, 3, (64, 24)) + np.arange(64)[:, None] * 0.15
    codebook = Codebook(centers)
    cfg = LlcConfig(k_bases=5, ridge_lambda=1e-4)
    worst_sum = 0.0
    for _ in range(1000):
        x = rng.normal(size=24) * 2.0
        code = llc_encode(x, codebook, cfg)
        worst_sum = max(worst_sum, abs(float(code.sum()) - 1.0))
        support = set(np.flatnonzero(code))
        nearest = np.argsort(((centers - x) ** 2).sum(axis=1), kind="stable")[:5]
        assert support <= set(nearest)
        recon = code @ centers
        nearest_dist = np.sqrt(((centers - x) ** 2).sum(axis=1).min())
        assert np.linalg.norm(x - recon) <= nearest_dist + 1e-9

    tight = LlcConfig(k_bases=5, ridge_lambda=1e-6)
    for idx in (0, 17, 63):
        code = llc_encode(centers[idx].copy(), codebook, tight)
        assert code[idx] >= 0.999
        assert np.abs(np.delete(code, idx)).max() <= 1e-3
    report_line(worst_sum <= 1e-6, "criterion 4: LLC coding contracts",
                f"max |sum-1| {worst_sum:.2e}")
    assert worst_sum <= 1e-6


def test_criterion_5_pca_and_whitening():
    rng = np.random.default_rng(500)
    line = np.outer(rng.normal(size=60), np.array([3.0, -1.0, 2.0]))
    model, _ = pca_whiten(line, 0.99)
    assert model.dim == 1

    x = rng.normal(size=(80, 10))
    pca = fit_pca(x, 10)
    recon = pca.inverse_transform(pca.transform(x))
    rel = np.linalg.norm(recon - x) / np.linalg.norm(x)
    assert rel <= 1e-6

    iso = rng.normal(size=(500, 8))
    wmodel, white = pca_whiten(iso, 0.99)
    variances = white.var(axis=0, ddof=1)
    assert ((variances >= 0.9) & (variances <= 1.1)).all()

    scales = np.array([4.0, 2.0, 1.0, 0.5, 0.1, 0.02])
    y = rng.normal(size=(400, 6)) * scales
    ymodel, _ = pca_whiten(y, 0.99)
    eigvals = np.sort(np.linalg.eigvalsh(np.cov(y.T)))[::-1]
    retained = eigvals[: ymodel.dim].sum() / eigvals.sum()
    assert retained > 0.99
    report_line(True, "criterion 5: PCA and whitening",
                f"recon err {rel:.2e}, retained {retained:.4f}")


def test_criterion_6_svm_contracts():
    rng = np.random.default_rng(600)
    a = rng.normal(size=(30, 2)) * 0.3 + (-2.0, 0.0)
    b = rng.normal(size=(30, 2)) * 0.3 + (2.0, 0.0)
    x = np.vstack([a, b])
    y = ["a"] * 30 + ["b"] * 30
    model = train_svm(x, y, c=30.0)  # raises if the dual ever decreases
    train_acc = evaluate(model, x, y).accuracy
    assert train_acc == 1.0

    sym = train_svm(np.array([[-1.0, 0.0], [1.0, 0.0]]), ["a", "b"], c=30.0,
                    tol=1e-8, max_epochs=5000)
    crossing = -sym.biases[0] / sym.weights[0, 0]
    assert abs(crossing) <= 1e-6

    zero_bias = SvmModel(("a", "b", "c"), rng.normal(size=(3, 5)), np.zeros(3))
    for _ in range(100):
        v = rng.normal(size=5)
        base, _ = predict(zero_bias, v)
        for k in (0.1, 7.3, 900.0):
            scaled, _ = predict(zero_bias, k * v)
            assert scaled == base
    report_line(True, "criterion 6: linear SVM contracts",
                f"train acc {train_acc:.2f}, boundary at {crossing:.1e}")


def test_criterion_7_end_to_end_accuracy(experiment):
    _, report, elapsed = experiment
    ok = report.mean_accuracy >= 0.90 and elapsed < 600.0
    report_line(ok, "criterion 7: desk-scale three-stream experiment",
                f"mean accuracy {report.mean_accuracy:.4f}, runtime {elapsed:.0f}s")
    print(f"    per-repeat accuracies: {[round(a, 4) for a in report.accuracies]}")
    assert report.mean_accuracy >= 0.90
    assert elapsed < 600.0
    assert report.repeats == 5
    assert report.excluded == ()


def test_criterion_8_ablation_trend(experiment):
    root, _, _ = experiment
    rows = run_ablation(root / "data", ACCEPT_CFG)
    by_subset = {subset: rep for subset, rep in rows}
    assert set(by_subset) == {("lt",), ("st",), ("gt",), ("lt", "st"), ("lt", "st", "gt")}

    three = by_subset[("lt", "st", "gt")]
    pair = by_subset[("lt", "st")]
    best_single = max(
        by_subset[(s,)].mean_accuracy for s in ("lt", "st", "gt")
    )
    for subset, rep in rows:
        print(f"    {'+'.join(subset):9s} mean={rep.mean_accuracy:.4f} "
              f"repeats={[round(a, 3) for a in rep.accuracies]}")

    wins = sum(
        1 for a, b in zip(three.accuracies, pair.accuracies) if a > b
    )
    mean_gap = three.mean_accuracy - pair.mean_accuracy
    print(f"    three-stream vs lt+st: strict wins {wins}/5, mean gap {mean_gap:+.4f}")
    trend_ok = three.mean_accuracy >= best_single - 0.01
    pair_ok = wins >= 3 or abs(mean_gap) <= 0.01
    report_line(trend_ok and pair_ok, "criterion 8: ablation trend",
                f"three {three.mean_accuracy:.4f} vs best single {best_single:.4f}")
    assert trend_ok
    assert pair_ok


def test_criterion_9_determinism(experiment, tmp_path_factory):
    root, report, _ = experiment
    rerun_root = tmp_path_factory.mktemp("acceptance-rerun")
    generate_synthetic_dataset(rerun_root / "data", ACCEPT_CFG, videos_per_class=20)
    rerun_report = run_evaluate(rerun_root / "data", ACCEPT_CFG)

    def cache_bytes(base: Path):
        cache = base / "data" / "_descriptor_cache"
        return {
            path.relative_to(cache): path.read_bytes()
            for path in sorted(cache.rglob("*.tstd"))
        }

    first, second = cache_bytes(root), cache_bytes(rerun_root)
    assert first.keys() == second.keys()
    assert all(first[key] == second[key] for key in first)
    assert rerun_report.accuracies == report.accuracies
    assert strip_timing(rerun_report.to_records()) == strip_timing(report.to_records())
    report_line(True, "criterion 9: determinism",
                f"{len(first)} cache files byte-identical, accuracies equal")
