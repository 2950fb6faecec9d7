"""Whole-pipeline acceptance gates.

Each test prints one ``ACCEPTANCE <label>: PASS|FAIL`` line directly to the
terminal (bypassing capture, so the checklist is readable in any run) and then
asserts the same condition, with the measured numbers in the message.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations

import numpy as np
import pytest

from votepose import (
    CameraIntrinsics,
    Correspondence,
    NoiseConfig,
    ObjectModel,
    Pose,
    PoseSamplerConfig,
    TruncationConfig,
    VotePoseError,
    VotingConfig,
    bbox_corners,
    epnp_pose,
    estimate_distribution,
    fps_select,
    generate_hypotheses,
    localize_keypoints,
    make_blob_model,
    make_correspondences,
    make_cube_model,
    metric_2d_projection,
    metric_add,
    model_diameter,
    project,
    rotation_angle_between,
    rotation_exp,
    run_bench,
    score_hypotheses,
    solve_pose,
    synth_scene,
    validate_config,
    write_results,
)
from votepose.pnp import _lm_evaluate

CAM = CameraIntrinsics(280.0, 280.0, 160.0, 120.0, 320, 240)


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{label}: {detail}"


@pytest.fixture(scope="module")
def trio():
    """Cube plus two irregular blobby models, each with 8 FPS keypoints."""
    models = [
        make_cube_model(),
        make_blob_model(seed=11, n_points=2500, radius=0.6),
        make_blob_model(seed=12, n_points=2500, radius=0.6),
    ]
    return models, [fps_select(m, 8) for m in models]


@pytest.fixture(scope="module")
def warm_kernel(trio):
    # one throwaway voting call so jit compilation never lands in a timed section
    models, kps = trio
    sc = synth_scene(models[0], kps[0], CAM, seed=123)
    localize_keypoints(sc.mask, sc.field, VotingConfig(seed=0))


def test_noiseless_scenes_recover_exactly(trio, warm_kernel, capsys):
    """100 clean scenes: keypoint means and poses must come back essentially
    bit-exact, and the whole batch must stay within the time budget."""
    models, kps = trio
    worst_kp = worst_rot = worst_t = 0.0
    t0 = time.perf_counter()
    for s in range(100):
        mi = s % 3
        sc = synth_scene(models[mi], kps[mi], CAM, seed=s)
        dists = localize_keypoints(sc.mask, sc.field, VotingConfig(seed=s + 1000))
        kp_err = max(
            np.linalg.norm(d.mean - sc.keypoints2d[i]) for i, d in enumerate(dists)
        )
        r = solve_pose(make_correspondences(kps[mi].points3d, dists), CAM)
        rot = math.degrees(rotation_angle_between(r.pose.rotation, sc.gt_pose.rotation))
        t_rel = np.linalg.norm(r.pose.translation - sc.gt_pose.translation)
        t_rel /= sc.gt_pose.translation[2]
        worst_kp = max(worst_kp, kp_err)
        worst_rot = max(worst_rot, rot)
        worst_t = max(worst_t, t_rel)
    elapsed = time.perf_counter() - t0
    ok = worst_kp < 1e-3 and worst_rot < 0.01 and worst_t < 1e-4 and elapsed < 30.0
    report(
        capsys,
        "noiseless-exactness",
        ok,
        f"worst keypoint {worst_kp:.2e} px, rotation {worst_rot:.2e} deg, "
        f"translation {worst_t:.2e} of depth, {elapsed:.1f} s for 100 scenes",
    )


def _ref_intersect(p1, v1, p2, v2):
    """Plain-arithmetic forward ray intersection, kept independent of the
    library's vectorized version."""
    cross = v1[0] * v2[1] - v1[1] * v2[0]
    if abs(cross) <= 1e-6 * math.hypot(*v1) * math.hypot(*v2):
        return None
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    t = (dx * v2[1] - dy * v2[0]) / cross
    s = (dx * v1[1] - dy * v1[0]) / cross
    if t <= 0.0 or s <= 0.0:
        return None
    return (p1[0] + t * v1[0], p1[1] + t * v1[1])


def _ref_pool(mask, field, k):
    pts, vecs = [], []
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            v = field[r, c, k]
            if mask[r, c] and (v[0] != 0.0 or v[1] != 0.0):
                pts.append((float(c), float(r)))
                vecs.append((float(v[0]), float(v[1])))
    return pts, vecs


def _ref_hypotheses(pts, vecs, cfg):
    rng = np.random.default_rng(cfg.seed)
    pairs = rng.integers(0, len(pts), size=(10 * cfg.n_hypotheses, 2))
    out = []
    for i, j in pairs:
        if i == j:
            continue
        h = _ref_intersect(pts[i], vecs[i], pts[j], vecs[j])
        if h is not None:
            out.append(h)
            if len(out) == cfg.n_hypotheses:
                break
    return np.array(out)


def _ref_weights(pts, vecs, hyps, theta):
    out = []
    for hx, hy in hyps:
        n = 0
        for (px, py), (vx, vy) in zip(pts, vecs):
            dx, dy = hx - px, hy - py
            d2 = dx * dx + dy * dy
            if d2 <= 0.0:
                continue
            dot = dx * vx + dy * vy
            if dot >= 0.0 and dot * dot >= theta * theta * d2 * (vx * vx + vy * vy):
                n += 1
        out.append(n)
    return np.array(out)


def test_voting_matches_brute_force_reference(capsys):
    """On 8x8 masks the hypothesis draws, integer vote counts, and moments
    must match a from-scratch reference: counts exactly, the rest to 1e-9."""
    checked = 0
    worst_h = worst_m = 0.0
    for trial in range(12):
        rng = np.random.default_rng(trial)
        mask = (rng.random((8, 8)) < 0.7).astype(np.uint8)
        if mask.sum() < 4:
            continue
        kps2d = rng.uniform(0.0, 8.0, size=(2, 2))
        field = np.zeros((8, 8, 2, 2))
        rows, cols = np.nonzero(mask)
        for r, c in zip(rows, cols):
            for k in range(2):
                d = kps2d[k] - (c, r)
                if rng.random() < 0.3:  # outlier direction
                    ang = rng.uniform(0.0, 2.0 * np.pi)
                    d = np.array([np.cos(ang), np.sin(ang)])
                nd = np.linalg.norm(d)
                if nd > 0:
                    field[r, c, k] = d / nd
        if trial % 2 == 0:  # a dead pixel must stay out of the pool
            field[rows[0], cols[0], :, :] = 0.0
        for k in range(2):
            cfg = VotingConfig(n_hypotheses=16, seed=trial * 10 + k)
            pts, vecs = _ref_pool(mask, field, k)
            if len(pts) < 2:
                continue
            hyps = generate_hypotheses(mask, field, k, cfg)
            ref_h = _ref_hypotheses(pts, vecs, cfg)
            assert hyps.shape == ref_h.shape
            worst_h = max(worst_h, float(np.abs(hyps - ref_h).max()))
            weights = score_hypotheses(mask, field, k, hyps)
            ref_w = _ref_weights(pts, vecs, hyps, 0.99)
            assert np.array_equal(weights, ref_w), f"trial {trial} channel {k}"
            dist = estimate_distribution(hyps, weights)
            total = ref_w.sum()
            mu = (ref_w[:, None] * ref_h).sum(axis=0) / total
            dm = ref_h - mu
            cov = (ref_w[:, None, None] * (dm[:, :, None] * dm[:, None, :])).sum(axis=0)
            cov = cov / total + 1e-6 * np.eye(2)
            worst_m = max(
                worst_m,
                float(np.abs(dist.mean - mu).max()),
                float(np.abs(dist.covariance - cov).max()),
            )
            checked += 1
    ok = checked >= 20 and worst_h < 1e-9 and worst_m < 1e-9
    report(
        capsys,
        "brute-force-voting-oracle",
        ok,
        f"{checked} mask/channel cases: counts exact, hypotheses within "
        f"{worst_h:.1e}, moments within {worst_m:.1e}",
    )


def test_truncated_scenes_stay_solvable(trio, capsys):
    """Crops that push at least two keypoints off-image, with 40-60% of the
    object left visible: every noiseless scene must still yield a correct
    pose under the 5 px projection metric."""
    models, kps = trio
    tc = TruncationConfig(0.4, 0.6)
    n_kept = n_correct = 0
    s = -1
    while n_kept < 100 and s < 300:
        s += 1
        mi = s % 3
        try:
            sc = synth_scene(models[mi], kps[mi], CAM, truncation=tc, seed=s)
        except VotePoseError:
            continue
        h, w = sc.mask.shape
        k2 = sc.keypoints2d
        outside = int(
            ((k2[:, 0] < 0) | (k2[:, 0] >= w) | (k2[:, 1] < 0) | (k2[:, 1] >= h)).sum()
        )
        if outside < 2 or not 0.4 <= sc.truncation["achieved_visible"] <= 0.6:
            continue
        n_kept += 1
        try:
            dists = localize_keypoints(sc.mask, sc.field, VotingConfig(seed=s + 2000))
            r = solve_pose(make_correspondences(kps[mi].points3d, dists), sc.intr)
            if metric_2d_projection(r.pose, sc.gt_pose, models[mi], sc.intr).correct:
                n_correct += 1
        except VotePoseError:
            pass
    ok = n_kept == 100 and n_correct == 100
    report(
        capsys,
        "truncation-robustness",
        ok,
        f"{n_correct}/{n_kept} truncated scenes within 5 px projection error",
    )


def test_occlusion_robustness_is_high_and_monotone(trio, capsys):
    """Half the object hidden plus heavy field noise: success must stay at or
    above 90%, and must not improve as occlusion grows (2% slack)."""
    models, kps = trio
    model, kp = models[0], kps[0]
    noise = NoiseConfig(angular_sigma=0.05, outlier_rate=0.1)

    def one(args):
        t, occ = args
        try:
            sc = synth_scene(model, kp, CAM, occlusion_frac=occ, noise=noise, seed=t)
            d = localize_keypoints(sc.mask, sc.field, VotingConfig(seed=t + 9000))
            r = solve_pose(make_correspondences(kp.points3d, d), CAM)
            return metric_2d_projection(r.pose, sc.gt_pose, model, CAM).correct
        except VotePoseError:
            return False

    rates = []
    for occ in (0.0, 0.25, 0.5):
        with ThreadPoolExecutor(max_workers=4) as ex:
            hits = sum(ex.map(one, [(t, occ) for t in range(200)]))
        rates.append(hits / 200.0)
    ok = (
        rates[2] >= 0.9
        and rates[1] <= rates[0] + 0.02
        and rates[2] <= rates[1] + 0.02
    )
    report(
        capsys,
        "occlusion-robustness",
        ok,
        f"success {rates[0]:.3f} / {rates[1]:.3f} / {rates[2]:.3f} "
        f"at occlusion 0 / 0.25 / 0.5 (200 trials each)",
    )


@pytest.fixture(scope="module")
def ablation_suite(warm_kernel):
    """500 anisotropic-noise trials shared by the ordering tests.

    Per trial and per configuration the scene and voting seeds are spawned
    from a fixed root, so every configuration sees its own independent but
    reproducible draw. Failed trials count as infinite error.
    """
    intr = CameraIntrinsics(450.0, 450.0, 240.0, 180.0, 480, 360)
    sampler = PoseSamplerConfig((4.0, 7.0), 0.8)
    models = [
        make_blob_model(seed=11, n_points=2500, radius=0.6),
        make_blob_model(seed=12, n_points=2500, radius=0.6),
    ]
    diams = [model_diameter(m) for m in models]
    kp_sets = {}
    for mi, m in enumerate(models):
        kp_sets[mi, "bbox8"] = bbox_corners(m)
        for name, k in (("fps8", 8), ("fps4", 4), ("fps12", 12)):
            kp_sets[mi, name] = fps_select(m, k)
    noise = NoiseConfig(angular_sigma=0.03, outlier_rate=0.1)

    def rel_add(pose, sc, model, diam):
        return metric_add(pose, sc.gt_pose, model, diam).value / diam

    def trial(t):
        mi = t % 2
        model, diam = models[mi], diams[mi]
        out = {}
        for ci, name in enumerate(("bbox8", "fps8", "fps4", "fps12")):
            kps = kp_sets[mi, name]
            ss = np.random.SeedSequence(entropy=4321, spawn_key=(t, ci))
            s_scene, s_vote = ss.spawn(2)
            try:
                sc = synth_scene(
                    model, kps, intr, sampler=sampler, occlusion_frac=0.3,
                    noise=noise, seed=s_scene,
                )
                d = localize_keypoints(sc.mask, sc.field, VotingConfig(seed=s_vote))
                corrs = make_correspondences(kps.points3d, d)
                if name == "fps8":  # same scene, three solver variants
                    out["fps8_un"] = rel_add(solve_pose(corrs, intr).pose, sc, model, diam)
                    mu = np.array([c.mean for c in corrs])
                    out["fps8_ep"] = rel_add(
                        epnp_pose(kps.points3d, mu, intr), sc, model, diam
                    )
                    iso = [Correspondence(c.point3d, c.mean, np.eye(2)) for c in corrs]
                    out["fps8_iso"] = rel_add(solve_pose(iso, intr).pose, sc, model, diam)
                else:
                    out[name] = rel_add(solve_pose(corrs, intr).pose, sc, model, diam)
            except VotePoseError:
                bad = ("fps8_un", "fps8_ep", "fps8_iso") if name == "fps8" else (name,)
                for key in bad:
                    out[key] = np.inf
        return out

    with ThreadPoolExecutor(max_workers=4) as ex:
        rows = list(ex.map(trial, range(500)))
    return {key: np.array([r[key] for r in rows]) for key in rows[0]}


def test_scheme_and_solver_orderings(ablation_suite, capsys):
    """Surface keypoints must beat bounding-box corners, full covariance-
    weighted refinement must beat the init-only solver, and it must beat
    isotropic-weight refinement trial-by-trial most of the time."""
    succ = {k: float((v < 0.1).mean()) for k, v in ablation_suite.items()}
    wins = float((ablation_suite["fps8_un"] < ablation_suite["fps8_iso"]).mean())
    ok = (
        succ["fps8_un"] >= succ["bbox8"]
        and succ["fps8_un"] >= succ["fps8_ep"]
        and wins >= 0.6
    )
    report(
        capsys,
        "scheme-and-solver-ordering",
        ok,
        f"fps8 {succ['fps8_un']:.3f} vs bbox8 {succ['bbox8']:.3f}; refined "
        f"{succ['fps8_un']:.3f} vs init-only {succ['fps8_ep']:.3f}; anisotropic "
        f"beats isotropic on {wins:.1%} of trials",
    )


def test_keypoint_count_trend(ablation_suite, capsys):
    """More keypoints must not hurt: 8 at least matches 4, and the 12-vs-8
    gap is reported rather than asserted."""
    succ = {k: float((ablation_suite[k] < 0.1).mean()) for k in ("fps4", "fps8_un", "fps12")}
    gap = abs(succ["fps12"] - succ["fps8_un"])
    ok = succ["fps8_un"] >= succ["fps4"]
    report(
        capsys,
        "keypoint-count-trend",
        ok,
        f"fps4 {succ['fps4']:.3f} <= fps8 {succ['fps8_un']:.3f}; "
        f"|fps12 - fps8| = {gap:.3f} (fps12 {succ['fps12']:.3f})",
    )


def test_jacobian_matches_central_differences(capsys):
    """Analytic refinement Jacobian vs numeric differentiation of the
    whitened residual, over 100 random poses/points/covariances."""
    intr = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
    rng = np.random.default_rng(14)
    worst = 0.0
    for _ in range(100):
        X = rng.uniform(-0.5, 0.5, size=(6, 3))
        R = rotation_exp(rng.normal(size=3))
        t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(4, 8)])
        mu = project(intr, Pose(R, t), X) + rng.normal(size=(6, 2)) * 2.0
        covs = []
        for _ in range(6):
            A = rng.normal(size=(2, 2))
            covs.append(A @ A.T + 0.2 * np.eye(2))
        L = np.linalg.cholesky(np.array(covs))
        _, J = _lm_evaluate(R, t, X, mu, L, intr, True)
        h = 1e-6
        Jn = np.empty_like(J)
        for d in range(6):
            dp = np.zeros(6)
            dp[d] = h
            rp, _ = _lm_evaluate(rotation_exp(dp[:3]) @ R, t + dp[3:], X, mu, L, intr, False)
            rm, _ = _lm_evaluate(rotation_exp(-dp[:3]) @ R, t - dp[3:], X, mu, L, intr, False)
            Jn[:, :, d] = (rp - rm) / (2 * h)
        worst = max(worst, np.linalg.norm(J - Jn) / max(1.0, np.linalg.norm(J)))
    ok = worst < 1e-4
    report(
        capsys,
        "jacobian-vs-central-differences",
        ok,
        f"worst relative error {worst:.2e} over 100 configurations",
    )


def test_fps_is_a_two_approximation(capsys):
    """Greedy farthest-point dispersion vs the exhaustively optimal subset on
    every small cloud: the ratio must never fall below 1/2."""
    rng = np.random.default_rng(5)
    worst = np.inf
    for _ in range(50):
        n = int(rng.integers(5, 13))
        pts = rng.normal(size=(n, 3))
        model = ObjectModel(pts)
        for k in range(2, 5):
            sel = fps_select(model, k).points3d[1:]
            disp = min(np.linalg.norm(a - b) for a, b in combinations(sel, 2))
            best = max(
                min(np.linalg.norm(pts[i] - pts[j]) for i, j in combinations(idx, 2))
                for idx in combinations(range(n), k)
            )
            worst = min(worst, disp / best)
    ok = worst >= 0.5 - 1e-12
    report(
        capsys,
        "fps-2-approximation",
        ok,
        f"worst greedy/optimal dispersion ratio {worst:.4f} over 50 clouds, k <= 4",
    )


def test_bench_is_byte_identical_across_threads(tmp_path, capsys):
    """The same config must produce byte-identical CSV output no matter how
    many worker threads the sweep uses."""
    cfg = validate_config(
        {
            "camera": {"fx": 70.0, "fy": 70.0, "cx": 40.0, "cy": 30.0, "width": 80, "height": 60},
            "depth_range": [4.0, 6.0],
            "models": [
                {"kind": "cube", "n_points": 400},
                {"kind": "blob", "seed": 5, "n_points": 400, "radius": 0.5},
            ],
            "keypoints": [{"scheme": "fps", "k": 4}, {"scheme": "bbox"}],
            "pnp": ["uncertainty", "epnp"],
            "noise": [{"sigma": 0.02, "outlier_rate": 0.1}],
            "occlusion": [0.0, 0.3],
            "voting": {"n_hypotheses": 32},
            "trials": 3,
            "seed": 17,
        }
    )
    blobs = []
    for threads in (1, 4, 2):
        rows = run_bench(cfg, threads=threads)
        out = tmp_path / f"threads{threads}"
        write_results(rows, cfg, out)
        blobs.append((out / "results.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2] and len(blobs[0]) > 0
    report(
        capsys,
        "bench-determinism",
        ok,
        f"{len(blobs[0])} CSV bytes identical for 1, 4, and 2 threads",
    )


def test_voting_runtime_budget(warm_kernel, capsys):
    """Full voting pass (9 channels, 128 hypotheses each) on a large scene:
    best of three runs must come in under 200 ms."""
    model = make_blob_model(seed=2, n_points=4000, radius=0.5)
    kps = fps_select(model, 8)
    intr = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
    scene = synth_scene(
        model, kps, intr, sampler=PoseSamplerConfig((2.4, 3.0), 0.5), seed=9
    )
    cfg = VotingConfig(seed=3)
    localize_keypoints(scene.mask, scene.field, cfg)  # warm this exact shape
    best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        localize_keypoints(scene.mask, scene.field, cfg)
        best = min(best, time.perf_counter() - t0)
    ok = best < 0.2
    report(
        capsys,
        "voting-runtime-budget",
        ok,
        f"{best * 1000:.0f} ms for 9 channels over {int(scene.mask.sum())} "
        f"pixels (budget 200 ms)",
    )
