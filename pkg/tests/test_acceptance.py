"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line with
the measured numbers before asserting, so the log doubles as a report."""

import itertools
import time

import numpy as np
import pytest

from tactigraph import CLASS_INDEX
from tactigraph.baselines import flatten, knn_predict, mlp_classify, mlp_train, stack
from tactigraph.bench import bench
from tactigraph.cli import main
from tactigraph.egnn import Batch, EgnnModel, encode_samples
from tactigraph.graph import activated_nodes, dynamic_knn_edges
from tactigraph.segmentation import auto_segment, label_recordings
from tactigraph.skin import DISCONNECTED, geometric_distance, kinematic_distance, taxel_world_poses
from tactigraph.synth import PosePool, crease_taxels, fold_pair, make_pose_pool, synthesize_dataset
from tactigraph.training import TrainConfig, accuracy, fit

from oracles import numeric_gradient_check, oracle_activated, oracle_knn_edges
from toys import moved, random_graph, random_motion, random_window

REFERENCE_TEST_ACC = 0.911
REFERENCE_MLP_TEST_ACC = 0.761
REFERENCE_STEP_MS = 3.81


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def test_criterion_1_equivariance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    worst_logit = worst_coord = 0.0
    for trial in range(200):
        model = EgnnModel(hidden=16, n_layers=3, pooling=("max", "mean")[trial % 2], seed=trial, zero_coord_gate=False)
        # skin-sized clouds: an untrained coordinate channel on meter-wide toys
        # grows coordinates past 1e10, where 1e-6 is below float64 resolution
        window = random_window(rng, int(rng.integers(1, 5)), n_nodes=12, n_edges=30, empty_prob=0.2, spread=0.05)
        R, t = random_motion(rng, shift=1.0)
        other = [moved(g, R, t) for g in window]
        a, b = model.logits(Batch([window])), model.logits(Batch([other]))
        worst_logit = max(worst_logit, np.abs(a - b).max())
        xa, xb = model.coordinates(Batch([window])), model.coordinates(Batch([other]))
        if len(xa):
            worst_coord = max(worst_coord, np.abs(xb - (xa @ R.T + t)).max())
    secs = time.perf_counter() - t0
    ok = worst_logit < 1e-6 and worst_coord < 1e-6 and secs < 60
    report(1, ok, f"200 triples: max logit dev {worst_logit:.2e}, max coord err {worst_coord:.2e}, {secs:.1f} s")


def test_criterion_2_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    model = EgnnModel(hidden=8, n_layers=3, seed=7, zero_coord_gate=False)
    window = [random_graph(rng, 5, 7, spread=1.5) for _ in range(2)]
    worst = numeric_gradient_check(model, Batch([window]), [1], 1e-3, rng, 100, eps=1e-4)
    secs = time.perf_counter() - t0
    report(2, worst < 1e-4 and secs < 60, f"100 parameters, eps 1e-4: worst relative error {worst:.2e}, {secs:.1f} s")


def test_criterion_3_graph_oracles(skin, report):
    rng = np.random.default_rng(300)
    knn_ok = act_ok = 0
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 6)
        poses = taxel_world_poses(skin, q)
        n = int(rng.integers(1, 301))
        ids = rng.choice(skin.n_taxels, size=n, replace=False)
        ks = (1, 4, 8)
        knn_ok += all({tuple(e) for e in dynamic_knn_edges(poses, ids, k).tolist()} == oracle_knn_edges(poses.positions, ids, k) for k in ks)
        p = np.zeros(skin.n_taxels)
        hot = rng.choice(skin.n_taxels, size=int(rng.integers(0, 120)), replace=False)
        p[hot] = rng.uniform(0, 1, size=len(hot))
        act_ok += set(activated_nodes(skin, p, 0.05).tolist()) == oracle_activated(skin, p, 0.05)
    report(3, knn_ok == 100 and act_ok == 100, f"KNN equal on {knn_ok}/100 frames (k 1,4,8); activation equal on {act_ok}/100")


def test_criterion_4_distance_properties(skin, report):
    rng = np.random.default_rng(400)
    violations = 0
    for _ in range(20):
        poses = taxel_world_poses(skin, rng.uniform(-np.pi, np.pi, 6))
        for _ in range(50):
            patch = skin.patches[rng.integers(len(skin.patches))]
            a, b = rng.choice(patch.taxel_ids, size=2)
            violations += kinematic_distance(poses[a], poses[b]) > geometric_distance(skin, int(a), int(b)) + 1e-9
    axiom_failures = 0
    for _ in range(100):
        patch = skin.patches[rng.integers(len(skin.patches))]
        a, b, c = (int(v) for v in rng.choice(patch.taxel_ids, size=3, replace=False))
        dab, dba = geometric_distance(skin, a, b), geometric_distance(skin, b, a)
        dac, dbc = geometric_distance(skin, a, c), geometric_distance(skin, b, c)
        ok = geometric_distance(skin, a, a) == 0.0 and dab == dba and dab > 0 and dac <= dab + dbc + 1e-12
        axiom_failures += not ok
    other = next(int(t) for t in skin.patches[1].taxel_ids)
    disconnected = geometric_distance(skin, int(skin.patches[0].taxel_ids[0]), other) is DISCONNECTED
    ok = violations == 0 and axiom_failures == 0 and disconnected
    report(4, ok, f"1000 pairs x 20 poses: {violations} kinematic>geometric; 100 triples: {axiom_failures} axiom failures")


def test_criterion_5_segmentation(skin, report):
    recs, errors = synthesize_dataset(skin, (50, 50, 50, 50), rng_seed=500)
    assert not errors
    matched = total = 0
    double_pat_splits = 0
    for rec in recs:
        auto = auto_segment(rec)
        gt = rec.ground_truth
        used = set()
        for g in gt:
            hit = next((i for i, s in enumerate(auto) if i not in used and abs(s.start_frame - g.start_frame) <= 2 and abs(s.end_frame - g.end_frame) <= 2), None)
            if hit is not None:
                used.add(hit)
                matched += 1
        total += len(gt) + len(auto) - len(used)
        if rec.meta["gesture"] == "double_pat" and rec.meta["params"]["gap"] <= 0.3:
            double_pat_splits += len(auto) > 1
    rate = matched / total
    report(5, rate >= 0.99 and double_pat_splits == 0, f"200 recordings: {matched}/{total} segments within 2 frames ({rate:.2%}); double_pat splits {double_pat_splits}/50")


# --- synthetic benchmark --------------------------------------------------------

BENCH_STRIDE = 5
BENCH_CFG = TrainConfig(lr=3e-3, batch_size=16, epochs=24, seed=0, l2=1e-5, val_fraction=0.15, schedule="cosine")
MLP_CFG = TrainConfig(lr=3e-3, batch_size=16, epochs=40, seed=0, l2=1e-5, val_fraction=0.15, schedule="cosine")


def benchmark_split(skin):
    train_pool = PosePool(make_pose_pool(skin.chain, 40, 1000))
    test_pool = PosePool(make_pose_pool(skin.chain, 8, 2000))
    train_recs, _ = synthesize_dataset(skin, (145, 145, 145, 146), train_pool, rng_seed=10)
    test_recs, _ = synthesize_dataset(skin, (24, 24, 24, 23), test_pool, rng_seed=20000)
    return label_recordings(train_recs), label_recordings(test_recs), train_pool, test_pool


def test_criterion_6_synthetic_benchmark(skin, report):
    t0 = time.perf_counter()
    train_s, test_s, train_pool, test_pool = benchmark_split(skin)
    shared = {p.tobytes() for p in train_pool.poses} & {p.tobytes() for p in test_pool.poses}
    assert not shared
    t_data = time.perf_counter() - t0

    t0 = time.perf_counter()
    wtr = encode_samples(skin, train_s, stride=BENCH_STRIDE)
    wte = encode_samples(skin, test_s, stride=BENCH_STRIDE)
    t_encode = time.perf_counter() - t0
    ytr = np.array([s.label for s in train_s])
    yte = np.array([s.label for s in test_s])

    model, hist = fit(EgnnModel(seed=0), wtr, ytr, BENCH_CFG)
    egnn_acc = accuracy(model, wte, yte)
    val_acc = hist.rows[-1]["val_acc"]

    X, y = stack([flatten(s, BENCH_STRIDE) for s in train_s])
    Xt, _ = stack([flatten(s, BENCH_STRIDE) for s in test_s])
    mlp, _ = mlp_train(X, y, MLP_CFG)
    mlp_acc = float((mlp_classify(mlp, Xt) == yte).mean())
    knn_acc = float((knn_predict(X, y, Xt) == yte).mean())

    margin = egnn_acc - mlp_acc
    ok = len(train_s) == 581 and len(test_s) == 95 and hist.halted is None and hist.seconds <= 900 and egnn_acc >= 0.90 and margin >= 0.05
    report(
        6,
        ok,
        f"{len(train_s)} train / {len(test_s)} test, disjoint poses; graph model test {egnn_acc:.3f} (val {val_acc:.3f}) "
        f"trained in {hist.seconds:.0f} s (+{t_encode:.0f} s graph encoding, {t_data:.0f} s synthesis); "
        f"MLP {mlp_acc:.3f}, KNN {knn_acc:.3f}, margin {100 * margin:.1f} points "
        f"[reference on hardware data: {REFERENCE_TEST_ACC:.3f} vs MLP {REFERENCE_MLP_TEST_ACC:.3f}]",
    )


# --- fold ambiguity ---------------------------------------------------------------

FOLD_CFG = TrainConfig(lr=3e-3, batch_size=8, epochs=60, seed=0, val_fraction=0.0, schedule="cosine")
FOLD_STRIDE = 10


def test_criterion_7_fold_contrast(skin, report):
    q_fold = np.zeros(6)
    q_fold[2] = np.pi
    q_open = np.zeros(6)
    crease = crease_taxels(skin, q_fold, 1, 2)
    rng = np.random.default_rng(700)
    pairs = [fold_pair(skin, q_fold, q_open, crease, rng) for _ in range(56)]
    assert all(f.pressures.tobytes() == o.pressures.tobytes() for f, o in pairs)
    train_pairs, test_pairs = pairs[:40], pairs[40:]
    train_s = [s for p in train_pairs for s in p]
    y = np.array([s.label for s in train_s])
    model = EgnnModel(hidden=16, n_layers=2, seed=0)
    model, _ = fit(model, encode_samples(skin, train_s, stride=FOLD_STRIDE), y, FOLD_CFG)

    X, yk = stack([flatten(s, FOLD_STRIDE) for s in train_s])
    poke, grab = CLASS_INDEX["poke"], CLASS_INDEX["grab"]
    egnn_split = knn_same = 0
    for folded, opened in test_pairs:
        enc = encode_samples(skin, [folded, opened], stride=FOLD_STRIDE)
        pf, po = model.logits(Batch(enc)).argmax(axis=1)
        egnn_split += (pf, po) == (poke, grab)
        kf, ko = knn_predict(X, yk, [flatten(folded, FOLD_STRIDE).vector, flatten(opened, FOLD_STRIDE).vector])
        knn_same += kf == ko
    n = len(test_pairs)
    # every pair is pressure-identical, so one split already shows the contrast;
    # the gate asks for it on nearly all held-out pairs
    report(7, egnn_split >= 0.9 * n and knn_same == n, f"{n} held-out pressure-identical pairs: graph model poke-vs-grab on {egnn_split}/{n}; flatten-KNN identical on {knn_same}/{n}")


def test_criterion_8_runtime(skin, report):
    rep = bench(EgnnModel(seed=0), skin, active_fraction=0.05, iterations=1000, stride=5, k=8)
    s = {stage: rep.summary(stage) for stage in ("graph_build", "forward", "total")}
    p50 = s["total"]["p50"]
    report(
        8,
        p50 <= 20.0,
        f"5% active, k 8, stride 5, 1000 steps: total p50 {p50:.2f} ms, p99 {s['total']['p99']:.2f} ms "
        f"(build {s['graph_build']['p50']:.2f}, forward {s['forward']['p50']:.2f}) on {rep.machine} [reference: {REFERENCE_STEP_MS} ms]",
    )


def test_criterion_9_determinism(tmp_path, report):
    def synth(out):
        assert main(["dataset", "synth", str(out), "--counts", "2,2,2,2", "--seed", "9", "--pose-pool", "4", "--pose-seed", "9"]) == 0
        return {f.name: f.read_bytes() for f in sorted(out.iterdir())}

    a, b = synth(tmp_path / "a"), synth(tmp_path / "b")
    synth_same = a == b

    def train(tag):
        ck, hist = tmp_path / f"{tag}.egn", tmp_path / f"{tag}.csv"
        args = ["train", str(tmp_path / "a"), "--out", str(ck), "--history", str(hist), "--epochs", "2", "--stride", "10", "--hidden", "8", "--layers", "2", "--batch-size", "4"]
        assert main(args) == 0
        return ck.read_bytes() + hist.read_bytes()

    train_same = train("m1") == train("m2")

    def ablate(tag):
        out = tmp_path / f"{tag}.csv"
        args = ["ablate", str(tmp_path / "a"), str(tmp_path / "b"), "--ks", "4,8,16", "--poolings", "max,mean", "--stride", "20"]
        assert main(args + ["--epochs", "1", "--hidden", "8", "--layers", "1", "--out", str(out)]) == 0
        return out.read_bytes()

    first = ablate("x1")
    ablate_same = first == ablate("x2") and len(first.decode().splitlines()) == 7
    report(9, synth_same and train_same and ablate_same, f"bit-identical reruns: synth {synth_same}, train {train_same}, ablate 3x2 {ablate_same}")


def test_benchmark_pools_are_disjoint(skin):
    a = make_pose_pool(skin.chain, 40, 1000)
    b = make_pose_pool(skin.chain, 8, 2000)
    assert not any(np.allclose(p, r) for p, r in itertools.product(a, b))
