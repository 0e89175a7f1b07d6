import numpy as np

from tactigraph.bench import ABLATION_FIELDS, STAGES, BenchReport, ablation, bench, load_frames, rows_to_csv
from tactigraph.egnn import EgnnModel
from tactigraph.segmentation import label_recordings
from tactigraph.synth import GestureScript, synthesize_gesture
from tactigraph.training import TrainConfig


def test_load_profile_activates_requested_fraction(skin):
    for frac in (0.0, 0.01, 0.2):
        p, _ = load_frames(skin, frac, n_frames=2)[0]
        assert (p > 0.05).sum() == round(frac * 2112)


def test_report_shape_and_empty_load(skin):
    rep = bench(EgnnModel(seed=0), skin, 0.0, iterations=30, warmup=2)
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("stage,active_fraction")
    assert [l.split(",")[0] for l in lines[1:]] == list(STAGES)
    for s in STAGES:
        m = rep.summary(s)
        assert m["p50"] <= m["p99"]
    assert rep.summary("graph_build")["p50"] < 1.0


def test_build_time_monotone_and_bounded_under_load(skin):
    model = EgnnModel(seed=0)
    p50 = {f: bench(model, skin, f, iterations=60, warmup=5).summary("graph_build")["p50"] for f in (0.01, 0.05, 0.1, 0.2)}
    assert p50[0.01] <= p50[0.05] <= p50[0.2]
    assert p50[0.1] < 4 * p50[0.05]


def test_summary_percentiles():
    t = np.arange(1, 101, dtype=float)
    rep = BenchReport(0.05, 100, 5, 8, {s: t for s in STAGES})
    assert rep.summary("total") == {"mean": 50.5, "p50": 50.5, "p99": np.percentile(t, 99)}


def test_ablation_cell_errors_do_not_stop_grid(skin):
    # a single-class training set fails every cell but the grid still completes
    script = GestureScript("poke", 700, {"amplitude": 0.8, "sigma": 0.01, "width": 0.3}, 0.5)
    samples = label_recordings([synthesize_gesture(skin, np.zeros(6), script, 0)])
    rows = ablation(skin, samples, samples, TrainConfig(epochs=1), ks=(4, 8), poolings=("max",), hidden=8, n_layers=1)
    assert [r["k"] for r in rows] == [4, 8]
    assert all(r["status"].startswith("error") for r in rows)
    assert rows_to_csv(rows, ABLATION_FIELDS).splitlines()[0] == "k,pooling,val_acc,test_acc,status"
