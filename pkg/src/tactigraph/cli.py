"""Command-line entry point: tactigraph <command> ..."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import socket
import sys
from pathlib import Path

import numpy as np

from .actions import RobotActionState, apply_gesture
from .baselines import K_NN, flatten, knn_predict, mlp_classify, mlp_train, stack
from .bench import ABLATION_FIELDS, ablation, bench, rows_to_csv
from .dataio import FormatError, encode_frame, read_dataset, read_frames, write_dataset
from .egnn import EgnnModel, encode_samples, load_checkpoint, save_checkpoint
from .graph import _Frame, build_graph, dump_graph
from .segmentation import GAP_MIN, LEN_MIN, THETA_LABEL, WINDOW, auto_segment, extract_samples, label_recordings
from .skin import SkinConfigError, load_skin, validate_skin
from .stream import StreamPredictor, run_pipeline
from .synth import PosePool, UniformPoseSampler, make_pose_pool, synthesize_dataset
from .training import SCHEDULES, TrainConfig, accuracy, fit

log = logging.getLogger("tactigraph")

SAMPLE_INDEX = "samples.idx"


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _workers():
    return max(1, int(os.environ.get("TAXEL_THREADS", "1")))


def _out(path):
    """A file opened for writing, or stdout when no path is given."""
    if path is None or str(path) == "-":
        return sys.stdout
    return open(path, "w", newline="")


def _emit(text, path=None):
    fh = _out(path)
    fh.write(text)
    if fh is not sys.stdout:
        fh.close()


def _skin(args):
    return load_skin(args.skin)


def _samples(args, path, skin):
    recs = read_dataset(path, skin)
    samples = label_recordings(recs)
    if not samples:
        raise FormatError(f"dataset {path} yielded no labeled samples")
    return samples


def _train_cfg(args):
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed, l2=args.l2, val_fraction=args.val_fraction, schedule=args.schedule)


# --- commands -----------------------------------------------------------------


def cmd_skin_validate(args):
    skin = load_skin(args.config, validate=False)
    problems = validate_skin(skin)
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    if problems:
        return 1
    print(f"ok {skin.n_taxels} taxels, {len(skin.patches)} patches, {skin.chain.n_joints} joints, hash {skin.config_hash}")
    return 0


def cmd_dataset_synth(args):
    skin = _skin(args)
    if args.pose_pool:
        sampler = PosePool(make_pose_pool(skin.chain, args.pose_pool, args.pose_seed))
    else:
        sampler = UniformPoseSampler(skin.chain)
    recs, errors = synthesize_dataset(skin, args.counts, sampler, rng_seed=args.seed, workers=_workers())
    write_dataset(args.out, recs, skin, args.seed, args.counts, errors)
    print(f"wrote {len(recs)} recordings to {args.out} ({len(errors)} skipped)")
    return 0


def cmd_dataset_label(args):
    """Write samples.idx (one row per labeled window) next to the manifest."""
    skin = _skin(args)
    recs = read_dataset(args.dataset, skin)
    rows = []
    for i, rec in enumerate(recs):
        segs = auto_segment(rec, args.theta_label, args.gap_min, args.len_min)
        for s in extract_samples(rec, segs, args.window, recording_id=i):
            seg = s.source[1]
            rows.append([i, seg.end_frame - args.window + 1, seg.end_frame, s.label])
    out = Path(args.dataset) / SAMPLE_INDEX
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording", "window_start", "window_end", "class_id"])
        w.writerows(rows)
    print(f"wrote {len(rows)} samples from {len(recs)} recordings to {out}")
    return 0


def cmd_dataset_frames(args):
    skin = _skin(args)
    recs = read_dataset(args.dataset, skin)
    with open(args.out, "wb") as fh:
        for rec in recs:
            for p, q in zip(rec.pressures, rec.q):
                fh.write(encode_frame(p, q))
    print(f"wrote {sum(r.n_frames for r in recs)} frames to {args.out}")
    return 0


def cmd_train(args):
    skin = _skin(args)
    samples = _samples(args, args.dataset, skin)
    windows = encode_samples(skin, samples, args.theta_act, args.k, args.stride)
    labels = np.array([s.label for s in samples])
    model = EgnnModel(args.hidden, args.layers, args.pooling, seed=args.seed)
    model.k, model.theta_act, model.stride, model.skin_hash = args.k, args.theta_act, args.stride, skin.config_hash
    model, hist = fit(model, windows, labels, _train_cfg(args))
    _emit(hist.to_csv(), args.history)
    save_checkpoint(model, args.out)
    log.info("trained in %.1f s, checkpoint %s", hist.seconds, args.out)
    if hist.halted:
        print(f"error: training halted: {hist.halted}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args):
    skin = _skin(args)
    test = _samples(args, args.dataset, skin)
    y_test = np.array([s.label for s in test])
    if args.model == "egnn":
        if not args.checkpoint:
            raise FormatError("--checkpoint is required for --model egnn")
        model = load_checkpoint(args.checkpoint)
        if model.skin_hash and model.skin_hash != skin.config_hash:
            raise FormatError("checkpoint was trained on a different skin configuration")
        windows = encode_samples(skin, test, model.theta_act, model.k, model.stride)
        acc = accuracy(model, windows, y_test)
    else:
        if not args.train:
            raise FormatError(f"--train is required for --model {args.model}")
        train = _samples(args, args.train, skin)
        X, y = stack([flatten(s, args.stride) for s in train])
        Xt, _ = stack([flatten(s, args.stride) for s in test])
        if args.model == "knn":
            pred = knn_predict(X, y, Xt, args.k_nn)
        else:
            model, hist = mlp_train(X, y, _train_cfg(args))
            if args.history:
                _emit(hist.to_csv(), args.history)
            pred = mlp_classify(model, Xt)
        acc = float((pred == y_test).mean())
    print("model,n_test,accuracy")
    print(f"{args.model},{len(y_test)},{acc:.6f}")
    return 0


def cmd_ablate(args):
    skin = _skin(args)
    train = _samples(args, args.train, skin)
    test = _samples(args, args.test, skin)
    rows = ablation(skin, train, test, _train_cfg(args), args.ks, args.poolings, args.stride, args.hidden, args.layers, args.theta_act)
    _emit(rows_to_csv(rows, ABLATION_FIELDS), args.out)
    return 0


def cmd_bench(args):
    skin = _skin(args)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else EgnnModel(seed=0)
    text = ""
    for i, frac in enumerate(args.active):
        rep = bench(model, skin, frac, args.iterations, args.stride, args.k)
        body = rep.to_csv()
        text += body if i == 0 else body.split("\n", 1)[1]
    _emit(text, args.out)
    return 0


def _frame_source(args, n_joints):
    if args.file:
        fh = open(args.file, "rb")
        return read_frames(fh, n_joints), fh
    host, _, port = args.socket.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)))
    return read_frames(sock, n_joints), sock


def cmd_demo(args):
    skin = _skin(args)
    model = load_checkpoint(args.checkpoint)
    pred = StreamPredictor(model, skin)
    state = RobotActionState()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["frame", "gesture", "confidence", "running", "gripper_closed", "waypoint_index"])

    def on_event(ev):
        nonlocal state
        state = apply_gesture(state, ev.gesture)
        w.writerow([ev.frame, ev.gesture, f"{ev.confidence:.4f}", int(state.running), int(state.gripper_closed), state.waypoint_index])
        sys.stdout.flush()

    frames, handle = _frame_source(args, skin.chain.n_joints)
    try:
        run_pipeline(pred, frames, on_event=on_event)
    finally:
        handle.close()
    return 0


def cmd_graph_dump(args):
    skin = _skin(args)
    rec = read_dataset(args.dataset, skin)[args.recording]
    if not 0 <= args.frame < rec.n_frames:
        raise FormatError(f"frame {args.frame} outside 0..{rec.n_frames - 1}")
    g = build_graph(skin, _Frame(rec.pressures[args.frame], rec.q[args.frame]), args.theta_act, args.k)
    _emit(dump_graph(g), args.out)
    return 0


# --- parser -------------------------------------------------------------------


def _add_train_flags(p, epochs=40):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2", type=float, default=1e-5)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--schedule", choices=SCHEDULES, default="constant", help="learning-rate schedule")


def _add_model_flags(p):
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--theta-act", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tactigraph", description=__doc__)
    ap.add_argument("--skin", help="skin configuration JSON (default: bundled 2112-taxel arm)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sk = sub.add_parser("skin").add_subparsers(dest="action", required=True)
    p = sk.add_parser("validate", help="check a skin configuration")
    p.add_argument("config", nargs="?")
    p.set_defaults(func=cmd_skin_validate)

    ds = sub.add_parser("dataset").add_subparsers(dest="action", required=True)
    p = ds.add_parser("synth", help="synthesize labeled recordings")
    p.add_argument("out")
    p.add_argument("--counts", type=_int_list, default=[145, 145, 145, 146], help="recordings per class: poke,double_pat,grab,stroke")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pose-pool", type=int, default=0, help="draw poses from a fixed pool of this size")
    p.add_argument("--pose-seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset_synth)
    p = ds.add_parser("label", help="auto-segment recordings and write samples.idx")
    p.add_argument("dataset")
    p.add_argument("--theta-label", type=float, default=THETA_LABEL)
    p.add_argument("--gap-min", type=float, default=GAP_MIN, help="seconds")
    p.add_argument("--len-min", type=float, default=LEN_MIN, help="seconds")
    p.add_argument("--window", type=int, default=WINDOW)
    p.set_defaults(func=cmd_dataset_label)
    p = ds.add_parser("frames", help="concatenate recordings into a frame stream file")
    p.add_argument("dataset")
    p.add_argument("out")
    p.set_defaults(func=cmd_dataset_frames)

    p = sub.add_parser("train", help="train the graph classifier")
    p.add_argument("dataset")
    p.add_argument("--out", default="model.egn")
    p.add_argument("--history", help="write epoch history CSV here (default stdout)")
    p.add_argument("--pooling", choices=["max", "mean"], default="max")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--stride", type=int, default=1)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test accuracy of a classifier")
    p.add_argument("dataset")
    p.add_argument("--model", choices=["egnn", "knn", "mlp"], default="egnn")
    p.add_argument("--checkpoint")
    p.add_argument("--train", help="training dataset for the baselines")
    p.add_argument("--k-nn", type=int, default=K_NN)
    p.add_argument("--stride", type=int, default=1, help="frame stride of the flattened baselines")
    p.add_argument("--history")
    _add_train_flags(p, epochs=40)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="k x pooling accuracy grid")
    p.add_argument("train")
    p.add_argument("test")
    p.add_argument("--ks", type=_int_list, default=[4, 8, 16, 32])
    p.add_argument("--poolings", type=lambda s: s.split(","), default=["max", "mean"])
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--out")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="time one recognition step")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--active", type=_float_list, default=[0.05], help="active taxel fractions")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("demo", help="recognize gestures on a frame stream and drive the action state")
    p.add_argument("checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--file")
    src.add_argument("--socket", help="host:port")
    p.set_defaults(func=cmd_demo)

    gr = sub.add_parser("graph").add_subparsers(dest="action", required=True)
    p = gr.add_parser("dump", help="print one frame's graph")
    p.add_argument("dataset")
    p.add_argument("--recording", type=int, default=0)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--theta-act", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SkinConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
